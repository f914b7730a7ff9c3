//! Self-labeling curriculum over a journey collection.
//!
//! Training data is harvested in three waves. Wave 0 samples triplets
//! inside single journeys: nearby frames are positives, far-away frames
//! negatives. Once the embedder can match journeys against each other,
//! wave 1 harvests positives from found matching tours and mines hard
//! negatives from low-cost off-tour columns. Wave 2 composes tours that
//! share a middle journey, extending labels to pairs that were never
//! aligned directly. Each iteration replaces the previous label set,
//! retrains the embedder, and reports how well full-pipeline alignments
//! agree with the synthetic ground truth.

mod index;

pub use index::{CollectionIndex, MatchEdge};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Config;
use crate::corpus::{Corpus, Journey, JourneyId};
use crate::costmat::CostMatrix;
use crate::embedder::{self, EmbedModel};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::refine::{refine_and_smooth, RefineParams};
use crate::tourfinder::{find_tour, MatchingTour, PathNode, TourParams};

/// Which curriculum wave produced a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Wave {
    /// Temporal neighborhood within one journey.
    Intra = 0,
    /// Harvested from a directly found matching tour.
    Inter = 1,
    /// Harvested from a composition of two tours.
    Transitive = 2,
}

impl Wave {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Wave> {
        match tag {
            0 => Ok(Wave::Intra),
            1 => Ok(Wave::Inter),
            2 => Ok(Wave::Transitive),
            _ => Err(Error::data(format!("unknown wave tag {tag}"))),
        }
    }
}

/// One training triplet, in full frame units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletLabel {
    pub wave: Wave,
    pub anchor: (JourneyId, usize),
    pub positive: (JourneyId, usize),
    pub negative: (JourneyId, usize),
}

/// Samples triplets inside one journey: the positive within `window`
/// frames of the anchor, the negative at least `min_negative_gap` away.
pub fn sample_intra(
    journey: &Journey,
    n_labels: usize,
    window: usize,
    min_negative_gap: usize,
    seed: u64,
) -> Result<Vec<TripletLabel>> {
    if window == 0 {
        return Err(Error::invalid_argument("positive window must be at least 1"));
    }
    if min_negative_gap <= window {
        return Err(Error::invalid_argument(
            "negative gap must exceed the positive window",
        ));
    }
    let frames = journey.frames();
    if frames < 2 * min_negative_gap + 1 {
        return Err(Error::data(format!(
            "journey {} has {frames} frames, fewer than the {} intra sampling needs",
            journey.id,
            2 * min_negative_gap + 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_labels);
    for _ in 0..n_labels {
        let a = rng.random_range(0..frames);
        // Offset in [-window, window] without 0; mirrored if it would
        // leave the journey, which preserves its magnitude.
        let k = rng.random_range(0..2 * window) as i64;
        let w = window as i64;
        let off = if k < w { k - w } else { k - w + 1 };
        let p_raw = a as i64 + off;
        let p = if (0..frames as i64).contains(&p_raw) {
            p_raw
        } else {
            a as i64 - off
        } as usize;
        let left = if a >= min_negative_gap {
            a - min_negative_gap + 1
        } else {
            0
        };
        let right = (frames - 1).saturating_sub(a + min_negative_gap - 1);
        let u = rng.random_range(0..left + right);
        let n = if u < left {
            u
        } else {
            a + min_negative_gap + (u - left)
        };
        out.push(TripletLabel {
            wave: Wave::Intra,
            anchor: (journey.id, a),
            positive: (journey.id, p),
            negative: (journey.id, n),
        });
    }
    Ok(out)
}

/// Harvests triplets from a matching tour: each selected node yields its
/// row frame as anchor and column frame as positive, with the cheapest
/// column at least `off_path_margin` away from the node as hard negative.
/// At most one label per node; `seed` picks the subset when `n_labels` is
/// smaller than the tour.
pub fn sample_inter(
    tour: &MatchingTour,
    c: &CostMatrix,
    n_labels: usize,
    off_path_margin: usize,
    seed: u64,
) -> Result<Vec<TripletLabel>> {
    sample_from_tour(tour, c, n_labels, off_path_margin, seed, Wave::Inter)
}

fn sample_from_tour(
    tour: &MatchingTour,
    c: &CostMatrix,
    n_labels: usize,
    off_path_margin: usize,
    seed: u64,
    wave: Wave,
) -> Result<Vec<TripletLabel>> {
    if tour.is_empty() || n_labels == 0 {
        return Ok(Vec::new());
    }
    let (Some(x), Some(y)) = (tour.row_journey, tour.col_journey) else {
        return Err(Error::invalid_argument("tour does not name its journeys"));
    };
    if off_path_margin == 0 {
        return Err(Error::invalid_argument("off-path margin must be at least 1"));
    }
    if c.rows != tour.row_len || c.cols != tour.col_len {
        return Err(Error::invalid_argument(
            "cost matrix shape does not match the tour",
        ));
    }
    let mut picks: Vec<usize> = (0..tour.nodes.len()).collect();
    if n_labels < picks.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        picks.shuffle(&mut rng);
        picks.truncate(n_labels);
        picks.sort_unstable();
    }
    let mut out = Vec::new();
    for i in picks {
        let node = tour.nodes[i];
        // Cheapest sufficiently off-tour column; ties take the lower one.
        let mut best: Option<(f64, usize)> = None;
        for col in 0..c.cols {
            if col.abs_diff(node.col) < off_path_margin {
                continue;
            }
            let v = c.at(node.row, col);
            if best.is_none_or(|(bv, _)| v < bv) {
                best = Some((v, col));
            }
        }
        let Some((_, ncol)) = best else { continue };
        out.push(TripletLabel {
            wave,
            anchor: (x, node.row * tour.stride),
            positive: (y, node.col * tour.stride),
            negative: (y, ncol * tour.stride),
        });
    }
    Ok(out)
}

/// Records a probe result. The tour is accepted as a match edge when it is
/// non-empty and covers at least `coverage_threshold` of the columns;
/// anything weaker leaves the index unchanged. Returns whether accepted.
pub fn update_index(
    index: &mut CollectionIndex,
    x: JourneyId,
    y: JourneyId,
    tour: &MatchingTour,
    coverage_threshold: f64,
) -> bool {
    if tour.is_empty() {
        return false;
    }
    let coverage = tour.covered_cols() as f64 / tour.col_len.max(1) as f64;
    if coverage < coverage_threshold {
        return false;
    }
    index.insert_edge(x, y, tour.clone());
    true
}

/// Composes an X-to-V tour with a V-to-Y tour into an X-to-Y tour. Each
/// (x, v) pair adopts the y of the vy node whose row is nearest to v
/// within `tolerance_cols` (ties take the lower y); pairs that would step
/// backwards are dropped. An empty result means the tours never visit the
/// same stretch of V. Composed nodes carry no matrix cost.
pub fn compose_tours(
    xv: &MatchingTour,
    vy: &MatchingTour,
    tolerance_cols: usize,
) -> Result<MatchingTour> {
    if let (Some(a), Some(b)) = (xv.col_journey, vy.row_journey) {
        if a != b {
            return Err(Error::invalid_argument(format!(
                "tours do not share a middle journey: {a} vs {b}"
            )));
        }
    }
    if xv.stride != vy.stride {
        return Err(Error::invalid_argument("tours use different strides"));
    }
    if xv.col_len != vy.row_len {
        return Err(Error::invalid_argument(
            "tours disagree on the middle journey's length",
        ));
    }
    let mut nodes: Vec<PathNode> = Vec::new();
    for n in &xv.nodes {
        let Some(partner) = nearest_row_node(&vy.nodes, n.col, tolerance_cols) else {
            continue;
        };
        if let Some(last) = nodes.last() {
            if partner.col < last.col {
                continue;
            }
            if n.row == last.row && partner.col == last.col {
                continue;
            }
        }
        nodes.push(PathNode {
            row: n.row,
            col: partner.col,
            cost: 0.0,
        });
    }
    Ok(MatchingTour {
        nodes,
        row_len: xv.row_len,
        col_len: vy.col_len,
        stride: xv.stride,
        row_journey: xv.row_journey,
        col_journey: vy.col_journey,
    })
}

/// Composes index edges along the shortest edge path from `from` to `to`
/// into one `from`-to-`to` tour. `Ok(None)` when the two journeys are in
/// different classes; the composed tour can still come back empty when
/// coverage vanishes somewhere along the chain.
pub fn compose_to_reference(
    index: &CollectionIndex,
    from: JourneyId,
    to: JourneyId,
    tolerance_cols: usize,
) -> Result<Option<MatchingTour>> {
    if from == to {
        return Err(Error::invalid_argument(
            "cannot compose a journey onto itself",
        ));
    }
    let edges = index.edges();
    let mut adjacency: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, e) in edges.iter().enumerate() {
        adjacency.entry(e.x.0).or_default().push((e.y.0, i));
        adjacency.entry(e.y.0).or_default().push((e.x.0, i));
    }
    // Breadth-first parents give the shortest edge path.
    let mut parent: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut queue = VecDeque::from([from.0]);
    let mut seen = BTreeSet::from([from.0]);
    while let Some(at) = queue.pop_front() {
        if at == to.0 {
            break;
        }
        for &(next, edge) in adjacency.get(&at).into_iter().flatten() {
            if seen.insert(next) {
                parent.insert(next, (at, edge));
                queue.push_back(next);
            }
        }
    }
    if !seen.contains(&to.0) {
        return Ok(None);
    }
    let mut hops: Vec<usize> = Vec::new();
    let mut at = to.0;
    while at != from.0 {
        let (prev, edge) = parent[&at];
        hops.push(edge);
        at = prev;
    }
    hops.reverse();

    let mut composed: Option<MatchingTour> = None;
    let mut tail = from;
    for &edge in &hops {
        let e = &edges[edge];
        let step = if e.x == tail {
            e.tour.clone()
        } else {
            e.tour.transposed()
        };
        tail = step.col_journey.unwrap_or(if e.x == tail { e.y } else { e.x });
        composed = Some(match composed {
            None => step,
            Some(acc) => compose_tours(&acc, &step, tolerance_cols)?,
        });
    }
    Ok(composed)
}

/// Node of `nodes` whose row is nearest to `target` within `tolerance`.
/// Rows are sorted, so only the runs bracketing the insertion point
/// matter; each run's first node is its lowest column.
fn nearest_row_node(nodes: &[PathNode], target: usize, tolerance: usize) -> Option<&PathNode> {
    let lo = nodes.partition_point(|n| n.row < target);
    let above = nodes.get(lo);
    let below = if lo > 0 {
        let run_row = nodes[lo - 1].row;
        let mut i = lo - 1;
        while i > 0 && nodes[i - 1].row == run_row {
            i -= 1;
        }
        Some(&nodes[i])
    } else {
        None
    };
    let best = match (below, above) {
        (None, None) => return None,
        (None, Some(a)) => (a, a.row - target),
        (Some(b), None) => (b, target - b.row),
        (Some(b), Some(a)) => {
            let da = a.row - target;
            let db = target - b.row;
            if da < db || (da == db && a.col < b.col) {
                (a, da)
            } else {
                (b, db)
            }
        }
    };
    (best.1 <= tolerance).then_some(best.0)
}

/// Plans which journey pairs to align next. Every journey still in a
/// singleton class is scheduled against one representative per existing
/// class (the freshest member) before opening a class of its own; pairs
/// probed before are never replanned. Leftover budget goes to random
/// pairs across the classes the plan expects to remain separate.
pub fn plan_pairs(
    index: &CollectionIndex,
    journeys: &[JourneyId],
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(JourneyId, JourneyId)>> {
    let n = journeys.len();
    if n <= 1 {
        return Ok(Vec::new());
    }
    if budget + 1 < n {
        return Err(Error::invalid_argument(format!(
            "pair budget {budget} is below the minimum {} for {n} journeys",
            n - 1
        )));
    }
    let count = index.journey_count();
    if journeys.iter().any(|j| j.0 >= count) {
        return Err(Error::invalid_argument("journey id outside the index"));
    }

    // Local mirror of the class structure; probes planned here are
    // assumed to succeed so one round schedules a whole spanning chain.
    let mut parent: Vec<usize> = (0..count).collect();
    let mut size: Vec<usize> = vec![1; count];
    let mut rep: Vec<usize> = (0..count).collect();
    let mut open: Vec<usize> = Vec::new();
    for class in index.classes() {
        let head = class[0].0;
        for m in &class {
            parent[m.0] = head;
        }
        size[head] = class.len();
        if class.len() > 1 {
            open.push(head);
            rep[head] = index.representative(class[0]).0;
        }
    }
    fn root(parent: &[usize], mut j: usize) -> usize {
        while parent[j] != j {
            j = parent[j];
        }
        j
    }

    let mut planned: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut plan: Vec<(JourneyId, JourneyId)> = Vec::new();
    for &j in journeys {
        if plan.len() >= budget {
            break;
        }
        if size[root(&parent, j.0)] > 1 {
            continue;
        }
        let mut joined = false;
        for i in 0..open.len() {
            if plan.len() >= budget {
                break;
            }
            let r = root(&parent, open[i]);
            if r == root(&parent, j.0) {
                continue;
            }
            let candidate = rep[r];
            let key = (j.0.min(candidate), j.0.max(candidate));
            if index.was_probed(j, JourneyId(candidate)) || planned.contains(&key) {
                continue;
            }
            planned.insert(key);
            plan.push((j, JourneyId(candidate)));
            if !joined {
                let rj = root(&parent, j.0);
                parent[rj] = r;
                size[r] += size[rj];
                rep[r] = j.0;
                joined = true;
            }
        }
        if !joined {
            let r = root(&parent, j.0);
            if !open.iter().any(|&h| root(&parent, h) == r) {
                open.push(j.0);
            }
            rep[r] = j.0;
        }
    }

    let mut cross: Vec<(usize, usize)> = Vec::new();
    for (i, &a) in journeys.iter().enumerate() {
        for &b in &journeys[i + 1..] {
            let key = (a.0.min(b.0), a.0.max(b.0));
            if root(&parent, a.0) == root(&parent, b.0)
                || index.was_probed(a, b)
                || planned.contains(&key)
            {
                continue;
            }
            cross.push(key);
        }
    }
    cross.shuffle(rng);
    for (a, b) in cross {
        if plan.len() >= budget {
            break;
        }
        planned.insert((a, b));
        plan.push((JourneyId(a), JourneyId(b)));
    }
    Ok(plan)
}

/// Per-iteration summary of the curriculum run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    pub intra_labels: usize,
    pub inter_labels: usize,
    pub transitive_labels: usize,
    /// Non-empty tours among this iteration's newly probed pairs.
    pub tours_found: usize,
    /// Fraction of found tours accepted into the index.
    pub tours_accepted_fraction: f64,
    /// Mean full-pipeline hit rate against ground truth at the evaluation
    /// tolerance, over all same-route pairs.
    pub eval_offset_le4_fraction: f64,
}

impl IterationReport {
    pub fn to_json(&self) -> String {
        format!(
            "{{\"iteration\":{},\"labels_produced\":{{\"intra\":{},\"inter\":{},\"transitive\":{}}},\
             \"tours_found\":{},\"tours_accepted_fraction\":{:.6},\"eval_offset_le4_fraction\":{:.6}}}",
            self.iteration,
            self.intra_labels,
            self.inter_labels,
            self.transitive_labels,
            self.tours_found,
            self.tours_accepted_fraction,
            self.eval_offset_le4_fraction
        )
    }
}

/// Result of a full curriculum run.
#[derive(Debug, Clone)]
pub struct CurriculumOutcome {
    pub model: EmbedModel,
    pub index: CollectionIndex,
    pub reports: Vec<IterationReport>,
}

/// Runs the label-and-train loop. Iteration 0 trains on intra-journey
/// labels alone; every later iteration embeds all journeys coarsely,
/// probes planned pairs, harvests labels from accepted tours (plus, from
/// iteration 2 on, from composed tours), replaces the label set, retrains
/// the same model, and evaluates the full pipeline against ground truth.
/// When `out_dir` is given, each iteration writes its labels CSV and the
/// accumulated report records.
pub fn run_curriculum(
    corpus: &Corpus,
    cfg: &Config,
    out_dir: Option<&Path>,
) -> Result<CurriculumOutcome> {
    cfg.validate()?;
    let n = corpus.journeys.len();
    if n < 2 {
        return Err(Error::invalid_argument(
            "curriculum needs at least two journeys",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
    let mut model = EmbedModel::new(corpus.feature_dim, cfg.descriptor_dim, &mut rng);
    let mut index = CollectionIndex::new(n);
    let mut reports: Vec<IterationReport> = Vec::new();

    let mut labels: Vec<TripletLabel> = Vec::new();
    for journey in &corpus.journeys {
        labels.extend(sample_intra(
            journey,
            cfg.intra_labels_per_journey,
            cfg.intra_window,
            cfg.negative_gap,
            rng.random(),
        )?);
    }
    train_on_labels(corpus, &mut model, &labels, cfg, 0, &mut rng)?;
    reports.push(IterationReport {
        iteration: 0,
        intra_labels: labels.len(),
        inter_labels: 0,
        transitive_labels: 0,
        tours_found: 0,
        tours_accepted_fraction: 0.0,
        eval_offset_le4_fraction: pipeline_hit_rate(corpus, &model, cfg)?,
    });
    persist_iteration(out_dir, 0, &model, &labels, &reports)?;

    let params = TourParams::from_config(cfg);
    let ids: Vec<JourneyId> = (0..n).map(JourneyId).collect();
    for t in 1..=cfg.iterations {
        let coarse = coarse_descriptors(corpus, &model, cfg.stride);
        let budget = cfg.pair_budget_factor.max(1) * n;
        let plan = plan_pairs(&index, &ids, budget, &mut rng)?;
        // Known edges are re-aligned with the current embedder so their
        // labels track the improving metric; they are disjoint from the
        // plan because planned pairs are always unprobed.
        let refresh: Vec<(JourneyId, JourneyId)> =
            index.edges().iter().map(|e| (e.x, e.y)).collect();
        let work: Vec<(JourneyId, JourneyId, bool)> = plan
            .iter()
            .map(|&(x, y)| (x, y, true))
            .chain(refresh.iter().map(|&(x, y)| (x, y, false)))
            .collect();
        let probes: Vec<(JourneyId, JourneyId, bool, CostMatrix, Option<MatchingTour>)> = work
            .par_iter()
            .map(|&(x, y, is_new)| -> Result<_> {
                let raw =
                    CostMatrix::from_descriptors(&coarse[x.0], &coarse[y.0], cfg.stride)?;
                let (clean, _) = raw.decorrelate(cfg.decorrelate_rank)?;
                let tour = find_tour(&clean, &params)?.map(|mut tr| {
                    tr.row_journey = Some(x);
                    tr.col_journey = Some(y);
                    tr
                });
                Ok((x, y, is_new, raw, tour))
            })
            .collect::<Result<Vec<_>>>()?;

        labels.clear();
        let mut inter_count = 0usize;
        let mut tours_found = 0usize;
        let mut accepted = 0usize;
        for (x, y, is_new, raw, tour) in &probes {
            if *is_new {
                index.record_probe(*x, *y);
            }
            let Some(tour) = tour else { continue };
            let harvest = if *is_new {
                tours_found += 1;
                update_index(&mut index, *x, *y, tour, cfg.index_coverage_threshold)
            } else {
                true
            };
            if harvest {
                if *is_new {
                    accepted += 1;
                }
                let ls = sample_inter(
                    tour,
                    raw,
                    cfg.labels_per_tour,
                    cfg.off_path_margin,
                    rng.random(),
                )?;
                inter_count += ls.len();
                labels.extend(ls);
            }
        }

        let mut transitive_count = 0usize;
        if t >= 2 {
            for tour in composed_pairs(&index, cfg.stitch_tolerance_cols(), cfg.max_transitive_pairs)? {
                let (Some(x), Some(y)) = (tour.row_journey, tour.col_journey) else {
                    continue;
                };
                let raw =
                    CostMatrix::from_descriptors(&coarse[x.0], &coarse[y.0], cfg.stride)?;
                let ls = sample_from_tour(
                    &tour,
                    &raw,
                    cfg.labels_per_tour,
                    cfg.off_path_margin,
                    rng.random(),
                    Wave::Transitive,
                )?;
                transitive_count += ls.len();
                labels.extend(ls);
            }
        }

        // An iteration without tours still reports; it just cannot train.
        if !labels.is_empty() {
            train_on_labels(corpus, &mut model, &labels, cfg, t, &mut rng)?;
        }
        reports.push(IterationReport {
            iteration: t,
            intra_labels: 0,
            inter_labels: inter_count,
            transitive_labels: transitive_count,
            tours_found,
            tours_accepted_fraction: if tours_found == 0 {
                0.0
            } else {
                accepted as f64 / tours_found as f64
            },
            eval_offset_le4_fraction: pipeline_hit_rate(corpus, &model, cfg)?,
        });
        persist_iteration(out_dir, t, &model, &labels, &reports)?;
    }
    Ok(CurriculumOutcome {
        model,
        index,
        reports,
    })
}

/// Composes every pair of index edges that shares a journey, in both
/// orientations, skipping endpoint pairs that already have a direct edge.
/// Returns at most `cap` non-empty composed tours, one per journey pair.
fn composed_pairs(
    index: &CollectionIndex,
    tolerance_cols: usize,
    cap: usize,
) -> Result<Vec<MatchingTour>> {
    let edges = index.edges();
    let mut covered: BTreeSet<(usize, usize)> = edges
        .iter()
        .filter_map(|e| canonical_pair(e.x, e.y))
        .collect();
    let mut out = Vec::new();
    'search: for i in 0..edges.len() {
        for k in 0..edges.len() {
            if i == k {
                continue;
            }
            for first in orientations(&edges[i].tour) {
                for second in orientations(&edges[k].tour) {
                    let (Some(mid_a), Some(mid_b)) = (first.col_journey, second.row_journey)
                    else {
                        continue;
                    };
                    if mid_a != mid_b {
                        continue;
                    }
                    let (Some(x), Some(y)) = (first.row_journey, second.col_journey) else {
                        continue;
                    };
                    let Some(key) = canonical_pair(x, y) else {
                        continue;
                    };
                    if covered.contains(&key) {
                        continue;
                    }
                    let composed = compose_tours(&first, &second, tolerance_cols)?;
                    if composed.is_empty() {
                        continue;
                    }
                    covered.insert(key);
                    out.push(composed);
                    if out.len() >= cap {
                        break 'search;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn canonical_pair(x: JourneyId, y: JourneyId) -> Option<(usize, usize)> {
    (x != y).then(|| (x.0.min(y.0), x.0.max(y.0)))
}

fn orientations(tour: &MatchingTour) -> [MatchingTour; 2] {
    [tour.clone(), tour.transposed()]
}

/// Embeds every journey at the coarse stride.
pub fn coarse_descriptors(
    corpus: &Corpus,
    model: &EmbedModel,
    stride: usize,
) -> Vec<Vec<Vec<f64>>> {
    corpus
        .journeys
        .iter()
        .map(|j| {
            let strided: Vec<Vec<f64>> = j.features.iter().step_by(stride.max(1)).cloned().collect();
            model.embed_all(&strided)
        })
        .collect()
}

/// Mean hit rate of the full pipeline (embed, decorrelate, tour, refine)
/// against ground truth over all same-route pairs. Pairs without a tour
/// count as zero, so hiding from hard pairs cannot inflate the score.
pub fn pipeline_hit_rate(corpus: &Corpus, model: &EmbedModel, cfg: &Config) -> Result<f64> {
    let pairs = corpus.ground_truth_pairs();
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let params = TourParams::from_config(cfg);
    let refine_params = RefineParams::from_config(cfg);
    let coarse = coarse_descriptors(corpus, model, cfg.stride);
    let full: Vec<Vec<Vec<f64>>> = corpus
        .journeys
        .iter()
        .map(|j| model.embed_all(&j.features))
        .collect();
    let rates: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| -> Result<f64> {
            let raw = CostMatrix::from_descriptors(&coarse[a.0], &coarse[b.0], cfg.stride)?;
            let (clean, _) = raw.decorrelate(cfg.decorrelate_rank)?;
            let Some(tour) = find_tour(&clean, &params)? else {
                return Ok(0.0);
            };
            let alignment = refine_and_smooth(&tour, &full[a.0], &full[b.0], &refine_params)?;
            let truth = corpus.ground_truth(a, b).unwrap_or_default();
            Ok(evaluate(&alignment.pairs, &truth, cfg.eval_tolerance).hit_rate)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

fn train_on_labels(
    corpus: &Corpus,
    model: &mut EmbedModel,
    labels: &[TripletLabel],
    cfg: &Config,
    iteration: usize,
    rng: &mut ChaCha8Rng,
) -> Result<embedder::TrainStats> {
    let mut triplets: Vec<[&[f64]; 3]> = Vec::with_capacity(labels.len());
    for l in labels {
        triplets.push([
            feature(corpus, l.anchor)?,
            feature(corpus, l.positive)?,
            feature(corpus, l.negative)?,
        ]);
    }
    // Later waves carry fewer, noisier labels; a decayed rate lets them
    // refine the metric without overwriting what iteration 0 learned.
    let rate = cfg.learning_rate * cfg.learning_rate_decay.powi(iteration as i32);
    embedder::train(
        model,
        &triplets,
        cfg.margin,
        rate,
        cfg.batch_size,
        cfg.epochs,
        rng,
    )
}

fn feature(corpus: &Corpus, (j, frame): (JourneyId, usize)) -> Result<&[f64]> {
    let journey = corpus.journey(j)?;
    journey
        .features
        .get(frame)
        .map(|v| v.as_slice())
        .ok_or_else(|| Error::data(format!("label frame {frame} outside journey {j}")))
}

fn persist_iteration(
    out_dir: Option<&Path>,
    iteration: usize,
    model: &EmbedModel,
    labels: &[TripletLabel],
    reports: &[IterationReport],
) -> Result<()> {
    let Some(dir) = out_dir else {
        return Ok(());
    };
    std::fs::create_dir_all(dir)?;
    model.save(&dir.join(format!("model_iter{iteration}.tsmd")))?;
    write_labels_csv(&dir.join(format!("labels_iter{iteration}.csv")), labels)?;
    let mut text = String::new();
    for r in reports {
        text.push_str(&r.to_json());
        text.push('\n');
    }
    std::fs::write(dir.join("reports.jsonl"), text)?;
    Ok(())
}

pub const LABELS_HEADER: &str = "wave,a_journey,a_frame,p_journey,p_frame,n_journey,n_frame";

pub fn write_labels_csv(path: &Path, labels: &[TripletLabel]) -> Result<()> {
    let mut out = String::from(LABELS_HEADER);
    out.push('\n');
    for l in labels {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            l.wave.tag(),
            l.anchor.0,
            l.anchor.1,
            l.positive.0,
            l.positive.1,
            l.negative.0,
            l.negative.1
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<TripletLabel>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != LABELS_HEADER {
                return Err(Error::data(format!(
                    "{}: expected labels header, found {line:?}",
                    path.display()
                )));
            }
            continue;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::data(format!(
                "{}:{}: expected 7 fields",
                path.display(),
                lineno + 1
            )));
        }
        let bad =
            |what: &str| Error::data(format!("{}:{}: bad {what}", path.display(), lineno + 1));
        let num = |i: usize, what: &str| -> Result<usize> {
            fields[i].trim().parse().map_err(|_| bad(what))
        };
        out.push(TripletLabel {
            wave: Wave::from_tag(fields[0].trim().parse().map_err(|_| bad("wave"))?)?,
            anchor: (JourneyId(num(1, "a_journey")?), num(2, "a_frame")?),
            positive: (JourneyId(num(3, "p_journey")?), num(4, "p_frame")?),
            negative: (JourneyId(num(5, "n_journey")?), num(6, "n_frame")?),
        });
    }
    Ok(out)
}
