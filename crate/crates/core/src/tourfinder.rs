//! Monotone matching tours through a cost matrix.
//!
//! A tour pairs coarse frames of two journeys by walking the cost matrix
//! with down, right, and diagonal moves only, so matched frames never go
//! backwards in either journey. The matrix is searched in overlapping
//! column stripes: each stripe is shifted to non-negative values, solved
//! with a shortest-path sweep whose start is free anywhere in the first
//! column and whose end is free anywhere in the last, and screened by a
//! plausibility test that rejects nodes sitting in flat cost regions.
//! Accepted stripes are then stitched into the longest mutually consistent
//! chain; stripes that disagree with their neighbors (a mid-sequence
//! detour, a parking lot) are dropped and their columns reported as gaps.
//! Within a chained stripe only the nodes that pass the plausibility
//! screen are kept, so stretches where the path was merely forced through
//! featureless or conflicting cost regions also surface as gaps rather
//! than as confident matches.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;

use crate::config::Config;
use crate::corpus::JourneyId;
use crate::costmat::CostMatrix;
use crate::error::{Error, Result};

/// One matched cell of the cost matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathNode {
    /// Coarse frame of the row journey.
    pub row: usize,
    /// Coarse frame of the column journey.
    pub col: usize,
    /// Cell cost in the matrix the tour was extracted from.
    pub cost: f64,
}

/// Tuning knobs for tour extraction, all in coarse-frame units.
#[derive(Debug, Clone, PartialEq)]
pub struct TourParams {
    pub stripe_cols: usize,
    pub overlap_cols: usize,
    pub stitch_tolerance_cols: usize,
    pub plausibility_eps: usize,
    pub plausibility_ratio: f64,
    pub min_plausible_fraction: f64,
}

impl TourParams {
    pub fn from_config(cfg: &Config) -> TourParams {
        TourParams {
            stripe_cols: cfg.stripe_cols(),
            overlap_cols: cfg.overlap_cols(),
            stitch_tolerance_cols: cfg.stitch_tolerance_cols(),
            plausibility_eps: cfg.plausibility_eps,
            plausibility_ratio: cfg.plausibility_ratio,
            min_plausible_fraction: cfg.min_plausible_fraction,
        }
    }
}

/// A stitched matching tour. Nodes are monotone non-decreasing in both
/// coordinates; columns not covered by any node are gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingTour {
    pub nodes: Vec<PathNode>,
    /// Coarse length of the row journey.
    pub row_len: usize,
    /// Coarse length of the column journey.
    pub col_len: usize,
    /// Frames per coarse step; frame index = coarse index * stride.
    pub stride: usize,
    pub row_journey: Option<JourneyId>,
    pub col_journey: Option<JourneyId>,
}

impl MatchingTour {
    pub fn validate(&self) -> Result<()> {
        for w in self.nodes.windows(2) {
            if w[1].row < w[0].row || w[1].col < w[0].col {
                return Err(Error::data(format!(
                    "tour is not monotone: ({}, {}) follows ({}, {})",
                    w[1].row, w[1].col, w[0].row, w[0].col
                )));
            }
        }
        if let Some(last) = self.nodes.last() {
            if last.row >= self.row_len || last.col >= self.col_len {
                return Err(Error::data("tour node outside the matrix"));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total cost of the tour: the sum of node costs.
    pub fn matching_cost(&self) -> f64 {
        self.nodes.iter().map(|n| n.cost).sum()
    }

    /// Segment id per node; a new segment starts wherever the column
    /// advances by more than one step.
    pub fn segments(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut seg = 0usize;
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 && n.col > self.nodes[i - 1].col + 1 {
                seg += 1;
            }
            out.push(seg);
        }
        out
    }

    /// Number of distinct columns with at least one node.
    pub fn covered_cols(&self) -> usize {
        let mut count = 0;
        let mut last = usize::MAX;
        for n in &self.nodes {
            if n.col != last {
                count += 1;
                last = n.col;
            }
        }
        count
    }

    /// Column ranges not covered by any node.
    pub fn gaps(&self) -> Vec<Range<usize>> {
        let mut gaps = Vec::new();
        let mut next = 0usize;
        for n in &self.nodes {
            if n.col > next {
                gaps.push(next..n.col);
            }
            next = next.max(n.col + 1);
        }
        if next < self.col_len {
            gaps.push(next..self.col_len);
        }
        gaps
    }

    /// The same matching viewed from the other journey.
    pub fn transposed(&self) -> MatchingTour {
        MatchingTour {
            nodes: self
                .nodes
                .iter()
                .map(|n| PathNode {
                    row: n.col,
                    col: n.row,
                    cost: n.cost,
                })
                .collect(),
            row_len: self.col_len,
            col_len: self.row_len,
            stride: self.stride,
            row_journey: self.col_journey,
            col_journey: self.row_journey,
        }
    }

    /// Writes the tour with frame indices in full frame units.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("frame_x,frame_y,cost,segment_id\n");
        for (n, seg) in self.nodes.iter().zip(self.segments()) {
            let _ = writeln!(
                out,
                "{},{},{:.6},{}",
                n.row * self.stride,
                n.col * self.stride,
                n.cost,
                seg
            );
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// One row of a tour CSV, in full frame units.
#[derive(Debug, Clone, PartialEq)]
pub struct TourRow {
    pub frame_x: usize,
    pub frame_y: usize,
    pub cost: f64,
    pub segment_id: usize,
}

pub fn read_tour_csv(path: &Path) -> Result<Vec<TourRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "frame_x,frame_y,cost,segment_id" {
                return Err(Error::data(format!(
                    "{}: expected tour header, found {line:?}",
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
        if fields.len() != 4 {
            return Err(Error::data(format!(
                "{}:{}: expected 4 fields",
                path.display(),
                lineno + 1
            )));
        }
        let bad = |what: &str| {
            Error::data(format!("{}:{}: bad {what}", path.display(), lineno + 1))
        };
        rows.push(TourRow {
            frame_x: fields[0].trim().parse().map_err(|_| bad("frame_x"))?,
            frame_y: fields[1].trim().parse().map_err(|_| bad("frame_y"))?,
            cost: fields[2].trim().parse().map_err(|_| bad("cost"))?,
            segment_id: fields[3].trim().parse().map_err(|_| bad("segment_id"))?,
        });
    }
    Ok(rows)
}

/// Cheapest monotone path between two fixed cells, moving down, right, or
/// diagonally. The start cell's own cost is not counted; every entered
/// cell's is. Cost ties prefer the diagonal, then the vertical, then the
/// horizontal predecessor. Returns the total cost and the node list
/// including both endpoints.
pub fn dijkstra_grid(
    m: &CostMatrix,
    start: (usize, usize),
    end: (usize, usize),
) -> Result<(f64, Vec<PathNode>)> {
    if start.0 > end.0 || start.1 > end.1 {
        return Err(Error::invalid_argument(format!(
            "start {start:?} is not above-left of end {end:?}"
        )));
    }
    if end.0 >= m.rows || end.1 >= m.cols {
        return Err(Error::invalid_argument(format!(
            "end {end:?} outside the {}x{} matrix",
            m.rows, m.cols
        )));
    }
    let h = end.0 - start.0 + 1;
    let w = end.1 - start.1 + 1;
    let mut dist = vec![0.0f64; h * w];
    let mut pred = vec![PredMove::Start; h * w];
    for i in 0..h {
        for j in 0..w {
            if i == 0 && j == 0 {
                continue;
            }
            let c = m.at(start.0 + i, start.1 + j);
            let mut best = f64::INFINITY;
            let mut mv = PredMove::Start;
            if i > 0 && j > 0 && dist[(i - 1) * w + (j - 1)] < best {
                best = dist[(i - 1) * w + (j - 1)];
                mv = PredMove::Diagonal;
            }
            if i > 0 && dist[(i - 1) * w + j] < best {
                best = dist[(i - 1) * w + j];
                mv = PredMove::Down;
            }
            if j > 0 && dist[i * w + (j - 1)] < best {
                best = dist[i * w + (j - 1)];
                mv = PredMove::Right;
            }
            dist[i * w + j] = best + c;
            pred[i * w + j] = mv;
        }
    }
    let mut nodes = Vec::new();
    let (mut i, mut j) = (h - 1, w - 1);
    loop {
        nodes.push(PathNode {
            row: start.0 + i,
            col: start.1 + j,
            cost: m.at(start.0 + i, start.1 + j),
        });
        if i == 0 && j == 0 {
            break;
        }
        match pred[i * w + j] {
            PredMove::Diagonal => {
                i -= 1;
                j -= 1;
            }
            PredMove::Down => i -= 1,
            PredMove::Right => j -= 1,
            PredMove::Start => unreachable!("interior cell without predecessor"),
        }
    }
    nodes.reverse();
    Ok((dist[h * w - 1], nodes))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PredMove {
    Start,
    Diagonal,
    Down,
    Right,
}

/// Overlapping column stripes covering `0..cols`. Every stripe except
/// possibly the last has the full width; consecutive stripes share
/// `overlap` columns.
pub fn split_stripes(cols: usize, stripe: usize, overlap: usize) -> Vec<Range<usize>> {
    assert!(stripe > overlap, "stripe width must exceed the overlap");
    let mut out = Vec::new();
    let mut s = 0usize;
    loop {
        let end = (s + stripe).min(cols);
        out.push(s..end);
        if end == cols {
            break;
        }
        s += stripe - overlap;
    }
    out
}

/// Keeps a node only when every in-bounds alternative `eps` steps away in a
/// cardinal direction costs more than `ratio` times the node itself. Costs
/// must be non-negative (shifted) for the ratio to make sense.
pub fn plausibility_filter(
    shifted: &CostMatrix,
    nodes: &[(usize, usize)],
    eps: usize,
    ratio: f64,
) -> Vec<bool> {
    nodes
        .iter()
        .map(|&(r, c)| {
            let here = shifted.at(r, c);
            let mut alternatives = Vec::with_capacity(4);
            if r >= eps {
                alternatives.push((r - eps, c));
            }
            if r + eps < shifted.rows {
                alternatives.push((r + eps, c));
            }
            if c >= eps {
                alternatives.push((r, c - eps));
            }
            if c + eps < shifted.cols {
                alternatives.push((r, c + eps));
            }
            alternatives
                .iter()
                .all(|&(ar, ac)| shifted.at(ar, ac) > ratio * here)
        })
        .collect()
}

/// Why a stripe contributes nothing to the stitched tour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectionReason {
    /// The stripe is part of the tour.
    None,
    /// Too few path nodes passed the plausibility screen.
    Ambiguous,
    /// Confident on its own but inconsistent with its neighbors.
    Disconnected,
}

/// Tour candidate extracted from one stripe.
#[derive(Debug, Clone)]
pub struct StripeResult {
    pub stripe: Range<usize>,
    /// Path nodes in absolute matrix coordinates, costs from the input
    /// (unshifted) matrix. The raw path; one node per stripe column at
    /// least, adjacent steps only.
    pub nodes: Vec<PathNode>,
    /// Plausibility verdict per node.
    pub plausible: Vec<bool>,
    /// Sum of node costs over the plausible nodes.
    pub total_cost: f64,
    /// Shift that was added to make the stripe non-negative.
    pub shift: f64,
    /// True when the plausible fraction reaches the configured minimum.
    pub accepted: bool,
    /// Ambiguous when not accepted; may become Disconnected in stitching.
    pub rejection_reason: RejectionReason,
}

impl StripeResult {
    /// First node's row at the given absolute column.
    fn row_at(&self, col: usize) -> usize {
        self.nodes
            .iter()
            .find(|n| n.col == col)
            .map(|n| n.row)
            .expect("stripe path covers every stripe column")
    }
}

/// Runs the free-endpoint shortest-path sweep on one stripe. The stripe is
/// shifted to non-negative values first; the path may start at any row of
/// the stripe's first column (that cell's cost counts) and end at any row
/// of its last column, taking the cheapest.
pub fn stripe_tour(m: &CostMatrix, stripe: Range<usize>, params: &TourParams) -> StripeResult {
    let s = stripe.start;
    let w = stripe.end - stripe.start;
    assert!(w >= 1 && stripe.end <= m.cols);
    let rows = m.rows;

    let mut low = f64::INFINITY;
    for r in 0..rows {
        for c in stripe.clone() {
            low = low.min(m.at(r, c));
        }
    }
    let shift = (-low).max(0.0);
    let mut sub = CostMatrix {
        rows,
        cols: w,
        stride: m.stride,
        decorrelated: m.decorrelated,
        data: vec![0.0; rows * w],
    };
    for r in 0..rows {
        for j in 0..w {
            sub.data[r * w + j] = m.at(r, s + j) + shift;
        }
    }

    // Forward sweep. The artificial start node reaches every first-column
    // cell directly, so the first column is initialized with its own costs
    // and has no in-grid predecessors.
    let mut dist = vec![0.0f64; rows * w];
    let mut pred = vec![PredMove::Start; rows * w];
    for r in 0..rows {
        dist[r * w] = sub.at(r, 0);
    }
    for j in 1..w {
        // Row order within the column makes the down predecessor (same
        // column, previous row) available when needed.
        for r in 0..rows {
            let mut best = f64::INFINITY;
            let mut mv = PredMove::Start;
            if r > 0 && dist[(r - 1) * w + (j - 1)] < best {
                best = dist[(r - 1) * w + (j - 1)];
                mv = PredMove::Diagonal;
            }
            if r > 0 && dist[(r - 1) * w + j] < best {
                best = dist[(r - 1) * w + j];
                mv = PredMove::Down;
            }
            if dist[r * w + (j - 1)] < best {
                best = dist[r * w + (j - 1)];
                mv = PredMove::Right;
            }
            dist[r * w + j] = best + sub.at(r, j);
            pred[r * w + j] = mv;
        }
    }
    let mut end_row = 0usize;
    for r in 1..rows {
        if dist[r * w + (w - 1)] < dist[end_row * w + (w - 1)] {
            end_row = r;
        }
    }

    let mut local = Vec::new();
    let (mut r, mut j) = (end_row, w - 1);
    loop {
        local.push((r, j));
        match pred[r * w + j] {
            PredMove::Diagonal => {
                r -= 1;
                j -= 1;
            }
            PredMove::Down => r -= 1,
            PredMove::Right => j -= 1,
            PredMove::Start => break,
        }
    }
    local.reverse();

    let plausible = plausibility_filter(
        &sub,
        &local,
        params.plausibility_eps,
        params.plausibility_ratio,
    );
    let nodes: Vec<PathNode> = local
        .iter()
        .map(|&(r, j)| PathNode {
            row: r,
            col: s + j,
            cost: m.at(r, s + j),
        })
        .collect();
    let fraction = plausible.iter().filter(|&&p| p).count() as f64 / plausible.len() as f64;
    let accepted = fraction >= params.min_plausible_fraction;
    let total_cost = nodes
        .iter()
        .zip(&plausible)
        .filter(|&(_, &ok)| ok)
        .map(|(n, _)| n.cost)
        .sum();
    StripeResult {
        stripe,
        nodes,
        plausible,
        total_cost,
        shift,
        accepted,
        rejection_reason: if accepted {
            RejectionReason::None
        } else {
            RejectionReason::Ambiguous
        },
    }
}

/// Stitches accepted stripes into the chain covering the most columns.
///
/// Two stripes are chainable when they agree where they meet: overlapping
/// stripes must give near-identical rows at the overlap midpoint, and
/// stripes separated by rejected neighbors must line up under a diagonal
/// bridge (row advance matching the column advance within the tolerance).
/// Members are trimmed to the overlap midpoints, only nodes passing the
/// plausibility screen are emitted, and seam nodes that would break
/// monotonicity are dropped. Accepted stripes left out of the chain are
/// marked Disconnected; their columns, like those of dropped nodes,
/// become gaps.
pub fn stitch_stripes(results: &mut [StripeResult], tolerance: usize) -> Vec<PathNode> {
    let kept: Vec<usize> = (0..results.len()).filter(|&i| results[i].accepted).collect();
    if kept.is_empty() {
        return Vec::new();
    }

    let n = kept.len();
    let chainable = |a: &StripeResult, b: &StripeResult| -> bool {
        if b.stripe.start < a.stripe.end {
            // Overlapping: compare at the overlap midpoint.
            let mid = (b.stripe.start + a.stripe.end - 1) / 2;
            let ra = a.row_at(mid) as i64;
            let rb = b.row_at(mid) as i64;
            (ra - rb).unsigned_abs() as usize <= tolerance
        } else {
            // Bridging a hole: rows should advance like the columns do.
            let (la, ca) = {
                let last = a.nodes.last().unwrap();
                (last.row as i64, last.col as i64)
            };
            let (fb, cb) = {
                let first = b.nodes.first().unwrap();
                (first.row as i64, first.col as i64)
            };
            ((fb - la) - (cb - ca)).unsigned_abs() as usize <= tolerance
        }
    };

    // Longest-coverage chain, deterministic: first index wins ties.
    let mut score = vec![0i64; n];
    let mut back: Vec<Option<usize>> = vec![None; n];
    for j in 0..n {
        let width = (results[kept[j]].stripe.end - results[kept[j]].stripe.start) as i64;
        score[j] = width;
        for i in 0..j {
            if !chainable(&results[kept[i]], &results[kept[j]]) {
                continue;
            }
            let extra = results[kept[j]].stripe.end as i64
                - results[kept[j]]
                    .stripe
                    .start
                    .max(results[kept[i]].stripe.end) as i64;
            if score[i] + extra > score[j] {
                score[j] = score[i] + extra;
                back[j] = Some(i);
            }
        }
    }
    let mut best = 0usize;
    for j in 1..n {
        if score[j] > score[best] {
            best = j;
        }
    }
    let mut chain = vec![best];
    while let Some(p) = back[*chain.last().unwrap()] {
        chain.push(p);
    }
    chain.reverse();

    for (j, &idx) in kept.iter().enumerate() {
        if !chain.contains(&j) {
            results[idx].rejection_reason = RejectionReason::Disconnected;
        }
    }

    // Trim overlapping neighbors at the overlap midpoint and concatenate
    // the plausible nodes.
    let mut nodes: Vec<PathNode> = Vec::new();
    for (k, &idx) in chain.iter().enumerate() {
        let r = &results[kept[idx]];
        let from = if k == 0 {
            r.stripe.start
        } else {
            let prev = &results[kept[chain[k - 1]]];
            if r.stripe.start < prev.stripe.end {
                (r.stripe.start + prev.stripe.end) / 2
            } else {
                r.stripe.start
            }
        };
        let to = if k + 1 < chain.len() {
            let next = &results[kept[chain[k + 1]]];
            if next.stripe.start < r.stripe.end {
                (next.stripe.start + r.stripe.end) / 2
            } else {
                r.stripe.end
            }
        } else {
            r.stripe.end
        };
        for (node, &ok) in r.nodes.iter().zip(&r.plausible) {
            if !ok || node.col < from || node.col >= to {
                continue;
            }
            if let Some(last) = nodes.last() {
                // Seam repair: drop nodes that would step backwards.
                if node.row < last.row || node.col < last.col {
                    continue;
                }
            }
            nodes.push(*node);
        }
    }
    nodes
}

/// Extracts a matching tour from a (decorrelated) cost matrix. Returns
/// `None` when no stripe passes the plausibility screen, which is the
/// expected outcome for journeys with nothing in common.
pub fn find_tour(m: &CostMatrix, params: &TourParams) -> Result<Option<MatchingTour>> {
    if params.stripe_cols <= params.overlap_cols {
        return Err(Error::invalid_argument(
            "stripe width must exceed the overlap",
        ));
    }
    // Narrow matrices fall back to a single stripe.
    let stripe_w = params.stripe_cols.min(m.cols).max(1);
    let overlap = params.overlap_cols.min(stripe_w.saturating_sub(1));
    // Stripes are independent; the indexed collect keeps their order.
    let mut results: Vec<StripeResult> = split_stripes(m.cols, stripe_w, overlap)
        .into_par_iter()
        .map(|s| stripe_tour(m, s, params))
        .collect();
    let nodes = stitch_stripes(&mut results, params.stitch_tolerance_cols);
    if nodes.is_empty() {
        return Ok(None);
    }
    let tour = MatchingTour {
        nodes,
        row_len: m.rows,
        col_len: m.cols,
        stride: m.stride,
        row_journey: None,
        col_journey: None,
    };
    tour.validate()?;
    Ok(Some(tour))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> CostMatrix {
        assert_eq!(data.len(), rows * cols);
        CostMatrix {
            rows,
            cols,
            stride: 10,
            decorrelated: false,
            data,
        }
    }

    fn params() -> TourParams {
        TourParams {
            stripe_cols: 270,
            overlap_cols: 45,
            stitch_tolerance_cols: 6,
            plausibility_eps: 3,
            plausibility_ratio: 1.2,
            min_plausible_fraction: 0.5,
        }
    }

    /// Exhaustive minimum over all monotone paths with fixed endpoints,
    /// accumulating costs in path order so float sums match the sweep
    /// exactly.
    fn brute_fixed(m: &CostMatrix, start: (usize, usize), end: (usize, usize)) -> f64 {
        fn rec(m: &CostMatrix, at: (usize, usize), end: (usize, usize), acc: f64, best: &mut f64) {
            if at == end {
                *best = (*best).min(acc);
                return;
            }
            let mut step = |r: usize, c: usize| {
                if r <= end.0 && c <= end.1 {
                    rec(m, (r, c), end, acc + m.at(r, c), best);
                }
            };
            step(at.0 + 1, at.1 + 1);
            step(at.0 + 1, at.1);
            step(at.0, at.1 + 1);
        }
        let mut best = f64::INFINITY;
        rec(m, start, end, 0.0, &mut best);
        best
    }

    /// Exhaustive minimum for the stripe sweep: start anywhere in the first
    /// column (cost counted), end anywhere in the last.
    fn brute_free(m: &CostMatrix) -> f64 {
        fn rec(m: &CostMatrix, at: (usize, usize), acc: f64, best: &mut f64) {
            if at.1 == m.cols - 1 {
                *best = (*best).min(acc);
            }
            let mut step = |r: usize, c: usize| {
                if r < m.rows && c < m.cols {
                    rec(m, (r, c), acc + m.at(r, c), best);
                }
            };
            step(at.0 + 1, at.1 + 1);
            step(at.0 + 1, at.1);
            step(at.0, at.1 + 1);
        }
        let mut best = f64::INFINITY;
        for r in 0..m.rows {
            rec(m, (r, 0), m.at(r, 0), &mut best);
        }
        best
    }

    fn pseudo_random_matrix(rows: usize, cols: usize, seed: u64, signed: bool) -> CostMatrix {
        // Cheap deterministic values; signedness covers decorrelated
        // matrices which go negative.
        let mut state = seed;
        let data = (0..rows * cols)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v = ((state >> 33) % 1000) as f64 / 1000.0;
                if signed {
                    v - 0.5
                } else {
                    v
                }
            })
            .collect();
        matrix(rows, cols, data)
    }

    #[test]
    fn fixed_endpoint_path_matches_brute_force_exactly() {
        for seed in 0..8u64 {
            for &signed in &[false, true] {
                let m = pseudo_random_matrix(5, 6, seed, signed);
                let (cost, nodes) = dijkstra_grid(&m, (0, 0), (4, 5)).unwrap();
                let brute = brute_fixed(&m, (0, 0), (4, 5));
                assert_eq!(cost, brute, "seed {seed} signed {signed}");
                // The node list re-folds to the same cost, in order.
                let refold = nodes[1..].iter().fold(0.0, |a, n| a + n.cost);
                assert_eq!(refold, cost);
                assert_eq!(nodes.first().unwrap().row, 0);
                assert_eq!(nodes.last().unwrap().col, 5);
                for w in nodes.windows(2) {
                    let dr = w[1].row - w[0].row;
                    let dc = w[1].col - w[0].col;
                    assert!(dr <= 1 && dc <= 1 && dr + dc >= 1);
                }
            }
        }
    }

    #[test]
    fn sub_rectangle_endpoints_are_respected() {
        let m = pseudo_random_matrix(7, 7, 3, true);
        let (cost, nodes) = dijkstra_grid(&m, (2, 1), (5, 6)).unwrap();
        assert_eq!(cost, brute_fixed(&m, (2, 1), (5, 6)));
        assert_eq!((nodes[0].row, nodes[0].col), (2, 1));
        assert_eq!(
            (nodes.last().unwrap().row, nodes.last().unwrap().col),
            (5, 6)
        );
        assert!(dijkstra_grid(&m, (3, 3), (2, 6)).is_err());
        assert!(dijkstra_grid(&m, (0, 0), (7, 3)).is_err());
    }

    #[test]
    fn ties_prefer_the_diagonal() {
        let m = matrix(4, 4, vec![0.0; 16]);
        let (cost, nodes) = dijkstra_grid(&m, (0, 0), (3, 3)).unwrap();
        assert_eq!(cost, 0.0);
        let expect: Vec<(usize, usize)> = (0..4).map(|i| (i, i)).collect();
        let got: Vec<(usize, usize)> = nodes.iter().map(|n| (n.row, n.col)).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn free_endpoint_sweep_matches_brute_force_exactly() {
        for seed in 0..8u64 {
            let m = pseudo_random_matrix(5, 6, seed, true);
            let result = stripe_tour(&m, 0..6, &params());
            let shifted_total: f64 = {
                // Re-fold the path on shifted values the way the sweep does.
                let shift = result.shift;
                result
                    .nodes
                    .iter()
                    .fold(0.0, |a, n| a + (m.at(n.row, n.col) + shift))
            };
            let mut shifted = m.clone();
            for v in shifted.data.iter_mut() {
                *v += result.shift;
            }
            let brute = brute_free(&shifted);
            // Both sides fold identical f64 values in path order, so the
            // minima agree bitwise, not merely approximately.
            assert_eq!(shifted_total, brute, "seed {seed}");
            // Path spans the whole stripe.
            assert_eq!(result.nodes.first().unwrap().col, 0);
            assert_eq!(result.nodes.last().unwrap().col, 5);
        }
    }

    #[test]
    fn stripe_shift_makes_costs_nonnegative() {
        let m = matrix(2, 3, vec![-2.0, 1.0, 0.5, -0.5, -1.0, 2.0]);
        let r = stripe_tour(&m, 0..3, &params());
        assert_eq!(r.shift, 2.0);
        // Node costs stay in unshifted units.
        for n in &r.nodes {
            assert_eq!(n.cost, m.at(n.row, n.col));
        }
    }

    #[test]
    fn stripe_splitting_layout() {
        assert_eq!(split_stripes(100, 40, 10), vec![0..40, 30..70, 60..100]);
        assert_eq!(split_stripes(30, 40, 10), vec![0..30]);
        assert_eq!(split_stripes(40, 40, 10), vec![0..40]);
        assert_eq!(split_stripes(41, 40, 10), vec![0..40, 30..41]);
        // The chain at the default scale: 900 coarse columns, 270-wide
        // stripes, 45 overlap.
        let s = split_stripes(900, 270, 45);
        assert_eq!(s.first().unwrap().clone(), 0..270);
        assert!(s.iter().all(|r| r.end - r.start <= 270));
        assert_eq!(s.last().unwrap().end, 900);
        for w in s.windows(2) {
            assert_eq!(w[0].end - w[1].start, 45);
        }
    }

    #[test]
    fn plausibility_keeps_valleys_and_drops_plateaus() {
        // Sharp diagonal valley in the left half, constant plateau right.
        let rows = 12;
        let cols = 12;
        let mut data = vec![1.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                if j < 6 {
                    data[i * cols + j] = if i == j { 0.01 } else { 1.0 };
                }
            }
        }
        let m = matrix(rows, cols, data);
        let nodes: Vec<(usize, usize)> = (0..6).map(|i| (i, i)).collect();
        let verdict = plausibility_filter(&m, &nodes, 3, 1.2);
        assert!(verdict.iter().all(|&v| v), "valley nodes must be plausible");
        let flat: Vec<(usize, usize)> = (6..12).map(|i| (i, i)).collect();
        let verdict = plausibility_filter(&m, &flat, 3, 1.2);
        assert!(verdict.iter().all(|&v| !v), "plateau nodes must fail");
    }

    #[test]
    fn plausibility_out_of_bounds_alternatives_are_ignored() {
        // 1x1 matrix: no alternatives exist at all, node passes.
        let m = matrix(1, 1, vec![0.5]);
        let verdict = plausibility_filter(&m, &[(0, 0)], 3, 1.2);
        assert_eq!(verdict, vec![true]);
    }

    /// Builds a matrix with a clean diagonal valley, offset by `offset`
    /// rows inside the given column range.
    fn valley_matrix(
        n: usize,
        segments: &[(Range<usize>, i64)],
    ) -> CostMatrix {
        let mut data = vec![1.0; n * n];
        for (range, offset) in segments {
            for c in range.clone() {
                let r = c as i64 + offset;
                if (0..n as i64).contains(&r) {
                    data[(r as usize) * n + c] = 0.01;
                }
            }
        }
        matrix(n, n, data)
    }

    #[test]
    fn incompatible_middle_stripe_is_dropped() {
        // Stripes are [0, 40), [30, 70), [60, 100). The middle stripe sees
        // only a valley displaced 20 rows below the diagonal, so its
        // (confident, plausible) path disagrees with both neighbors at the
        // overlap midpoints. The outer stripes agree with each other via
        // the diagonal bridge across the hole, so the chain keeps them,
        // drops the middle, and reports its columns as a gap.
        let n = 100;
        let m = valley_matrix(n, &[(0..40, 0), (30..70, -20), (60..100, 0)]);
        let mut p = params();
        p.stripe_cols = 40;
        p.overlap_cols = 10;

        let mut results: Vec<StripeResult> = split_stripes(n, 40, 10)
            .into_iter()
            .map(|s| stripe_tour(&m, s, &p))
            .collect();
        assert!(results.iter().all(|r| r.accepted), "all stripes confident");
        // The middle stripe really does ride the displaced valley.
        assert_eq!(results[1].row_at(50), 30);

        stitch_stripes(&mut results, p.stitch_tolerance_cols);
        assert_eq!(results[0].rejection_reason, RejectionReason::None);
        assert_eq!(results[1].rejection_reason, RejectionReason::Disconnected);
        assert_eq!(results[2].rejection_reason, RejectionReason::None);

        let tour = find_tour(&m, &p).unwrap().expect("outer stripes align");
        assert_eq!(tour.gaps(), vec![40..60]);
        // Kept columns follow the true diagonal.
        for node in &tour.nodes {
            assert_eq!(node.row, node.col);
        }
        // Segment ids split at the gap.
        let segs = tour.segments();
        assert_eq!(*segs.first().unwrap(), 0);
        assert_eq!(*segs.last().unwrap(), 1);
    }

    #[test]
    fn aligned_stripes_stitch_into_one_segment() {
        let n = 100;
        let m = valley_matrix(n, &[(0..100, 0)]);
        let mut p = params();
        p.stripe_cols = 40;
        p.overlap_cols = 10;
        let tour = find_tour(&m, &p).unwrap().expect("clean diagonal");
        assert!(tour.gaps().is_empty(), "gaps: {:?}", tour.gaps());
        assert_eq!(tour.covered_cols(), 100);
        assert!(tour.segments().iter().all(|&s| s == 0));
        for node in &tour.nodes {
            assert_eq!(node.row, node.col);
        }
    }

    #[test]
    fn featureless_matrix_yields_no_tour() {
        let m = matrix(50, 50, vec![1.0; 2500]);
        let mut p = params();
        p.stripe_cols = 25;
        p.overlap_cols = 5;
        assert!(find_tour(&m, &p).unwrap().is_none());
        let r = stripe_tour(&m, 0..25, &p);
        assert!(!r.accepted);
        assert_eq!(r.rejection_reason, RejectionReason::Ambiguous);
        assert_eq!(r.total_cost, 0.0, "no plausible nodes, nothing summed");
    }

    #[test]
    fn forced_boundary_stretches_become_gaps() {
        // The valley exists only in columns 12..88; outside it the matrix
        // is featureless, yet the stripe path must still span every
        // column. Those forced stretches fail the plausibility screen and
        // must surface as gaps instead of fake matches.
        let n = 100;
        let m = valley_matrix(n, &[(12..88, 0)]);
        let p = params();
        let tour = find_tour(&m, &p).unwrap().expect("valley is confident");
        for node in &tour.nodes {
            assert_eq!(node.row, node.col, "kept nodes ride the valley");
        }
        let cols: Vec<usize> = tour.nodes.iter().map(|n| n.col).collect();
        assert!(*cols.first().unwrap() >= 12);
        assert!(*cols.last().unwrap() < 88);
        // Nearly the whole valley survives; eps-sized fringes may go.
        assert!(cols.len() >= 76 - 2 * p.plausibility_eps);
        let gaps = tour.gaps();
        assert!(gaps.iter().any(|g| g.start == 0));
        assert!(gaps.iter().any(|g| g.end == n));
    }

    #[test]
    fn tour_csv_roundtrip() {
        let tour = MatchingTour {
            nodes: vec![
                PathNode {
                    row: 0,
                    col: 0,
                    cost: -0.25,
                },
                PathNode {
                    row: 1,
                    col: 1,
                    cost: 0.5,
                },
                PathNode {
                    row: 2,
                    col: 5,
                    cost: 0.125,
                },
            ],
            row_len: 10,
            col_len: 10,
            stride: 10,
            row_journey: None,
            col_journey: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tour.csv");
        tour.write_csv(&path).unwrap();
        let rows = read_tour_csv(&path).unwrap();
        assert_eq!(rows.len(), 3);
        // Frame indices are written in full frame units.
        assert_eq!(rows[1].frame_x, 10);
        assert_eq!(rows[1].frame_y, 10);
        assert_eq!(rows[2].frame_y, 50);
        assert_eq!(rows[0].cost, -0.25);
        assert_eq!(rows[0].segment_id, 0);
        assert_eq!(rows[2].segment_id, 1);
    }

    #[test]
    fn transpose_swaps_roles() {
        let tour = MatchingTour {
            nodes: vec![
                PathNode {
                    row: 2,
                    col: 0,
                    cost: 0.1,
                },
                PathNode {
                    row: 3,
                    col: 1,
                    cost: 0.2,
                },
            ],
            row_len: 8,
            col_len: 4,
            stride: 10,
            row_journey: Some(JourneyId(5)),
            col_journey: Some(JourneyId(9)),
        };
        let t = tour.transposed();
        assert_eq!(t.row_len, 4);
        assert_eq!(t.col_len, 8);
        assert_eq!(t.row_journey, Some(JourneyId(9)));
        assert_eq!(t.nodes[0].row, 0);
        assert_eq!(t.nodes[0].col, 2);
        t.validate().unwrap();
    }

    #[test]
    fn gaps_and_coverage_are_consistent() {
        let tour = MatchingTour {
            nodes: vec![
                PathNode {
                    row: 0,
                    col: 2,
                    cost: 0.0,
                },
                PathNode {
                    row: 1,
                    col: 3,
                    cost: 0.0,
                },
                PathNode {
                    row: 2,
                    col: 3,
                    cost: 0.0,
                },
                PathNode {
                    row: 3,
                    col: 7,
                    cost: 0.0,
                },
            ],
            row_len: 10,
            col_len: 10,
            stride: 10,
            row_journey: None,
            col_journey: None,
        };
        assert_eq!(tour.covered_cols(), 3);
        assert_eq!(tour.gaps(), vec![0..2, 4..7, 8..10]);
        let total: usize = tour.gaps().iter().map(|g| g.end - g.start).sum();
        assert_eq!(total + tour.covered_cols(), 10);
    }
}
