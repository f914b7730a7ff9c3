//! End-to-end acceptance checks for the synchronization pipeline.
//!
//! Nine checks cover the load-bearing guarantees: exact optimality of the
//! grid search, analytic gradients against finite differences, the
//! decorrelation residual against an independent SVD, perfect
//! self-alignment, curriculum training on the default synthetic corpus,
//! rejection of pure-noise footage, transitive tour composition, smoothing
//! monotonicity, and byte-stable file formats. Every check prints one
//! `ACCEPTANCE <n> <name>: PASS|FAIL` line; run with `--nocapture` to see
//! them as they complete.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tsync_core::corpus::Corpus;
use tsync_core::costmat::CostMatrix;
use tsync_core::curriculum::{compose_tours, read_labels_csv, sample_intra, write_labels_csv};
use tsync_core::embedder::{
    load_descriptors, save_descriptors, triplet_gradient, triplet_loss, EmbedModel,
};
use tsync_core::eval::evaluate;
use tsync_core::refine::{refine_and_smooth, smooth_alignment, Alignment, RefineParams};
use tsync_core::tourfinder::{
    dijkstra_grid, find_tour, read_tour_csv, MatchingTour, PathNode, TourParams,
};
use tsync_core::Config;

type Check = std::result::Result<(), String>;

#[test]
fn acceptance() {
    let checks: Vec<(&str, fn() -> Check)> = vec![
        ("grid search optimality", grid_search_optimality),
        ("gradient check", gradient_check),
        ("decorrelation residual", decorrelation_residual),
        ("self alignment", self_alignment),
        ("corpus curriculum", corpus_curriculum),
        ("noise block rejection", noise_block_rejection),
        ("tour composition", tour_composition),
        ("smoothing monotonicity", smoothing_monotonicity),
        ("format round-trips", format_round_trips),
    ];
    let mut failures = Vec::new();
    for (i, (name, run)) in checks.iter().enumerate() {
        match run() {
            Ok(()) => println!("ACCEPTANCE {} {name}: PASS", i + 1),
            Err(why) => {
                println!("ACCEPTANCE {} {name}: FAIL ({why})", i + 1);
                failures.push(format!("{} {name}: {why}", i + 1));
            }
        }
    }
    assert!(failures.is_empty(), "failed checks:\n{}", failures.join("\n"));
}

fn elapsed_under(start: Instant, limit: Duration, what: &str) -> Check {
    let took = start.elapsed();
    if took > limit {
        return Err(format!("{what} took {took:?}, limit {limit:?}"));
    }
    Ok(())
}

/// Cheapest monotone corner-to-corner path by explicit enumeration. Costs
/// are accumulated in path order, the same association the dynamic program
/// uses, so agreeing minima agree to the last bit.
fn exhaustive_min_cost(m: &CostMatrix) -> f64 {
    fn walk(m: &CostMatrix, r: usize, c: usize, acc: f64, best: &mut f64) {
        if r == m.rows - 1 && c == m.cols - 1 {
            *best = best.min(acc);
            return;
        }
        if r + 1 < m.rows && c + 1 < m.cols {
            walk(m, r + 1, c + 1, acc + m.at(r + 1, c + 1), best);
        }
        if r + 1 < m.rows {
            walk(m, r + 1, c, acc + m.at(r + 1, c), best);
        }
        if c + 1 < m.cols {
            walk(m, r, c + 1, acc + m.at(r, c + 1), best);
        }
    }
    let mut best = f64::INFINITY;
    walk(m, 0, 0, 0.0, &mut best);
    best
}

/// 1. The grid search must return the true minimum-cost monotone path, not
/// an approximation: exact f64 equality against brute-force enumeration on
/// one hundred random matrices.
fn grid_search_optimality() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1);
    for case in 0..100 {
        let rows = rng.random_range(1..=7);
        let cols = rng.random_range(1..=7);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = CostMatrix { rows, cols, stride: 1, decorrelated: false, data };
        let (cost, _) = dijkstra_grid(&m, (0, 0), (rows - 1, cols - 1))
            .map_err(|e| format!("case {case}: {e}"))?;
        let brute = exhaustive_min_cost(&m);
        if cost != brute {
            return Err(format!(
                "case {case} ({rows}x{cols}): search found {cost:.17}, enumeration {brute:.17}"
            ));
        }
    }
    elapsed_under(start, Duration::from_secs(10), "100 grid searches")
}

/// 2. Analytic gradients of the triplet loss through the whole network,
/// sphere normalization included, must match central finite differences on
/// fifty random instances kept clear of the hinge kink.
fn gradient_check() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD2);
    let margin = 0.5;
    let h = 1e-4;
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < 50 {
        attempts += 1;
        if attempts > 5000 {
            return Err(format!("only {accepted} active instances in {attempts} draws"));
        }
        let input_dim = rng.random_range(3..=6);
        let desc_dim = rng.random_range(2..=4);
        let model = EmbedModel::new(input_dim, desc_dim, &mut rng);
        let triplet: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (loss, analytic) =
            triplet_gradient(&model, &triplet[0], &triplet[1], &triplet[2], margin);
        // Stay away from the kink so the loss is differentiable at the
        // point and for every finite-difference probe around it.
        if loss < 0.05 {
            continue;
        }
        accepted += 1;

        let loss_at = |m: &EmbedModel| {
            triplet_loss(
                &m.embed(&triplet[0]),
                &m.embed(&triplet[1]),
                &m.embed(&triplet[2]),
                margin,
            )
        };
        let mut flat_analytic = Vec::new();
        let mut flat_numeric = Vec::new();
        for l in 0..model.layers.len() {
            for k in 0..model.layers[l].weights.len() {
                let mut plus = model.clone();
                plus.layers[l].weights[k] += h;
                let mut minus = model.clone();
                minus.layers[l].weights[k] -= h;
                flat_numeric.push((loss_at(&plus) - loss_at(&minus)) / (2.0 * h));
                flat_analytic.push(analytic.weights[l][k]);
            }
            for k in 0..model.layers[l].bias.len() {
                let mut plus = model.clone();
                plus.layers[l].bias[k] += h;
                let mut minus = model.clone();
                minus.layers[l].bias[k] -= h;
                flat_numeric.push((loss_at(&plus) - loss_at(&minus)) / (2.0 * h));
                flat_analytic.push(analytic.bias[l][k]);
            }
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = flat_analytic
            .iter()
            .zip(&flat_numeric)
            .map(|(a, n)| a - n)
            .collect();
        let scale = norm(&flat_analytic).max(norm(&flat_numeric));
        if scale <= 0.0 {
            return Err(format!("instance {accepted}: zero gradient despite active loss"));
        }
        let rel = norm(&diff) / scale;
        if rel > 1e-3 {
            return Err(format!(
                "instance {accepted}: relative gradient error {rel:.2e} (loss {loss:.3})"
            ));
        }
    }
    elapsed_under(start, Duration::from_secs(30), "50 gradient checks")
}

/// 3. Removing the top singular components must leave a residual whose
/// Frobenius norm equals the energy of the remaining singular values,
/// checked against an independent full SVD; an exactly rank-one matrix
/// must be annihilated outright.
fn decorrelation_residual() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD3);
    for case in 0..20 {
        let rows = rng.random_range(8..=30);
        let cols = rng.random_range(8..=40);
        let rank = rng.random_range(0..=6usize).min(rows.min(cols) - 1);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..2.0)).collect();
        let m = CostMatrix { rows, cols, stride: 1, decorrelated: false, data: data.clone() };
        let (clean, _) = m.decorrelate(rank).map_err(|e| format!("case {case}: {e}"))?;
        let frob = clean.data.iter().map(|v| v * v).sum::<f64>().sqrt();

        let full = nalgebra::DMatrix::from_row_slice(rows, cols, &data);
        let mut sigma: Vec<f64> = full.svd(false, false).singular_values.iter().copied().collect();
        sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let tail = sigma[rank..].iter().map(|s| s * s).sum::<f64>().sqrt();

        let rel = (frob - tail).abs() / tail.max(1e-300);
        if rel > 1e-5 {
            return Err(format!(
                "case {case} ({rows}x{cols} rank {rank}): residual {frob:.9} vs SVD tail {tail:.9}"
            ));
        }
    }

    // Rank-one input, rank-one removal: nothing may survive.
    let (rows, cols) = (14, 23);
    let u: Vec<f64> = (0..rows).map(|_| rng.random_range(0.5..2.0)).collect();
    let v: Vec<f64> = (0..cols).map(|_| rng.random_range(0.5..2.0)).collect();
    let data: Vec<f64> = (0..rows * cols).map(|i| u[i / cols] * v[i % cols]).collect();
    let m = CostMatrix { rows, cols, stride: 1, decorrelated: false, data };
    let (clean, _) = m.decorrelate(1).map_err(|e| e.to_string())?;
    let max_abs = clean.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max_abs > 1e-6 {
        return Err(format!("rank-one residual max |entry| = {max_abs:.2e}"));
    }
    Ok(())
}

/// Clean features for a fresh synthetic corpus with every corruption source
/// switched off.
fn pristine_config() -> Config {
    let mut cfg = Config::default();
    cfg.noise_sigma = 0.0;
    cfg.bias_scale = 0.0;
    cfg.seasonal_scale = 0.0;
    cfg.noise_fraction = 0.0;
    cfg
}

fn coarse_descriptors(model: &EmbedModel, features: &[Vec<f64>], stride: usize) -> Vec<Vec<f64>> {
    let sampled: Vec<Vec<f64>> = features.iter().step_by(stride).cloned().collect();
    model.embed_all(&sampled)
}

/// 4. Matching a journey against itself must recover the diagonal: at
/// least 99% of accepted nodes sit exactly on it.
fn self_alignment() -> Check {
    let start = Instant::now();
    let mut cfg = pristine_config();
    cfg.routes = 1;
    cfg.journeys_per_route = 1;
    let corpus = Corpus::generate(&cfg).map_err(|e| e.to_string())?;
    let model = EmbedModel::identity(cfg.feature_dim);
    let x = coarse_descriptors(&model, &corpus.journeys[0].features, cfg.stride);
    let m = CostMatrix::from_descriptors(&x, &x, cfg.stride).map_err(|e| e.to_string())?;
    let tour = find_tour(&m, &TourParams::from_config(&cfg))
        .map_err(|e| e.to_string())?
        .ok_or("no tour found for a journey against itself")?;
    if tour.nodes.is_empty() {
        return Err("tour came back empty".into());
    }
    let diagonal = tour.nodes.iter().filter(|n| n.row == n.col).count();
    let fraction = diagonal as f64 / tour.nodes.len() as f64;
    if fraction < 0.99 {
        return Err(format!(
            "only {:.4} of {} accepted nodes on the diagonal",
            fraction,
            tour.nodes.len()
        ));
    }
    elapsed_under(start, Duration::from_secs(10), "self alignment")
}

fn run_cli(args: &[&str]) -> std::result::Result<(String, i32), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tsync"))
        .args(args)
        .output()
        .map_err(|e| format!("spawning tsync: {e}"))?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let code = out.status.code().unwrap_or(-1);
    if code != 0 && code != 1 {
        let stderr = String::from_utf8_lossy(&out.stderr);
        return Err(format!("tsync {} exited {code}: {stderr}", args.join(" ")));
    }
    Ok((stdout, code))
}

fn stdout_value(stdout: &str, key: &str) -> std::result::Result<f64, String> {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} ")))
        .ok_or_else(|| format!("missing `{key}` in output"))?
        .trim()
        .parse()
        .map_err(|e| format!("bad `{key}` value: {e}"))
}

/// 5. The full command-line loop on the default synthetic corpus: train
/// for three curriculum waves, hold a non-decreasing per-wave hit rate,
/// and finish with at least 0.60 mean hit rate at a four-frame tolerance
/// over every same-route pair.
fn corpus_curriculum() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus");
    let model = dir.path().join("model.tsmd");
    let artifacts = dir.path().join("artifacts");
    let pairs_dir = dir.path().join("pairs");
    std::fs::create_dir(&pairs_dir).map_err(|e| e.to_string())?;

    run_cli(&["generate", "--out", corpus.to_str().unwrap()])?;
    run_cli(&[
        "--set",
        "iterations=2",
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--artifacts",
        artifacts.to_str().unwrap(),
    ])?;

    let reports =
        std::fs::read_to_string(artifacts.join("reports.jsonl")).map_err(|e| e.to_string())?;
    let mut rates = Vec::new();
    for line in reports.lines() {
        let key = "\"eval_offset_le4_fraction\":";
        let at = line.find(key).ok_or("report line without eval rate")?;
        let rest = &line[at + key.len()..];
        let end = rest.find('}').unwrap_or(rest.len());
        rates.push(
            rest[..end]
                .parse::<f64>()
                .map_err(|e| format!("bad eval rate: {e}"))?,
        );
    }
    if rates.len() != 3 {
        return Err(format!("expected 3 iteration reports, found {}", rates.len()));
    }
    if !(rates[0] <= rates[1] && rates[1] <= rates[2]) {
        return Err(format!(
            "per-wave hit rate decreased: {:.4} -> {:.4} -> {:.4}",
            rates[0], rates[1], rates[2]
        ));
    }

    // Score every same-route pair through the command-line interface.
    let mut hit_rates = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&corpus)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    for truth in &entries {
        let name = truth.file_name().unwrap().to_string_lossy();
        let Some(stem) = name.strip_prefix("gt_").and_then(|s| s.strip_suffix(".csv")) else {
            continue;
        };
        let (a, b) = stem.split_once('_').ok_or("bad ground-truth file name")?;
        let x = corpus.join(format!("journey_{a}.tsrf"));
        let y = corpus.join(format!("journey_{b}.tsrf"));
        let (_, code) = run_cli(&[
            "align",
            "--model",
            model.to_str().unwrap(),
            "--x",
            x.to_str().unwrap(),
            "--y",
            y.to_str().unwrap(),
            "--out",
            pairs_dir.to_str().unwrap(),
        ])?;
        if code == 1 {
            hit_rates.push(0.0); // no tour found for this pair
            continue;
        }
        let alignment = pairs_dir.join(format!("align_{a}_{b}.csv"));
        let (stdout, _) = run_cli(&[
            "eval",
            "--alignment",
            alignment.to_str().unwrap(),
            "--truth",
            truth.to_str().unwrap(),
            "--tolerance",
            "4",
        ])?;
        hit_rates.push(stdout_value(&stdout, "hit_rate")?);
    }
    if hit_rates.is_empty() {
        return Err("corpus contains no ground-truth pairs".into());
    }
    let mean = hit_rates.iter().sum::<f64>() / hit_rates.len() as f64;
    if mean < 0.60 {
        return Err(format!(
            "mean hit rate {mean:.4} over {} pairs (waves {:.4} -> {:.4} -> {:.4})",
            hit_rates.len(),
            rates[0],
            rates[1],
            rates[2]
        ));
    }
    elapsed_under(start, Duration::from_secs(900), "curriculum run")
}

/// Full production path for one journey pair: coarse descriptors,
/// decorrelation, tour search, refinement, smoothing.
fn align_features(
    cfg: &Config,
    model: &EmbedModel,
    x: &[Vec<f64>],
    y: &[Vec<f64>],
) -> std::result::Result<(MatchingTour, Alignment), String> {
    let cx = coarse_descriptors(model, x, cfg.stride);
    let cy = coarse_descriptors(model, y, cfg.stride);
    let raw = CostMatrix::from_descriptors(&cx, &cy, cfg.stride).map_err(|e| e.to_string())?;
    let (clean, _) = raw.decorrelate(cfg.decorrelate_rank).map_err(|e| e.to_string())?;
    let tour = find_tour(&clean, &TourParams::from_config(cfg))
        .map_err(|e| e.to_string())?
        .ok_or("no tour found")?;
    let alignment = refine_and_smooth(
        &tour,
        &model.embed_all(x),
        &model.embed_all(y),
        &RefineParams::from_config(cfg),
    )
    .map_err(|e| e.to_string())?;
    Ok((tour, alignment))
}

/// 6. A contiguous pure-noise stretch spanning a fifth of one journey must
/// come out as tour gaps, while alignment quality away from the stretch
/// survives.
fn noise_block_rejection() -> Check {
    let mut cfg = pristine_config();
    cfg.routes = 1;
    cfg.journeys_per_route = 2;
    cfg.standstill_prob = 0.0;
    let corpus = Corpus::generate(&cfg).map_err(|e| e.to_string())?;
    let model = EmbedModel::identity(cfg.feature_dim);
    let x = &corpus.journeys[0].features;
    let y = &corpus.journeys[1].features;
    let truth = corpus
        .ground_truth(corpus.journeys[0].id, corpus.journeys[1].id)
        .ok_or("missing ground truth")?;

    let frames = y.len();
    let block = (frames / 5).div_ceil(1);
    let block_start = 2 * frames / 5; // mid-journey, clear of both ends
    let block_range = block_start..block_start + block;
    let mut rng = ChaCha8Rng::seed_from_u64(0xD6);
    let mut blocked = y.clone();
    for frame in blocked[block_range.clone()].iter_mut() {
        // Same construction as corpus obstructions: a random direction
        // scaled well past the feature shell.
        let v: Vec<f64> = (0..cfg.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        *frame = v.iter().map(|a| a * 1.5 / n).collect();
    }

    let (_, base) = align_features(&cfg, &model, x, y)?;
    let (tour, aligned) = align_features(&cfg, &model, x, &blocked)?;

    // Nearly all block columns must be left unmatched.
    let block_cols = block_range.start / cfg.stride..block_range.end / cfg.stride;
    let gap_cols: usize = tour
        .gaps()
        .iter()
        .map(|g| g.end.min(block_cols.end).saturating_sub(g.start.max(block_cols.start)))
        .sum();
    let needed = (0.8 * block_cols.len() as f64).ceil() as usize;
    if gap_cols < needed {
        return Err(format!(
            "only {gap_cols} of {} block columns are gaps (need {needed})",
            block_cols.len()
        ));
    }

    // Away from the block the hit rate must hold up.
    let outside: Vec<(usize, usize)> = truth
        .iter()
        .copied()
        .filter(|&(_, b)| !block_range.contains(&b))
        .collect();
    let base_hit = evaluate(&base.pairs, &outside, cfg.eval_tolerance).hit_rate;
    let blocked_hit = evaluate(&aligned.pairs, &outside, cfg.eval_tolerance).hit_rate;
    if blocked_hit < 0.9 * base_hit {
        return Err(format!(
            "matching-region hit rate fell from {base_hit:.4} to {blocked_hit:.4}"
        ));
    }
    Ok(())
}

/// First matched column for every row of a tour.
fn row_to_col(tour: &MatchingTour) -> BTreeMap<usize, usize> {
    let mut map = BTreeMap::new();
    for n in &tour.nodes {
        map.entry(n.row).or_insert(n.col);
    }
    map
}

/// 7. Composing A-to-B with B-to-C must agree with aligning A to C
/// directly, within the stitching tolerance, on at least 90% of the rows
/// both cover.
fn tour_composition() -> Check {
    let mut cfg = pristine_config();
    cfg.routes = 1;
    cfg.journeys_per_route = 3;
    cfg.standstill_prob = 0.0;
    let corpus = Corpus::generate(&cfg).map_err(|e| e.to_string())?;
    let model = EmbedModel::identity(cfg.feature_dim);
    let feats: Vec<&Vec<Vec<f64>>> = corpus.journeys.iter().map(|j| &j.features).collect();

    let coarse: Vec<Vec<Vec<f64>>> = feats
        .iter()
        .map(|f| coarse_descriptors(&model, f, cfg.stride))
        .collect();
    let params = TourParams::from_config(&cfg);
    let tour_between = |a: usize, b: usize| -> std::result::Result<MatchingTour, String> {
        let raw = CostMatrix::from_descriptors(&coarse[a], &coarse[b], cfg.stride)
            .map_err(|e| e.to_string())?;
        let (clean, _) = raw.decorrelate(cfg.decorrelate_rank).map_err(|e| e.to_string())?;
        find_tour(&clean, &params)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("no tour for journeys {a} and {b}"))
    };
    let ab = tour_between(0, 1)?;
    let bc = tour_between(1, 2)?;
    let direct = tour_between(0, 2)?;
    let tolerance = cfg.stitch_tolerance_cols();
    let composed = compose_tours(&ab, &bc, tolerance).map_err(|e| e.to_string())?;

    let composed_map = row_to_col(&composed);
    let direct_map = row_to_col(&direct);
    let mut shared = 0usize;
    let mut agreeing = 0usize;
    for (row, col) in &composed_map {
        if let Some(want) = direct_map.get(row) {
            shared += 1;
            if col.abs_diff(*want) <= tolerance {
                agreeing += 1;
            }
        }
    }
    if shared < 50 {
        return Err(format!("only {shared} shared rows between composed and direct tours"));
    }
    let fraction = agreeing as f64 / shared as f64;
    if fraction < 0.90 {
        return Err(format!(
            "composed and direct tours agree on {fraction:.4} of {shared} shared rows"
        ));
    }
    Ok(())
}

/// 8. Smoothing may never step backwards on a monotone staircase and must
/// reproduce exactly linear alignments.
fn smoothing_monotonicity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD8);
    for case in 0..1000 {
        let len = rng.random_range(2..=200);
        let mut pairs = Vec::with_capacity(len);
        let (mut x, mut y) = (0usize, 0usize);
        for _ in 0..len {
            x += rng.random_range(0..=3);
            y += rng.random_range(0..=3);
            pairs.push((x, y));
        }
        let smoothed = smooth_alignment(&pairs, 1e-3, 1.0);
        if smoothed.len() != pairs.len() {
            return Err(format!("case {case}: length changed"));
        }
        for w in smoothed.windows(2) {
            if w[1].0 < w[0].0 || w[1].1 < w[0].1 {
                return Err(format!("case {case}: smoothed output steps backwards"));
            }
        }
    }
    for &(sx, sy) in &[(1usize, 1usize), (1, 2), (2, 1), (3, 1), (1, 3)] {
        let pairs: Vec<(usize, usize)> = (0..100).map(|i| (10 + sx * i, 7 + sy * i)).collect();
        let smoothed = smooth_alignment(&pairs, 1e-3, 1.0);
        for (i, (&(px, py), &(qx, qy))) in pairs.iter().zip(&smoothed).enumerate() {
            if (px as f64 - qx).abs() > 1e-6 || (py as f64 - qy).abs() > 1e-6 {
                return Err(format!(
                    "slope {sx}/{sy}, index {i}: ({px}, {py}) smoothed to ({qx:.8}, {qy:.8})"
                ));
            }
        }
    }
    Ok(())
}

fn assert_same_bytes(a: &Path, b: &Path) -> Check {
    let left = std::fs::read(a).map_err(|e| e.to_string())?;
    let right = std::fs::read(b).map_err(|e| e.to_string())?;
    if left != right {
        return Err(format!(
            "{} and {} differ after a round-trip",
            a.display(),
            b.display()
        ));
    }
    Ok(())
}

/// 9. Every persistent format must survive write -> read -> write with
/// byte-identical output: corpus directories, descriptor sets, model
/// checkpoints, cost matrices, tours, alignments, and label files.
fn format_round_trips() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xD9);

    // Corpus directory, file by file.
    let mut cfg = pristine_config();
    cfg.routes = 2;
    cfg.journeys_per_route = 2;
    cfg.journey_frames = 150;
    cfg.route_length = 40;
    cfg.feature_dim = 8;
    let corpus = Corpus::generate(&cfg).map_err(|e| e.to_string())?;
    let c1 = dir.path().join("corpus1");
    let c2 = dir.path().join("corpus2");
    corpus.save(&c1).map_err(|e| e.to_string())?;
    let reloaded = Corpus::load(&c1).map_err(|e| e.to_string())?;
    reloaded.save(&c2).map_err(|e| e.to_string())?;
    let mut names: Vec<String> = std::fs::read_dir(&c1)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in &names {
        assert_same_bytes(&c1.join(name), &c2.join(name))?;
    }

    // Model checkpoint.
    let model = EmbedModel::new(8, 6, &mut rng);
    let m1 = dir.path().join("model1.tsmd");
    let m2 = dir.path().join("model2.tsmd");
    model.save(&m1).map_err(|e| e.to_string())?;
    EmbedModel::load(&m1)
        .map_err(|e| e.to_string())?
        .save(&m2)
        .map_err(|e| e.to_string())?;
    assert_same_bytes(&m1, &m2)?;

    // Descriptor set.
    let descriptors = model.embed_all(&corpus.journeys[0].features);
    let d1 = dir.path().join("desc1.tsem");
    let d2 = dir.path().join("desc2.tsem");
    save_descriptors(&d1, &descriptors, cfg.stride).map_err(|e| e.to_string())?;
    let (loaded, stride) = load_descriptors(&d1).map_err(|e| e.to_string())?;
    save_descriptors(&d2, &loaded, stride).map_err(|e| e.to_string())?;
    assert_same_bytes(&d1, &d2)?;

    // Cost matrix, raw and decorrelated.
    let coarse = coarse_descriptors(&model, &corpus.journeys[0].features, cfg.stride);
    let raw = CostMatrix::from_descriptors(&coarse, &coarse, cfg.stride)
        .map_err(|e| e.to_string())?;
    let (clean, _) = raw.decorrelate(2).map_err(|e| e.to_string())?;
    for (i, m) in [raw, clean].iter().enumerate() {
        let p1 = dir.path().join(format!("matrix{i}a.tscm"));
        let p2 = dir.path().join(format!("matrix{i}b.tscm"));
        m.save(&p1).map_err(|e| e.to_string())?;
        CostMatrix::load(&p1)
            .map_err(|e| e.to_string())?
            .save(&p2)
            .map_err(|e| e.to_string())?;
        assert_same_bytes(&p1, &p2)?;
    }

    // Tour CSV.
    let mut nodes = Vec::new();
    let (mut row, mut col) = (0usize, 0usize);
    for _ in 0..40 {
        row += rng.random_range(0..=1);
        col += rng.random_range(0..=2).max(if row == 0 { 1 } else { 0 });
        nodes.push(PathNode { row, col, cost: rng.random_range(-1.0..1.0) });
    }
    let tour = MatchingTour {
        row_len: row + 1,
        col_len: col + 1,
        stride: cfg.stride,
        nodes,
        row_journey: None,
        col_journey: None,
    };
    let t1 = dir.path().join("tour1.csv");
    let t2 = dir.path().join("tour2.csv");
    tour.write_csv(&t1).map_err(|e| e.to_string())?;
    let rows = read_tour_csv(&t1).map_err(|e| e.to_string())?;
    let rebuilt = MatchingTour {
        nodes: rows
            .iter()
            .map(|r| PathNode {
                row: r.frame_x / tour.stride,
                col: r.frame_y / tour.stride,
                cost: r.cost,
            })
            .collect(),
        ..tour.clone()
    };
    rebuilt.write_csv(&t2).map_err(|e| e.to_string())?;
    assert_same_bytes(&t1, &t2)?;

    // Alignment CSV.
    let pairs: Vec<(usize, usize)> = (0..60).map(|i| (i, 2 * i + 5)).collect();
    let alignment = Alignment {
        smoothed: smooth_alignment(&pairs, 1e-3, 1.0),
        pairs,
    };
    let a1 = dir.path().join("align1.csv");
    let a2 = dir.path().join("align2.csv");
    alignment.write_csv(&a1).map_err(|e| e.to_string())?;
    Alignment::read_csv(&a1)
        .map_err(|e| e.to_string())?
        .write_csv(&a2)
        .map_err(|e| e.to_string())?;
    assert_same_bytes(&a1, &a2)?;

    // Label CSV.
    let labels = sample_intra(&corpus.journeys[0], 40, 10, 50, 3).map_err(|e| e.to_string())?;
    let l1 = dir.path().join("labels1.csv");
    let l2 = dir.path().join("labels2.csv");
    write_labels_csv(&l1, &labels).map_err(|e| e.to_string())?;
    let read = read_labels_csv(&l1).map_err(|e| e.to_string())?;
    write_labels_csv(&l2, &read).map_err(|e| e.to_string())?;
    assert_same_bytes(&l1, &l2)?;
    Ok(())
}
