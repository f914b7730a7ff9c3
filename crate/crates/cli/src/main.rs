//! Command-line frontend for the temporal synchronization pipeline.
//!
//! Subcommands cover the whole workflow: `generate` builds a synthetic
//! corpus with ground truth, `train` runs the self-labeling curriculum,
//! `align` matches two journey files, `sync` composes every journey of a
//! class onto a reference journey, `eval` scores an alignment, and
//! `dump-matrix` exports cost matrices for inspection.
//!
//! Exit codes: 0 success, 1 no match found (a valid outcome, not a
//! failure), 2 usage or data errors, 3 numerical failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use tsync_core::config::Config;
use tsync_core::corpus::{load_journey_features, read_ground_truth_csv, Corpus, JourneyId};
use tsync_core::costmat::CostMatrix;
use tsync_core::curriculum::{
    coarse_descriptors, compose_to_reference, plan_pairs, run_curriculum, update_index,
    CollectionIndex,
};
use tsync_core::embedder::EmbedModel;
use tsync_core::error::Error;
use tsync_core::eval::evaluate;
use tsync_core::refine::{refine_and_smooth, Alignment, RefineParams};
use tsync_core::tourfinder::{find_tour, MatchingTour, TourParams};
use tsync_core::Result;

/// Environment variable overriding the worker thread count.
const THREADS_VAR: &str = "TSYNC_THREADS";

#[derive(Parser)]
#[command(
    name = "tsync",
    version,
    about = "Temporal synchronization of frame-descriptor sequences"
)]
struct Cli {
    /// Flat key-value config file; unset keys keep their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override a single config key (key=value); repeatable, applied after
    /// the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with ground-truth alignments.
    Generate(GenerateArgs),
    /// Run the self-labeling curriculum and save the embedder.
    Train(TrainArgs),
    /// Align two journey files with a trained embedder.
    Align(AlignArgs),
    /// Align every journey sharing a route with the reference journey.
    Sync(SyncArgs),
    /// Score an alignment file against ground truth.
    Eval(EvalArgs),
    /// Export a cost matrix without searching for a tour.
    DumpMatrix(DumpMatrixArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output corpus directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory to train on.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Output model checkpoint path.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Directory for per-iteration label CSVs and reports; defaults to the
    /// checkpoint's directory.
    #[arg(long, value_name = "DIR")]
    artifacts: Option<PathBuf>,
}

#[derive(Args)]
struct AlignArgs {
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Row-side journey file.
    #[arg(long, value_name = "FILE")]
    x: PathBuf,
    /// Column-side journey file.
    #[arg(long, value_name = "FILE")]
    y: PathBuf,
    /// Output directory for tour and alignment CSVs.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Also save the decorrelated coarse cost matrix.
    #[arg(long)]
    dump_matrix: bool,
    /// Also save a grayscale rendering of the coarse cost matrix.
    #[arg(long)]
    pgm: bool,
    /// Stop after the coarse tour; skip refinement and smoothing.
    #[arg(long)]
    coarse_only: bool,
}

#[derive(Args)]
struct SyncArgs {
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Corpus directory holding the journeys.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Journey id every class member is aligned to.
    #[arg(long, value_name = "ID")]
    reference: usize,
    /// Output directory for the alignment CSVs.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Alignment CSV produced by align or sync.
    #[arg(long, value_name = "FILE")]
    alignment: PathBuf,
    /// Ground-truth CSV (frame_a,frame_b).
    #[arg(long, value_name = "FILE")]
    truth: PathBuf,
    /// Frame tolerance; defaults to the config's eval_tolerance.
    #[arg(long, value_name = "FRAMES")]
    tolerance: Option<usize>,
}

#[derive(Args)]
struct DumpMatrixArgs {
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Row-side journey file.
    #[arg(long, value_name = "FILE")]
    x: PathBuf,
    /// Column-side journey file.
    #[arg(long, value_name = "FILE")]
    y: PathBuf,
    /// Output matrix file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also write a grayscale rendering here.
    #[arg(long, value_name = "FILE")]
    pgm: Option<PathBuf>,
    /// Remove the top singular components before saving.
    #[arg(long)]
    decorrelate: bool,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("tsync: {e}");
            match e {
                Error::Numerical { .. } => 3,
                _ => 2,
            }
        }
    };
    std::process::exit(code);
}

fn run(cli: &Cli) -> Result<i32> {
    init_threads()?;
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    match &cli.command {
        Command::Generate(args) => cmd_generate(&cfg, args),
        Command::Train(args) => cmd_train(&cfg, args),
        Command::Align(args) => cmd_align(&cfg, args),
        Command::Sync(args) => cmd_sync(&cfg, args),
        Command::Eval(args) => cmd_eval(&cfg, args),
        Command::DumpMatrix(args) => cmd_dump_matrix(&cfg, args),
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::invalid_argument(format!(
            "{THREADS_VAR} must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::data(format!("cannot size the thread pool: {e}")))
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    for entry in overrides {
        let Some((key, value)) = entry.split_once('=') else {
            return Err(Error::invalid_argument(format!(
                "--set expects key=value, got {entry:?}"
            )));
        };
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_generate(cfg: &Config, args: &GenerateArgs) -> Result<i32> {
    let corpus = Corpus::generate(cfg)?;
    corpus.save(&args.out)?;
    let frames: usize = corpus.journeys.iter().map(|j| j.frames()).sum();
    println!("routes {}", corpus.route_count);
    println!("journeys {}", corpus.journeys.len());
    println!("frames {frames}");
    println!("ground_truth_pairs {}", corpus.ground_truth_pairs().len());
    println!("corpus_dir {}", args.out.display());
    Ok(0)
}

fn cmd_train(cfg: &Config, args: &TrainArgs) -> Result<i32> {
    let corpus = Corpus::load(&args.corpus)?;
    let artifacts = match &args.artifacts {
        Some(dir) => dir.clone(),
        None => args
            .model
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    let outcome = run_curriculum(&corpus, cfg, Some(&artifacts))?;
    if let Some(parent) = args.model.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    outcome.model.save(&args.model)?;
    for report in &outcome.reports {
        println!("{}", report.to_json());
    }
    println!("model {}", args.model.display());
    Ok(0)
}

/// Coarse descriptors of one journey: every stride-th frame, embedded.
fn coarse_embed(model: &EmbedModel, features: &[Vec<f64>], stride: usize) -> Vec<Vec<f64>> {
    let strided: Vec<Vec<f64>> = features.iter().step_by(stride.max(1)).cloned().collect();
    model.embed_all(&strided)
}

fn check_model_input(model: &EmbedModel, features: &[Vec<f64>], path: &Path) -> Result<()> {
    let dim = features.first().map_or(0, |f| f.len());
    if dim != model.input_dim() {
        return Err(Error::data(format!(
            "{}: feature dim {dim} does not match the model input dim {}",
            path.display(),
            model.input_dim()
        )));
    }
    Ok(())
}

/// Short journey name for output files: the file stem, without the
/// journey_ prefix corpus files carry.
fn journey_label(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map_or_else(|| "x".to_string(), |s| s.to_string_lossy().into_owned());
    stem.strip_prefix("journey_").map_or(stem.clone(), str::to_owned)
}

fn cmd_align(cfg: &Config, args: &AlignArgs) -> Result<i32> {
    let model = EmbedModel::load(&args.model)?;
    let x = load_journey_features(&args.x)?;
    let y = load_journey_features(&args.y)?;
    check_model_input(&model, &x, &args.x)?;
    check_model_input(&model, &y, &args.y)?;
    std::fs::create_dir_all(&args.out)?;
    let lx = journey_label(&args.x);
    let ly = journey_label(&args.y);

    let dx = coarse_embed(&model, &x, cfg.stride);
    let dy = coarse_embed(&model, &y, cfg.stride);
    let raw = CostMatrix::from_descriptors(&dx, &dy, cfg.stride)?;
    let (clean, _) = raw.decorrelate(cfg.decorrelate_rank)?;
    if args.dump_matrix {
        clean.save(&args.out.join(format!("matrix_{lx}_{ly}.tscm")))?;
    }
    if args.pgm {
        clean.write_pgm(&args.out.join(format!("matrix_{lx}_{ly}.pgm")))?;
    }

    let tour = find_tour(&clean, &TourParams::from_config(cfg))?;
    let tour_path = args.out.join(format!("tour_{lx}_{ly}.csv"));
    let Some(tour) = tour else {
        MatchingTour {
            nodes: Vec::new(),
            row_len: clean.rows,
            col_len: clean.cols,
            stride: cfg.stride,
            row_journey: None,
            col_journey: None,
        }
        .write_csv(&tour_path)?;
        println!("no matching tour; wrote {}", tour_path.display());
        return Ok(1);
    };
    tour.write_csv(&tour_path)?;
    println!(
        "tour nodes {} covered_cols {}/{} gaps {}",
        tour.nodes.len(),
        tour.covered_cols(),
        tour.col_len,
        tour.gaps().len()
    );
    println!("tour_file {}", tour_path.display());

    if !args.coarse_only {
        let fx = model.embed_all(&x);
        let fy = model.embed_all(&y);
        let alignment = refine_and_smooth(&tour, &fx, &fy, &RefineParams::from_config(cfg))?;
        let align_path = args.out.join(format!("align_{lx}_{ly}.csv"));
        alignment.write_csv(&align_path)?;
        println!("alignment pairs {}", alignment.pairs.len());
        println!("alignment_file {}", align_path.display());
    }
    Ok(0)
}

fn cmd_sync(cfg: &Config, args: &SyncArgs) -> Result<i32> {
    let model = EmbedModel::load(&args.model)?;
    let corpus = Corpus::load(&args.corpus)?;
    let n = corpus.journeys.len();
    if args.reference >= n {
        return Err(Error::invalid_argument(format!(
            "reference journey {} outside the corpus (ids 0..{n})",
            args.reference
        )));
    }
    let reference = JourneyId(args.reference);
    std::fs::create_dir_all(&args.out)?;

    // Discover the class structure: plan pairs, probe them, keep accepted
    // tours as index edges, repeat until nothing new is worth probing.
    let coarse = coarse_descriptors(&corpus, &model, cfg.stride);
    let params = TourParams::from_config(cfg);
    let ids: Vec<JourneyId> = (0..n).map(JourneyId).collect();
    let mut index = CollectionIndex::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
    let budget = cfg.pair_budget_factor.max(1) * n;
    let mut probes = 0usize;
    loop {
        let plan = plan_pairs(&index, &ids, budget, &mut rng)?;
        if plan.is_empty() {
            break;
        }
        probes += plan.len();
        let tours: Vec<(JourneyId, JourneyId, Option<MatchingTour>)> = plan
            .par_iter()
            .map(|&(a, b)| -> Result<_> {
                let raw = CostMatrix::from_descriptors(&coarse[a.0], &coarse[b.0], cfg.stride)?;
                let (clean, _) = raw.decorrelate(cfg.decorrelate_rank)?;
                let tour = find_tour(&clean, &params)?.map(|mut t| {
                    t.row_journey = Some(a);
                    t.col_journey = Some(b);
                    t
                });
                Ok((a, b, tour))
            })
            .collect::<Result<Vec<_>>>()?;
        for (a, b, tour) in tours {
            index.record_probe(a, b);
            if let Some(tour) = tour {
                update_index(&mut index, a, b, &tour, cfg.index_coverage_threshold);
            }
        }
    }

    for (i, class) in index.classes().iter().enumerate() {
        let members: Vec<String> = class.iter().map(|j| j.to_string()).collect();
        println!("class {i}: {}", members.join(" "));
    }
    println!("probes {probes}");

    let class = index.class_of(reference);
    if class.len() == 1 {
        println!("journey {reference} matched no other journey; nothing to synchronize");
        return Ok(0);
    }
    let reference_desc = model.embed_all(&corpus.journeys[reference.0].features);
    let refine_params = RefineParams::from_config(cfg);
    let mut written = 0usize;
    for j in class {
        if j == reference {
            continue;
        }
        let Some(tour) =
            compose_to_reference(&index, j, reference, cfg.stitch_tolerance_cols())?
        else {
            continue;
        };
        if tour.is_empty() {
            println!("journey {j}: composed coverage vanished; skipped");
            continue;
        }
        let desc = model.embed_all(&corpus.journeys[j.0].features);
        let alignment = refine_and_smooth(&tour, &desc, &reference_desc, &refine_params)?;
        let path = args.out.join(format!("align_{j}_{reference}.csv"));
        alignment.write_csv(&path)?;
        println!("journey {j}: {}", path.display());
        written += 1;
    }
    println!("alignments {written}");
    Ok(0)
}

fn cmd_eval(cfg: &Config, args: &EvalArgs) -> Result<i32> {
    let alignment = Alignment::read_csv(&args.alignment)?;
    let truth = read_ground_truth_csv(&args.truth)?;
    let tolerance = args.tolerance.unwrap_or(cfg.eval_tolerance);
    let report = evaluate(&alignment.pairs, &truth, tolerance);
    println!("evaluated {}", report.evaluated);
    println!("coverage {:.4}", report.coverage);
    println!("hit_rate {:.4}", report.hit_rate);
    println!("mean_abs_offset {:.4}", report.mean_abs_offset);
    println!("median_abs_offset {:.4}", report.median_abs_offset);
    Ok(0)
}

fn cmd_dump_matrix(cfg: &Config, args: &DumpMatrixArgs) -> Result<i32> {
    let model = EmbedModel::load(&args.model)?;
    let x = load_journey_features(&args.x)?;
    let y = load_journey_features(&args.y)?;
    check_model_input(&model, &x, &args.x)?;
    check_model_input(&model, &y, &args.y)?;
    let dx = coarse_embed(&model, &x, cfg.stride);
    let dy = coarse_embed(&model, &y, cfg.stride);
    let raw = CostMatrix::from_descriptors(&dx, &dy, cfg.stride)?;
    let matrix = if args.decorrelate {
        raw.decorrelate(cfg.decorrelate_rank)?.0
    } else {
        raw
    };
    matrix.save(&args.out)?;
    if let Some(pgm) = &args.pgm {
        matrix.write_pgm(pgm)?;
    }
    println!(
        "matrix {}x{} stride {} decorrelated {}",
        matrix.rows, matrix.cols, matrix.stride, matrix.decorrelated
    );
    println!("matrix_file {}", args.out.display());
    Ok(0)
}
