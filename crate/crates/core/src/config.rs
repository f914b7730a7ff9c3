//! Pipeline configuration.
//!
//! All tunables live in one flat struct so an experiment is fully described
//! by a diff-able key-value file. Time-denominated constants (stripe width,
//! stitch tolerance) are stored in seconds and converted to coarse-frame
//! units through `fps` and `stride` on demand, so small corpora can shrink
//! their "seconds" without touching the algorithm defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    // Embedding.
    /// Output descriptor dimension d.
    pub descriptor_dim: usize,
    /// Triplet-loss margin m.
    pub margin: f64,
    /// Coarse sampling stride s (every s-th frame is embedded for matching).
    pub stride: usize,
    /// Frames per second of the (synthetic) videos.
    pub fps: usize,

    // Tour finding.
    /// Width of one column stripe, in video seconds.
    pub stripe_seconds: f64,
    /// Overlap between consecutive stripes, in video seconds.
    pub overlap_seconds: f64,
    /// Stitching tolerance between neighboring stripes, in video seconds.
    pub stitch_tolerance_seconds: f64,
    /// Rank removed by cost-matrix decorrelation.
    pub decorrelate_rank: usize,
    /// Plausibility ratio: alternatives must cost more than ratio * c(p).
    pub plausibility_ratio: f64,
    /// Plausibility neighborhood offset, in coarse frames.
    pub plausibility_eps: usize,
    /// Minimum fraction of plausible nodes for a stripe to be accepted.
    pub min_plausible_fraction: f64,

    // Curriculum.
    /// Positive window for intra-video sampling, in frames.
    pub intra_window: usize,
    /// Minimum anchor-negative distance for intra-video sampling, in frames.
    pub negative_gap: usize,
    /// Hard-negative margin for inter-video sampling, in coarse frames.
    pub off_path_margin: usize,
    /// Number of curriculum iterations beyond iteration 0.
    pub iterations: usize,
    /// Intra-video labels sampled per journey in iteration 0.
    pub intra_labels_per_journey: usize,
    /// Cap on labels harvested per tour.
    pub labels_per_tour: usize,
    /// Column-coverage threshold for indexing a tour as a match edge.
    pub index_coverage_threshold: f64,
    /// Pair-probe budget per iteration, as a multiple of the journey count.
    pub pair_budget_factor: usize,
    /// Cap on composed tours sampled for transitive labels per iteration.
    pub max_transitive_pairs: usize,

    // Training.
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate at each curriculum
    /// iteration, so later waves fine-tune instead of overwrite.
    pub learning_rate_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,

    // Refinement.
    /// Chunk length for coarse-to-fine refinement, in coarse nodes.
    pub chunk_size: usize,
    /// Kalman process-noise intensity.
    pub kalman_q: f64,
    /// Kalman measurement variance.
    pub kalman_r: f64,

    // Evaluation.
    /// Hit tolerance for evaluation, in frames.
    pub eval_tolerance: usize,

    // Synthetic corpus generation.
    pub routes: usize,
    pub journeys_per_route: usize,
    pub route_length: usize,
    pub feature_dim: usize,
    pub journey_frames: usize,
    /// Landmark random-walk step norm.
    pub route_step_scale: f64,
    /// Per-frame additive noise sigma (per coordinate).
    pub noise_sigma: f64,
    /// Norm of the per-journey global bias vector.
    pub bias_scale: f64,
    /// Amplitude of the seasonal sinusoidal drift.
    pub seasonal_scale: f64,
    /// Period of the seasonal drift, in frames.
    pub seasonal_period: f64,
    /// Fraction of each journey replaced by pure-noise frames.
    pub noise_fraction: f64,
    /// Probability that a random speed profile contains a stand-still plateau.
    pub standstill_prob: f64,

    // Seeds.
    pub corpus_seed: u64,
    pub train_seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            descriptor_dim: 64,
            margin: 0.5,
            stride: 10,
            fps: 30,
            stripe_seconds: 90.0,
            overlap_seconds: 15.0,
            stitch_tolerance_seconds: 2.0,
            decorrelate_rank: 5,
            plausibility_ratio: 6.0 / 5.0,
            plausibility_eps: 3,
            min_plausible_fraction: 0.35,
            intra_window: 15,
            negative_gap: 150,
            off_path_margin: 18,
            iterations: 3,
            intra_labels_per_journey: 80,
            labels_per_tour: 120,
            index_coverage_threshold: 0.5,
            pair_budget_factor: 3,
            max_transitive_pairs: 24,
            learning_rate: 0.05,
            learning_rate_decay: 0.3,
            batch_size: 32,
            epochs: 30,
            chunk_size: 30,
            kalman_q: 1e-3,
            kalman_r: 1.0,
            eval_tolerance: 4,
            routes: 2,
            journeys_per_route: 6,
            route_length: 600,
            feature_dim: 32,
            journey_frames: 3000,
            route_step_scale: 0.45,
            noise_sigma: 0.03,
            bias_scale: 0.4,
            seasonal_scale: 0.4,
            seasonal_period: 1200.0,
            noise_fraction: 0.10,
            standstill_prob: 0.5,
            corpus_seed: 7,
            train_seed: 11,
        }
    }
}

impl Config {
    /// Stripe width in coarse frames.
    pub fn stripe_cols(&self) -> usize {
        seconds_to_coarse(self.stripe_seconds, self.fps, self.stride).max(2)
    }

    /// Stripe overlap in coarse frames.
    pub fn overlap_cols(&self) -> usize {
        let c = seconds_to_coarse(self.overlap_seconds, self.fps, self.stride).max(1);
        c.min(self.stripe_cols() - 1)
    }

    /// Stitching tolerance in coarse frames.
    pub fn stitch_tolerance_cols(&self) -> usize {
        seconds_to_coarse(self.stitch_tolerance_seconds, self.fps, self.stride).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.descriptor_dim == 0 || self.feature_dim == 0 {
            return Err(Error::invalid_argument("dimensions must be positive"));
        }
        if self.margin <= 0.0 {
            return Err(Error::invalid_argument("margin must be > 0"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid_argument("learning rate must be > 0"));
        }
        if self.learning_rate_decay <= 0.0 || self.learning_rate_decay > 1.0 {
            return Err(Error::invalid_argument(
                "learning rate decay must be in (0,1]",
            ));
        }
        if self.stride == 0 || self.fps == 0 {
            return Err(Error::invalid_argument("stride and fps must be positive"));
        }
        if self.plausibility_ratio <= 1.0 {
            return Err(Error::invalid_argument("plausibility ratio must be > 1"));
        }
        if self.intra_window >= self.negative_gap {
            return Err(Error::invalid_argument(
                "intra window must be smaller than the negative gap",
            ));
        }
        if self.stripe_cols() <= self.overlap_cols() {
            return Err(Error::invalid_argument(
                "stripe width must exceed the overlap",
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return Err(Error::invalid_argument("noise fraction must be in [0,1]"));
        }
        Ok(())
    }

    /// Parses a flat `key = value` file. Lines starting with `#` and blank
    /// lines are ignored. Unknown keys are rejected so typos surface early.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Config::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::data(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a single `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! parse {
            ($field:ident) => {{
                self.$field = value
                    .parse()
                    .map_err(|_| Error::data(format!("bad value for {key}: {value}")))?;
            }};
        }
        match key {
            "descriptor_dim" => parse!(descriptor_dim),
            "margin" => parse!(margin),
            "stride" => parse!(stride),
            "fps" => parse!(fps),
            "stripe_seconds" => parse!(stripe_seconds),
            "overlap_seconds" => parse!(overlap_seconds),
            "stitch_tolerance_seconds" => parse!(stitch_tolerance_seconds),
            "decorrelate_rank" => parse!(decorrelate_rank),
            "plausibility_ratio" => parse!(plausibility_ratio),
            "plausibility_eps" => parse!(plausibility_eps),
            "min_plausible_fraction" => parse!(min_plausible_fraction),
            "intra_window" => parse!(intra_window),
            "negative_gap" => parse!(negative_gap),
            "off_path_margin" => parse!(off_path_margin),
            "iterations" => parse!(iterations),
            "intra_labels_per_journey" => parse!(intra_labels_per_journey),
            "labels_per_tour" => parse!(labels_per_tour),
            "index_coverage_threshold" => parse!(index_coverage_threshold),
            "pair_budget_factor" => parse!(pair_budget_factor),
            "max_transitive_pairs" => parse!(max_transitive_pairs),
            "learning_rate" => parse!(learning_rate),
            "learning_rate_decay" => parse!(learning_rate_decay),
            "batch_size" => parse!(batch_size),
            "epochs" => parse!(epochs),
            "chunk_size" => parse!(chunk_size),
            "kalman_q" => parse!(kalman_q),
            "kalman_r" => parse!(kalman_r),
            "eval_tolerance" => parse!(eval_tolerance),
            "routes" => parse!(routes),
            "journeys_per_route" => parse!(journeys_per_route),
            "route_length" => parse!(route_length),
            "feature_dim" => parse!(feature_dim),
            "journey_frames" => parse!(journey_frames),
            "route_step_scale" => parse!(route_step_scale),
            "noise_sigma" => parse!(noise_sigma),
            "bias_scale" => parse!(bias_scale),
            "seasonal_scale" => parse!(seasonal_scale),
            "seasonal_period" => parse!(seasonal_period),
            "noise_fraction" => parse!(noise_fraction),
            "standstill_prob" => parse!(standstill_prob),
            "corpus_seed" => parse!(corpus_seed),
            "train_seed" => parse!(train_seed),
            _ => return Err(Error::data(format!("unknown config key: {key}"))),
        }
        Ok(())
    }

    /// Renders the full configuration as a `key = value` file body.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = BTreeMap::new();
        kv.insert("descriptor_dim", self.descriptor_dim.to_string());
        kv.insert("margin", self.margin.to_string());
        kv.insert("stride", self.stride.to_string());
        kv.insert("fps", self.fps.to_string());
        kv.insert("stripe_seconds", self.stripe_seconds.to_string());
        kv.insert("overlap_seconds", self.overlap_seconds.to_string());
        kv.insert(
            "stitch_tolerance_seconds",
            self.stitch_tolerance_seconds.to_string(),
        );
        kv.insert("decorrelate_rank", self.decorrelate_rank.to_string());
        kv.insert("plausibility_ratio", self.plausibility_ratio.to_string());
        kv.insert("plausibility_eps", self.plausibility_eps.to_string());
        kv.insert(
            "min_plausible_fraction",
            self.min_plausible_fraction.to_string(),
        );
        kv.insert("intra_window", self.intra_window.to_string());
        kv.insert("negative_gap", self.negative_gap.to_string());
        kv.insert("off_path_margin", self.off_path_margin.to_string());
        kv.insert("iterations", self.iterations.to_string());
        kv.insert(
            "intra_labels_per_journey",
            self.intra_labels_per_journey.to_string(),
        );
        kv.insert("labels_per_tour", self.labels_per_tour.to_string());
        kv.insert(
            "index_coverage_threshold",
            self.index_coverage_threshold.to_string(),
        );
        kv.insert("pair_budget_factor", self.pair_budget_factor.to_string());
        kv.insert("max_transitive_pairs", self.max_transitive_pairs.to_string());
        kv.insert("learning_rate", self.learning_rate.to_string());
        kv.insert(
            "learning_rate_decay",
            self.learning_rate_decay.to_string(),
        );
        kv.insert("batch_size", self.batch_size.to_string());
        kv.insert("epochs", self.epochs.to_string());
        kv.insert("chunk_size", self.chunk_size.to_string());
        kv.insert("kalman_q", self.kalman_q.to_string());
        kv.insert("kalman_r", self.kalman_r.to_string());
        kv.insert("eval_tolerance", self.eval_tolerance.to_string());
        kv.insert("routes", self.routes.to_string());
        kv.insert("journeys_per_route", self.journeys_per_route.to_string());
        kv.insert("route_length", self.route_length.to_string());
        kv.insert("feature_dim", self.feature_dim.to_string());
        kv.insert("journey_frames", self.journey_frames.to_string());
        kv.insert("route_step_scale", self.route_step_scale.to_string());
        kv.insert("noise_sigma", self.noise_sigma.to_string());
        kv.insert("bias_scale", self.bias_scale.to_string());
        kv.insert("seasonal_scale", self.seasonal_scale.to_string());
        kv.insert("seasonal_period", self.seasonal_period.to_string());
        kv.insert("noise_fraction", self.noise_fraction.to_string());
        kv.insert("standstill_prob", self.standstill_prob.to_string());
        kv.insert("corpus_seed", self.corpus_seed.to_string());
        kv.insert("train_seed", self.train_seed.to_string());
        for (k, v) in kv {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn seconds_to_coarse(seconds: f64, fps: usize, stride: usize) -> usize {
    ((seconds * fps as f64) / stride as f64).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_constants_convert() {
        let cfg = Config::default();
        // 90 s at 30 fps, stride 10 -> 270 coarse columns.
        assert_eq!(cfg.stripe_cols(), 270);
        // 2 s -> 6 coarse frames.
        assert_eq!(cfg.stitch_tolerance_cols(), 6);
    }

    #[test]
    fn roundtrip_through_key_values() {
        let cfg = Config::default();
        let text = cfg.to_key_values();
        let mut parsed = Config::default();
        for line in text.lines() {
            let (k, v) = line.split_once('=').unwrap();
            parsed.set(k.trim(), v.trim()).unwrap();
        }
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = Config::default();
        assert!(cfg.set("no_such_key", "1").is_err());
    }

    #[test]
    fn invalid_window_gap_rejected() {
        let mut cfg = Config::default();
        cfg.intra_window = 200;
        assert!(cfg.validate().is_err());
    }
}
