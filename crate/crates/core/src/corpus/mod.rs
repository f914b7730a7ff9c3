//! Synthetic journey corpus.
//!
//! A route is a sequence of landmark feature vectors; a journey traverses a
//! route with its own speed profile and records one feature vector per
//! frame. Journeys of the same route therefore describe the same underlying
//! signal under different time warps, which is exactly the structure the
//! synchronization pipeline is supposed to recover. Generated journeys are
//! deliberately corrupted: a constant per-journey bias (different camera),
//! a slow sinusoidal drift (lighting over the day), iid noise, and one
//! contiguous block of pure-noise frames (obstruction) per journey.
//!
//! Because the corpus is synthetic, exact ground-truth alignments are
//! available for free and are carried alongside the frames for evaluation
//! only; nothing in the training path reads them.

mod store;

pub use store::{load_journey_features, read_ground_truth_csv};

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::Config;
use crate::error::{Error, Result};

/// Position tolerance for ground-truth pairing, in route units.
pub const GROUND_TRUTH_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JourneyId(pub usize);

impl fmt::Display for JourneyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Landmark feature vectors along one route, indexed by integer position.
#[derive(Debug, Clone)]
pub struct Route {
    pub landmarks: Vec<Vec<f64>>,
}

impl Route {
    /// Random walk through feature space. Steps have a fixed norm and the
    /// walk is softly confined to a ball so long routes stay comparable in
    /// magnitude to short ones.
    pub fn generate(length: usize, dim: usize, step_scale: f64, rng: &mut ChaCha8Rng) -> Route {
        assert!(length >= 2 && dim > 0);
        let radius = 4.0;
        let mut landmarks = Vec::with_capacity(length);
        landmarks.push(random_unit(dim, rng));
        for _ in 1..length {
            let step = scaled_random(dim, step_scale, rng);
            let mut next: Vec<f64> = landmarks
                .last()
                .unwrap()
                .iter()
                .zip(&step)
                .map(|(a, b)| a + b)
                .collect();
            let n = norm(&next);
            if n > radius {
                for v in &mut next {
                    *v *= radius / n;
                }
            }
            landmarks.push(next);
        }
        Route { landmarks }
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Linear interpolation between the two landmarks bracketing `pos`.
    pub fn feature_at(&self, pos: f64) -> Vec<f64> {
        let max = (self.landmarks.len() - 1) as f64;
        let pos = pos.clamp(0.0, max);
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        if lo == hi {
            return self.landmarks[lo].clone();
        }
        let f = pos - lo as f64;
        self.landmarks[lo]
            .iter()
            .zip(&self.landmarks[hi])
            .map(|(a, b)| a * (1.0 - f) + b * f)
            .collect()
    }
}

/// One constant-speed stretch of a journey.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedSegment {
    pub frames: usize,
    /// Route positions advanced per frame. Must be non-negative; zero means
    /// the vehicle stands still.
    pub speed: f64,
}

/// Piecewise-constant traversal of a route.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    pub start: f64,
    pub segments: Vec<SpeedSegment>,
}

impl SpeedProfile {
    pub fn total_frames(&self) -> usize {
        self.segments.iter().map(|s| s.frames).sum()
    }

    /// Per-frame route positions. Errors if any position leaves
    /// `[0, route_len - 1]` or a segment moves backwards.
    pub fn positions(&self, route_len: usize) -> Result<Vec<f64>> {
        let max = (route_len - 1) as f64;
        if !(0.0..=max).contains(&self.start) {
            return Err(Error::invalid_argument(format!(
                "profile starts at {} outside [0, {max}]",
                self.start
            )));
        }
        let mut out = Vec::with_capacity(self.total_frames());
        let mut pos = self.start;
        for seg in &self.segments {
            if seg.speed < 0.0 {
                return Err(Error::invalid_argument("segment speed must be >= 0"));
            }
            for _ in 0..seg.frames {
                out.push(pos);
                pos += seg.speed;
            }
        }
        if let Some(&last) = out.last() {
            if last > max + 1e-9 {
                return Err(Error::invalid_argument(format!(
                    "profile runs off the route: final position {last:.2} > {max}"
                )));
            }
        }
        Ok(out)
    }

    /// Random profile guaranteed to stay on the route: total travel is a
    /// random fraction of the remaining route, split into segments whose
    /// speeds are rescaled to hit that total exactly. With probability
    /// `standstill_prob` one short stand-still is inserted. Stand-stills
    /// are capped well below the hard-negative mining margin so a frame
    /// far from a path node is never the same place seen while parked.
    pub fn random(
        route_len: usize,
        frames: usize,
        standstill_prob: f64,
        rng: &mut ChaCha8Rng,
    ) -> SpeedProfile {
        let max = (route_len - 1) as f64;
        let start = rng.random_range(0.0..0.15 * max);
        let travel = rng.random_range(0.6..0.95) * (max - start);

        let mut segments = Vec::new();
        let mut left = frames;
        while left > 0 {
            let len = rng.random_range(300..=900).min(left);
            segments.push(SpeedSegment {
                frames: len,
                speed: rng.random_range(0.5..1.5),
            });
            left -= len;
        }
        if rng.random_bool(standstill_prob) && segments.len() > 1 {
            let idx = rng.random_range(0..segments.len());
            let pause = rng.random_range(90..=150).min(segments[idx].frames);
            let rest = segments[idx].frames - pause;
            segments[idx].frames = pause;
            let speed = segments[idx].speed;
            segments[idx].speed = 0.0;
            if rest > 0 {
                segments.insert(idx + 1, SpeedSegment { frames: rest, speed });
            }
        }
        let weighted: f64 = segments.iter().map(|s| s.frames as f64 * s.speed).sum();
        if weighted > 0.0 {
            let scale = travel / weighted;
            for s in &mut segments {
                s.speed *= scale;
            }
        }
        SpeedProfile { start, segments }
    }
}

/// One recording of a route traversal.
#[derive(Debug, Clone)]
pub struct Journey {
    pub id: JourneyId,
    pub route: usize,
    /// Per-frame feature vectors, frames x dim.
    pub features: Vec<Vec<f64>>,
    /// Per-frame route positions. Empty after loading from disk; alignments
    /// derived from positions are persisted separately.
    pub positions: Vec<f64>,
    /// True where the frame is pure noise. Empty after loading from disk.
    pub noise_mask: Vec<bool>,
}

impl Journey {
    pub fn frames(&self) -> usize {
        self.features.len()
    }

    /// Records a traversal: interpolated landmark features plus a constant
    /// bias, a sinusoidal drift, iid noise, and one pure-noise block.
    pub fn generate(
        id: JourneyId,
        route_index: usize,
        route: &Route,
        profile: &SpeedProfile,
        cfg: &Config,
        rng: &mut ChaCha8Rng,
    ) -> Result<Journey> {
        let positions = profile.positions(route.len())?;
        let n = positions.len();
        let dim = route.landmarks[0].len();

        let bias = scaled_random(dim, cfg.bias_scale * rng.random_range(0.5..1.0), rng);
        let season_dir = random_unit(dim, rng);
        let season_amp = cfg.seasonal_scale * rng.random_range(0.5..1.0);
        let season_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma >= 0");

        let block_len = (cfg.noise_fraction * n as f64).round() as usize;
        let block_start = if block_len == 0 || block_len >= n {
            n
        } else {
            rng.random_range(0..=n - block_len)
        };
        let block = block_start..block_start + block_len.min(n);

        let mut features = Vec::with_capacity(n);
        let mut noise_mask = vec![false; n];
        for (t, &pos) in positions.iter().enumerate() {
            if block.contains(&t) {
                noise_mask[t] = true;
                features.push(scaled_random(dim, 1.5, rng));
                continue;
            }
            let season = season_amp * (std::f64::consts::TAU * t as f64 / cfg.seasonal_period
                + season_phase)
                .sin();
            let mut f = route.feature_at(pos);
            for (k, v) in f.iter_mut().enumerate() {
                *v += bias[k] + season * season_dir[k] + noise.sample(rng);
            }
            features.push(f);
        }
        Ok(Journey {
            id,
            route: route_index,
            features,
            positions,
            noise_mask,
        })
    }
}

/// A set of journeys over a set of routes, with ground-truth alignments for
/// every same-route pair.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub feature_dim: usize,
    pub fps: usize,
    pub route_count: usize,
    pub journeys: Vec<Journey>,
    /// Canonical pairs (a < b) only; `ground_truth` handles orientation.
    gt: BTreeMap<(usize, usize), Vec<(usize, usize)>>,
}

impl Corpus {
    pub fn generate(cfg: &Config) -> Result<Corpus> {
        cfg.validate()?;
        if cfg.routes == 0 || cfg.journeys_per_route == 0 {
            return Err(Error::invalid_argument(
                "need at least one route and one journey per route",
            ));
        }
        let mut master = ChaCha8Rng::seed_from_u64(cfg.corpus_seed);
        let mut journeys = Vec::new();
        for r in 0..cfg.routes {
            let mut route_rng = ChaCha8Rng::seed_from_u64(master.random());
            let route = Route::generate(
                cfg.route_length,
                cfg.feature_dim,
                cfg.route_step_scale,
                &mut route_rng,
            );
            for _ in 0..cfg.journeys_per_route {
                let id = JourneyId(journeys.len());
                let mut jrng = ChaCha8Rng::seed_from_u64(master.random());
                let profile = SpeedProfile::random(
                    cfg.route_length,
                    cfg.journey_frames,
                    cfg.standstill_prob,
                    &mut jrng,
                );
                journeys.push(Journey::generate(id, r, &route, &profile, cfg, &mut jrng)?);
            }
        }
        let mut corpus = Corpus {
            feature_dim: cfg.feature_dim,
            fps: cfg.fps,
            route_count: cfg.routes,
            journeys,
            gt: BTreeMap::new(),
        };
        corpus.rebuild_ground_truth();
        Ok(corpus)
    }

    fn rebuild_ground_truth(&mut self) {
        self.gt.clear();
        for a in 0..self.journeys.len() {
            for b in a + 1..self.journeys.len() {
                if self.journeys[a].route != self.journeys[b].route {
                    continue;
                }
                if let Some(pairs) = ground_truth_alignment(
                    &self.journeys[a].positions,
                    &self.journeys[b].positions,
                    GROUND_TRUTH_TOLERANCE,
                ) {
                    self.gt.insert((a, b), pairs);
                }
            }
        }
    }

    pub fn journey(&self, id: JourneyId) -> Result<&Journey> {
        self.journeys
            .get(id.0)
            .ok_or_else(|| Error::invalid_argument(format!("no journey {id}")))
    }

    /// Ground-truth frame pairs `(frame_a, frame_b)`. `None` when the
    /// journeys follow different routes or never visit the same positions.
    pub fn ground_truth(&self, a: JourneyId, b: JourneyId) -> Option<Vec<(usize, usize)>> {
        if a.0 <= b.0 {
            self.gt.get(&(a.0, b.0)).cloned()
        } else {
            self.gt
                .get(&(b.0, a.0))
                .map(|p| p.iter().map(|&(x, y)| (y, x)).collect())
        }
    }

    /// Same-route pairs with stored ground truth, in canonical order.
    pub fn ground_truth_pairs(&self) -> Vec<(JourneyId, JourneyId)> {
        self.gt
            .keys()
            .map(|&(a, b)| (JourneyId(a), JourneyId(b)))
            .collect()
    }
}

/// Pairs each frame of `a` with the nearest-position frame of `b`, keeping
/// only pairs closer than `tolerance`. Ties take the lower index of `b`, so
/// stand-still plateaus map to their first frame. Positions must be
/// non-decreasing, which makes the result monotone in both coordinates.
pub fn ground_truth_alignment(
    pos_a: &[f64],
    pos_b: &[f64],
    tolerance: f64,
) -> Option<Vec<(usize, usize)>> {
    if pos_a.is_empty() || pos_b.is_empty() {
        return None;
    }
    let mut pairs = Vec::new();
    for (i, &p) in pos_a.iter().enumerate() {
        // First frame at or past p; equal positions cannot straddle the
        // split, so this is already its plateau's first frame.
        let hi = pos_b.partition_point(|&v| v < p);
        let mut best: Option<(f64, usize)> = None;
        if hi < pos_b.len() {
            best = Some((pos_b[hi] - p, hi));
        }
        if hi > 0 {
            let d = p - pos_b[hi - 1];
            // Distance ties go to the earlier frame.
            if best.is_none_or(|(bd, _)| d <= bd) {
                let mut s = hi - 1;
                while s > 0 && pos_b[s - 1] == pos_b[hi - 1] {
                    s -= 1;
                }
                best = Some((d, s));
            }
        }
        if let Some((d, j)) = best {
            if d <= tolerance {
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        None
    } else {
        Some(pairs)
    }
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    scaled_random(dim, 1.0, rng)
}

fn scaled_random(dim: usize, target_norm: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.iter().map(|x| x * target_norm / n).collect();
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
