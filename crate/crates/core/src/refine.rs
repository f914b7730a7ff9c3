//! Coarse-to-fine refinement and temporal smoothing.
//!
//! A matching tour lives on the coarse (strided) grid. Refinement upgrades
//! it to full frame rate: within each tour segment, consecutive runs of
//! coarse nodes become chunks, and the cheapest monotone path is searched
//! through the raw fine-distance rectangle spanned by each chunk's corner
//! nodes. Chunks share their corner node, so the refined path is exact at
//! the coarse nodes and free in between. Gap columns are never bridged.
//!
//! The refined pairs are then smoothed per axis by a constant-velocity
//! Kalman filter with full forward-backward (RTS) smoothing, and finally
//! clamped to be monotone, since a smoothed alignment must never move
//! backwards in time.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::Config;
use crate::costmat::CostMatrix;
use crate::error::{Error, Result};
use crate::tourfinder::{dijkstra_grid, MatchingTour};

#[derive(Debug, Clone, PartialEq)]
pub struct RefineParams {
    /// Coarse nodes per refinement chunk.
    pub chunk_size: usize,
    /// Process-noise intensity of the constant-velocity model.
    pub kalman_q: f64,
    /// Measurement variance.
    pub kalman_r: f64,
}

impl RefineParams {
    pub fn from_config(cfg: &Config) -> RefineParams {
        RefineParams {
            chunk_size: cfg.chunk_size,
            kalman_q: cfg.kalman_q,
            kalman_r: cfg.kalman_r,
        }
    }
}

/// Frame-accurate alignment: raw refined pairs plus their smoothed
/// counterparts, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub pairs: Vec<(usize, usize)>,
    pub smoothed: Vec<(f64, f64)>,
}

impl Alignment {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("t,frame_x,frame_y,smooth_x,smooth_y\n");
        for (t, (&(x, y), &(sx, sy))) in self.pairs.iter().zip(&self.smoothed).enumerate() {
            let _ = writeln!(out, "{t},{x},{y},{sx:.3},{sy:.3}");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Alignment> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        let mut pairs = Vec::new();
        let mut smoothed = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                if line.trim() != "t,frame_x,frame_y,smooth_x,smooth_y" {
                    return Err(Error::data(format!(
                        "{}: expected alignment header, found {line:?}",
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
            if fields.len() != 5 {
                return Err(Error::data(format!(
                    "{}:{}: expected 5 fields",
                    path.display(),
                    lineno + 1
                )));
            }
            let bad = |what: &str| {
                Error::data(format!("{}:{}: bad {what}", path.display(), lineno + 1))
            };
            pairs.push((
                fields[1].trim().parse().map_err(|_| bad("frame_x"))?,
                fields[2].trim().parse().map_err(|_| bad("frame_y"))?,
            ));
            smoothed.push((
                fields[3].trim().parse().map_err(|_| bad("smooth_x"))?,
                fields[4].trim().parse().map_err(|_| bad("smooth_y"))?,
            ));
        }
        Ok(Alignment { pairs, smoothed })
    }
}

/// Upgrades a coarse tour to frame-accurate pairs using full-rate
/// descriptors of both journeys. Distances are computed on the raw
/// descriptors; decorrelation only ever steers the coarse search.
pub fn refine_tour(
    tour: &MatchingTour,
    x_desc: &[Vec<f64>],
    y_desc: &[Vec<f64>],
    chunk_size: usize,
) -> Result<Vec<(usize, usize)>> {
    if chunk_size < 2 {
        return Err(Error::invalid_argument("chunk size must be at least 2"));
    }
    let stride = tour.stride.max(1);
    if let Some(last) = tour.nodes.last() {
        if last.row * stride >= x_desc.len() || last.col * stride >= y_desc.len() {
            return Err(Error::invalid_argument(
                "tour extends past the descriptor sequences",
            ));
        }
    }
    let segments = tour.segments();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0usize;
    while i < tour.nodes.len() {
        // One segment: nodes[i..seg_end).
        let seg = segments[i];
        let mut seg_end = i + 1;
        while seg_end < tour.nodes.len() && segments[seg_end] == seg {
            seg_end += 1;
        }
        let nodes = &tour.nodes[i..seg_end];
        let mut start = 0usize;
        let mut first_chunk = true;
        loop {
            let end = (start + chunk_size - 1).min(nodes.len() - 1);
            let a = nodes[start];
            let b = nodes[end];
            let rect_rows = (a.row * stride, b.row * stride);
            let rect_cols = (a.col * stride, b.col * stride);
            let sub = CostMatrix::from_descriptors(
                &x_desc[rect_rows.0..=rect_rows.1],
                &y_desc[rect_cols.0..=rect_cols.1],
                1,
            )?;
            let (_, path) = dijkstra_grid(&sub, (0, 0), (sub.rows - 1, sub.cols - 1))?;
            for (k, node) in path.iter().enumerate() {
                if !first_chunk && k == 0 {
                    continue; // corner shared with the previous chunk
                }
                pairs.push((rect_rows.0 + node.row, rect_cols.0 + node.col));
            }
            if end == nodes.len() - 1 {
                break;
            }
            start = end;
            first_chunk = false;
        }
        i = seg_end;
    }
    for w in pairs.windows(2) {
        if w[1].0 < w[0].0 || w[1].1 < w[0].1 {
            return Err(Error::data("refined pairs lost monotonicity"));
        }
    }
    Ok(pairs)
}

/// Constant-velocity Kalman smoothing of both frame axes, followed by a
/// cumulative-max clamp so the result never steps backwards. Returns one
/// smoothed `(x, y)` per input pair.
pub fn smooth_alignment(pairs: &[(usize, usize)], q: f64, r: f64) -> Vec<(f64, f64)> {
    let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
    let sx = clamp_monotone(rts_smooth(&xs, q, r));
    let sy = clamp_monotone(rts_smooth(&ys, q, r));
    sx.into_iter().zip(sy).collect()
}

/// Convenience: refine, then smooth.
pub fn refine_and_smooth(
    tour: &MatchingTour,
    x_desc: &[Vec<f64>],
    y_desc: &[Vec<f64>],
    params: &RefineParams,
) -> Result<Alignment> {
    let pairs = refine_tour(tour, x_desc, y_desc, params.chunk_size)?;
    let smoothed = smooth_alignment(&pairs, params.kalman_q, params.kalman_r);
    Ok(Alignment { pairs, smoothed })
}

type Vec2 = [f64; 2];
type Mat2 = [[f64; 2]; 2];

const F: Mat2 = [[1.0, 1.0], [0.0, 1.0]];

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mat_t(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn mat_add(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

fn mat_vec(a: &Mat2, v: &Vec2) -> Vec2 {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

fn mat_inv(a: &Mat2) -> Mat2 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ]
}

/// Forward filter plus backward (Rauch-Tung-Striebel) pass over a scalar
/// measurement sequence. Returns the smoothed positions.
fn rts_smooth(z: &[f64], q: f64, r: f64) -> Vec<f64> {
    let n = z.len();
    if n <= 1 {
        return z.to_vec();
    }
    // Discretized white-noise-acceleration process covariance.
    let qd: Mat2 = [[q / 3.0, q / 2.0], [q / 2.0, q]];

    let mut x_pred: Vec<Vec2> = vec![[0.0; 2]; n];
    let mut p_pred: Vec<Mat2> = vec![[[0.0; 2]; 2]; n];
    let mut x_filt: Vec<Vec2> = vec![[0.0; 2]; n];
    let mut p_filt: Vec<Mat2> = vec![[[0.0; 2]; 2]; n];

    // The prior doubles as the prediction for the first step.
    x_pred[0] = [z[0], z[1] - z[0]];
    p_pred[0] = [[r, 0.0], [0.0, 1.0]];
    for t in 0..n {
        if t > 0 {
            x_pred[t] = mat_vec(&F, &x_filt[t - 1]);
            p_pred[t] = mat_add(&mat_mul(&mat_mul(&F, &p_filt[t - 1]), &mat_t(&F)), &qd);
        }
        let s = p_pred[t][0][0] + r;
        let k = [p_pred[t][0][0] / s, p_pred[t][1][0] / s];
        let innov = z[t] - x_pred[t][0];
        x_filt[t] = [x_pred[t][0] + k[0] * innov, x_pred[t][1] + k[1] * innov];
        let ikh: Mat2 = [[1.0 - k[0], 0.0], [-k[1], 1.0]];
        p_filt[t] = mat_mul(&ikh, &p_pred[t]);
    }

    let mut x_smooth = x_filt.clone();
    for t in (0..n - 1).rev() {
        let c = mat_mul(
            &mat_mul(&p_filt[t], &mat_t(&F)),
            &mat_inv(&p_pred[t + 1]),
        );
        let dx = [
            x_smooth[t + 1][0] - x_pred[t + 1][0],
            x_smooth[t + 1][1] - x_pred[t + 1][1],
        ];
        let corr = mat_vec(&c, &dx);
        x_smooth[t] = [x_filt[t][0] + corr[0], x_filt[t][1] + corr[1]];
    }
    x_smooth.iter().map(|x| x[0]).collect()
}

fn clamp_monotone(mut v: Vec<f64>) -> Vec<f64> {
    for i in 1..v.len() {
        if v[i] < v[i - 1] {
            v[i] = v[i - 1];
        }
    }
    v
}
