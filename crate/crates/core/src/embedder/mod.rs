//! Metric embedding of frame features.
//!
//! A small fully connected network maps a raw feature vector onto the unit
//! hypersphere; similarity between frames is then plain Euclidean distance
//! between descriptors. The network is trained with a hinge triplet loss on
//! squared distances: an anchor must sit closer to its positive than to its
//! negative by the margin. Training is deliberately minimal (mini-batch
//! gradient descent, fixed learning rate) so every gradient can be checked
//! against finite differences.
//!
//! All arithmetic is f64; descriptors and weights are narrowed to f32 only
//! at the storage boundary.

mod checkpoint;

pub use checkpoint::{load_descriptors, save_descriptors};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Negative-side slope of the leaky rectifier.
const LEAK: f64 = 0.01;
/// Norm below which the pre-normalization output counts as zero.
const ZERO_NORM: f64 = 1e-12;
/// Perturbation applied to the first coordinate of a zero output so that
/// normalization stays defined.
const ZERO_NUDGE: f64 = 1e-8;

/// One fully connected layer, weights row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Layer {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let weights = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Layer {
            rows,
            cols,
            weights,
            bias: vec![0.0; rows],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = self.bias.clone();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            out[r] += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }
}

/// Feature-to-descriptor network. Every layer but the last is followed by a
/// leaky rectifier; the final output is L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedModel {
    pub layers: Vec<Layer>,
}

impl EmbedModel {
    /// Two-layer network `input -> 2 * descriptor -> descriptor`.
    pub fn new(input_dim: usize, descriptor_dim: usize, rng: &mut ChaCha8Rng) -> EmbedModel {
        assert!(input_dim > 0 && descriptor_dim > 0);
        let hidden = 2 * descriptor_dim;
        EmbedModel {
            layers: vec![
                Layer::glorot(hidden, input_dim, rng),
                Layer::glorot(descriptor_dim, hidden, rng),
            ],
        }
    }

    /// Single identity layer: descriptors are the normalized raw features.
    /// Useful as a training-free baseline.
    pub fn identity(dim: usize) -> EmbedModel {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        EmbedModel {
            layers: vec![Layer {
                rows: dim,
                cols: dim,
                weights,
                bias: vec![0.0; dim],
            }],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols)
    }

    pub fn descriptor_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    /// Maps one feature vector to a unit-norm descriptor.
    pub fn embed(&self, features: &[f64]) -> Vec<f64> {
        self.forward(features).descriptor
    }

    /// Embeds a batch in parallel, preserving input order.
    pub fn embed_all(&self, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
        frames.par_iter().map(|f| self.embed(f)).collect()
    }

    fn forward(&self, features: &[f64]) -> Forward {
        assert_eq!(
            features.len(),
            self.input_dim(),
            "feature dim does not match the model input"
        );
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = features.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&act);
            act = if i + 1 < self.layers.len() {
                z.iter()
                    .map(|&v| if v >= 0.0 { v } else { LEAK * v })
                    .collect()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        let mut z = act;
        let mut n = norm(&z);
        if n < ZERO_NORM {
            z[0] += ZERO_NUDGE;
            n = norm(&z);
            *pre.last_mut().unwrap() = z.clone();
        }
        let descriptor = z.iter().map(|v| v / n).collect();
        Forward {
            pre,
            norm: n,
            descriptor,
        }
    }
}

struct Forward {
    /// Pre-activation output of every layer (post-nudge for the last).
    pre: Vec<Vec<f64>>,
    /// Norm of the final pre-normalization output.
    norm: f64,
    descriptor: Vec<f64>,
}

/// Euclidean distance between two descriptors.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Hinge loss on squared descriptor distances.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    let dp = distance(anchor, positive);
    let dn = distance(anchor, negative);
    (margin + dp * dp - dn * dn).max(0.0)
}

/// Flat gradient buffer with the same shape as a model, one entry per
/// layer, laid out like the layer's own weight and bias vectors.
#[derive(Clone)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradient {
    fn zeros(model: &EmbedModel) -> Gradient {
        Gradient {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn add(&mut self, other: &Gradient) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for a in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            for x in a.iter_mut() {
                *x *= s;
            }
        }
    }
}

/// Loss and parameter gradient of one triplet. The hinge is treated as
/// inactive at exactly zero, so a saturated triplet contributes nothing.
/// Exposed so custom optimizers and gradient checks can drive the same
/// backward pass the trainer uses.
pub fn triplet_gradient(
    model: &EmbedModel,
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> (f64, Gradient) {
    let fa = model.forward(anchor);
    let fp = model.forward(positive);
    let fn_ = model.forward(negative);
    let (ya, yp, yn) = (&fa.descriptor, &fp.descriptor, &fn_.descriptor);
    let dp = distance(ya, yp);
    let dn = distance(ya, yn);
    let loss = margin + dp * dp - dn * dn;
    let mut grad = Gradient::zeros(model);
    if loss <= 0.0 {
        return (0.0, grad);
    }
    // d loss / d descriptor for each leg of the triplet.
    let ga: Vec<f64> = yn.iter().zip(yp).map(|(n, p)| 2.0 * (n - p)).collect();
    let gp: Vec<f64> = yp.iter().zip(ya).map(|(p, a)| 2.0 * (p - a)).collect();
    let gn: Vec<f64> = ya.iter().zip(yn).map(|(a, n)| 2.0 * (a - n)).collect();
    backward(model, anchor, &fa, &ga, &mut grad);
    backward(model, positive, &fp, &gp, &mut grad);
    backward(model, negative, &fn_, &gn, &mut grad);
    (loss, grad)
}

/// Accumulates parameter gradients for one input, given the gradient of the
/// loss with respect to the unit descriptor.
fn backward(model: &EmbedModel, input: &[f64], fwd: &Forward, d_desc: &[f64], grad: &mut Gradient) {
    let y = &fwd.descriptor;
    // Through normalization y = z / |z|: dz = (g - y (y . g)) / |z|.
    let dot: f64 = y.iter().zip(d_desc).map(|(a, b)| a * b).sum();
    let mut dz: Vec<f64> = d_desc
        .iter()
        .zip(y)
        .map(|(g, yi)| (g - yi * dot) / fwd.norm)
        .collect();

    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        // Activation feeding this layer.
        let prev: Vec<f64> = if l == 0 {
            input.to_vec()
        } else {
            fwd.pre[l - 1]
                .iter()
                .map(|&v| if v >= 0.0 { v } else { LEAK * v })
                .collect()
        };
        for r in 0..layer.rows {
            grad.bias[l][r] += dz[r];
            let row = &mut grad.weights[l][r * layer.cols..(r + 1) * layer.cols];
            for (c, w) in row.iter_mut().enumerate() {
                *w += dz[r] * prev[c];
            }
        }
        if l == 0 {
            break;
        }
        let mut d_prev = vec![0.0; layer.cols];
        for r in 0..layer.rows {
            let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
            for (c, w) in row.iter().enumerate() {
                d_prev[c] += dz[r] * w;
            }
        }
        dz = d_prev
            .iter()
            .zip(&fwd.pre[l - 1])
            .map(|(g, &z)| if z >= 0.0 { *g } else { LEAK * g })
            .collect();
    }
}

/// Summary of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    pub epochs: usize,
    /// Mean triplet loss over the final epoch.
    pub final_loss: f64,
    /// Fraction of triplets with an active hinge in the final epoch.
    pub active_fraction: f64,
}

/// Mini-batch gradient descent over `(anchor, positive, negative)` feature
/// triplets. Continues from the model's current weights, so curriculum
/// iterations can keep refining one model.
pub fn train(
    model: &mut EmbedModel,
    triplets: &[[&[f64]; 3]],
    margin: f64,
    learning_rate: f64,
    batch_size: usize,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainStats> {
    if triplets.is_empty() {
        return Err(Error::invalid_argument("no triplets to train on"));
    }
    if batch_size == 0 {
        return Err(Error::invalid_argument("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut final_loss = 0.0;
    let mut active = 0usize;
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut epoch_active = 0usize;
        for batch in order.chunks(batch_size) {
            // Per-example gradients are computed in parallel but summed in
            // index order, so the result is independent of thread count.
            let parts: Vec<(f64, Gradient)> = batch
                .par_iter()
                .map(|&i| {
                    let [a, p, n] = triplets[i];
                    triplet_gradient(model, a, p, n, margin)
                })
                .collect();
            let mut total = Gradient::zeros(model);
            for (loss, g) in &parts {
                epoch_loss += loss;
                if *loss > 0.0 {
                    epoch_active += 1;
                }
                total.add(g);
            }
            total.scale(1.0 / batch.len() as f64);
            if !epoch_loss.is_finite() {
                return Err(Error::Numerical {
                    what: "training loss diverged".into(),
                    iterations: epoch,
                });
            }
            for (layer, (gw, gb)) in model
                .layers
                .iter_mut()
                .zip(total.weights.iter().zip(&total.bias))
            {
                for (w, g) in layer.weights.iter_mut().zip(gw) {
                    *w -= learning_rate * g;
                }
                for (b, g) in layer.bias.iter_mut().zip(gb) {
                    *b -= learning_rate * g;
                }
            }
        }
        final_loss = epoch_loss / triplets.len() as f64;
        active = epoch_active;
    }
    Ok(TrainStats {
        epochs,
        final_loss,
        active_fraction: active as f64 / triplets.len() as f64,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
