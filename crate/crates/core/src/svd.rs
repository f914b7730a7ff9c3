//! Truncated singular value decomposition via randomized subspace
//! iteration.
//!
//! Only the top few singular components of a dense matrix are ever needed
//! here (the low-rank structure removed during cost-matrix decorrelation),
//! so the full decomposition is avoided: a small random block is powered
//! through `A Aᵀ` with re-orthonormalization until the leading Ritz values
//! of the captured subspace settle, each sweep resolving the block through
//! a Jacobi eigensolve of its Gram matrix. Oversampling keeps convergence
//! governed by the gap to well below the requested rank, which matters
//! when the spectrum is clustered near the cut.
//!
//! The random starting block uses a fixed internal seed: identical inputs
//! give identical outputs, independent of any caller state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Extra subspace columns carried beyond the requested rank.
const OVERSAMPLE: usize = 8;
/// Relative tolerance for singular-value convergence.
const TOL: f64 = 1e-10;
/// Starting block seed; fixed so decorrelation is a pure function.
const BLOCK_SEED: u64 = 0x7355_6253;
/// Columns with norm below this (relative to the matrix scale) are treated
/// as numerically zero during orthonormalization.
const NEGLIGIBLE: f64 = 1e-13;

/// Removes the best rank-`rank` approximation from `data` (row-major
/// `rows x cols`) in place and returns the singular values of the removed
/// components, largest first. Fewer values are returned when the matrix
/// itself has lower rank. `rank == 0` is a no-op.
pub fn remove_top_components(
    data: &mut [f64],
    rows: usize,
    cols: usize,
    rank: usize,
) -> Result<Vec<f64>> {
    if rows == 0 || cols == 0 || data.len() != rows * cols {
        return Err(Error::invalid_argument(format!(
            "matrix shape {rows}x{cols} does not match {} values",
            data.len()
        )));
    }
    if rank == 0 {
        return Ok(Vec::new());
    }
    let (sigma, left, right) = top_components(data, rows, cols, rank)?;
    for (j, s) in sigma.iter().enumerate() {
        let u = &left[j];
        let v = &right[j];
        for r in 0..rows {
            let su = s * u[r];
            let row = &mut data[r * cols..(r + 1) * cols];
            for (c, x) in row.iter_mut().enumerate() {
                *x -= su * v[c];
            }
        }
    }
    Ok(sigma)
}

/// Top-`rank` singular triplets `(sigma, U columns, V columns)`.
#[allow(clippy::type_complexity)]
pub fn top_components(
    data: &[f64],
    rows: usize,
    cols: usize,
    rank: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let max_rank = rows.min(cols);
    let want = rank.min(max_rank);
    let width = (want + OVERSAMPLE).min(max_rank);

    let scale = data.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok((Vec::new(), Vec::new(), Vec::new()));
    }

    // Random starting block in column space, pushed once through A.
    let mut rng = ChaCha8Rng::seed_from_u64(BLOCK_SEED);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let block: Vec<Vec<f64>> = (0..width)
        .map(|_| (0..cols).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let mut basis: Vec<Vec<f64>> = block
        .iter()
        .map(|v| apply(data, rows, cols, v))
        .collect();
    orthonormalize(&mut basis, scale);

    let max_sweeps = 10 * max_rank.max(10);
    let mut estimates: Vec<f64> = Vec::new();
    let mut sweeps = 0;
    let mut settled = None;
    while sweeps < max_sweeps {
        sweeps += 1;
        // One A Aᵀ power step with intermediate orthonormalization.
        let mut co_basis: Vec<Vec<f64>> = basis
            .iter()
            .map(|q| apply_t(data, rows, cols, q))
            .collect();
        orthonormalize(&mut co_basis, scale);
        let mut powered: Vec<Vec<f64>> = co_basis
            .iter()
            .map(|p| apply(data, rows, cols, p))
            .collect();
        orthonormalize(&mut powered, scale);
        basis = powered;

        // Rayleigh-Ritz values of the captured subspace: B = Qᵀ A,
        // eigensolve of B Bᵀ. These settle in value long before the basis
        // itself stops rotating through near-degenerate directions.
        let b: Vec<Vec<f64>> = basis
            .iter()
            .map(|q| apply_t(data, rows, cols, q))
            .collect();
        let q = basis.len();
        let mut gram = vec![0.0; q * q];
        for i in 0..q {
            for j in i..q {
                let g: f64 = b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum();
                gram[i * q + j] = g;
                gram[j * q + i] = g;
            }
        }
        let (eigvals, eigvecs) = jacobi_eigen(&gram, q)?;
        let fresh: Vec<f64> = eigvals
            .iter()
            .take(want)
            .map(|l| l.max(0.0).sqrt())
            .collect();
        let sig_scale = fresh.first().copied().unwrap_or(0.0).max(scale);
        let close = fresh.len() == estimates.len()
            && fresh
                .iter()
                .zip(&estimates)
                .all(|(a, b)| (a - b).abs() <= TOL * sig_scale);
        estimates = fresh;
        if close {
            settled = Some((eigvals, eigvecs, b));
            break;
        }
    }
    let Some((eigvals, eigvecs, b)) = settled else {
        return Err(Error::Numerical {
            what: "singular values did not settle".into(),
            iterations: sweeps,
        });
    };
    let q = basis.len();

    let mut sigma = Vec::new();
    let mut left = Vec::new();
    let mut right = Vec::new();
    for j in 0..q.min(want) {
        let lam = eigvals[j].max(0.0);
        let s = lam.sqrt();
        if s <= NEGLIGIBLE * scale {
            break;
        }
        let w = &eigvecs[j];
        let u: Vec<f64> = (0..rows)
            .map(|r| (0..q).map(|i| w[i] * basis[i][r]).sum())
            .collect();
        let v: Vec<f64> = (0..cols)
            .map(|c| (0..q).map(|i| w[i] * b[i][c]).sum::<f64>() / s)
            .collect();
        sigma.push(s);
        left.push(u);
        right.push(v);
    }
    Ok((sigma, left, right))
}

/// `A v` for row-major `A`.
fn apply(a: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            a[r * cols..(r + 1) * cols]
                .iter()
                .zip(v)
                .map(|(x, y)| x * y)
                .sum()
        })
        .collect()
}

/// `Aᵀ v` for row-major `A`.
fn apply_t(a: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        let s = v[r];
        for (o, x) in out.iter_mut().zip(row) {
            *o += s * x;
        }
    }
    out
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Numerically
/// dead columns are dropped rather than normalized into noise.
fn orthonormalize(columns: &mut Vec<Vec<f64>>, scale: f64) {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(columns.len());
    for col in columns.drain(..) {
        let mut col = col;
        for _ in 0..2 {
            for k in &kept {
                let d: f64 = k.iter().zip(&col).map(|(a, b)| a * b).sum();
                for (c, kk) in col.iter_mut().zip(k) {
                    *c -= d * kk;
                }
            }
        }
        let n = norm(&col);
        if n > NEGLIGIBLE * scale.max(1.0) {
            for c in col.iter_mut() {
                *c /= n;
            }
            kept.push(col);
        }
    }
    *columns = kept;
}

/// Cyclic Jacobi eigensolver for a small symmetric matrix. Returns
/// eigenvalues sorted descending with matching eigenvectors (as rows of the
/// returned list).
fn jacobi_eigen(sym: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut a = sym.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = sym.iter().map(|x| x * x).sum::<f64>().sqrt();
    if frob == 0.0 || n == 0 {
        let vals = vec![0.0; n];
        let vecs = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        return Ok((vals, vecs));
    }
    let max_sweeps = 60;
    let mut done = false;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() <= 1e-15 * frob {
            done = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-18 * frob {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !done {
        return Err(Error::Numerical {
            what: "eigensolve did not converge".into(),
            iterations: max_sweeps,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap());
    let vals = order.iter().map(|&i| a[i * n + i]).collect();
    let vecs = order
        .iter()
        .map(|&j| (0..n).map(|k| v[k * n + j]).collect())
        .collect();
    Ok((vals, vecs))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
