//! Pairwise descriptor-distance matrices.
//!
//! Entry `(i, j)` is the Euclidean distance between descriptor `i` of the
//! row journey and descriptor `j` of the column journey, both sampled at a
//! fixed frame stride. Matching runs on a decorrelated copy: the top
//! singular components are subtracted, which strips structure shared by
//! whole rows or columns (a descriptor that is globally close to
//! everything, seasons, exposure) and leaves the alignment-specific
//! signal. Decorrelated entries are not clamped and are routinely
//! negative.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::embedder::distance;
use crate::error::{Error, Result};
use crate::io::{write_f32_slice, write_u32, write_u8, TrackedReader};
use crate::svd;

const MAGIC: &[u8; 4] = b"TSCM";

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Frames between consecutive coarse samples, for converting matrix
    /// coordinates back to frame indices.
    pub stride: usize,
    /// True once the top singular components have been removed.
    pub decorrelated: bool,
    /// Row-major, `rows * cols`.
    pub data: Vec<f64>,
}

impl CostMatrix {
    /// Distance matrix between two descriptor sequences that were already
    /// sampled at `stride`.
    pub fn from_descriptors(
        x: &[Vec<f64>],
        y: &[Vec<f64>],
        stride: usize,
    ) -> Result<CostMatrix> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::invalid_argument(
                "descriptor sequences must be non-empty",
            ));
        }
        if stride == 0 {
            return Err(Error::invalid_argument("stride must be positive"));
        }
        let dim = x[0].len();
        if x.iter().chain(y.iter()).any(|d| d.len() != dim) {
            return Err(Error::invalid_argument(
                "descriptor dimensions are inconsistent",
            ));
        }
        let rows = x.len();
        let cols = y.len();
        let mut data = vec![0.0; rows * cols];
        data.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
            for (c, out) in row.iter_mut().enumerate() {
                *out = distance(&x[r], &y[c]);
            }
        });
        Ok(CostMatrix {
            rows,
            cols,
            stride,
            decorrelated: false,
            data,
        })
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Copy with the top `rank` singular components removed, plus the
    /// singular values that were removed.
    pub fn decorrelate(&self, rank: usize) -> Result<(CostMatrix, Vec<f64>)> {
        let mut out = self.clone();
        let sigma = svd::remove_top_components(&mut out.data, self.rows, self.cols, rank)?;
        out.decorrelated = true;
        Ok((out, sigma))
    }

    /// Transposed copy (rows and columns swapped).
    pub fn transposed(&self) -> CostMatrix {
        let mut data = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        CostMatrix {
            rows: self.cols,
            cols: self.rows,
            stride: self.stride,
            decorrelated: self.decorrelated,
            data,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        write_u32(&mut w, self.rows as u32)?;
        write_u32(&mut w, self.cols as u32)?;
        write_u32(&mut w, self.stride as u32)?;
        write_u8(&mut w, self.decorrelated as u8)?;
        write_f32_slice(&mut w, &self.data)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CostMatrix> {
        let file = File::open(path)
            .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
        let mut r = TrackedReader::new(BufReader::new(file), path.display().to_string());
        r.expect_magic(MAGIC)?;
        let rows = r.read_u32("rows")? as usize;
        let cols = r.read_u32("cols")? as usize;
        let stride = r.read_u32("stride")? as usize;
        let decorrelated = match r.read_u8("decorrelated flag")? {
            0 => false,
            1 => true,
            v => return Err(r.fail(format!("bad decorrelated flag {v}"))),
        };
        if rows == 0 || cols == 0 || stride == 0 {
            return Err(r.fail(format!("bad matrix header {rows}x{cols} stride {stride}")));
        }
        let data = r.read_f32_vec(rows * cols, "matrix values")?;
        Ok(CostMatrix {
            rows,
            cols,
            stride,
            decorrelated,
            data,
        })
    }

    /// 8-bit grayscale dump (binary PGM), values scaled so the smallest
    /// entry is black and the largest white. A monotone matching path shows
    /// up as a dark band.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let lo = self.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P5\n{} {}\n255\n", self.cols, self.rows)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| {
                if span <= 0.0 {
                    0u8
                } else {
                    (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8
                }
            })
            .collect();
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn entries_are_pairwise_distances() {
        let x = vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0])];
        let y = vec![unit(&[1.0, 0.0]), unit(&[1.0, 1.0]), unit(&[-1.0, 0.0])];
        let m = CostMatrix::from_descriptors(&x, &y, 10).unwrap();
        assert_eq!((m.rows, m.cols), (2, 3));
        assert!((m.at(0, 0) - 0.0).abs() < 1e-12);
        assert!((m.at(0, 2) - 2.0).abs() < 1e-12);
        let expect = ((1.0 - 1.0 / 2f64.sqrt()).powi(2) + (1.0 / 2f64.sqrt()).powi(2)).sqrt();
        assert!((m.at(0, 1) - expect).abs() < 1e-12);
        assert!((m.at(1, 1) - expect).abs() < 1e-12);
    }

    #[test]
    fn self_matrix_has_zero_diagonal() {
        let x: Vec<Vec<f64>> = (0..5)
            .map(|i| unit(&[(i as f64).cos(), (i as f64).sin(), 0.3]))
            .collect();
        let m = CostMatrix::from_descriptors(&x, &x, 1).unwrap();
        for i in 0..5 {
            assert!(m.at(i, i).abs() < 1e-12);
            for j in 0..5 {
                assert!((m.at(i, j) - m.at(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decorrelated_entries_go_negative() {
        // A matrix dominated by rank-1 structure: after removing it all
        // that remains is small fluctuation around zero, necessarily with
        // both signs.
        let rows = 12;
        let cols = 15;
        let mut m = CostMatrix {
            rows,
            cols,
            stride: 10,
            decorrelated: false,
            data: vec![0.0; rows * cols],
        };
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] =
                    1.0 + 0.5 * (r as f64 / rows as f64) + 0.01 * ((r * 31 + c * 17) % 7) as f64;
            }
        }
        let (d, sigma) = m.decorrelate(2).unwrap();
        assert_eq!(sigma.len(), 2);
        assert!(d.data.iter().any(|&v| v < 0.0));
        assert!(d.data.iter().any(|&v| v > 0.0));
        let scale: f64 = m.data.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let residual: f64 = d.data.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(residual < 0.1 * scale);
    }

    #[test]
    fn transpose_swaps_axes() {
        let x = vec![unit(&[1.0, 0.0]), unit(&[0.5, 1.0]), unit(&[0.0, 1.0])];
        let y = vec![unit(&[1.0, 1.0]), unit(&[-0.5, 1.0])];
        let m = CostMatrix::from_descriptors(&x, &y, 3).unwrap();
        let t = m.transposed();
        assert_eq!((t.rows, t.cols), (2, 3));
        for r in 0..m.rows {
            for c in 0..m.cols {
                assert_eq!(m.at(r, c), t.at(c, r));
            }
        }
    }

    #[test]
    fn file_roundtrip_preserves_shape_and_values() {
        let x = vec![unit(&[1.0, 2.0]), unit(&[2.0, 1.0])];
        let y = vec![unit(&[1.0, -1.0]), unit(&[0.0, 1.0]), unit(&[1.0, 0.1])];
        let m = CostMatrix::from_descriptors(&x, &y, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tscm");
        m.save(&path).unwrap();
        let loaded = CostMatrix::load(&path).unwrap();
        assert_eq!((loaded.rows, loaded.cols, loaded.stride), (2, 3, 7));
        for (a, b) in m.data.iter().zip(&loaded.data) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn pgm_dump_is_wellformed() {
        let m = CostMatrix {
            rows: 2,
            cols: 3,
            stride: 1,
            decorrelated: false,
            data: vec![0.0, 0.5, 1.0, 1.0, 0.25, 0.75],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        m.write_pgm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let pixels = &bytes[header.len()..];
        assert_eq!(pixels.len(), 6);
        assert_eq!(pixels[0], 0);
        assert_eq!(pixels[2], 255);
        assert_eq!(pixels[3], 255);
    }
}
