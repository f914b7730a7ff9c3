//! Model checkpoints and descriptor files.
//!
//! Checkpoint layout: magic `TSMD`, u32 version, u32 layer count, then per
//! layer u32 rows, u32 cols, `rows * cols` f32 weights row-major, `rows`
//! f32 biases. The nonlinearity is not stored; by convention every layer
//! except the last is followed by the leaky rectifier and the final output
//! is L2-normalized.
//!
//! Descriptor layout: magic `TSEM`, u32 count, u32 dim, u32 frame stride,
//! then `count * dim` f32 values row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::io::{write_f32_slice, write_u32, TrackedReader};

use super::{EmbedModel, Layer};

const MODEL_MAGIC: &[u8; 4] = b"TSMD";
const MODEL_VERSION: u32 = 1;
const DESC_MAGIC: &[u8; 4] = b"TSEM";

impl EmbedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MODEL_MAGIC)?;
        write_u32(&mut w, MODEL_VERSION)?;
        write_u32(&mut w, self.layers.len() as u32)?;
        for layer in &self.layers {
            write_u32(&mut w, layer.rows as u32)?;
            write_u32(&mut w, layer.cols as u32)?;
            write_f32_slice(&mut w, &layer.weights)?;
            write_f32_slice(&mut w, &layer.bias)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EmbedModel> {
        let file = File::open(path).map_err(|e| {
            crate::error::Error::data(format!("cannot open {}: {e}", path.display()))
        })?;
        let mut r = TrackedReader::new(BufReader::new(file), path.display().to_string());
        r.expect_magic(MODEL_MAGIC)?;
        let version = r.read_u32("version")?;
        if version != MODEL_VERSION {
            return Err(r.fail(format!("unsupported checkpoint version {version}")));
        }
        let count = r.read_u32("layer count")? as usize;
        if count == 0 {
            return Err(r.fail("checkpoint has no layers"));
        }
        let mut layers = Vec::with_capacity(count);
        for l in 0..count {
            let rows = r.read_u32("rows")? as usize;
            let cols = r.read_u32("cols")? as usize;
            if rows == 0 || cols == 0 {
                return Err(r.fail(format!("layer {l} has empty shape {rows}x{cols}")));
            }
            let weights = r.read_f32_vec(rows * cols, "weights")?;
            let bias = r.read_f32_vec(rows, "biases")?;
            layers.push(Layer {
                rows,
                cols,
                weights,
                bias,
            });
        }
        for w in layers.windows(2) {
            if w[1].cols != w[0].rows {
                return Err(r.fail(format!(
                    "layer shapes do not chain: {}x{} feeds {}x{}",
                    w[0].rows, w[0].cols, w[1].rows, w[1].cols
                )));
            }
        }
        Ok(EmbedModel { layers })
    }
}

/// Writes descriptors sampled every `stride` frames as a TSEM file.
pub fn save_descriptors(path: &Path, descriptors: &[Vec<f64>], stride: usize) -> Result<()> {
    let dim = descriptors.first().map_or(0, |d| d.len());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DESC_MAGIC)?;
    write_u32(&mut w, descriptors.len() as u32)?;
    write_u32(&mut w, dim as u32)?;
    write_u32(&mut w, stride as u32)?;
    for d in descriptors {
        debug_assert_eq!(d.len(), dim);
        write_f32_slice(&mut w, d)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a TSEM file back as `(descriptors, frame stride)`.
pub fn load_descriptors(path: &Path) -> Result<(Vec<Vec<f64>>, usize)> {
    let file = File::open(path).map_err(|e| {
        crate::error::Error::data(format!("cannot open {}: {e}", path.display()))
    })?;
    let mut r = TrackedReader::new(BufReader::new(file), path.display().to_string());
    r.expect_magic(DESC_MAGIC)?;
    let count = r.read_u32("descriptor count")? as usize;
    let dim = r.read_u32("descriptor dim")? as usize;
    let stride = r.read_u32("frame stride")? as usize;
    if stride == 0 {
        return Err(r.fail("frame stride must be positive"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(r.read_f32_vec(dim, "descriptor")?);
    }
    Ok((out, stride))
}
