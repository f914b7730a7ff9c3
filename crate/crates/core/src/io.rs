//! Little-endian binary read/write helpers shared by the on-disk formats.
//!
//! All formats start with a four-byte ASCII magic followed by a `u32`
//! version. Readers track the byte offset so format errors can point at
//! the offending position.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Wraps a reader and tracks the current byte offset for error reporting.
pub struct TrackedReader<R: Read> {
    inner: R,
    path: String,
    offset: u64,
}

impl<R: Read> TrackedReader<R> {
    pub fn new(inner: R, path: impl Into<String>) -> Self {
        Self {
            inner,
            path: path.into(),
            offset: 0,
        }
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|_| {
            Error::format(
                self.path.clone(),
                self.offset,
                format!("unexpected end of file reading {what}"),
            )
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    /// Reads and checks a four-byte magic.
    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut buf = [0u8; 4];
        let at = self.offset;
        self.fill(&mut buf, "magic")?;
        if &buf != magic {
            return Err(Error::format(
                self.path.clone(),
                at,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(&buf)
                ),
            ));
        }
        Ok(())
    }

    pub fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.fill(&mut buf, what)?;
        Ok(u32::from_le_bytes(buf))
    }

    pub fn read_u8(&mut self, what: &str) -> Result<u8> {
        let mut buf = [0u8; 1];
        self.fill(&mut buf, what)?;
        Ok(buf[0])
    }

    /// Reads `n` f32 values and widens them to f64.
    pub fn read_f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 4];
        self.fill(&mut bytes, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    /// Fails with a format error at the current offset.
    pub fn fail(&self, what: impl Into<String>) -> Error {
        Error::format(self.path.clone(), self.offset, what)
    }
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

/// Writes f64 values narrowed to f32, the storage precision of every
/// binary format in this crate.
pub fn write_f32_slice<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}
