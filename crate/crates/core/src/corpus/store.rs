//! On-disk corpus layout.
//!
//! A corpus directory holds `corpus.meta` (flat key-value text), one
//! `journey_<id>.tsrf` per journey (frame features, f32 little-endian), and
//! `gt_<a>_<b>.csv` ground-truth alignments for same-route pairs. Route
//! positions are not persisted; the ground-truth files capture everything
//! evaluation needs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{write_f32_slice, write_u32, TrackedReader};

use super::{Corpus, Journey, JourneyId};

const FRAME_MAGIC: &[u8; 4] = b"TSRF";
const FRAME_VERSION: u32 = 1;

impl Corpus {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;

        let mut meta = String::new();
        let _ = writeln!(meta, "feature_dim = {}", self.feature_dim);
        let _ = writeln!(meta, "fps = {}", self.fps);
        let _ = writeln!(meta, "routes = {}", self.route_count);
        let _ = writeln!(meta, "journeys = {}", self.journeys.len());
        for j in &self.journeys {
            let _ = writeln!(meta, "journey.{}.route = {}", j.id, j.route);
            let _ = writeln!(meta, "journey.{}.frames = {}", j.id, j.frames());
        }
        std::fs::write(dir.join("corpus.meta"), meta)?;

        for j in &self.journeys {
            let path = dir.join(format!("journey_{}.tsrf", j.id));
            let mut w = BufWriter::new(File::create(&path)?);
            w.write_all(FRAME_MAGIC)?;
            write_u32(&mut w, FRAME_VERSION)?;
            write_u32(&mut w, j.frames() as u32)?;
            write_u32(&mut w, self.feature_dim as u32)?;
            for frame in &j.features {
                write_f32_slice(&mut w, frame)?;
            }
            w.flush()?;
        }

        for (&(a, b), pairs) in &self.gt {
            let path = dir.join(format!("gt_{a}_{b}.csv"));
            let mut w = BufWriter::new(File::create(&path)?);
            writeln!(w, "frame_a,frame_b")?;
            for &(x, y) in pairs {
                writeln!(w, "{x},{y}")?;
            }
            w.flush()?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Corpus> {
        let meta_path = dir.join("corpus.meta");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| {
            Error::data(format!("cannot read {}: {e}", meta_path.display()))
        })?;
        let mut kv = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::data(format!(
                    "{}:{}: expected `key = value`",
                    meta_path.display(),
                    lineno + 1
                ))
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get_usize = |key: &str| -> Result<usize> {
            kv.get(key)
                .ok_or_else(|| Error::data(format!("{}: missing {key}", meta_path.display())))?
                .parse()
                .map_err(|_| Error::data(format!("{}: bad {key}", meta_path.display())))
        };
        let feature_dim = get_usize("feature_dim")?;
        let fps = get_usize("fps")?;
        let route_count = get_usize("routes")?;
        let count = get_usize("journeys")?;

        let mut journeys = Vec::with_capacity(count);
        for id in 0..count {
            let route = get_usize(&format!("journey.{id}.route"))?;
            let frames = get_usize(&format!("journey.{id}.frames"))?;
            let path = dir.join(format!("journey_{id}.tsrf"));
            let features = load_journey_features(&path)?;
            if features.len() != frames
                || features.first().map_or(feature_dim != 0, |f| f.len() != feature_dim)
            {
                return Err(Error::data(format!(
                    "{}: shape does not match corpus.meta {frames}x{feature_dim}",
                    path.display()
                )));
            }
            journeys.push(Journey {
                id: JourneyId(id),
                route,
                features,
                positions: Vec::new(),
                noise_mask: Vec::new(),
            });
        }

        let mut gt = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            let Some(stem) = name.strip_prefix("gt_").and_then(|s| s.strip_suffix(".csv"))
            else {
                continue;
            };
            let Some((a, b)) = stem.split_once('_') else {
                continue;
            };
            let (a, b): (usize, usize) = match (a.parse(), b.parse()) {
                (Ok(a), Ok(b)) => (a, b),
                _ => continue,
            };
            if a >= b || b >= count {
                return Err(Error::data(format!(
                    "{}: journey pair out of range",
                    entry.path().display()
                )));
            }
            gt.insert((a, b), read_ground_truth_csv(&entry.path())?);
        }

        Ok(Corpus {
            feature_dim,
            fps,
            route_count,
            journeys,
            gt,
        })
    }
}

/// Reads one journey's frame features from its binary file; shape comes
/// from the file header.
pub fn load_journey_features(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| {
        Error::data(format!("cannot open {}: {e}", path.display()))
    })?;
    let mut r = TrackedReader::new(BufReader::new(file), path.display().to_string());
    r.expect_magic(FRAME_MAGIC)?;
    let version = r.read_u32("version")?;
    if version != FRAME_VERSION {
        return Err(r.fail(format!("unsupported frame-file version {version}")));
    }
    let frames = r.read_u32("frame count")? as usize;
    let dim = r.read_u32("feature dim")? as usize;
    if frames == 0 || dim == 0 {
        return Err(r.fail(format!("empty journey shape {frames}x{dim}")));
    }
    let mut features = Vec::with_capacity(frames);
    for _ in 0..frames {
        features.push(r.read_f32_vec(dim, "frame features")?);
    }
    Ok(features)
}

/// Reads a `frame_a,frame_b` ground-truth file.
pub fn read_ground_truth_csv(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "frame_a,frame_b" {
                return Err(Error::data(format!(
                    "{}: expected header frame_a,frame_b",
                    path.display()
                )));
            }
            continue;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| {
            Error::data(format!("{}:{}: expected two fields", path.display(), lineno + 1))
        })?;
        let parse = |s: &str| -> Result<usize> {
            s.trim().parse().map_err(|_| {
                Error::data(format!(
                    "{}:{}: bad frame index {s}",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        pairs.push((parse(a)?, parse(b)?));
    }
    Ok(pairs)
}
