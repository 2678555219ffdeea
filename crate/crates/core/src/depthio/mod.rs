//! Depth-map and manifest I/O.
//!
//! A pixel is valid exactly when its value in meters is finite, strictly
//! positive, and at most the far plane. How source datasets mark invalid
//! depth is not standardized; this crate's convention is the 0 sentinel plus
//! the finiteness rule above.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

pub mod pfm;
pub mod png16;

/// Default far plane in meters.
pub const DEFAULT_FAR_PLANE: f64 = 100.0;

/// On-disk depth encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthFormat {
    Pfm,
    Png16,
}

/// One manifest line: where a depth map lives and how to decode it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub depth_path: PathBuf,
    pub format: DepthFormat,
    #[serde(default = "default_scale")]
    pub depth_scale: f64,
    #[serde(default)]
    pub dataset: String,
    /// Metadata only; RGB content is never decoded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb_path: Option<PathBuf>,
}

fn default_scale() -> f64 {
    1.0
}

/// A depth map in meters with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSample<S: Scalar> {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first. Invalid positions hold 0.
    pub depth: Vec<S>,
    pub valid: Vec<bool>,
    pub dataset: String,
    pub depth_scale: f64,
}

impl<S: Scalar> DepthSample<S> {
    /// Builds a sample from raw meter values, applying the validity predicate
    /// `finite && > 0 && <= far_plane` and zeroing invalid positions.
    pub fn from_depth(
        id: impl Into<String>,
        width: usize,
        height: usize,
        depth: Vec<S>,
        dataset: impl Into<String>,
        far_plane: f64,
    ) -> Self {
        assert_eq!(depth.len(), width * height, "depth size mismatch");
        let far: S = cast(far_plane);
        let mut depth = depth;
        let valid: Vec<bool> = depth
            .iter_mut()
            .map(|d| {
                let ok = d.is_finite() && *d > S::zero() && *d <= far;
                if !ok {
                    *d = S::zero();
                }
                ok
            })
            .collect();
        DepthSample {
            id: id.into(),
            width,
            height,
            depth,
            valid,
            dataset: dataset.into(),
            depth_scale: 1.0,
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> (S, bool) {
        let i = row * self.width + col;
        (self.depth[i], self.valid[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_ratio(&self) -> f64 {
        self.valid_count() as f64 / (self.width * self.height) as f64
    }

    /// Converts the depth array to another scalar type, keeping the mask.
    pub fn convert<T: Scalar>(&self) -> DepthSample<T> {
        DepthSample {
            id: self.id.clone(),
            width: self.width,
            height: self.height,
            depth: self
                .depth
                .iter()
                .map(|&d| T::from_f64(d.to_f64().unwrap()).unwrap())
                .collect(),
            valid: self.valid.clone(),
            dataset: self.dataset.clone(),
            depth_scale: self.depth_scale,
        }
    }
}

/// Loads a depth map, converts raw units to meters, and applies the validity
/// predicate against `far_plane`.
pub fn load_depth<S: Scalar>(entry: &ManifestEntry, far_plane: f64) -> Result<DepthSample<S>> {
    if entry.depth_scale <= 0.0 {
        return Err(Error::Config(format!(
            "sample {}: depth_scale must be positive",
            entry.id
        )));
    }
    let (width, height, meters) = load_raw::<S>(entry)?;
    let mut sample = DepthSample::from_depth(
        entry.id.clone(),
        width,
        height,
        meters,
        entry.dataset.clone(),
        far_plane,
    );
    sample.depth_scale = entry.depth_scale;
    Ok(sample)
}

/// Loads raw values divided by `depth_scale`, without any validity predicate.
/// Used for prediction maps (e.g. disparity) where the mask comes from the
/// ground truth.
pub fn load_raw<S: Scalar>(entry: &ManifestEntry) -> Result<(usize, usize, Vec<S>)> {
    let inv_scale = 1.0 / entry.depth_scale;
    match entry.format {
        DepthFormat::Pfm => {
            let (w, h, values) = pfm::read_pfm(&entry.depth_path)?;
            let data = values
                .into_iter()
                .map(|v| cast::<S>(v as f64 * inv_scale))
                .collect();
            Ok((w, h, data))
        }
        DepthFormat::Png16 => {
            let (w, h, values) = png16::read_png16(&entry.depth_path)?;
            let data = values
                .into_iter()
                .map(|v| cast::<S>(v as f64 * inv_scale))
                .collect();
            Ok((w, h, data))
        }
    }
}

/// Writes a sample to disk. Invalid pixels are stored as 0. PFM is lossless
/// for `f32` depths; png16 quantizes to `1/depth_scale` meters.
pub fn write_depth<S: Scalar>(sample: &DepthSample<S>, format: DepthFormat, path: &Path) -> Result<()> {
    match format {
        DepthFormat::Pfm => {
            let values: Vec<f32> = sample
                .depth
                .iter()
                .zip(&sample.valid)
                .map(|(&d, &v)| if v { d.to_f64().unwrap() as f32 } else { 0.0 })
                .collect();
            pfm::write_pfm(path, sample.width, sample.height, &values)
        }
        DepthFormat::Png16 => {
            let scale = sample.depth_scale;
            let values: Vec<u16> = sample
                .depth
                .iter()
                .zip(&sample.valid)
                .map(|(&d, &v)| {
                    if !v {
                        return 0;
                    }
                    let raw = (d.to_f64().unwrap() * scale).round();
                    raw.clamp(0.0, 65535.0) as u16
                })
                .collect();
            png16::write_png16(path, sample.width, sample.height, &values)
        }
    }
}

/// Reads a JSON-lines manifest. Order is preserved; ids must be unique;
/// unknown keys are ignored.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: line_no,
            msg: e.to_string(),
        })?;
        if entry.depth_scale <= 0.0 {
            return Err(Error::Manifest {
                line: line_no,
                msg: format!("depth_scale must be positive, got {}", entry.depth_scale),
            });
        }
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Manifest {
                line: line_no,
                msg: format!("duplicate id {:?}", entry.id),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Writes manifest entries back out as JSON-lines.
pub fn write_manifest<W: Write>(entries: &[ManifestEntry], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for entry in entries {
        let line = serde_json::to_string(entry)
            .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<writer>", e))?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))
}
