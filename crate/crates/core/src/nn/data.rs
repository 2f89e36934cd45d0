use std::f64::consts::PI;
use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::InputShape;
use crate::error::{Error, Result};

/// Labelled samples, features row-major `samples x input.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input: InputShape,
    pub classes: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(input: InputShape, classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        if features.len() != labels.len() * input.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples of {} features need {} values, got {}",
                labels.len(),
                input.len(),
                labels.len() * input.len(),
                features.len()
            )));
        }
        if classes < 2 || labels.iter().any(|&y| y >= classes) {
            return Err(Error::Config(format!(
                "labels must lie in [0, {classes}) with at least two classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("dataset contains non-finite features".into()));
        }
        Ok(Self {
            input,
            classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.input.len();
        &self.features[i * d..(i + 1) * d]
    }

    /// Gathers the given samples into a contiguous batch.
    pub fn batch(&self, indices: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(indices.len() * self.input.len());
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.sample(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    /// Builds a dataset from IDX image (`0x00000803`) and label (`0x00000801`) files.
    pub fn from_idx(images: &[u8], labels: &[u8]) -> Result<Self> {
        let images = parse_idx(images)?;
        let labels = parse_idx(labels)?;
        if images.dims.len() != 3 {
            return Err(Error::format("idx images", "expected a 3-dimensional array"));
        }
        if labels.dims.len() != 1 {
            return Err(Error::format("idx labels", "expected a 1-dimensional array"));
        }
        if images.dims[0] != labels.dims[0] {
            return Err(Error::format("idx", "image and label counts differ"));
        }
        let input = InputShape::new(1, images.dims[1], images.dims[2]);
        let features = images.data.iter().map(|&b| b as f64 / 255.0).collect();
        let labels: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
        let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        Self::new(input, classes, features, labels)
    }

    /// Reads a headed CSV; `label_column` holds integer classes, every other column is a feature.
    pub fn from_csv<R: Read>(reader: R, label_column: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let label_idx = headers
            .iter()
            .position(|h| h == label_column)
            .ok_or_else(|| Error::Config(format!("csv has no column {label_column:?}")))?;
        let width = headers.len() - 1;
        if width == 0 {
            return Err(Error::Config("csv has no feature columns".into()));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            for (i, field) in record.iter().enumerate() {
                if i == label_idx {
                    let y: usize = field
                        .parse()
                        .map_err(|_| Error::format("csv dataset", format!("row {}: bad label {field:?}", line + 1)))?;
                    if y > u16::MAX as usize {
                        return Err(Error::format(
                            "csv dataset",
                            format!("row {}: label {y} too large", line + 1),
                        ));
                    }
                    labels.push(y);
                } else {
                    let v: f64 = field
                        .parse()
                        .map_err(|_| Error::format("csv dataset", format!("row {}: bad value {field:?}", line + 1)))?;
                    features.push(v);
                }
            }
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        Self::new(InputShape::flat(width), classes, features, labels)
    }
}

/// An IDX array of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses big-endian IDX: two zero bytes, type `0x08` (u8), dimension count,
/// then one u32 per dimension and the raw bytes.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let bad = |r: &str| Error::format("idx", r);
    if bytes.len() < 4 {
        return Err(bad("truncated magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad("bad magic"));
    }
    if bytes[2] != 0x08 {
        return Err(bad(&format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 || ndims > 4 {
        return Err(bad(&format!("unsupported dimension count {ndims}")));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(bad("truncated dimensions"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let total = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("size overflow"))?;
    if bytes.len() - header != total {
        return Err(bad(&format!(
            "expected {total} data bytes, found {}",
            bytes.len() - header
        )));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Two isotropic Gaussian blobs centred at `(-1, -1)` and `(1, 1)`.
pub fn two_gaussians(samples: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(samples * 2);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let y = i % 2;
        let c = if y == 0 { -1.0 } else { 1.0 };
        features.push(c + 0.75 * normal(&mut rng));
        features.push(c + 0.75 * normal(&mut rng));
        labels.push(y);
    }
    Dataset::new(InputShape::flat(2), 2, features, labels)
}

/// Two interleaved spirals with `turns` revolutions and Gaussian jitter.
pub fn two_spirals(samples: usize, turns: f64, noise: f64, seed: u64) -> Result<Dataset> {
    if !(turns > 0.0 && turns.is_finite() && noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(
            "spirals need positive turns and nonnegative noise".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(samples * 2);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let y = i % 2;
        // sqrt spreads points evenly along the arc
        let t: f64 = rng.random::<f64>().sqrt();
        let angle = t * turns * 2.0 * PI + y as f64 * PI;
        let r = 0.1 + 0.9 * t;
        features.push(r * angle.cos() + noise * normal(&mut rng));
        features.push(r * angle.sin() + noise * normal(&mut rng));
        labels.push(y);
    }
    Dataset::new(InputShape::flat(2), 2, features, labels)
}
