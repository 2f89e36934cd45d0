//! Folded weight archives (`NMWT`) and compressed archives (`NMCA`).

use super::bin::{Reader, Writer};
use crate::error::Result;
use crate::format::{compress, CompressedNM};
use crate::mask::SparsePattern;
use crate::nn::{FoldedLayer, LayerKind};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"NMWT";
pub const COMPRESSED_MAGIC: &[u8; 4] = b"NMCA";
pub const ARCHIVE_VERSION: u16 = 1;

fn header<'a>(what: &'static str, bytes: &'a [u8], magic: &[u8; 4]) -> Result<(Reader<'a>, usize)> {
    let mut r = Reader::new(what, bytes);
    if r.take(4)? != magic {
        return r.fail("bad magic");
    }
    let version = r.u16()?;
    if version != ARCHIVE_VERSION {
        return r.fail(format!("unsupported version {version}"));
    }
    let count = r.u32()? as usize;
    if count > r.remaining() {
        return r.fail(format!("bad layer count {count}"));
    }
    Ok((r, count))
}

/// Folded per-layer weights in double precision, dense layers included.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArchive {
    pub layers: Vec<FoldedLayer>,
}

impl WeightArchive {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(WEIGHTS_MAGIC);
        w.u16(ARCHIVE_VERSION);
        w.usize32(self.layers.len());
        for l in &self.layers {
            w.layer(&l.name, l.kind, l.eligible, &l.weight, &l.bias);
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (mut r, count) = header("weight archive", bytes, WEIGHTS_MAGIC)?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let l = r.layer()?;
            layers.push(FoldedLayer {
                name: l.name,
                kind: l.kind,
                eligible: l.eligible,
                weight: l.weight,
                bias: l.bias,
            });
        }
        r.finish()?;
        Ok(Self { layers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer {
    pub name: String,
    pub kind: LayerKind,
    pub weight: CompressedNM,
    pub bias: Vec<f64>,
}

/// The eligible layers of a weight archive in compressed N:M form.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedArchive {
    pub layers: Vec<CompressedLayer>,
}

impl CompressedArchive {
    /// Compresses every eligible layer; fails if one violates `pattern`.
    pub fn from_weights(weights: &WeightArchive, pattern: SparsePattern) -> Result<Self> {
        let layers = weights
            .layers
            .iter()
            .filter(|l| l.eligible)
            .map(|l| {
                Ok(CompressedLayer {
                    name: l.name.clone(),
                    kind: l.kind,
                    weight: compress(&l.weight, pattern)?,
                    bias: l.bias.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(COMPRESSED_MAGIC);
        w.u16(ARCHIVE_VERSION);
        w.usize32(self.layers.len());
        for l in &self.layers {
            w.string(&l.name);
            match l.kind {
                LayerKind::Linear => w.u8(0),
                LayerKind::Conv { stride, padding } => {
                    w.u8(1);
                    w.usize32(stride);
                    w.usize32(padding);
                }
            }
            w.f64s(&l.bias);
            let body = l.weight.encode();
            w.u64(body.len() as u64);
            w.bytes(&body);
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (mut r, count) = header("compressed archive", bytes, COMPRESSED_MAGIC)?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let kind = match r.u8()? {
                0 => LayerKind::Linear,
                1 => {
                    let stride = r.u32()? as usize;
                    let padding = r.u32()? as usize;
                    if stride == 0 {
                        return r.fail("zero stride");
                    }
                    LayerKind::Conv { stride, padding }
                }
                k => return r.fail(format!("unknown layer kind {k}")),
            };
            let bias = r.f64s()?;
            let len = r.count(1)?;
            let weight = CompressedNM::decode(r.take(len)?)?;
            if bias.len() != weight.origin_dims().c_out || bias.iter().any(|b| !b.is_finite()) {
                return r.fail(format!("layer {name}: bad bias"));
            }
            layers.push(CompressedLayer {
                name,
                kind,
                weight,
                bias,
            });
        }
        r.finish()?;
        Ok(Self { layers })
    }
}
