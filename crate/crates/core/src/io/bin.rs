//! Little-endian primitives shared by the binary containers.

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerKind};
use crate::tensor::{Dims4, WeightTensor4};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self { buf: Vec::new() }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn usize32(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension exceeds u32"));
    }

    /// u64 element count, then raw values.
    pub fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }

    /// u16 length, then UTF-8 bytes.
    pub fn string(&mut self, s: &str) {
        let len = u16::try_from(s.len()).expect("name too long");
        self.u16(len);
        self.bytes(s.as_bytes());
    }

    /// 4-byte tag, u64 length, payload.
    pub fn section(&mut self, tag: &[u8; 4], payload: &[u8]) {
        self.bytes(tag);
        self.u64(payload.len() as u64);
        self.bytes(payload);
    }

    pub fn layer(&mut self, name: &str, kind: LayerKind, eligible: bool, weight: &WeightTensor4, bias: &[f64]) {
        self.string(name);
        match kind {
            LayerKind::Linear => self.u8(0),
            LayerKind::Conv { stride, padding } => {
                self.u8(1);
                self.usize32(stride);
                self.usize32(padding);
            }
        }
        self.u8(eligible as u8);
        let d = weight.dims();
        for v in [d.c_out, d.c_in, d.k_h, d.k_w] {
            self.usize32(v);
        }
        for &v in weight.values() {
            self.f64(v);
        }
        self.f64s(bias);
    }
}

pub(crate) struct Reader<'a> {
    what: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(what: &'static str, bytes: &'a [u8]) -> Self {
        Self { what, bytes, pos: 0 }
    }

    pub fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::format(
            self.what,
            format!("{} at byte {}", reason.into(), self.pos),
        ))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return self.fail(format!("{} trailing bytes", self.remaining()));
        }
        Ok(())
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return self.fail(format!("truncated: need {n} bytes, {} left", self.remaining()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => self.fail(format!("invalid flag {b}")),
        }
    }

    /// Element count that must fit in the remaining bytes at `width` bytes each.
    pub fn count(&mut self, width: usize) -> Result<usize> {
        let n = self.u64()?;
        match usize::try_from(n)
            .ok()
            .and_then(|n| n.checked_mul(width).map(|b| (n, b)))
        {
            Some((n, b)) if b <= self.remaining() => Ok(n),
            _ => self.fail(format!("count {n} exceeds the remaining data")),
        }
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        match std::str::from_utf8(raw) {
            Ok(s) => Ok(s.to_owned()),
            Err(_) => self.fail("name is not UTF-8"),
        }
    }

    pub fn section(&mut self) -> Result<([u8; 4], Reader<'a>)> {
        let tag = self.array::<4>()?;
        let len = self.u64()?;
        let len = match usize::try_from(len) {
            Ok(l) if l <= self.remaining() => l,
            _ => return self.fail(format!("section length {len} exceeds the file")),
        };
        let body = self.take(len)?;
        Ok((tag, Reader::new(self.what, body)))
    }

    pub fn layer(&mut self) -> Result<Layer> {
        let name = self.string()?;
        let kind = match self.u8()? {
            0 => LayerKind::Linear,
            1 => {
                let stride = self.u32()? as usize;
                let padding = self.u32()? as usize;
                if stride == 0 {
                    return self.fail("zero stride");
                }
                LayerKind::Conv { stride, padding }
            }
            k => return self.fail(format!("unknown layer kind {k}")),
        };
        let eligible = self.bool()?;
        let mut d = [0usize; 4];
        for v in &mut d {
            *v = self.u32()? as usize;
        }
        let len = d.iter().try_fold(1usize, |a, &v| a.checked_mul(v));
        let len = match len {
            Some(l) if l > 0 && l.checked_mul(8).is_some_and(|b| b <= self.remaining()) => l,
            _ => return self.fail(format!("layer {name}: bad dimensions {d:?}")),
        };
        let values = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let weight = WeightTensor4::new(Dims4::new(d[0], d[1], d[2], d[3]), values)
            .or_else(|e| self.fail(format!("layer {name}: {e}")))?;
        let bias = self.f64s()?;
        if bias.len() != d[0] || bias.iter().any(|b| !b.is_finite()) {
            return self.fail(format!("layer {name}: bad bias"));
        }
        Ok(Layer {
            name,
            kind,
            weight,
            bias,
            eligible,
        })
    }
}
