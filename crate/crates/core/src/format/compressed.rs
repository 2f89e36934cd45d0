use crate::error::{Error, Result};
use crate::mask::SparsePattern;
use crate::tensor::{block_to_tensor, Dims4, WeightTensor4};

pub const MAGIC: &[u8; 4] = b"NMSP";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 16 + 8;

/// Bits needed to address a column inside a block of width `m`: `ceil(log2 m)`.
pub fn index_bits(m: usize) -> u32 {
    debug_assert!(m >= 2);
    usize::BITS - (m - 1).leading_zeros()
}

/// Runtime N:M storage: `n` single-precision values per block plus their
/// column positions, bit-packed at `ceil(log2 m)` bits each.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedNM {
    pattern: SparsePattern,
    dims: Dims4,
    values: Vec<f32>,
    columns: Vec<u8>,
}

impl CompressedNM {
    pub fn pattern(&self) -> SparsePattern {
        self.pattern
    }

    pub fn origin_dims(&self) -> Dims4 {
        self.dims
    }

    pub fn blocks(&self) -> usize {
        self.dims.len() / self.pattern.m()
    }

    /// Kept values of block `g`.
    pub fn block_values(&self, g: usize) -> &[f32] {
        let n = self.pattern.n();
        &self.values[g * n..(g + 1) * n]
    }

    /// Column positions of block `g`, strictly increasing.
    pub fn block_columns(&self, g: usize) -> &[u8] {
        let n = self.pattern.n();
        &self.columns[g * n..(g + 1) * n]
    }

    pub fn metadata_bits(&self) -> usize {
        self.blocks() * self.pattern.n() * index_bits(self.pattern.m()) as usize
    }

    /// Bytes of the packed index stream of one block.
    pub fn packed_block_len(&self) -> usize {
        packed_block_len(self.pattern)
    }

    pub fn value_bytes(&self) -> usize {
        self.values.len() * 4
    }

    /// Size of the same tensor stored densely in single precision.
    pub fn dense_bytes(&self) -> usize {
        self.dims.len() * 4
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.blocks() * (self.pattern.n() * 4 + self.packed_block_len())
    }

    /// Little-endian binary layout: magic, version, n, m, dims, g, then per
    /// block `n` f32 values followed by the packed indices.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.pattern.n() as u8);
        out.push(self.pattern.m() as u8);
        for d in [self.dims.c_out, self.dims.c_in, self.dims.k_h, self.dims.k_w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.blocks() as u64).to_le_bytes());
        let bits = index_bits(self.pattern.m());
        let mut packed = vec![0u8; self.packed_block_len()];
        for g in 0..self.blocks() {
            for v in self.block_values(g) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            pack_indices(self.block_columns(g), bits, &mut packed);
            out.extend_from_slice(&packed);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| Error::format("compressed N:M tensor", reason);
        if bytes.len() < HEADER_LEN {
            return Err(bad("truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let (n, m) = (bytes[6] as usize, bytes[7] as usize);
        let pattern = SparsePattern::new(n, m).map_err(|e| bad(&e.to_string()))?;
        let dim = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap()) as usize;
        let dims = Dims4::new(dim(0), dim(1), dim(2), dim(3));
        if dims.c_out == 0 || dims.c_in == 0 || dims.k_h == 0 || dims.k_w == 0 {
            return Err(bad("zero dimension"));
        }
        if dims.c_in % m != 0 {
            return Err(bad("block width does not divide c_in"));
        }
        let g = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let elements = (dims.c_out as u128) * (dims.c_in as u128) * (dims.k_h as u128) * (dims.k_w as u128);
        if (g as u128) * (m as u128) != elements {
            return Err(bad("block count does not match dimensions"));
        }
        let per_block = (n * 4 + packed_block_len(pattern)) as u128;
        let body = (bytes.len() - HEADER_LEN) as u128;
        if (g as u128) * per_block != body {
            return Err(bad(&format!(
                "expected {} payload bytes, found {body}",
                (g as u128) * per_block
            )));
        }
        let g = g as usize;
        let bits = index_bits(m);
        let mut values = Vec::with_capacity(g * n);
        let mut columns = Vec::with_capacity(g * n);
        let mut cursor = &bytes[HEADER_LEN..];
        let plen = packed_block_len(pattern);
        for block in 0..g {
            for chunk in cursor[..4 * n].chunks_exact(4) {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(bad(&format!("non-finite value in block {block}")));
                }
                values.push(v);
            }
            let start = columns.len();
            let packed = &cursor[4 * n..4 * n + plen];
            let used = n * bits as usize;
            if used % 8 != 0 && packed[plen - 1] >> (used % 8) != 0 {
                return Err(bad(&format!("block {block} has nonzero padding bits")));
            }
            unpack_indices(packed, bits, n, &mut columns);
            let cols = &columns[start..];
            if cols.iter().any(|&c| c as usize >= m) || cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad(&format!("block {block} has invalid column indices")));
            }
            cursor = &cursor[4 * n + plen..];
        }
        Ok(Self {
            pattern,
            dims,
            values,
            columns,
        })
    }
}

fn packed_block_len(pattern: SparsePattern) -> usize {
    (pattern.n() * index_bits(pattern.m()) as usize).div_ceil(8)
}

/// Packs `indices` LSB-first into `out`, which must be zeroable scratch.
fn pack_indices(indices: &[u8], bits: u32, out: &mut [u8]) {
    out.fill(0);
    let mut pos = 0usize;
    for &idx in indices {
        for b in 0..bits {
            if (idx >> b) & 1 == 1 {
                out[pos / 8] |= 1 << (pos % 8);
            }
            pos += 1;
        }
    }
}

fn unpack_indices(packed: &[u8], bits: u32, count: usize, out: &mut Vec<u8>) {
    let mut pos = 0usize;
    for _ in 0..count {
        let mut idx = 0u16;
        for b in 0..bits {
            if (packed[pos / 8] >> (pos % 8)) & 1 == 1 {
                idx |= 1 << b;
            }
            pos += 1;
        }
        // bits <= 8 because m <= 255
        out.push(idx as u8);
    }
}

pub fn compress(w: &WeightTensor4, pattern: SparsePattern) -> Result<CompressedNM> {
    let (n, m) = (pattern.n(), pattern.m());
    if m > u8::MAX as usize {
        return Err(Error::InvalidParams(format!("block width {m} exceeds 255")));
    }
    let dims = w.dims();
    if dims.c_in % m != 0 {
        return Err(Error::DimensionMismatch(format!(
            "block width {m} does not divide c_in = {}",
            dims.c_in
        )));
    }
    let g_total = dims.len() / m;
    let mut values = Vec::with_capacity(g_total * n);
    let mut columns = Vec::with_capacity(g_total * n);
    let mut row = vec![0.0f64; m];
    let mut picked: Vec<usize> = Vec::with_capacity(m);
    for g in 0..g_total {
        for (j, slot) in row.iter_mut().enumerate() {
            let (o, i, h, kw) = block_to_tensor(dims, m, g, j);
            *slot = w.get(o, i, h, kw);
        }
        picked.clear();
        picked.extend((0..m).filter(|&j| row[j] != 0.0));
        if picked.len() > n {
            return Err(Error::PatternViolation {
                block: g,
                nonzeros: picked.len(),
                n,
            });
        }
        // pad with explicit zeros at the smallest unused columns
        let mut free = (0..m).filter(|j| row[*j] == 0.0);
        while picked.len() < n {
            picked.push(free.next().expect("n < m leaves a free column"));
        }
        picked.sort_unstable();
        for &j in &picked {
            let v = row[j] as f32;
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "value {} in block {g} overflows f32 storage",
                    row[j]
                )));
            }
            values.push(v);
            columns.push(j as u8);
        }
    }
    Ok(CompressedNM {
        pattern,
        dims,
        values,
        columns,
    })
}

pub fn decompress(c: &CompressedNM) -> WeightTensor4 {
    let dims = c.dims;
    let m = c.pattern.m();
    let mut out = vec![0.0f64; dims.len()];
    for g in 0..c.blocks() {
        for (v, &j) in c.block_values(g).iter().zip(c.block_columns(g)) {
            let (o, i, h, kw) = block_to_tensor(dims, m, g, j as usize);
            out[dims.offset(o, i, h, kw)] = *v as f64;
        }
    }
    WeightTensor4::new(dims, out).expect("decoded values are finite")
}
