//! Dense weight containers and the block rearrangement.
//!
//! A convolution weight of shape `(c_out, c_in, k_h, k_w)` is viewed as a
//! `g x m` matrix whose rows ("blocks") hold `m` consecutive input channels at
//! a fixed `(c_out, k_h, k_w)` position. Blocks are enumerated in
//! `(c_out, k_h, k_w, c_in / m)` lexicographic order with the channel-block
//! index fastest, so all blocks of one output filter are contiguous.
//!
//! Fully connected layers use `k_h = k_w = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims4 {
    pub c_out: usize,
    pub c_in: usize,
    pub k_h: usize,
    pub k_w: usize,
}

impl Dims4 {
    pub const fn new(c_out: usize, c_in: usize, k_h: usize, k_w: usize) -> Self {
        Self { c_out, c_in, k_h, k_w }
    }

    /// Shape of a fully connected layer mapping `inputs` features to `outputs`.
    pub const fn linear(outputs: usize, inputs: usize) -> Self {
        Self::new(outputs, inputs, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.c_out * self.c_in * self.k_h * self.k_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of columns when the tensor is read as a `c_out x (c_in*k_h*k_w)` matrix.
    pub fn fan_in(&self) -> usize {
        self.c_in * self.k_h * self.k_w
    }

    #[inline]
    pub fn offset(&self, o: usize, i: usize, h: usize, w: usize) -> usize {
        ((o * self.c_in + i) * self.k_h + h) * self.k_w + w
    }

    #[inline]
    pub fn coord(&self, offset: usize) -> (usize, usize, usize, usize) {
        let w = offset % self.k_w;
        let rest = offset / self.k_w;
        let h = rest % self.k_h;
        let rest = rest / self.k_h;
        let i = rest % self.c_in;
        (rest / self.c_in, i, h, w)
    }

    fn check_positive(&self) -> Result<()> {
        if self.c_out == 0 || self.c_in == 0 || self.k_h == 0 || self.k_w == 0 {
            return Err(Error::DimensionMismatch(format!(
                "all dimensions must be positive, got {self}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.c_out, self.c_in, self.k_h, self.k_w)
    }
}

/// Dense 4D weight tensor, row-major in `(c_out, c_in, k_h, k_w)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor4 {
    dims: Dims4,
    values: Vec<f64>,
}

impl WeightTensor4 {
    pub fn new(dims: Dims4, values: Vec<f64>) -> Result<Self> {
        dims.check_positive()?;
        if values.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "tensor {dims} needs {} values, got {}",
                dims.len(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Dims4) -> Result<Self> {
        Self::new(dims, vec![0.0; dims.len()])
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for in-place optimizer updates. Callers must keep values finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, o: usize, i: usize, h: usize, w: usize) -> f64 {
        self.values[self.dims.offset(o, i, h, w)]
    }

    pub fn nonzeros(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

/// The `g x m` block view of a weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    g: usize,
    m: usize,
    values: Vec<f64>,
    origin: Dims4,
}

impl BlockMatrix {
    /// Builds a block matrix directly from row-major block values.
    pub fn from_rows(origin: Dims4, m: usize, values: Vec<f64>) -> Result<Self> {
        check_block_width(origin, m)?;
        if values.len() != origin.len() {
            return Err(Error::DimensionMismatch(format!(
                "block matrix for {origin} needs {} values, got {}",
                origin.len(),
                values.len()
            )));
        }
        Ok(Self {
            g: origin.len() / m,
            m,
            values,
            origin,
        })
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn origin_dims(&self) -> Dims4 {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, g: usize) -> &[f64] {
        &self.values[g * self.m..(g + 1) * self.m]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.m)
    }

    pub fn map_rows<F>(&self, mut f: F) -> Self
    where
        F: FnMut(usize, &[f64], &mut [f64]),
    {
        let mut out = vec![0.0; self.values.len()];
        for (g, (src, dst)) in self
            .values
            .chunks_exact(self.m)
            .zip(out.chunks_exact_mut(self.m))
            .enumerate()
        {
            f(g, src, dst);
        }
        Self { values: out, ..*self }
    }
}

fn check_block_width(dims: Dims4, m: usize) -> Result<()> {
    dims.check_positive()?;
    if m < 2 {
        return Err(Error::DimensionMismatch(format!(
            "block width must be at least 2, got {m}"
        )));
    }
    if dims.c_in % m != 0 {
        return Err(Error::DimensionMismatch(format!(
            "block width {m} does not divide c_in = {}",
            dims.c_in
        )));
    }
    Ok(())
}

/// Maps a 4D coordinate to its `(block, column)` position. Requires `m | c_in`.
#[inline]
pub fn tensor_to_block(dims: Dims4, m: usize, o: usize, i: usize, h: usize, w: usize) -> (usize, usize) {
    let blocks_per_pos = dims.c_in / m;
    let g = ((o * dims.k_h + h) * dims.k_w + w) * blocks_per_pos + i / m;
    (g, i % m)
}

/// Inverse of [`tensor_to_block`].
#[inline]
pub fn block_to_tensor(dims: Dims4, m: usize, g: usize, j: usize) -> (usize, usize, usize, usize) {
    let blocks_per_pos = dims.c_in / m;
    let cb = g % blocks_per_pos;
    let rest = g / blocks_per_pos;
    let w = rest % dims.k_w;
    let rest = rest / dims.k_w;
    let h = rest % dims.k_h;
    (rest / dims.k_h, cb * m + j, h, w)
}

pub fn rearrange_to_blocks(w: &WeightTensor4, m: usize) -> Result<BlockMatrix> {
    let dims = w.dims;
    check_block_width(dims, m)?;
    let mut out = Vec::with_capacity(dims.len());
    let blocks_per_pos = dims.c_in / m;
    for o in 0..dims.c_out {
        for h in 0..dims.k_h {
            for kw in 0..dims.k_w {
                for cb in 0..blocks_per_pos {
                    for j in 0..m {
                        out.push(w.values[dims.offset(o, cb * m + j, h, kw)]);
                    }
                }
            }
        }
    }
    Ok(BlockMatrix {
        g: dims.len() / m,
        m,
        values: out,
        origin: dims,
    })
}

pub fn rearrange_from_blocks(bm: &BlockMatrix) -> Result<WeightTensor4> {
    let dims = bm.origin;
    check_block_width(dims, bm.m)?;
    if bm.g * bm.m != dims.len() || bm.values.len() != dims.len() {
        return Err(Error::DimensionMismatch(format!(
            "block matrix {}x{} does not match origin {dims}",
            bm.g, bm.m
        )));
    }
    let mut out = vec![0.0; dims.len()];
    for (g, row) in bm.rows().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let (o, i, h, w) = block_to_tensor(dims, bm.m, g, j);
            out[dims.offset(o, i, h, w)] = *v;
        }
    }
    WeightTensor4::new(dims, out)
}

pub fn block_l1_norms(bm: &BlockMatrix) -> Vec<f64> {
    bm.rows().map(|row| row.iter().map(|v| v.abs()).sum()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisTag {
    Filter,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AxisIndex {
    Filter(usize),
    Kernel(usize, usize),
}

impl AxisIndex {
    pub fn tag(&self) -> AxisTag {
        match self {
            AxisIndex::Filter(_) => AxisTag::Filter,
            AxisIndex::Kernel(..) => AxisTag::Kernel,
        }
    }
}

/// One query group of the multi-axis importance measure, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisVector {
    pub values: Vec<f64>,
    pub index: AxisIndex,
    dims: Dims4,
}

impl AxisVector {
    pub fn tag(&self) -> AxisTag {
        self.index.tag()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// 4D coordinate of position `pos` in the source tensor.
    pub fn coord(&self, pos: usize) -> (usize, usize, usize, usize) {
        let d = self.dims;
        match self.index {
            AxisIndex::Filter(o) => {
                let w = pos % d.k_w;
                let h = (pos / d.k_w) % d.k_h;
                (o, pos / (d.k_w * d.k_h), h, w)
            }
            AxisIndex::Kernel(h, w) => (pos / d.c_in, pos % d.c_in, h, w),
        }
    }

    /// Flat offsets into the source tensor, in vector order.
    pub fn offsets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).map(|pos| {
            let (o, i, h, w) = self.coord(pos);
            self.dims.offset(o, i, h, w)
        })
    }
}

pub fn axis_group_filter(w: &WeightTensor4, i: usize) -> Result<AxisVector> {
    let d = w.dims;
    if i >= d.c_out {
        return Err(Error::DimensionMismatch(format!(
            "filter index {i} out of range for c_out = {}",
            d.c_out
        )));
    }
    let span = d.fan_in();
    Ok(AxisVector {
        values: w.values[i * span..(i + 1) * span].to_vec(),
        index: AxisIndex::Filter(i),
        dims: d,
    })
}

pub fn axis_group_kernel(w: &WeightTensor4, k1: usize, k2: usize) -> Result<AxisVector> {
    let d = w.dims;
    if k1 >= d.k_h || k2 >= d.k_w {
        return Err(Error::DimensionMismatch(format!(
            "kernel position ({k1}, {k2}) out of range for {}x{}",
            d.k_h, d.k_w
        )));
    }
    let mut values = Vec::with_capacity(d.c_out * d.c_in);
    for o in 0..d.c_out {
        for i in 0..d.c_in {
            values.push(w.values[d.offset(o, i, k1, k2)]);
        }
    }
    Ok(AxisVector {
        values,
        index: AxisIndex::Kernel(k1, k2),
        dims: d,
    })
}
