//! CPU kernels over the compressed format: sparse x dense GEMM and an
//! im2col-lowered convolution built on it.
//!
//! Accumulation is in f64 and each output row is produced by a single task,
//! so results do not depend on how rows are partitioned across threads.

use rayon::prelude::*;

use super::compressed::CompressedNM;
use crate::error::{Error, Result};

/// Row-major single-precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// `(channels, height, width)` activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "({channels}, {height}, {width}) tensor needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Output spatial size of a convolution, or `None` if the kernel does not fit.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `c x x` where `c` is read as a `c_out x (c_in * k_h * k_w)` matrix.
pub fn spmm(c: &CompressedNM, x: &Matrix) -> Result<Matrix> {
    let d = c.origin_dims();
    if x.rows != d.fan_in() {
        return Err(Error::DimensionMismatch(format!(
            "weight has {} columns, input has {} rows",
            d.fan_in(),
            x.rows
        )));
    }
    let m = c.pattern().m();
    let spatial = d.k_h * d.k_w;
    let blocks_per_pos = d.c_in / m;
    let blocks_per_filter = spatial * blocks_per_pos;
    let mut out = Matrix::zeros(d.c_out, x.cols);
    if x.cols == 0 {
        return Ok(out);
    }
    out.data.par_chunks_mut(x.cols).enumerate().for_each(|(o, out_row)| {
        let mut acc = vec![0.0f64; x.cols];
        for local in 0..blocks_per_filter {
            let g = o * blocks_per_filter + local;
            let pos = local / blocks_per_pos;
            let cb = local % blocks_per_pos;
            // column of in-block position j is base + j * spatial
            let base = cb * m * spatial + pos;
            for (&v, &j) in c.block_values(g).iter().zip(c.block_columns(g)) {
                if v == 0.0 {
                    continue;
                }
                let v = v as f64;
                let xr = x.row(base + j as usize * spatial);
                for (a, &xv) in acc.iter_mut().zip(xr) {
                    *a += v * xv as f64;
                }
            }
        }
        for (dst, a) in out_row.iter_mut().zip(acc) {
            *dst = a as f32;
        }
    });
    Ok(out)
}

/// Dense `a x x` with the same accumulation scheme as [`spmm`]; the baseline for benchmarks.
pub fn dense_gemm(a: &Matrix, x: &Matrix) -> Result<Matrix> {
    if a.cols != x.rows {
        return Err(Error::DimensionMismatch(format!(
            "inner dimensions {} and {} differ",
            a.cols, x.rows
        )));
    }
    let mut out = Matrix::zeros(a.rows, x.cols);
    if x.cols == 0 {
        return Ok(out);
    }
    out.data.par_chunks_mut(x.cols).enumerate().for_each(|(r, out_row)| {
        let mut acc = vec![0.0f64; x.cols];
        for (k, &av) in a.row(r).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let av = av as f64;
            for (s, &xv) in acc.iter_mut().zip(x.row(k)) {
                *s += av * xv as f64;
            }
        }
        for (dst, s) in out_row.iter_mut().zip(acc) {
            *dst = s as f32;
        }
    });
    Ok(out)
}

/// Lowers `input` to a `(c_in * k_h * k_w) x (out_h * out_w)` patch matrix.
pub fn im2col(
    input: &Tensor3,
    k_h: usize,
    k_w: usize,
    stride: usize,
    padding: usize,
) -> Result<(Matrix, usize, usize)> {
    let out_h = conv_output_size(input.height, k_h, stride, padding);
    let out_w = conv_output_size(input.width, k_w, stride, padding);
    let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
        return Err(Error::DimensionMismatch(format!(
            "kernel {k_h}x{k_w} with stride {stride}, padding {padding} does not fit input {}x{}",
            input.height, input.width
        )));
    };
    let cols = out_h * out_w;
    let mut m = Matrix::zeros(input.channels * k_h * k_w, cols);
    for c in 0..input.channels {
        for kh in 0..k_h {
            for kw in 0..k_w {
                let r = (c * k_h + kh) * k_w + kw;
                let row = &mut m.data[r * cols..(r + 1) * cols];
                for oy in 0..out_h {
                    let y = (oy * stride + kh) as isize - padding as isize;
                    if y < 0 || y >= input.height as isize {
                        continue;
                    }
                    for ox in 0..out_w {
                        let x = (ox * stride + kw) as isize - padding as isize;
                        if x < 0 || x >= input.width as isize {
                            continue;
                        }
                        row[oy * out_w + ox] = input.get(c, y as usize, x as usize);
                    }
                }
            }
        }
    }
    Ok((m, out_h, out_w))
}

pub fn conv2d_sparse(c: &CompressedNM, input: &Tensor3, stride: usize, padding: usize) -> Result<Tensor3> {
    let d = c.origin_dims();
    if input.channels != d.c_in {
        return Err(Error::DimensionMismatch(format!(
            "weight expects {} input channels, got {}",
            d.c_in, input.channels
        )));
    }
    let (patches, out_h, out_w) = im2col(input, d.k_h, d.k_w, stride, padding)?;
    let y = spmm(c, &patches)?;
    Tensor3::new(d.c_out, out_h, out_w, y.data)
}
