use std::time::Instant;

use serde::Serialize;

use super::compressed::{decompress, CompressedNM};
use super::kernels::{dense_gemm, spmm, Matrix};
use crate::error::{Error, Result};

/// Wall-clock comparison of the sparse kernel against a dense GEMM over the
/// decompressed weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: usize,
    pub inner: usize,
    pub cols: usize,
    pub repetitions: usize,
    pub sparse_secs: f64,
    pub dense_secs: f64,
    pub speedup: f64,
    pub dense_flops: u64,
    pub sparse_flops: u64,
    pub flop_reduction: f64,
    pub max_abs_diff: f32,
}

pub fn bench(c: &CompressedNM, x: &Matrix, repetitions: usize) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::InvalidParams("repetitions must be positive".into()));
    }
    let d = c.origin_dims();
    let dense_w = decompress(c);
    let dense = Matrix::new(
        d.c_out,
        d.fan_in(),
        dense_w.values().iter().map(|&v| v as f32).collect(),
    )?;

    // warm-up, and a correctness cross-check for the report
    let ys = spmm(c, x)?;
    let yd = dense_gemm(&dense, x)?;

    let t0 = Instant::now();
    for _ in 0..repetitions {
        std::hint::black_box(spmm(c, x)?);
    }
    let sparse_secs = t0.elapsed().as_secs_f64() / repetitions as f64;
    let t0 = Instant::now();
    for _ in 0..repetitions {
        std::hint::black_box(dense_gemm(&dense, x)?);
    }
    let dense_secs = t0.elapsed().as_secs_f64() / repetitions as f64;

    let dense_flops = 2 * (d.c_out * d.fan_in() * x.cols) as u64;
    let sparse_flops = 2 * (c.blocks() * c.pattern().n() * x.cols) as u64;
    Ok(BenchReport {
        rows: d.c_out,
        inner: d.fan_in(),
        cols: x.cols,
        repetitions,
        sparse_secs,
        dense_secs,
        speedup: if sparse_secs > 0.0 {
            dense_secs / sparse_secs
        } else {
            f64::INFINITY
        },
        dense_flops,
        sparse_flops,
        flop_reduction: dense_flops as f64 / sparse_flops.max(1) as f64,
        max_abs_diff: ys.max_abs_diff(&yd),
    })
}
