//! Magnitude importance relative to a data-dependent threshold.
//!
//! For a vector `v` and sparse rate `p`, the `k = (1 - p) * len` largest
//! magnitudes are "kept". The threshold is the midpoint between the smallest
//! kept magnitude and the largest pruned one, and each entry scores
//! `sigmoid((|v_i| - threshold) / tau)`.

use rayon::prelude::*;

use super::SparsePattern;
use crate::error::{Error, Result};
use crate::tensor::{axis_group_kernel, AxisTag, Dims4, WeightTensor4};

/// The only temperature exhibited for the method; global across layers.
pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceParams {
    p: f64,
    tau: f64,
}

impl ImportanceParams {
    pub fn new(p: f64, tau: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidParams(format!("sparse rate {p} outside [0, 1)")));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidParams(format!("temperature {tau} must be positive")));
        }
        Ok(Self { p, tau })
    }

    pub fn for_pattern(pattern: SparsePattern, tau: f64) -> Result<Self> {
        Self::new(pattern.sparse_rate(), tau)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    /// Smallest kept magnitude.
    pub high: f64,
    /// Largest pruned magnitude.
    pub low: f64,
    pub sigma: f64,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn keep_count(len: usize, p: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidParams(format!("sparse rate {p} outside [0, 1)")));
    }
    if len < 2 {
        return Err(Error::DegenerateLength { keep: 0, len });
    }
    let exact = (1.0 - p) * len as f64;
    let keep = exact.round();
    if (exact - keep).abs() > 1e-9 * len.max(1) as f64 {
        return Err(Error::InvalidParams(format!(
            "(1 - p) * len = {exact} is not an integer for p = {p}, len = {len}"
        )));
    }
    let keep = keep as usize;
    if keep == 0 || keep >= len {
        return Err(Error::DegenerateLength { keep, len });
    }
    Ok(keep)
}

fn threshold_for_keep(values: &[f64], keep: usize) -> Threshold {
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let high = mags[keep - 1];
    let low = mags[keep];
    Threshold {
        high,
        low,
        sigma: (high + low) / 2.0,
    }
}

pub fn importance_threshold(v: &[f64], p: f64) -> Result<Threshold> {
    let keep = keep_count(v.len(), p)?;
    Ok(threshold_for_keep(v, keep))
}

fn scores_with_keep(v: &[f64], keep: usize, tau: f64) -> Vec<f64> {
    let sigma = threshold_for_keep(v, keep).sigma;
    v.iter().map(|x| sigmoid((x.abs() - sigma) / tau)).collect()
}

pub fn importance_scores(v: &[f64], params: ImportanceParams) -> Result<Vec<f64>> {
    let keep = keep_count(v.len(), params.p)?;
    Ok(scores_with_keep(v, keep, params.tau))
}

/// Indices (increasing) that the threshold keeps: everything strictly above it,
/// then entries sitting exactly on it, highest index first, until `k` are kept.
pub fn importance_kept_set(v: &[f64], p: f64) -> Result<Vec<usize>> {
    let keep = keep_count(v.len(), p)?;
    let sigma = threshold_for_keep(v, keep).sigma;
    let mut kept: Vec<usize> = (0..v.len()).filter(|&i| v[i].abs() > sigma).collect();
    let mut on_threshold = (0..v.len()).rev().filter(|&i| v[i].abs() == sigma);
    while kept.len() < keep {
        match on_threshold.next() {
            Some(i) => kept.push(i),
            None => break,
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

/// Per-element importance of a tensor along one query axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisScores {
    pub tag: AxisTag,
    /// Same shape as the source tensor; entries in `(0, 1)`.
    pub scores: WeightTensor4,
}

fn check_axis_inputs(w: &WeightTensor4, pattern: SparsePattern, tau: f64) -> Result<ImportanceParams> {
    let d = w.dims();
    if d.c_in % pattern.m() != 0 {
        return Err(Error::DimensionMismatch(format!(
            "block width {} does not divide c_in = {}",
            pattern.m(),
            d.c_in
        )));
    }
    ImportanceParams::for_pattern(pattern, tau)
}

// With m | c_in, keep = n * len / m exactly.
fn keep_for(pattern: SparsePattern, len: usize) -> usize {
    len / pattern.m() * pattern.n()
}

pub fn filter_axis_scores(w: &WeightTensor4, pattern: SparsePattern, tau: f64) -> Result<AxisScores> {
    let params = check_axis_inputs(w, pattern, tau)?;
    let span = w.dims().fan_in();
    let keep = keep_for(pattern, span);
    let scores: Vec<f64> = w
        .values()
        .par_chunks_exact(span)
        .flat_map_iter(|filter| scores_with_keep(filter, keep, params.tau))
        .collect();
    Ok(AxisScores {
        tag: AxisTag::Filter,
        scores: WeightTensor4::new(w.dims(), scores)?,
    })
}

pub fn kernel_axis_scores(w: &WeightTensor4, pattern: SparsePattern, tau: f64) -> Result<AxisScores> {
    let params = check_axis_inputs(w, pattern, tau)?;
    let d: Dims4 = w.dims();
    let keep = keep_for(pattern, d.c_out * d.c_in);
    let positions: Vec<(usize, usize)> = (0..d.k_h).flat_map(|h| (0..d.k_w).map(move |kw| (h, kw))).collect();
    let per_position: Vec<(Vec<usize>, Vec<f64>)> = positions
        .par_iter()
        .map(|&(h, kw)| {
            let group = axis_group_kernel(w, h, kw).expect("kernel position in range");
            let s = scores_with_keep(&group.values, keep, params.tau);
            (group.offsets().collect(), s)
        })
        .collect();
    let mut scores = vec![0.0; d.len()];
    for (offsets, s) in per_position {
        for (off, v) in offsets.into_iter().zip(s) {
            scores[off] = v;
        }
    }
    Ok(AxisScores {
        tag: AxisTag::Kernel,
        scores: WeightTensor4::new(d, scores)?,
    })
}
