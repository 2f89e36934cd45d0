use std::cmp::Ordering;

use rayon::prelude::*;

use super::{BlockOrdering, SparsePattern};
use crate::error::{Error, Result};
use crate::tensor::{block_l1_norms, BlockMatrix};

/// Binary `g x m` mask. Rows listed in `sparsified` keep exactly `keep` entries;
/// every other row is all ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardMask {
    g: usize,
    m: usize,
    keep: usize,
    bits: Vec<u8>,
    sparsified: Vec<usize>,
}

impl HardMask {
    pub fn ones(g: usize, m: usize) -> Self {
        Self {
            g,
            m,
            keep: m,
            bits: vec![1; g * m],
            sparsified: Vec::new(),
        }
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Entries kept in each sparsified row.
    pub fn keep(&self) -> usize {
        self.keep
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn row(&self, g: usize) -> &[u8] {
        &self.bits[g * self.m..(g + 1) * self.m]
    }

    /// Sorted indices of the blocks the constraint was applied to.
    pub fn sparsified(&self) -> &[usize] {
        &self.sparsified
    }

    pub fn zeros(&self) -> usize {
        self.bits.iter().filter(|b| **b == 0).count()
    }

    /// Fraction of masked-out entries.
    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.zeros() as f64 / self.bits.len() as f64
        }
    }
}

fn by_magnitude_then_index(row: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| row[*a].abs().total_cmp(&row[*b].abs()).then(a.cmp(b))
}

/// Indices of the `count` smallest magnitudes in `row`, ascending.
/// Among equal magnitudes the lower index is pruned first.
fn bottom_indices(row: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_unstable_by(by_magnitude_then_index(row));
    order.truncate(count);
    order.sort_unstable();
    order
}

fn check_width(bm: &BlockMatrix, m: usize) -> Result<()> {
    if bm.m() != m {
        return Err(Error::ShapeMismatch(format!(
            "block width {} does not match pattern width {m}",
            bm.m()
        )));
    }
    Ok(())
}

/// Per block, the indices of the `m - n` smallest magnitudes (increasing order).
pub fn arg_bottom_per_block(bm: &BlockMatrix, pattern: SparsePattern) -> Result<Vec<Vec<usize>>> {
    check_width(bm, pattern.m())?;
    let count = pattern.pruned_per_block();
    Ok(bm
        .values()
        .par_chunks_exact(bm.m())
        .map(|row| bottom_indices(row, count))
        .collect())
}

/// `ceil(g * delta)`, snapping products within rounding noise of an integer.
pub fn block_count_for_delta(g: usize, delta: f64) -> usize {
    let delta = if delta.is_nan() { 0.0 } else { delta.clamp(0.0, 1.0) };
    let x = g as f64 * delta;
    let nearest = x.round();
    let count = if nearest >= 1.0 && (x - nearest).abs() <= 1e-9 * nearest {
        nearest
    } else {
        x.ceil()
    };
    (count as usize).min(g)
}

/// Selects the `ceil(G * delta)` blocks to constrain, returned in increasing order.
pub fn select_sparsify_blocks(norms: &[f64], delta: f64, ordering: BlockOrdering) -> Vec<usize> {
    let count = block_count_for_delta(norms.len(), delta);
    let mut order: Vec<usize> = (0..norms.len()).collect();
    match ordering {
        BlockOrdering::L1Descending => order.sort_unstable_by(|a, b| norms[*b].total_cmp(&norms[*a]).then(a.cmp(b))),
        BlockOrdering::L1Ascending => order.sort_unstable_by(|a, b| norms[*a].total_cmp(&norms[*b]).then(a.cmp(b))),
    }
    order.truncate(count);
    order.sort_unstable();
    order
}

pub fn hard_mask(bm: &BlockMatrix, pattern: SparsePattern, delta: f64, ordering: BlockOrdering) -> Result<HardMask> {
    check_width(bm, pattern.m())?;
    let m = bm.m();
    let norms = block_l1_norms(bm);
    let sparsified = select_sparsify_blocks(&norms, delta, ordering);
    let mut bits = vec![1u8; bm.g() * m];
    let pruned = pattern.pruned_per_block();
    for &g in &sparsified {
        for j in bottom_indices(bm.row(g), pruned) {
            bits[g * m + j] = 0;
        }
    }
    Ok(HardMask {
        g: bm.g(),
        m,
        keep: pattern.n(),
        bits,
        sparsified,
    })
}

/// Every block keeps its `keep` largest magnitudes.
pub fn hard_mask_keep_width(bm: &BlockMatrix, pattern: SparsePattern, keep: usize) -> Result<HardMask> {
    check_width(bm, pattern.m())?;
    let m = bm.m();
    if keep < pattern.n() || keep > m {
        return Err(Error::InvalidParams(format!(
            "kept width {keep} outside [{}, {m}]",
            pattern.n()
        )));
    }
    if keep == m {
        return Ok(HardMask::ones(bm.g(), m));
    }
    let mut bits = vec![1u8; bm.g() * m];
    bits.par_chunks_exact_mut(m)
        .zip(bm.values().par_chunks_exact(m))
        .for_each(|(dst, row)| {
            for j in bottom_indices(row, m - keep) {
                dst[j] = 0;
            }
        });
    Ok(HardMask {
        g: bm.g(),
        m,
        keep,
        bits,
        sparsified: (0..bm.g()).collect(),
    })
}

/// Per-block kept width for the block-width mode: `m - round(delta * (m - n))`.
pub fn kept_width(delta: f64, pattern: SparsePattern) -> usize {
    let delta = if delta.is_nan() { 0.0 } else { delta.clamp(0.0, 1.0) };
    // f64::round rounds half away from zero
    let removed = (delta * pattern.pruned_per_block() as f64).round() as usize;
    pattern.m() - removed.min(pattern.pruned_per_block())
}
