use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::SparsePattern;
use crate::tensor::{rearrange_to_blocks, WeightTensor4};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplianceReport {
    pub blocks: usize,
    pub violating_blocks: usize,
    pub first_violation: Option<usize>,
    pub zeros: usize,
    pub elements: usize,
    /// Fraction of exactly-zero weights.
    pub sparsity: f64,
}

impl ComplianceReport {
    pub fn is_compliant(&self) -> bool {
        self.violating_blocks == 0
    }
}

/// Counts blocks holding more than `n` nonzeros.
pub fn verify(w: &WeightTensor4, pattern: SparsePattern) -> Result<ComplianceReport> {
    if w.dims().c_in % pattern.m() != 0 {
        return Err(Error::DimensionMismatch(format!(
            "block width {} does not divide c_in = {}",
            pattern.m(),
            w.dims().c_in
        )));
    }
    let bm = rearrange_to_blocks(w, pattern.m())?;
    let mut violating_blocks = 0;
    let mut first_violation = None;
    let mut zeros = 0;
    for (g, row) in bm.rows().enumerate() {
        let nz = row.iter().filter(|v| **v != 0.0).count();
        zeros += row.len() - nz;
        if nz > pattern.n() {
            violating_blocks += 1;
            first_violation.get_or_insert(g);
        }
    }
    let elements = w.dims().len();
    Ok(ComplianceReport {
        blocks: bm.g(),
        violating_blocks,
        first_violation,
        zeros,
        elements,
        sparsity: zeros as f64 / elements as f64,
    })
}
