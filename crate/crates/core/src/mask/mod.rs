//! Hard N:M masks, magnitude importance scores and soft masks.

mod hard;
mod importance;
mod soft;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hard::{
    arg_bottom_per_block, block_count_for_delta, hard_mask, hard_mask_keep_width, kept_width, select_sparsify_blocks,
    HardMask,
};
pub use importance::{
    filter_axis_scores, importance_kept_set, importance_scores, importance_threshold, kernel_axis_scores, sigmoid,
    AxisScores, ImportanceParams, Threshold, DEFAULT_TAU,
};
pub use soft::{fold, layer_masks, soft_mask, LayerMasks, SoftMask};

/// At most `n` nonzero weights in every block of `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PatternRepr", into = "PatternRepr")]
pub struct SparsePattern {
    n: usize,
    m: usize,
}

impl SparsePattern {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 || n >= m {
            return Err(Error::InvalidPattern { n, m });
        }
        Ok(Self { n, m })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Fraction of each block that is pruned, `(m - n) / m`.
    pub fn sparse_rate(&self) -> f64 {
        (self.m - self.n) as f64 / self.m as f64
    }

    pub fn pruned_per_block(&self) -> usize {
        self.m - self.n
    }
}

impl fmt::Display for SparsePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

impl FromStr for SparsePattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (n, m) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("pattern {s:?} is not of the form n:m")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("pattern {s:?} is not of the form n:m")))
        };
        Self::new(parse(n)?, parse(m)?)
    }
}

#[derive(Serialize, Deserialize)]
struct PatternRepr {
    n: usize,
    m: usize,
}

impl TryFrom<PatternRepr> for SparsePattern {
    type Error = Error;

    fn try_from(r: PatternRepr) -> Result<Self> {
        SparsePattern::new(r.n, r.m)
    }
}

impl From<SparsePattern> for PatternRepr {
    fn from(p: SparsePattern) -> Self {
        PatternRepr { n: p.n, m: p.m }
    }
}

/// Which blocks receive the N:M constraint first as the schedule ramps up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrdering {
    /// Largest l1 norm first.
    #[default]
    L1Descending,
    /// Smallest l1 norm first (the "inverse" ablation).
    L1Ascending,
}

/// How the incremental schedule is realized on the mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMode {
    /// A growing fraction of blocks is pruned to n of m.
    #[default]
    BlockPercentage,
    /// Every block keeps a shrinking width, from m down to n.
    BlockWidth,
}
