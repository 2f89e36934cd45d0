//! Incremental sparsity schedules: the fraction of blocks under the N:M
//! constraint as a function of the epoch.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{kept_width, BlockOrdering, SparsePattern, SparsityMode};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Cubic,
    Linear,
    #[serde(rename = "cos", alias = "cosine")]
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cubic" => Ok(Self::Cubic),
            "linear" => Ok(Self::Linear),
            "cos" | "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!("unknown schedule kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cubic => "cubic",
            Self::Linear => "linear",
            Self::Cosine => "cos",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub t_i: u32,
    pub t_f: u32,
    #[serde(default)]
    pub kind: ScheduleKind,
    #[serde(default)]
    pub ordering: BlockOrdering,
    #[serde(default)]
    pub mode: SparsityMode,
}

impl Schedule {
    pub fn new(t_i: u32, t_f: u32, kind: ScheduleKind) -> Result<Self> {
        let s = Self {
            t_i,
            t_f,
            kind,
            ordering: BlockOrdering::default(),
            mode: SparsityMode::default(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_ordering(mut self, ordering: BlockOrdering) -> Self {
        self.ordering = ordering;
        self
    }

    pub fn with_mode(mut self, mode: SparsityMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_i >= self.t_f {
            return Err(Error::InvalidSchedule {
                start: self.t_i,
                end: self.t_f,
            });
        }
        Ok(())
    }

    /// Fraction of blocks under the constraint at epoch `t`.
    pub fn delta(&self, t: f64) -> f64 {
        let (ti, tf) = (self.t_i as f64, self.t_f as f64);
        if t <= ti {
            return 0.0;
        }
        if t >= tf {
            return 1.0;
        }
        let x = (t - ti) / (tf - ti);
        let d = match self.kind {
            ScheduleKind::Cubic => 1.0 - (1.0 - x).powi(3),
            ScheduleKind::Linear => x,
            ScheduleKind::Cosine => 1.0 - 0.5 * (1.0 + (x * PI).cos()),
        };
        d.clamp(0.0, 1.0)
    }

    /// Per-block kept width at epoch `t` for [`SparsityMode::BlockWidth`].
    pub fn kept_width(&self, t: f64, pattern: SparsePattern) -> usize {
        kept_width(self.delta(t), pattern)
    }
}

/// `delta` for a schedule, erroring on an invalid one.
pub fn delta(t: f64, sched: &Schedule) -> Result<f64> {
    sched.validate()?;
    Ok(sched.delta(t))
}
