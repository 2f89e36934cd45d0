use super::{
    filter_axis_scores, hard_mask, hard_mask_keep_width, kept_width, AxisScores, BlockOrdering, HardMask,
    SparsePattern, SparsityMode,
};
use crate::error::{Error, Result};
use crate::tensor::{rearrange_from_blocks, rearrange_to_blocks, AxisTag, BlockMatrix, WeightTensor4};

/// Nonnegative `g x m` mask sharing the support of its hard mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    g: usize,
    m: usize,
    values: Vec<f64>,
}

impl SoftMask {
    pub fn from_values(g: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != g * m {
            return Err(Error::ShapeMismatch(format!(
                "soft mask {g}x{m} needs {} values, got {}",
                g * m,
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParams("soft mask values must be finite and >= 0".into()));
        }
        Ok(Self { g, m, values })
    }

    /// The hard mask itself read as a soft mask (plain magnitude pruning).
    pub fn from_hard(hard: &HardMask) -> Self {
        Self {
            g: hard.g(),
            m: hard.m(),
            values: hard.bits().iter().map(|&b| b as f64).collect(),
        }
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, g: usize) -> &[f64] {
        &self.values[g * self.m..(g + 1) * self.m]
    }
}

/// `s = b * (1 + RA(filter scores) + RA(kernel scores))`.
pub fn soft_mask(hard: &HardMask, sf: &AxisScores, sk: &AxisScores) -> Result<SoftMask> {
    if sf.tag != AxisTag::Filter || sk.tag != AxisTag::Kernel {
        return Err(Error::ShapeMismatch(
            "expected filter-axis and kernel-axis scores".into(),
        ));
    }
    if sf.scores.dims() != sk.scores.dims() {
        return Err(Error::ShapeMismatch(format!(
            "filter scores {} vs kernel scores {}",
            sf.scores.dims(),
            sk.scores.dims()
        )));
    }
    let f = rearrange_to_blocks(&sf.scores, hard.m())?;
    let k = rearrange_to_blocks(&sk.scores, hard.m())?;
    if f.g() != hard.g() {
        return Err(Error::ShapeMismatch(format!(
            "scores rearrange to {} blocks, hard mask has {}",
            f.g(),
            hard.g()
        )));
    }
    let values = hard
        .bits()
        .iter()
        .zip(f.values().iter().zip(k.values()))
        .map(|(&b, (fs, ks))| if b == 0 { 0.0 } else { 1.0 + fs + ks })
        .collect();
    Ok(SoftMask {
        g: hard.g(),
        m: hard.m(),
        values,
    })
}

/// Elementwise product of weights and mask, in block layout.
pub fn fold(bm: &BlockMatrix, soft: &SoftMask) -> Result<BlockMatrix> {
    if bm.g() != soft.g || bm.m() != soft.m {
        return Err(Error::ShapeMismatch(format!(
            "weights {}x{} vs mask {}x{}",
            bm.g(),
            bm.m(),
            soft.g,
            soft.m
        )));
    }
    Ok(bm.map_rows(|g, src, dst| {
        for ((d, s), k) in dst.iter_mut().zip(src).zip(soft.row(g)) {
            *d = s * k;
        }
    }))
}

/// Masks of one layer for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMasks {
    pub hard: HardMask,
    pub soft: SoftMask,
}

impl LayerMasks {
    /// Folded weights `s * m`, rearranged back to 4D.
    pub fn apply(&self, w: &WeightTensor4) -> Result<WeightTensor4> {
        let bm = rearrange_to_blocks(w, self.hard.m())?;
        rearrange_from_blocks(&fold(&bm, &self.soft)?)
    }
}

/// Recomputes a layer's masks from scratch: reset, select blocks and
/// positions, query both axes, combine.
pub fn layer_masks(
    w: &WeightTensor4,
    pattern: SparsePattern,
    delta: f64,
    ordering: BlockOrdering,
    mode: SparsityMode,
    tau: f64,
) -> Result<LayerMasks> {
    let bm = rearrange_to_blocks(w, pattern.m())?;
    let hard = match mode {
        SparsityMode::BlockPercentage => hard_mask(&bm, pattern, delta, ordering)?,
        SparsityMode::BlockWidth => hard_mask_keep_width(&bm, pattern, kept_width(delta, pattern))?,
    };
    let sf = filter_axis_scores(w, pattern, tau)?;
    let sk = super::kernel_axis_scores(w, pattern, tau)?;
    let soft = soft_mask(&hard, &sf, &sk)?;
    Ok(LayerMasks { hard, soft })
}
