//! A small feed-forward network (linear and conv layers, ReLU, softmax
//! cross-entropy) with hand-written gradients, trained under N:M masks.

mod data;
mod forward;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::conv_output_size;
use crate::mask::SparsePattern;
use crate::tensor::{Dims4, WeightTensor4};

pub use data::{parse_idx, two_gaussians, two_spirals, Dataset, IdxArray};
pub use forward::{cross_entropy, effective_weights, masked_forward, ste_backward, ForwardCache, Gradients};
pub use train::{
    compute_masks, export_folded, fit, sr_ste_step, EpochMetrics, FitReport, FoldedLayer, LrSchedule, OptimizerState,
    TrainConfig, Trainer,
};

/// `(channels, height, width)` of one sample. Tabular data uses `(features, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn flat(features: usize) -> Self {
        Self::new(features, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Linear,
    Conv { stride: usize, padding: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub weight: WeightTensor4,
    pub bias: Vec<f64>,
    /// Whether the N:M constraint is applied to this layer.
    pub eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Fully connected stack with the given hidden widths.
    Mlp { hidden: Vec<usize> },
    /// 3x3 stride-2 convolutions with the given channel counts, then a linear head.
    Cnn { channels: Vec<usize> },
}

impl Architecture {
    pub fn reference_mlp() -> Self {
        Architecture::Mlp { hidden: vec![32, 32] }
    }

    pub fn reference_cnn() -> Self {
        Architecture::Cnn { channels: vec![16, 32] }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = match self {
            Architecture::Mlp { hidden } => hidden,
            Architecture::Cnn { channels } => {
                if channels.is_empty() {
                    return Err(Error::Config("cnn needs at least one conv layer".into()));
                }
                channels
            }
        };
        if widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input: InputShape,
    classes: usize,
    layers: Vec<Layer>,
}

impl Model {
    /// Assembles a model, checking that consecutive layer shapes chain.
    pub fn new(input: InputShape, layers: Vec<Layer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Config("model needs at least one layer".into()));
        };
        let classes = last.weight.dims().c_out;
        let model = Self { input, classes, layers };
        let last_out = model.layer_shapes()?.last().copied().expect("non-empty").1;
        if last_out.height != 1 || last_out.width != 1 {
            return Err(Error::Config("the last layer must produce a flat vector".into()));
        }
        Ok(model)
    }

    pub fn build(
        arch: &Architecture,
        input: InputShape,
        classes: usize,
        pattern: Option<SparsePattern>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        arch.validate()?;
        if classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let mut layers = Vec::new();
        match arch {
            Architecture::Mlp { hidden } => {
                let mut prev = input.len();
                for (i, &h) in hidden.iter().chain(std::iter::once(&classes)).enumerate() {
                    layers.push(init_layer(
                        format!("fc{}", i + 1),
                        LayerKind::Linear,
                        Dims4::linear(h, prev),
                        rng,
                    ));
                    prev = h;
                }
            }
            Architecture::Cnn { channels } => {
                let mut shape = input;
                for (i, &c) in channels.iter().enumerate() {
                    let kind = LayerKind::Conv { stride: 2, padding: 1 };
                    layers.push(init_layer(
                        format!("conv{}", i + 1),
                        kind,
                        Dims4::new(c, shape.channels, 3, 3),
                        rng,
                    ));
                    let out =
                        |s| conv_output_size(s, 3, 2, 1).ok_or_else(|| Error::Config("input too small for cnn".into()));
                    shape = InputShape::new(c, out(shape.height)?, out(shape.width)?);
                }
                layers.push(init_layer(
                    "fc".into(),
                    LayerKind::Linear,
                    Dims4::linear(classes, shape.len()),
                    rng,
                ));
            }
        }
        let mut model = Self::new(input, layers)?;
        model.set_eligibility(pattern);
        Ok(model)
    }

    /// First and last layers stay dense, as do layers whose input channels
    /// are not a multiple of the block width.
    pub fn set_eligibility(&mut self, pattern: Option<SparsePattern>) {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.eligible = match pattern {
                Some(p) => i != 0 && i != last && layer.weight.dims().c_in % p.m() == 0,
                None => false,
            };
        }
    }

    pub fn input(&self) -> InputShape {
        self.input
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.dims().len() + l.bias.len()).sum()
    }

    /// `(input, output)` shape of every layer.
    pub fn layer_shapes(&self) -> Result<Vec<(InputShape, InputShape)>> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let d = layer.weight.dims();
            if layer.bias.len() != d.c_out {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} has {} biases for {} outputs",
                    layer.name,
                    layer.bias.len(),
                    d.c_out
                )));
            }
            let next = match layer.kind {
                LayerKind::Linear => {
                    if d.k_h != 1 || d.k_w != 1 || d.c_in != shape.len() {
                        return Err(Error::ShapeMismatch(format!(
                            "linear layer {} expects {} inputs, got {}",
                            layer.name,
                            d.c_in,
                            shape.len()
                        )));
                    }
                    InputShape::flat(d.c_out)
                }
                LayerKind::Conv { stride, padding } => {
                    if d.c_in != shape.channels {
                        return Err(Error::ShapeMismatch(format!(
                            "conv layer {} expects {} channels, got {}",
                            layer.name, d.c_in, shape.channels
                        )));
                    }
                    let oh = conv_output_size(shape.height, d.k_h, stride, padding);
                    let ow = conv_output_size(shape.width, d.k_w, stride, padding);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => InputShape::new(d.c_out, oh, ow),
                        _ => {
                            return Err(Error::ShapeMismatch(format!(
                                "conv layer {} does not fit its input",
                                layer.name
                            )))
                        }
                    }
                }
            };
            out.push((shape, next));
            shape = next;
        }
        Ok(out)
    }
}

// fan-in scaled uniform, bound sqrt(6 / fan_in); biases start at zero
fn init_layer(name: String, kind: LayerKind, dims: Dims4, rng: &mut impl Rng) -> Layer {
    let bound = (6.0 / dims.fan_in() as f64).sqrt();
    let values = (0..dims.len()).map(|_| rng.random_range(-bound..bound)).collect();
    Layer {
        name,
        kind,
        weight: WeightTensor4::new(dims, values).expect("finite init"),
        bias: vec![0.0; dims.c_out],
        eligible: false,
    }
}
