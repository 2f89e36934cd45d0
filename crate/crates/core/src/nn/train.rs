use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::forward::{masked_forward, ste_backward, Gradients};
use super::{LayerKind, Model};
use crate::error::{Error, Result};
use crate::mask::{layer_masks, LayerMasks, SparsePattern, DEFAULT_TAU};
use crate::schedule::{Schedule, ScheduleKind};
use crate::tensor::{rearrange_from_blocks, BlockMatrix, WeightTensor4};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the peak rate to zero over all iterations.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Decay applied to pruned coordinates.
    pub sr_ste_weight: f64,
    /// `None` trains a dense baseline.
    pub pattern: Option<SparsePattern>,
    pub schedule: Schedule,
    pub tau: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for a sparse run: cosine learning rate, SR-STE weight at twice the weight decay.
    pub fn new(pattern: Option<SparsePattern>, schedule: Schedule, epochs: u32) -> Self {
        let weight_decay = 5e-4;
        Self {
            epochs,
            batch_size: 64,
            lr: 0.1,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            weight_decay,
            sr_ste_weight: 2.0 * weight_decay,
            pattern,
            schedule,
            tau: DEFAULT_TAU,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(self.sr_ste_weight.is_finite() && self.sr_ste_weight >= 0.0) {
            return fail(format!("sr_ste_weight {} must be >= 0", self.sr_ste_weight));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return fail(format!("tau {} must be positive", self.tau));
        }
        self.schedule.validate()?;
        if self.pattern.is_some() && self.epochs <= self.schedule.t_f {
            return fail(format!(
                "epochs ({}) must exceed t_f ({}) so the final epoch is fully sparse",
                self.epochs, self.schedule.t_f
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: u64, total: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let x = iteration as f64 / total.max(1) as f64;
                0.5 * self.lr * (1.0 + (PI * x.min(1.0)).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(None, Schedule::new(0, 1, ScheduleKind::Cubic).expect("valid"), 2)
    }
}

/// Momentum buffers, one per weight and bias coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub weight_velocity: Vec<Vec<f64>>,
    pub bias_velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Self {
        Self {
            weight_velocity: model
                .layers()
                .iter()
                .map(|l| vec![0.0; l.weight.dims().len()])
                .collect(),
            bias_velocity: model.layers().iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn matches(&self, model: &Model) -> bool {
        self.weight_velocity.len() == model.layers().len()
            && self.bias_velocity.len() == model.layers().len()
            && model.layers().iter().enumerate().all(|(i, l)| {
                self.weight_velocity[i].len() == l.weight.dims().len() && self.bias_velocity[i].len() == l.bias.len()
            })
    }
}

/// Masks for every layer at sparsity fraction `delta`; `None` for dense layers.
pub fn compute_masks(
    model: &Model,
    pattern: Option<SparsePattern>,
    schedule: &Schedule,
    delta: f64,
    tau: f64,
) -> Result<Vec<Option<LayerMasks>>> {
    model
        .layers()
        .iter()
        .map(|layer| match pattern {
            Some(p) if layer.eligible => {
                layer_masks(&layer.weight, p, delta, schedule.ordering, schedule.mode, tau).map(Some)
            }
            _ => Ok(None),
        })
        .collect()
}

fn soft_in_tensor_order(w: &WeightTensor4, masks: &LayerMasks) -> Result<WeightTensor4> {
    let bm = BlockMatrix::from_rows(w.dims(), masks.soft.m(), masks.soft.values().to_vec())?;
    rearrange_from_blocks(&bm)
}

/// One SGD step with the sparse-refined regularizer.
///
/// Per weight, with `c = clip(s, 0, 1)` (`c = 1` on dense layers) the decay
/// coefficient is `d = weight_decay * c + sr_ste_weight * (1 - c)` and
///
/// ```text
/// v' = momentum * v + g + d * m
/// m' = (1 - lr * d) * m - lr * (momentum * v + g)
/// ```
///
/// which is `m - lr * v'` regrouped so that a coordinate with no gradient and
/// no momentum decays by exactly `(1 - lr * d)`.
pub fn sr_ste_step(
    model: &mut Model,
    grads: &Gradients,
    masks: &[Option<LayerMasks>],
    config: &TrainConfig,
    lr: f64,
    state: &mut OptimizerState,
) -> Result<()> {
    let layers = model.layers().len();
    if grads.weights.len() != layers || masks.len() != layers || !state.matches(model) {
        return Err(Error::ShapeMismatch(
            "gradients, masks or optimizer state do not match the model".into(),
        ));
    }
    let mu = config.momentum;
    for (l, layer) in model.layers_mut().iter_mut().enumerate() {
        let clip = match &masks[l] {
            Some(mk) => Some(soft_in_tensor_order(&layer.weight, mk)?),
            None => None,
        };
        let g = &grads.weights[l];
        if g.len() != layer.weight.dims().len() || grads.bias[l].len() != layer.bias.len() {
            return Err(Error::ShapeMismatch(format!("gradient shape for layer {}", layer.name)));
        }
        let vel = &mut state.weight_velocity[l];
        for (i, m) in layer.weight.values_mut().iter_mut().enumerate() {
            let c = clip.as_ref().map_or(1.0, |s| s.values()[i].clamp(0.0, 1.0));
            let d = config.weight_decay * c + config.sr_ste_weight * (1.0 - c);
            let carried = mu * vel[i] + g[i];
            vel[i] = carried + d * *m;
            *m = (1.0 - lr * d) * *m - lr * carried;
        }
        let bvel = &mut state.bias_velocity[l];
        for ((b, v), gb) in layer.bias.iter_mut().zip(bvel.iter_mut()).zip(&grads.bias[l]) {
            *v = mu * *v + gb;
            *b -= lr * *v;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldedLayer {
    pub name: String,
    pub kind: LayerKind,
    pub eligible: bool,
    pub weight: WeightTensor4,
    pub bias: Vec<f64>,
}

/// Folds each masked layer's soft mask into its weights; dense layers pass through.
pub fn export_folded(model: &Model, masks: &[Option<LayerMasks>]) -> Result<Vec<FoldedLayer>> {
    if masks.len() != model.layers().len() {
        return Err(Error::ShapeMismatch("one mask slot per layer required".into()));
    }
    model
        .layers()
        .iter()
        .zip(masks)
        .map(|(layer, mask)| {
            let weight = match mask {
                Some(mk) => mk.apply(&layer.weight)?,
                None => layer.weight.clone(),
            };
            Ok(FoldedLayer {
                name: layer.name.clone(),
                kind: layer.kind,
                eligible: layer.eligible,
                weight,
                bias: layer.bias.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub delta: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
    /// Fraction of masked-out weights per layer (0 for dense layers).
    pub layer_sparsity: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: Model,
    pub history: Vec<EpochMetrics>,
}

/// Training state that can be checkpointed between epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    config: TrainConfig,
    state: OptimizerState,
    /// Next epoch to run.
    epoch: u32,
    iteration: u64,
    history: Vec<EpochMetrics>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        let state = OptimizerState::new(&model);
        Self::resume(model, config, state, 0, 0, Vec::new())
    }

    pub fn resume(
        model: Model,
        config: TrainConfig,
        state: OptimizerState,
        epoch: u32,
        iteration: u64,
        history: Vec<EpochMetrics>,
    ) -> Result<Self> {
        config.validate()?;
        if !state.matches(&model) {
            return Err(Error::ShapeMismatch("optimizer state does not match model".into()));
        }
        if history.len() != epoch as usize {
            return Err(Error::Config(format!(
                "history has {} epochs, expected {epoch}",
                history.len()
            )));
        }
        Ok(Self {
            model,
            config,
            state,
            epoch,
            iteration,
            history,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn into_report(self) -> FitReport {
        FitReport {
            model: self.model,
            history: self.history,
        }
    }

    fn delta_at(&self, epoch: u32) -> f64 {
        match self.config.pattern {
            Some(_) => self.config.schedule.delta(epoch as f64),
            None => 0.0,
        }
    }

    fn masks_at(&self, delta: f64) -> Result<Vec<Option<LayerMasks>>> {
        compute_masks(
            &self.model,
            self.config.pattern,
            &self.config.schedule,
            delta,
            self.config.tau,
        )
    }

    /// Masks recomputed from the current weights at the sparsity of the last completed epoch.
    pub fn current_masks(&self) -> Result<Vec<Option<LayerMasks>>> {
        self.masks_at(self.delta_at(self.epoch.saturating_sub(1)))
    }

    pub fn export_folded(&self) -> Result<Vec<FoldedLayer>> {
        export_folded(&self.model, &self.current_masks()?)
    }

    /// `(mean loss, accuracy)` of the masked network on `data`.
    pub fn evaluate(&self, data: &Dataset) -> Result<(f64, f64)> {
        let masks = self.current_masks()?;
        evaluate_with(&self.model, &masks, data)
    }

    fn batches_per_epoch(&self, samples: usize) -> u64 {
        samples.div_ceil(self.config.batch_size) as u64
    }

    pub fn run_epoch(&mut self, train: &Dataset, eval: Option<&Dataset>) -> Result<&EpochMetrics> {
        if self.is_finished() {
            return Err(Error::Config("training already finished".into()));
        }
        if train.input != self.model.input() {
            return Err(Error::ShapeMismatch(
                "dataset shape does not match the model input".into(),
            ));
        }
        let epoch = self.epoch;
        // held constant for the whole epoch
        let delta = self.delta_at(epoch);
        let total_iters = self.batches_per_epoch(train.len()) * self.config.epochs as u64;

        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut lr = self.config.lr;
        let mut sparsity = vec![0.0; self.model.layers().len()];
        for chunk in order.chunks(self.config.batch_size) {
            let (x, y) = train.batch(chunk);
            // reset and rebuild every mask from the current weights
            let masks = self.masks_at(delta)?;
            let (loss, cache) = masked_forward(&self.model, &masks, &x, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    iteration: self.iteration,
                    loss,
                });
            }
            loss_sum += loss * y.len() as f64;
            correct += cache.correct();
            let grads = ste_backward(&self.model, &cache)?;
            lr = self.config.lr_at(self.iteration, total_iters);
            sr_ste_step(&mut self.model, &grads, &masks, &self.config, lr, &mut self.state)?;
            let finite = self
                .model
                .layers()
                .iter()
                .all(|l| l.weight.values().iter().chain(&l.bias).all(|v| v.is_finite()));
            if !finite {
                return Err(Error::Divergence {
                    epoch,
                    iteration: self.iteration,
                    loss,
                });
            }
            for (s, mk) in sparsity.iter_mut().zip(&masks) {
                *s = mk.as_ref().map_or(0.0, |mk| mk.hard.sparsity());
            }
            self.iteration += 1;
        }
        self.epoch += 1;
        let eval_accuracy = match eval {
            Some(ds) => Some(self.evaluate(ds)?.1),
            None => None,
        };
        self.history.push(EpochMetrics {
            epoch,
            delta,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            eval_accuracy,
            layer_sparsity: sparsity,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn run(&mut self, train: &Dataset, eval: Option<&Dataset>) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch(train, eval)?;
        }
        Ok(())
    }
}

pub(crate) fn evaluate_with(model: &Model, masks: &[Option<LayerMasks>], data: &Dataset) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let (x, y) = data.batch(chunk);
        let (loss, cache) = masked_forward(model, masks, &x, &y)?;
        loss_sum += loss * y.len() as f64;
        correct += cache.correct();
    }
    Ok((loss_sum / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Trains `model` on `train` for `config.epochs` epochs.
pub fn fit(model: Model, train: &Dataset, eval: Option<&Dataset>, config: TrainConfig) -> Result<FitReport> {
    let mut trainer = Trainer::new(model, config)?;
    trainer.run(train, eval)?;
    Ok(trainer.into_report())
}
