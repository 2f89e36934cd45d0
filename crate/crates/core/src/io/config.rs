use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{SparsePattern, DEFAULT_TAU};
use crate::nn::{two_gaussians, two_spirals, Architecture, Dataset, LrSchedule, Model, TrainConfig};
use crate::schedule::Schedule;

// keep generated data independent of the weight-init and shuffle streams
const TRAIN_SALT: u64 = 0x5851_f42d_4c95_7f2d;
const EVAL_SALT: u64 = 0x1405_7b7e_f767_814f;

/// A complete training run. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `null` trains a dense baseline.
    pub pattern: Option<SparsePattern>,
    pub schedule: Schedule,
    pub trainer: TrainerSettings,
    pub dataset: DatasetSpec,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSettings {
    #[serde(default = "Architecture::reference_mlp")]
    pub architecture: Architecture,
    pub epochs: u32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Defaults to twice `weight_decay`.
    #[serde(default)]
    pub sr_ste_weight: Option<f64>,
}

fn default_batch() -> usize {
    64
}

fn default_lr() -> f64 {
    0.1
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    5e-4
}

fn default_turns() -> f64 {
    1.5
}

fn default_noise() -> f64 {
    0.05
}

fn default_label() -> String {
    "label".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    TwoGaussians {
        samples: usize,
        #[serde(default)]
        eval_samples: usize,
    },
    TwoSpirals {
        samples: usize,
        #[serde(default = "default_turns")]
        turns: f64,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        eval_samples: usize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        eval_images: Option<PathBuf>,
        #[serde(default)]
        eval_labels: Option<PathBuf>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_label")]
        label_column: String,
        #[serde(default)]
        eval_path: Option<PathBuf>,
    },
}

impl DatasetSpec {
    fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::TwoGaussians { samples, eval_samples }
            | DatasetSpec::TwoSpirals {
                samples, eval_samples, ..
            } => {
                if *samples < 2 || *eval_samples == 1 {
                    return Err(Error::Config("synthetic datasets need at least two samples".into()));
                }
                if let DatasetSpec::TwoSpirals { turns, noise, .. } = self {
                    if !(turns.is_finite() && *turns > 0.0 && noise.is_finite() && *noise >= 0.0) {
                        return Err(Error::Config(
                            "spirals need positive turns and nonnegative noise".into(),
                        ));
                    }
                }
            }
            DatasetSpec::Idx {
                eval_images,
                eval_labels,
                ..
            } => {
                if eval_images.is_some() != eval_labels.is_some() {
                    return Err(Error::Config(
                        "eval_images and eval_labels must be given together".into(),
                    ));
                }
            }
            DatasetSpec::Csv { label_column, .. } => {
                if label_column.is_empty() {
                    return Err(Error::Config("label_column is empty".into()));
                }
            }
        }
        Ok(())
    }

    /// Loads the training set and the optional evaluation set.
    pub fn load(&self, seed: u64, base: &Path) -> Result<(Dataset, Option<Dataset>)> {
        let read = |p: &Path| std::fs::read(resolve(base, p));
        match self {
            DatasetSpec::TwoGaussians { samples, eval_samples } => {
                let train = two_gaussians(*samples, seed ^ TRAIN_SALT)?;
                let eval = (*eval_samples > 0)
                    .then(|| two_gaussians(*eval_samples, seed ^ EVAL_SALT))
                    .transpose()?;
                Ok((train, eval))
            }
            DatasetSpec::TwoSpirals {
                samples,
                turns,
                noise,
                eval_samples,
            } => {
                let train = two_spirals(*samples, *turns, *noise, seed ^ TRAIN_SALT)?;
                let eval = (*eval_samples > 0)
                    .then(|| two_spirals(*eval_samples, *turns, *noise, seed ^ EVAL_SALT))
                    .transpose()?;
                Ok((train, eval))
            }
            DatasetSpec::Idx {
                images,
                labels,
                eval_images,
                eval_labels,
            } => {
                let train = Dataset::from_idx(&read(images)?, &read(labels)?)?;
                let eval = match (eval_images, eval_labels) {
                    (Some(i), Some(l)) => Some(Dataset::from_idx(&read(i)?, &read(l)?)?),
                    _ => None,
                };
                Ok((train, eval))
            }
            DatasetSpec::Csv {
                path,
                label_column,
                eval_path,
            } => {
                let open = |p: &Path| -> Result<Dataset> {
                    let file = std::fs::File::open(resolve(base, p))?;
                    Dataset::from_csv(std::io::BufReader::new(file), label_column)
                };
                let train = open(path)?;
                let eval = eval_path.as_deref().map(open).transpose()?;
                Ok((train, eval))
            }
        }
    }
}

/// `p` if absolute, else `base/p`.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.architecture.validate()?;
        self.dataset.validate()?;
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("out_dir is empty".into()));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.trainer;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_schedule: t.lr_schedule,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            sr_ste_weight: t.sr_ste_weight.unwrap_or(2.0 * t.weight_decay),
            pattern: self.pattern,
            schedule: self.schedule,
            tau: self.tau,
            seed: self.seed,
        }
    }

    /// A freshly initialized model sized for `train`.
    pub fn build_model(&self, train: &Dataset) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Model::build(
            &self.trainer.architecture,
            train.input,
            train.classes,
            self.pattern,
            &mut rng,
        )
    }
}
