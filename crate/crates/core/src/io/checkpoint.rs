//! Binary checkpoint: `MAXQCKPT`, u16 version, then tagged sections, each a
//! 4-byte tag and a u64 length. All integers and floats are little-endian.
//!
//! | tag    | payload                                                   |
//! |--------|-----------------------------------------------------------|
//! | `CONF` | run config as UTF-8 JSON                                  |
//! | `STAT` | u32 next epoch, u64 iteration                             |
//! | `LAYR` | input shape (3 x u32), u32 layer count, layers            |
//! | `OPTM` | per layer: weight velocity, bias velocity (f64 arrays)    |
//! | `HIST` | u32 epoch count, per-epoch metrics                        |

use super::bin::{Reader, Writer};
use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{EpochMetrics, InputShape, Model, OptimizerState, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MAXQCKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

const TAGS: [&[u8; 4]; 5] = [b"CONF", b"STAT", b"LAYR", b"OPTM", b"HIST"];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model,
    pub optimizer: OptimizerState,
    /// Next epoch to run.
    pub epoch: u32,
    pub iteration: u64,
    pub history: Vec<EpochMetrics>,
}

impl Checkpoint {
    pub fn from_trainer(config: &RunConfig, trainer: &Trainer) -> Self {
        Self {
            config: config.clone(),
            model: trainer.model().clone(),
            optimizer: trainer.state().clone(),
            epoch: trainer.epoch(),
            iteration: trainer.iteration(),
            history: trainer.history().to_vec(),
        }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        let tc = self.config.train_config();
        Trainer::resume(self.model, tc, self.optimizer, self.epoch, self.iteration, self.history)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u16(CHECKPOINT_VERSION);

        w.section(b"CONF", self.config.to_json().as_bytes());

        let mut s = Writer::new();
        s.u32(self.epoch);
        s.u64(self.iteration);
        w.section(b"STAT", &s.into_bytes());

        let mut s = Writer::new();
        let input = self.model.input();
        for v in [input.channels, input.height, input.width] {
            s.usize32(v);
        }
        s.usize32(self.model.layers().len());
        for l in self.model.layers() {
            s.layer(&l.name, l.kind, l.eligible, &l.weight, &l.bias);
        }
        w.section(b"LAYR", &s.into_bytes());

        let mut s = Writer::new();
        for (wv, bv) in self.optimizer.weight_velocity.iter().zip(&self.optimizer.bias_velocity) {
            s.f64s(wv);
            s.f64s(bv);
        }
        w.section(b"OPTM", &s.into_bytes());

        let mut s = Writer::new();
        s.usize32(self.history.len());
        for m in &self.history {
            s.u32(m.epoch);
            s.f64(m.delta);
            s.f64(m.lr);
            s.f64(m.train_loss);
            s.f64(m.train_accuracy);
            match m.eval_accuracy {
                Some(a) => {
                    s.u8(1);
                    s.f64(a);
                }
                None => s.u8(0),
            }
            s.f64s(&m.layer_sparsity);
        }
        w.section(b"HIST", &s.into_bytes());
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("checkpoint", bytes);
        if r.take(8)? != CHECKPOINT_MAGIC {
            return r.fail("bad magic");
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return r.fail(format!("unsupported version {version}"));
        }
        let mut sections: [Option<Reader>; 5] = Default::default();
        while r.remaining() > 0 {
            let (tag, body) = r.section()?;
            let Some(slot) = TAGS.iter().position(|t| **t == tag) else {
                return r.fail(format!("unknown section {:?}", String::from_utf8_lossy(&tag)));
            };
            if sections[slot].is_some() {
                return r.fail(format!("duplicate section {:?}", String::from_utf8_lossy(&tag)));
            }
            sections[slot] = Some(body);
        }
        let [Some(mut conf), Some(mut stat), Some(mut layr), Some(mut optm), Some(mut hist)] = sections else {
            return r.fail("missing section");
        };

        let text = conf.take(conf.remaining())?;
        let text = std::str::from_utf8(text).map_err(|_| Error::format("checkpoint", "config is not UTF-8"))?;
        let config = RunConfig::from_json(text)?;

        let epoch = stat.u32()?;
        let iteration = stat.u64()?;
        stat.finish()?;

        let input = InputShape::new(layr.u32()? as usize, layr.u32()? as usize, layr.u32()? as usize);
        let count = layr.u32()? as usize;
        // every layer takes at least a few dozen bytes
        if count == 0 || count > layr.remaining() {
            return layr.fail(format!("bad layer count {count}"));
        }
        let layers = (0..count).map(|_| layr.layer()).collect::<Result<Vec<_>>>()?;
        layr.finish()?;
        let model = Model::new(input, layers).map_err(|e| Error::format("checkpoint", e.to_string()))?;

        let mut optimizer = OptimizerState {
            weight_velocity: Vec::with_capacity(count),
            bias_velocity: Vec::with_capacity(count),
        };
        for _ in 0..count {
            optimizer.weight_velocity.push(optm.f64s()?);
            optimizer.bias_velocity.push(optm.f64s()?);
        }
        optm.finish()?;
        if !optimizer.matches(&model) {
            return Err(Error::format("checkpoint", "optimizer state does not match the layers"));
        }

        let epochs = hist.u32()? as usize;
        if epochs > hist.remaining() {
            return hist.fail(format!("bad epoch count {epochs}"));
        }
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let epoch = hist.u32()?;
            let delta = hist.f64()?;
            let lr = hist.f64()?;
            let train_loss = hist.f64()?;
            let train_accuracy = hist.f64()?;
            let eval_accuracy = if hist.bool()? { Some(hist.f64()?) } else { None };
            let layer_sparsity = hist.f64s()?;
            history.push(EpochMetrics {
                epoch,
                delta,
                lr,
                train_loss,
                train_accuracy,
                eval_accuracy,
                layer_sparsity,
            });
        }
        hist.finish()?;
        if history.len() != epoch as usize {
            return Err(Error::format("checkpoint", "history length does not match the epoch"));
        }
        Ok(Self {
            config,
            model,
            optimizer,
            epoch,
            iteration,
            history,
        })
    }
}
