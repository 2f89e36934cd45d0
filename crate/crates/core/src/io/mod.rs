//! Run configuration, checkpoints, weight archives and reports.

mod archive;
mod bin;
mod checkpoint;
mod config;
mod report;

pub use archive::{
    CompressedArchive, CompressedLayer, WeightArchive, ARCHIVE_VERSION, COMPRESSED_MAGIC, WEIGHTS_MAGIC,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{resolve, DatasetSpec, RunConfig, TrainerSettings};
pub use report::{atomic_write, bench_csv, compliance_csv, metrics_csv, metrics_table, schedule_csv};
