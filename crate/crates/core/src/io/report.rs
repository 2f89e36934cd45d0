use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::{BenchReport, ComplianceReport};
use crate::nn::EpochMetrics;
use crate::schedule::Schedule;

/// Writes `bytes` to a sibling temp file, syncs it, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// One row per epoch; floats use the shortest representation that round-trips.
pub fn metrics_csv(history: &[EpochMetrics], layer_names: &[String]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["epoch", "delta", "lr", "train_loss", "train_accuracy", "eval_accuracy"]
        .map(String::from)
        .to_vec();
    header.extend(layer_names.iter().map(|n| format!("sparsity_{n}")));
    w.write_record(&header)?;
    for m in history {
        if m.layer_sparsity.len() != layer_names.len() {
            return Err(Error::ShapeMismatch("one sparsity value per layer required".into()));
        }
        let mut row = vec![
            m.epoch.to_string(),
            m.delta.to_string(),
            m.lr.to_string(),
            m.train_loss.to_string(),
            m.train_accuracy.to_string(),
            m.eval_accuracy.map(|a| a.to_string()).unwrap_or_default(),
        ];
        row.extend(m.layer_sparsity.iter().map(|s| s.to_string()));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn metrics_table(history: &[EpochMetrics]) -> String {
    let mut out = format!(
        "{:>5} {:>7} {:>9} {:>10} {:>9} {:>9}  sparsity\n",
        "epoch", "delta", "lr", "loss", "train", "eval"
    );
    for m in history {
        let eval = m.eval_accuracy.map_or("-".to_string(), |a| format!("{:.4}", a));
        let sparsity: Vec<String> = m.layer_sparsity.iter().map(|s| format!("{s:.3}")).collect();
        let _ = writeln!(
            out,
            "{:>5} {:>7.4} {:>9.5} {:>10.6} {:>9.4} {:>9}  {}",
            m.epoch,
            m.delta,
            m.lr,
            m.train_loss,
            m.train_accuracy,
            eval,
            sparsity.join(" ")
        );
    }
    out
}

/// `t,delta` for every integer epoch in `[t_i, t_f]`.
pub fn schedule_csv(schedule: &Schedule) -> Result<Vec<u8>> {
    schedule.validate()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "delta"])?;
    for t in schedule.t_i..=schedule.t_f {
        w.write_record([t.to_string(), schedule.delta(t as f64).to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Per-layer compliance rows: `layer,blocks,violating_blocks,zeros,elements,sparsity`.
pub fn compliance_csv(rows: &[(String, ComplianceReport)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "blocks", "violating_blocks", "zeros", "elements", "sparsity"])?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            r.blocks.to_string(),
            r.violating_blocks.to_string(),
            r.zeros.to_string(),
            r.elements.to_string(),
            r.sparsity.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn bench_csv(rows: &[(String, BenchReport)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "layer",
        "rows",
        "inner",
        "cols",
        "repetitions",
        "sparse_secs",
        "dense_secs",
        "speedup",
        "dense_flops",
        "sparse_flops",
        "flop_reduction",
        "max_abs_diff",
    ])?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            r.rows.to_string(),
            r.inner.to_string(),
            r.cols.to_string(),
            r.repetitions.to_string(),
            r.sparse_secs.to_string(),
            r.dense_secs.to_string(),
            r.speedup.to_string(),
            r.dense_flops.to_string(),
            r.sparse_flops.to_string(),
            r.flop_reduction.to_string(),
            r.max_abs_diff.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
