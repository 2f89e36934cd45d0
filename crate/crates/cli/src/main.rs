use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nmsparse::format::{bench, verify, Matrix};
use nmsparse::io::{
    atomic_write, bench_csv, compliance_csv, metrics_csv, metrics_table, resolve, schedule_csv, Checkpoint,
    CompressedArchive, RunConfig, WeightArchive,
};
use nmsparse::mask::SparsePattern;
use nmsparse::nn::Trainer;
use nmsparse::schedule::{Schedule, ScheduleKind};

const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
const METRICS_FILE: &str = "metrics.csv";
const THREADS_VAR: &str = "NMSPARSE_THREADS";

#[derive(Parser)]
#[command(name = "nmsparse", version, about = "N:M structured sparse training and compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run config, checkpointing after every epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the checkpoint in the run's output directory.
        #[arg(long)]
        resume: bool,
        /// Stop once this many epochs have completed.
        #[arg(long)]
        until_epoch: Option<u32>,
    },
    /// Fold the soft masks of a checkpoint into a weight archive.
    Fold {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every sparse layer of a weight archive; exits 1 on any violation.
    Verify {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        pattern: SparsePattern,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Store the sparse layers of a weight archive in compressed N:M form.
    Compress {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        pattern: SparsePattern,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the sparse kernel against a dense GEMM for every compressed layer.
    Bench {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Columns of the random right-hand side.
        #[arg(long, default_value_t = 256)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Tabulate the sparsity schedule for every epoch in [ti, tf].
    Schedule {
        #[arg(long)]
        ti: u32,
        #[arg(long)]
        tf: u32,
        #[arg(long, default_value = "cubic")]
        kind: ScheduleKind,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_VAR} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train {
            config,
            resume,
            until_epoch,
        } => train(&config, resume, until_epoch),
        Command::Fold { ckpt, out } => fold(&ckpt, &out),
        Command::Verify { weights, pattern, csv } => verify_cmd(&weights, pattern, csv.as_deref()),
        Command::Compress { weights, pattern, out } => compress_cmd(&weights, pattern, &out),
        Command::Bench {
            archive,
            reps,
            cols,
            seed,
            csv,
        } => bench_cmd(&archive, reps, cols, seed, csv.as_deref()),
        Command::Schedule { ti, tf, kind, out } => {
            let bytes = schedule_csv(&Schedule::new(ti, tf, kind)?)?;
            atomic_write(&out, &bytes)?;
            eprintln!("wrote {} rows to {}", tf - ti + 1, out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn train(config_path: &Path, resume: bool, until_epoch: Option<u32>) -> Result<ExitCode> {
    let config = RunConfig::load(config_path).with_context(|| format!("loading {}", config_path.display()))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let out_dir = resolve(base, &config.out_dir);
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);

    let (train_set, eval_set) = config.dataset.load(config.seed, base).context("loading dataset")?;
    let mut trainer = if resume {
        let ck = Checkpoint::decode(&read(&ckpt_path)?)?;
        if ck.config != config {
            bail!("checkpoint {} was written for a different config", ckpt_path.display());
        }
        ck.into_trainer()?
    } else {
        Trainer::new(config.build_model(&train_set)?, config.train_config())?
    };
    let names: Vec<String> = trainer.model().layers().iter().map(|l| l.name.clone()).collect();
    let stop = until_epoch.unwrap_or(u32::MAX).min(config.trainer.epochs);

    let start = Instant::now();
    while trainer.epoch() < stop {
        let m = trainer.run_epoch(&train_set, eval_set.as_ref())?;
        eprintln!(
            "epoch {:>3}  delta {:.4}  loss {:.6}  train {:.4}{}",
            m.epoch,
            m.delta,
            m.train_loss,
            m.train_accuracy,
            m.eval_accuracy.map_or(String::new(), |a| format!("  eval {a:.4}"))
        );
        atomic_write(&ckpt_path, &Checkpoint::from_trainer(&config, &trainer).encode())?;
        atomic_write(&out_dir.join(METRICS_FILE), &metrics_csv(trainer.history(), &names)?)?;
    }
    print!("{}", metrics_table(trainer.history()));
    eprintln!(
        "{} epochs in {:.2}s; checkpoint {}",
        trainer.epoch(),
        start.elapsed().as_secs_f64(),
        ckpt_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn fold(ckpt: &Path, out: &Path) -> Result<ExitCode> {
    let trainer = Checkpoint::decode(&read(ckpt)?)?.into_trainer()?;
    if !trainer.is_finished() {
        eprintln!(
            "warning: checkpoint stopped at epoch {} of {}",
            trainer.epoch(),
            trainer.config().epochs
        );
    }
    let archive = WeightArchive {
        layers: trainer.export_folded()?,
    };
    atomic_write(out, &archive.encode())?;
    println!("{:<10} {:<16} {:>8} {:>10}", "layer", "dims", "sparse", "nonzeros");
    for l in &archive.layers {
        println!(
            "{:<10} {:<16} {:>8} {:>10}",
            l.name,
            l.weight.dims().to_string(),
            l.eligible,
            l.weight.nonzeros()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(weights: &Path, pattern: SparsePattern, csv: Option<&Path>) -> Result<ExitCode> {
    let archive = WeightArchive::decode(&read(weights)?)?;
    let mut rows = Vec::new();
    println!("{:<10} {:>8} {:>10} {:>9}", "layer", "blocks", "violating", "sparsity");
    for l in &archive.layers {
        if !l.eligible {
            println!("{:<10} {:>8}", l.name, "dense");
            continue;
        }
        let r = verify(&l.weight, pattern).with_context(|| format!("layer {}", l.name))?;
        println!(
            "{:<10} {:>8} {:>10} {:>9.4}",
            l.name, r.blocks, r.violating_blocks, r.sparsity
        );
        rows.push((l.name.clone(), r));
    }
    if let Some(path) = csv {
        atomic_write(path, &compliance_csv(&rows)?)?;
    }
    let violating: usize = rows.iter().map(|(_, r)| r.violating_blocks).sum();
    println!("{violating} violating blocks for pattern {pattern}");
    Ok(if violating == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn compress_cmd(weights: &Path, pattern: SparsePattern, out: &Path) -> Result<ExitCode> {
    let archive = WeightArchive::decode(&read(weights)?)?;
    let compressed = CompressedArchive::from_weights(&archive, pattern)?;
    let bytes = compressed.encode();
    atomic_write(out, &bytes)?;
    println!(
        "{:<10} {:>10} {:>14} {:>12}",
        "layer", "blocks", "metadata_bits", "dense_bytes"
    );
    for l in &compressed.layers {
        let c = &l.weight;
        println!(
            "{:<10} {:>10} {:>14} {:>12}",
            l.name,
            c.blocks(),
            c.metadata_bits(),
            c.dense_bytes()
        );
    }
    println!("wrote {} bytes to {}", bytes.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn bench_cmd(archive: &Path, reps: usize, cols: usize, seed: u64, csv: Option<&Path>) -> Result<ExitCode> {
    if cols == 0 {
        bail!("--cols must be positive");
    }
    let archive = CompressedArchive::decode(&read(archive)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    println!(
        "{:<10} {:>14} {:>12} {:>12} {:>8} {:>8} {:>10}",
        "layer", "shape", "sparse_ms", "dense_ms", "speedup", "flops/", "max_diff"
    );
    for l in &archive.layers {
        let inner = l.weight.origin_dims().fan_in();
        let data = (0..inner * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let x = Matrix::new(inner, cols, data)?;
        let r = bench(&l.weight, &x, reps)?;
        println!(
            "{:<10} {:>14} {:>12.4} {:>12.4} {:>8.2} {:>8.2} {:>10.2e}",
            l.name,
            format!("{}x{}x{}", r.rows, r.inner, r.cols),
            r.sparse_secs * 1e3,
            r.dense_secs * 1e3,
            r.speedup,
            r.flop_reduction,
            r.max_abs_diff
        );
        rows.push((l.name.clone(), r));
    }
    if let Some(path) = csv {
        atomic_write(path, &bench_csv(&rows)?)?;
    }
    Ok(ExitCode::SUCCESS)
}
