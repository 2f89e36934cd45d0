//! Writes valid sample inputs for every fuzz target into `fuzz/corpus/<target>/`.
//!
//! Usage: `cargo run -p nmsparse --example fuzz_seeds -- fuzz/corpus`

use std::fs;
use std::path::{Path, PathBuf};

use nmsparse::format::compress;
use nmsparse::io::{Checkpoint, CompressedArchive, RunConfig, WeightArchive};
use nmsparse::mask::SparsePattern;
use nmsparse::nn::{FoldedLayer, LayerKind, Trainer};
use nmsparse::tensor::{Dims4, WeightTensor4};

const CONFIG: &str = r#"{
  "pattern": {"n": 1, "m": 4},
  "schedule": {"t_i": 0, "t_f": 1, "kind": "cubic"},
  "trainer": {"epochs": 2, "batch_size": 8, "architecture": {"type": "mlp", "hidden": [4, 4]}},
  "dataset": {"type": "two_gaussians", "samples": 16},
  "seed": 1,
  "out_dir": "run"
}"#;

/// A 2:4-compliant tensor with a few exact binary fractions.
fn compliant(dims: Dims4) -> WeightTensor4 {
    let values = (0..dims.len())
        .map(|i| if i % 4 < 2 { (i as f64 + 1.0) * 0.25 } else { 0.0 })
        .collect();
    WeightTensor4::new(dims, values).unwrap()
}

fn write(root: &Path, target: &str, name: &str, bytes: &[u8]) {
    let dir = root.join(target);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(name), bytes).unwrap();
}

fn idx_bytes(dtype: u8, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, dtype, dims.len() as u8];
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fuzz/corpus".into()));
    let p = SparsePattern::new(2, 4).unwrap();

    let linear = compress(&compliant(Dims4::linear(3, 8)), p).unwrap();
    let conv = compress(&compliant(Dims4::new(2, 4, 3, 3)), p).unwrap();
    write(&root, "compressed_nm", "linear", &linear.encode());
    write(&root, "compressed_nm", "conv", &conv.encode());

    let weights = WeightArchive {
        layers: vec![
            FoldedLayer {
                name: "conv0".into(),
                kind: LayerKind::Conv { stride: 1, padding: 1 },
                eligible: false,
                weight: compliant(Dims4::new(4, 1, 3, 3)),
                bias: vec![0.0; 4],
            },
            FoldedLayer {
                name: "fc1".into(),
                kind: LayerKind::Linear,
                eligible: true,
                weight: compliant(Dims4::linear(2, 8)),
                bias: vec![0.5, -0.5],
            },
        ],
    };
    write(&root, "weight_archive", "two_layers", &weights.encode());
    let archive = CompressedArchive::from_weights(&weights, p).unwrap();
    write(&root, "compressed_archive", "one_eligible", &archive.encode());

    let config = RunConfig::from_json(CONFIG).unwrap();
    let (train, _) = config.dataset.load(config.seed, Path::new(".")).unwrap();
    let mut trainer = Trainer::new(config.build_model(&train).unwrap(), config.train_config()).unwrap();
    write(
        &root,
        "checkpoint",
        "fresh",
        &Checkpoint::from_trainer(&config, &trainer).encode(),
    );
    trainer.run_epoch(&train, None).unwrap();
    write(
        &root,
        "checkpoint",
        "one_epoch",
        &Checkpoint::from_trainer(&config, &trainer).encode(),
    );

    write(&root, "run_config", "mlp", CONFIG.as_bytes());
    write(&root, "run_config", "dense", br#"{"pattern": null, "schedule": {"t_i": 0, "t_f": 4}, "trainer": {"epochs": 3}, "dataset": {"type": "two_spirals", "samples": 100}, "seed": 0, "out_dir": "d"}"#);

    write(
        &root,
        "idx",
        "images",
        &idx_bytes(0x08, &[2, 2, 2], &[0, 64, 128, 255, 1, 2, 3, 4]),
    );
    write(&root, "idx", "labels", &idx_bytes(0x08, &[3], &[0, 1, 2]));

    write(&root, "csv_dataset", "basic", b"x0,x1,label\n0.5,-1,0\n2,3.25,1\n");
    write(&root, "csv_dataset", "label_first", b"label,a\n1,0.1\n0,0.2\n2,0.3\n");
}
