mod common;

use common::{random_compliant, rng};
use nmsparse::format::{compress, CompressedNM};
use nmsparse::io::{Checkpoint, CompressedArchive, RunConfig, WeightArchive};
use nmsparse::mask::SparsePattern;
use nmsparse::nn::{parse_idx, Dataset, FoldedLayer, LayerKind, Trainer};
use nmsparse::tensor::Dims4;
use proptest::prelude::*;

fn compressed_sample(seed: u64) -> Vec<u8> {
    let p = SparsePattern::new(2, 8).unwrap();
    let w = random_compliant(&mut rng(seed), Dims4::new(2, 16, 1, 3), p);
    compress(&w, p).unwrap().encode()
}

fn weights_sample(seed: u64) -> Vec<u8> {
    let p = SparsePattern::new(1, 4).unwrap();
    let layer = |name: &str, eligible| FoldedLayer {
        name: name.into(),
        kind: LayerKind::Conv { stride: 1, padding: 1 },
        eligible,
        weight: random_compliant(&mut rng(seed), Dims4::new(3, 4, 2, 2), p),
        bias: vec![0.5, -1.0, 0.0],
    };
    WeightArchive {
        layers: vec![layer("a", false), layer("b", true)],
    }
    .encode()
}

fn checkpoint_sample() -> Vec<u8> {
    let text = r#"{"pattern": {"n": 1, "m": 4}, "schedule": {"t_i": 0, "t_f": 1},
        "trainer": {"epochs": 2, "batch_size": 8, "architecture": {"type": "mlp", "hidden": [4, 4]}},
        "dataset": {"type": "two_gaussians", "samples": 16}, "seed": 1, "out_dir": "x"}"#;
    let config = RunConfig::from_json(text).unwrap();
    let (train, _) = config.dataset.load(config.seed, std::path::Path::new(".")).unwrap();
    let mut t = Trainer::new(config.build_model(&train).unwrap(), config.train_config()).unwrap();
    t.run_epoch(&train, None).unwrap();
    Checkpoint::from_trainer(&config, &t).encode()
}

fn mutate(mut bytes: Vec<u8>, edits: &[(usize, u8)]) -> Vec<u8> {
    for &(pos, val) in edits {
        if !bytes.is_empty() {
            let i = pos % bytes.len();
            bytes[i] ^= val;
        }
    }
    bytes
}

proptest! {
    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = CompressedNM::decode(&bytes);
        let _ = Checkpoint::decode(&bytes);
        let _ = WeightArchive::decode(&bytes);
        let _ = CompressedArchive::decode(&bytes);
        let _ = parse_idx(&bytes);
        let _ = Dataset::from_csv(&bytes[..], "label");
        if let Ok(text) = std::str::from_utf8(&bytes) {
            let _ = RunConfig::from_json(text);
        }
    }

    #[test]
    fn mutated_compressed_tensors(seed in any::<u64>(), edits in prop::collection::vec((any::<usize>(), 1u8..), 1..4)) {
        let bytes = mutate(compressed_sample(seed), &edits);
        if let Ok(c) = CompressedNM::decode(&bytes) {
            // anything accepted is canonical
            prop_assert_eq!(c.encode(), bytes);
        }
    }

    #[test]
    fn mutated_weight_archives(seed in any::<u64>(), edits in prop::collection::vec((any::<usize>(), 1u8..), 1..4)) {
        let bytes = mutate(weights_sample(seed), &edits);
        if let Ok(a) = WeightArchive::decode(&bytes) {
            prop_assert_eq!(a.encode(), bytes);
        }
    }

    #[test]
    fn mutated_checkpoints(edits in prop::collection::vec((any::<usize>(), 1u8..), 1..4)) {
        let bytes = mutate(checkpoint_sample(), &edits);
        if let Ok(c) = Checkpoint::decode(&bytes) {
            let _ = c.into_trainer();
        }
    }

    #[test]
    fn truncated_compressed_tensors(seed in any::<u64>(), cut in any::<usize>()) {
        let bytes = compressed_sample(seed);
        let cut = cut % bytes.len();
        prop_assert!(CompressedNM::decode(&bytes[..cut]).is_err());
    }
}

#[test]
fn fuzz_corpus_seeds_are_valid_inputs() {
    let corpus = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let mut seen = 0;
    for target in std::fs::read_dir(&corpus).unwrap() {
        let target = target.unwrap().path();
        let name = target.file_name().unwrap().to_str().unwrap().to_string();
        for seed in std::fs::read_dir(&target).unwrap() {
            let bytes = std::fs::read(seed.unwrap().path()).unwrap();
            let ok = match name.as_str() {
                "compressed_nm" => CompressedNM::decode(&bytes).is_ok(),
                "checkpoint" => Checkpoint::decode(&bytes).and_then(|c| c.into_trainer()).is_ok(),
                "weight_archive" => WeightArchive::decode(&bytes).is_ok(),
                "compressed_archive" => CompressedArchive::decode(&bytes).is_ok(),
                "idx" => parse_idx(&bytes).is_ok(),
                "csv_dataset" => Dataset::from_csv(&bytes[..], "label").is_ok(),
                "run_config" => RunConfig::from_json(std::str::from_utf8(&bytes).unwrap()).is_ok(),
                other => panic!("no decoder for corpus directory {other}"),
            };
            assert!(ok, "{name} seed rejected");
            seen += 1;
        }
    }
    assert!(seen >= 7);
}
