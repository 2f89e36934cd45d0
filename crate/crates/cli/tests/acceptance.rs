//! Acceptance suite: one line per criterion, nonzero exit if a hard criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::{
    frozen_mask_grad_check, gaussian_like, oracle_blocks, oracle_selection, random_batch, random_compliant,
    rank_bottom, rng, small_cnn, small_mlp, tie_heavy, top_k,
};
use nmsparse::format::{compress, conv2d_sparse, decompress, index_bits, spmm, CompressedNM, Matrix, Tensor3};
use nmsparse::io::RunConfig;
use nmsparse::mask::{
    arg_bottom_per_block, hard_mask, importance_kept_set, importance_scores, importance_threshold, BlockOrdering,
    ImportanceParams, SparsePattern,
};
use nmsparse::nn::{
    compute_masks, export_folded, masked_forward, sr_ste_step, Gradients, InputShape, Layer, LayerKind, Model,
    OptimizerState, TrainConfig, Trainer,
};
use nmsparse::schedule::{Schedule, ScheduleKind};
use nmsparse::tensor::{rearrange_to_blocks, Dims4, WeightTensor4};
use rand::Rng;

enum Status {
    Pass,
    Fail,
    /// Reported but not enforced.
    SoftFail,
}

struct Outcome {
    status: Status,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn hard(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn nmsparse(args: &[&str], threads: &str) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nmsparse"))
        .args(args)
        .env("NMSPARSE_THREADS", threads)
        .output()
        .expect("binary runs")
}

/// Writes `config` into `dir` with its output directory set to `dir/out`.
fn write_config(dir: &Path, mut config: RunConfig) -> PathBuf {
    config.out_dir = PathBuf::from("out");
    let path = dir.join("run.json");
    std::fs::write(&path, config.to_json()).unwrap();
    path
}

fn spirals_config(pattern: Option<(usize, usize)>) -> RunConfig {
    let text = std::fs::read_to_string(repo_root().join("configs/spirals_2_4.json")).unwrap();
    let mut c = RunConfig::from_json(&text).unwrap();
    c.pattern = pattern.map(|(n, m)| SparsePattern::new(n, m).unwrap());
    c
}

fn criterion_1() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for (n, m) in [(1, 4), (2, 4), (2, 8), (1, 16)] {
        let dir = tempfile::tempdir().unwrap();
        let mut config = spirals_config(Some((n, m)));
        config.schedule.t_f = 10;
        config.trainer.epochs = 12;
        let path = write_config(dir.path(), config);
        let start = Instant::now();
        let train = nmsparse(&["train", "--config", path.to_str().unwrap()], "1");
        let ckpt = dir.path().join("out/checkpoint.ckpt");
        let folded = dir.path().join("folded.nmwt");
        let fold = nmsparse(
            &[
                "fold",
                "--ckpt",
                ckpt.to_str().unwrap(),
                "--out",
                folded.to_str().unwrap(),
            ],
            "1",
        );
        let pattern = format!("{n}:{m}");
        let verify = nmsparse(
            &["verify", "--weights", folded.to_str().unwrap(), "--pattern", &pattern],
            "1",
        );
        let secs = start.elapsed().as_secs_f64();
        let stdout = String::from_utf8_lossy(&verify.stdout);
        let violating = stdout.lines().last().unwrap_or("").to_string();
        let pass = train.status.success()
            && fold.status.success()
            && verify.status.code() == Some(0)
            && violating.starts_with("0 violating")
            && secs < 120.0;
        ok &= pass;
        details.push(format!("{pattern}: {violating:?} in {secs:.1}s"));
    }
    hard(ok, details.join("; "))
}

fn criterion_2() -> Outcome {
    let p = SparsePattern::new(2, 4).unwrap();
    let schedule = Schedule::new(0, 4, ScheduleKind::Cubic).unwrap();
    let models = [
        small_mlp(21, 2, &[32, 32], 2, Some(p)),
        small_cnn(22, InputShape::new(1, 12, 12), &[16, 32], 10, Some(p)),
    ];
    let mut r = rng(23);
    let mut max_diff = 0.0f64;
    for b in 0..100u64 {
        let model = &models[(b % 2) as usize];
        let delta = [0.25, 0.5, 0.75, 1.0][r.random_range(0..4)];
        let masks = compute_masks(model, Some(p), &schedule, delta, 0.1).unwrap();
        let mut folded_model = model.clone();
        for (layer, f) in folded_model
            .layers_mut()
            .iter_mut()
            .zip(export_folded(model, &masks).unwrap())
        {
            layer.weight = f.weight;
        }
        let (x, y) = random_batch(1000 + b, model, 8);
        let (_, masked) = masked_forward(model, &masks, &x, &y).unwrap();
        let none = vec![None; model.layers().len()];
        let (_, folded) = masked_forward(&folded_model, &none, &x, &y).unwrap();
        for (a, c) in masked.logits().iter().zip(folded.logits()) {
            max_diff = max_diff.max((a - c).abs());
        }
    }
    hard(
        max_diff <= 1e-12,
        format!("max |masked - folded| = {max_diff:e} over 100 batches"),
    )
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let (mut queries, mut set_mismatch, mut max_err) = (0usize, 0usize, 0.0f64);
    for trial in 0..10_000 {
        let len = r.random_range(2..=16);
        let v = if trial % 2 == 0 {
            tie_heavy(&mut r, len)
        } else {
            gaussian_like(&mut r, len)
        };
        for k in 1..len {
            let p = 1.0 - k as f64 / len as f64;
            queries += 1;
            if importance_kept_set(&v, p).unwrap() != top_k(&v, k) {
                set_mismatch += 1;
            }
            // threshold from the sorted magnitudes, score by direct evaluation
            let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
            mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let sigma = (mags[k - 1] + mags[k]) / 2.0;
            assert_eq!(importance_threshold(&v, p).unwrap().sigma, sigma);
            let scores = importance_scores(&v, ImportanceParams::new(p, 0.1).unwrap()).unwrap();
            for (s, x) in scores.iter().zip(&v) {
                let direct = 1.0 / (1.0 + (-(x.abs() - sigma) / 0.1).exp());
                max_err = max_err.max((s - direct).abs());
            }
        }
    }
    hard(
        set_mismatch == 0 && max_err <= 1e-12,
        format!("{queries} queries on 10000 vectors: {set_mismatch} kept-set mismatches, max score error {max_err:e}"),
    )
}

fn criterion_4() -> Outcome {
    let patterns = [(1, 2), (1, 4), (2, 4), (2, 8), (3, 8), (1, 16)];
    let mut r = rng(4);
    let (mut mismatches, mut tie_cases) = (0usize, 0usize);
    for trial in 0..10_000 {
        let (n, m) = patterns[r.random_range(0..patterns.len())];
        let p = SparsePattern::new(n, m).unwrap();
        let dims = Dims4::new(
            r.random_range(1..4),
            m * r.random_range(1..3),
            r.random_range(1..3),
            r.random_range(1..3),
        );
        let values = if trial % 2 == 0 {
            tie_heavy(&mut r, dims.len())
        } else {
            gaussian_like(&mut r, dims.len())
        };
        let w = WeightTensor4::new(dims, values).unwrap();
        let num = r.random_range(0..=16usize);
        let ordering = if r.random::<bool>() {
            BlockOrdering::L1Descending
        } else {
            BlockOrdering::L1Ascending
        };
        let bm = rearrange_to_blocks(&w, m).unwrap();
        let mask = hard_mask(&bm, p, num as f64 / 16.0, ordering).unwrap();
        let bottom = arg_bottom_per_block(&bm, p).unwrap();

        let blocks = oracle_blocks(&w, m);
        let norms: Vec<f64> = blocks.iter().map(|b| b.iter().map(|v| v.abs()).sum()).collect();
        let mut sorted = norms.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|x| x[0] == x[1]) {
            tie_cases += 1;
        }
        let chosen = oracle_selection(&norms, (blocks.len() * num).div_ceil(16), ordering);
        let mut ok = mask.sparsified() == &chosen[..];
        for (g, block) in blocks.iter().enumerate() {
            let pruned = rank_bottom(block, p.pruned_per_block());
            let expect_bottom: Vec<usize> = (0..m).filter(|&j| pruned[j]).collect();
            ok &= bottom[g] == expect_bottom;
            let expect: Vec<u8> = if chosen.contains(&g) {
                pruned.iter().map(|&x| u8::from(!x)).collect()
            } else {
                vec![1; m]
            };
            ok &= mask.row(g) == &expect[..];
        }
        if !ok {
            mismatches += 1;
        }
    }
    hard(
        mismatches == 0,
        format!("10000 instances ({tie_cases} with tied block norms): {mismatches} mismatches"),
    )
}

fn criterion_5() -> Outcome {
    let mut failures = Vec::new();
    for kind in [ScheduleKind::Cubic, ScheduleKind::Linear, ScheduleKind::Cosine] {
        for (ti, tf) in [(0, 90), (5, 17), (0, 1), (30, 250)] {
            let s = Schedule::new(ti, tf, kind).unwrap();
            if s.delta(ti as f64) != 0.0 || s.delta(tf as f64) != 1.0 {
                failures.push(format!("{kind} endpoints ({ti},{tf})"));
            }
            let steps = 100_000;
            let (a, b) = (ti as f64 - 2.0, tf as f64 + 2.0);
            let mut prev = s.delta(a);
            for k in 1..=steps {
                let d = s.delta(a + (b - a) * k as f64 / steps as f64);
                if d < prev {
                    failures.push(format!("{kind} not monotone ({ti},{tf})"));
                    break;
                }
                prev = d;
            }
        }
    }
    let mid = Schedule::new(0, 90, ScheduleKind::Cubic).unwrap().delta(45.0);
    if (mid - 0.875).abs() > 1e-12 {
        failures.push(format!("cubic midpoint {mid}"));
    }
    let at = |kind, t| Schedule::new(0, 90, kind).unwrap().delta(t);
    for k in 0..=4500 {
        let t = k as f64 / 100.0;
        if !(at(ScheduleKind::Cubic, t) >= at(ScheduleKind::Linear, t)
            && at(ScheduleKind::Linear, t) >= at(ScheduleKind::Cosine, t))
        {
            failures.push(format!("ordering at t={t}"));
            break;
        }
    }
    hard(
        failures.is_empty(),
        if failures.is_empty() {
            format!("endpoints exact, monotone, cubic midpoint {mid}, cubic >= linear >= cos on [0, 45]")
        } else {
            failures.join("; ")
        },
    )
}

fn criterion_6() -> Outcome {
    let p = SparsePattern::new(2, 4).unwrap();
    let schedule = Schedule::new(0, 4, ScheduleKind::Cubic).unwrap();
    let (mut worst, mut checked, mut kinks) = (0.0f64, 0usize, 0usize);
    let mut params = 0;
    for seed in 0..20u64 {
        let model = small_mlp(600 + seed, 4, &[16, 16], 3, Some(p));
        params = model.param_count();
        let delta = if seed % 2 == 0 { 1.0 } else { 0.5 };
        let masks = compute_masks(&model, Some(p), &schedule, delta, 0.1).unwrap();
        let (x, y) = random_batch(700 + seed, &model, 8);
        let r = frozen_mask_grad_check(&model, &masks, &x, &y, 1e-5);
        worst = worst.max(r.max_rel);
        checked += r.checked;
        kinks += r.kinks;
    }
    hard(
        worst <= 1e-4 && params <= 1000,
        format!(
            "20 seeds, {params} parameters: max relative error {worst:.3e} over {checked} coordinates \
             ({kinks} skipped at ReLU kinks, absolute floor 1e-6)"
        ),
    )
}

fn criterion_7() -> Outcome {
    let p = SparsePattern::new(1, 2).unwrap();
    let schedule = Schedule::new(0, 1, ScheduleKind::Cubic).unwrap();
    let mut config = TrainConfig::new(Some(p), schedule, 2);
    config.weight_decay = 5e-4;
    config.sr_ste_weight = 2.0 * config.weight_decay;
    config.momentum = 0.0;
    let lr = 0.1;
    let layer = Layer {
        name: "fc".into(),
        kind: LayerKind::Linear,
        weight: WeightTensor4::new(Dims4::linear(1, 2), vec![0.3, -0.9]).unwrap(),
        bias: vec![0.0],
        eligible: true,
    };
    let mut model = Model::new(InputShape::flat(2), vec![layer]).unwrap();
    let mut state = OptimizerState::new(&model);
    let zero = Gradients {
        weights: vec![vec![0.0, 0.0]],
        bias: vec![vec![0.0]],
    };
    let factor = 1.0 - lr * config.sr_ste_weight;
    let mut expect = 0.3f64;
    let mut exact = true;
    for _ in 0..100 {
        let masks = compute_masks(&model, Some(p), &schedule, 1.0, config.tau).unwrap();
        exact &= masks[0].as_ref().unwrap().hard.bits() == [0, 1];
        sr_ste_step(&mut model, &zero, &masks, &config, lr, &mut state).unwrap();
        expect *= factor;
        exact &= model.layers()[0].weight.values()[0] == expect;
    }
    hard(
        exact,
        format!(
            "100 steps with sr_ste_weight = 2 x weight_decay = {}: m_100 = {:e}, bit-exact = {exact}",
            config.sr_ste_weight,
            model.layers()[0].weight.values()[0]
        ),
    )
}

fn criterion_8() -> Outcome {
    let patterns = [(1, 4), (2, 4), (2, 8), (1, 16), (4, 8)];
    let mut r = rng(8);
    let mut round_trip_failures = 0;
    let mut metadata_ok = true;
    for t in 0..1000 {
        let (n, m) = patterns[t % patterns.len()];
        let p = SparsePattern::new(n, m).unwrap();
        let dims = Dims4::new(
            r.random_range(1..6),
            m * r.random_range(1..4),
            r.random_range(1..4),
            r.random_range(1..4),
        );
        let w = random_compliant(&mut r, dims, p);
        let w = WeightTensor4::new(dims, w.values().iter().map(|&v| v as f32 as f64).collect()).unwrap();
        let c = compress(&w, p).unwrap();
        let decoded = CompressedNM::decode(&c.encode()).unwrap();
        let bits_equal = |a: &WeightTensor4, b: &WeightTensor4| {
            a.values()
                .iter()
                .zip(b.values())
                .all(|(x, y)| x.to_bits() == y.to_bits())
        };
        if !bits_equal(&decompress(&c), &w) || !bits_equal(&decompress(&decoded), &w) {
            round_trip_failures += 1;
        }
        metadata_ok &= c.metadata_bits() == c.blocks() * n * index_bits(m) as usize;
    }

    let p = SparsePattern::new(2, 4).unwrap();
    let w = random_compliant(&mut r, Dims4::linear(256, 256), p);
    let x = Matrix::new(256, 256, (0..256 * 256).map(|_| r.random_range(-1.0f32..1.0)).collect()).unwrap();
    let y = spmm(&compress(&w, p).unwrap(), &x).unwrap();
    let mut spmm_err = 0.0f64;
    for o in 0..256 {
        for c in 0..256 {
            let mut acc = 0.0f64;
            for i in 0..256 {
                acc += w.get(o, i, 0, 0) as f32 as f64 * x.data[i * 256 + c] as f64;
            }
            spmm_err = spmm_err.max((y.data[o * 256 + c] as f64 - acc).abs());
        }
    }

    let w = random_compliant(&mut r, Dims4::new(32, 32, 3, 3), p);
    let input = Tensor3::new(
        32,
        16,
        16,
        (0..32 * 256).map(|_| r.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap();
    let out = conv2d_sparse(&compress(&w, p).unwrap(), &input, 1, 1).unwrap();
    let mut conv_err = 0.0f64;
    for o in 0..32 {
        for oy in 0..16 {
            for ox in 0..16 {
                let mut acc = 0.0f64;
                for i in 0..32 {
                    for kh in 0..3 {
                        for kw in 0..3 {
                            let (yy, xx) = (oy as isize + kh as isize - 1, ox as isize + kw as isize - 1);
                            if (0..16).contains(&yy) && (0..16).contains(&xx) {
                                acc +=
                                    w.get(o, i, kh, kw) as f32 as f64 * input.get(i, yy as usize, xx as usize) as f64;
                            }
                        }
                    }
                }
                conv_err = conv_err.max((out.data[(o * 16 + oy) * 16 + ox] as f64 - acc).abs());
            }
        }
    }
    hard(
        round_trip_failures == 0 && metadata_ok && spmm_err <= 1e-5 && conv_err <= 1e-5,
        format!(
            "1000 round trips ({round_trip_failures} failures), metadata exact = {metadata_ok}, \
             spmm 256x256 err {spmm_err:.2e}, conv 32ch err {conv_err:.2e}"
        ),
    )
}

fn final_eval(dir: &Path) -> f64 {
    let text = std::fs::read_to_string(dir.join("out/metrics.csv")).unwrap();
    let last = text.lines().last().unwrap();
    last.split(',').nth(5).unwrap().parse().unwrap()
}

fn criterion_9() -> Outcome {
    let mut results = Vec::new();
    for pattern in [Some((2, 4)), None] {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), spirals_config(pattern));
        let start = Instant::now();
        let out = nmsparse(&["train", "--config", path.to_str().unwrap()], "1");
        let secs = start.elapsed().as_secs_f64();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        results.push((final_eval(dir.path()), secs));
    }
    let (sparse, dense) = (results[0], results[1]);
    let gap = (dense.0 - sparse.0) * 100.0;
    hard(
        gap <= 3.0 && sparse.1 < 60.0 && dense.1 < 60.0,
        format!(
            "two spirals, 2000 samples: 2:4 eval accuracy {:.4} ({:.1}s), dense {:.4} ({:.1}s), gap {gap:.2} pp",
            sparse.0, sparse.1, dense.0, dense.1
        ),
    )
}

fn criterion_10() -> Outcome {
    let t_f = 15;
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..10u64 {
        let mut losses = [0.0; 2];
        for (slot, ordering) in [BlockOrdering::L1Descending, BlockOrdering::L1Ascending]
            .into_iter()
            .enumerate()
        {
            let mut config = spirals_config(Some((1, 4)));
            config.seed = seed;
            config.schedule.t_f = t_f;
            config.schedule.ordering = ordering;
            config.trainer.epochs = t_f + 1;
            if let nmsparse::io::DatasetSpec::TwoSpirals {
                samples, eval_samples, ..
            } = &mut config.dataset
            {
                *samples = 1000;
                *eval_samples = 0;
            }
            let (train, _) = config.dataset.load(config.seed, Path::new(".")).unwrap();
            let mut t = Trainer::new(config.build_model(&train).unwrap(), config.train_config()).unwrap();
            t.run(&train, None).unwrap();
            losses[slot] = t.history()[t_f as usize].train_loss;
        }
        if losses[0] <= losses[1] {
            wins += 1;
        }
        rows.push(format!("{:.4}/{:.4}", losses[0], losses[1]));
    }
    Outcome {
        status: if wins >= 7 { Status::Pass } else { Status::SoftFail },
        detail: format!(
            "l1_descending loss <= l1_ascending at epoch {t_f} in {wins}/10 seeds (desc/asc: {})",
            rows.join(" ")
        ),
    }
}

fn criterion_11() -> Outcome {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let mut config = spirals_config(Some((2, 4)));
        config.trainer.epochs = 8;
        config.schedule.t_f = 6;
        let path = write_config(dir.path(), config);
        let out = nmsparse(&["train", "--config", path.to_str().unwrap()], threads);
        assert!(out.status.success());
        let run = dir.path().join("out");
        (
            std::fs::read(run.join("metrics.csv")).unwrap(),
            std::fs::read(run.join("checkpoint.ckpt")).unwrap(),
        )
    };
    let reference = run("1");
    let same_repeat = run("1") == reference;
    let same_threads = ["2", "4", "8"].iter().all(|t| run(t) == reference);
    hard(
        same_repeat && same_threads,
        format!(
            "metrics CSV and checkpoint identical on repeat: {same_repeat}; with NMSPARSE_THREADS = 2, 4, 8: {same_threads}"
        ),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("pattern compliance", criterion_1),
        ("fold equivalence", criterion_2),
        ("threshold/importance oracle", criterion_3),
        ("hard-mask oracle", criterion_4),
        ("scheduler", criterion_5),
        ("gradient check", criterion_6),
        ("SR-STE decay", criterion_7),
        ("compression", criterion_8),
        ("desk-scale training", criterion_9),
        ("ordering ablation (soft)", criterion_10),
        ("determinism", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let label = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::SoftFail => "SOFT-FAIL",
        };
        println!(
            "criterion {:>2} {label:<9} {name}: {} [{:.1}s]",
            i + 1,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
