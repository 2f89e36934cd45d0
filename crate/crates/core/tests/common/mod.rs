//! Independent reference implementations used by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use nmsparse::mask::{BlockOrdering, LayerMasks, SparsePattern};
use nmsparse::nn::{masked_forward, ste_backward, Architecture, InputShape, LayerKind, Model};
use nmsparse::tensor::{Dims4, WeightTensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pruned flags: entry `i` is pruned iff fewer than `count` entries precede it
/// under the order (|v| ascending, index ascending).
pub fn rank_bottom(row: &[f64], count: usize) -> Vec<bool> {
    (0..row.len())
        .map(|i| {
            let before = (0..row.len())
                .filter(|&j| row[j].abs() < row[i].abs() || (row[j].abs() == row[i].abs() && j < i))
                .count();
            before < count
        })
        .collect()
}

/// Indices of the `k` largest magnitudes; among ties the higher index wins.
pub fn top_k(v: &[f64], k: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = (0..v.len())
        .filter(|&i| {
            let above = (0..v.len())
                .filter(|&j| v[j].abs() > v[i].abs() || (v[j].abs() == v[i].abs() && j > i))
                .count();
            above < k
        })
        .collect();
    kept.sort_unstable();
    kept
}

/// Values drawn from a small grid so that ties are common.
pub fn tie_heavy(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-3i32..=3) as f64 * 0.5).collect()
}

pub fn gaussian_like(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Direct-convolution / matrix-vector forward pass, one sample at a time.
/// Returns `(mean cross-entropy, logits)`.
pub fn scalar_forward(model: &Model, weights: &[WeightTensor4], x: &[f64], y: &[usize]) -> (f64, Vec<f64>) {
    let shapes = model.layer_shapes().unwrap();
    let d_in = model.input().len();
    let mut logits = Vec::new();
    let mut loss = 0.0;
    for (s, &label) in y.iter().enumerate() {
        let mut act = x[s * d_in..(s + 1) * d_in].to_vec();
        for (l, layer) in model.layers().iter().enumerate() {
            let (input, output) = shapes[l];
            let w = &weights[l];
            let d = w.dims();
            let mut next = vec![0.0; output.len()];
            match layer.kind {
                LayerKind::Linear => {
                    for o in 0..d.c_out {
                        let mut acc = layer.bias[o];
                        for i in 0..d.c_in {
                            acc += w.get(o, i, 0, 0) * act[i];
                        }
                        next[o] = acc;
                    }
                }
                LayerKind::Conv { stride, padding } => {
                    for o in 0..d.c_out {
                        for oy in 0..output.height {
                            for ox in 0..output.width {
                                let mut acc = layer.bias[o];
                                for i in 0..d.c_in {
                                    for kh in 0..d.k_h {
                                        for kw in 0..d.k_w {
                                            let yy = (oy * stride + kh) as isize - padding as isize;
                                            let xx = (ox * stride + kw) as isize - padding as isize;
                                            if yy < 0
                                                || xx < 0
                                                || yy >= input.height as isize
                                                || xx >= input.width as isize
                                            {
                                                continue;
                                            }
                                            let v = act[(i * input.height + yy as usize) * input.width + xx as usize];
                                            acc += w.get(o, i, kh, kw) * v;
                                        }
                                    }
                                }
                                next[(o * output.height + oy) * output.width + ox] = acc;
                            }
                        }
                    }
                }
            }
            if l + 1 < model.layers().len() {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            act = next;
        }
        let max = act.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = act.iter().map(|v| (v - max).exp()).sum();
        loss += max + z.ln() - act[label];
        logits.extend(act);
    }
    (loss / y.len() as f64, logits)
}

pub fn small_mlp(seed: u64, input: usize, hidden: &[usize], classes: usize, pattern: Option<SparsePattern>) -> Model {
    let arch = Architecture::Mlp {
        hidden: hidden.to_vec(),
    };
    Model::build(&arch, InputShape::flat(input), classes, pattern, &mut rng(seed)).unwrap()
}

pub fn small_cnn(
    seed: u64,
    input: InputShape,
    channels: &[usize],
    classes: usize,
    pattern: Option<SparsePattern>,
) -> Model {
    let arch = Architecture::Cnn {
        channels: channels.to_vec(),
    };
    Model::build(&arch, input, classes, pattern, &mut rng(seed)).unwrap()
}

pub fn random_batch(seed: u64, model: &Model, batch: usize) -> (Vec<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let x = gaussian_like(&mut r, batch * model.input().len());
    let y = (0..batch).map(|_| r.random_range(0..model.classes())).collect();
    (x, y)
}

/// Copy of `model` whose raw weights are the effective weights under `masks`.
pub fn effective_model(model: &Model, masks: &[Option<LayerMasks>]) -> Model {
    let mut out = model.clone();
    for (layer, mask) in out.layers_mut().iter_mut().zip(masks) {
        if let Some(mk) = mask {
            layer.weight = mk.apply(&layer.weight).unwrap();
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates skipped because the +h and -h evaluations flip a ReLU.
    pub kinks: usize,
    pub max_rel: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of the loss with respect to the effective weights and
/// biases, masks held fixed, against the analytic STE gradient.
pub fn frozen_mask_grad_check(
    model: &Model,
    masks: &[Option<LayerMasks>],
    x: &[f64],
    y: &[usize],
    h: f64,
) -> GradCheck {
    let (_, cache) = masked_forward(model, masks, x, y).unwrap();
    let grads = ste_backward(model, &cache).unwrap();
    let base = effective_model(model, masks);
    let dense: Vec<Option<LayerMasks>> = vec![None; model.layers().len()];
    let eval = |m: &Model| {
        let (loss, c) = masked_forward(m, &dense, x, y).unwrap();
        let signs: Vec<Vec<bool>> = c.preacts[..c.preacts.len() - 1]
            .iter()
            .map(|p| p.iter().map(|v| *v > 0.0).collect())
            .collect();
        (loss, signs)
    };
    let mut report = GradCheck::default();
    for l in 0..base.layers().len() {
        let nw = base.layers()[l].weight.dims().len();
        let nb = base.layers()[l].bias.len();
        for idx in 0..nw + nb {
            let mut plus = base.clone();
            let mut minus = base.clone();
            if idx < nw {
                plus.layers_mut()[l].weight.values_mut()[idx] += h;
                minus.layers_mut()[l].weight.values_mut()[idx] -= h;
            } else {
                plus.layers_mut()[l].bias[idx - nw] += h;
                minus.layers_mut()[l].bias[idx - nw] -= h;
            }
            let (lp, sp) = eval(&plus);
            let (lm, sm) = eval(&minus);
            if sp != sm {
                report.kinks += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let an = if idx < nw {
                grads.weights[l][idx]
            } else {
                grads.bias[l][idx - nw]
            };
            let e = rel_err(an, fd);
            report.checked += 1;
            if e > report.max_rel {
                report.max_rel = e;
                report.worst = Some((l, idx, an, fd));
            }
        }
    }
    report
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: Dims4) -> WeightTensor4 {
    WeightTensor4::new(dims, gaussian_like(rng, dims.len())).unwrap()
}

/// A random tensor with at most `n` nonzeros in every block of `m` consecutive input channels.
pub fn random_compliant(rng: &mut ChaCha8Rng, dims: Dims4, pattern: SparsePattern) -> WeightTensor4 {
    let mut w = WeightTensor4::zeros(dims).unwrap();
    let (n, m) = (pattern.n(), pattern.m());
    for o in 0..dims.c_out {
        for h in 0..dims.k_h {
            for kw in 0..dims.k_w {
                for cb in 0..dims.c_in / m {
                    let live = rng.random_range(0..=n);
                    let mut picked = Vec::new();
                    while picked.len() < live {
                        let j = rng.random_range(0..m);
                        if !picked.contains(&j) {
                            picked.push(j);
                        }
                    }
                    for j in picked {
                        let off = dims.offset(o, cb * m + j, h, kw);
                        w.values_mut()[off] = rng.random_range(-2.0..2.0);
                    }
                }
            }
        }
    }
    w
}

/// Block index of each weight, by the rearrangement formula.
pub fn block_of(d: Dims4, m: usize, o: usize, i: usize, h: usize, w: usize) -> (usize, usize) {
    (((o * d.k_h + h) * d.k_w + w) * (d.c_in / m) + i / m, i % m)
}

pub fn oracle_blocks(w: &WeightTensor4, m: usize) -> Vec<Vec<f64>> {
    let d = w.dims();
    let mut blocks = vec![vec![0.0; m]; d.len() / m];
    for o in 0..d.c_out {
        for i in 0..d.c_in {
            for h in 0..d.k_h {
                for kw in 0..d.k_w {
                    let (g, j) = block_of(d, m, o, i, h, kw);
                    blocks[g][j] = w.get(o, i, h, kw);
                }
            }
        }
    }
    blocks
}

/// Chosen blocks: rank under (norm, index) in the requested direction is below the count.
pub fn oracle_selection(norms: &[f64], count: usize, ordering: BlockOrdering) -> Vec<usize> {
    (0..norms.len())
        .filter(|&g| {
            let ahead = (0..norms.len())
                .filter(|&h| match ordering {
                    BlockOrdering::L1Descending => norms[h] > norms[g] || (norms[h] == norms[g] && h < g),
                    BlockOrdering::L1Ascending => norms[h] < norms[g] || (norms[h] == norms[g] && h < g),
                })
                .count();
            ahead < count
        })
        .collect()
}
