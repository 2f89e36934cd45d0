use std::borrow::Cow;

use super::{InputShape, LayerKind, Model};
use crate::error::{Error, Result};
use crate::mask::LayerMasks;
use crate::tensor::WeightTensor4;

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Weights each layer actually computed with (`s * m` for masked layers).
    pub weights: Vec<WeightTensor4>,
    /// Input activations of each layer, `batch x features`.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each layer, `batch x features`.
    pub preacts: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub batch: usize,
    shapes: Vec<(InputShape, InputShape)>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.preacts.last().expect("model has layers")
    }

    pub fn correct(&self) -> usize {
        let classes = self.logits().len() / self.batch.max(1);
        self.logits()
            .chunks_exact(classes)
            .zip(&self.labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Gradient w.r.t. each layer's effective weights, in tensor order.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Weights each layer computes with: folded for masked layers, raw otherwise.
pub fn effective_weights<'a>(model: &'a Model, masks: &[Option<LayerMasks>]) -> Result<Vec<Cow<'a, WeightTensor4>>> {
    if masks.len() != model.layers().len() {
        return Err(Error::ShapeMismatch(format!(
            "{} masks for {} layers",
            masks.len(),
            model.layers().len()
        )));
    }
    model
        .layers()
        .iter()
        .zip(masks)
        .map(|(layer, mask)| match mask {
            Some(mask) => mask.apply(&layer.weight).map(Cow::Owned),
            None => Ok(Cow::Borrowed(&layer.weight)),
        })
        .collect()
}

/// Mean softmax cross-entropy over a batch of logits.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.chunks_exact(classes).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

fn im2col(
    x: &[f64],
    shape: InputShape,
    k_h: usize,
    k_w: usize,
    stride: usize,
    padding: usize,
    out: InputShape,
) -> Vec<f64> {
    let cols = out.height * out.width;
    let mut m = vec![0.0; shape.channels * k_h * k_w * cols];
    for c in 0..shape.channels {
        for kh in 0..k_h {
            for kw in 0..k_w {
                let r = (c * k_h + kh) * k_w + kw;
                for oy in 0..out.height {
                    let y = (oy * stride + kh) as isize - padding as isize;
                    if y < 0 || y >= shape.height as isize {
                        continue;
                    }
                    for ox in 0..out.width {
                        let xx = (ox * stride + kw) as isize - padding as isize;
                        if xx < 0 || xx >= shape.width as isize {
                            continue;
                        }
                        m[r * cols + oy * out.width + ox] =
                            x[(c * shape.height + y as usize) * shape.width + xx as usize];
                    }
                }
            }
        }
    }
    m
}

#[allow(clippy::too_many_arguments)]
fn col2im_add(
    dcols: &[f64],
    shape: InputShape,
    k_h: usize,
    k_w: usize,
    stride: usize,
    padding: usize,
    out: InputShape,
    dx: &mut [f64],
) {
    let cols = out.height * out.width;
    for c in 0..shape.channels {
        for kh in 0..k_h {
            for kw in 0..k_w {
                let r = (c * k_h + kh) * k_w + kw;
                for oy in 0..out.height {
                    let y = (oy * stride + kh) as isize - padding as isize;
                    if y < 0 || y >= shape.height as isize {
                        continue;
                    }
                    for ox in 0..out.width {
                        let xx = (ox * stride + kw) as isize - padding as isize;
                        if xx < 0 || xx >= shape.width as isize {
                            continue;
                        }
                        dx[(c * shape.height + y as usize) * shape.width + xx as usize] +=
                            dcols[r * cols + oy * out.width + ox];
                    }
                }
            }
        }
    }
}

/// Runs the network with explicit per-layer weights.
pub(crate) fn forward_with(
    model: &Model,
    weights: Vec<WeightTensor4>,
    inputs: &[f64],
    labels: &[usize],
) -> Result<ForwardCache> {
    let shapes = model.layer_shapes()?;
    let batch = labels.len();
    if batch == 0 || inputs.len() != batch * model.input().len() {
        return Err(Error::ShapeMismatch(format!(
            "batch of {batch} labels needs {} inputs, got {}",
            batch * model.input().len(),
            inputs.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= model.classes()) {
        return Err(Error::ShapeMismatch(format!(
            "label {bad} >= {} classes",
            model.classes()
        )));
    }
    let last = model.layers().len() - 1;
    let mut cache_inputs = Vec::with_capacity(model.layers().len());
    let mut preacts = Vec::with_capacity(model.layers().len());
    let mut x = inputs.to_vec();
    for (l, (layer, w)) in model.layers().iter().zip(&weights).enumerate() {
        let (in_shape, out_shape) = shapes[l];
        let d = w.dims();
        let wv = w.values();
        let fan_in = d.fan_in();
        let mut z = vec![0.0; batch * out_shape.len()];
        match layer.kind {
            LayerKind::Linear => {
                for b in 0..batch {
                    let xb = &x[b * fan_in..(b + 1) * fan_in];
                    for o in 0..d.c_out {
                        let row = &wv[o * fan_in..(o + 1) * fan_in];
                        let mut acc = layer.bias[o];
                        for (wi, xi) in row.iter().zip(xb) {
                            acc += wi * xi;
                        }
                        z[b * d.c_out + o] = acc;
                    }
                }
            }
            LayerKind::Conv { stride, padding } => {
                let p = out_shape.height * out_shape.width;
                for b in 0..batch {
                    let xb = &x[b * in_shape.len()..(b + 1) * in_shape.len()];
                    let cols = im2col(xb, in_shape, d.k_h, d.k_w, stride, padding, out_shape);
                    let zb = &mut z[b * out_shape.len()..(b + 1) * out_shape.len()];
                    for o in 0..d.c_out {
                        let zo = &mut zb[o * p..(o + 1) * p];
                        zo.fill(layer.bias[o]);
                        for k in 0..fan_in {
                            let wk = wv[o * fan_in + k];
                            for (zz, cv) in zo.iter_mut().zip(&cols[k * p..(k + 1) * p]) {
                                *zz += wk * cv;
                            }
                        }
                    }
                }
            }
        }
        let next = if l == last {
            z.clone()
        } else {
            z.iter().map(|v| v.max(0.0)).collect()
        };
        cache_inputs.push(std::mem::replace(&mut x, next));
        preacts.push(z);
    }
    Ok(ForwardCache {
        weights,
        inputs: cache_inputs,
        preacts,
        labels: labels.to_vec(),
        batch,
        shapes,
    })
}

/// Forward pass with soft-masked weights on masked layers. Returns the mean
/// cross-entropy and the cache for [`ste_backward`].
pub fn masked_forward(
    model: &Model,
    masks: &[Option<LayerMasks>],
    inputs: &[f64],
    labels: &[usize],
) -> Result<(f64, ForwardCache)> {
    let weights = effective_weights(model, masks)?
        .into_iter()
        .map(Cow::into_owned)
        .collect();
    let cache = forward_with(model, weights, inputs, labels)?;
    let loss = cross_entropy(cache.logits(), labels, model.classes());
    Ok((loss, cache))
}

/// Gradient of the loss w.r.t. each layer's effective weights and biases.
///
/// The straight-through estimator hands the effective-weight gradient to the
/// dense weights unchanged, so no mask factor is applied here.
pub fn ste_backward(model: &Model, cache: &ForwardCache) -> Result<Gradients> {
    let classes = model.classes();
    let batch = cache.batch;
    let layers = model.layers();
    if cache.weights.len() != layers.len() {
        return Err(Error::ShapeMismatch("cache does not belong to this model".into()));
    }
    // d loss / d logits for mean softmax cross-entropy
    let mut dz: Vec<f64> = Vec::with_capacity(batch * classes);
    for (row, &y) in cache.logits().chunks_exact(classes).zip(&cache.labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for (c, v) in row.iter().enumerate() {
            let p = (v - max).exp() / sum;
            dz.push((p - if c == y { 1.0 } else { 0.0 }) / batch as f64);
        }
    }
    let mut grad_w = vec![Vec::new(); layers.len()];
    let mut grad_b = vec![Vec::new(); layers.len()];
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let (in_shape, out_shape) = cache.shapes[l];
        let w = &cache.weights[l];
        let d = w.dims();
        let wv = w.values();
        let fan_in = d.fan_in();
        let x = &cache.inputs[l];
        let mut gw = vec![0.0; d.len()];
        let mut gb = vec![0.0; d.c_out];
        let mut dx = if l > 0 {
            vec![0.0; batch * in_shape.len()]
        } else {
            Vec::new()
        };
        match layer.kind {
            LayerKind::Linear => {
                for b in 0..batch {
                    let xb = &x[b * fan_in..(b + 1) * fan_in];
                    for o in 0..d.c_out {
                        let g = dz[b * d.c_out + o];
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        for (gwi, xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(xb) {
                            *gwi += g * xi;
                        }
                        if l > 0 {
                            for (dxi, wi) in dx[b * fan_in..(b + 1) * fan_in]
                                .iter_mut()
                                .zip(&wv[o * fan_in..(o + 1) * fan_in])
                            {
                                *dxi += g * wi;
                            }
                        }
                    }
                }
            }
            LayerKind::Conv { stride, padding } => {
                let p = out_shape.height * out_shape.width;
                for b in 0..batch {
                    let xb = &x[b * in_shape.len()..(b + 1) * in_shape.len()];
                    let cols = im2col(xb, in_shape, d.k_h, d.k_w, stride, padding, out_shape);
                    let dzb = &dz[b * out_shape.len()..(b + 1) * out_shape.len()];
                    let mut dcols = if l > 0 { vec![0.0; fan_in * p] } else { Vec::new() };
                    for o in 0..d.c_out {
                        let dzo = &dzb[o * p..(o + 1) * p];
                        gb[o] += dzo.iter().sum::<f64>();
                        for k in 0..fan_in {
                            let ck = &cols[k * p..(k + 1) * p];
                            gw[o * fan_in + k] += dzo.iter().zip(ck).map(|(a, c)| a * c).sum::<f64>();
                            if l > 0 {
                                let wk = wv[o * fan_in + k];
                                for (dc, g) in dcols[k * p..(k + 1) * p].iter_mut().zip(dzo) {
                                    *dc += wk * g;
                                }
                            }
                        }
                    }
                    if l > 0 {
                        col2im_add(
                            &dcols,
                            in_shape,
                            d.k_h,
                            d.k_w,
                            stride,
                            padding,
                            out_shape,
                            &mut dx[b * in_shape.len()..(b + 1) * in_shape.len()],
                        );
                    }
                }
            }
        }
        grad_w[l] = gw;
        grad_b[l] = gb;
        if l > 0 {
            // through the ReLU of the previous layer
            let z_prev = &cache.preacts[l - 1];
            dz = dx
                .into_iter()
                .zip(z_prev)
                .map(|(g, z)| if *z > 0.0 { g } else { 0.0 })
                .collect();
        }
    }
    Ok(Gradients {
        weights: grad_w,
        bias: grad_b,
    })
}
