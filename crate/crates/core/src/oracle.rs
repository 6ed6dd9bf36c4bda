//! Slow, independent reference implementations used to cross-check the
//! optimized code paths. Nothing here shares arithmetic helpers with the
//! engine, the selectors, or the DNR counter.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::mask::{MaskState, PruneMethod, WeightId};
use crate::nn::{Activation, GradSet, Layer, LayerKind, Network};
use crate::snapshot::Snapshot;
use crate::tensor::Tensor;

fn act(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt())),
        Activation::Identity => x,
    }
}

/// Pre-activation of one layer for one sample, computed straight from the
/// index definition of a dense or conv layer.
fn layer_pre(layer: &Layer, x: &[f64]) -> Vec<f64> {
    let w = layer.weight().data();
    let bias = layer.bias().map(|b| b.data());
    match layer.spec().kind {
        LayerKind::Dense { inputs, outputs } => (0..outputs)
            .map(|j| {
                let mut s = 0.0;
                for i in 0..inputs {
                    s += x[i] * w[i * outputs + j];
                }
                s + bias.map_or(0.0, |b| b[j])
            })
            .collect(),
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            ..
        } => {
            let (h, wd) = layer.in_hw();
            let (oh, ow) = layer.out_hw();
            // same padding offsets the window by (k - 1) / 2, valid by 0
            let pt = (oh + kernel_h - 1 - h) / 2;
            let pl = (ow + kernel_w - 1 - wd) / 2;
            let mut out = Vec::with_capacity(out_channels * oh * ow);
            for o in 0..out_channels {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut s = 0.0;
                        for c in 0..in_channels {
                            for ky in 0..kernel_h {
                                for kx in 0..kernel_w {
                                    let iy = y as isize + ky as isize - pt as isize;
                                    let ix = xo as isize + kx as isize - pl as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let wi = ((o * in_channels + c) * kernel_h + ky) * kernel_w + kx;
                                    s += w[wi] * x[(c * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out.push(s + bias.map_or(0.0, |b| b[o]));
                    }
                }
            }
            out
        }
    }
}

/// Post-activations of every layer for one sample; the last entry is the logits.
pub fn sample_activations(net: &Network, x: &[f64]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(net.layers().len());
    for layer in net.layers() {
        let input = out.last().map_or(x, |v| v.as_slice());
        let post = layer_pre(layer, input).into_iter().map(|z| act(layer.activation(), z)).collect();
        out.push(post);
    }
    out
}

/// Same as [`sample_activations`] but returning pre-activations.
pub fn sample_preactivations(net: &Network, x: &[f64]) -> Vec<Vec<f64>> {
    let mut pre = Vec::with_capacity(net.layers().len());
    let mut input = x.to_vec();
    for layer in net.layers() {
        let z = layer_pre(layer, &input);
        input = z.iter().map(|&v| act(layer.activation(), v)).collect();
        pre.push(z);
    }
    pre
}

/// Mean cross-entropy by explicit per-sample log-softmax.
pub fn loss(net: &Network, batch: &Tensor, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let logits = sample_activations(net, batch.row(b)).pop().expect("layers");
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / labels.len() as f64
}

/// Central finite-difference gradients of the mean loss. Pruned weights are
/// left at zero.
pub fn fd_gradients(net: &Network, masks: &MaskState, batch: &Tensor, labels: &[usize], h: f64) -> GradSet {
    let mut probe = net.clone();
    let mut grads = GradSet::zeros_like(net);
    for layer in 0..net.layers().len() {
        for i in 0..net.weights(layer).len() {
            if !masks.layer(layer)[i] {
                continue;
            }
            let w0 = net.weights(layer)[i];
            probe.weights_mut(layer)[i] = w0 + h;
            let up = loss(&probe, batch, labels);
            probe.weights_mut(layer)[i] = w0 - h;
            let down = loss(&probe, batch, labels);
            probe.weights_mut(layer)[i] = w0;
            grads.weights[layer].data_mut()[i] = (up - down) / (2.0 * h);
        }
        if let Some(nb) = net.bias(layer).map(<[f64]>::len) {
            for i in 0..nb {
                let b0 = net.bias(layer).expect("bias")[i];
                probe.bias_mut(layer).expect("bias")[i] = b0 + h;
                let up = loss(&probe, batch, labels);
                probe.bias_mut(layer).expect("bias")[i] = b0 - h;
                let down = loss(&probe, batch, labels);
                probe.bias_mut(layer).expect("bias")[i] = b0;
                grads.biases[layer].as_mut().expect("bias").data_mut()[i] = (up - down) / (2.0 * h);
            }
        }
    }
    grads
}

/// Largest componentwise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &GradSet, b: &GradSet, floor: f64) -> f64 {
    let pairs = a
        .weights
        .iter()
        .zip(&b.weights)
        .chain(a.biases.iter().zip(&b.biases).filter_map(|(x, y)| x.as_ref().zip(y.as_ref())));
    let mut worst: f64 = 0.0;
    for (x, y) in pairs {
        for (&u, &v) in x.data().iter().zip(y.data()) {
            worst = worst.max((u - v).abs() / u.abs().max(v.abs()).max(floor));
        }
    }
    worst
}

/// Integer DNR counts by enumeration: hidden ReLU neuron count, static
/// neurons, and dead (sample, neuron) events on non-static neurons.
pub fn dnr_counts(net: &Network, masks: &MaskState, inputs: &Tensor) -> (usize, usize, usize) {
    let mut statics = BTreeSet::new();
    let mut denominator = 0;
    let relu: Vec<usize> = (0..net.layers().len() - 1)
        .filter(|&l| net.layer(l).activation() == Activation::Relu)
        .collect();
    for &l in &relu {
        let layer = net.layer(l);
        let n = layer.neurons();
        denominator += n;
        let per_weight_neuron: Vec<usize> = match layer.spec().kind {
            LayerKind::Dense { outputs, .. } => (0..layer.weight().len()).map(|i| i % outputs).collect(),
            LayerKind::Conv2d { out_channels, .. } => {
                let per = layer.weight().len() / out_channels;
                (0..layer.weight().len()).map(|i| i / per).collect()
            }
        };
        for u in 0..n {
            let any_kept = per_weight_neuron.iter().zip(masks.layer(l)).any(|(&owner, &k)| owner == u && k);
            let bias_positive = layer.bias().is_some_and(|b| b.data()[u] > 0.0);
            if !any_kept && !bias_positive {
                statics.insert((l, u));
            }
        }
    }
    let mut dynamic = 0;
    for b in 0..inputs.rows() {
        let acts = sample_activations(net, inputs.row(b));
        for &l in &relu {
            let n = net.layer(l).neurons();
            let per = acts[l].len() / n;
            for u in 0..n {
                let dead = acts[l][u * per..(u + 1) * per].iter().all(|&v| v == 0.0);
                if dead && !statics.contains(&(l, u)) {
                    dynamic += 1;
                }
            }
        }
    }
    (denominator, statics.len(), dynamic)
}

/// LAMP score of every unmasked weight by direct summation over the weights
/// of its layer that rank at or above it.
pub fn lamp_scores(net: &Network, masks: &MaskState) -> Vec<(WeightId, f64)> {
    let mut out = Vec::new();
    for l in 0..net.layers().len() {
        let w = net.weights(l);
        let kept: Vec<usize> = (0..w.len()).filter(|&i| masks.layer(l)[i]).collect();
        for &u in &kept {
            let key = (w[u].abs(), u);
            let denom: f64 = kept
                .iter()
                .filter(|&&v| {
                    let other = (w[v].abs(), v);
                    other.0 > key.0 || (other.0 == key.0 && other.1 >= key.1)
                })
                .map(|&v| w[v] * w[v])
                .sum();
            let score = if denom > 0.0 { w[u] * w[u] / denom } else { 0.0 };
            out.push((WeightId { layer: l, index: u }, score));
        }
    }
    out
}

fn sort_take(mut scored: Vec<(WeightId, f64)>, k: usize) -> Vec<WeightId> {
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite scores").then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(id, _)| id).collect()
}

/// Full-sort selection of `k` weights by a baseline metric.
pub fn select(
    method: PruneMethod,
    net: &Network,
    masks: &MaskState,
    k: usize,
    grads: Option<&GradSet>,
) -> Result<Vec<WeightId>> {
    let mut scored = Vec::new();
    match method {
        PruneMethod::Lamp => scored = lamp_scores(net, masks),
        PruneMethod::GlobalMagnitude | PruneMethod::GlobalGradient => {
            for l in 0..net.layers().len() {
                for (i, &w) in net.weights(l).iter().enumerate() {
                    if !masks.layer(l)[i] {
                        continue;
                    }
                    let s = match (method, grads) {
                        (PruneMethod::GlobalMagnitude, _) => w.abs(),
                        (_, Some(g)) => (w * g.weights[l].data()[i]).abs(),
                        (_, None) => return Err(Error::InvalidInput("gradients required".into())),
                    };
                    scored.push((WeightId { layer: l, index: i }, s));
                }
            }
        }
        PruneMethod::Ap => return Err(Error::InvalidInput("use ap_select".into())),
    }
    Ok(sort_take(scored, k))
}

/// AP selection by sorting all unmasked weights on movement and filtering.
pub fn ap_select(init: &Snapshot, final_: &Snapshot, masks: &MaskState, quota: usize) -> Vec<WeightId> {
    let mut all = Vec::new();
    for (l, keep) in masks.layers().iter().enumerate() {
        for (i, &k) in keep.iter().enumerate() {
            if k {
                let m = (final_.weights(l)[i] - init.weights(l)[i]).abs();
                all.push((WeightId { layer: l, index: i }, m));
            }
        }
    }
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(a.0.cmp(&b.0)));
    all.into_iter()
        .filter(|(id, _)| final_.weights(id.layer)[id.index] < 0.0)
        .take(quota)
        .map(|(id, _)| id)
        .collect()
}

/// Entropy of a multiset of tuples by sorting and counting runs.
pub fn tuple_entropy(tuples: &[Vec<u32>]) -> f64 {
    let mut sorted = tuples.to_vec();
    sorted.sort();
    let n = sorted.len() as f64;
    let mut h = 0.0;
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i] != sorted[start] {
            let p = (i - start) as f64 / n;
            h -= p * p.ln();
            start = i;
        }
    }
    h
}
