use serde::{Deserialize, Serialize};

use super::layer::{Activation, Layer, LayerKind, Network};
use crate::error::{Error, Result};
use crate::mask::MaskState;
use crate::tensor::Tensor;

/// Per-hidden-layer activations recorded during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    /// Pre-activation values, one `[batch, features]` tensor per hidden layer.
    pub pre: Vec<Tensor>,
    /// Post-activation values, same layout as `pre`.
    pub post: Vec<Tensor>,
}

/// Per-parameter gradients aligned with a network's layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSet {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Option<Tensor>>,
}

impl GradSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net
                .layers()
                .iter()
                .map(|l| Tensor::zeros(l.weight().shape().to_vec()))
                .collect(),
            biases: net
                .layers()
                .iter()
                .map(|l| l.bias().map(|b| Tensor::zeros(b.shape().to_vec())))
                .collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradSet, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x += scale * y;
                }
            }
        }
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / SQRT_2));
    cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub(crate) fn activate(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Gelu => gelu(x),
        Activation::Identity => x,
    }
}

fn activation_grad(kind: Activation, pre: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if pre > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Gelu => gelu_grad(pre),
        Activation::Identity => 1.0,
    }
}

/// Pre-activation output of one layer for a `[batch, in_features]` input.
pub(crate) fn layer_pre(layer: &Layer, input: &[f64], batch: usize) -> Vec<f64> {
    let n_in = layer.in_features();
    let n_out = layer.out_features();
    let mut out = vec![0.0; batch * n_out];
    let w = layer.weight().data();
    match layer.spec().kind {
        LayerKind::Dense { outputs, .. } => {
            for b in 0..batch {
                let x = &input[b * n_in..(b + 1) * n_in];
                let o = &mut out[b * n_out..(b + 1) * n_out];
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let row = &w[i * outputs..(i + 1) * outputs];
                    for (oj, &wij) in o.iter_mut().zip(row) {
                        *oj += xi * wij;
                    }
                }
            }
        }
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            ..
        } => {
            let (h, wd) = layer.in_hw();
            let (oh, ow) = layer.out_hw();
            let (pt, pl) = layer.pad();
            for b in 0..batch {
                let x = &input[b * n_in..(b + 1) * n_in];
                let o = &mut out[b * n_out..(b + 1) * n_out];
                for oc in 0..out_channels {
                    for c in 0..in_channels {
                        for ky in 0..kernel_h {
                            for kx in 0..kernel_w {
                                let wv = w[((oc * in_channels + c) * kernel_h + ky) * kernel_w + kx];
                                if wv == 0.0 {
                                    continue;
                                }
                                for y in 0..oh {
                                    let iy = y + ky;
                                    if iy < pt || iy - pt >= h {
                                        continue;
                                    }
                                    let iy = iy - pt;
                                    for xo in 0..ow {
                                        let ix = xo + kx;
                                        if ix < pl || ix - pl >= wd {
                                            continue;
                                        }
                                        o[(oc * oh + y) * ow + xo] +=
                                            wv * x[(c * h + iy) * wd + (ix - pl)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(bias) = layer.bias() {
        let per_unit = n_out / layer.neurons();
        for b in 0..batch {
            for (u, &bv) in bias.data().iter().enumerate() {
                for v in &mut out[b * n_out + u * per_unit..b * n_out + (u + 1) * per_unit] {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Gradient of the loss with respect to one layer's weights, bias, and input,
/// given `delta = dL/d(pre)`. The input gradient is skipped when `need_input`
/// is false.
fn layer_backward(
    layer: &Layer,
    input: &[f64],
    delta: &[f64],
    batch: usize,
    grad_w: &mut [f64],
    grad_b: Option<&mut [f64]>,
    need_input: bool,
) -> Option<Vec<f64>> {
    let n_in = layer.in_features();
    let n_out = layer.out_features();
    let w = layer.weight().data();
    let mut grad_in = need_input.then(|| vec![0.0; batch * n_in]);
    match layer.spec().kind {
        LayerKind::Dense { outputs, .. } => {
            for b in 0..batch {
                let x = &input[b * n_in..(b + 1) * n_in];
                let d = &delta[b * n_out..(b + 1) * n_out];
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let g = &mut grad_w[i * outputs..(i + 1) * outputs];
                    for (gij, &dj) in g.iter_mut().zip(d) {
                        *gij += xi * dj;
                    }
                }
                if let Some(gi) = grad_in.as_mut() {
                    let gi = &mut gi[b * n_in..(b + 1) * n_in];
                    for (i, g) in gi.iter_mut().enumerate() {
                        let row = &w[i * outputs..(i + 1) * outputs];
                        *g = row.iter().zip(d).map(|(a, b)| a * b).sum();
                    }
                }
            }
        }
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            ..
        } => {
            let (h, wd) = layer.in_hw();
            let (oh, ow) = layer.out_hw();
            let (pt, pl) = layer.pad();
            for b in 0..batch {
                let x = &input[b * n_in..(b + 1) * n_in];
                let d = &delta[b * n_out..(b + 1) * n_out];
                for oc in 0..out_channels {
                    for c in 0..in_channels {
                        for ky in 0..kernel_h {
                            for kx in 0..kernel_w {
                                let widx = ((oc * in_channels + c) * kernel_h + ky) * kernel_w + kx;
                                let wv = w[widx];
                                let mut acc = 0.0;
                                for y in 0..oh {
                                    let iy = y + ky;
                                    if iy < pt || iy - pt >= h {
                                        continue;
                                    }
                                    let iy = iy - pt;
                                    for xo in 0..ow {
                                        let ix = xo + kx;
                                        if ix < pl || ix - pl >= wd {
                                            continue;
                                        }
                                        let xi = (c * h + iy) * wd + (ix - pl);
                                        let dv = d[(oc * oh + y) * ow + xo];
                                        acc += x[xi] * dv;
                                        if let Some(gi) = grad_in.as_mut() {
                                            gi[b * n_in + xi] += wv * dv;
                                        }
                                    }
                                }
                                grad_w[widx] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(gb) = grad_b {
        let per_unit = n_out / layer.neurons();
        for b in 0..batch {
            for (u, g) in gb.iter_mut().enumerate() {
                *g += delta[b * n_out + u * per_unit..b * n_out + (u + 1) * per_unit]
                    .iter()
                    .sum::<f64>();
            }
        }
    }
    grad_in
}

fn check_batch(net: &Network, batch: &Tensor) -> Result<usize> {
    let n = batch.rows();
    if batch.row_len() != net.input_features() || batch.shape().is_empty() {
        let mut expected = vec![n];
        expected.extend_from_slice(net.input_shape());
        return Err(Error::ShapeMismatch {
            expected,
            actual: batch.shape().to_vec(),
        });
    }
    Ok(n)
}

/// All layers' (pre, post) activations, the last entry being the logits.
fn forward_all(net: &Network, input: &[f64], batch: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut acts: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(net.layers().len());
    for (i, layer) in net.layers().iter().enumerate() {
        let x = if i == 0 { input } else { &acts[i - 1].1 };
        let pre = layer_pre(layer, x, batch);
        let act = layer.activation();
        let post = if i + 1 == net.layers().len() && act == Activation::Identity {
            pre.clone()
        } else {
            pre.iter().map(|&v| activate(act, v)).collect()
        };
        acts.push((pre, post));
    }
    acts
}

/// Runs the network on a `[batch, features...]` tensor and returns
/// `[batch, out]` logits, plus hidden-layer traces when requested.
pub fn forward(net: &Network, batch: &Tensor, record_activations: bool) -> Result<(Tensor, Option<Traces>)> {
    let n = check_batch(net, batch)?;
    let mut acts = forward_all(net, batch.data(), n);
    let (_, logits) = acts.pop().expect("network has layers");
    let logits = Tensor::new(vec![n, net.output_features()], logits)?;
    let traces = record_activations.then(|| {
        let mut pre = Vec::with_capacity(acts.len());
        let mut post = Vec::with_capacity(acts.len());
        for (layer, (p, q)) in net.layers().iter().zip(acts) {
            let w = layer.out_features();
            pre.push(Tensor::new(vec![n, w], p).expect("sized by layer"));
            post.push(Tensor::new(vec![n, w], q).expect("sized by layer"));
        }
        Traces { pre, post }
    });
    Ok((logits, traces))
}

/// Pre-activation of `layer` for an explicit `[batch, in_features]` input,
/// typically the recorded post-activation of the previous layer.
pub fn layer_preactivation(net: &Network, layer: usize, input: &Tensor) -> Result<Tensor> {
    let l = net
        .layers()
        .get(layer)
        .ok_or_else(|| Error::InvalidInput(format!("no layer {layer}")))?;
    if input.row_len() != l.in_features() {
        return Err(Error::ShapeMismatch {
            expected: vec![input.rows(), l.in_features()],
            actual: input.shape().to_vec(),
        });
    }
    let out = layer_pre(l, input.data(), input.rows());
    Tensor::new(vec![input.rows(), l.out_features()], out)
}

/// Mean softmax cross-entropy over a batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &[f64], classes: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let batch = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidInput(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        let z = &logits[b * classes..(b + 1) * classes];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - z[y];
        let g = &mut grad[b * classes..(b + 1) * classes];
        for (k, gk) in g.iter_mut().enumerate() {
            let p = (z[k] - m).exp() / sum;
            *gk = (p - if k == y { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    Ok((loss / batch as f64, grad))
}

/// Mean cross-entropy loss without gradients.
pub fn loss(net: &Network, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    let (logits, _) = forward(net, batch, false)?;
    softmax_cross_entropy(logits.data(), net.output_features(), labels).map(|(l, _)| l)
}

/// Loss and gradients of the mean softmax cross-entropy. Gradients of pruned
/// weights are zeroed.
pub fn backward(
    net: &Network,
    masks: &MaskState,
    batch: &Tensor,
    labels: &[usize],
) -> Result<(f64, GradSet)> {
    let n = check_batch(net, batch)?;
    if labels.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    masks.check_aligned(net)?;
    let acts = forward_all(net, batch.data(), n);
    let classes = net.output_features();
    let (loss, mut delta) = softmax_cross_entropy(&acts.last().expect("layers").1, classes, labels)?;

    let mut grads = GradSet::zeros_like(net);
    let last = net.layers().len() - 1;
    for i in (0..=last).rev() {
        let layer = net.layer(i);
        // delta currently holds dL/d(post); convert to dL/d(pre)
        let act = layer.activation();
        if act != Activation::Identity {
            for (d, &p) in delta.iter_mut().zip(&acts[i].0) {
                *d *= activation_grad(act, p);
            }
        }
        let input: &[f64] = if i == 0 { batch.data() } else { &acts[i - 1].1 };
        let grad_b = grads.biases[i].as_mut().map(Tensor::data_mut);
        let next = layer_backward(
            layer,
            input,
            &delta,
            n,
            grads.weights[i].data_mut(),
            grad_b,
            i > 0,
        );
        for (g, &keep) in grads.weights[i].data_mut().iter_mut().zip(masks.layer(i)) {
            if !keep {
                *g = 0.0;
            }
        }
        if let Some(next) = next {
            delta = next;
        }
    }
    Ok((loss, grads))
}

/// Predicted class per row: the first index of the maximal logit.
pub fn predict(net: &Network, features: &Tensor) -> Result<Vec<usize>> {
    const CHUNK: usize = 512;
    let n = check_batch(net, features)?;
    let width = features.row_len();
    let classes = net.output_features();
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let acts = forward_all(net, &features.data()[start * width..end * width], end - start);
        let logits = &acts.last().expect("layers").1;
        for row in logits.chunks(classes) {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

pub fn accuracy(net: &Network, features: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("accuracy over an empty set".into()));
    }
    let pred = predict(net, features)?;
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, LayerSpec};

    fn single_neuron() -> Network {
        let mut net = Network::new(vec![2], &[LayerSpec::dense(2, 1, Activation::Relu)]).unwrap();
        net.weights_mut(0).copy_from_slice(&[1.0, -1.0]);
        net
    }

    fn two_layer() -> Network {
        let mut net = Network::new(
            vec![2],
            &[
                LayerSpec::dense(2, 1, Activation::Relu),
                LayerSpec::dense(1, 2, Activation::Identity),
            ],
        )
        .unwrap();
        net.weights_mut(0).copy_from_slice(&[1.0, -1.0]);
        net.weights_mut(1).copy_from_slice(&[0.5, -0.5]);
        net
    }

    #[test]
    fn relu_neuron_hand_arithmetic() {
        let net = two_layer();
        let x = Tensor::from_rows(&[vec![3.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let (_, traces) = forward(&net, &x, true).unwrap();
        let t = traces.unwrap();
        assert_eq!(t.pre[0].data(), &[2.0, -2.0]);
        assert_eq!(t.post[0].data(), &[2.0, 0.0]);
        // a ReLU output layer is still activated
        let (logits, _) = forward(&single_neuron(), &x, false).unwrap();
        assert_eq!(logits.data(), &[2.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = two_layer();
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(forward(&net, &x, false), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let net = two_layer();
        let masks = MaskState::new(&net);
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(
            backward(&net, &masks, &x, &[2]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn dead_neuron_has_zero_incoming_gradient() {
        let net = two_layer();
        let masks = MaskState::new(&net);
        // both samples give negative pre-activation
        let x = Tensor::from_rows(&[vec![1.0, 3.0], vec![0.0, 2.0]]).unwrap();
        let (_, g) = backward(&net, &masks, &x, &[0, 1]).unwrap();
        assert_eq!(g.weights[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn fully_pruned_layer_has_zero_gradient() {
        let mut net = Network::new(
            vec![3],
            &[
                LayerSpec::dense(3, 4, Activation::Relu),
                LayerSpec::dense(4, 2, Activation::Identity),
            ],
        )
        .unwrap();
        init_params(&mut net, 3);
        let mut masks = MaskState::new(&net);
        for i in 0..net.weights(1).len() {
            masks.prune(&mut net, 1, i).unwrap();
        }
        let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.0, 1.0, 1.0]]).unwrap();
        let (_, g) = backward(&net, &masks, &x, &[0, 1]).unwrap();
        assert!(g.weights[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gelu_matches_definition() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        let h = 1e-6;
        for &x in &[-2.0, -0.3, 0.7, 1.9] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let (l, g) = softmax_cross_entropy(&[1000.0, 0.0], 2, &[0]).unwrap();
        assert!(l.is_finite() && l < 1e-12);
        assert!(g.iter().all(|v| v.is_finite()));
    }
}
