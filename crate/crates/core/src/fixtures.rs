//! Random networks, masks and batches for property checks.

use rand::Rng as _;

use crate::mask::MaskState;
use crate::nn::{Activation, LayerSpec, Network};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// MLP with `U(-1, 1)` weights and `U(-0.5, 0.5)` biases; hidden layers use `act`.
pub fn random_mlp(rng: &mut Rng, widths: &[usize], act: Activation, bias: bool) -> Network {
    let specs: Vec<LayerSpec> = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let a = if i + 2 == widths.len() { Activation::Identity } else { act };
            let s = LayerSpec::dense(w[0], w[1], a);
            if bias {
                s.with_bias()
            } else {
                s
            }
        })
        .collect();
    let mut net = Network::new(vec![widths[0]], &specs).unwrap();
    randomize(rng, &mut net);
    net
}

pub fn randomize(rng: &mut Rng, net: &mut Network) {
    for l in 0..net.layers().len() {
        for w in net.weights_mut(l) {
            *w = rng.random_range(-1.0..1.0);
        }
        if let Some(b) = net.bias_mut(l) {
            for v in b {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
}

/// Prunes each weight independently with probability `rate`.
pub fn random_masks(rng: &mut Rng, net: &mut Network, rate: f64) -> MaskState {
    let mut masks = MaskState::new(net);
    for l in 0..net.layers().len() {
        for i in 0..net.weights(l).len() {
            if rng.random_bool(rate) {
                masks.prune(net, l, i).unwrap();
            }
        }
    }
    masks
}

/// Prunes every incoming weight of `unit` in `layer`.
pub fn kill_neuron(net: &mut Network, masks: &mut MaskState, layer: usize, unit: usize) {
    for i in net.layer(layer).incoming_weights(unit) {
        if masks.layer(layer)[i] {
            masks.prune(net, layer, i).unwrap();
        }
    }
}

pub fn random_batch(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

pub fn random_labels(rng: &mut Rng, rows: usize, classes: usize) -> Vec<usize> {
    (0..rows).map(|_| rng.random_range(0..classes)).collect()
}

pub fn random_widths(rng: &mut Rng, depth: usize, max_width: usize) -> Vec<usize> {
    (0..depth).map(|_| rng.random_range(2..=max_width)).collect()
}
