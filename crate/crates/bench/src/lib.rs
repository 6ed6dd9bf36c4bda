//! Shared fixtures for the benchmarks.

use prunelab_core::nn::init_params;
use prunelab_core::rng::seeded_rng;
use prunelab_core::{Activation, LayerSpec, Network, Tensor};
use rand::Rng;

pub fn mlp(widths: &[usize], seed: u64) -> Network {
    let specs: Vec<LayerSpec> = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == widths.len() { Activation::Identity } else { Activation::Relu };
            LayerSpec::dense(w[0], w[1], act)
        })
        .collect();
    let mut net = Network::new(vec![widths[0]], &specs).expect("valid widths");
    init_params(&mut net, seed);
    net
}

pub fn batch(rows: usize, cols: usize, classes: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = seeded_rng(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    (Tensor::new(vec![rows, cols], data).expect("shape"), labels)
}
