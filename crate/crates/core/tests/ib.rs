mod common;

use common::*;
use prunelab_core::dnr::layer_dnr;
use prunelab_core::ib::{
    corollary1_check, empirical_entropy, quantized_tuples, theorem1_bound, theorem1_bound_published, validity_holds,
    verify_bound_chain, BoundParams, LayerDnrPair, Quantizer,
};
use prunelab_core::nn::Activation;
use prunelab_core::{oracle, MaskState, Tensor};
use proptest::prelude::*;

fn grid_inputs(dim: usize, steps: usize) -> Tensor {
    let n = steps.pow(dim as u32);
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let mut rem = k;
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            row.push(-1.0 + 2.0 * (rem % steps) as f64 / (steps - 1) as f64);
            rem /= steps;
        }
        rows.push(row);
    }
    Tensor::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn both_forms_agree(s in 0.0f64..0.95, frac in 0.0f64..1.0, c in 0.05f64..20.0, dim in 1usize..50) {
        let d = frac * (1.0 - s);
        let pair = LayerDnrPair::new(s, d).unwrap();
        let params = BoundParams::new(dim, c).unwrap();
        let a = theorem1_bound(&params, &pair);
        let b = theorem1_bound_published(&params, &pair);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{} vs {}", a, b);
    }

    #[test]
    fn chain_holds_on_random_tiny_nets(seed in any::<u64>(), rate in 0.0f64..0.7, alpha in 0.05f64..0.5) {
        let mut r = rng(seed);
        let mut net = random_mlp(&mut r, &[2, 5, 3], Activation::Relu, true);
        let masks = random_masks(&mut r, &mut net, rate);
        let x = grid_inputs(2, 16);
        let q = Quantizer::new(3.0, alpha).unwrap();
        let eval = verify_bound_chain(&net, &masks, 0, &x, &q).unwrap();
        prop_assert!(eval.holds(1e-9), "{:?}", eval);
        let (tuples, _) = quantized_tuples(&net, 0, &x, &q).unwrap();
        prop_assert!((eval.h_t - oracle::tuple_entropy(&tuples)).abs() < 1e-12);
    }
}

#[test]
fn mean_zero_probability_is_the_adjusted_dynamic_rate() {
    let mut r = rng(8);
    let mut net = random_mlp(&mut r, &[2, 6, 2], Activation::Relu, false);
    let mut masks = MaskState::new(&net);
    kill_neuron(&mut net, &mut masks, 0, 4);
    let x = grid_inputs(2, 10);
    let (_, stats) = empirical_entropy(&net, &masks, 0, &x, &Quantizer::new(4.0, 0.1).unwrap()).unwrap();
    let (s, d) = layer_dnr(&net, &masks, &x, 0).unwrap();
    assert_eq!(stats.s(), s);
    assert!((stats.d_prime() - d / (1.0 - s)).abs() < 1e-15);
    assert_eq!(stats.active(), 5);
    for phi in &stats.phi {
        assert!((phi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn fully_pruned_layer_has_zero_entropy() {
    let mut r = rng(9);
    let mut net = random_mlp(&mut r, &[2, 4, 2], Activation::Relu, false);
    let mut masks = MaskState::new(&net);
    for u in 0..4 {
        kill_neuron(&mut net, &mut masks, 0, u);
    }
    let eval = verify_bound_chain(&net, &masks, 0, &grid_inputs(2, 8), &Quantizer::new(1.0, 0.1).unwrap()).unwrap();
    assert_eq!((eval.h_t, eval.sum_marginals, eval.z), (0.0, 0.0, 0.0));
}

#[test]
fn admissible_grid_is_monotone() {
    for c in [0.7, 2.0, 5.0, 50.0] {
        let params = BoundParams::new(6, c).unwrap();
        let mut grid = Vec::new();
        for i in 0..20 {
            for j in 1..20 {
                grid.push((i as f64 * 0.045, j as f64 * 0.045));
            }
        }
        let report = corollary1_check(&params, &grid, 1e-6).unwrap();
        assert!(report.passed(), "{:?}", report.violations);
        assert!(!report.checked.is_empty());
        for &(s, d, _) in &report.excluded {
            if let Ok(pair) = LayerDnrPair::new(s, d) {
                assert!(!validity_holds(c, &pair) || d < 2e-6 || s + d > 1.0 - 3e-6);
            }
        }
    }
}
