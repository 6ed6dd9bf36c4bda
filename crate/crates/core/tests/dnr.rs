mod common;

use common::*;
use prunelab_core::dnr::{classify_static, compute_dnr, gini, hoyer};
use prunelab_core::mask::select_global_magnitude;
use prunelab_core::nn::Activation;
use prunelab_core::oracle;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn counts_match_enumeration(seed in any::<u64>(), rate in 0.0f64..0.95, bias in any::<bool>()) {
        let mut r = rng(seed);
        let mut net = random_mlp(&mut r, &[2, 12, 9, 2], Activation::Relu, bias);
        let masks = random_masks(&mut r, &mut net, rate);
        let x = random_batch(&mut r, 40, 2);
        let report = compute_dnr(&net, &masks, &x).unwrap();
        let (denominator, statics, dynamic) = oracle::dnr_counts(&net, &masks, &x);
        prop_assert_eq!(report.denominator, denominator);
        prop_assert_eq!(report.static_count, statics);
        prop_assert_eq!(report.dynamic_count, dynamic);
        prop_assert_eq!(report.dnr, report.static_dnr + report.dynamic_dnr);
        prop_assert!(report.dnr >= 0.0 && report.dnr <= 1.0);
        let per_layer_static: usize = report.per_layer.iter().map(|l| l.static_count).sum();
        prop_assert_eq!(per_layer_static, statics);
    }

    #[test]
    fn static_set_only_grows_under_pruning(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut net = random_mlp(&mut r, &[3, 8, 6, 2], Activation::Relu, false);
        let mut masks = prunelab_core::MaskState::new(&net);
        let mut prev = classify_static(&net, &masks).unwrap();
        for _ in 0..10 {
            let a = select_global_magnitude(&net, &masks, 30.0).unwrap();
            masks.apply_action(&mut net, &a).unwrap();
            let now = classify_static(&net, &masks).unwrap();
            prop_assert!(prev.is_subset(&now));
            prev = now;
        }
    }

    #[test]
    fn sparsity_measures_are_bounded(values in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
        prop_assume!(values.iter().any(|v| *v != 0.0));
        let n = values.len() as f64;
        let h = hoyer(&values).unwrap();
        prop_assert!(h >= 1.0 - 1e-12 && h <= n.sqrt() + 1e-12);
        let g = gini(&values).unwrap();
        prop_assert!(g >= -1e-12 && g <= 1.0 - 1.0 / n + 1e-12);
    }
}

#[test]
fn static_neurons_are_dead_on_every_sample() {
    let mut r = rng(1);
    let mut net = random_mlp(&mut r, &[4, 6, 3], Activation::Relu, false);
    let mut masks = prunelab_core::MaskState::new(&net);
    kill_neuron(&mut net, &mut masks, 0, 2);
    kill_neuron(&mut net, &mut masks, 0, 5);
    let x = random_batch(&mut r, 64, 4);
    let report = compute_dnr(&net, &masks, &x).unwrap();
    assert_eq!(report.static_count, 2);
    assert_eq!(report.per_layer[0].s_dnr, 2.0 / 6.0);
}
