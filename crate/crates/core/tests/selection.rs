mod common;

use std::collections::BTreeSet;

use common::*;
use prunelab_core::mask::{
    dataset_gradients, prune_count, select_count, select_global_gradient, select_global_magnitude, select_lamp,
};
use prunelab_core::data::Dataset;
use prunelab_core::nn::{backward, Activation};
use prunelab_core::{oracle, MaskState, PruneMethod, WeightId};
use proptest::prelude::*;
use rand::Rng;


proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn baseline_selectors_match_full_sort(seed in any::<u64>(), fraction in 1.0f64..60.0, rate in 0.0f64..0.5) {
        let mut r = rng(seed);
        let mut widths = vec![r.random_range(2..12)];
        widths.extend(random_widths(&mut r, 2, 24));
        widths.push(3);
        let mut net = random_mlp(&mut r, &widths, Activation::Relu, false);
        let masks = random_masks(&mut r, &mut net, rate);
        prop_assume!(masks.remaining() > 0);
        let k = prune_count(fraction, masks.remaining());
        let x = random_batch(&mut r, 8, widths[0]);
        let y = random_labels(&mut r, 8, 3);
        let (_, grads) = backward(&net, &masks, &x, &y).unwrap();

        let m = select_global_magnitude(&net, &masks, fraction).unwrap();
        prop_assert_eq!(&m.selected, &oracle::select(PruneMethod::GlobalMagnitude, &net, &masks, k, None).unwrap());
        let g = select_global_gradient(&net, &masks, fraction, &grads).unwrap();
        prop_assert_eq!(&g.selected, &oracle::select(PruneMethod::GlobalGradient, &net, &masks, k, Some(&grads)).unwrap());
        let l = select_lamp(&net, &masks, fraction).unwrap();
        prop_assert_eq!(&l.selected, &oracle::select(PruneMethod::Lamp, &net, &masks, k, None).unwrap());
        for a in [&m, &g, &l] {
            prop_assert_eq!(a.selected.len(), k);
            prop_assert!(a.selected.iter().all(|id| masks.is_kept(*id)));
        }
    }

    #[test]
    fn lamp_scores_match_direct_sums(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut net = random_mlp(&mut r, &[4, 9, 5, 2], Activation::Relu, false);
        let masks = random_masks(&mut r, &mut net, 0.3);
        let fast = prunelab_core::mask::lamp_candidates(&net, &masks);
        let slow = oracle::lamp_scores(&net, &masks);
        let slow: std::collections::BTreeMap<WeightId, f64> = slow.into_iter().collect();
        prop_assert_eq!(fast.len(), slow.len());
        for (s, id) in fast {
            let o = slow[&id];
            prop_assert!((s - o).abs() <= 1e-12 * o.max(1e-300), "{} vs {}", s, o);
        }
    }

    #[test]
    fn cycles_prune_disjoint_sets_and_count_exactly(seed in any::<u64>(), cycles in 1usize..6) {
        let mut r = rng(seed);
        let mut net = random_mlp(&mut r, &[6, 10, 4], Activation::Relu, false);
        let mut masks = MaskState::new(&net);
        let total = masks.total();
        let mut seen = BTreeSet::new();
        let mut remaining = total;
        for _ in 0..cycles {
            let a = select_global_magnitude(&net, &masks, 20.0).unwrap();
            prop_assert_eq!(a.selected.len(), prune_count(20.0, remaining));
            for id in &a.selected {
                prop_assert!(seen.insert(*id));
            }
            masks.apply_action(&mut net, &a).unwrap();
            remaining -= a.selected.len();
            prop_assert_eq!(masks.remaining(), remaining);
            prop_assert_eq!(masks.recount_pruned(), total - remaining);
            let rec = masks.lambda();
            prop_assert!((rec.lambda_percent - 100.0 * remaining as f64 / total as f64).abs() < 1e-12);
            for id in &seen {
                prop_assert_eq!(net.weights(id.layer)[id.index], 0.0);
            }
            // perturb survivors so the next cycle sees new magnitudes
            for l in 0..2 {
                for i in 0..net.weights(l).len() {
                    if masks.layer(l)[i] {
                        net.weights_mut(l)[i] *= r.random_range(0.5..1.5);
                    }
                }
            }
        }
    }
}

#[test]
fn dataset_gradients_weight_chunks_by_size() {
    let mut r = rng(3);
    let net = random_mlp(&mut r, &[3, 4, 2], Activation::Relu, true);
    let masks = MaskState::new(&net);
    let x = random_batch(&mut r, 300, 3);
    let y = random_labels(&mut r, 300, 2);
    let (_, whole) = backward(&net, &masks, &x, &y).unwrap();
    let data = Dataset::new(x, y, 2).unwrap();
    let chunked = dataset_gradients(&net, &masks, &data).unwrap();
    assert!(oracle::max_relative_error(&whole, &chunked, 1e-12) < 1e-10);
}

#[test]
fn select_count_caps_at_remaining() {
    let mut r = rng(4);
    let mut net = random_mlp(&mut r, &[2, 3, 2], Activation::Relu, false);
    let masks = random_masks(&mut r, &mut net, 0.5);
    let all = select_count(PruneMethod::GlobalMagnitude, &net, &masks, 1000, None).unwrap();
    assert_eq!(all.len(), masks.remaining());
    assert!(select_count(PruneMethod::GlobalGradient, &net, &masks, 1, None).is_err());
    assert!(select_count(PruneMethod::Ap, &net, &masks, 1, None).is_err());
}
