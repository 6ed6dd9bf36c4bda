mod common;

use common::*;
use prunelab_core::nn::{backward, forward, init_params, Activation, LayerSpec, Network, Padding};
use prunelab_core::oracle;
use prunelab_core::MaskState;
use proptest::prelude::*;

const FD_STEP: f64 = 1e-6;
const FD_FLOOR: f64 = 1e-3;
const FD_TOL: f64 = 1e-6;

fn fd_error(net: &Network, masks: &MaskState, seed: u64, rows: usize) -> f64 {
    let mut r = rng(seed ^ 0xabc);
    let x = random_batch(&mut r, rows, net.input_features());
    let y = random_labels(&mut r, rows, net.output_features());
    let (_, analytic) = backward(net, masks, &x, &y).unwrap();
    let numeric = oracle::fd_gradients(net, masks, &x, &y, FD_STEP);
    oracle::max_relative_error(&analytic, &numeric, FD_FLOOR)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), bias in any::<bool>(), rate in 0.0f64..0.6) {
        let mut r = rng(seed);
        let mut widths = vec![r.random_range(2..6)];
        widths.extend(random_widths(&mut r, 2, 8));
        widths.push(r.random_range(2..4));
        let mut net = random_mlp(&mut r, &widths, Activation::Relu, bias);
        let masks = random_masks(&mut r, &mut net, rate);
        let err = fd_error(&net, &masks, seed, 6);
        prop_assert!(err <= FD_TOL, "relative error {err}");
    }

    #[test]
    fn masked_gradients_are_zero(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut net = random_mlp(&mut r, &[4, 6, 3], Activation::Relu, true);
        let masks = random_masks(&mut r, &mut net, 0.5);
        let x = random_batch(&mut r, 5, 4);
        let y = random_labels(&mut r, 5, 3);
        let (_, g) = backward(&net, &masks, &x, &y).unwrap();
        for l in 0..2 {
            for (i, &keep) in masks.layer(l).iter().enumerate() {
                if !keep {
                    prop_assert_eq!(g.weights[l].data()[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn forward_matches_per_sample_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut net = random_mlp(&mut r, &[5, 7, 4, 3], Activation::Relu, true);
        let _ = random_masks(&mut r, &mut net, 0.3);
        let x = random_batch(&mut r, 9, 5);
        let (logits, traces) = forward(&net, &x, true).unwrap();
        let traces = traces.unwrap();
        for b in 0..9 {
            let acts = oracle::sample_activations(&net, x.row(b));
            for (u, v) in logits.row(b).iter().zip(&acts[2]) {
                prop_assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
            for l in 0..2 {
                for (u, v) in traces.post[l].row(b).iter().zip(&acts[l]) {
                    prop_assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
                    // the ReLU gate is exact
                    prop_assert_eq!(*u == 0.0, *v == 0.0);
                }
            }
        }
    }
}

use rand::Rng;

#[test]
fn gradient_check_with_dead_neurons() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let mut net = random_mlp(&mut r, &[3, 6, 5, 2], Activation::Relu, false);
        let mut masks = random_masks(&mut r, &mut net, 0.2);
        kill_neuron(&mut net, &mut masks, 0, 1);
        kill_neuron(&mut net, &mut masks, 1, 4);
        assert!(fd_error(&net, &masks, seed, 6) <= FD_TOL);
    }
}

#[test]
fn gradient_check_gelu_and_conv() {
    let mut r = rng(7);
    let net = random_mlp(&mut r, &[3, 5, 2], Activation::Gelu, true);
    assert!(fd_error(&net, &MaskState::new(&net), 7, 4) <= FD_TOL);

    for padding in [Padding::Valid, Padding::Same] {
        let out = if padding == Padding::Same { 2 * 5 * 5 } else { 2 * 3 * 3 };
        let mut net = Network::new(
            vec![1, 5, 5],
            &[
                LayerSpec::conv(1, 2, 3, padding, Activation::Relu).with_bias(),
                LayerSpec::dense(out, 3, Activation::Identity),
            ],
        )
        .unwrap();
        randomize(&mut r, &mut net);
        let masks = random_masks(&mut r, &mut net, 0.2);
        assert!(fd_error(&net, &masks, 9, 3) <= FD_TOL);
        let x = random_batch(&mut r, 2, 25);
        let (logits, _) = forward(&net, &x, false).unwrap();
        for b in 0..2 {
            let acts = oracle::sample_activations(&net, x.row(b));
            for (u, v) in logits.row(b).iter().zip(&acts[1]) {
                assert!((u - v).abs() < 1e-12 * (1.0 + v.abs()));
            }
        }
    }
}

#[test]
fn training_step_is_deterministic() {
    use prunelab_core::data::{generate_dataset, SyntheticKind};
    use prunelab_core::nn::LrSchedule;
    use prunelab_core::train::{train_to_convergence, TrainConfig};
    let splits = generate_dataset(SyntheticKind::Blobs { n: 120, classes: 3, noise: 0.3 }, 5).unwrap();
    let run = || {
        let mut net = Network::new(vec![2], &[LayerSpec::dense(2, 8, Activation::Relu), LayerSpec::dense(8, 3, Activation::Identity)]).unwrap();
        init_params(&mut net, 11);
        let masks = MaskState::new(&net);
        let config = TrainConfig { max_epochs: 4, seed: 3, ..TrainConfig::default() };
        train_to_convergence(&mut net, &masks, &splits, &config, &LrSchedule::Constant(0.1), &[]).unwrap();
        net.weights(0).iter().map(|w| w.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
