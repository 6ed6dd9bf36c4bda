//! Oracle checks for every documented invariant, reported by id.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::Serialize;

use prunelab_core::ap::{
    ap_select_count, run_with_ap, weight_rewind, ApConfig, ApVariant, CyclePlan, RunContext, RunEvent, RunObserver,
    RunState,
};
use prunelab_core::data::{generate_dataset, mnist_from_idx_bytes, to_idx_bytes, Dataset, SyntheticKind};
use prunelab_core::dnr::{classify_static, compute_dnr};
use prunelab_core::fixtures::{kill_neuron, random_batch, random_labels, random_masks, random_mlp, random_widths};
use prunelab_core::ib::{
    corollary1_check, theorem1_bound, theorem1_bound_published, verify_bound_chain, BoundParams, LayerDnrPair,
    Quantizer,
};
use prunelab_core::mask::{dataset_gradients, lambda_percent, prune_count, select_count};
use prunelab_core::nn::{
    backward, forward, init_params, layer_preactivation, sgd_step, Activation, LayerSpec, LrSchedule, Network,
    Padding,
};
use prunelab_core::rng::{seeded_rng, Rng};
use prunelab_core::train::{train_to_convergence, train_with_step, StepFn, TrainConfig};
use prunelab_core::{oracle, Error, MaskState, PruneMethod, Snapshot, SnapshotTag, Tensor, WeightId};

use crate::checkpoint::Checkpoint;
use crate::config::parse_config;
use crate::experiment::execute_run;
use crate::metrics::{read_metrics, COLUMNS, EVENTS};

/// Finite-difference step, comparison floor and tolerance for gradients.
pub const FD_STEP: f64 = 1e-6;
pub const FD_FLOOR: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-6;

pub const INVARIANT_IDS: &[&str] = &[
    "nn.gradient_fd",
    "nn.relu_gate",
    "nn.mask_freeze",
    "nn.determinism",
    "mask.monotone_sparsity",
    "mask.selection_oracle",
    "mask.disjoint_actions",
    "mask.lambda_arithmetic",
    "dnr.additivity",
    "dnr.static_constancy",
    "dnr.static_monotonicity",
    "dnr.denominator_constancy",
    "dnr.oracle_equivalence",
    "ap.negativity",
    "ap.order_respect",
    "ap.preactivation_monotonicity",
    "ap.rewind_exactness",
    "ap.cycle_bookkeeping",
    "ib.formula_identity",
    "ib.chain_validity",
    "ib.entropy_oracle",
    "ib.monotonicity",
    "ib.limit_continuity",
    "harness.provenance",
    "harness.determinism",
    "harness.schema_stability",
    "harness.lambda_consistency",
    "harness.checkpoint_roundtrip",
    "harness.idx_format",
];

/// `Ok(detail)` on success, `Err(detail)` naming the first violation.
pub type Check = std::result::Result<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Random dense network of at most `max_params` parameters with 1 to 3
/// hidden layers.
fn small_mlp(rng: &mut Rng, act: Activation, bias: bool, max_params: usize) -> Network {
    loop {
        let depth = rng.random_range(1..=3);
        let mut widths = vec![rng.random_range(2..=6)];
        widths.extend(random_widths(rng, depth, 12));
        widths.push(rng.random_range(2..=4));
        let net = random_mlp(rng, &widths, act, bias);
        if net.param_count() <= max_params {
            return net;
        }
    }
}

fn fd_error(net: &Network, masks: &MaskState, rng: &mut Rng, rows: usize) -> std::result::Result<f64, Error> {
    let x = random_batch(rng, rows, net.input_features());
    let y = random_labels(rng, rows, net.output_features());
    let (_, analytic) = backward(net, masks, &x, &y)?;
    let numeric = oracle::fd_gradients(net, masks, &x, &y, FD_STEP);
    Ok(oracle::max_relative_error(&analytic, &numeric, FD_FLOOR))
}

/// Analytic gradients against central differences on `nets` random
/// networks of at most 1k parameters, with pruned weights and dead neurons.
pub fn check_gradients(seed: u64, nets: usize) -> Check {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..nets {
        let act = if i % 5 == 4 { Activation::Gelu } else { Activation::Relu };
        let mut net = small_mlp(&mut rng, act, i % 2 == 0, 1000);
        let rate = rng.random_range(0.0..0.5);
        let mut masks = random_masks(&mut rng, &mut net, rate);
        let width = net.layer(0).neurons();
        kill_neuron(&mut net, &mut masks, 0, rng.random_range(0..width));
        let err = fd_error(&net, &masks, &mut rng, 6).map_err(fail)?;
        worst = worst.max(err);
        if err > FD_TOL {
            return Err(format!("net {i}: relative error {err:e} > {FD_TOL:e}"));
        }
    }
    for padding in [Padding::Valid, Padding::Same] {
        let out = if padding == Padding::Same { 2 * 25 } else { 2 * 9 };
        let mut net = Network::new(
            vec![1, 5, 5],
            &[
                LayerSpec::conv(1, 2, 3, padding, Activation::Relu).with_bias(),
                LayerSpec::dense(out, 3, Activation::Identity),
            ],
        )
        .map_err(fail)?;
        prunelab_core::fixtures::randomize(&mut rng, &mut net);
        let masks = random_masks(&mut rng, &mut net, 0.2);
        let err = fd_error(&net, &masks, &mut rng, 3).map_err(fail)?;
        worst = worst.max(err);
        if err > FD_TOL {
            return Err(format!("conv {padding:?}: relative error {err:e}"));
        }
    }
    Ok(format!("{} networks, worst relative error {worst:.2e}", nets + 2))
}

/// Per-sample gradients into a neuron that is off on that sample are zero.
pub fn check_relu_gate(seed: u64, nets: usize) -> Check {
    let mut rng = seeded_rng(seed);
    let mut gated = 0usize;
    for i in 0..nets {
        let net = small_mlp(&mut rng, Activation::Relu, true, 1000);
        let masks = MaskState::new(&net);
        for s in 0..8 {
            let x = random_batch(&mut rng, 1, net.input_features());
            let y = random_labels(&mut rng, 1, net.output_features());
            let (_, traces) = forward(&net, &x, true).map_err(fail)?;
            let traces = traces.expect("requested");
            let (_, grads) = backward(&net, &masks, &x, &y).map_err(fail)?;
            for l in net.hidden_layers() {
                for (u, (&pre, &post)) in traces.pre[l].data().iter().zip(traces.post[l].data()).enumerate() {
                    if post == 0.0 && pre < 0.0 {
                        gated += 1;
                        for w in net.layer(l).incoming_weights(u) {
                            let g = grads.weights[l].data()[w];
                            if g != 0.0 {
                                return Err(format!("net {i} sample {s}: layer {l} unit {u} weight {w} gradient {g}"));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(format!("{gated} gated (sample, neuron) pairs"))
}

fn blob_splits(seed: u64) -> std::result::Result<prunelab_core::data::Splits, String> {
    generate_dataset(
        SyntheticKind::Blobs {
            n: 200,
            classes: 3,
            noise: 0.3,
        },
        seed,
    )
    .map_err(fail)
}

/// Trains a half-pruned network with the supplied update rule and checks
/// every pruned weight is exactly zero after every epoch.
pub fn check_mask_freeze(seed: u64, step: StepFn) -> Check {
    let splits = blob_splits(seed)?;
    let mut rng = seeded_rng(seed);
    let mut net = prunelab_core::arch::build_network("dense:2-16-16-3:relu:bias").map_err(fail)?;
    init_params(&mut net, seed);
    let masks = random_masks(&mut rng, &mut net, 0.5);
    let config = TrainConfig {
        max_epochs: 4,
        early_stop_patience: 4,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    };
    let mut violation: Option<String> = None;
    let mut epochs = 0;
    let mut observe = |stats: &prunelab_core::train::EpochStats, net: &Network| {
        epochs += 1;
        if violation.is_some() {
            return;
        }
        if let Some(v) = first_unfrozen(net, &masks) {
            violation = Some(format!("epoch {}: {v}", stats.epoch));
        }
    };
    train_with_step(
        &mut net,
        &masks,
        &splits,
        &config,
        &LrSchedule::Constant(0.05),
        &[],
        &mut observe,
        step,
    )
    .map_err(fail)?;
    if let Some(v) = violation.or_else(|| first_unfrozen(&net, &masks)) {
        return Err(v);
    }
    Ok(format!("{} pruned weights frozen over {epochs} logged epochs", masks.pruned()))
}

fn first_unfrozen(net: &Network, masks: &MaskState) -> Option<String> {
    for l in 0..net.layers().len() {
        for (i, (&w, &k)) in net.weights(l).iter().zip(masks.layer(l)).enumerate() {
            if !k && w.to_bits() != 0 {
                return Some(format!("pruned weight ({l}, {i}) holds {w}"));
            }
        }
    }
    None
}

/// Two identical training calls give identical results.
pub fn check_training_determinism(seed: u64) -> Check {
    let splits = blob_splits(seed)?;
    let run = || {
        let mut net = prunelab_core::arch::build_network("dense:2-12-3:relu:bias").expect("valid arch");
        init_params(&mut net, seed);
        let masks = MaskState::new(&net);
        let config = TrainConfig {
            max_epochs: 5,
            seed,
            ..TrainConfig::default()
        };
        train_to_convergence(&mut net, &masks, &splits, &config, &LrSchedule::Constant(0.05), &[2])
    };
    let (a, b) = (run().map_err(fail)?, run().map_err(fail)?);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    if bits(&a.loss_history) != bits(&b.loss_history) || a.final_params != b.final_params {
        return Err("repeated training diverged".into());
    }
    Ok(format!("{} epochs bit-identical", a.epochs_run))
}

fn sorted(mut v: Vec<WeightId>) -> Vec<WeightId> {
    v.sort();
    v
}

/// Optimized selectors against full-sort oracles on random networks of at
/// most `max_weights` weights, with some weights quantized to force ties.
pub fn check_selection_oracle(seed: u64, nets: usize, max_weights: usize) -> Check {
    let mut rng = seeded_rng(seed);
    let mut compared = 0;
    for i in 0..nets {
        let mut net = loop {
            let depth = rng.random_range(1..=3);
            let mut widths = vec![rng.random_range(2..=40)];
            widths.extend(random_widths(&mut rng, depth, 80));
            widths.push(rng.random_range(2..=10));
            let net = random_mlp(&mut rng, &widths, Activation::Relu, true);
            if net.weight_count() <= max_weights {
                break net;
            }
        };
        if i % 3 == 0 {
            for l in 0..net.layers().len() {
                for w in net.weights_mut(l) {
                    *w = (*w * 4.0).round() / 4.0;
                }
            }
        }
        let rate = rng.random_range(0.0..0.6);
        let masks = random_masks(&mut rng, &mut net, rate);
        let rows = 16;
        let x = random_batch(&mut rng, rows, net.input_features());
        let y = random_labels(&mut rng, rows, net.output_features());
        let data = Dataset::new(x, y, net.output_features()).map_err(fail)?;
        let grads = dataset_gradients(&net, &masks, &data).map_err(fail)?;
        let fraction = rng.random_range(1.0..50.0);
        let k = prune_count(fraction, masks.remaining());
        for method in [PruneMethod::GlobalMagnitude, PruneMethod::GlobalGradient, PruneMethod::Lamp] {
            let fast = select_count(method, &net, &masks, k, Some(&grads)).map_err(fail)?;
            let slow = oracle::select(method, &net, &masks, k, Some(&grads)).map_err(fail)?;
            if sorted(fast) != sorted(slow) {
                return Err(format!("net {i}: {} selection differs from the oracle", method.name()));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} selections equal their oracles"))
}

/// DNR counts against per-sample enumeration, plus exact additivity.
/// `shape` fixes the widths; otherwise random widths are drawn.
pub fn check_dnr_oracle(seed: u64, nets: usize, samples: usize, shape: Option<&[usize]>) -> Check {
    let mut rng = seeded_rng(seed);
    for i in 0..nets {
        let mut net = match shape {
            Some(w) => random_mlp(&mut rng, w, Activation::Relu, i % 2 == 0),
            None => small_mlp(&mut rng, Activation::Relu, i % 2 == 0, 1000),
        };
        let rate = rng.random_range(0.0..0.7);
        let mut masks = random_masks(&mut rng, &mut net, rate);
        let width = net.layer(0).neurons();
        kill_neuron(&mut net, &mut masks, 0, rng.random_range(0..width));
        let x = random_batch(&mut rng, samples, net.input_features());
        let report = compute_dnr(&net, &masks, &x).map_err(fail)?;
        let (denominator, statics, dynamic) = oracle::dnr_counts(&net, &masks, &x);
        if (report.denominator, report.static_count, report.dynamic_count) != (denominator, statics, dynamic) {
            return Err(format!(
                "net {i}: counts ({}, {}, {}) vs oracle ({denominator}, {statics}, {dynamic})",
                report.denominator, report.static_count, report.dynamic_count
            ));
        }
        if report.dnr.to_bits() != (report.static_dnr + report.dynamic_dnr).to_bits() {
            return Err(format!("net {i}: dnr {} != static + dynamic", report.dnr));
        }
    }
    Ok(format!("{nets} networks x {samples} samples match exactly"))
}

/// Statically dead neurons output zero on every sample.
pub fn check_static_constancy(seed: u64, nets: usize) -> Check {
    let mut rng = seeded_rng(seed);
    let mut checked = 0;
    for i in 0..nets {
        let mut net = small_mlp(&mut rng, Activation::Relu, i % 2 == 1, 1000);
        let mut masks = random_masks(&mut rng, &mut net, 0.3);
        for l in net.hidden_layers() {
            let unit = rng.random_range(0..net.layer(l).neurons());
            kill_neuron(&mut net, &mut masks, l, unit);
            if let Some(b) = net.bias_mut(l) {
                b[unit] = -b[unit].abs();
            }
        }
        let statics = classify_static(&net, &masks).map_err(fail)?;
        let x = random_batch(&mut rng, 64, net.input_features());
        for b in 0..x.rows() {
            let acts = oracle::sample_activations(&net, x.row(b));
            for id in &statics {
                let v = acts[id.layer][id.unit];
                if v != 0.0 {
                    return Err(format!("net {i}: static neuron {id:?} outputs {v}"));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} static (sample, neuron) outputs are zero"))
}

fn random_snapshots(rng: &mut Rng, net: &mut Network) -> (Snapshot, Snapshot) {
    prunelab_core::fixtures::randomize(rng, net);
    let init = net.snapshot(SnapshotTag::Init);
    prunelab_core::fixtures::randomize(rng, net);
    (init, net.snapshot(SnapshotTag::Converged))
}

/// ap_select against its contract: negativity, order respect, q = 0 and
/// shortfall. Returns (negativity, order) outcomes.
pub fn check_ap_contract(seed: u64, nets: usize) -> (Check, Check) {
    let mut rng = seeded_rng(seed);
    let mut selected_total = 0;
    let mut shortfalls = 0;
    for i in 0..nets {
        let mut net = small_mlp(&mut rng, Activation::Relu, false, 1000);
        let (init, fin) = random_snapshots(&mut rng, &mut net);
        let rate = rng.random_range(0.0..0.5);
        let masks = random_masks(&mut rng, &mut net, rate);
        let negatives: Vec<WeightId> = masks.unmasked().filter(|id| fin.weights(id.layer)[id.index] < 0.0).collect();
        let quota = if i % 4 == 3 {
            negatives.len() + 3
        } else {
            rng.random_range(0..=negatives.len())
        };
        let action = match ap_select_count(&init, &fin, &masks, quota, false) {
            Ok(a) => a,
            Err(e) => return (Err(fail(&e)), Err(fail(&e))),
        };
        if let Some(id) = action.selected.iter().find(|id| fin.weights(id.layer)[id.index] >= 0.0) {
            return (Err(format!("net {i}: selected non-negative weight {id:?}")), Ok(String::new()));
        }
        if action.selected.len() + action.shortfall != quota
            || (quota > negatives.len() && action.shortfall != quota - negatives.len())
        {
            return (Err(format!("net {i}: shortfall {} for quota {quota}", action.shortfall)), Ok(String::new()));
        }
        shortfalls += usize::from(action.shortfall > 0);
        let movement = |id: &WeightId| (fin.weights(id.layer)[id.index] - init.weights(id.layer)[id.index]).abs();
        let chosen: BTreeSet<WeightId> = action.selected.iter().copied().collect();
        let max_selected = action.selected.iter().map(movement).fold(f64::NEG_INFINITY, f64::max);
        if let Some(id) = negatives.iter().find(|id| !chosen.contains(id) && movement(id) < max_selected) {
            return (Ok(String::new()), Err(format!("net {i}: skipped {id:?} with smaller movement")));
        }
        let reference = oracle::ap_select(&init, &fin, &masks, quota);
        if reference != action.selected {
            return (Ok(String::new()), Err(format!("net {i}: selection differs from the sort oracle")));
        }
        let empty = ap_select_count(&init, &fin, &masks, 0, false).map(|a| a.selected.is_empty());
        if empty != Ok(true) {
            return (Err(format!("net {i}: q = 0 selected weights")), Ok(String::new()));
        }
        selected_total += action.selected.len();
    }
    (
        Ok(format!("{selected_total} selected weights negative, {shortfalls} shortfalls reported")),
        Ok(format!("{nets} selections follow ascending movement")),
    )
}

/// Pruning negative incoming weights of a layer fed by ReLU outputs never
/// lowers a pre-activation, checked exactly on recorded traces.
pub fn check_preactivation_monotonicity(seed: u64, nets: usize, samples: usize) -> Check {
    let mut rng = seeded_rng(seed);
    let mut compared = 0usize;
    for i in 0..nets {
        let depth = rng.random_range(2..=3);
        let mut widths = vec![rng.random_range(2..=8)];
        widths.extend(random_widths(&mut rng, depth, 16));
        widths.push(rng.random_range(2..=4));
        let mut net = random_mlp(&mut rng, &widths, Activation::Relu, i % 2 == 0);
        let mut masks = random_masks(&mut rng, &mut net, 0.2);
        let x = random_batch(&mut rng, samples, net.input_features());
        let (_, traces) = forward(&net, &x, true).map_err(fail)?;
        let traces = traces.expect("requested");
        for l in 1..net.layers().len() {
            let input: &Tensor = &traces.post[l - 1];
            if input.data().iter().any(|&v| v < 0.0) {
                return Err(format!("net {i}: layer {l} input is not post-ReLU"));
            }
            let before = layer_preactivation(&net, l, input).map_err(fail)?;
            let mut pruned = net.clone();
            let mut m = masks.clone();
            for idx in 0..pruned.weights(l).len() {
                if masks.layer(l)[idx] && pruned.weights(l)[idx] < 0.0 && rng.random_bool(0.5) {
                    m.prune(&mut pruned, l, idx).map_err(fail)?;
                }
            }
            let after = layer_preactivation(&pruned, l, input).map_err(fail)?;
            for (j, (a, b)) in after.data().iter().zip(before.data()).enumerate() {
                if a < b {
                    return Err(format!("net {i} layer {l}: pre-activation {j} fell from {b} to {a}"));
                }
            }
            compared += after.len();
            if l == 1 {
                masks = m;
                net = pruned;
            }
        }
    }
    Ok(format!("{compared} pre-activations never decreased"))
}

/// Rewinding to θ0 restores unmasked weights bitwise and zeros masked ones.
pub fn check_rewind_exactness(seed: u64, nets: usize) -> Check {
    let mut rng = seeded_rng(seed);
    for i in 0..nets {
        let mut net = small_mlp(&mut rng, Activation::Relu, true, 1000);
        let (init, _) = random_snapshots(&mut rng, &mut net);
        let masks = random_masks(&mut rng, &mut net, 0.4);
        weight_rewind(&mut net, &init, &masks, None).map_err(fail)?;
        for l in 0..net.layers().len() {
            for (j, ((&w, &w0), &k)) in net.weights(l).iter().zip(init.weights(l)).zip(masks.layer(l)).enumerate() {
                let want = if k { w0.to_bits() } else { 0 };
                if w.to_bits() != want {
                    return Err(format!("net {i}: weight ({l}, {j}) is {w}, expected {}", f64::from_bits(want)));
                }
            }
        }
    }
    Ok(format!("{nets} rewinds bit-exact"))
}

/// Observer collecting cross-cycle invariants of a pruning run.
#[derive(Default)]
pub struct RunInvariants {
    pub lambdas: Vec<f64>,
    pub static_dnr: Vec<f64>,
    pub denominators: BTreeSet<usize>,
    pub pruned: BTreeSet<WeightId>,
    pub freeze: Option<String>,
    pub overlap: Option<String>,
    pub arithmetic: Option<String>,
    pub bookkeeping: Option<String>,
    pub converged_lambdas: Vec<f64>,
}

impl RunObserver for RunInvariants {
    fn on_epoch(
        &mut self,
        record: &prunelab_core::ap::EpochRecord,
        net: &Network,
        masks: &MaskState,
    ) -> prunelab_core::Result<()> {
        if self.freeze.is_none() {
            if let Some(v) = first_unfrozen(net, masks) {
                self.freeze = Some(format!("cycle {} epoch {}: {v}", record.cycle, record.stats.epoch));
            }
        }
        Ok(())
    }

    fn on_event(&mut self, event: &RunEvent, state: &RunState) -> prunelab_core::Result<()> {
        let masks = state.masks;
        if masks.recount_pruned() != masks.pruned() && self.arithmetic.is_none() {
            self.arithmetic = Some(format!("tracked {} pruned, recount {}", masks.pruned(), masks.recount_pruned()));
        }
        let record = masks.lambda();
        if record.lambda_percent.to_bits() != lambda_percent(masks.total() - masks.recount_pruned(), masks.total()).to_bits()
            && self.arithmetic.is_none()
        {
            self.arithmetic = Some(format!("lambda {} disagrees with the recount", record.lambda_percent));
        }
        match event {
            RunEvent::Prune { action, lambda_percent, .. } => {
                for id in &action.selected {
                    if !self.pruned.insert(*id) && self.overlap.is_none() {
                        self.overlap = Some(format!("cycle {}: {id:?} selected twice", action.cycle));
                    }
                }
                if action.selected.len() + action.shortfall != action.requested && self.bookkeeping.is_none() {
                    self.bookkeeping = Some(format!("cycle {}: count does not add up", action.cycle));
                }
                if *lambda_percent != masks.lambda().lambda_percent && self.bookkeeping.is_none() {
                    self.bookkeeping = Some(format!("cycle {}: logged lambda is stale", action.cycle));
                }
                if self.pruned.len() != masks.pruned() && self.bookkeeping.is_none() {
                    self.bookkeeping = Some(format!("{} selected but {} pruned", self.pruned.len(), masks.pruned()));
                }
                self.lambdas.push(*lambda_percent);
            }
            RunEvent::Train { measurement } | RunEvent::Retrain { measurement } => {
                self.static_dnr.push(measurement.dnr.static_dnr);
                self.denominators.insert(measurement.dnr.denominator);
                self.converged_lambdas.push(measurement.lambda_percent);
                if self.freeze.is_none() {
                    if let Some(v) = first_unfrozen(state.net, masks) {
                        self.freeze = Some(format!("after training in cycle {}: {v}", measurement.cycle));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

impl RunInvariants {
    pub fn monotone_sparsity(&self) -> Check {
        if let Some(w) = self.lambdas.windows(2).find(|w| w[1] > w[0]) {
            return Err(format!("lambda rose from {} to {}", w[0], w[1]));
        }
        Ok(format!("{} prune actions, lambda non-increasing", self.lambdas.len()))
    }

    pub fn static_monotonicity(&self) -> Check {
        if let Some(w) = self.static_dnr.windows(2).find(|w| w[1] < w[0]) {
            return Err(format!("static DNR fell from {} to {}", w[0], w[1]));
        }
        Ok(format!("static DNR {:?}", self.static_dnr))
    }

    pub fn mask_freeze(&self) -> Check {
        match &self.freeze {
            Some(v) => Err(v.clone()),
            None => Ok(format!("pruned weights zero at all {} logged points", self.static_dnr.len())),
        }
    }

    fn flag(v: &Option<String>, ok: &str) -> Check {
        match v {
            Some(e) => Err(e.clone()),
            None => Ok(ok.to_string()),
        }
    }
}

/// A 3-cycle AP-Pro run on blobs observed for the cross-cycle invariants.
fn pro_run_outcomes(seed: u64) -> Vec<(&'static str, Check)> {
    let run = || -> std::result::Result<RunInvariants, String> {
        let splits = blob_splits(seed)?;
        let mut net = prunelab_core::arch::build_network("dense:2-24-16-3:relu:bias").map_err(fail)?;
        init_params(&mut net, seed);
        let ctx = RunContext {
            splits: &splits,
            train: TrainConfig {
                max_epochs: 4,
                early_stop_patience: 4,
                batch_size: 16,
                ..TrainConfig::default()
            },
            schedule: LrSchedule::Constant(0.05),
            probe: None,
            seed,
        };
        let plan = CyclePlan {
            n_cycles: 3,
            ..CyclePlan::default()
        };
        let ap = ApConfig {
            variant: ApVariant::Pro,
            ..ApConfig::default()
        };
        let mut obs = RunInvariants::default();
        run_with_ap(&mut net, &plan, &ap, &ctx, &mut obs).map_err(fail)?;
        Ok(obs)
    };
    match run() {
        Err(e) => [
            "mask.monotone_sparsity",
            "mask.disjoint_actions",
            "mask.lambda_arithmetic",
            "dnr.static_monotonicity",
            "dnr.denominator_constancy",
            "ap.cycle_bookkeeping",
        ]
        .into_iter()
        .map(|id| (id, Err(e.clone())))
        .collect(),
        Ok(obs) => vec![
            ("mask.monotone_sparsity", obs.monotone_sparsity()),
            ("mask.disjoint_actions", RunInvariants::flag(&obs.overlap, "every selection disjoint from earlier ones")),
            ("mask.lambda_arithmetic", RunInvariants::flag(&obs.arithmetic, "tracked lambda equals the recount")),
            ("dnr.static_monotonicity", obs.static_monotonicity()),
            (
                "dnr.denominator_constancy",
                if obs.denominators.len() == 1 {
                    Ok(format!("denominator {:?}", obs.denominators))
                } else {
                    Err(format!("denominators {:?}", obs.denominators))
                },
            ),
            ("ap.cycle_bookkeeping", RunInvariants::flag(&obs.bookkeeping, "per-cycle counts and lambda exact")),
        ],
    }
}

/// The two forms of the bound agree on a random grid.
pub fn check_formula_identity(seed: u64, points: usize) -> Check {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let dim = rng.random_range(1..=64);
        let c = rng.random_range(0.01..20.0);
        let s = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..0.99) };
        let d = rng.random_range(0.0..=1.0 - s);
        let params = BoundParams::new(dim, c).map_err(fail)?;
        let pair = LayerDnrPair::new(s, d).map_err(fail)?;
        let (a, b) = (theorem1_bound(&params, &pair), theorem1_bound_published(&params, &pair));
        let err = (a - b).abs() / a.abs().max(1.0);
        worst = worst.max(err);
        if err > 1e-12 {
            return Err(format!("dim {dim} C {c} S {s} D {d}: {a} vs {b}"));
        }
    }
    Ok(format!("{points} points, worst scaled difference {worst:.1e}"))
}

/// Chain `H(T) <= sum H(T_i) <= Z(C_hat)` with `H(T)` checked against the
/// tuple-sorting oracle. Returns (chain, entropy) outcomes.
pub fn check_bound_chain(seed: u64, nets: usize, inputs: usize, alpha: f64) -> (Check, Check) {
    let mut rng = seeded_rng(seed);
    let mut worst_slack = f64::INFINITY;
    let mut worst_entropy: f64 = 0.0;
    for i in 0..nets {
        let dim_t = rng.random_range(2..=6);
        let widths = [rng.random_range(2..=4), dim_t, 2];
        let mut net = random_mlp(&mut rng, &widths, Activation::Relu, i % 2 == 0);
        let masks = random_masks(&mut rng, &mut net, 0.25);
        let x = random_batch(&mut rng, inputs, widths[0]);
        let quantizer = match Quantizer::new(1.5, alpha) {
            Ok(q) => q,
            Err(e) => return (Err(fail(&e)), Err(fail(&e))),
        };
        let eval = match verify_bound_chain(&net, &masks, 0, &x, &quantizer) {
            Ok(e) => e,
            Err(e) => return (Err(fail(&e)), Err(fail(&e))),
        };
        worst_slack = worst_slack.min(eval.min_slack());
        if !eval.holds(1e-9) {
            return (Err(format!("net {i}: chain slack {:e}", eval.min_slack())), Ok(String::new()));
        }
        let acts: Vec<Vec<u32>> = (0..x.rows())
            .map(|b| {
                let a = oracle::sample_activations(&net, x.row(b));
                a[0].iter().map(|&v| quantizer.bin(v)).collect()
            })
            .collect();
        let h = oracle::tuple_entropy(&acts);
        let err = (h - eval.h_t).abs();
        worst_entropy = worst_entropy.max(err);
        if err > 1e-12 {
            return (Ok(String::new()), Err(format!("net {i}: H(T) {} vs oracle {h}", eval.h_t)));
        }
    }
    (
        Ok(format!("{nets} networks, minimum slack {worst_slack:.3e}")),
        Ok(format!("plug-in entropy within {worst_entropy:.1e} of the oracle")),
    )
}

/// Finite-difference monotonicity of the bound at admissible grid points.
pub fn check_monotonicity(dim_t: usize, c: f64, steps: usize) -> Check {
    let params = BoundParams::new(dim_t, c).map_err(fail)?;
    let mut grid = Vec::new();
    for i in 0..=steps {
        for j in 0..=steps {
            let s = i as f64 / steps as f64 * 0.95;
            let d = j as f64 / steps as f64 * (1.0 - s);
            grid.push((s, d));
        }
    }
    let report = corollary1_check(&params, &grid, 1e-6).map_err(fail)?;
    if !report.passed() {
        return Err(format!("{} violations, first {:?}", report.violations.len(), report.violations.first()));
    }
    Ok(format!("{} admissible points, {} excluded", report.checked.len(), report.excluded.len()))
}

/// `Z` at `D = 1e-12` matches the `D = 0` limit.
pub fn check_limit_continuity() -> Check {
    for (dim, c, s) in [(1usize, 0.5, 0.0), (10, 1.0, 0.5), (6, 3.0, 0.9), (64, 20.0, 0.2)] {
        let params = BoundParams::new(dim, c).map_err(fail)?;
        let at = theorem1_bound(&params, &LayerDnrPair::new(s, 0.0).map_err(fail)?);
        let near = theorem1_bound(&params, &LayerDnrPair::new(s, 1e-12).map_err(fail)?);
        if (at - near).abs() > 1e-9 * c * dim as f64 {
            return Err(format!("dim {dim} C {c} S {s}: {at} vs {near}"));
        }
    }
    Ok("4 parameter sets continuous at D = 0".into())
}

/// IDX parsing rejects corrupted inputs with byte offsets.
pub fn check_idx_format() -> Check {
    let features = Tensor::new(vec![3, 4], vec![0.0, 1.0, 0.5, 0.25, 1.0, 1.0, 0.0, 0.0, 0.2, 0.4, 0.6, 0.8])
        .map_err(fail)?;
    let data = Dataset::new(features, vec![0, 1, 2], 10).map_err(fail)?;
    let (images, labels) = to_idx_bytes(&data, 2, 2).map_err(fail)?;
    let back = mnist_from_idx_bytes(&images, &labels).map_err(fail)?;
    if back.labels != data.labels || back.features.data()[1] != 1.0 {
        return Err("round trip changed the data".into());
    }
    let mut bad_magic = images.clone();
    bad_magic[3] = 0x02;
    let mut short_labels = labels.clone();
    short_labels.truncate(labels.len() - 1);
    let mut extra_label = labels.clone();
    extra_label[7] = 4;
    extra_label.push(1);
    let cases: [(&str, &[u8], &[u8]); 4] = [
        ("bad magic", &bad_magic, &labels),
        ("truncated images", &images[..images.len() - 2], &labels),
        ("truncated labels", &images, &short_labels),
        ("count mismatch", &images, &extra_label),
    ];
    for (name, img, lab) in cases {
        match mnist_from_idx_bytes(img, lab) {
            Err(Error::Format { .. }) => {}
            Err(e) => return Err(format!("{name}: unexpected error kind {e}")),
            Ok(_) => return Err(format!("{name}: accepted")),
        }
    }
    Ok("4 corrupted fixtures rejected with offsets".into())
}

fn scratch_dir() -> PathBuf {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    std::env::temp_dir().join(format!("prunelab-verify-{}-{nanos}", std::process::id()))
}

const TINY_RUN: &str = "seed = 3\narch = dense:2-16-8-3:relu:bias\ndataset.kind = blobs\ndataset.n = 150\n\
                        dataset.classes = 3\ndataset.noise = 0.3\ntrain.max_epochs = 3\ntrain.patience = 3\n\
                        plan.n_cycles = 2\nap.variant = lite\nprobe_set_size = 20\n";

/// Outcomes of the artifact invariants on a tiny run executed twice.
pub fn harness_outcomes(dir: &Path) -> Vec<(&'static str, Check)> {
    let ids = [
        "harness.provenance",
        "harness.determinism",
        "harness.schema_stability",
        "harness.lambda_consistency",
        "harness.checkpoint_roundtrip",
    ];
    let run = || -> std::result::Result<Vec<(&'static str, Check)>, String> {
        let cfg = parse_config(TINY_RUN, "verify", dir).map_err(fail)?;
        let (a, b) = (dir.join("a"), dir.join("b"));
        execute_run(&cfg, cfg.seed, 0, &a).map_err(fail)?;
        execute_run(&cfg, cfg.seed, 0, &b).map_err(fail)?;
        let read = |p: PathBuf| std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
        let provenance = {
            let echoed = String::from_utf8_lossy(&read(a.join("config.txt"))?).to_string();
            let prov = String::from_utf8_lossy(&read(a.join("provenance.json"))?).to_string();
            let reparsed = parse_config(&echoed, "config.txt", &a).map_err(fail)?;
            if !echoed.contains("seed = 3") || !prov.contains(crate::experiment::CODE_VERSION) {
                Err("echoed config or code version missing".to_string())
            } else if reparsed.seed != cfg.seed || reparsed.arch != cfg.arch || reparsed.plan != cfg.plan {
                Err("echoed config does not reproduce the run".to_string())
            } else if !a.join("DONE").exists() {
                Err("DONE sentinel missing".to_string())
            } else {
                Ok("config, seed and code version echoed".to_string())
            }
        };
        let determinism = if read(a.join("metrics.csv"))? == read(b.join("metrics.csv"))? {
            Ok("metrics.csv byte-identical across reruns".to_string())
        } else {
            Err("metrics.csv differs between reruns".to_string())
        };
        let rows = read_metrics(&a.join("metrics.csv")).map_err(fail)?;
        let events = String::from_utf8_lossy(&read(a.join("events.jsonl"))?).to_string();
        let schema = events
            .lines()
            .map(|l| {
                serde_json::from_str::<serde_json::Value>(l)
                    .map_err(fail)
                    .and_then(|v| v["type"].as_str().map(str::to_string).ok_or_else(|| "missing type".to_string()))
            })
            .collect::<std::result::Result<Vec<String>, String>>()
            .and_then(|types| match types.iter().find(|t| !EVENTS.contains(&t.as_str())) {
                Some(t) => Err(format!("unknown event type {t}")),
                None => Ok(format!("{} columns, {} events from the closed set", COLUMNS.len(), types.len())),
            });
        let total = build_total(&cfg.arch)?;
        let lambda = match rows
            .iter()
            .find(|r| r.lambda_percent.to_bits() != lambda_percent(r.remaining, total).to_bits())
        {
            Some(r) => Err(format!("row {:?} lambda {} disagrees with its count", r.event, r.lambda_percent)),
            None => Ok(format!("{} rows consistent with mask counts", rows.len())),
        };
        let ckpt = a.join("checkpoints").join("cycle03_final_retrain.ckpt");
        let bytes = read(ckpt.clone())?;
        let roundtrip = match Checkpoint::load(&ckpt) {
            Ok(c) if c.to_bytes() == bytes => Ok(format!("{} bytes round-trip", bytes.len())),
            Ok(_) => Err("re-encoded checkpoint differs".to_string()),
            Err(e) => Err(fail(e)),
        };
        Ok(vec![
            (ids[0], provenance),
            (ids[1], determinism),
            (ids[2], schema),
            (ids[3], lambda),
            (ids[4], roundtrip),
        ])
    };
    match run() {
        Ok(v) => v,
        Err(e) => ids.into_iter().map(|id| (id, Err(e.clone()))).collect(),
    }
}

fn build_total(arch: &str) -> std::result::Result<usize, String> {
    Ok(prunelab_core::arch::build_network(arch).map_err(fail)?.weight_count())
}

/// Runs every check; `step` is the update rule the mask-freeze oracle uses.
pub fn run_suite(step: StepFn) -> Vec<CheckOutcome> {
    let mut out: Vec<(&'static str, Check)> = vec![
        ("nn.gradient_fd", check_gradients(11, 10)),
        ("nn.relu_gate", check_relu_gate(12, 10)),
        ("nn.mask_freeze", check_mask_freeze(13, step)),
        ("nn.determinism", check_training_determinism(14)),
        ("mask.selection_oracle", check_selection_oracle(15, 12, 10_000)),
    ];
    out.extend(pro_run_outcomes(16));
    let dnr = check_dnr_oracle(17, 8, 128, None);
    let additivity = dnr.clone().map(|_| "dnr == static + dynamic bitwise".to_string());
    out.push(("dnr.additivity", additivity));
    out.push(("dnr.static_constancy", check_static_constancy(18, 8)));
    out.push(("dnr.oracle_equivalence", dnr));
    let (neg, order) = check_ap_contract(19, 20);
    out.push(("ap.negativity", neg));
    out.push(("ap.order_respect", order));
    out.push(("ap.preactivation_monotonicity", check_preactivation_monotonicity(20, 10, 64)));
    out.push(("ap.rewind_exactness", check_rewind_exactness(21, 8)));
    out.push(("ib.formula_identity", check_formula_identity(22, 2000)));
    let (chain, entropy) = check_bound_chain(23, 10, 512, 0.25);
    out.push(("ib.chain_validity", chain));
    out.push(("ib.entropy_oracle", entropy));
    out.push(("ib.monotonicity", check_monotonicity(12, 60.0, 20)));
    out.push(("ib.limit_continuity", check_limit_continuity()));
    let dir = scratch_dir();
    out.extend(harness_outcomes(&dir));
    let _ = std::fs::remove_dir_all(&dir);
    out.push(("harness.idx_format", check_idx_format()));

    let mut ordered: Vec<CheckOutcome> = Vec::new();
    for id in INVARIANT_IDS {
        let (passed, detail) = match out.iter().find(|(i, _)| i == id) {
            Some((_, Ok(d))) => (true, d.clone()),
            Some((_, Err(d))) => (false, d.clone()),
            None => (false, "no check registered".to_string()),
        };
        ordered.push(CheckOutcome {
            id: id.to_string(),
            passed,
            detail,
        });
    }
    ordered
}

/// The suite with the engine's own update rule.
pub fn run_default_suite() -> Vec<CheckOutcome> {
    run_suite(&sgd_step)
}
