//! Minibatch training with early stopping on validation error.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Splits;
use crate::error::{Error, Result};
use crate::mask::MaskState;
use crate::nn::{accuracy, backward, sgd_step, GradSet, LrSchedule, Network, OptimState};
use crate::rng::seeded_rng;
use crate::snapshot::{Snapshot, SnapshotTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 64,
            max_epochs: 30,
            early_stop_patience: 5,
            early_stop_min_delta: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay {} < 0", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::Config("early stop patience must be >= 1".into()));
        }
        if !(self.early_stop_min_delta >= 0.0) {
            return Err(Error::Config("early stop min delta must be >= 0".into()));
        }
        Ok(())
    }
}

/// Metrics for one finished epoch (epoch 0 is the untrained network).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub rate: f64,
    /// Mean minibatch loss over the epoch; NaN for epoch 0.
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// Parameters at the best-validation epoch.
    pub final_params: Snapshot,
    pub epoch_snapshots: BTreeMap<usize, Snapshot>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy_at_best_val: f64,
    pub epochs_run: usize,
    pub loss_history: Vec<f64>,
    /// Momentum buffers after the last epoch run.
    pub optimizer: OptimState,
}

/// Parameter update applied after every minibatch.
pub type StepFn<'a> =
    &'a dyn Fn(&mut Network, &mut OptimState, &GradSet, f64, &TrainConfig, &MaskState) -> Result<()>;

pub fn train_to_convergence(
    net: &mut Network,
    masks: &MaskState,
    splits: &Splits,
    config: &TrainConfig,
    schedule: &LrSchedule,
    snapshot_epochs: &[usize],
) -> Result<TrainResult> {
    train_with_observer(net, masks, splits, config, schedule, snapshot_epochs, &mut |_, _| {})
}

/// Trains until `max_epochs` or until validation error has not improved by
/// more than `min_delta` for `patience` epochs. On return `net` holds the
/// best-validation parameters. `on_epoch` sees every epoch including epoch 0.
pub fn train_with_observer(
    net: &mut Network,
    masks: &MaskState,
    splits: &Splits,
    config: &TrainConfig,
    schedule: &LrSchedule,
    snapshot_epochs: &[usize],
    on_epoch: &mut dyn FnMut(&EpochStats, &Network),
) -> Result<TrainResult> {
    train_with_step(net, masks, splits, config, schedule, snapshot_epochs, on_epoch, &sgd_step)
}

/// As [`train_with_observer`] with a caller-supplied update rule.
#[allow(clippy::too_many_arguments)]
pub fn train_with_step(
    net: &mut Network,
    masks: &MaskState,
    splits: &Splits,
    config: &TrainConfig,
    schedule: &LrSchedule,
    snapshot_epochs: &[usize],
    on_epoch: &mut dyn FnMut(&EpochStats, &Network),
    step: StepFn,
) -> Result<TrainResult> {
    config.validate()?;
    schedule.validate()?;
    splits.check_non_empty()?;
    masks.check_aligned(net)?;
    if let Some(&e) = snapshot_epochs.iter().find(|&&e| e > config.max_epochs) {
        return Err(Error::Config(format!(
            "snapshot epoch {e} beyond max_epochs {}",
            config.max_epochs
        )));
    }

    let train = &splits.train;
    let mut rng = seeded_rng(config.seed);
    let mut state = OptimState::new(net);
    let mut epoch_snapshots = BTreeMap::new();
    if snapshot_epochs.contains(&0) {
        epoch_snapshots.insert(0, net.snapshot(SnapshotTag::Init));
    }

    let val0 = accuracy(net, &splits.val.features, &splits.val.labels)?;
    let test0 = accuracy(net, &splits.test.features, &splits.test.labels)?;
    on_epoch(
        &EpochStats {
            epoch: 0,
            rate: 0.0,
            train_loss: f64::NAN,
            val_accuracy: val0,
            test_accuracy: test0,
        },
        net,
    );
    let mut best = (0usize, val0, test0, net.snapshot(SnapshotTag::Converged));
    let mut stale = 0;
    let mut loss_history = Vec::new();
    let mut epochs_run = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let rate = schedule.rate(epoch - 1);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let x = train.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (loss, grads) = backward(net, masks, &x, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss",
                    layer: 0,
                    index: epoch,
                });
            }
            step(net, &mut state, &grads, rate, config, masks)?;
            total += loss;
            batches += 1;
        }
        let mean_loss = total / batches as f64;
        loss_history.push(mean_loss);
        epochs_run = epoch;
        if snapshot_epochs.contains(&epoch) {
            epoch_snapshots.insert(epoch, net.snapshot(SnapshotTag::Epoch(epoch)));
        }
        let val = accuracy(net, &splits.val.features, &splits.val.labels)?;
        let test = accuracy(net, &splits.test.features, &splits.test.labels)?;
        on_epoch(
            &EpochStats {
                epoch,
                rate,
                train_loss: mean_loss,
                val_accuracy: val,
                test_accuracy: test,
            },
            net,
        );
        // improvement in validation error (1 - accuracy) beyond min_delta
        if (1.0 - val) < (1.0 - best.1) - config.early_stop_min_delta {
            best = (epoch, val, test, net.snapshot(SnapshotTag::Converged));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }

    let (best_epoch, best_val_accuracy, test_accuracy_at_best_val, final_params) = best;
    net.load_snapshot(&final_params)?;
    Ok(TrainResult {
        final_params,
        epoch_snapshots,
        best_epoch,
        best_val_accuracy,
        test_accuracy_at_best_val,
        epochs_run,
        loss_history,
        optimizer: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SyntheticKind};
    use crate::nn::{init_params, Activation, LayerSpec};

    fn blob_net(seed: u64) -> Network {
        let mut net = Network::new(
            vec![2],
            &[
                LayerSpec::dense(2, 16, Activation::Relu),
                LayerSpec::dense(16, 2, Activation::Identity),
            ],
        )
        .unwrap();
        init_params(&mut net, seed);
        net
    }

    fn blobs() -> Splits {
        generate_dataset(
            SyntheticKind::Blobs {
                n: 400,
                classes: 2,
                noise: 0.3,
            },
            9,
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_returns_init() {
        let mut net = blob_net(1);
        let init = net.snapshot(SnapshotTag::Init);
        let masks = MaskState::new(&net);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let r = train_to_convergence(&mut net, &masks, &blobs(), &cfg, &LrSchedule::Constant(0.1), &[0])
            .unwrap();
        assert_eq!(r.epochs_run, 0);
        assert_eq!(r.final_params.weights, init.weights);
        assert_eq!(r.epoch_snapshots[&0].weights, init.weights);
    }

    #[test]
    fn separable_blobs_are_learned() {
        let mut net = blob_net(2);
        let masks = MaskState::new(&net);
        let cfg = TrainConfig {
            max_epochs: 30,
            batch_size: 16,
            early_stop_patience: 30,
            seed: 3,
            ..TrainConfig::default()
        };
        let r = train_to_convergence(&mut net, &masks, &blobs(), &cfg, &LrSchedule::Constant(0.05), &[])
            .unwrap();
        assert!(r.best_val_accuracy >= 0.95, "{}", r.best_val_accuracy);
        assert!((0.0..=1.0).contains(&r.test_accuracy_at_best_val));
    }

    #[test]
    fn identical_seeds_identical_loss_history() {
        let run = || {
            let mut net = blob_net(4);
            let masks = MaskState::new(&net);
            let cfg = TrainConfig {
                max_epochs: 5,
                seed: 8,
                ..TrainConfig::default()
            };
            train_to_convergence(&mut net, &masks, &blobs(), &cfg, &LrSchedule::Constant(0.05), &[2])
                .unwrap()
        };
        let (a, b) = (run(), run());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.loss_history), bits(&b.loss_history));
        assert_eq!(a.epoch_snapshots[&2], b.epoch_snapshots[&2]);
    }

    #[test]
    fn empty_split_rejected() {
        let mut net = blob_net(1);
        let masks = MaskState::new(&net);
        let mut s = blobs();
        s.val = s.val.subset(&[]);
        let r = train_to_convergence(&mut net, &masks, &s, &TrainConfig::default(), &LrSchedule::Constant(0.1), &[]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn early_stop_leaves_best_params_in_net() {
        let mut net = blob_net(5);
        let masks = MaskState::new(&net);
        let cfg = TrainConfig {
            max_epochs: 40,
            early_stop_patience: 2,
            seed: 1,
            ..TrainConfig::default()
        };
        let r = train_to_convergence(&mut net, &masks, &blobs(), &cfg, &LrSchedule::Constant(0.05), &[])
            .unwrap();
        assert!(r.epochs_run <= 40);
        assert_eq!(net.snapshot(SnapshotTag::Converged), r.final_params);
        let acc = accuracy(&net, &blobs().val.features, &blobs().val.labels).unwrap();
        assert_eq!(acc, r.best_val_accuracy);
    }
}
