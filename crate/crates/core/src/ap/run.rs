use serde::{Deserialize, Serialize};

use crate::data::Splits;
use crate::dnr::{compute_dnr, DnrReport};
use crate::error::{Error, Result};
use crate::mask::{dataset_gradients, lambda_percent, prune_count, select_count, MaskState, PruneAction, PruneMethod};
use crate::nn::{LrSchedule, Network, OptimState};
use crate::rng::derive_seed;
use crate::snapshot::{Snapshot, SnapshotTag};
use crate::tensor::Tensor;
use crate::train::{train_with_observer, EpochStats, TrainConfig, TrainResult};

use super::select::{ap_select_count, weight_rewind, Ablation, ApConfig, ApVariant, QuotaBase, RetrainLr, RewindTarget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclePlan {
    /// Percent of remaining weights removed per cycle.
    pub p: f64,
    pub n_cycles: usize,
    pub method: PruneMethod,
}

impl Default for CyclePlan {
    fn default() -> Self {
        Self {
            p: 20.0,
            n_cycles: 1,
            method: PruneMethod::GlobalMagnitude,
        }
    }
}

impl CyclePlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_cycles == 0 {
            return Err(Error::Config("plan.n_cycles must be at least 1".into()));
        }
        if !(self.p > 0.0 && self.p <= 100.0) {
            return Err(Error::Config(format!("plan.p = {} must lie in (0, 100]", self.p)));
        }
        if self.method == PruneMethod::Ap {
            return Err(Error::Config("plan.method must be a baseline metric, not ap".into()));
        }
        Ok(())
    }
}

/// Inputs shared by every training call of a run.
#[derive(Debug, Clone)]
pub struct RunContext<'a> {
    pub splits: &'a Splits,
    pub train: TrainConfig,
    pub schedule: LrSchedule,
    /// Samples for per-epoch DNR; converged DNR always uses the training split.
    pub probe: Option<&'a Tensor>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Training from the rewind point before the cycle's pruning.
    Train,
    /// Retraining after an AP prune inside a cycle.
    Retrain,
    /// The closing retrain of the run.
    FinalRetrain,
}

/// State at the convergence of one training call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub cycle: usize,
    pub phase: Phase,
    pub lambda_percent: f64,
    pub remaining: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Mean training loss of the best epoch; NaN when that is epoch 0.
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// Early-stop test accuracy.
    pub test_accuracy: f64,
    pub dnr: DnrReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub cycle: usize,
    pub phase: Phase,
    pub lambda_percent: f64,
    pub stats: EpochStats,
    /// DNR on the probe set, when one is configured.
    pub dnr: Option<DnrReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunEvent {
    Rewind {
        cycle: usize,
        target: RewindTarget,
    },
    Train {
        measurement: Measurement,
    },
    Prune {
        cycle: usize,
        action: PruneAction,
        lambda_percent: f64,
    },
    Retrain {
        measurement: Measurement,
    },
    RunEnd {
        lambda_percent: f64,
        val_accuracy: f64,
        test_accuracy: f64,
        dynamic_dnr: f64,
    },
}

impl RunEvent {
    pub fn type_tag(&self) -> &'static str {
        match self {
            RunEvent::Rewind { .. } => "rewind",
            RunEvent::Train { .. } => "train",
            RunEvent::Prune { .. } => "prune",
            RunEvent::Retrain { .. } => "retrain",
            RunEvent::RunEnd { .. } => "run_end",
        }
    }

    pub fn measurement(&self) -> Option<&Measurement> {
        match self {
            RunEvent::Train { measurement } | RunEvent::Retrain { measurement } => Some(measurement),
            _ => None,
        }
    }
}

/// Everything needed to persist a run between events.
pub struct RunState<'a> {
    pub net: &'a Network,
    pub masks: &'a MaskState,
    pub init: &'a Snapshot,
    pub rewind_target: &'a Snapshot,
    pub optimizer: &'a OptimState,
    pub cycle: usize,
    pub seed: u64,
    /// Training calls made so far; call `i` trains with `derive_seed(seed, i)`.
    pub train_calls: u64,
}

pub trait RunObserver {
    fn on_epoch(&mut self, _record: &EpochRecord, _net: &Network, _masks: &MaskState) -> Result<()> {
        Ok(())
    }

    fn on_event(&mut self, _event: &RunEvent, _state: &RunState) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl RunObserver for NoObserver {}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub events: Vec<RunEvent>,
    pub epochs: Vec<EpochRecord>,
}

impl RunLog {
    pub fn measurements(&self) -> impl Iterator<Item = &Measurement> {
        self.events.iter().filter_map(RunEvent::measurement)
    }

    /// Measurements taken right before each cycle's pruning.
    pub fn converged(&self) -> impl Iterator<Item = &Measurement> {
        self.measurements().filter(|m| m.phase == Phase::Train)
    }

    pub fn final_measurement(&self) -> Option<&Measurement> {
        self.measurements().last()
    }

    pub fn actions(&self) -> impl Iterator<Item = &PruneAction> {
        self.events.iter().filter_map(|e| match e {
            RunEvent::Prune { action, .. } => Some(action),
            _ => None,
        })
    }
}

struct Runner<'a, 'o> {
    net: &'a mut Network,
    masks: MaskState,
    ctx: &'a RunContext<'a>,
    observer: &'o mut dyn RunObserver,
    init: Snapshot,
    target: Snapshot,
    rewind_epoch: Option<usize>,
    optimizer: OptimState,
    train_calls: u64,
    cycle: usize,
    log: RunLog,
}

impl<'a, 'o> Runner<'a, 'o> {
    fn new(
        net: &'a mut Network,
        ctx: &'a RunContext<'a>,
        observer: &'o mut dyn RunObserver,
        target: RewindTarget,
    ) -> Result<Self> {
        ctx.train.validate()?;
        ctx.schedule.validate()?;
        ctx.splits.check_non_empty()?;
        let init = net.snapshot(SnapshotTag::Init);
        let rewind_epoch = match target {
            RewindTarget::Init => None,
            RewindTarget::Epoch(0) => None,
            RewindTarget::Epoch(k) => {
                if k > ctx.train.max_epochs {
                    return Err(Error::Config(format!(
                        "rewind epoch {k} beyond max_epochs {}",
                        ctx.train.max_epochs
                    )));
                }
                Some(k)
            }
        };
        Ok(Self {
            masks: MaskState::new(net),
            optimizer: OptimState::new(net),
            target: init.clone(),
            init,
            net,
            ctx,
            observer,
            rewind_epoch,
            train_calls: 0,
            cycle: 0,
            log: RunLog::default(),
        })
    }

    fn emit(&mut self, event: RunEvent) -> Result<()> {
        let state = RunState {
            net: self.net,
            masks: &self.masks,
            init: &self.init,
            rewind_target: &self.target,
            optimizer: &self.optimizer,
            cycle: self.cycle,
            seed: self.ctx.seed,
            train_calls: self.train_calls,
        };
        self.observer.on_event(&event, &state)?;
        self.log.events.push(event);
        Ok(())
    }

    fn rewind(&mut self) -> Result<()> {
        weight_rewind(self.net, &self.target, &self.masks, Some(&mut self.optimizer))?;
        let target = match self.target.tag {
            SnapshotTag::Epoch(k) => RewindTarget::Epoch(k),
            _ => RewindTarget::Init,
        };
        self.emit(RunEvent::Rewind {
            cycle: self.cycle,
            target,
        })
    }

    /// Trains to convergence and returns the converged parameters.
    fn train(&mut self, phase: Phase, schedule: &LrSchedule) -> Result<Snapshot> {
        let mut config = self.ctx.train.clone();
        config.seed = derive_seed(self.ctx.seed, self.train_calls);
        self.train_calls += 1;
        let capture: Vec<usize> = match self.rewind_epoch {
            Some(k) if self.cycle == 1 && phase == Phase::Train => vec![k],
            _ => Vec::new(),
        };
        let lambda = self.masks.lambda().lambda_percent;
        let (cycle, masks, probe) = (self.cycle, &self.masks, self.ctx.probe);
        let observer = &mut *self.observer;
        let epochs = &mut self.log.epochs;
        let mut failure: Option<Error> = None;
        let result = train_with_observer(
            self.net,
            masks,
            self.ctx.splits,
            &config,
            schedule,
            &capture,
            &mut |stats, net| {
                if failure.is_some() {
                    return;
                }
                let dnr = match probe.map(|p| compute_dnr(net, masks, p)).transpose() {
                    Ok(d) => d,
                    Err(e) => {
                        failure = Some(e);
                        return;
                    }
                };
                let record = EpochRecord {
                    cycle,
                    phase,
                    lambda_percent: lambda,
                    stats: stats.clone(),
                    dnr,
                };
                if let Err(e) = observer.on_epoch(&record, net, masks) {
                    failure = Some(e);
                }
                epochs.push(record);
            },
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        self.capture_rewind_target(&result)?;
        let TrainResult {
            final_params,
            best_epoch,
            best_val_accuracy,
            test_accuracy_at_best_val,
            epochs_run,
            loss_history,
            optimizer,
            ..
        } = result;
        self.optimizer = optimizer;
        let dnr = compute_dnr(self.net, &self.masks, &self.ctx.splits.train.features)?;
        let record = self.masks.lambda();
        let measurement = Measurement {
            cycle: self.cycle,
            phase,
            lambda_percent: record.lambda_percent,
            remaining: record.remaining,
            best_epoch,
            epochs_run,
            train_loss: if best_epoch == 0 { f64::NAN } else { loss_history[best_epoch - 1] },
            val_accuracy: best_val_accuracy,
            test_accuracy: test_accuracy_at_best_val,
            dnr,
        };
        self.emit(match phase {
            Phase::Train => RunEvent::Train { measurement },
            _ => RunEvent::Retrain { measurement },
        })?;
        Ok(final_params)
    }

    fn capture_rewind_target(&mut self, result: &TrainResult) -> Result<()> {
        if let Some(k) = self.rewind_epoch {
            if self.cycle == 1 && self.target.tag == SnapshotTag::Init {
                let snap = result.epoch_snapshots.get(&k).ok_or_else(|| {
                    Error::Config(format!(
                        "training stopped after {} epochs, before rewind epoch {k}",
                        result.epochs_run
                    ))
                })?;
                self.target = snap.clone();
            }
        }
        Ok(())
    }

    fn apply(&mut self, mut action: PruneAction) -> Result<()> {
        action.cycle = self.cycle;
        self.masks.apply_action(self.net, &action)?;
        let lambda_percent = self.masks.lambda().lambda_percent;
        self.emit(RunEvent::Prune {
            cycle: self.cycle,
            action,
            lambda_percent,
        })
    }

    fn prune_x(&mut self, method: PruneMethod, fraction: f64, base: usize) -> Result<()> {
        let count = prune_count(fraction, base);
        let grads = if method == PruneMethod::GlobalGradient {
            Some(dataset_gradients(self.net, &self.masks, &self.ctx.splits.train)?)
        } else {
            None
        };
        let selected = select_count(method, self.net, &self.masks, count, grads.as_ref())?;
        self.apply(PruneAction {
            method,
            fraction,
            requested: count,
            shortfall: count - selected.len(),
            selected,
            cycle: self.cycle,
        })
    }

    fn prune_ap(&mut self, converged: &Snapshot, fraction: f64, quota: usize, window: bool) -> Result<()> {
        let mut action = ap_select_count(&self.target, converged, &self.masks, quota, window)?;
        action.fraction = fraction;
        self.apply(action)
    }

    fn finish(mut self) -> Result<RunLog> {
        let last = self
            .log
            .final_measurement()
            .cloned()
            .ok_or_else(|| Error::Invariant("run produced no measurement".into()))?;
        self.emit(RunEvent::RunEnd {
            lambda_percent: last.lambda_percent,
            val_accuracy: last.val_accuracy,
            test_accuracy: last.test_accuracy,
            dynamic_dnr: last.dnr.dynamic_dnr,
        })?;
        Ok(self.log)
    }
}

/// Iterative pruning with method X: every cycle rewinds, trains to
/// convergence and prunes `p%` of the remaining weights; a final rewind and
/// retrain closes the run. `net` must hold its initial parameters.
pub fn run_method_x(
    net: &mut Network,
    plan: &CyclePlan,
    ctx: &RunContext,
    rewind_target: RewindTarget,
    observer: &mut dyn RunObserver,
) -> Result<RunLog> {
    plan.validate()?;
    let mut r = Runner::new(net, ctx, observer, rewind_target)?;
    for cycle in 1..=plan.n_cycles {
        r.cycle = cycle;
        r.rewind()?;
        r.train(Phase::Train, &ctx.schedule)?;
        let base = r.masks.remaining();
        r.prune_x(plan.method, plan.p, base)?;
    }
    r.cycle = plan.n_cycles + 1;
    r.rewind()?;
    r.train(Phase::FinalRetrain, &ctx.schedule)?;
    r.finish()
}

/// Remaining-weight counts after each cycle of a plain `p%` ladder.
pub fn baseline_ladder(p: f64, n_cycles: usize, total: usize) -> Vec<usize> {
    let mut remaining = total;
    (0..n_cycles)
        .map(|_| {
            remaining -= prune_count(p, remaining);
            remaining
        })
        .collect()
}

fn retrain_schedule(ap: &ApConfig, ctx: &RunContext) -> LrSchedule {
    match ap.retrain_lr {
        RetrainLr::FullSchedule => ctx.schedule.clone(),
        RetrainLr::ConstantFinal => {
            LrSchedule::Constant(ctx.schedule.rate(ctx.train.max_epochs.saturating_sub(1)))
        }
    }
}

/// Method X combined with AP. Lite prunes `(p - q)%` per cycle and applies
/// AP once after the last cycle; Pro splits every cycle into a method-X
/// prune and an AP prune followed by an extra retrain.
pub fn run_with_ap(
    net: &mut Network,
    plan: &CyclePlan,
    ap: &ApConfig,
    ctx: &RunContext,
    observer: &mut dyn RunObserver,
) -> Result<RunLog> {
    plan.validate()?;
    ap.validate(plan.p, ctx.train.max_epochs)?;
    let total = net.weight_count();
    let retrain = retrain_schedule(ap, ctx);
    let mut r = Runner::new(net, ctx, observer, ap.rewind_target)?;
    let rewind_before_retrain = ap.ablation != Ablation::NoWeightRewind;

    if ap.ablation == Ablation::ApSolo {
        for cycle in 1..=plan.n_cycles {
            r.cycle = cycle;
            r.rewind()?;
            let converged = r.train(Phase::Train, &ctx.schedule)?;
            let quota = prune_count(plan.p, r.masks.remaining());
            r.prune_ap(&converged, plan.p, quota, ap.window_mode)?;
        }
        r.cycle = plan.n_cycles + 1;
        r.rewind()?;
        r.train(Phase::FinalRetrain, &retrain)?;
        return r.finish();
    }

    let x_rate = plan.p - ap.q;
    match ap.variant {
        ApVariant::Pro => {
            for cycle in 1..=plan.n_cycles {
                r.cycle = cycle;
                r.rewind()?;
                let converged = r.train(Phase::Train, &ctx.schedule)?;
                let start = r.masks.remaining();
                r.prune_x(plan.method, x_rate, start)?;
                let base = match ap.quota_base {
                    QuotaBase::CycleStart => start,
                    QuotaBase::AfterX => r.masks.remaining(),
                };
                r.prune_ap(&converged, ap.q, prune_count(ap.q, base), ap.window_mode)?;
                if rewind_before_retrain {
                    r.rewind()?;
                }
                let phase = if cycle == plan.n_cycles { Phase::FinalRetrain } else { Phase::Retrain };
                r.train(phase, &retrain)?;
            }
            r.finish()
        }
        ApVariant::Lite => {
            for cycle in 1..=plan.n_cycles {
                r.cycle = cycle;
                r.rewind()?;
                r.train(Phase::Train, &ctx.schedule)?;
                let base = r.masks.remaining();
                r.prune_x(plan.method, x_rate, base)?;
            }
            r.cycle = plan.n_cycles + 1;
            let quota = if ap.matched_sparsity {
                let target = *baseline_ladder(plan.p, plan.n_cycles, total).last().expect("n >= 1");
                r.masks.remaining().saturating_sub(target)
            } else {
                prune_count(ap.q, r.masks.remaining())
            };
            r.rewind()?;
            if quota == 0 {
                let empty = ap_select_count(&r.target, &r.target, &r.masks, 0, false)?;
                r.apply(PruneAction { fraction: ap.q, ..empty })?;
            } else {
                let converged = r.train(Phase::Train, &ctx.schedule)?;
                let fraction = 100.0 * quota as f64 / r.masks.remaining() as f64;
                r.prune_ap(&converged, fraction, quota, ap.window_mode)?;
                if rewind_before_retrain {
                    r.rewind()?;
                }
            }
            r.train(Phase::FinalRetrain, &retrain)?;
            r.finish()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Percent remaining after each cycle's pruning.
    pub per_cycle: Vec<f64>,
    /// Percent remaining when the run ends.
    pub final_lambda: f64,
    /// The plain `p%` ladder for the same plan.
    pub baseline: Vec<f64>,
    /// `final_lambda` minus the baseline's final value, in percentage points.
    pub deviation: f64,
}

/// Sparsity sequence implied by the count rules for `total` weights,
/// assuming AP never runs short of negative candidates.
pub fn sparsity_trajectory(plan: &CyclePlan, ap: Option<&ApConfig>, total: usize) -> Result<Trajectory> {
    plan.validate()?;
    if total == 0 {
        return Err(Error::EmptyNetwork);
    }
    let pct = |r: usize| lambda_percent(r, total);
    let ladder = baseline_ladder(plan.p, plan.n_cycles, total);
    let mut remaining = total;
    let mut per_cycle = Vec::with_capacity(plan.n_cycles);
    match ap {
        None => per_cycle = ladder.iter().map(|&r| pct(r)).collect(),
        Some(a) if a.ablation == Ablation::ApSolo => per_cycle = ladder.iter().map(|&r| pct(r)).collect(),
        Some(a) => {
            a.validate(plan.p, usize::MAX)?;
            for _ in 0..plan.n_cycles {
                let start = remaining;
                remaining -= prune_count(plan.p - a.q, start);
                if a.variant == ApVariant::Pro {
                    let base = match a.quota_base {
                        QuotaBase::CycleStart => start,
                        QuotaBase::AfterX => remaining,
                    };
                    remaining -= prune_count(a.q, base).min(remaining);
                }
                per_cycle.push(pct(remaining));
            }
            if a.variant == ApVariant::Lite {
                remaining = if a.matched_sparsity {
                    remaining.min(*ladder.last().expect("n >= 1"))
                } else {
                    remaining - prune_count(a.q, remaining)
                };
            }
        }
    }
    let baseline: Vec<f64> = ladder.iter().map(|&r| pct(r)).collect();
    let final_lambda = match ap {
        Some(a) if a.variant == ApVariant::Lite && a.ablation != Ablation::ApSolo => pct(remaining),
        _ => *per_cycle.last().expect("n >= 1"),
    };
    Ok(Trajectory {
        deviation: final_lambda - baseline.last().expect("n >= 1"),
        per_cycle,
        final_lambda,
        baseline,
    })
}
