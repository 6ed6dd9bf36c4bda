//! Run orchestration and on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use prunelab_core::ap::{
    run_method_x, run_with_ap, EpochRecord, Phase, RunContext, RunEvent, RunLog, RunObserver, RunState,
};
use prunelab_core::arch::build_network;
use prunelab_core::data::{generate_dataset, load_mnist_idx, Splits, SyntheticKind};
use prunelab_core::dnr::{sparsity_measures, DnrReport, SparsityMeasures};
use prunelab_core::nn::{init_params, Network};
use prunelab_core::rng::derive_seed;
use prunelab_core::{Error, MaskState, Result, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::metrics::{EventWriter, MetricsRow, MetricsWriter};

/// Stream label for the network initialization seed.
pub const INIT_STREAM: u64 = 0x494e_4954;

pub const CODE_VERSION: &str = concat!("prunelab ", env!("CARGO_PKG_VERSION"));

pub fn load_splits(dataset: &DatasetConfig, seed: u64) -> CliResult<Splits> {
    Ok(match dataset {
        DatasetConfig::Blobs { n, classes, noise } => generate_dataset(
            SyntheticKind::Blobs {
                n: *n,
                classes: *classes,
                noise: *noise,
            },
            seed,
        )?,
        DatasetConfig::Spirals { n, noise } => generate_dataset(SyntheticKind::Spirals { n: *n, noise: *noise }, seed)?,
        DatasetConfig::Mnist {
            images,
            labels,
            train_subset,
            val_subset,
            test_subset,
        } => {
            let data = load_mnist_idx(images, labels)?;
            Splits::from_dataset(&data, *train_subset, *val_subset, *test_subset, seed)?
        }
    })
}

pub fn initial_network(cfg: &RunConfig, seed: u64) -> CliResult<Network> {
    let mut net = build_network(&cfg.arch)?;
    init_params(&mut net, derive_seed(seed, INIT_STREAM));
    Ok(net)
}

/// Runs one seed of the configured experiment without touching the disk.
pub fn run_log(cfg: &RunConfig, seed: u64, observer: &mut dyn RunObserver) -> CliResult<RunLog> {
    let splits = load_splits(&cfg.dataset, seed)?;
    let probe = probe_set(&splits, cfg.probe_set_size);
    let mut net = initial_network(cfg, seed)?;
    let ctx = RunContext {
        splits: &splits,
        train: cfg.train.clone(),
        schedule: cfg.schedule.clone(),
        probe: probe.as_ref(),
        seed,
    };
    let log = if cfg.use_ap {
        run_with_ap(&mut net, &cfg.plan, &cfg.ap, &ctx, observer)?
    } else {
        run_method_x(&mut net, &cfg.plan, &ctx, cfg.ap.rewind_target, observer)?
    };
    Ok(log)
}

fn probe_set(splits: &Splits, size: usize) -> Option<Tensor> {
    (size > 0).then(|| {
        let rows: Vec<usize> = (0..size).collect();
        splits.train.features.select_rows(&rows)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalReport {
    pub seed: u64,
    pub method: String,
    pub ap_variant: String,
    pub lambda_percent: f64,
    pub remaining: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub dnr: DnrReport,
    pub sparsity: SparsityMeasures,
}

#[derive(Serialize)]
struct Provenance<'a> {
    code_version: &'a str,
    seed: u64,
    run_index: usize,
    config: &'a str,
    arch: &'a str,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub log: RunLog,
}

struct Recorder {
    metrics: MetricsWriter,
    events: EventWriter,
    checkpoint_dir: Option<PathBuf>,
    start: Instant,
    record_wall_time: bool,
    method: String,
    variant: String,
    seed: u64,
    final_sparsity: Option<SparsityMeasures>,
    io_error: Option<CliError>,
}

impl Recorder {
    fn wall(&self) -> f64 {
        if self.record_wall_time {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }

    fn row(&self, cycle: usize, event: &str, masks: &MaskState) -> MetricsRow {
        let record = masks.lambda();
        MetricsRow {
            cycle,
            epoch: None,
            event: event.to_string(),
            phase: None,
            lambda_percent: record.lambda_percent,
            remaining: record.remaining,
            train_loss: None,
            val_acc: None,
            test_acc_top1: None,
            dnr: None,
            static_dnr: None,
            dynamic_dnr: None,
            method: self.method.clone(),
            ap_variant: self.variant.clone(),
            seed: self.seed,
            wall_time_s: self.wall(),
        }
    }

    fn keep<T>(&mut self, r: CliResult<T>) -> Result<()> {
        match r {
            Ok(_) => Ok(()),
            Err(e) => {
                let msg = e.to_string();
                self.io_error = Some(e);
                Err(Error::InvalidInput(format!("artifact write failed: {msg}")))
            }
        }
    }
}

fn check_lambda(reported: f64, masks: &MaskState) -> Result<()> {
    let recomputed = masks.lambda().lambda_percent;
    if reported.to_bits() != recomputed.to_bits() {
        return Err(Error::Invariant(format!(
            "logged lambda {reported} differs from the mask's {recomputed}"
        )));
    }
    Ok(())
}

fn phase_name(phase: Phase) -> &'static str {
    match phase {
        Phase::Train => "train",
        Phase::Retrain => "retrain",
        Phase::FinalRetrain => "final_retrain",
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl RunObserver for Recorder {
    fn on_epoch(&mut self, record: &EpochRecord, _net: &Network, masks: &MaskState) -> Result<()> {
        check_lambda(record.lambda_percent, masks)?;
        let mut row = self.row(record.cycle, "epoch", masks);
        row.epoch = Some(record.stats.epoch);
        row.phase = Some(phase_name(record.phase).into());
        row.train_loss = finite(record.stats.train_loss);
        row.val_acc = Some(record.stats.val_accuracy);
        row.test_acc_top1 = Some(record.stats.test_accuracy);
        if let Some(d) = &record.dnr {
            row.dnr = Some(d.dnr);
            row.static_dnr = Some(d.static_dnr);
            row.dynamic_dnr = Some(d.dynamic_dnr);
        }
        let r = self.metrics.write(&row);
        self.keep(r)
    }

    fn on_event(&mut self, event: &RunEvent, state: &RunState) -> Result<()> {
        let cycle = match event {
            RunEvent::Rewind { cycle, .. } | RunEvent::Prune { cycle, .. } => *cycle,
            RunEvent::Train { measurement } | RunEvent::Retrain { measurement } => measurement.cycle,
            RunEvent::RunEnd { .. } => state.cycle,
        };
        let mut row = self.row(cycle, event.type_tag(), state.masks);
        match event {
            RunEvent::Prune { lambda_percent, .. } => check_lambda(*lambda_percent, state.masks)?,
            RunEvent::Train { measurement: m } | RunEvent::Retrain { measurement: m } => {
                check_lambda(m.lambda_percent, state.masks)?;
                row.epoch = Some(m.best_epoch);
                row.phase = Some(phase_name(m.phase).into());
                row.train_loss = finite(m.train_loss);
                row.val_acc = Some(m.val_accuracy);
                row.test_acc_top1 = Some(m.test_accuracy);
                row.dnr = Some(m.dnr.dnr);
                row.static_dnr = Some(m.dnr.static_dnr);
                row.dynamic_dnr = Some(m.dnr.dynamic_dnr);
            }
            RunEvent::RunEnd {
                lambda_percent,
                val_accuracy,
                test_accuracy,
                dynamic_dnr,
            } => {
                check_lambda(*lambda_percent, state.masks)?;
                self.final_sparsity = Some(sparsity_measures(state.net)?);
                row.val_acc = Some(*val_accuracy);
                row.test_acc_top1 = Some(*test_accuracy);
                row.dynamic_dnr = Some(*dynamic_dnr);
            }
            RunEvent::Rewind { .. } => {}
        }
        let r = self.metrics.write(&row);
        self.keep(r)?;
        let r = self.events.write(event, self.seed, row.wall_time_s);
        self.keep(r)?;
        if let (Some(dir), Some(m)) = (&self.checkpoint_dir, event.measurement()) {
            let r = checkpoint_of(state).save(dir, &format!("cycle{:02}_{}", m.cycle, phase_name(m.phase)));
            self.keep(r)?;
        }
        Ok(())
    }
}

pub fn checkpoint_of(state: &RunState) -> Checkpoint {
    let mut snapshots = vec![state.init.clone()];
    if state.rewind_target.tag != state.init.tag {
        snapshots.push(state.rewind_target.clone());
    }
    Checkpoint {
        arch: prunelab_core::arch::arch_string(state.net).expect("network built from an arch string"),
        cycle: state.cycle as u64,
        seed: state.seed,
        train_calls: state.train_calls,
        params: state.net.snapshot(prunelab_core::SnapshotTag::Converged),
        masks: state.masks.clone(),
        snapshots,
        optimizer: state.optimizer.clone(),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Runs one seed and writes `config.txt`, `provenance.json`, `metrics.csv`,
/// `events.jsonl`, `checkpoints/`, `dnr_report.json`, then `DONE`.
pub fn execute_run(cfg: &RunConfig, seed: u64, run_index: usize, dir: &Path) -> CliResult<RunOutcome> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let done = dir.join("DONE");
    if done.exists() {
        fs::remove_file(&done).map_err(|e| CliError::io(&done, e))?;
    }
    let mut echo = cfg.clone();
    echo.seed = seed;
    echo.seeds = 1;
    echo.output_dir = dir.to_path_buf();
    write(&dir.join("config.txt"), format!("# {CODE_VERSION}\n{}", echo.to_text()))?;
    let provenance = Provenance {
        code_version: CODE_VERSION,
        seed,
        run_index,
        config: "config.txt",
        arch: &cfg.arch,
    };
    write(&dir.join("provenance.json"), serde_json::to_string_pretty(&provenance)? + "\n")?;

    let checkpoint_dir = if cfg.checkpoints {
        let d = dir.join("checkpoints");
        fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
        Some(d)
    } else {
        None
    };
    let mut recorder = Recorder {
        metrics: MetricsWriter::create(&dir.join("metrics.csv"))?,
        events: EventWriter::create(&dir.join("events.jsonl"))?,
        checkpoint_dir,
        start: Instant::now(),
        record_wall_time: cfg.record_wall_time,
        method: cfg.plan.method.name().to_string(),
        variant: cfg.variant_label(),
        seed,
        final_sparsity: None,
        io_error: None,
    };
    let result = run_log(cfg, seed, &mut recorder);
    if let Some(e) = recorder.io_error.take() {
        return Err(e);
    }
    let log = result?;
    let Recorder {
        metrics,
        events,
        final_sparsity,
        ..
    } = recorder;
    metrics.finish()?;
    events.finish()?;

    let last = log
        .final_measurement()
        .ok_or_else(|| CliError::Usage("run produced no measurement".into()))?;
    let report = FinalReport {
        seed,
        method: cfg.plan.method.name().to_string(),
        ap_variant: cfg.variant_label(),
        lambda_percent: last.lambda_percent,
        remaining: last.remaining,
        val_accuracy: last.val_accuracy,
        test_accuracy: last.test_accuracy,
        dnr: last.dnr.clone(),
        sparsity: final_sparsity.ok_or_else(|| CliError::Usage("run ended without a run_end event".into()))?,
    };
    write(&dir.join("dnr_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    write(&done, format!("{CODE_VERSION}\n"))?;
    Ok(RunOutcome {
        seed,
        dir: dir.to_path_buf(),
        log,
    })
}

/// Job parallelism: `PRUNELAB_THREADS` when set, else rayon's default.
pub fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("PRUNELAB_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("PRUNELAB_THREADS = `{v}` is not a positive integer")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Usage(e.to_string()))
}

/// Output directory of run `i`: the configured one for a single seed,
/// `seed-<s>` below it otherwise.
pub fn run_dir(cfg: &RunConfig, seed: u64) -> PathBuf {
    if cfg.seeds == 1 {
        cfg.output_dir.clone()
    } else {
        cfg.output_dir.join(format!("seed-{seed}"))
    }
}

/// Runs every configured seed (`seed + i`), in parallel across seeds.
pub fn cmd_run(cfg: &RunConfig) -> CliResult<Vec<RunOutcome>> {
    let pool = thread_pool()?;
    pool.install(|| {
        (0..cfg.seeds)
            .into_par_iter()
            .map(|i| {
                let seed = cfg.seed + i as u64;
                execute_run(cfg, seed, i, &run_dir(cfg, seed))
            })
            .collect()
    })
}
