//! `metrics.csv` rows and the `events.jsonl` stream.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use prunelab_core::ap::RunEvent;

use crate::error::{CliError, CliResult};

/// Column order of `metrics.csv`.
pub const COLUMNS: &[&str] = &[
    "cycle",
    "epoch",
    "event",
    "phase",
    "lambda_percent",
    "remaining",
    "train_loss",
    "val_acc",
    "test_acc_top1",
    "dnr",
    "static_dnr",
    "dynamic_dnr",
    "method",
    "ap_variant",
    "seed",
    "wall_time_s",
];

/// Closed set of `event` values, shared with the JSONL `type` tags.
pub const EVENTS: &[&str] = &["epoch", "rewind", "train", "prune", "retrain", "run_end"];

/// One row per epoch and per run event. Empty cells mean "not measured".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub cycle: usize,
    pub epoch: Option<usize>,
    pub event: String,
    pub phase: Option<String>,
    pub lambda_percent: f64,
    pub remaining: usize,
    pub train_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub test_acc_top1: Option<f64>,
    pub dnr: Option<f64>,
    pub static_dnr: Option<f64>,
    pub dynamic_dnr: Option<f64>,
    pub method: String,
    pub ap_variant: String,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl MetricsRow {
    /// True for rows taken at the convergence of a training call.
    pub fn is_converged(&self) -> bool {
        self.event == "train" || self.event == "retrain"
    }
}

pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            inner: csv::Writer::from_writer(BufWriter::new(file)),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> CliResult<()> {
        self.inner.serialize(row)?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(|e| CliError::io("metrics.csv", e))?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> CliResult<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(COLUMNS.iter().copied()) {
        return Err(CliError::Usage(format!(
            "{}: columns {:?} do not match the metrics schema",
            path.display(),
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let rows = reader.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?;
    if let Some(bad) = rows.iter().find(|r| !EVENTS.contains(&r.event.as_str())) {
        return Err(CliError::Usage(format!("{}: unknown event `{}`", path.display(), bad.event)));
    }
    Ok(rows)
}

#[derive(Serialize)]
struct EventLine<'a> {
    seq: usize,
    seed: u64,
    wall_time_s: f64,
    #[serde(flatten)]
    event: &'a RunEvent,
}

pub struct EventWriter {
    inner: BufWriter<File>,
    seq: usize,
}

impl EventWriter {
    pub fn create(path: &Path) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            inner: BufWriter::new(file),
            seq: 0,
        })
    }

    pub fn write(&mut self, event: &RunEvent, seed: u64, wall_time_s: f64) -> CliResult<()> {
        let line = EventLine {
            seq: self.seq,
            seed,
            wall_time_s,
            event,
        };
        self.seq += 1;
        serde_json::to_writer(&mut self.inner, &line)?;
        self.inner.write_all(b"\n").map_err(|e| CliError::io("events.jsonl", e))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(|e| CliError::io("events.jsonl", e))
    }
}
