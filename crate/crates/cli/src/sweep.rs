//! `prunelab sweep-q`: the AP rate `q` against accuracy and dynamic DNR.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use prunelab_core::ap::Phase;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::experiment::{execute_run, thread_pool, RunOutcome};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub q: f64,
    pub cycle: usize,
    pub phase: String,
    pub lambda_percent: f64,
    pub seeds: usize,
    pub test_acc_mean: f64,
    pub test_acc_std: f64,
    pub dynamic_dnr_mean: f64,
    pub dynamic_dnr_std: f64,
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn phase_name(phase: Phase) -> &'static str {
    match phase {
        Phase::Train => "train",
        Phase::Retrain => "retrain",
        Phase::FinalRetrain => "final_retrain",
    }
}

fn q_label(q: f64) -> String {
    format!("q{q}")
}

/// Groups converged measurements of every run by `(q, cycle, phase)`.
pub fn summarize(runs: &[(f64, RunOutcome)]) -> Vec<SweepRow> {
    type Key = (usize, usize, usize);
    let phase_rank = |p: Phase| match p {
        Phase::Train => 0,
        Phase::Retrain => 1,
        Phase::FinalRetrain => 2,
    };
    let mut qs: Vec<f64> = Vec::new();
    let mut groups: BTreeMap<Key, (Phase, Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (q, run) in runs {
        let qi = match qs.iter().position(|x| x == q) {
            Some(i) => i,
            None => {
                qs.push(*q);
                qs.len() - 1
            }
        };
        for m in run.log.measurements() {
            let entry = groups
                .entry((qi, m.cycle, phase_rank(m.phase)))
                .or_insert_with(|| (m.phase, Vec::new(), Vec::new(), Vec::new()));
            entry.1.push(m.test_accuracy);
            entry.2.push(m.dnr.dynamic_dnr);
            entry.3.push(m.lambda_percent);
        }
    }
    groups
        .into_iter()
        .map(|((qi, cycle, _), (phase, acc, dyn_dnr, lambda))| {
            let (test_acc_mean, test_acc_std) = mean_std(&acc);
            let (dynamic_dnr_mean, dynamic_dnr_std) = mean_std(&dyn_dnr);
            SweepRow {
                q: qs[qi],
                cycle,
                phase: phase_name(phase).to_string(),
                lambda_percent: mean_std(&lambda).0,
                seeds: acc.len(),
                test_acc_mean,
                test_acc_std,
                dynamic_dnr_mean,
                dynamic_dnr_std,
            }
        })
        .collect()
}

pub fn format_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:>6} {:>5} {:>14} {:>9} {:>5} {:>18} {:>18}\n",
        "q", "cycle", "phase", "lambda%", "seeds", "test_acc", "dynamic_dnr"
    );
    for r in rows {
        out += &format!(
            "{:>6} {:>5} {:>14} {:>9.3} {:>5} {:>9.4} ± {:<6.4} {:>9.4} ± {:<6.4}\n",
            r.q,
            r.cycle,
            r.phase,
            r.lambda_percent,
            r.seeds,
            r.test_acc_mean,
            r.test_acc_std,
            r.dynamic_dnr_mean,
            r.dynamic_dnr_std
        );
    }
    out
}

/// Runs `cfg` with AP at every `q` for every configured seed, writing each
/// run below `out/q<q>/seed-<s>` and the summary to `out/sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig, qs: &[f64], out: &Path) -> CliResult<Vec<SweepRow>> {
    if qs.is_empty() {
        return Err(CliError::Usage("sweep-q needs at least one q".into()));
    }
    let mut jobs: Vec<(f64, RunConfig, u64, usize, PathBuf)> = Vec::new();
    for &q in qs {
        let mut c = cfg.clone();
        c.use_ap = true;
        c.ap.q = q;
        c.validate()?;
        for i in 0..cfg.seeds {
            let seed = cfg.seed + i as u64;
            let dir = out.join(q_label(q)).join(format!("seed-{seed}"));
            jobs.push((q, c.clone(), seed, i, dir));
        }
    }
    let pool = thread_pool()?;
    let runs: Vec<(f64, RunOutcome)> = pool.install(|| {
        jobs.par_iter()
            .map(|(q, c, seed, i, dir)| execute_run(c, *seed, *i, dir).map(|r| (*q, r)))
            .collect::<CliResult<Vec<_>>>()
    })?;
    let rows = summarize(&runs);
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}
