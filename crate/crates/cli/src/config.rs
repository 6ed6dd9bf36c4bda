//! Strict `key = value` run configuration with dotted sections.
//!
//! Blank lines and lines starting with `#` are ignored. Every key may appear
//! at most once; unknown keys, and keys that do not apply to the chosen
//! dataset or schedule kind, are rejected with their position.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Component, Path, PathBuf};

use prunelab_core::ap::{Ablation, ApConfig, ApVariant, CyclePlan, QuotaBase, RetrainLr, RewindTarget};
use prunelab_core::arch::build_network;
use prunelab_core::nn::LrSchedule;
use prunelab_core::train::TrainConfig;
use prunelab_core::PruneMethod;

use crate::error::{CliError, CliResult};

pub const KEYS: &[&str] = &[
    "seed",
    "seeds",
    "arch",
    "dataset.kind",
    "dataset.n",
    "dataset.classes",
    "dataset.noise",
    "dataset.images",
    "dataset.labels",
    "dataset.train_subset",
    "dataset.val_subset",
    "dataset.test_subset",
    "train.momentum",
    "train.weight_decay",
    "train.batch_size",
    "train.max_epochs",
    "train.patience",
    "train.min_delta",
    "schedule.kind",
    "schedule.lr",
    "schedule.warmup_epochs",
    "schedule.drop_epochs",
    "schedule.drop_factor",
    "schedule.total_epochs",
    "plan.method",
    "plan.p",
    "plan.n_cycles",
    "ap.variant",
    "ap.q",
    "ap.rewind_target",
    "ap.ablation",
    "ap.matched_sparsity",
    "ap.window_mode",
    "ap.quota_base",
    "ap.retrain_lr",
    "probe_set_size",
    "output_dir",
    "record_wall_time",
    "checkpoints",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetConfig {
    Blobs {
        n: usize,
        classes: usize,
        noise: f64,
    },
    Spirals {
        n: usize,
        noise: f64,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        train_subset: usize,
        val_subset: usize,
        test_subset: usize,
    },
}

impl DatasetConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetConfig::Blobs { .. } => "blobs",
            DatasetConfig::Spirals { .. } => "spirals",
            DatasetConfig::Mnist { .. } => "mnist",
        }
    }

    pub fn features(&self) -> usize {
        match self {
            DatasetConfig::Mnist { .. } => 784,
            _ => 2,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            DatasetConfig::Blobs { classes, .. } => *classes,
            DatasetConfig::Spirals { .. } => 2,
            DatasetConfig::Mnist { .. } => 10,
        }
    }

    pub fn train_size(&self) -> usize {
        match self {
            DatasetConfig::Blobs { n, .. } | DatasetConfig::Spirals { n, .. } => n * 70 / 100,
            DatasetConfig::Mnist { train_subset, .. } => *train_subset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Number of runs; run `i` uses seed `seed + i`.
    pub seeds: usize,
    pub arch: String,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub schedule: LrSchedule,
    pub plan: CyclePlan,
    /// False for a plain method-X run; `ap.rewind_target` applies either way.
    pub use_ap: bool,
    pub ap: ApConfig,
    pub probe_set_size: usize,
    pub output_dir: PathBuf,
    pub record_wall_time: bool,
    pub checkpoints: bool,
}

impl RunConfig {
    /// Method and variant labels used in metrics rows and plot legends.
    pub fn variant_label(&self) -> String {
        if !self.use_ap {
            return "none".into();
        }
        let base = match self.ap.variant {
            ApVariant::Lite => "lite",
            ApVariant::Pro => "pro",
        };
        match self.ap.ablation {
            Ablation::None => base.into(),
            Ablation::NoWeightRewind => format!("{base}_no_wr"),
            Ablation::ApSolo => format!("{base}_solo"),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate().map_err(|e| CliError::field("train", e.to_string()))?;
        self.schedule
            .validate()
            .map_err(|e| CliError::field("schedule", e.to_string()))?;
        self.plan.validate().map_err(|e| CliError::field("plan", e.to_string()))?;
        if !(self.ap.q >= 0.0 && self.ap.q <= self.plan.p) {
            return Err(CliError::field(
                "ap.q",
                format!("q = {} must satisfy 0 <= q <= plan.p = {}", self.ap.q, self.plan.p),
            ));
        }
        if let RewindTarget::Epoch(k) = self.ap.rewind_target {
            if k > self.train.max_epochs {
                return Err(CliError::field(
                    "ap.rewind_target",
                    format!("epoch {k} is beyond train.max_epochs = {}", self.train.max_epochs),
                ));
            }
        }
        if self.seeds == 0 {
            return Err(CliError::field("seeds", "must be at least 1"));
        }
        let net = build_network(&self.arch).map_err(|e| CliError::field("arch", e.to_string()))?;
        let in_features = net.input_features();
        if in_features != self.dataset.features() {
            return Err(CliError::field(
                "arch",
                format!(
                    "network takes {in_features} inputs, dataset {} has {}",
                    self.dataset.kind(),
                    self.dataset.features()
                ),
            ));
        }
        let out = net.output_features();
        if out != self.dataset.classes() {
            return Err(CliError::field(
                "arch",
                format!("network has {out} outputs, dataset has {} classes", self.dataset.classes()),
            ));
        }
        match &self.dataset {
            DatasetConfig::Blobs { n, classes, noise } => {
                check_synthetic(*n, *noise)?;
                if *classes < 2 {
                    return Err(CliError::field("dataset.classes", "need at least 2 classes"));
                }
            }
            DatasetConfig::Spirals { n, noise } => check_synthetic(*n, *noise)?,
            DatasetConfig::Mnist {
                images,
                labels,
                train_subset,
                val_subset,
                test_subset,
            } => {
                for (field, path) in [("dataset.images", images), ("dataset.labels", labels)] {
                    if !path.is_file() {
                        return Err(CliError::field(field, format!("{} does not exist", path.display())));
                    }
                }
                for (field, v) in [
                    ("dataset.train_subset", train_subset),
                    ("dataset.val_subset", val_subset),
                    ("dataset.test_subset", test_subset),
                ] {
                    if *v == 0 {
                        return Err(CliError::field(field, "must be at least 1"));
                    }
                }
            }
        }
        if self.probe_set_size > self.dataset.train_size() {
            return Err(CliError::field(
                "probe_set_size",
                format!("{} exceeds the {} training samples", self.probe_set_size, self.dataset.train_size()),
            ));
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("seeds", self.seeds.to_string());
        kv("arch", self.arch.clone());
        kv("dataset.kind", self.dataset.kind().into());
        match &self.dataset {
            DatasetConfig::Blobs { n, classes, noise } => {
                kv("dataset.n", n.to_string());
                kv("dataset.classes", classes.to_string());
                kv("dataset.noise", noise.to_string());
            }
            DatasetConfig::Spirals { n, noise } => {
                kv("dataset.n", n.to_string());
                kv("dataset.noise", noise.to_string());
            }
            DatasetConfig::Mnist {
                images,
                labels,
                train_subset,
                val_subset,
                test_subset,
            } => {
                kv("dataset.images", images.display().to_string());
                kv("dataset.labels", labels.display().to_string());
                kv("dataset.train_subset", train_subset.to_string());
                kv("dataset.val_subset", val_subset.to_string());
                kv("dataset.test_subset", test_subset.to_string());
            }
        }
        let t = &self.train;
        kv("train.momentum", t.momentum.to_string());
        kv("train.weight_decay", t.weight_decay.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.max_epochs", t.max_epochs.to_string());
        kv("train.patience", t.early_stop_patience.to_string());
        kv("train.min_delta", t.early_stop_min_delta.to_string());
        match &self.schedule {
            LrSchedule::Constant(lr) => {
                kv("schedule.kind", "constant".into());
                kv("schedule.lr", lr.to_string());
            }
            LrSchedule::WarmupStep {
                peak,
                warmup_epochs,
                drop_epochs,
                drop_factor,
            } => {
                kv("schedule.kind", "warmup_step".into());
                kv("schedule.lr", peak.to_string());
                kv("schedule.warmup_epochs", warmup_epochs.to_string());
                let drops: Vec<String> = drop_epochs.iter().map(|d| d.to_string()).collect();
                kv("schedule.drop_epochs", drops.join(","));
                kv("schedule.drop_factor", drop_factor.to_string());
            }
            LrSchedule::CosineDecay { initial, total_epochs } => {
                kv("schedule.kind", "cosine".into());
                kv("schedule.lr", initial.to_string());
                kv("schedule.total_epochs", total_epochs.to_string());
            }
        }
        kv("plan.method", self.plan.method.name().into());
        kv("plan.p", self.plan.p.to_string());
        kv("plan.n_cycles", self.plan.n_cycles.to_string());
        let variant = match (self.use_ap, self.ap.variant) {
            (false, _) => "none",
            (true, ApVariant::Lite) => "lite",
            (true, ApVariant::Pro) => "pro",
        };
        kv("ap.variant", variant.into());
        kv("ap.q", self.ap.q.to_string());
        kv(
            "ap.rewind_target",
            match self.ap.rewind_target {
                RewindTarget::Init => "init".into(),
                RewindTarget::Epoch(k) => format!("epoch:{k}"),
            },
        );
        kv(
            "ap.ablation",
            match self.ap.ablation {
                Ablation::None => "none",
                Ablation::NoWeightRewind => "no_weight_rewind",
                Ablation::ApSolo => "ap_solo",
            }
            .into(),
        );
        kv("ap.matched_sparsity", self.ap.matched_sparsity.to_string());
        kv("ap.window_mode", self.ap.window_mode.to_string());
        kv(
            "ap.quota_base",
            match self.ap.quota_base {
                QuotaBase::CycleStart => "cycle_start",
                QuotaBase::AfterX => "after_x",
            }
            .into(),
        );
        kv(
            "ap.retrain_lr",
            match self.ap.retrain_lr {
                RetrainLr::FullSchedule => "full_schedule",
                RetrainLr::ConstantFinal => "constant_final",
            }
            .into(),
        );
        kv("probe_set_size", self.probe_set_size.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("record_wall_time", self.record_wall_time.to_string());
        kv("checkpoints", self.checkpoints.to_string());
        s
    }
}

fn check_synthetic(n: usize, noise: f64) -> CliResult<()> {
    if n < 20 {
        return Err(CliError::field("dataset.n", format!("{n} < 20 samples")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(CliError::field("dataset.noise", format!("{noise} must be finite and >= 0")));
    }
    Ok(())
}

struct Entry {
    value: String,
    line: usize,
    key_column: usize,
    value_column: usize,
}

struct Entries<'a> {
    source: &'a str,
    base: PathBuf,
    map: BTreeMap<String, Entry>,
}

impl Entries<'_> {
    fn error(&self, line: usize, column: usize, message: impl Into<String>) -> CliError {
        CliError::Parse {
            path: self.source.to_string(),
            line,
            column,
            message: message.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> CliResult<Option<T>> {
        let Some(e) = self.map.remove(key) else { return Ok(None) };
        e.value
            .parse()
            .map(Some)
            .map_err(|_| self.error(e.line, e.value_column, format!("`{key}` expects {what}, got `{}`", e.value)))
    }

    fn f64_or(&mut self, key: &str, default: f64) -> CliResult<f64> {
        Ok(self.parse(key, "a number")?.unwrap_or(default))
    }

    fn usize_or(&mut self, key: &str, default: usize) -> CliResult<usize> {
        Ok(self.parse(key, "a non-negative integer")?.unwrap_or(default))
    }

    fn bool_or(&mut self, key: &str, default: bool) -> CliResult<bool> {
        Ok(self.parse(key, "true or false")?.unwrap_or(default))
    }

    fn text(&mut self, key: &str) -> Option<Entry> {
        self.map.remove(key)
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)], default: T) -> CliResult<T> {
        let Some(e) = self.map.remove(key) else { return Ok(default) };
        match options.iter().find(|(name, _)| *name == e.value) {
            Some((_, v)) => Ok(*v),
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                Err(self.error(
                    e.line,
                    e.value_column,
                    format!("`{key}` must be one of {}, got `{}`", names.join(", "), e.value),
                ))
            }
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.text(key).map(|e| normalize(&self.base.join(e.value)))
    }

    fn required(&mut self, key: &str) -> CliResult<Entry> {
        self.text(key)
            .ok_or_else(|| self.error(1, 1, format!("missing required key `{key}`")))
    }
}

fn tokenize<'a>(text: &str, source: &'a str, base: PathBuf) -> CliResult<Entries<'a>> {
    let mut entries = Entries {
        source,
        base,
        map: BTreeMap::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let key_column = raw.chars().count() - trimmed.chars().count() + 1;
        let Some(eq) = raw.find('=') else {
            return Err(entries.error(line, key_column, "expected `key = value`"));
        };
        let key = raw[..eq].trim();
        if key.is_empty() {
            return Err(entries.error(line, key_column, "empty key"));
        }
        if let Some(bad) = key.chars().position(|c| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '.')) {
            return Err(entries.error(line, key_column + bad, format!("invalid character in key `{key}`")));
        }
        let after = &raw[eq + 1..];
        let value = after.trim();
        let lead = after.chars().count() - after.trim_start().chars().count();
        let value_column = raw[..eq].chars().count() + 2 + lead;
        if !KEYS.contains(&key) {
            return Err(entries.error(line, key_column, format!("unknown key `{key}`")));
        }
        if let Some(prev) = entries.map.get(key) {
            return Err(entries.error(
                line,
                key_column,
                format!("duplicate key `{key}` (first set on line {})", prev.line),
            ));
        }
        entries.map.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
                key_column,
                value_column,
            },
        );
    }
    Ok(entries)
}

/// Parses config text. Relative paths are taken relative to `base`.
/// Drops `.` and folds `..` lexically.
fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir if matches!(out.components().next_back(), Some(Component::Normal(_))) => {
                out.pop();
            }
            c => out.push(c),
        }
    }
    out
}

pub fn parse_config(text: &str, source: &str, base: &Path) -> CliResult<RunConfig> {
    let mut e = tokenize(text, source, base.to_path_buf())?;
    let defaults = TrainConfig::default();

    let seed = e.parse("seed", "a non-negative integer")?.unwrap_or(0u64);
    let seeds = e.usize_or("seeds", 1)?;
    let arch = e.required("arch")?.value;
    let kind = e.required("dataset.kind")?;
    let dataset = match kind.value.as_str() {
        "blobs" => DatasetConfig::Blobs {
            n: e.usize_or("dataset.n", 400)?,
            classes: e.usize_or("dataset.classes", 2)?,
            noise: e.f64_or("dataset.noise", 0.1)?,
        },
        "spirals" => DatasetConfig::Spirals {
            n: e.usize_or("dataset.n", 400)?,
            noise: e.f64_or("dataset.noise", 0.05)?,
        },
        "mnist" => {
            let images = e
                .path("dataset.images")
                .ok_or_else(|| e.error(kind.line, kind.value_column, "mnist needs `dataset.images`"))?;
            let labels = e
                .path("dataset.labels")
                .ok_or_else(|| e.error(kind.line, kind.value_column, "mnist needs `dataset.labels`"))?;
            DatasetConfig::Mnist {
                images,
                labels,
                train_subset: e.usize_or("dataset.train_subset", 4000)?,
                val_subset: e.usize_or("dataset.val_subset", 1000)?,
                test_subset: e.usize_or("dataset.test_subset", 1000)?,
            }
        }
        other => {
            return Err(e.error(
                kind.line,
                kind.value_column,
                format!("`dataset.kind` must be one of blobs, spirals, mnist, got `{other}`"),
            ))
        }
    };

    let train = TrainConfig {
        momentum: e.f64_or("train.momentum", defaults.momentum)?,
        weight_decay: e.f64_or("train.weight_decay", defaults.weight_decay)?,
        batch_size: e.usize_or("train.batch_size", defaults.batch_size)?,
        max_epochs: e.usize_or("train.max_epochs", defaults.max_epochs)?,
        early_stop_patience: e.usize_or("train.patience", defaults.early_stop_patience)?,
        early_stop_min_delta: e.f64_or("train.min_delta", defaults.early_stop_min_delta)?,
        seed: 0,
    };

    let schedule_kind = e.choice(
        "schedule.kind",
        &[("constant", 0u8), ("warmup_step", 1), ("cosine", 2)],
        0,
    )?;
    let lr = e.f64_or("schedule.lr", 0.05)?;
    let schedule = match schedule_kind {
        0 => LrSchedule::Constant(lr),
        1 => {
            let drop_epochs = match e.text("schedule.drop_epochs") {
                None => Vec::new(),
                Some(d) => parse_list(&d.value).ok_or_else(|| {
                    e.error(
                        d.line,
                        d.value_column,
                        format!("`schedule.drop_epochs` expects comma-separated integers, got `{}`", d.value),
                    )
                })?,
            };
            LrSchedule::WarmupStep {
                peak: lr,
                warmup_epochs: e.usize_or("schedule.warmup_epochs", 0)?,
                drop_epochs,
                drop_factor: e.f64_or("schedule.drop_factor", 10.0)?,
            }
        }
        _ => LrSchedule::CosineDecay {
            initial: lr,
            total_epochs: e.usize_or("schedule.total_epochs", train.max_epochs)?,
        },
    };

    let method = match e.text("plan.method") {
        None => PruneMethod::GlobalMagnitude,
        Some(m) => match PruneMethod::parse(&m.value) {
            Some(PruneMethod::Ap) | None => {
                return Err(e.error(
                    m.line,
                    m.value_column,
                    format!("`plan.method` must be global_magnitude, global_gradient or lamp, got `{}`", m.value),
                ))
            }
            Some(method) => method,
        },
    };
    let plan = CyclePlan {
        p: e.f64_or("plan.p", 20.0)?,
        n_cycles: e.usize_or("plan.n_cycles", 1)?,
        method,
    };

    let variant = e.choice(
        "ap.variant",
        &[("none", None), ("lite", Some(ApVariant::Lite)), ("pro", Some(ApVariant::Pro))],
        None,
    )?;
    let rewind_target = match e.text("ap.rewind_target") {
        None => RewindTarget::Init,
        Some(r) => parse_rewind(&r.value).ok_or_else(|| {
            e.error(
                r.line,
                r.value_column,
                format!("`ap.rewind_target` must be `init` or `epoch:K`, got `{}`", r.value),
            )
        })?,
    };
    let ap = ApConfig {
        q: e.f64_or("ap.q", 2.0)?,
        variant: variant.unwrap_or(ApVariant::Lite),
        rewind_target,
        ablation: e.choice(
            "ap.ablation",
            &[
                ("none", Ablation::None),
                ("no_weight_rewind", Ablation::NoWeightRewind),
                ("ap_solo", Ablation::ApSolo),
            ],
            Ablation::None,
        )?,
        matched_sparsity: e.bool_or("ap.matched_sparsity", false)?,
        window_mode: e.bool_or("ap.window_mode", false)?,
        quota_base: e.choice(
            "ap.quota_base",
            &[("cycle_start", QuotaBase::CycleStart), ("after_x", QuotaBase::AfterX)],
            QuotaBase::CycleStart,
        )?,
        retrain_lr: e.choice(
            "ap.retrain_lr",
            &[
                ("full_schedule", RetrainLr::FullSchedule),
                ("constant_final", RetrainLr::ConstantFinal),
            ],
            RetrainLr::FullSchedule,
        )?,
    };

    let probe_set_size = e.usize_or("probe_set_size", 0)?;
    let output_dir = e.path("output_dir").unwrap_or_else(|| base.join("out"));
    let record_wall_time = e.bool_or("record_wall_time", false)?;
    let checkpoints = e.bool_or("checkpoints", true)?;

    if let Some((key, entry)) = e.map.iter().next() {
        let context = if key.starts_with("dataset.") {
            format!("dataset.kind = {}", dataset.kind())
        } else {
            "the chosen schedule.kind".to_string()
        };
        return Err(e.error(entry.line, entry.key_column, format!("`{key}` does not apply to {context}")));
    }

    let config = RunConfig {
        seed,
        seeds,
        arch,
        dataset,
        train,
        schedule,
        plan,
        use_ap: variant.is_some(),
        ap,
        probe_set_size,
        output_dir,
        record_wall_time,
        checkpoints,
    };
    config.validate()?;
    Ok(config)
}

fn parse_list(text: &str) -> Option<Vec<usize>> {
    if text.trim().is_empty() {
        return Some(Vec::new());
    }
    text.split(',').map(|t| t.trim().parse().ok()).collect()
}

fn parse_rewind(text: &str) -> Option<RewindTarget> {
    if text == "init" {
        return Some(RewindTarget::Init);
    }
    text.strip_prefix("epoch:")?.parse().ok().map(RewindTarget::Epoch)
}

/// Reads and validates a config file; relative paths resolve against the
/// file's directory.
pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
    let base = std::path::absolute(dir).map_err(|e| CliError::io(dir, e))?;
    parse_config(&text, &path.display().to_string(), &base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<RunConfig> {
        parse_config(text, "test.cfg", Path::new("/work"))
    }

    const MINIMAL: &str = "dataset.kind = blobs\narch = dense:2-8-2:relu\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.plan.p, 20.0);
        assert_eq!(c.ap.q, 2.0);
        assert_eq!(c.train.momentum, 0.9);
        assert_eq!(c.train.weight_decay, 1e-4);
        assert!(!c.use_ap);
        assert_eq!(c.output_dir, PathBuf::from("/work/out"));
    }

    #[test]
    fn q_above_p_rejected() {
        let err = parse(&format!("{MINIMAL}plan.p = 10\nap.q = 20\n")).unwrap_err();
        assert!(matches!(err, CliError::Field { ref field, .. } if field == "ap.q"), "{err}");
    }

    #[test]
    fn unknown_key_has_position() {
        let err = parse(&format!("{MINIMAL}\n  plan.pp = 3\n")).unwrap_err();
        match err {
            CliError::Parse { line, column, message, .. } => {
                assert_eq!((line, column), (4, 3));
                assert!(message.contains("plan.pp"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_value_points_at_value() {
        let err = parse(&format!("{MINIMAL}plan.p =  abc\n")).unwrap_err();
        match err {
            CliError::Parse { line, column, .. } => assert_eq!((line, column), (3, 11)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn inapplicable_and_duplicate_keys_rejected() {
        assert!(parse("dataset.kind = spirals\narch = dense:2-8-2:relu\ndataset.classes = 3\n").is_err());
        assert!(parse(&format!("{MINIMAL}seed = 1\nseed = 2\n")).is_err());
        assert!(parse(&format!("{MINIMAL}schedule.drop_factor = 2\n")).is_err());
        assert!(parse("arch = dense:2-8-2:relu\n").is_err());
    }

    #[test]
    fn arch_must_match_dataset() {
        let err = parse("dataset.kind = blobs\ndataset.classes = 3\narch = dense:2-8-2:relu\n").unwrap_err();
        assert!(matches!(err, CliError::Field { ref field, .. } if field == "arch"));
    }

    #[test]
    fn echo_round_trips() {
        let text = "seed = 7\nseeds = 3\narch = dense:2-16-8-2:relu:bias\ndataset.kind = spirals\n\
                    dataset.n = 300\ndataset.noise = 0.05\nschedule.kind = warmup_step\nschedule.lr = 0.03\n\
                    schedule.warmup_epochs = 2\nschedule.drop_epochs = 11, 14\ntrain.max_epochs = 20\n\
                    plan.n_cycles = 4\nplan.method = lamp\nap.variant = pro\nap.q = 1.5\n\
                    ap.rewind_target = epoch:2\nap.quota_base = after_x\nprobe_set_size = 50\n\
                    output_dir = runs/a\nrecord_wall_time = true\n";
        let c = parse(text).unwrap();
        let again = parse(&c.to_text()).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.to_text(), c.to_text());
        assert_eq!(c.variant_label(), "pro");
    }
}
