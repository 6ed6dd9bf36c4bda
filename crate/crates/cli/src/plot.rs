//! Self-contained SVG charts built from `metrics.csv` rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::metrics::{read_metrics, MetricsRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Stacked static and dynamic DNR bars at each pruned sparsity level.
    DnrVsLambda,
    /// Per-epoch DNR on the probe set.
    DnrVsEpoch,
    /// Early-stop test accuracy at each sparsity level.
    AccVsLambda,
}

impl PlotKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dnr_vs_lambda" => Some(PlotKind::DnrVsLambda),
            "dnr_vs_epoch" => Some(PlotKind::DnrVsEpoch),
            "acc_vs_lambda" => Some(PlotKind::AccVsLambda),
            _ => None,
        }
    }
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 64.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Series keyed by (method, variant) in order of first appearance.
fn series_of(rows: &[MetricsRow]) -> Vec<(String, Vec<&MetricsRow>)> {
    let mut out: Vec<(String, Vec<&MetricsRow>)> = Vec::new();
    for r in rows {
        let label = format!("{} / {}", r.method, r.ap_variant);
        match out.iter_mut().find(|(l, _)| *l == label) {
            Some((_, v)) => v.push(r),
            None => out.push((label, vec![r])),
        }
    }
    out
}

/// Sparsity level as an exact key; levels print with two decimals.
fn lambda_key(l: f64) -> i64 {
    (l * 1e6).round() as i64
}

fn lambda_label(key: i64) -> String {
    let s = format!("{:.2}", key as f64 / 1e6);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn nice_max(max: f64) -> (f64, f64) {
    let max = if max > 0.0 { max } else { 1.0 };
    let raw = max / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    ((max / step).ceil() * step, step)
}

struct Canvas {
    svg: String,
    y_max: f64,
}

impl Canvas {
    fn new(title: &str, x_label: &str, y_label: &str, y_max: f64) -> Self {
        let (y_max, step) = nice_max(y_max);
        let mut svg = String::new();
        let _ = write!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = write!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = write!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + Self::plot_w() / 2.0,
            escape(title)
        );
        let (x0, y0, y1) = (LEFT, TOP + Self::plot_h(), TOP);
        let _ = write!(
            svg,
            r#"<g class="axes" stroke="black"><line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#,
            LEFT + Self::plot_w()
        );
        let mut c = Canvas { svg, y_max };
        let mut v = 0.0;
        while v <= y_max + step * 1e-9 {
            let y = c.y(v);
            let _ = write!(
                c.svg,
                r##"<g class="y-tick"><line x1="{}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/><line x1="{x0}" y1="{y}" x2="{}" y2="{y}" stroke="#dddddd"/><text x="{}" y="{}" text-anchor="end">{}</text></g>"##,
                x0 - 5.0,
                LEFT + Self::plot_w(),
                x0 - 8.0,
                y + 4.0,
                trim_float(v)
            );
            v += step;
        }
        let _ = write!(
            c.svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + Self::plot_w() / 2.0,
            HEIGHT - 18.0,
            escape(x_label)
        );
        let _ = write!(
            c.svg,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            TOP + Self::plot_h() / 2.0,
            TOP + Self::plot_h() / 2.0,
            escape(y_label)
        );
        c
    }

    fn plot_w() -> f64 {
        WIDTH - LEFT - RIGHT
    }

    fn plot_h() -> f64 {
        HEIGHT - TOP - BOTTOM
    }

    fn y(&self, v: f64) -> f64 {
        TOP + Self::plot_h() * (1.0 - v / self.y_max)
    }

    fn x_tick(&mut self, x: f64, label: &str) {
        let y0 = TOP + Self::plot_h();
        let _ = write!(
            self.svg,
            r#"<g class="x-tick"><line x1="{x}" y1="{y0}" x2="{x}" y2="{}" stroke="black"/><text x="{x}" y="{}" text-anchor="middle">{}</text></g>"#,
            y0 + 5.0,
            y0 + 19.0,
            escape(label)
        );
    }

    fn legend(&mut self, labels: &[String], note: Option<&str>) {
        let x = WIDTH - RIGHT + 16.0;
        self.svg.push_str(r#"<g class="legend">"#);
        for (i, label) in labels.iter().enumerate() {
            let y = TOP + 8.0 + 20.0 * i as f64;
            let _ = write!(
                self.svg,
                r#"<g class="legend-entry"><rect x="{x}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text></g>"#,
                y - 10.0,
                PALETTE[i % PALETTE.len()],
                x + 18.0,
                y,
                escape(label)
            );
        }
        if let Some(note) = note {
            let y = TOP + 16.0 + 20.0 * labels.len() as f64;
            let _ = write!(self.svg, r##"<text x="{x}" y="{y}" fill="#555555">{}</text>"##, escape(note));
        }
        self.svg.push_str("</g>");
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Per series, the mean of `value` over converged rows at each level.
fn by_lambda<F>(rows: &[MetricsRow], keep_dense: bool, value: F) -> (Vec<i64>, Vec<(String, BTreeMap<i64, Vec<f64>>)>)
where
    F: Fn(&MetricsRow) -> Option<Vec<f64>>,
{
    let mut levels = Vec::new();
    let mut out = Vec::new();
    for (label, rs) in series_of(rows) {
        let mut acc: BTreeMap<i64, Vec<Vec<f64>>> = BTreeMap::new();
        for r in rs {
            if !r.is_converged() || (!keep_dense && r.lambda_percent >= 100.0) {
                continue;
            }
            if let Some(v) = value(r) {
                acc.entry(lambda_key(r.lambda_percent)).or_default().push(v);
            }
        }
        if acc.is_empty() {
            continue;
        }
        let means = acc
            .into_iter()
            .map(|(k, vs)| {
                levels.push(k);
                let cols = vs[0].len();
                let m = (0..cols).map(|c| mean(&vs.iter().map(|v| v[c]).collect::<Vec<_>>())).collect();
                (k, m)
            })
            .collect();
        out.push((label, means));
    }
    levels.sort_unstable_by(|a, b| b.cmp(a));
    levels.dedup();
    (levels, out)
}

fn band_center(i: usize, n: usize) -> f64 {
    LEFT + Canvas::plot_w() * (i as f64 + 0.5) / n as f64
}

fn render_dnr_vs_lambda(rows: &[MetricsRow]) -> CliResult<String> {
    let (levels, series) = by_lambda(rows, false, |r| Some(vec![r.static_dnr?, r.dynamic_dnr?]));
    if levels.is_empty() {
        return Err(CliError::Usage("no converged rows below 100% remaining to plot".into()));
    }
    let y_max = series
        .iter()
        .flat_map(|(_, m)| m.values().map(|v| v[0] + v[1]))
        .fold(0.0, f64::max);
    let mut c = Canvas::new(
        "Dead neuron rate at convergence",
        "weights remaining (%)",
        "DNR (static + dynamic)",
        y_max,
    );
    let band = Canvas::plot_w() / levels.len() as f64;
    let bar = band * 0.8 / series.len() as f64;
    for (i, level) in levels.iter().enumerate() {
        let start = band_center(i, levels.len()) - band * 0.4;
        for (s, (_, means)) in series.iter().enumerate() {
            let Some(v) = means.get(level) else { continue };
            let x = start + bar * s as f64;
            let color = PALETTE[s % PALETTE.len()];
            let (y_static, y_total) = (c.y(v[0]), c.y(v[0] + v[1]));
            let base = c.y(0.0);
            let _ = write!(
                c.svg,
                r#"<rect class="bar-static" x="{x:.2}" y="{y_static:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.4"/>"#,
                bar * 0.92,
                base - y_static
            );
            let _ = write!(
                c.svg,
                r#"<rect class="bar-dynamic" x="{x:.2}" y="{y_total:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                bar * 0.92,
                y_static - y_total
            );
        }
        c.x_tick(band_center(i, levels.len()), &lambda_label(*level));
    }
    let labels: Vec<String> = series.iter().map(|(l, _)| l.clone()).collect();
    c.legend(&labels, Some("light: static, solid: dynamic"));
    Ok(c.finish())
}

fn polyline(c: &mut Canvas, points: &[(f64, f64)], color: &str) {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{:.2}", c.y(*y))).collect();
    let _ = write!(
        c.svg,
        r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
        pts.join(" ")
    );
    for (x, y) in points {
        let _ = write!(c.svg, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, c.y(*y));
    }
}

fn render_acc_vs_lambda(rows: &[MetricsRow]) -> CliResult<String> {
    let (levels, series) = by_lambda(rows, true, |r| Some(vec![r.test_acc_top1?]));
    if levels.is_empty() {
        return Err(CliError::Usage("no converged rows to plot".into()));
    }
    let mut c = Canvas::new("Early-stop test accuracy", "weights remaining (%)", "test accuracy", 1.0);
    for (i, level) in levels.iter().enumerate() {
        c.x_tick(band_center(i, levels.len()), &lambda_label(*level));
    }
    for (s, (_, means)) in series.iter().enumerate() {
        let points: Vec<(f64, f64)> = levels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| means.get(l).map(|v| (band_center(i, levels.len()), v[0])))
            .collect();
        polyline(&mut c, &points, PALETTE[s % PALETTE.len()]);
    }
    let labels: Vec<String> = series.iter().map(|(l, _)| l.clone()).collect();
    c.legend(&labels, None);
    Ok(c.finish())
}

fn render_dnr_vs_epoch(rows: &[MetricsRow]) -> CliResult<String> {
    let mut series = Vec::new();
    for (label, rs) in series_of(rows) {
        let mut per_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for r in rs.iter().filter(|r| r.event == "epoch") {
            if let Some(d) = r.dnr {
                per_seed.entry(r.seed).or_default().push(d);
            }
        }
        let Some(len) = per_seed.values().map(Vec::len).min() else { continue };
        let means: Vec<f64> = (0..len)
            .map(|i| mean(&per_seed.values().map(|v| v[i]).collect::<Vec<_>>()))
            .collect();
        series.push((label, means));
    }
    let longest = series.iter().map(|(_, m)| m.len()).max().unwrap_or(0);
    if longest == 0 {
        return Err(CliError::Usage("no per-epoch DNR in the metrics; set probe_set_size".into()));
    }
    let y_max = series.iter().flat_map(|(_, m)| m.iter().copied()).fold(0.0, f64::max);
    let mut c = Canvas::new("Dead neuron rate during training", "epoch (cumulative)", "DNR on probe set", y_max);
    let span = (longest.max(2) - 1) as f64;
    let x = |i: usize| LEFT + Canvas::plot_w() * i as f64 / span;
    let step = (nice_max(span).1.ceil() as usize).max(1);
    for t in (0..=span as usize).step_by(step) {
        c.x_tick(x(t), &t.to_string());
    }
    for (s, (_, means)) in series.iter().enumerate() {
        let points: Vec<(f64, f64)> = means.iter().enumerate().map(|(i, v)| (x(i), *v)).collect();
        polyline(&mut c, &points, PALETTE[s % PALETTE.len()]);
    }
    let labels: Vec<String> = series.iter().map(|(l, _)| l.clone()).collect();
    c.legend(&labels, None);
    Ok(c.finish())
}

pub fn render(rows: &[MetricsRow], kind: PlotKind) -> CliResult<String> {
    if rows.is_empty() {
        return Err(CliError::Usage("metrics are empty, nothing to plot".into()));
    }
    match kind {
        PlotKind::DnrVsLambda => render_dnr_vs_lambda(rows),
        PlotKind::DnrVsEpoch => render_dnr_vs_epoch(rows),
        PlotKind::AccVsLambda => render_acc_vs_lambda(rows),
    }
}

/// Reads one or more metrics files, overlays them and writes `out`.
pub fn cmd_plot(csvs: &[PathBuf], kind: PlotKind, out: &Path) -> CliResult<()> {
    let mut rows = Vec::new();
    for path in csvs {
        rows.extend(read_metrics(path)?);
    }
    let svg = render(&rows, kind)?;
    std::fs::write(out, svg).map_err(|e| CliError::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(event: &str, lambda: f64, variant: &str, s: f64, d: f64) -> MetricsRow {
        MetricsRow {
            cycle: 1,
            epoch: Some(3),
            event: event.into(),
            phase: Some("train".into()),
            lambda_percent: lambda,
            remaining: 0,
            train_loss: Some(0.1),
            val_acc: Some(0.9),
            test_acc_top1: Some(0.88),
            dnr: Some(s + d),
            static_dnr: Some(s),
            dynamic_dnr: Some(d),
            method: "global_magnitude".into(),
            ap_variant: variant.into(),
            seed: 0,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn levels_and_series() {
        let rows = vec![
            row("train", 100.0, "none", 0.0, 0.5),
            row("train", 80.0, "none", 0.0, 0.45),
            row("prune", 64.0, "none", 0.0, 0.0),
            row("retrain", 64.0, "lite", 0.01, 0.4),
        ];
        let svg = render(&rows, PlotKind::DnrVsLambda).unwrap();
        assert_eq!(svg.matches(r#"class="x-tick""#).count(), 2);
        assert_eq!(svg.matches(r#"class="legend-entry""#).count(), 2);
        let acc = render(&rows, PlotKind::AccVsLambda).unwrap();
        assert_eq!(acc.matches(r#"class="x-tick""#).count(), 3);
    }

    #[test]
    fn empty_and_missing_inputs_rejected() {
        assert!(render(&[], PlotKind::AccVsLambda).is_err());
        let rows = vec![row("train", 80.0, "none", 0.0, 0.4)];
        assert!(render(&rows, PlotKind::DnrVsEpoch).is_err());
    }

    #[test]
    fn nice_axis_limits() {
        assert_eq!(nice_max(0.47), (0.5, 0.1));
        assert_eq!(nice_max(1.0), (1.0, 0.2));
        assert_eq!(lambda_label(lambda_key(51.2)), "51.2");
        assert_eq!(escape("a<b & c"), "a&lt;b &amp; c");
    }
}
