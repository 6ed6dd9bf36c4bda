use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use prunelab::metrics::read_metrics;

fn prunelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prunelab")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const BASE: &str = "seed = 5\narch = dense:2-64-64-3:relu:bias\ndataset.kind = blobs\ndataset.n = 200\n\
                    dataset.classes = 3\ndataset.noise = 0.3\ntrain.max_epochs = 4\ntrain.patience = 4\n\
                    plan.n_cycles = 3\nprobe_set_size = 32\n";

fn write_config(dir: &Path, name: &str, extra: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, format!("{BASE}{extra}output_dir = {}\n", name.trim_end_matches(".cfg"))).unwrap();
    path.to_str().unwrap().to_string()
}

fn run(dir: &Path, name: &str, extra: &str) -> std::path::PathBuf {
    let cfg = write_config(dir, name, extra);
    ok(&prunelab(&["run", "--config", &cfg]));
    dir.join(name.trim_end_matches(".cfg"))
}

#[test]
fn baseline_prune_rows_follow_the_ladder() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), "base.cfg", "");
    let rows = read_metrics(&out.join("metrics.csv")).unwrap();
    let total = 2 * 64 + 64 * 64 + 64 * 3;
    let prunes: Vec<_> = rows.iter().filter(|r| r.event == "prune").collect();
    let mut remaining = total;
    let mut lambdas = Vec::new();
    for r in &prunes {
        remaining -= remaining / 5;
        assert_eq!(r.remaining, remaining);
        assert_eq!(r.lambda_percent, 100.0 * remaining as f64 / total as f64);
        lambdas.push(r.lambda_percent);
    }
    assert_eq!(prunes.len(), 3);
    for (got, want) in lambdas.iter().zip([80.0, 64.0, 51.2]) {
        assert!((got - want).abs() < 0.2, "{got} vs {want}");
    }
    for name in ["config.txt", "provenance.json", "events.jsonl", "dnr_report.json", "DONE"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    assert!(out.join("checkpoints/cycle04_final_retrain.ckpt").exists());
}

#[test]
fn pro_events_come_in_cycle_order() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), "pro.cfg", "ap.variant = pro\n");
    let text = fs::read_to_string(out.join("events.jsonl")).unwrap();
    let types: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["type"].as_str().unwrap().to_string())
        .collect();
    let cycle = ["rewind", "train", "prune", "prune", "rewind", "retrain"];
    let mut want: Vec<&str> = Vec::new();
    for _ in 0..3 {
        want.extend(cycle);
    }
    want.push("run_end");
    assert_eq!(types, want);
    let seqs: Vec<u64> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["seq"].as_u64().unwrap())
        .collect();
    assert_eq!(seqs, (0..want.len() as u64).collect::<Vec<_>>());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(tmp.path(), "a.cfg", "ap.variant = lite\n");
    let b = run(tmp.path(), "b.cfg", "ap.variant = lite\n");
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(a.join("events.jsonl")).unwrap(), fs::read(b.join("events.jsonl")).unwrap());
    let c = fs::read(a.join("checkpoints/cycle04_final_retrain.ckpt")).unwrap();
    assert_eq!(c, fs::read(b.join("checkpoints/cycle04_final_retrain.ckpt")).unwrap());
}

#[test]
fn plots_are_well_formed_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let base = run(tmp.path(), "base.cfg", "");
    let lite = run(tmp.path(), "lite.cfg", "ap.variant = lite\n");
    let csvs = [base.join("metrics.csv"), lite.join("metrics.csv")];
    for kind in ["dnr_vs_lambda", "acc_vs_lambda", "dnr_vs_epoch"] {
        let svg = tmp.path().join(format!("{kind}.svg"));
        ok(&prunelab(&[
            "plot",
            "--kind",
            kind,
            "--out",
            svg.to_str().unwrap(),
            csvs[0].to_str().unwrap(),
            csvs[1].to_str().unwrap(),
        ]));
        let text = fs::read_to_string(&svg).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{kind}: {e}"));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let class = |c: &str| doc.descendants().filter(|n| n.attribute("class") == Some(c)).count();
        assert_eq!(class("legend-entry"), 2, "{kind}");
        assert!(class("x-tick") >= 2, "{kind}");
    }
    let missing = prunelab(&["plot", "--kind", "dnr_vs_lambda", "--out", "x.svg", "/nonexistent/metrics.csv"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn config_errors_name_line_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", "plan.pp = 20\n");
    let out = prunelab(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.cfg:11:1:"), "{err}");
    assert!(err.contains("plan.pp"), "{err}");

    let cfg = write_config(tmp.path(), "q.cfg", "ap.variant = lite\nap.q = 30\n");
    let out = prunelab(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ap.q"));
}

#[test]
fn verify_reports_every_invariant() {
    let out = ok(&prunelab(&["verify"]));
    let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), prunelab::verify::INVARIANT_IDS.len());
    for l in &lines {
        assert_eq!(l["passed"], true, "{l}");
    }
}

#[test]
fn bound_outputs_json() {
    let out = ok(&prunelab(&["bound", "--dim", "10", "--S", "0.5", "--D", "0.25", "--C", "1"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((v["z"].as_f64().unwrap() - 4.232867951399863).abs() < 1e-12);
    assert_eq!(v["d_prime"], 0.5);
    let out = ok(&prunelab(&["bound", "--dim", "8", "--S", "0.1", "--D", "0.3", "--tau", "2", "--alpha", "0.5", "--pS", "0.2"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["outcomes"], 4);
    let bad = prunelab(&["bound", "--dim", "8", "--S", "0.1", "--D", "0.3"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn dataset_gen_writes_split_column() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("spirals.csv");
    ok(&prunelab(&["dataset", "gen", "--kind", "spirals", "--n", "100", "--seed", "3", "--out", path.to_str().unwrap()]));
    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), ["x0", "x1", "label", "split"]);
    let splits: Vec<String> = reader.records().map(|r| r.unwrap()[3].to_string()).collect();
    assert_eq!(splits.len(), 100);
    assert_eq!(splits.iter().filter(|s| *s == "train").count(), 70);
    assert_eq!(splits.iter().filter(|s| *s == "test").count(), 15);
}

#[test]
fn sweep_at_q_zero_matches_the_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let base = run(tmp.path(), "base.cfg", "");
    let cfg = write_config(tmp.path(), "sweep.cfg", "seeds = 2\nap.variant = lite\n");
    let root = tmp.path().join("sweep");
    let table = ok(&prunelab(&["sweep-q", "--config", &cfg, "--q", "0,2", "--out", root.to_str().unwrap()]));
    assert!(table.contains("dynamic_dnr"));
    assert!(root.join("q0/seed-5/DONE").exists() && root.join("q2/seed-6/DONE").exists());
    let final_row = |p: &Path| {
        read_metrics(&p.join("metrics.csv")).unwrap().into_iter().filter(|r| r.is_converged()).last().unwrap()
    };
    let (b, s) = (final_row(&base), final_row(&root.join("q0/seed-5")));
    assert_eq!((b.test_acc_top1, b.dnr, b.remaining), (s.test_acc_top1, s.dnr, s.remaining));
    let mut reader = csv::Reader::from_path(root.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert!(rows.iter().all(|r| &r[4] == "2"));
}
