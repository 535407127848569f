use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_BENCH: &str = r#"{
  "data": {"synthetic": {"n_samples": 400}},
  "benchmark": {"models": ["ForwardFill", "LinearTrend"], "horizons": [6, 12]}
}"#;

fn glycovae(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glycovae"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("GLYCOVAE_OUT")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) {
    let o = glycovae(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn file(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn assert_svgs_well_formed(dir: &Path) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "svg") {
            let text = fs::read_to_string(&path).unwrap();
            let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(doc.root_element().tag_name().name(), "svg");
            assert!(!text.contains("href"), "{} references external content", path.display());
        }
    }
}

#[test]
fn synth_writes_series_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&a, &["--seed", "7", "synth"]);
    ok(&b, &["--seed", "7", "synth"]);
    for name in ["ts1.csv", "ts2.csv", "ts3.csv", "mask.csv", "ts3_truth.csv", "cohort.csv", "fig1_series.svg"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(&a, "manifest.json")).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["details"]["gap_len"], 60);
    let masked = read(&a, "mask.csv").lines().skip(1).filter(|l| l.ends_with(",0")).count();
    assert_eq!(masked, 60);
    assert_svgs_well_formed(&a);

    let c = tmp.path().join("c");
    ok(&c, &["--seed", "8", "synth"]);
    assert_ne!(read(&a, "ts1.csv"), read(&c, "ts1.csv"));
}

#[test]
fn synth_with_model_fills_the_whole_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = file(
        &tmp,
        "cfg.json",
        r#"{"data": {"synthetic": {"n_samples": 300}}, "model": {"hidden": 8, "latent": 2}, "train": {"epochs": 2}}"#,
    );
    let out = tmp.path().join("out");
    ok(&out, &["--config", cfg.to_str().unwrap(), "synth", "--with-model"]);
    let csv = read(&out, "imputation.csv");
    let mut masked = 0;
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let imputed: f64 = cols[3].parse().unwrap();
        assert!(imputed.is_finite(), "{line}");
        if cols[2] == "0" {
            masked += 1;
        } else {
            assert_eq!(cols[1], cols[3]);
        }
    }
    assert_eq!(masked, 60);
    let svg = read(&out, "fig2_imputation.svg");
    assert!(svg.contains("ts3 after imputation"));
    // Observed (split by the gap) and truth give three polylines; the filled
    // series adds exactly one more.
    assert_eq!(svg.matches("<polyline").count(), 4);
    assert_svgs_well_formed(&out);
}

#[test]
fn clarke_command_on_hand_built_files() {
    let tmp = tempfile::tempdir().unwrap();
    let five = file(&tmp, "five.csv", "reference,predicted\n100,100\n200,60\n100,215\n250,100\n165,130\n");
    let out = tmp.path().join("five");
    ok(&out, &["clarke", "--input", five.to_str().unwrap()]);
    assert_eq!(read(&out, "clarke_summary.csv"), "zone,percent\nA,20\nB,20\nC,20\nD,20\nE,20\n");
    assert_svgs_well_formed(&out);

    let perfect = file(&tmp, "perfect.csv", "ref,pred\n80,80\n120,120\n300,300\n");
    let out = tmp.path().join("perfect");
    ok(&out, &["clarke", "--input", perfect.to_str().unwrap()]);
    assert!(read(&out, "clarke_summary.csv").contains("A,100\n"));
}

#[test]
fn clarke_rejects_empty_and_malformed_input() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = file(&tmp, "empty.csv", "");
    let o = glycovae(&tmp.path().join("e"), &["clarke", "--input", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let header_only = file(&tmp, "header.csv", "reference,predicted\n");
    let o = glycovae(&tmp.path().join("h"), &["clarke", "--input", header_only.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let bad = file(&tmp, "bad.csv", "reference,predicted\n100,100\n120,abc\n");
    let o = glycovae(&tmp.path().join("b"), &["clarke", "--input", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("bad.csv:3:"), "{stderr}");
}

#[test]
fn input_and_config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = file(&tmp, "typo.json", r#"{"train": {"epoch": 3}}"#);
    let o = glycovae(&tmp.path().join("o"), &["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(2));
    let o = glycovae(&tmp.path().join("o"), &["clarke", "--input", "/nonexistent/pairs.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = file(&tmp, "not-a-dir", "");
    let o = glycovae(&blocker.join("out"), &["synth"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn output_directory_defaults_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let target = tmp.path().join("from-env");
    let five = file(&tmp, "five.csv", "reference,predicted\n100,100\n");
    let o = Command::new(env!("CARGO_BIN_EXE_glycovae"))
        .args(["clarke", "--input", five.to_str().unwrap()])
        .env("GLYCOVAE_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(target.join("clarke_summary.csv").exists());
}

/// `(model, horizon, metric) -> "m.mm ± s.ss"` from the accuracy tables.
fn markdown_cells(md: &str) -> BTreeMap<(String, usize, String), String> {
    let mut out = BTreeMap::new();
    let mut horizon = None;
    for line in md.lines() {
        if let Some(rest) = line.strip_prefix("## Forecast accuracy") {
            let steps = rest.rsplit('(').next().unwrap().trim_end_matches(" steps)");
            horizon = Some(steps.parse::<usize>().unwrap());
        } else if line.starts_with("## ") {
            horizon = None;
        } else if let (Some(h), true) = (horizon, line.starts_with('|')) {
            let cells: Vec<&str> = line.trim_matches('|').split('|').map(str::trim).collect();
            if cells[0] == "Model" || cells[0].starts_with('-') {
                continue;
            }
            for (metric, cell) in ["rmse", "mape", "nmape"].iter().zip(&cells[1..]) {
                out.insert((cells[0].to_string(), h, metric.to_string()), cell.to_string());
            }
        }
    }
    out
}

#[test]
fn naive_benchmark_tables_agree_across_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = file(&tmp, "bench.json", SMALL_BENCH);
    let out = tmp.path().join("bench");
    ok(&out, &["--config", cfg.to_str().unwrap(), "benchmark"]);

    let csv = read(&out, "metrics.csv");
    let md = read(&out, "tables.md");
    let cells = markdown_cells(&md);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 2 * 3);
    assert_eq!(cells.len(), rows.len());
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        let (mean, std): (f64, f64) = (f[3].parse().unwrap(), f[4].parse().unwrap());
        let key = (f[0].to_string(), f[1].parse().unwrap(), f[2].to_string());
        assert_eq!(cells[&key], format!("{mean:.2} ± {std:.2}"), "{key:?}");
    }
    let models: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert!(models.iter().all(|m| ["ForwardFill", "LinearTrend"].contains(m)));

    let clarke = read(&out, "clarke.csv");
    assert_eq!(clarke.lines().count(), 1 + 2 * 2 * 5);
    let results: serde_json::Value = serde_json::from_str(&read(&out, "results.json")).unwrap();
    assert_eq!(results["runs"].as_array().unwrap().len(), 2);
    assert_svgs_well_formed(&out);

    let again = tmp.path().join("report");
    let results_path = out.join("results.json");
    ok(&again, &["report", "--results", results_path.to_str().unwrap()]);
    for name in ["metrics.csv", "clarke.csv", "series_metrics.csv", "tables.md"] {
        assert_eq!(read(&out, name), read(&again, name), "{name}");
    }
}

#[test]
fn train_predict_impute_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = file(
        &tmp,
        "cfg.json",
        r#"{"data": {"synthetic": {"n_series": 2, "n_samples": 300}},
            "model": {"hidden": 6, "latent": 2}, "train": {"epochs": 1}}"#,
    );
    let c = cfg.to_str().unwrap();
    let train_dir = tmp.path().join("train");
    ok(&train_dir, &["--config", c, "train"]);
    let ckpt = train_dir.join("model.ckpt");
    let ck = ckpt.to_str().unwrap();
    assert_eq!(read(&train_dir, "trace.csv").lines().count(), 2);

    let pred = tmp.path().join("pred");
    ok(&pred, &["--config", c, "predict", "--checkpoint", ck, "--horizon", "4"]);
    let preds = read(&pred, "predictions.csv");
    assert_eq!(preds.lines().count(), 1 + 2 * 4, "{preds}");

    let imp = tmp.path().join("imp");
    ok(&imp, &["--config", c, "impute", "--checkpoint", ck]);
    let imputed = read(&imp, "imputed.csv");
    assert!(!imputed.contains("NaN"));

    let ev = tmp.path().join("ev");
    ok(&ev, &["--config", c, "evaluate", "--checkpoint", ck]);
    assert!(read(&ev, "tables.md").contains("VAE-GRU"));
}
