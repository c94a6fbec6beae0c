use std::path::Path;
use std::process::{Command, Output};

fn cse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cse"))
        .current_dir(dir)
        .env_remove("CSE_OUT")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cse(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Asserts a failure with the given exit code and returns the error record.
fn fails(dir: &Path, args: &[&str], code: i32) -> serde_json::Value {
    let out = cse(dir, args);
    assert_eq!(out.status.code(), Some(code), "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8(out.stderr).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(rec["status"], "error");
    assert_eq!(rec["code"], code);
    rec
}

const SMALL: &str = "[synth]\nclips = 20\nframes_min = 64\nframes_max = 64\n\n[recipe]\nepochs = 2\n";

fn small(dir: &Path) {
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
}

#[test]
fn profile_orders_members_by_flops() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["profile", "--out", "o", "--format", "tsv"]);
    assert!(stdout.contains("cse(m1+m2+m3)"));
    let text = std::fs::read_to_string(dir.path().join("o/profile/complexity.tsv")).unwrap();
    let flops = |name: &str| -> u64 {
        let line = text.lines().find(|l| l.split('\t').next() == Some(name)).unwrap();
        line.split('\t').nth(2).unwrap().parse().unwrap()
    };
    assert!(flops("m2") < flops("m3") && flops("m3") < flops("m1"));
    assert!(dir.path().join("o/profile/echo.json").exists());
}

#[test]
fn eval_on_empty_test_set_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e.toml"), "[synth]\nclips = 20\ntest_fraction = 0.0\n").unwrap();
    ok(dir.path(), &["synth", "--config", "e.toml", "--out", "o"]);
    ok(dir.path(), &["featurize", "--config", "e.toml", "--out", "o"]);
    let rec = fails(dir.path(), &["eval", "--config", "e.toml", "--out", "o"], 1);
    assert!(rec["message"].as_str().unwrap().contains("empty test set"));
    assert_eq!(rec["command"], "eval");
}

#[test]
fn user_errors_exit_one_with_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fails(d, &["bogus"], 1);
    fails(d, &["profile", "--no-such-flag"], 1);
    let rec = fails(d, &["profile", "--members", "m4"], 1);
    assert!(rec["message"].as_str().unwrap().contains("m4"));
    fails(d, &["profile", "--format", "xlsx"], 1);
    fails(d, &["profile", "--folds", "1"], 1);
    fails(d, &["profile", "--config", "missing.toml"], 1);
    std::fs::write(d.join("bad.toml"), "[run]\nsed = 3\n").unwrap();
    assert!(fails(d, &["profile", "--config", "bad.toml"], 1)["message"].as_str().unwrap().contains("sed"));
    std::fs::write(d.join("seed.toml"), "[synth]\nseed = 3\n").unwrap();
    assert!(fails(d, &["synth", "--config", "seed.toml"], 1)["message"].as_str().unwrap().contains("run.seed"));
    let rec = fails(d, &["ingest", "--corpus", "nowhere.jsonl", "--out", "o"], 1);
    assert!(rec["message"].as_str().unwrap().contains("nowhere.jsonl"));
    std::fs::write(d.join("broken.jsonl"), "{\"clip_id\": 3}\n").unwrap();
    fails(d, &["ingest", "--corpus", "broken.jsonl", "--out", "o"], 1);
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--help"]);
    for sub in ["synth", "ingest", "featurize", "train", "stack", "eval", "profile", "analyze", "report"] {
        assert!(out.contains(sub), "{sub}");
    }
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cse"))
        .current_dir(dir.path())
        .env("CSE_OUT", "from_env")
        .args(["profile"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from_env/profile/complexity.csv").exists());
    ok(dir.path(), &["profile", "--out", "from_flag"]);
    assert!(dir.path().join("from_flag/profile/complexity.csv").exists());
}

#[test]
fn reruns_are_no_ops_until_inputs_change() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small(d);
    ok(d, &["synth", "--config", "small.toml", "--out", "o"]);
    let echo = std::fs::read(d.join("o/synth/echo.json")).unwrap();
    let again = ok(d, &["synth", "--config", "small.toml", "--out", "o"]);
    assert!(again.contains("up to date"));
    assert_eq!(std::fs::read(d.join("o/synth/echo.json")).unwrap(), echo);

    ok(d, &["ingest", "--config", "small.toml", "--out", "o"]);
    assert!(ok(d, &["ingest", "--config", "small.toml", "--out", "o"]).contains("up to date"));
    assert!(!ok(d, &["ingest", "--config", "small.toml", "--out", "o", "--stride", "16"]).contains("up to date"));

    let fresh = ok(d, &["synth", "--config", "small.toml", "--out", "o", "--seed", "9"]);
    assert!(!fresh.contains("up to date"));
    assert_ne!(std::fs::read(d.join("o/synth/echo.json")).unwrap(), echo);
    assert!(!ok(d, &["synth", "--config", "small.toml", "--out", "o", "--force", "--seed", "9"]).contains("up to date"));

    std::fs::write(d.join("o/synth/corpus.jsonl"), "").unwrap();
    assert!(!ok(d, &["synth", "--config", "small.toml", "--out", "o", "--seed", "9"]).contains("up to date"));
}

#[test]
fn same_seed_reproduces_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small(d);
    for out in ["a", "b"] {
        for stage in ["synth", "featurize", "train", "stack", "eval"] {
            ok(d, &[stage, "--config", "small.toml", "--out", out, "--members", "m2,m3"]);
        }
    }
    for f in ["synth/corpus.jsonl", "train/m3_fold2.ckpt", "stack/head.ckpt", "eval/metrics.csv", "eval/predictions.csv"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let echo: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("a/train/echo.json")).unwrap()).unwrap();
    assert_eq!(echo["run"]["run"]["seed"], 1);
    assert_eq!(echo["run"]["recipe"]["epochs"], 2);
    assert!(echo["inputs"].as_object().unwrap().keys().any(|k| k.ends_with("pool.features")));
}

#[test]
fn fold_average_and_balanced_protocol_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small(d);
    let args = ["--config", "small.toml", "--out", "o", "--members", "m2,m3", "--fold-average", "true", "--protocol", "balanced"];
    for stage in ["synth", "featurize", "train", "stack", "eval", "analyze", "report"] {
        let mut a = vec![stage];
        a.extend(args);
        ok(d, &a);
    }
    assert!(!d.join("o/stack/m3_refit.ckpt").exists());
    let folds: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("o/train/folds.json")).unwrap()).unwrap();
    assert_eq!(folds["protocol"], "balanced");
    let sens = std::fs::read_to_string(d.join("o/analyze/sensitivity.csv")).unwrap();
    assert_eq!(sens.lines().count(), 2);
}

#[test]
fn full_pipeline_on_default_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for stage in ["synth", "ingest", "featurize", "train", "stack", "eval", "profile", "analyze", "report"] {
        ok(d, &[stage, "--out", "o"]);
    }
    let o = d.join("o");
    for f in [
        "synth/corpus.jsonl",
        "synth/split.json",
        "synth/generator.json",
        "ingest/summary.json",
        "featurize/pool.features",
        "featurize/test.features",
        "train/folds.json",
        "train/runs.json",
        "stack/oof.csv",
        "stack/head.ckpt",
        "eval/metrics.csv",
        "eval/report.json",
        "eval/predictions.csv",
        "profile/complexity.csv",
        "analyze/sensitivity.csv",
        "report/confusion.svg",
        "report/roc.svg",
        "report/roc.csv",
        "report/attributes.csv",
        "report/attribute_speed.svg",
    ] {
        assert!(o.join(f).exists(), "{f}");
    }
    for stage in ["synth", "ingest", "featurize", "train", "stack", "eval", "profile", "analyze", "report"] {
        assert!(o.join(stage).join("echo.json").exists(), "{stage}");
    }
    let ingest: serde_json::Value = serde_json::from_slice(&std::fs::read(o.join("ingest/summary.json")).unwrap()).unwrap();
    assert_eq!(ingest["warnings"].as_array().unwrap().len(), 0);

    let mut rdr = csv::Reader::from_path(o.join("eval/metrics.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let f1: f64 = r[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&f1));
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(o.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"].as_array().unwrap().len(), 4);
}
