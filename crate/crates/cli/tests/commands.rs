use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use foldkin::bonsai;
use foldkin::dataset::{parse_records, serialize_records, synthesize_dataset};
use foldkin::eval::rows_from_csv;
use foldkin::preprocess::FittedPreprocessor;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foldkin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        Env {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn write(&self, name: &str, text: &str) -> String {
        fs::write(self.path(name), text).unwrap();
        self.s(name)
    }

    /// Synthetic dataset plus a fast config.
    fn setup(&self, n: usize) -> (String, String) {
        let data = synthesize_dataset(n, 1).unwrap();
        let input = self.write("data.csv", &serialize_records(data.records()).unwrap());
        let cfg = self.write("fast.toml", "seed = 1\n[bonsai]\nepochs = 30\n");
        (input, cfg)
    }
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn train_writes_small_model_and_is_reproducible() {
    let env = Env::new();
    let (input, cfg) = env.setup(200);
    run_ok(&["train", "--config", &cfg, "--input", &input, "--out", &env.s("a")]);
    run_ok(&["train", "--config", &cfg, "--input", &input, "--out", &env.s("b")]);
    assert_eq!(files(&env.path("a")), ["model.bnsi", "preprocessor.json", "train_report.json"]);
    let model = fs::read(env.path("a/model.bnsi")).unwrap();
    assert!(model.len() < 1024);
    assert_eq!(bonsai::model_size(&bonsai::deserialize(&model).unwrap()), model.len());
    for f in files(&env.path("a")) {
        assert_eq!(fs::read(env.path("a").join(&f)).unwrap(), fs::read(env.path("b").join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_input_fails_without_artifacts() {
    let env = Env::new();
    let out = run(&["train", "--seed", "0", "--input", &env.s("absent.csv"), "--out", &env.s("out")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!env.path("out").exists());
}

#[test]
fn exit_codes() {
    let env = Env::new();
    let (input, _) = env.setup(60);
    let no_seed = run(&["train", "--input", &input, "--out", &env.s("o")]);
    assert_eq!(no_seed.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&no_seed.stderr).contains("seed"));

    let bad = env.write("bad.toml", "seed = 1\nbogus_key = 3\n");
    assert_eq!(run(&["train", "--config", &bad, "--input", &input, "--out", &env.s("o")]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let garbage = env.write("garbage.csv", "psn,class\nx,y\n");
    assert_eq!(run(&["train", "--seed", "1", "--input", &garbage, "--out", &env.s("o")]).status.code(), Some(1));
    assert!(!env.path("o").exists());

    let threads = Command::new(env!("CARGO_BIN_EXE_foldkin"))
        .args(["synth", "--seed", "1", "--n", "5"])
        .env("FOLDKIN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(1));
}

#[test]
fn evaluate_rows_per_quadrant_and_round_trip() {
    let env = Env::new();
    let (input, cfg) = env.setup(240);
    run_ok(&["evaluate", "--config", &cfg, "--input", &input, "--subsets", "2,4", "--out", &env.s("ev")]);
    let text = fs::read_to_string(env.path("ev/results.csv")).unwrap();
    let rows = rows_from_csv(&text).unwrap();
    for q in ["D_AA", "D_BB", "D_AB", "D_BA"] {
        assert_eq!(rows.iter().filter(|r| r.data == q).count(), 2, "{q}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(env.path("ev/report.json")).unwrap()).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 8);
    assert_eq!(report["comparisons"].as_array().unwrap().len(), 8);

    run_ok(&["evaluate", "--config", &cfg, "--input", &input, "--subsets", "2", "--format", "json", "--out", &env.s("js")]);
    let js: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(env.path("js/results.json")).unwrap()).unwrap();
    assert_eq!(js.as_array().unwrap().len(), 6);

    let empty = run(&["evaluate", "--config", &cfg, "--input", &input, "--subsets", "", "--out", &env.s("none")]);
    assert_eq!(empty.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("no subsets"));
}

#[test]
fn predict_matches_in_process_and_ignores_targets() {
    let env = Env::new();
    let (input, cfg) = env.setup(120);
    run_ok(&["train", "--config", &cfg, "--input", &input, "--out", &env.s("m")]);
    let before = fs::read(&input).unwrap();
    run_ok(&["predict", "--input", &input, "--artifacts", &env.s("m"), "--out", &env.s("p.csv")]);
    assert_eq!(fs::read(&input).unwrap(), before, "input was modified");

    let model = bonsai::deserialize(&fs::read(env.path("m/model.bnsi")).unwrap()).unwrap();
    let pre = FittedPreprocessor::from_json(&fs::read_to_string(env.path("m/preprocessor.json")).unwrap()).unwrap();
    let records = parse_records(&String::from_utf8(before).unwrap(), true).unwrap();
    let text = fs::read_to_string(env.path("p.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("psn,ln_kf_pred"));
    let preds: Vec<&str> = lines.collect();
    assert_eq!(preds.len(), records.len());
    for (line, r) in preds.iter().zip(&records) {
        let (psn, v) = line.split_once(',').unwrap();
        assert_eq!(psn, r.psn);
        assert_eq!(v.parse::<f64>().unwrap(), model.predict(&pre.transform(r).unwrap()).unwrap());
    }

    // One row, with and without its target.
    let mut one = records[..1].to_vec();
    let with = env.write("one.csv", &serialize_records(&one).unwrap());
    one[0].ln_kf = None;
    let without = env.write("one_blank.csv", &serialize_records(&one).unwrap());
    let a = run_ok(&["predict", "--input", &with, "--artifacts", &env.s("m")]).stdout;
    let b = run_ok(&["predict", "--input", &without, "--artifacts", &env.s("m")]).stdout;
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 2);
}

#[test]
fn predict_rejects_version_mismatch() {
    let env = Env::new();
    let (input, cfg) = env.setup(80);
    run_ok(&["train", "--config", &cfg, "--input", &input, "--out", &env.s("m")]);

    let pre = fs::read_to_string(env.path("m/preprocessor.json")).unwrap();
    let bumped = pre.replacen("\"format_version\": 1", "\"format_version\": 7", 1);
    assert_ne!(pre, bumped);
    let bad_pre = env.write("pre7.json", &bumped);
    let out = run(&["predict", "--input", &input, "--model", &env.s("m/model.bnsi"), "--preprocessor", &bad_pre]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));

    let mut model = fs::read(env.path("m/model.bnsi")).unwrap();
    model[4] = 9;
    fs::write(env.path("m9.bnsi"), &model).unwrap();
    let out = run(&["predict", "--input", &input, "--model", &env.s("m9.bnsi"), "--preprocessor", &env.s("m/preprocessor.json")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn sweep_single_point_and_rerun() {
    let env = Env::new();
    let (input, _) = env.setup(150);
    let cfg = env.write(
        "sweep.toml",
        "seed = 2\ntrain_subset = 5\n[bonsai]\nepochs = 20\n[sweep]\nobjective = \"mae\"\n[sweep.grid]\nlearning_rate = [0.05]\n",
    );
    run_ok(&["sweep", "--config", &cfg, "--input", &input, "--out", &env.s("a")]);
    run_ok(&["sweep", "--config", &cfg, "--input", &input, "--out", &env.s("b")]);
    let a = fs::read_to_string(env.path("a/sweep.csv")).unwrap();
    assert_eq!(a.lines().count(), 2);
    assert!(a.starts_with("trial,learning_rate,mae,mse,r2,size_bytes,latency_ms\n"));
    assert_eq!(a, fs::read_to_string(env.path("b/sweep.csv")).unwrap());

    // The best config feeds straight into train.
    run_ok(&["train", "--config", &env.s("a/best_config.json"), "--input", &input, "--out", &env.s("t")]);
    assert!(env.path("t/model.bnsi").exists());

    let no_spec = env.write("plain.toml", "seed = 2\n");
    assert_eq!(run(&["sweep", "--config", &no_spec, "--input", &input, "--out", &env.s("c")]).status.code(), Some(1));
}

#[test]
fn benchmark_fractions_sum_to_one() {
    let env = Env::new();
    let (input, cfg) = env.setup(100);
    let out = run_ok(&["benchmark", "--config", &cfg, "--input", &input]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let stages = v["stages"].as_object().unwrap();
    let total: f64 = stages.values().map(|x| x.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() <= 0.01, "{total}");
    assert!(v["model"]["median_ms"].as_f64().unwrap() > 0.0);
    assert!(v["pipeline"]["p95_ms"].as_f64().unwrap() >= v["pipeline"]["median_ms"].as_f64().unwrap());
}

#[test]
fn synth_formats() {
    let env = Env::new();
    let csv = run_ok(&["synth", "--seed", "4", "--n", "7"]).stdout;
    let records = parse_records(&String::from_utf8(csv.clone()).unwrap(), true).unwrap();
    assert_eq!(records.len(), 7);
    assert_eq!(csv, run_ok(&["synth", "--seed", "4", "--n", "7"]).stdout);
    let js = run_ok(&["synth", "--seed", "4", "--n", "7", "--format", "json", "--out", &env.s("d.json")]);
    assert!(js.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(env.path("d.json")).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 7);
}
