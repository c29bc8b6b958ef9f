use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lorentz_align::cli::{HISTORY_HEADER, REPORT_HEADER, SCORE_HEADER};
use lorentz_align::data::{encode_embeddings, load_embeddings, synthetic_dataset};
use lorentz_align::model_io::Model;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lorentz-align"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, n: usize, dim: usize) -> std::path::PathBuf {
    let path = dir.join(name);
    let out = bin(&[
        "synth",
        "--n",
        &n.to_string(),
        "--dim",
        &dim.to_string(),
        "--seed",
        "5",
        "--out",
        p(&path),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    path
}

fn quick_train(dir: &Path, data: &Path, extra: &[&str]) -> Output {
    let out_dir = dir.join("out");
    let mut args = vec![
        "train",
        "--data",
        p(data),
        "--out",
        p(&out_dir),
        "--epochs",
        "2",
        "--patience",
        "2",
    ];
    args.extend_from_slice(extra);
    bin(&args)
}

#[test]
fn synth_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.haln", 120, 8);
    let b = synth(dir.path(), "b.haln", 120, 8);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let ds = load_embeddings(&a).unwrap();
    assert_eq!((ds.len(), ds.dim), (120, 8));
}

#[test]
fn synth_rejects_zero_samples_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["synth", "--n", "0", "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn bad_flags_exit_two() {
    assert_eq!(bin(&["train", "--data", "x.haln"]).status.code(), Some(2));
    assert_eq!(
        bin(&["eval", "--model", "m", "--data", "d", "--bogus"])
            .status
            .code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.haln", 100, 8);
    let out = quick_train(dir.path(), &data, &["--lr", "-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = quick_train(dir.path(), &dir.path().join("absent.haln"), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_eval_score_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.haln", 400, 8);
    let out = quick_train(dir.path(), &data, &["--lambda", "0"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out_dir = dir.path().join("out");
    let model = out_dir.join("model.json");
    let history = fs::read_to_string(out_dir.join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some(HISTORY_HEADER));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        // the entailment term is reported even when it carries no weight
        assert!(r[4] > 0.0);
        assert_eq!(r[2], r[3]);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 1);
    assert_eq!(manifest["config"]["lambda"].as_f64(), Some(0.0));

    let eval = |extra: &[&str]| {
        let mut args = vec!["eval", "--model", p(&model), "--data", p(&data)];
        args.extend_from_slice(extra);
        bin(&args)
    };
    let first = eval(&[]);
    assert!(first.status.success());
    let text = String::from_utf8(first.stdout.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("SRCC: ") && lines[1].starts_with("PLCC: "));
    for l in &lines {
        let value = l.split(": ").nth(1).unwrap();
        assert_eq!(value.split('.').nth(1).unwrap().len(), 4, "{l}");
    }
    assert_eq!(eval(&[]).stdout, first.stdout);

    let eval_csv = dir.path().join("eval.csv");
    assert!(eval(&["--out", p(&eval_csv)]).status.success());
    assert_eq!(fs::read_to_string(&eval_csv).unwrap().lines().count(), 401);

    let scores = dir.path().join("scores.csv");
    assert!(bin(&[
        "score",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--out",
        p(&scores)
    ])
    .status
    .success());
    let text = fs::read_to_string(&scores).unwrap();
    assert_eq!(text.lines().next(), Some(SCORE_HEADER));
    assert_eq!(text.lines().count(), 401);

    let report = dir.path().join("report.csv");
    assert!(bin(&[
        "report",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--out",
        p(&report)
    ])
    .status
    .success());
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().next(), Some(REPORT_HEADER));
    for line in text.lines().skip(1) {
        let fields: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(fields.len(), 8);
        assert!(fields.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn score_accepts_unscored_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.haln", 200, 8);
    assert!(quick_train(dir.path(), &data, &[]).status.success());
    let model = dir.path().join("out").join("model.json");

    let ds = synthetic_dataset(30, 8, 9, 0.0).unwrap();
    let mut bytes = encode_embeddings(&ds);
    let header = 24;
    let record = 8 + 8 * 8;
    for i in 0..ds.len() {
        let at = header + i * record + 4;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    }
    let unscored = dir.path().join("unscored.haln");
    fs::write(&unscored, bytes).unwrap();

    let out_csv = dir.path().join("s.csv");
    let out = bin(&[
        "score",
        "--model",
        p(&model),
        "--data",
        p(&unscored),
        "--out",
        p(&out_csv),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(fs::read_to_string(&out_csv).unwrap().lines().count(), 31);
    let eval = bin(&["eval", "--model", p(&model), "--data", p(&unscored)]);
    assert_eq!(eval.status.code(), Some(1));
}

#[test]
fn dimension_mismatch_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.haln", 200, 8);
    assert!(quick_train(dir.path(), &data, &[]).status.success());
    let model = dir.path().join("out").join("model.json");
    let other = synth(dir.path(), "wide.haln", 100, 16);
    let out = bin(&["eval", "--model", p(&model), "--data", p(&other)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn seed_list_writes_one_row_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.haln", 300, 8);
    let out_dir = dir.path().join("out");
    let out = bin(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&out_dir),
        "--seeds",
        "1..10",
        "--epochs",
        "1",
        "--patience",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    let runs = manifest["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 10);
    let srcc: Vec<f64> = runs
        .iter()
        .map(|r| r["test_srcc"].as_f64().unwrap())
        .collect();
    let mean = srcc.iter().sum::<f64>() / 10.0;
    assert!((manifest["srcc"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!(manifest["plcc"]["std"].as_f64().unwrap() >= 0.0);
    for seed in 1..=10 {
        let m = Model::load(out_dir.join(format!("seed-{seed}")).join("model.json")).unwrap();
        assert_eq!(m.metadata.seed, seed);
    }
}
