use std::fs;
use std::path::Path;

use anmmm::cli::{main_with_args, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
use anmmm::io::{load_pairs, parse_labels};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["anmmm"];
    full.extend_from_slice(args);
    let code = main_with_args(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn fast_config(dir: &Path) -> String {
    let p = dir.join("fast.toml");
    fs::write(&p, "[fit]\nrestarts = 2\nmax_iters = 60\n").unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn synth_writes_data_labels_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, _, err) = run(&["synth", "--family", "f3", "--n", "100", "--seed", "7", "--out", out]);
    assert_eq!(code, EXIT_OK, "{err}");
    let data = load_pairs(dir.path().join("data.csv"), 0, 1).unwrap();
    let labels = parse_labels(&fs::read_to_string(dir.path().join("labels.csv")).unwrap()).unwrap();
    assert_eq!(data.n(), 100);
    assert_eq!(labels.len(), 100);
    let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 7"));
    assert!(fs::read_to_string(dir.path().join("data.csv")).unwrap().contains("# family = \"f3\""));
}

#[test]
fn synth_with_proportion_is_unbalanced() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, _, _) = run(&["synth", "--n", "400", "--prop", "0.25", "--seed", "1", "--out", out]);
    assert_eq!(code, EXIT_OK);
    let labels = parse_labels(&fs::read_to_string(dir.path().join("labels.csv")).unwrap()).unwrap();
    let first = labels.iter().filter(|&&l| l == 1).count() as f64 / 400.0;
    assert!((first - 0.25).abs() < 0.07, "share {first}");
}

#[test]
fn synth_rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(run(&["synth", "--seed", "3", "--out", d.path().to_str().unwrap()]).0, EXIT_OK);
    }
    for f in ["data.csv", "labels.csv", "manifest.toml"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn infer_reports_and_mirrors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = fast_config(dir.path());
    run(&["synth", "--n", "40", "--seed", "2", "--out", out]);
    let data = dir.path().join("data.csv");
    let data = data.to_str().unwrap();
    let (code, forward, _) = run(&["infer", "--input", data, "--config", &cfg]);
    assert!(code == EXIT_OK || code == 3);
    assert!(forward.lines().any(|l| l.starts_with("hsic_xy ")));
    let (_, backward, _) = run(&["infer", "--input", data, "--cause-col", "1", "--effect-col", "0", "--config", &cfg]);
    let dir_of = |s: &str| s.lines().next().unwrap().to_string();
    let flipped = match dir_of(&forward).as_str() {
        "direction XtoY" => "direction YtoX",
        "direction YtoX" => "direction XtoY",
        other => other,
    }
    .to_string();
    assert_eq!(dir_of(&backward), flipped);
}

#[test]
fn infer_constant_column_is_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.csv");
    let rows: String = (0..20).map(|i| format!("{i},1\n")).collect();
    fs::write(&p, rows).unwrap();
    let (code, _, err) = run(&["infer", "--input", p.to_str().unwrap()]);
    assert_eq!(code, EXIT_NUMERIC);
    assert!(err.contains("constant"), "{err}");
}

#[test]
fn infer_missing_column_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.csv");
    fs::write(&p, "1 2\n3 4\n").unwrap();
    assert_eq!(run(&["infer", "--input", p.to_str().unwrap(), "--effect-col", "3"]).0, EXIT_USAGE);
}

#[test]
fn cluster_with_and_without_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = fast_config(dir.path());
    run(&["synth", "--n", "40", "--seed", "4", "--out", out]);
    let data = dir.path().join("data.csv");
    let truth = dir.path().join("labels.csv");
    let res = dir.path().join("res");
    let (code, stdout, _) = run(&[
        "cluster",
        "--input",
        data.to_str().unwrap(),
        "--labels",
        truth.to_str().unwrap(),
        "--config",
        &cfg,
        "--out",
        res.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.lines().any(|l| l.starts_with("ari ")));
    let labels = parse_labels(&fs::read_to_string(res.join("labels.csv")).unwrap()).unwrap();
    assert_eq!(labels.len(), 40);

    let (_, stdout, _) = run(&["cluster", "--input", data.to_str().unwrap(), "--config", &cfg, "--clusters", "1"]);
    assert!(!stdout.lines().any(|l| l.starts_with("ari ")));
    let labels: Vec<&str> = stdout.lines().filter(|l| l.parse::<usize>().is_ok()).collect();
    assert_eq!(labels.len(), 40);
    assert!(labels.iter().all(|&l| l == "1"));
}

#[test]
fn bench_zero_trials_is_usage_error() {
    assert_eq!(run(&["bench", "--trials", "0"]).0, EXIT_USAGE);
}

#[test]
fn bench_sweep_writes_best_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    let out = dir.path().join("b");
    let (code, stdout, err) = run(&[
        "bench",
        "--task",
        "infer",
        "--n",
        "20",
        "--trials",
        "2",
        "--lambda-sweep",
        "0.1,1",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(stdout.lines().count(), 3);
    let best = fs::read_to_string(out.join("best.csv")).unwrap();
    assert_eq!(best.lines().filter(|l| !l.starts_with('#')).count(), 2);
    let log = anmmm::io::RecordLog::parse(&fs::read_to_string(out.join("records.log")).unwrap()).unwrap();
    assert_eq!(log.records().len(), 4);
}
