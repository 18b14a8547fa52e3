use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fieldreg::fem::{Case, CaseSpec, FemPredictor};
use fieldreg::train::{r_squared, rmse};
use fieldreg::uq::Predictor;
use fieldreg::{Dataset, Field};

fn fieldreg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fieldreg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fieldreg(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn exit_code(dir: &Path, args: &[&str]) -> i32 {
    fieldreg(dir, args).status.code().unwrap()
}

/// Value of `key` on the `key=value` metrics line.
fn metric(stdout: &str, key: &str) -> String {
    let line = stdout.lines().last().unwrap();
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {line:?}"))
        .to_string()
}

fn write_config(dir: &Path, name: &str, json: &str) {
    fs::write(dir.join(name), json).unwrap();
}

const SMOKE: &str = r#"{"case": "one2one", "grid_n": 8, "seed": 11,
    "data": {"n_train": 16, "n_test": 8},
    "network": {"preset": "small"},
    "train": {"epochs": 50},
    "uq": {"n_samples": 40}}"#;

#[test]
fn gen_data_writes_requested_schema() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "c.json",
        r#"{"case": "one2one", "grid_n": 8, "data": {"n_train": 4, "n_test": 2}, "network": {"preset": "small"}}"#,
    );
    let out = ok(dir.path(), &["gen-data", "--config", "c.json", "--out", "o"]);
    assert_eq!(metric(&out, "n_train"), "4");
    let ds = Dataset::read(dir.path().join("o/train.frds")).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.input_shape(), (8, 8, 1));
    assert_eq!(ds.output_shape(), (8, 8, 1));
    assert_eq!(ds.names_out, vec!["w".to_string()]);
    let manifest = fs::read_to_string(dir.path().join("o/gen-data.manifest.json")).unwrap();
    assert!(manifest.contains("wall_time_s") && manifest.contains("residual"));
}

#[test]
fn train_eval_and_resume_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "c.json", SMOKE);
    ok(d, &["gen-data", "--config", "c.json", "--out", "o"]);
    let trained = ok(d, &["train", "--config", "c.json", "--out", "o"]);
    let history = fs::read_to_string(d.join("o/history.csv")).unwrap();
    let rows: Vec<Vec<&str>> = history.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let epochs: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(epochs, ["20", "40", "50"]);
    let last = rows.last().unwrap();
    assert_eq!(metric(&trained, "test_rmse"), last[3]);
    assert_eq!(metric(&trained, "test_r2"), last[4]);

    // evaluating the final checkpoint reproduces the last row, and the dumped predictions
    // give back the same numbers
    let evald = ok(d, &["eval", "--config", "c.json", "--out", "o"]);
    assert_eq!(metric(&evald, "test_rmse"), last[3]);
    assert_eq!(metric(&evald, "test_r2"), last[4]);
    let pred = Dataset::read(d.join("o/predictions.frds")).unwrap();
    let test = Dataset::read(d.join("o/test.frds")).unwrap();
    assert_eq!(pred.inputs(), test.inputs());
    let r2 = r_squared(pred.outputs(), test.outputs()).unwrap();
    assert_eq!(r2.to_string(), metric(&trained, "test_r2"));
    assert_eq!(rmse(pred.outputs(), test.outputs()).unwrap().to_string(), last[3]);

    write_config(d, "more.json", &SMOKE.replace(r#""epochs": 50"#, r#""epochs": 30"#));
    let resumed = ok(d, &["train", "--resume", "--config", "more.json", "--out", "o"]);
    assert_eq!(metric(&resumed, "epoch"), "80");
    let history = fs::read_to_string(d.join("o/history.csv")).unwrap();
    let epochs: Vec<&str> = history.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["20", "40", "50", "70", "80"]);
}

#[test]
fn reruns_after_resume_match_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "c.json", &SMOKE.replace(r#""epochs": 50"#, r#""epochs": 6, "eval_every": 3"#));
    write_config(d, "half.json", &SMOKE.replace(r#""epochs": 50"#, r#""epochs": 3, "eval_every": 3"#));
    ok(d, &["gen-data", "--config", "c.json", "--out", "a"]);
    ok(d, &["gen-data", "--config", "c.json", "--out", "b"]);
    ok(d, &["train", "--config", "c.json", "--out", "a"]);
    ok(d, &["train", "--config", "half.json", "--out", "b"]);
    ok(d, &["train", "--resume", "--config", "half.json", "--out", "b"]);
    assert_eq!(fs::read(d.join("a/model.frm1")).unwrap(), fs::read(d.join("b/model.frm1")).unwrap());
    assert_eq!(
        fs::read_to_string(d.join("a/history.csv")).unwrap(),
        fs::read_to_string(d.join("b/history.csv")).unwrap()
    );
}

#[test]
fn incompatible_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "c.json", SMOKE);
    ok(d, &["gen-data", "--config", "c.json", "--out", "o"]);

    // datasets of another case are rejected before training starts
    write_config(d, "many.json", &SMOKE.replace("one2one", "one2many"));
    assert_eq!(exit_code(d, &["train", "--config", "many.json", "--out", "o"]), 2);
    assert!(!d.join("o/model.frm1").exists());

    write_config(d, "short.json", &SMOKE.replace(r#""epochs": 50"#, r#""epochs": 1"#));
    ok(d, &["train", "--config", "short.json", "--out", "o"]);
    let fr21 = SMOKE.replace(r#""grid_n": 8"#, r#""grid_n": 16"#).replace("small", "fr21");
    write_config(d, "fr21.json", &fr21);
    let other_grid = fieldreg(d, &["eval", "--config", "fr21.json", "--out", "o"]);
    assert_eq!(other_grid.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&other_grid.stderr).contains("layer"));

    write_config(d, "bad.json", r#"{"case": "one2one", "grid_n": 8, "typo": 1}"#);
    assert_eq!(exit_code(d, &["gen-data", "--config", "bad.json", "--out", "o"]), 2);
    write_config(d, "weights.json", &SMOKE.replace(r#""epochs": 50"#, r#""channel_weights": [1, 2]"#));
    assert_eq!(exit_code(d, &["train", "--config", "weights.json", "--out", "o"]), 2);
    assert_eq!(exit_code(d, &["gen-data", "--config", "missing.json"]), 4);
    assert_eq!(exit_code(d, &["gen-data"]), 2);
}

#[test]
fn corrupt_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "c.json", &SMOKE.replace(r#""epochs": 50"#, r#""epochs": 1"#));
    ok(d, &["gen-data", "--config", "c.json", "--out", "o"]);
    ok(d, &["train", "--config", "c.json", "--out", "o"]);
    let model = fs::read(d.join("o/model.frm1")).unwrap();
    fs::write(d.join("o/model.frm1"), &model[..model.len() / 2]).unwrap();
    assert_eq!(exit_code(d, &["eval", "--config", "c.json", "--out", "o"]), 4);
    let mut test = fs::read(d.join("o/test.frds")).unwrap();
    test[0] = b'X';
    fs::write(d.join("o/test.frds"), test).unwrap();
    assert_eq!(exit_code(d, &["train", "--config", "c.json", "--out", "o"]), 4);
    assert!(!d.join("o/history.csv.partial").exists());
}

#[test]
fn uq_with_fem_as_surrogate_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "c.json", SMOKE);
    let out = ok(
        d,
        &["uq", "--config", "c.json", "--out", "o", "--predictor", "fem", "--reference", "fem"],
    );
    assert_eq!(metric(&out, "n_samples"), "40");
    assert_eq!(metric(&out, "mean_err"), "0");
    assert_eq!(metric(&out, "var_err"), "0");
    for name in ["err_mean_w.csv", "err_var_w.csv"] {
        let csv = fs::read_to_string(d.join("o/uq").join(name)).unwrap();
        assert!(csv.split([',', '\n']).filter(|t| !t.is_empty()).all(|t| t.parse::<f64>().unwrap() == 0.0));
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("o/uq.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["details"]["n_samples"], 40);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("o/uq/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["probes"].as_array().unwrap().len(), 2);
    assert_eq!(summary["pdf_l1_max"], 0.0);
}

#[test]
fn predict_matches_direct_solve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "c.json", SMOKE);
    let mut csv = String::new();
    for r in 0..8 {
        let row: Vec<String> = (0..8).map(|c| format!("{}", 1.0 + 0.1 * (r * c) as f64)).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    fs::write(d.join("e.csv"), &csv).unwrap();
    ok(d, &["predict", "--config", "c.json", "--out", "o", "--predictor", "fem", "--input", "e.csv"]);
    let e = Field::from_vec(
        8,
        8,
        1,
        csv.split([',', '\n']).filter(|t| !t.is_empty()).map(|t| t.parse().unwrap()).collect(),
    )
    .unwrap();
    let want = FemPredictor::from_spec(&CaseSpec::new(Case::One2one, 8)).predict(&e).unwrap();
    assert_eq!(fs::read_to_string(d.join("o/predict_w.csv")).unwrap(), want.to_csv(0).unwrap());

    fs::write(d.join("small.csv"), "1,2\n3,4\n").unwrap();
    assert_eq!(
        exit_code(d, &["predict", "--config", "c.json", "--out", "o", "--predictor", "fem", "--input", "small.csv"]),
        2
    );
    fs::write(d.join("junk.csv"), "1,x\n").unwrap();
    assert_eq!(
        exit_code(d, &["predict", "--config", "c.json", "--out", "o", "--predictor", "fem", "--input", "junk.csv"]),
        4
    );
}
