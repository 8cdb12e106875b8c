use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scoregate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scoregate"))
        .args(args)
        .env_remove("SCOREGATE_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = scoregate(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn manifest_of(p: &str) -> PathBuf {
    PathBuf::from(format!("{p}.manifest.json"))
}

/// Generates a small synthetic set and trains a model on it.
fn trained(dir: &Path, model: &str) -> (String, String, String) {
    let data = path(dir, "synth.csv");
    let m = path(dir, &format!("{model}.json"));
    let report = path(dir, &format!("{model}.report.json"));
    ok(&["gen", "--dataset", "synth", "--n", "200", "--seed", "5", "--out", &data]);
    ok(&[
        "train", "--data", &data, "--model", model, "--hidden", "8,4", "--epochs", "30", "--seed", "5",
        "--out-model", &m, "--out-report", &report,
    ]);
    (data, m, report)
}

#[test]
fn exit_codes_follow_the_usual_convention() {
    assert_eq!(scoregate(&["--help"]).status.code(), Some(0));
    assert_eq!(scoregate(&["--version"]).status.code(), Some(0));
    assert_eq!(scoregate(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(scoregate(&["gen", "--dataset", "synth"]).status.code(), Some(2));
    let missing = scoregate(&["rank", "--model", "/nonexistent/model.json", "--out", "/tmp/x.json"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}

#[test]
fn gen_writes_data_sidecar_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "f1.csv");
    ok(&["gen", "--dataset", "friedman1", "--n", "50", "--sigma", "0.5", "--seed", "3", "--out", &data]);
    let text = std::fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert!(text.lines().next().unwrap().ends_with(",y"));
    let meta = read_json(dir.path().join("f1.meta.json"));
    assert_eq!(meta["generator"], "friedman1");
    assert_eq!(meta["seed"], 3);
    let gt: Vec<f64> = serde_json::from_value(meta["ground_truth_importance"].clone()).unwrap();
    assert_eq!(gt, vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let manifest = read_json(manifest_of(&data));
    assert_eq!(manifest["command"], "gen");
    assert_eq!(manifest["seeds"]["data"], 3);
}

#[test]
fn seed_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(dir.path(), "a.csv"), path(dir.path(), "b.csv"));
    ok(&["gen", "--dataset", "synth", "--n", "20", "--seed", "11", "--out", &a]);
    let out = Command::new(env!("CARGO_BIN_EXE_scoregate"))
        .args(["gen", "--dataset", "synth", "--n", "20", "--out", &b])
        .env("SCOREGATE_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn rank_refuses_an_ungated_model() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model, _) = trained(dir.path(), "vanilla");
    let out = scoregate(&["rank", "--model", &model, "--out", &path(dir.path(), "rank.json")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ungated"));
}

#[test]
fn plot_exports_one_row_per_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, report) = trained(dir.path(), "scores");
    let csv = path(dir.path(), "trajectory.csv");
    ok(&["plot", "--report", &report, "--out", &csv]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,s_1,s_2,s_3,s_4,s_5,s_6,s_7,s_8,s_9,s_10");
    let epochs: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, vec!["0", "10", "20", "30"]);
    assert!(lines.iter().all(|l| l.split(',').count() == 11));
}

#[test]
fn replaying_a_manifest_reproduces_the_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model, report) = trained(dir.path(), "scores");
    let first_model = std::fs::read(&model).unwrap();
    let mut first_report = read_json(&report);
    std::fs::remove_file(&model).unwrap();
    std::fs::remove_file(&report).unwrap();
    ok(&["replay", "--manifest", manifest_of(&report).to_str().unwrap()]);
    assert_eq!(std::fs::read(&model).unwrap(), first_model);
    let mut second_report = read_json(&report);
    for r in [&mut first_report, &mut second_report] {
        let map = r.as_object_mut().unwrap();
        map.remove("wall_time_ms");
        map.remove("ranking_extraction_time_ms");
    }
    assert_eq!(first_report, second_report);
}

#[test]
fn shap_and_compare_fit_together() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model, _) = trained(dir.path(), "scores");
    let rank = path(dir.path(), "rank.json");
    let shap = path(dir.path(), "shap.json");
    ok(&["rank", "--model", &model, "--out", &rank]);
    ok(&[
        "shap", "--model", &model, "--data", &data, "--samples", "5", "--coalitions", "64", "--seed", "5", "--out",
        &shap,
    ]);
    let shap_out = read_json(&shap);
    assert_eq!(shap_out["result"]["n_samples"], 5);
    assert_eq!(shap_out["ranking"]["source"], "shap");
    assert_eq!(shap_out["one_indexed"].as_array().unwrap().len(), 10);

    let sidecar = path(dir.path(), "synth.meta.json");
    let same = path(dir.path(), "same.json");
    ok(&["compare", "--ranking", &rank, "--ranking", &rank, "--ground-truth", &sidecar, "--out", &same]);
    let cmp = read_json(&same);
    for row in cmp["spearman"].as_array().unwrap() {
        for v in row.as_array().unwrap() {
            assert_eq!(v.as_f64().unwrap(), 1.0);
        }
    }
    assert_eq!(cmp["ours_matches"], cmp["shap_matches"]);
    assert_eq!(cmp["table"].as_array().unwrap().len(), 5);
    assert_eq!(cmp["ground_truth"].as_array().unwrap()[..5], [5, 2, 1, 3, 4].map(Value::from));

    let both = path(dir.path(), "both.json");
    ok(&["compare", "--ranking", &rank, "--ranking", &shap, "--out", &both]);
    let cmp = read_json(&both);
    let m = cmp["spearman"].as_array().unwrap();
    assert_eq!(m[0][1], m[1][0]);
}

#[test]
fn malformed_csv_is_reported_with_its_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "bad.csv");
    std::fs::write(&data, "a,b,y\n1,2,0\n3,oops,1\n").unwrap();
    let out = scoregate(&[
        "train", "--data", &data, "--epochs", "2", "--out-model", &path(dir.path(), "m.json"), "--out-report",
        &path(dir.path(), "r.json"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3") && err.contains('b'), "{err}");
}

#[test]
fn augment_appends_named_noise_columns() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _, _) = trained(dir.path(), "scores");
    let wide = path(dir.path(), "wide.csv");
    ok(&["augment", "--data", &data, "--k", "3", "--seed", "2", "--out", &wide]);
    let header = std::fs::read_to_string(&wide).unwrap().lines().next().unwrap().to_string();
    assert!(header.ends_with("rand1,rand2,rand3,y"), "{header}");
}
