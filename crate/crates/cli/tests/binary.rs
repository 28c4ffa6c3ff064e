use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mlmcmc"))
}

#[test]
fn simulate_data_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["simulate-data", "--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8 * 1024 + 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 3);
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"lambda": -1.0}"#).unwrap();
    let out = bin()
        .args(["estimate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}

#[test]
fn malformed_epsilon_grid_is_rejected() {
    let out = bin().args(["mse-sweep", "--epsilon-grid", "0.1,abc"]).output().unwrap();
    assert!(!out.status.success());
}
