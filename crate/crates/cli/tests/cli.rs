use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contlab_cli::lab::Lab;
use contlab_cli::scenario::load_scenario;
use serde_json::Value;
use tempfile::TempDir;

fn reference() -> toml::Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/reference.toml");
    toml::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// The reference scenario at a coarse resolution, so each run takes a moment.
fn coarse() -> toml::Value {
    let mut sc = reference();
    let dom = sc["domain"].as_table_mut().unwrap();
    dom.insert("h".into(), 0.03125.into());
    dom.insert("dt".into(), 0.01.into());
    dom.insert("rebase_steps".into(), 5.into());
    sc
}

fn write(dir: &Path, sc: &toml::Value) -> PathBuf {
    let p = dir.join("scenario.toml");
    std::fs::write(&p, toml::to_string(sc).unwrap()).unwrap();
    p
}

fn contlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contlab"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn error_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&o.stderr)))
}

#[test]
fn small_box_margin_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let mut sc = coarse();
    let dom = sc["domain"].as_table_mut().unwrap();
    dom.insert("lower".into(), toml::Value::Array(vec![(-2.0).into()]));
    dom.insert("upper".into(), toml::Value::Array(vec![2.0.into()]));
    let p = write(dir.path(), &sc);
    let o = contlab(&["simulate", "--scenario", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(error_json(&o).to_string().contains("box margin"));
}

#[test]
fn frozen_constants_need_a_sidecar() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), &coarse());
    let o = contlab(&["correct", "--scenario", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_suite_is_rejected() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), &coarse());
    let o = contlab(&["verify", "--scenario", p.to_str().unwrap(), "--recalibrate", "--suite", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(error_json(&o).to_string().contains("nope"));
}

#[test]
fn malformed_scenario_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "name = \"x\"\ndimension = [").unwrap();
    let o = contlab(&["simulate", "--scenario", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(error_json(&o).is_object());
}

#[test]
fn depth_must_split_the_horizon_into_whole_steps() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), &coarse());
    let o = contlab(&["value", "--scenario", p.to_str().unwrap(), "--depth", "3"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn zero_schedule_keeps_the_slack_constant() {
    let dir = TempDir::new().unwrap();
    let mut sc = coarse();
    sc.as_table_mut().unwrap().insert(
        "schedule".into(),
        toml::from_str::<toml::Value>("s = [{ start = 0.0, end = 1.0, field = 0 }]").unwrap()["s"].clone(),
    );
    let p = write(dir.path(), &sc);
    let o = contlab(&["simulate", "--scenario", p.to_str().unwrap(), "--snapshots", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(dir.path().join("out/trajectory.csv"))
        .unwrap();
    let etas: Vec<String> = rdr.records().map(|r| r.unwrap()[1].to_string()).collect();
    assert_eq!(etas.len(), 101);
    assert!(etas.iter().all(|e| *e == etas[0]));
    assert!(dir.path().join("out/simulate.json").exists());
}

#[test]
fn singleton_atlas_values_its_only_schedule() {
    let dir = TempDir::new().unwrap();
    let mut sc = coarse();
    sc.as_table_mut().unwrap().insert(
        "atlas".into(),
        toml::from_str::<toml::Value>("a = [{ kind = \"constant\", value = [-0.25] }]").unwrap()["a"].clone(),
    );
    sc.as_table_mut().unwrap().insert(
        "schedule".into(),
        toml::from_str::<toml::Value>("s = [{ start = 0.0, end = 1.0, field = 0 }]").unwrap()["s"].clone(),
    );
    sc["correction"].as_table_mut().unwrap().insert("drive".into(), 0.into());
    let p = write(dir.path(), &sc);
    let o = contlab(&["value", "--scenario", p.to_str().unwrap(), "--depth", "4"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let lab = Lab::<1>::build(load_scenario(&p).unwrap()).unwrap();
    let expected = lab.problem().cost(&lab.m0, &lab.constant_schedule(&lab.atlas[0], 0.0)).unwrap();
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/value.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["value"].as_f64().unwrap(), expected);
    assert_eq!(report["report"]["fallback"], Value::Bool(false));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim().parse::<f64>().unwrap(), expected);
}

#[test]
fn outputs_carry_the_scenario_hash() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), &coarse());
    let o = contlab(&["simulate", "--scenario", p.to_str().unwrap(), "--snapshots", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let hash = contlab_cli::scenario::hash_bytes(&std::fs::read(&p).unwrap());
    let json = std::fs::read_to_string(dir.path().join("out/simulate.json")).unwrap();
    assert!(json.contains(&hash));
    let csv = std::fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    assert!(csv.lines().take_while(|l| l.starts_with('#')).any(|l| l.contains(&hash)));
}
