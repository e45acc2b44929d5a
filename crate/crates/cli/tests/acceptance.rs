//! Runs every verification suite on the shipped reference scenario and
//! reports one line per acceptance criterion.

use std::path::PathBuf;

use contlab_cli::commands::{open, verify, VerifyReport};
use contlab_cli::lab::Lab;
use contlab_cli::output::json_string;
use contlab_cli::scenario::load_scenario;

const CRITERIA: [&str; 13] = [
    "flow exactness",
    "appendix bounds",
    "transport exactness",
    "interpolation inequality",
    "pushback inequality",
    "correction",
    "dynamic programming principle",
    "value sanity",
    "hamiltonian",
    "hjb residual",
    "inward cone",
    "lipschitz extension",
    "determinism",
];

fn reference() -> Lab<1> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/reference.toml");
    open::<1>(load_scenario(&path).unwrap(), false).unwrap()
}

fn run_with(lab: &Lab<1>, workers: usize) -> (VerifyReport, String) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
    let report = pool.install(|| verify(lab, &[])).unwrap();
    let json = json_string(&lab.loaded, "verify", &report).unwrap();
    (report, json)
}

#[test]
fn acceptance() {
    let lab = reference();
    let (report, wide) = run_with(&lab, 8);
    let (_, narrow) = run_with(&lab, 1);

    let mut passed = [false; 13];
    for (i, p) in passed.iter_mut().enumerate().take(12) {
        let covering: Vec<_> = report.suites.iter().filter(|s| s.criterion == Some(i as u8 + 1)).collect();
        *p = !covering.is_empty() && covering.iter().all(|s| s.passed);
    }
    passed[12] = wide == narrow;

    for (i, name) in CRITERIA.iter().enumerate() {
        println!("criterion {} ({name}): {}", i + 1, if passed[i] { "PASS" } else { "FAIL" });
    }
    for s in report.suites.iter().filter(|s| s.criterion.is_none()) {
        println!("supporting suite {}: {}", s.name, if s.passed { "PASS" } else { "FAIL" });
    }
    for s in report.suites.iter().filter(|s| !s.passed) {
        println!("{} details: {}", s.name, s.details);
    }
    assert!(passed.iter().all(|p| *p), "some acceptance criteria failed");
    assert!(report.passed);
}
