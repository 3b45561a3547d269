//! End-to-end runs of the `currents` binary.

use std::path::Path;
use std::process::{Command, Output};

fn currents(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_currents")).args(args).current_dir(dir).env_remove("CURRENTS_WORKERS").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_writes_report_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = currents(&["verify", "prop1series", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["passed"], true);
    assert_eq!(report["config"]["tolerances"]["abs"], 1e-8);
    let csv = std::fs::read_to_string(tmp.path().join("run/prop1_series.csv")).unwrap();
    assert!(csv.starts_with("x,horizon,time_dim,n_max,estimate,tail_bound,abs_error\n"));
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().count(), 7);

    let again = currents(&["report", "--out", "run"], tmp.path());
    assert_eq!(again.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&again.stdout).contains("verify Prop1Series: PASS"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("mc.toml"),
        "experiment = \"Prop1MC\"\n[params]\nn_paths = 2000\nn_steps = 200\n",
    )
    .unwrap();
    for (out, workers) in [("a", "1"), ("b", "3")] {
        let o = Command::new(env!("CARGO_BIN_EXE_currents"))
            .args(["verify", "Prop1MC", "--seed", "5", "--out", out, "--config", "mc.toml"])
            .current_dir(tmp.path())
            .env("CURRENTS_WORKERS", workers)
            .output()
            .unwrap();
        assert!(o.status.code() == Some(0) || o.status.code() == Some(1), "{}", stderr(&o));
    }
    let a = std::fs::read(tmp.path().join("a/prop1_mc.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/prop1_mc.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_sweep_is_a_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.toml"), "experiment = \"Prop3\"\nsweep = []\n").unwrap();
    let o = currents(&["verify", "Prop3", "--config", "c.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`sweep`"), "{}", stderr(&o));
}

#[test]
fn schema_violations_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.toml"), "experiment = \"Prop2\"\n[params]\nbogus = 1\n").unwrap();
    let o = currents(&["verify", "Prop2", "--config", "c.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    let o = currents(&["verify", "Prop1MC"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`seed`"), "{}", stderr(&o));

    let o = currents(&["verify", "Prop9"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown experiment"));
}

#[test]
fn unsupported_driver_is_a_capability_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("c.toml"),
        "experiment = \"Prop1MC\"\nseed = 1\n[driver]\nkind = \"FbmSheet\"\ntime_dim = 1\nspace_dim = 1\nhurst = [0.7]\nhorizon = 1.0\n",
    )
    .unwrap();
    let o = currents(&["verify", "Prop1MC", "--config", "c.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unsupported driver"), "{}", stderr(&o));
}

#[test]
fn failing_checks_exit_with_one() {
    // the B-type term stays divergent at r = 0.3
    let tmp = tempfile::tempdir().unwrap();
    let o = currents(&["verify", "Prop3", "--refine-levels", "40"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["params"]["ladder_levels"], 40);
    assert_eq!(report["passed"], false);
}

#[test]
fn scan_writes_bracket() {
    let tmp = tempfile::tempdir().unwrap();
    let o = currents(&["scan", "Prop5", "--out", "s", "--n-max", "1000"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("s/prop5_scan.csv")).unwrap();
    assert!(csv.starts_with("stage,exponent,side,verdict,diagnostic\n"));
    assert!(csv.contains("bisection,"));
}

#[test]
fn paths_writes_ensemble_and_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let o = currents(&["paths", "--seed", "3", "--out", "p"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("p/paths.csv")).unwrap();
    assert!(csv.starts_with("path,component,grid_index,value\n"));
    assert_eq!(csv.lines().count(), 1 + 10 * 101);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("p/paths.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 3);

    let o = currents(&["paths"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_worker_count_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_currents"))
        .args(["verify", "StirlingCn"])
        .current_dir(tmp.path())
        .env("CURRENTS_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("CURRENTS_WORKERS"));
}
