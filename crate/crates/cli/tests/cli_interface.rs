//! Command-line surface: config handling, exit codes, report and series
//! formats, determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_equidiv"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

const HOPF_SMALL: &str = r#"{
  "system": "hopf_cycle",
  "n_steps": 40000,
  "discard": 8000,
  "warmup_steps": 1500,
  "forget_window": 10.0,
  "W": 3.0,
  "seeds": [5, 6]
}"#;

#[test]
fn response_report_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cfg.json", HOPF_SMALL);
    for out in ["a", "b"] {
        let o = run(&[
            "response",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().join(out).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(tmp.path().join("a/report.json")).unwrap();
    let b = fs::read(tmp.path().join("b/report.json")).unwrap();
    assert_eq!(a, b, "reports differ between identical runs");

    let report: serde_json::Value =
        serde_json::from_slice(&a).expect("report parses as JSON");
    assert_eq!(report["format_version"], 1);
    assert_eq!(report["mode"], "response");
    assert_eq!(report["config"]["system"], "hopf_cycle");
    let total = report["result"]["total"].as_f64().unwrap();
    assert!((total - 1.0).abs() < 0.02, "hopf total {total}");
}

#[test]
fn csv_series_has_documented_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cfg.json", HOPF_SMALL);
    let o = run(&[
        "response",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--csv",
    ]);
    assert!(o.status.success());
    let csv = fs::read_to_string(tmp.path().join("series.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x0,x1,divv_x,psi,eta,f_eta,nu_x,phi,d");
    let first = lines.next().unwrap();
    assert_eq!(first.split(',').count(), 10);
    for field in first.split(',') {
        field.parse::<f64>().expect("numeric field");
    }
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, text, needle) in [
        ("steps.json", r#"{"system":"lorenz63","n_steps":0}"#, "n_steps"),
        ("w.json", r#"{"system":"lorenz63","W":-1.0}"#, "W"),
        ("unk.json", r#"{"system":"lorenz63","frobnicate":1}"#, "frobnicate"),
        ("sys.json", r#"{"system":"roessler"}"#, "roessler"),
        ("param.json", r#"{"system":"hopf_cycle","params":{"mu":-2.0}}"#, "mu"),
    ] {
        let cfg = write(tmp.path(), name, text);
        let o = run(&[
            "orbit",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(2), "{name}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{name}: stderr {err}");
    }
}

#[test]
fn wrong_unstable_dimension_exits_4_with_partial_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "cfg.json",
        r#"{"system":"lorenz63","u":0,"n_steps":40000,"dt":0.01,"discard":5000,
            "warmup_steps":2000,"forget_window":10.0,"W":2.0}"#,
    );
    let o = run(&[
        "response",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["error"]["kind"], "unstable-dim-mismatch");
    assert_eq!(report["error"]["exit_code"], 4);
}

#[test]
fn validate_mode_passes_on_hopf_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cfg.json", HOPF_SMALL);
    let o = run(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["result"]["all_passed"], true);
}

#[test]
fn oracle_reports_are_thread_count_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "cfg.json",
        r#"{"system":"hopf_cycle","n_steps":20000,"discard":5000,"gamma_step":0.01,
            "seeds":[1,2,3]}"#,
    );
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let dir = tmp.path().join(format!("t{threads}"));
        let o = bin()
            .args(["oracle", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()])
            .env("EQUIDIV_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
        reports.push(fs::read(dir.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1], "oracle report depends on thread count");
}

#[test]
fn seed_flag_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cfg.json", HOPF_SMALL);
    let mut outs = Vec::new();
    for (dir, seed) in [("s1", "5"), ("s2", "99")] {
        let o = run(&[
            "response",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().join(dir).to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(o.status.success());
        outs.push(fs::read_to_string(tmp.path().join(dir).join("report.json")).unwrap());
    }
    assert_ne!(outs[0], outs[1], "seed override had no effect");
}

#[test]
fn orbit_mode_writes_states_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "cfg.json",
        r#"{"system":"rotation_probe","n_steps":100,"dt":0.01,"discard":0}"#,
    );
    let o = run(&[
        "orbit",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--csv",
    ]);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("series.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,x0,x1,x2");
    assert_eq!(csv.lines().count(), 102); // header + n_steps + 1 states
}
