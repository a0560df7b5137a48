use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn softland(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softland"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_time_reference_case() {
    let dir = tempfile::tempdir().unwrap();
    let out = softland(dir.path(), &["solve-time", "--method", "backward-piim", "--out-dir", "run"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("run/solution.json"));
    let sol = &v["solution"];
    assert_eq!(sol["outcome"], "successful_landing");
    assert!((sol["t_f_s"].as_f64().unwrap() - 423.483).abs() < 0.5);
    assert!((sol["fuel_kg"].as_f64().unwrap() - 215.842).abs() < 0.2);
    let p0 = sol["reconstruction"]["p0"].as_f64().unwrap();
    assert!((p0 - 0.5693).abs() < 0.005);
    assert!(sol["reconstruction"]["p_m0"].is_number());
    let csv = std::fs::read_to_string(dir.path().join("run/trajectory.csv")).unwrap();
    assert!(csv.starts_with("t_s,r_km,h_km,v_mps,omega_radps,m_kg,u,psi_deg,S,H\n"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = softland(dir.path(), &["solve-time", "--method", "forward-icvn", "--seed", "7", "--out-dir", out]);
        assert_eq!(o.status.code(), Some(0));
        let o = softland(dir.path(), &["batch", "--n", "20", "--seed", "7", "--out-dir", out]);
        assert_eq!(o.status.code(), Some(0));
    }
    for file in ["solution.json", "trajectory.csv", "stats.json", "cases.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn usage_errors_exit_before_solving() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["batch", "--n", "0"],
        &["solve-time", "--r0-km", "1700"],
        &["solve-time", "--m0-kg", "-1"],
        &["solve-time", "--method", "shooting-star"],
        &["solve-fuel", "--method", "backward-piim"],
        &["solve-fuel", "--kappa-schedule", "0.5,0.25"],
        &["solve-fuel", "--delta-schedule", "0.01,0.1"],
        &[],
    ];
    for args in cases {
        let out = softland(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("taken"), "").unwrap();
    let out = softland(dir.path(), &["solve-time", "--out-dir", "taken/sub"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn solver_failure_exits_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    // a single random guess aimed straight at the sharpest smoothing does not converge
    let out = softland(
        dir.path(),
        &["solve-fuel", "--method", "direct-icvn", "--attempts", "1", "--seed", "3", "--delta-schedule", "1e-9"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
    let v = json(&dir.path().join("out/solution.json"));
    assert!(v["error"].is_string());
}

#[test]
fn batch_writes_stats_and_cases() {
    let dir = tempfile::tempdir().unwrap();
    let out = softland(
        dir.path(),
        &["batch", "--n", "60", "--method", "forward-icvn", "--tf-seed", "uniform", "--seed", "2024"],
    );
    assert_eq!(out.status.code(), Some(0));
    let stats = json(&dir.path().join("out/stats.json"));
    let s = &stats["stats"];
    assert_eq!(s["n_total"], 60);
    let parts: u64 = ["n_success", "n_negative_tf", "n_subsurface", "n_not_converged"]
        .iter()
        .map(|k| s[k].as_u64().unwrap())
        .sum();
    assert_eq!(parts, 60);
    assert!(s["n_negative_tf"].as_u64().unwrap() > 0);
    let cases = std::fs::read_to_string(dir.path().join("out/cases.csv")).unwrap();
    assert_eq!(cases.lines().count(), 61);
    assert!(json(&dir.path().join("out/timing.json"))["total_seconds"].is_number());
}

#[test]
fn homotopy_backward_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = softland(dir.path(), &["solve-fuel", "--method", "homotopy-backward", "--remedy", "--stage-csvs"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("out/trace.json"));
    let trace = &v["trace"];
    let fin = &trace["final_solution"];
    assert!((fin["fuel_kg"].as_f64().unwrap() - 142.905).abs() < 0.2);
    assert!((fin["t_f_s"].as_f64().unwrap() - 671.638).abs() < 2.0);
    assert_eq!(fin["switch_count"], 1);
    let stages = trace["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 13);
    assert!(dir.path().join("out/stages/stage_12.csv").exists());
}

#[test]
fn homotopy_forward_and_direct_fuel() {
    let dir = tempfile::tempdir().unwrap();
    let out = softland(dir.path(), &["solve-fuel", "--method", "homotopy-forward", "--remedy", "--out-dir", "fwd"]);
    assert_eq!(out.status.code(), Some(0));
    let fwd = json(&dir.path().join("fwd/trace.json"));
    assert_eq!(fwd["trace"]["direction"], "forward");
    assert!(fwd["trace"]["final_solution"]["fuel_kg"].as_f64().unwrap() < 143.0);

    let out = softland(dir.path(), &["solve-fuel", "--method", "direct-icvn", "--remedy", "--seed", "2", "--out-dir", "direct"]);
    assert_eq!(out.status.code(), Some(0));
    let direct = json(&dir.path().join("direct/solution.json"));
    assert!((direct["solution"]["fuel_kg"].as_f64().unwrap() - 142.900).abs() < 0.01);
    assert_eq!(direct["stages"].as_array().unwrap().len(), 9);
}

#[test]
fn config_file_mirrors_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"command": "solve-time", "method": "forward-sicvn", "seed": 3, "out-dir": "cfg"}"#;
    std::fs::write(dir.path().join("run.json"), config).unwrap();
    let out = softland(dir.path(), &["--config", "run.json", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("cfg/solution.json"));
    assert_eq!(v["config"]["method"], "forward-sicvn");
    assert_eq!(v["config"]["seed"], 4);
    assert_eq!(v["solution"]["kind"], "fwd-sicvn-time");

    std::fs::write(dir.path().join("bad.json"), r#"{"r0_km": 1800}"#).unwrap();
    let out = softland(dir.path(), &["solve-time", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
}
