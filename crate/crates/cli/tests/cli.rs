use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SX: &str = "[[[0,0],[1,0]],[[1,0],[0,0]]]";
const SZ: &str = "[[[1,0],[0,0]],[[0,0],[-1,0]]]";

fn oqs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oqs"))
        .args(args)
        .env("OQS_THREADS", "2")
        .output()
        .expect("spawn oqs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_json(cmd: &str, model: &Path) -> Value {
    let out = oqs(&[cmd, "--model", model.to_str().unwrap()]);
    assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn thermal_qubit(gamma0: f64, temperature: f64) -> String {
    format!(
        r#"{{
  "system": {{
    "hamiltonian": [[[0.5,0],[0.1,0]],[[0.1,0],[-0.5,0]]],
    "couplings": [{SX}]
  }},
  "bath": {{"type": "thermal", "gamma0": [{gamma0}], "cutoff": 5.0, "temperature": {temperature}}},
  "run": {{"t_max": 4, "points": 5, "x1": {SX}, "x2": {SX}, "t2": 1.0}}
}}"#
    )
}

fn csv_rows(bytes: &[u8]) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let mut lines = text.lines();
    let head = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    (head, rows)
}

#[test]
fn simulate_dephasing_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let (w0, c, lambda) = (1.3, 0.02, 1.5);
    let model = format!(
        r#"{{
  "system": {{"hamiltonian": [[[{h},0],[0,0]],[[0,0],[{mh},0]]], "couplings": [{SZ}]}},
  "bath": {{"type": "ou", "strength": [[[{c},0]]], "lambda": {lambda}}},
  "run": {{"t_max": 20, "points": 41, "initial_state": [[[0.5,0],[0.5,0]],[[0.5,0],[0.5,0]]]}}
}}"#,
        h = w0 / 2.0,
        mh = -w0 / 2.0
    );
    let p = write(dir.path(), "deph.json", &model);
    let out = oqs(&["simulate", "--model", p.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (head, rows) = csv_rows(&out.stdout);
    assert_eq!(head[0], "t");
    assert_eq!(head.last().unwrap(), "min_eigenvalue");
    let re = head.iter().position(|h| h == "re_0_1").unwrap();
    assert_eq!(rows.len(), 41);
    for r in &rows {
        let t = r[0];
        let phi = c * (t / lambda - (1.0 - (-lambda * t).exp()) / (lambda * lambda));
        let mag = 0.5 * (-4.0 * phi).exp();
        let (er, ei) = (mag * (w0 * t).cos(), -mag * (w0 * t).sin());
        let err = ((r[re] - er).powi(2) + (r[re + 1] - ei).powi(2)).sqrt() / mag;
        assert!(err < 1e-6, "t = {t}: relative error {err:e}");
        assert!((r[head.len() - 2] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_coupling_preserves_trace_and_purity() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "free.json", &thermal_qubit(0.0, 0.5));
    let out = oqs(&["simulate", "--model", p.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (head, rows) = csv_rows(&out.stdout);
    for r in rows {
        assert!((r[head.len() - 2] - 1.0).abs() < 1e-12);
        assert!(r[head.len() - 1].abs() < 1e-9);
    }
}

#[test]
fn non_hermitian_hamiltonian_is_rejected_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let text = thermal_qubit(0.05, 0.5).replace("[0.1,0],[-0.5,0]", "[0.3,0],[-0.5,0]");
    let p = write(dir.path(), "bad.json", &text);
    let out = oqs(&["pauli", "--model", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:3:"), "{err}");
    assert!(err.contains("max|X - X^dag|"), "{err}");
}

#[test]
fn unknown_field_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = thermal_qubit(0.05, 0.5).replace("\"t2\"", "\"t_two\"");
    let p = write(dir.path(), "typo.json", &text);
    let out = oqs(&["qrt", "--model", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pauli_thermal_qubit_relaxes_to_gibbs() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "q.json", &thermal_qubit(0.05, 0.5));
    let v = run_json("pauli", &p);
    let checks = &v["checks"];
    for k in ["gibbs", "column_sums", "gershgorin", "detailed_balance"] {
        assert_eq!(checks[k]["pass"], Value::Bool(true), "{k}: {}", checks[k]);
    }
    assert_eq!(v["multiplicity"], 1);
}

#[test]
fn pauli_zero_temperature_is_upper_triangular() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "q0.json", &thermal_qubit(0.05, 0.0));
    let v = run_json("pauli", &p);
    let c = &v["checks"]["zero_temperature_upper_triangular"];
    assert_eq!(c["pass"], Value::Bool(true), "{c}");
    assert_eq!(c["max_upward_rate"], 0.0);
}

#[test]
fn cp_audit_and_coefficient_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "q.json", &thermal_qubit(0.05, 0.5));
    let v = run_json("cp-audit", &p);
    assert_eq!(v["magnus_pass"], Value::Bool(true));
    assert_eq!(v["weak_test"]["pass"], Value::Bool(true));
    let v = run_json("coefficients", &p);
    assert_eq!(v["checks"]["kms"]["pass"], Value::Bool(true));
    assert_eq!(v["checks"]["fdi"]["pass"], Value::Bool(true));
    let v = run_json("spectrum", &p);
    for k in ["orthogonality", "adjoint_symmetry", "gershgorin"] {
        assert_eq!(v["checks"][k]["pass"], Value::Bool(true), "{k}");
    }
}

#[test]
fn nonlocal_poles_match_time_local_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "q.json", &thermal_qubit(1e-4, 0.5));
    let v = run_json("nonlocal", &p);
    assert_eq!(v["pole_match_pass"], Value::Bool(true), "{}", v["pole_match_max_residual"]);
    assert!(v["poles"].as_array().unwrap().len() == 2);
}

#[test]
fn qrt_reports_correction_and_starts_at_coincidence() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "q.json", &thermal_qubit(0.05, 0.5));
    let v = run_json("qrt", &p);
    let s = v["series"].as_array().unwrap();
    assert_eq!(s[0]["t1"], 1.0);
    assert_eq!(s[0]["correction"][0], 0.0);
    let q = &s[0]["qrt"];
    assert!((q[0].as_f64().unwrap() - 1.0).abs() < 1e-10 && q[1].as_f64().unwrap().abs() < 1e-10);
    assert!(s.iter().skip(1).any(|r| r["correction"][0].as_f64().unwrap() != 0.0));
}

#[test]
fn compose_is_refused() {
    let out = oqs(&["compose", "--model", "a.json", "--model", "b.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cross terms"));
}

#[test]
fn output_is_deterministic_and_written_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "q.json", &thermal_qubit(0.05, 0.5));
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = Command::new(env!("CARGO_BIN_EXE_oqs"))
            .args(["cp-audit", "--model", p.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .env("OQS_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
        assert!(o.stdout.is_empty());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 3, "{names:?}");
}

#[test]
fn oracle_compare_records_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "o.json", r#"{"run": {"seeds": 1, "horizon": 4, "points": 10}}"#);
    let out = oqs(&["oracle-compare", "--model", p.to_str().unwrap(), "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seeds"], serde_json::json!([7]));
    assert!(v["cases"][0]["ratio"].as_f64().unwrap() > 1.0);
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_oqs"))
        .args(["pauli", "--model", "missing.json"])
        .env("OQS_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
