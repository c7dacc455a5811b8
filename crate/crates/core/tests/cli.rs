use std::path::Path;
use std::process::{Command, Output};

fn secrate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_secrate")).args(args).output().unwrap()
}

const FADING: &str = r#""fading": {"case": "equal_means",
    "main": {"family": "chi_square", "dof": 4, "scale": 0.25},
    "eve": {"family": "chi_square", "dof": 4, "scale": 0.25}}"#;

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn bounds_sweep_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &format!(r#"{{"scenario": "full_csi", {FADING}, "snr_db_grid": [0, 10, 20, 30, 40], "mc": {{"samples": 20000, "seed": 1}}}}"#),
    );
    let out = dir.path().join("r.csv");
    let o = secrate(&["bounds", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "kind,snr_db,p_bar,value,stderr,policy_family,policy_c");
    let kinds: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(kinds.iter().filter(|k| **k == "upper_full").count(), 5);
    assert_eq!(kinds.iter().filter(|k| **k == "lower_full").count(), 5);
    assert_eq!(kinds.last(), Some(&"high_snr_limit"));
    assert_eq!(kinds.len(), 11);
}

#[test]
fn empty_grid_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &format!(r#"{{"scenario": "full_csi", {FADING}, "snr_db_grid": []}}"#));
    let out = dir.path().join("r.csv");
    let o = secrate(&["bounds", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn malformed_config_reports_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &format!(r#"{{"scenario": "full_csi", {FADING}, "snr_db_grid": ["ten"]}}"#));
    let o = secrate(&["bounds", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("snr_db_grid"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn divergent_policy_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"scenario": "full_csi",
            "fading": {"main": {"family": "exponential", "mean": 1.0}, "eve": {"family": "exponential", "mean": 1.0}},
            "snr_db_grid": [10], "policies": [{"family": "inversion_min"}], "mc": {"samples": 1000, "seed": 0}}"#,
    );
    let o = secrate(&["bounds", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("inversion_min"));
}

#[test]
fn deterministic_smoke_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"scenario": "full_csi",
            "fading": {"main": {"family": "deterministic", "value": 4.0}, "eve": {"family": "deterministic", "value": 1.0}},
            "snr_db_grid": [0], "mc": {"samples": 100, "seed": 0},
            "sim": {"s_count": 5, "b_count": 10, "n_prime": 1000, "snr_db": 0, "policy": {"family": "constant"}, "planning_samples": 100}}"#,
    );
    let out = dir.path().join("report.json");
    let trace = dir.path().join("trace.csv");
    let o = secrate(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--trace", trace.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["enc_error_rate"], 0.0);
    assert_eq!(report["decrypt_failures"], 0);
    let trace = std::fs::read_to_string(&trace).unwrap();
    assert!(trace.starts_with("s,b,h_m,h_e,power,r_k_bits,r_1_bits,enc_error,outage\n"));
    assert_eq!(trace.lines().count(), 51);
}

#[test]
fn b_sweep_writes_one_report_per_b() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &format!(
            r#"{{"scenario": "full_csi", {FADING}, "snr_db_grid": [20], "mc": {{"samples": 100000, "seed": 4}},
            "sim": {{"s_count": 4, "b_sweep": [10, 100, 1000], "n_prime": 1000, "planning_samples": 100000}}}}"#
        ),
    );
    let out = dir.path().join("reports.json");
    let o = secrate(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reports: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let bs: Vec<u64> = reports.iter().map(|r| r["b_count"].as_u64().unwrap()).collect();
    assert_eq!(bs, [10, 100, 1000]);
    assert!(reports.iter().all(|r| r["decrypt_failures"] == 0));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &format!(r#"{{"scenario": "main_csi", {FADING}, "snr_db_grid": [10, 30], "mc": {{"samples": 30000, "seed": 2}}}}"#),
    );
    let run = |name: &str| {
        let p = dir.path().join(name);
        assert!(secrate(&["fixedpoint", "--config", &cfg, "--out", p.to_str().unwrap()]).status.success());
        std::fs::read(p).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn highsnr_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"scenario": "full_csi",
            "fading": {"main": {"family": "exponential", "mean": 1.0}, "eve": {"family": "exponential", "mean": 1.0}},
            "snr_db_grid": [0], "mc": {"samples": 200000, "seed": 0}}"#,
    );
    let o = secrate(&["highsnr", "--config", &cfg]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("high_snr_limit,inf,inf,"), "{row}");
    let value: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!((value - 1.0).abs() < 0.02);
}
