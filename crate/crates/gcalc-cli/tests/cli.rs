//! End-to-end tests for the `gcalc` binary: every subcommand is driven
//! through a real process with JSON configs, and stdout/CSV output is
//! checked against closed-form values, exit-code contracts, and the
//! worker-count determinism guarantee.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gcalc"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).expect("write config");
    path
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gcalc-cli-test-{tag}-{}", std::process::id()));
    fs::create_dir_all(&dir).expect("create temp dir");
    dir
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Extract `key=<float>` from a summary line.
fn parse_field(stdout: &str, key: &str) -> f64 {
    let needle = format!("{key}=");
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&needle))
        .unwrap_or_else(|| panic!("no `{key}=` line in output:\n{stdout}"))
        .trim()
        .parse()
        .expect("parse float field")
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().expect("run");
    assert!(out.status.success());
    assert!(stdout_of(&out).contains("gheat"));
}

#[test]
fn gheat_linear_cosine_matches_closed_form() {
    let dir = tmp_dir("gheat");
    let cfg = write_config(
        &dir,
        "run.json",
        r#"{
            "generator": {"kind": "linear"},
            "terminal": {"family": "cos"},
            "horizon": 1.0,
            "grid": {"x_min": -6.0, "x_max": 6.0, "n_nodes": 481}
        }"#,
    );
    let csv = dir.join("surface.csv");
    let out = bin()
        .args(["gheat", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&csv)
        .output()
        .expect("run");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let u0 = parse_field(&stdout_of(&out), "u0");
    let expected = (-0.5f64).exp();
    assert!(
        (u0 - expected).abs() <= 1e-3,
        "u0 = {u0}, expected ~{expected}"
    );
    let body = fs::read_to_string(&csv).expect("read surface csv");
    assert!(body.starts_with("t,x,u,dxu,dxxu\n"));
    assert!(body.lines().count() > 100);
}

#[test]
fn gheat_constant_terminal_is_exact() {
    let dir = tmp_dir("gheat-const");
    let cfg = write_config(
        &dir,
        "run.json",
        r#"{
            "generator": {"kind": "standard", "sigma_low_sq": 1.0, "sigma_high_sq": 2.0},
            "terminal": {"family": "constant", "value": 0.75},
            "horizon": 1.0
        }"#,
    );
    let out = bin().args(["gheat", "--config"]).arg(&cfg).output().expect("run");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let u0 = parse_field(&stdout_of(&out), "u0");
    assert_eq!(u0, 0.75, "constants propagate exactly");
}

#[test]
fn gheat_rejects_inadmissible_step_count_with_exit_3() {
    let dir = tmp_dir("cfl");
    let cfg = write_config(
        &dir,
        "run.json",
        r#"{
            "generator": {"kind": "linear"},
            "terminal": {"family": "cos"},
            "horizon": 1.0,
            "grid": {"x_min": -6.0, "x_max": 6.0, "n_nodes": 481},
            "n_steps": 10
        }"#,
    );
    let out = bin().args(["gheat", "--config"]).arg(&cfg).output().expect("run");
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr_of(&out).contains("admissible"),
        "stderr should name the admissible step bound: {}",
        stderr_of(&out)
    );
}

#[test]
fn malformed_and_invalid_configs_exit_2() {
    let dir = tmp_dir("badcfg");
    let cases = [
        ("broken.json", "{ this is not json"),
        (
            "unknown_field.json",
            r#"{"generator": {"kind": "linear"}, "terminal": {"family": "cos"}, "n_ghosts": 3}"#,
        ),
        ("missing_section.json", r#"{"horizon": 1.0}"#),
    ];
    for (name, body) in cases {
        let cfg = write_config(&dir, name, body);
        let out = bin().args(["gheat", "--config"]).arg(&cfg).output().expect("run");
        assert_eq!(out.status.code(), Some(2), "case {name}: {}", stderr_of(&out));
        assert!(stderr_of(&out).starts_with("error:"), "case {name}");
    }
    let out = bin()
        .args(["gheat", "--config", "/nonexistent/nowhere.json"])
        .output()
        .expect("run");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn expect_square_endpoint_reports_band_ceiling() {
    let dir = tmp_dir("expect");
    let cfg = write_config(
        &dir,
        "run.json",
        r#"{
            "generator": {"kind": "standard", "sigma_low_sq": 1.0, "sigma_high_sq": 2.0},
            "functional": {
                "times": [1.0],
                "payoff": {"family": "monomials", "terms": [{"coeff": 1.0, "powers": [2]}]}
            },
            "numerics": {"dx": 0.1}
        }"#,
    );
    let out = bin().args(["expect", "--config"]).arg(&cfg).output().expect("run");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let v = parse_field(&stdout_of(&out), "value");
    assert!((v - 2.0).abs() <= 1e-2, "value = {v}");
}

#[test]
fn expect_bounds_mode_brackets_the_band() {
    let dir = tmp_dir("expect-bounds");
    let cfg = write_config(
        &dir,
        "run.json",
        r#"{
            "generator": {"kind": "standard", "sigma_low_sq": 1.0, "sigma_high_sq": 2.0},
            "functional": {
                "times": [1.0],
                "payoff": {"family": "monomials", "terms": [{"coeff": 1.0, "powers": [2]}]}
            },
            "bounds": true,
            "numerics": {"dx": 0.1}
        }"#,
    );
    let out = bin().args(["expect", "--config"]).arg(&cfg).output().expect("run");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    let lower = parse_field(&text, "lower");
    let upper = parse_field(&text, "upper");
    assert!((lower - 1.0).abs() <= 1e-2, "lower = {lower}");
    assert!((upper - 2.0).abs() <= 1e-2, "upper = {upper}");
}

#[test]
fn bsde_dominant_control_keeps_compensator_nonpositive_and_nonincreasing() {
    let dir = tmp_dir("bsde");
    let cfg = write_config(
        &dir,
        "run.json",
        r#"{
            "generator": {"kind": "standard", "sigma_low_sq": 1.0, "sigma_high_sq": 2.0},
            "terminal": {"family": "polynomial", "coeffs": [0.0, 0.0, 1.0]},
            "scenario": {"kind": "constant", "sigma_sq": 1.25},
            "horizon": 1.0,
            "numerics": {"dx": 0.05},
            "mc": {"n_paths": 4, "dt": 0.015625}
        }"#,
    );
    let csv = dir.join("bsde.csv");
    let out = bin()
        .args(["bsde", "--seed", "31", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&csv)
        .output()
        .expect("run");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let y0 = parse_field(&stdout_of(&out), "y0");
    assert!((y0 - 2.0).abs() <= 1e-2, "y0 = {y0}");

    let body = fs::read_to_string(&csv).expect("read csv");
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("path_id,t,y,z,eta,k_strong,k_weak"));
    let mut last: Option<(usize, f64)> = None;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 7);
        let id: usize = fields[0].parse().unwrap();
        let k: f64 = fields[5].parse().unwrap();
        assert!(k <= 1e-10, "k_strong must stay nonpositive, got {k}");
        if let Some((prev_id, prev_k)) = last {
            if prev_id == id {
                assert!(
                    k <= prev_k + 1e-10,
                    "k_strong must be nonincreasing per path: {prev_k} -> {k}"
                );
            }
        }
        last = Some((id, k));
    }
}

#[test]
fn stochastic_commands_require_a_seed() {
    let dir = tmp_dir("noseed");
    let cfg = write_config(
        &dir,
        "run.json",
        r#"{
            "generator": {"kind": "standard", "sigma_low_sq": 1.0, "sigma_high_sq": 2.0},
            "terminal": {"family": "polynomial", "coeffs": [0.0, 0.0, 1.0]},
            "scenario": {"kind": "constant", "sigma_sq": 2.0},
            "mc": {"n_paths": 2, "dt": 0.25}
        }"#,
    );
    for sub in ["bsde", "simulate"] {
        let out = bin().args([sub, "--config"]).arg(&cfg).output().expect("run");
        assert_eq!(out.status.code(), Some(2), "{sub} without seed");
        assert!(stderr_of(&out).contains("seed"), "{sub}: {}", stderr_of(&out));
    }
}

#[test]
fn simulate_constant_ceiling_gives_exact_quadratic_variation_column() {
    let dir = tmp_dir("simulate");
    let cfg = write_config(
        &dir,
        "run.json",
        r#"{
            "generator": {"kind": "standard", "sigma_low_sq": 1.0, "sigma_high_sq": 2.0},
            "scenario": {"kind": "constant", "sigma_sq": 2.0},
            "horizon": 1.0,
            "mc": {"n_paths": 3, "dt": 0.00390625}
        }"#,
    );
    let csv = dir.join("paths.csv");
    let out = bin()
        .args(["simulate", "--seed", "9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&csv)
        .output()
        .expect("run");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("paths=3"), "{text}");
    assert!(text.contains("steps=256"), "{text}");

    let body = fs::read_to_string(&csv).expect("read csv");
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("path_id,t,b,qv"));
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 4);
        let t: f64 = fields[1].parse().unwrap();
        let qv: f64 = fields[3].parse().unwrap();
        assert_eq!(qv, 2.0 * t, "constant ceiling scenario accrues qv exactly");
    }
}

#[test]
fn verify_default_run_passes_with_at_least_twenty_checks() {
    let out = bin().args(["verify", "--seed", "42"]).output().expect("run");
    assert!(
        out.status.success(),
        "verify failed; stderr: {}\nstdout tail: {}",
        stderr_of(&out),
        stdout_of(&out).lines().rev().take(12).collect::<Vec<_>>().join("\n")
    );
    let text = stdout_of(&out);
    let n_pass = text.lines().filter(|l| l.starts_with("[pass]")).count();
    let n_fail = text.lines().filter(|l| l.starts_with("[fail]")).count();
    assert!(n_pass >= 20, "only {n_pass} passing check lines");
    assert_eq!(n_fail, 0);
    assert!(text.lines().last().unwrap_or("").starts_with("checks="));
}

#[test]
fn verify_csv_is_byte_identical_across_worker_counts() {
    let dir = tmp_dir("workers");
    let csv1 = dir.join("w1.csv");
    let csv3 = dir.join("w3.csv");
    let out1 = bin()
        .args(["verify", "--seed", "7", "--workers", "1", "--out"])
        .arg(&csv1)
        .output()
        .expect("run");
    assert!(out1.status.success(), "stderr: {}", stderr_of(&out1));
    let out3 = bin()
        .args(["verify", "--seed", "7", "--workers", "3", "--out"])
        .arg(&csv3)
        .output()
        .expect("run");
    assert!(out3.status.success(), "stderr: {}", stderr_of(&out3));
    let b1 = fs::read(&csv1).expect("read w1");
    let b3 = fs::read(&csv3).expect("read w3");
    assert!(!b1.is_empty());
    assert_eq!(b1, b3, "CSV bytes must not depend on the worker count");
    assert_eq!(stdout_of(&out1), stdout_of(&out3), "stdout must match too");
}

#[test]
fn env_variables_supply_flag_defaults() {
    let dir = tmp_dir("env");
    let cfg = write_config(
        &dir,
        "run.json",
        r#"{
            "generator": {"kind": "standard", "sigma_low_sq": 1.0, "sigma_high_sq": 2.0},
            "scenario": {"kind": "constant", "sigma_sq": 2.0},
            "mc": {"n_paths": 2, "dt": 0.25}
        }"#,
    );
    let out = bin()
        .arg("simulate")
        .env("GCALC_CONFIG", &cfg)
        .env("GCALC_SEED", "13")
        .output()
        .expect("run");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(stdout_of(&out).contains("paths=2"));
}
