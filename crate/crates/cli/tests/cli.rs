//! End-to-end runs of the `coag` binary: exit codes and written artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn coag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coag"))
        .args(args)
        .output()
        .expect("spawn coag")
}

fn run(cmd: &str, config: &Path, out: &Path) -> Output {
    coag(&[
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

const SMALL_CONSTANT: &str = r#"
[kernel]
family = "constant"
kappa0 = 1.0

[grid]
x_min = 1e-3
x_max = 64.0
cells = 80

[solver]
n = 64.0
t_final = 1.0
output_every = 0.1

[initial]
preset = "exp"
"#;

#[test]
fn reference_run_matches_analytic_mass_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("solve", &shipped("reference.toml"), dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("moments.csv")).unwrap();
    let t = column(&csv, "time");
    let m0 = column(&csv, "M0");
    assert!((t[t.len() - 1] - 2.0).abs() < 1e-12);
    for (ti, mi) in t.iter().zip(&m0) {
        let exact = 2.0 / (2.0 + ti);
        assert!((mi - exact).abs() <= 0.01 * exact, "t={ti} M0={mi} exact={exact}");
    }
    let mm1 = column(&csv, "Mm1");
    assert!(mm1.windows(2).all(|w| w[1] < w[0]));
    for f in ["trajectory.csv", "diagnostics.csv", "checks.csv", "summary.txt"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    assert!(stdout(&o).contains("status = ok"));
}

#[test]
fn solve_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CONSTANT);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&run("solve", &cfg, &a)), 0);
    assert_eq!(code(&run("solve", &cfg, &b)), 0);
    for f in ["trajectory.csv", "moments.csv", "diagnostics.csv", "checks.csv"] {
        let x = fs::read(a.join(f)).unwrap();
        let y = fs::read(b.join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
}

#[test]
fn stiff_run_below_dt_min_fails_with_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_CONSTANT
        .replace("kappa0 = 1.0", "kappa0 = 1e12")
        .replace("output_every = 0.1", "output_every = 0.1\ndt_min = 1e-10");
    let cfg = write_config(dir.path(), &text);
    let o = run("solve", &cfg, dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("error"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("solve", &dir.path().join("nope.toml"), dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nope.toml"));
}

#[test]
fn unknown_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_CONSTANT.replace("cells = 80", "cells = 80\ncelsl = 3");
    let cfg = write_config(dir.path(), &text);
    let o = run("solve", &cfg, dir.path());
    assert_eq!(code(&o), 1);
    let line = text.lines().position(|l| l.starts_with("celsl")).unwrap() + 1;
    assert!(stderr(&o).contains(&format!(":{line}:")), "{}", stderr(&o));
}

#[test]
fn sigma_out_of_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{SMALL_CONSTANT}\n[kernel.certificate]\nkappa = 1.0\nlambda = 0.0\nsigma = 0.9\n"
    );
    let cfg = write_config(dir.path(), &text);
    let o = run("solve", &cfg, dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("sigma"), "{}", stderr(&o));
}

#[test]
fn usage_error_exits_one() {
    let o = coag(&["solve"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn verify_kernel_accepts_valid_certificate() {
    let o = coag(&["verify-kernel", "--config", shipped("verify_smoluchowski.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("status = pass"));
}

#[test]
fn verify_kernel_reports_witness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[kernel]\nfamily = \"smoluchowski\"\n\n[kernel.certificate]\nkappa = 1.0\nlambda = 0.0\nsigma = 0.0\nx_min = 1.0\nx_max = 1.0\nsamples = 2\n",
    );
    let o = coag(&["verify-kernel", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("witness"), "{out}");
    assert!(out.contains("witness = x=1 y=1 ratio=4"), "{out}");
}

#[test]
fn verify_kernel_rejects_bad_exponents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[kernel]\nfamily = \"smoluchowski\"\n\n[kernel.certificate]\nkappa = 3.0\nlambda = 1.5\nsigma = 0.3\n",
    );
    let o = coag(&["verify-kernel", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn converge_constant_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[converge]\nn_list = [8.0, 16.0, 32.0]\ntimes = [0.5, 1.0]\n",
        SMALL_CONSTANT.replace("[initial]", "[diagnostics]\nchecks = []\n\n[initial]")
    );
    let cfg = write_config(dir.path(), &text);
    let o = run("converge", &cfg, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(csv.starts_with("n,phi,t,pairing,weighted_pairing"));
    assert!(dir.path().join("convergence_differences.csv").exists());
}

#[test]
fn converge_needs_two_levels() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL_CONSTANT}\n[converge]\nn_list = [8.0]\ntimes = [1.0]\n");
    let cfg = write_config(dir.path(), &text);
    let o = run("converge", &cfg, dir.path());
    assert_eq!(code(&o), 1);
}

fn oracle_config(runs: usize, times: &str) -> String {
    format!(
        "{}\n[oracle]\nparticles = 2000\nruns = {runs}\nseed = 7\noutput_times = {times}\n",
        SMALL_CONSTANT.replace("[initial]", "[diagnostics]\nchecks = []\n\n[initial]")
    )
}

#[test]
fn oracle_needs_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &oracle_config(1, "[0.5, 1.0]"));
    assert_eq!(code(&run("oracle", &cfg, dir.path())), 1);
}

#[test]
fn oracle_times_must_match_solver_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &oracle_config(4, "[0.55]"));
    assert_eq!(code(&run("oracle", &cfg, dir.path())), 1);
}

#[test]
fn oracle_constant_kernel_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &oracle_config(8, "[0.5, 1.0]"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = run("oracle", &cfg, &a);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert_eq!(code(&run("oracle", &cfg, &b)), 0);
    for f in ["ensemble_mean.csv", "ensemble_se.csv", "oracle_diff.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
