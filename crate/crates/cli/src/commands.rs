use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use coag_core::diagnostics::{
    check_lemma_i_tol, check_tail_bound_tol, check_time_lipschitz_tol, check_xm1_monotone_tol,
    constant_c, convergence_study, equicontinuity_with_recheck, BoundReport, ConvergenceSetup,
    EquicontinuityVerdict, Tolerance,
};
use coag_core::grid::project_density;
use coag_core::io::{
    bound_reports_csv, convergence_csv, convergence_differences_csv, diagnostics_csv,
    ensemble_rows, fmt_f64, moment_rows, moments_csv, states_csv,
};
use coag_core::kernels::{verify_bound, Certificate};
use coag_core::oracle::{ensemble_moments, mc_ensemble, EnsembleConfig};
use coag_core::solver::solve;
use coag_core::{DensityState, Trajectory};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Outcome of a command that ran to completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// A bound, certificate or agreement check failed.
    CheckFailed,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Write { path, source })
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

/// Summary block: one `key = value` per line, in insertion order.
#[derive(Default)]
struct Summary(String);

impl Summary {
    fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.0, "{key} = {value}");
    }
}

fn initial_state(cfg: &RunConfig, n: f64, truncate: bool) -> CliResult<DensityState> {
    let proj = project_density(&cfg.initial, Arc::clone(&cfg.grid))?;
    Ok(if truncate {
        proj.state.truncate_above(n).0
    } else {
        proj.state
    })
}

fn write_trajectory(out: &Path, traj: &Trajectory) -> CliResult<()> {
    write_file(out, "trajectory.csv", &states_csv(traj))?;
    write_file(out, "moments.csv", &moments_csv(&moment_rows(traj)))?;
    write_file(out, "diagnostics.csv", &diagnostics_csv(traj))
}

pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> CliResult<Status> {
    prepare_out(out)?;
    let u0 = initial_state(cfg, cfg.solver.n.value(), cfg.truncate_initial)?;
    let traj = match solve(&u0, &cfg.kernel, &cfg.solver) {
        Ok(t) => t,
        Err(failure) => {
            write_trajectory(out, &failure.partial)?;
            eprintln!(
                "solve failed; last good state at t={} (partial output written to {})",
                failure.last_good.t(),
                out.display()
            );
            return Err(failure.error.into());
        }
    };
    write_trajectory(out, &traj)?;

    let d = &cfg.diagnostics;
    let l = traj.initial().norm_y();
    let mut reports: Vec<BoundReport> = Vec::new();
    let mut notes: Vec<String> = Vec::new();
    if let Some(bound) = cfg.bound {
        let c = constant_c(bound.lambda)? * if d.kappa_scaling { bound.kappa } else { 1.0 };
        if d.checks.lemma {
            reports.push(check_lemma_i_tol(&traj, bound.sigma, l, Tolerance::absolute(d.lemma_tol * l))?);
        }
        if d.checks.xm1 {
            reports.push(check_xm1_monotone_tol(&traj, Tolerance::absolute(d.xm1_tol)));
        }
        if d.checks.tail {
            for &r in &d.tail_radii {
                reports.push(check_tail_bound_tol(
                    std::slice::from_ref(&traj),
                    r,
                    bound.sigma,
                    l,
                    Tolerance::absolute(d.tail_tol),
                )?);
            }
        }
        if d.checks.lipschitz {
            reports.push(check_time_lipschitz_tol(&traj, c, l, Tolerance::relative(d.lipschitz_rel_tol)));
        }
        if d.checks.equicontinuity {
            let tol = Tolerance::relative(d.equicontinuity_rel_tol);
            for phi in &d.test_functions {
                let verdict =
                    equicontinuity_with_recheck(&traj, &u0, &cfg.kernel, &cfg.solver, phi, c, l, tol)?;
                match verdict {
                    EquicontinuityVerdict::Pass(rep) => reports.push(rep),
                    EquicontinuityVerdict::DiscretizationArtifact { original, refined } => {
                        notes.push(format!(
                            "equicontinuity phi={} exceeded the bound (max ratio {:.6}) but passed with halved steps (max ratio {:.6})",
                            phi.name(),
                            original.max_ratio(),
                            refined.max_ratio()
                        ));
                        reports.push(refined);
                    }
                    EquicontinuityVerdict::Violation(rep) => reports.push(rep),
                }
            }
        }
    }
    write_file(out, "checks.csv", &bound_reports_csv(&reports))?;

    let passed = reports.iter().all(BoundReport::passed);
    let mut s = Summary::default();
    s.kv("command", "solve");
    s.kv("kernel", cfg.kernel.name());
    s.kv("initial", cfg.initial.name());
    s.kv("cutoff_n", fmt_f64(traj.meta.cutoff));
    s.kv("cells", traj.meta.cells);
    s.kv("x_min", fmt_f64(traj.meta.x_min));
    s.kv("x_max", fmt_f64(traj.meta.x_max));
    s.kv("integrator", traj.meta.integrator.name());
    s.kv("t_final", fmt_f64(cfg.solver.t_final));
    s.kv("accepted_steps", traj.meta.accepted_steps);
    s.kv("rejected_steps", traj.meta.rejected_steps);
    s.kv("picard_iterations", traj.meta.picard_iterations);
    s.kv("clipped_mass", fmt_f64(traj.meta.clipped_mass));
    s.kv("unreachable_pairs", traj.meta.unreachable_pairs);
    s.kv("mass_drift", fmt_f64(traj.meta.mass_drift));
    s.kv("norm_y_initial", fmt_f64(l));
    if let Some(b) = cfg.bound {
        s.kv("bound", format!("kappa={} lambda={} sigma={}", b.kappa, b.lambda, b.sigma));
    }
    for rep in &reports {
        s.kv(
            &format!("check.{}", rep.name.replace(' ', "_")),
            format!(
                "{} worst_margin={} max_ratio={}",
                if rep.passed() { "pass" } else { "FAIL" },
                fmt_f64(rep.worst_margin()),
                fmt_f64(rep.max_ratio())
            ),
        );
    }
    for n in &notes {
        s.kv("note", n);
    }
    s.kv("status", if passed { "ok" } else { "bound_violation" });
    write_file(out, "summary.txt", &s.0)?;
    print!("{}", s.0);
    Ok(if passed { Status::Ok } else { Status::CheckFailed })
}

pub fn cmd_converge(cfg: &RunConfig, out: &Path) -> CliResult<Status> {
    let conv = cfg
        .converge
        .as_ref()
        .ok_or_else(|| CliError::invalid("converge", "section [converge] is required"))?;
    prepare_out(out)?;
    let setup = ConvergenceSetup {
        grid: Arc::clone(&cfg.grid),
        n_list: conv.n_list.clone(),
        solver: cfg.solver.clone(),
        test_functions: conv.test_functions.clone(),
        times: conv.times.clone(),
        sigma: cfg.bound.map(|b| b.sigma).unwrap_or(0.0),
        truncate_initial: conv.truncate_initial,
    };
    let report = match convergence_study(&cfg.initial, &cfg.kernel, &setup) {
        Ok(r) => r,
        Err(failure) => {
            write_file(out, "convergence.csv", &convergence_csv(&failure.partial))?;
            eprintln!("run with n = {} failed; partial report written", failure.n);
            return Err(failure.error.into());
        }
    };
    write_file(out, "convergence.csv", &convergence_csv(&report))?;
    write_file(out, "convergence_differences.csv", &convergence_differences_csv(&report))?;

    let ok = report.all_strictly_decreasing();
    let mut s = Summary::default();
    s.kv("command", "converge");
    s.kv("kernel", cfg.kernel.name());
    s.kv("initial", cfg.initial.name());
    let ns: Vec<String> = report.n_list.iter().map(|n| n.to_string()).collect();
    s.kv("n_list", ns.join(" "));
    s.kv("sigma", fmt_f64(report.sigma));
    for seq in &report.sequences {
        let d: Vec<String> = seq.diffs.iter().map(|v| fmt_f64(*v)).collect();
        s.kv(
            &format!(
                "differences.{}{}.t{}",
                seq.phi,
                if seq.weighted { "_weighted" } else { "" },
                seq.t
            ),
            format!(
                "{} {}",
                if seq.strictly_decreasing() { "decreasing" } else { "FLAGGED" },
                d.join(" ")
            ),
        );
    }
    s.kv("status", if ok { "ok" } else { "non_decreasing_differences" });
    write_file(out, "summary.txt", &s.0)?;
    print!("{}", s.0);
    Ok(if ok { Status::Ok } else { Status::CheckFailed })
}

pub fn cmd_oracle(cfg: &RunConfig, out: &Path) -> CliResult<Status> {
    let o = cfg
        .oracle
        .as_ref()
        .ok_or_else(|| CliError::invalid("oracle", "section [oracle] is required"))?;
    prepare_out(out)?;
    let sigma = cfg.bound.map(|b| b.sigma).unwrap_or(0.0);
    let u0 = initial_state(cfg, cfg.solver.n.value(), cfg.truncate_initial)?;
    let det = solve(&u0, &cfg.kernel, &cfg.solver).map_err(|f| CliError::Core(f.error))?;

    let t_final = o.output_times.last().copied().unwrap_or(0.0);
    let ens = EnsembleConfig {
        particles: o.particles,
        runs: o.runs,
        master_seed: o.seed,
        t_final,
        output_times: o.output_times.clone(),
        sigma,
    };
    let runs = mc_ensemble(&cfg.initial, &cfg.kernel, &ens)?;
    let stats = ensemble_moments(&runs)?;
    write_file(out, "ensemble_mean.csv", &moments_csv(&ensemble_rows(&stats, false)))?;
    write_file(out, "ensemble_se.csv", &moments_csv(&ensemble_rows(&stats, true)))?;
    write_file(out, "moments.csv", &moments_csv(&moment_rows(&det)))?;

    let mut diff = String::from("time,det_M0,mc_M0,se_M0,z_M0,det_M1,mc_M1,se_M1,det_Mm1,mc_Mm1,se_Mm1\n");
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (k, &t) in stats.times.iter().enumerate() {
        let state = det.state_at(t).ok_or_else(|| {
            CliError::invalid("oracle.output_times", format!("no deterministic state at t = {t}"))
        })?;
        let (dm0, mean, se) = (state.moment(0.0), stats.m0.mean[k], stats.m0.se[k]);
        let z = if se > 0.0 {
            (dm0 - mean).abs() / se
        } else if (dm0 - mean).abs() <= 1e-6 * mean.abs() {
            0.0
        } else {
            f64::INFINITY
        };
        ok &= z <= 3.0;
        worst = worst.max(z);
        let vals = [
            t,
            dm0,
            mean,
            se,
            z,
            state.moment(1.0),
            stats.m1.mean[k],
            stats.m1.se[k],
            state.moment(-1.0),
            stats.mm1.mean[k],
            stats.mm1.se[k],
        ];
        let line: Vec<String> = vals.iter().map(|v| fmt_f64(*v)).collect();
        diff.push_str(&line.join(","));
        diff.push('\n');
    }
    write_file(out, "oracle_diff.csv", &diff)?;

    let mut s = Summary::default();
    s.kv("command", "oracle");
    s.kv("kernel", cfg.kernel.name());
    s.kv("initial", cfg.initial.name());
    s.kv("particles", o.particles);
    s.kv("runs", o.runs);
    s.kv("seed", o.seed);
    s.kv("events_first_run", runs[0].events);
    s.kv("max_z_M0", fmt_f64(worst));
    s.kv("status", if ok { "ok" } else { "disagreement" });
    write_file(out, "summary.txt", &s.0)?;
    print!("{}", s.0);
    Ok(if ok { Status::Ok } else { Status::CheckFailed })
}

pub fn cmd_verify_kernel(cfg: &RunConfig) -> CliResult<Status> {
    let bound = cfg.certificate.ok_or_else(|| {
        CliError::invalid("kernel.certificate", "verify-kernel needs an explicit certificate")
    })?;
    let cert = verify_bound(&cfg.kernel, bound, cfg.verify.domain, cfg.verify.samples)?;
    let mut s = Summary::default();
    s.kv("command", "verify-kernel");
    s.kv("kernel", cfg.kernel.name());
    s.kv("bound", format!("kappa={} lambda={} sigma={}", bound.kappa, bound.lambda, bound.sigma));
    s.kv(
        "domain",
        format!("[{}, {}]^2", cfg.verify.domain.x_lo, cfg.verify.domain.x_hi),
    );
    s.kv("samples", cfg.verify.samples);
    let status = match cert {
        Certificate::Pass { max_ratio } => {
            s.kv("max_ratio", fmt_f64(max_ratio));
            s.kv("status", "pass");
            Status::Ok
        }
        Certificate::Fail { x, y, ratio } => {
            s.kv("witness", format!("x={x} y={y} ratio={ratio}"));
            s.kv("status", "fail");
            Status::CheckFailed
        }
    };
    print!("{}", s.0);
    Ok(status)
}
