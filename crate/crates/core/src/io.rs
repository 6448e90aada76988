//! CSV serialization. Floats are written with 17 significant digits so that
//! identical runs produce byte-identical files.

use std::fmt::Write;

use crate::diagnostics::{BoundReport, ConvergenceReport};
use crate::oracle::EnsembleStats;
use crate::solver::Trajectory;

pub const MOMENT_HEADER: &str = "time,M0,M1,Mm1,Mm2sigma,normY,mass_drift";

/// `{:.16e}`, i.e. 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row of the shared moment schema.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    pub m0: f64,
    pub m1: f64,
    pub mm1: f64,
    pub mm2sigma: f64,
    pub norm_y: f64,
    pub mass_drift: f64,
}

pub fn moment_rows(traj: &Trajectory) -> Vec<MomentRow> {
    traj.records
        .iter()
        .map(|r| MomentRow {
            t: r.t,
            m0: r.m0,
            m1: r.m1,
            mm1: r.mm1,
            mm2sigma: r.mm2sigma,
            norm_y: r.norm_y,
            mass_drift: r.mass_drift,
        })
        .collect()
}

/// Ensemble means (`se = false`) or standard errors (`se = true`) in the
/// moment schema. The drift column of the means is relative to `t = 0`.
pub fn ensemble_rows(stats: &EnsembleStats, se: bool) -> Vec<MomentRow> {
    let pick = |m: &crate::oracle::MomentStats, k: usize| if se { m.se[k] } else { m.mean[k] };
    let m1_0 = stats.m1.mean.first().copied().unwrap_or(0.0);
    (0..stats.times.len())
        .map(|k| {
            let (m1, mm1) = (pick(&stats.m1, k), pick(&stats.mm1, k));
            MomentRow {
                t: stats.times[k],
                m0: pick(&stats.m0, k),
                m1,
                mm1,
                mm2sigma: pick(&stats.mm2sigma, k),
                norm_y: if se { (m1 * m1 + mm1 * mm1).sqrt() } else { m1 + mm1 },
                mass_drift: if se || m1_0 == 0.0 {
                    0.0
                } else {
                    (stats.m1.mean[k] / m1_0 - 1.0).abs()
                },
            }
        })
        .collect()
}

pub fn moments_csv(rows: &[MomentRow]) -> String {
    let mut out = String::from(MOMENT_HEADER);
    out.push('\n');
    for r in rows {
        let vals = [r.t, r.m0, r.m1, r.mm1, r.mm2sigma, r.norm_y, r.mass_drift];
        let line: Vec<String> = vals.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Long format `time,cell,x,N`, one row per cell and output time.
pub fn states_csv(traj: &Trajectory) -> String {
    let mut out = String::from("time,cell,x,N\n");
    for s in &traj.states {
        for (i, (n, x)) in s.values().iter().zip(s.grid().pivots()).enumerate() {
            let _ = writeln!(out, "{},{i},{},{}", fmt_f64(s.t()), fmt_f64(*x), fmt_f64(*n));
        }
    }
    out
}

/// Moments plus bound margins per output time.
pub fn diagnostics_csv(traj: &Trajectory) -> String {
    let mut out = String::from("time,M0,M1,Mm1,Mm2sigma,normY,mass_drift,lemma_margin,xm1_margin");
    if let Some(r) = traj.records.first() {
        for (radius, _) in &r.tails {
            let _ = write!(out, ",tail_R{radius},tail_margin_R{radius}");
        }
    }
    out.push('\n');
    for r in &traj.records {
        let mut vals = vec![
            r.t,
            r.m0,
            r.m1,
            r.mm1,
            r.mm2sigma,
            r.norm_y,
            r.mass_drift,
            r.lemma_margin,
            r.xm1_margin,
        ];
        for ((_, v), m) in r.tails.iter().zip(&r.tail_margins) {
            vals.push(*v);
            vals.push(*m);
        }
        let line: Vec<String> = vals.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn bound_reports_csv(reports: &[BoundReport]) -> String {
    let mut out = String::from("check,n,t0,t1,measured,bound,margin,passed\n");
    for rep in reports {
        for r in &rep.rows {
            let n = r.n.map(fmt_f64).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{n},{},{},{},{},{},{}",
                rep.name,
                fmt_f64(r.t0),
                fmt_f64(r.t1),
                fmt_f64(r.measured),
                fmt_f64(r.bound),
                fmt_f64(r.margin()),
                r.passed
            );
        }
    }
    out
}

/// One row per `(n, phi, t)`.
pub fn convergence_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("n,phi,t,pairing,weighted_pairing\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(r.n),
            r.phi,
            fmt_f64(r.t),
            fmt_f64(r.pairing),
            fmt_f64(r.weighted_pairing)
        );
    }
    out
}

/// One row per successive difference.
pub fn convergence_differences_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("phi,t,weighted,n,n_next,difference,decreasing\n");
    for seq in &report.sequences {
        let ok = seq.strictly_decreasing();
        for (k, d) in seq.diffs.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{ok}",
                seq.phi,
                fmt_f64(seq.t),
                seq.weighted,
                fmt_f64(report.n_list[k]),
                fmt_f64(report.n_list[k + 1]),
                fmt_f64(*d)
            );
        }
    }
    out
}
