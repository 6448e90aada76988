//! A-priori bounds of the truncated problem, checked on computed trajectories.
//!
//! With `L = ||u0||_Y = M_1 + M_{-1}` of the projected initial state:
//!
//! * weighted moment bound: `M_0 + M_1 + M_{-2 sigma} <= 3L`
//! * `M_{-1}(t) <= M_{-1}(0)`
//! * tail bound: `sum_{x_i >= R} (1 + x_i^{-sigma}) N_i <= 2L / R`
//! * time-Lipschitz: `sum_i |N_i(t') - N_i(t)| <= 18 C L^2 (t' - t)`
//! * equicontinuity: `|<phi, u(t)> - <phi, u(s)>| <= 27/2 C ||phi||_inf L^2 (t - s)`
//!
//! where `C = C(lambda)` from [`constant_c`]. The last two constants are
//! stated for `kappa = 1`; callers with `kappa > 1` pass `kappa * C`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{CoagError, Result};
use crate::grid::{project_density, weak_pairing, DensityState, SizeGrid};
use crate::kernels::{CutoffParam, KernelSpec};
use crate::profile::InitialProfile;
use crate::solver::{solve, SolverConfig, Trajectory};

/// What each output-time record computes beyond the plain moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordSettings {
    pub sigma: f64,
    pub tail_radii: Vec<f64>,
}

impl RecordSettings {
    pub fn new(sigma: f64, tail_radii: Vec<f64>) -> Result<Self> {
        let s = RecordSettings { sigma, tail_radii };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma)?;
        if let Some(r) = self.tail_radii.iter().find(|r| !(**r >= 1.0) || !r.is_finite()) {
            return Err(CoagError::InvalidParameter(format!(
                "tail radius must be finite and >= 1, got {r}"
            )));
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if (0.0..=0.5).contains(&sigma) {
        Ok(())
    } else {
        Err(CoagError::InvalidParameter(format!(
            "sigma must lie in [0, 1/2], got {sigma}"
        )))
    }
}

/// Moments and bound margins of one stored state.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub m0: f64,
    pub m1: f64,
    pub mm1: f64,
    pub mm2sigma: f64,
    pub norm_y: f64,
    /// `(R, tail(R))` for each configured radius.
    pub tails: Vec<(f64, f64)>,
    /// `|M1(t) / M1(0) - 1|`, zero for a massless initial state.
    pub mass_drift: f64,
    /// `3L - (M0 + M1 + M_{-2 sigma})`.
    pub lemma_margin: f64,
    /// `M_{-1}(0) - M_{-1}(t)`.
    pub xm1_margin: f64,
    /// `2L/R - tail(R)` per radius.
    pub tail_margins: Vec<f64>,
}

impl DiagnosticsRecord {
    pub fn compute(state: &DensityState, initial: &DensityState, settings: &RecordSettings) -> Self {
        let sigma = settings.sigma;
        let l = initial.norm_y();
        let (m0, m1, mm1) = (state.moment(0.0), state.moment(1.0), state.moment(-1.0));
        let mm2sigma = state.moment(-2.0 * sigma);
        let tails: Vec<(f64, f64)> = settings
            .tail_radii
            .iter()
            .map(|&r| (r, tail(state, r, sigma)))
            .collect();
        let m1_0 = initial.moment(1.0);
        let mass_drift = if m1_0 > 0.0 {
            (m1 / m1_0 - 1.0).abs()
        } else {
            0.0
        };
        DiagnosticsRecord {
            t: state.t(),
            m0,
            m1,
            mm1,
            mm2sigma,
            norm_y: m1 + mm1,
            tail_margins: tails.iter().map(|&(r, v)| 2.0 * l / r - v).collect(),
            tails,
            mass_drift,
            lemma_margin: 3.0 * l - (m0 + m1 + mm2sigma),
            xm1_margin: initial.moment(-1.0) - mm1,
        }
    }
}

/// `sum_{x_i >= R} (1 + x_i^{-sigma}) N_i`.
pub fn tail(state: &DensityState, r: f64, sigma: f64) -> f64 {
    state
        .values()
        .iter()
        .zip(state.grid().pivots())
        .filter(|(_, &x)| x >= r)
        .map(|(n, x)| (1.0 + x.powf(-sigma)) * n)
        .sum()
}

/// `C(p) = 1` for `p` in `[0, 1]`, `2^{2p - 2}` for `p > 1`.
pub fn constant_c(p: f64) -> Result<f64> {
    if !(p >= 0.0) || !p.is_finite() {
        return Err(CoagError::InvalidParameter(format!(
            "C(p) is defined for finite p >= 0, got {p}"
        )));
    }
    Ok(if p <= 1.0 { 1.0 } else { 2f64.powf(2.0 * p - 2.0) })
}

/// A check passes when `measured <= bound * (1 + rel) + abs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Tolerance {
    pub fn absolute(abs: f64) -> Self {
        Tolerance { rel: 0.0, abs }
    }

    pub fn relative(rel: f64) -> Self {
        Tolerance { rel, abs: 0.0 }
    }

    pub fn allowed(&self, bound: f64) -> f64 {
        bound * (1.0 + self.rel) + self.abs
    }
}

/// One comparison of a measured quantity against its bound.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    /// Cut-off parameter of the run (tail checks across several `n`).
    pub n: Option<f64>,
    pub t0: f64,
    pub t1: f64,
    pub measured: f64,
    pub bound: f64,
    pub passed: bool,
}

impl BoundRow {
    pub fn margin(&self) -> f64 {
        self.bound - self.measured
    }

    /// `measured / bound`, zero when both vanish.
    pub fn ratio(&self) -> f64 {
        if self.measured == 0.0 {
            0.0
        } else {
            self.measured / self.bound
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub name: String,
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    fn new(name: impl Into<String>) -> Self {
        BoundReport {
            name: name.into(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, n: Option<f64>, t0: f64, t1: f64, measured: f64, bound: f64, tol: Tolerance) {
        self.rows.push(BoundRow {
            n,
            t0,
            t1,
            measured,
            bound,
            passed: measured <= tol.allowed(bound),
        });
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn worst_margin(&self) -> f64 {
        self.rows.iter().map(BoundRow::margin).fold(f64::INFINITY, f64::min)
    }

    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(BoundRow::ratio).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BoundRow> {
        self.rows.iter().filter(|r| !r.passed)
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} ({} checks, worst margin {:.6e}, max ratio {:.6})",
            self.name,
            if self.passed() { "pass" } else { "FAIL" },
            self.rows.len(),
            self.worst_margin(),
            self.max_ratio()
        )
    }
}

/// Weighted moment bound with the default tolerance `1e-8 L`.
pub fn check_lemma_i(traj: &Trajectory, sigma: f64, l: f64) -> Result<BoundReport> {
    check_lemma_i_tol(traj, sigma, l, Tolerance::absolute(1e-8 * l))
}

pub fn check_lemma_i_tol(traj: &Trajectory, sigma: f64, l: f64, tol: Tolerance) -> Result<BoundReport> {
    check_sigma(sigma)?;
    let mut rep = BoundReport::new("weighted moment bound");
    for s in &traj.states {
        let measured = s.moment(0.0) + s.moment(1.0) + s.moment(-2.0 * sigma);
        rep.push(None, s.t(), s.t(), measured, 3.0 * l, tol);
    }
    Ok(rep)
}

/// `M_{-1}(t) <= M_{-1}(0) + 1e-8`.
pub fn check_xm1_monotone(traj: &Trajectory) -> BoundReport {
    check_xm1_monotone_tol(traj, Tolerance::absolute(1e-8))
}

pub fn check_xm1_monotone_tol(traj: &Trajectory, tol: Tolerance) -> BoundReport {
    let mut rep = BoundReport::new("x^-1 moment monotonicity");
    let m0 = traj.initial().moment(-1.0);
    for s in &traj.states {
        rep.push(None, 0.0, s.t(), s.moment(-1.0), m0, tol);
    }
    rep
}

/// Tail bound for one radius over several runs, default tolerance `1e-6`.
pub fn check_tail_bound(trajs: &[Trajectory], r: f64, sigma: f64, l: f64) -> Result<BoundReport> {
    check_tail_bound_tol(trajs, r, sigma, l, Tolerance::absolute(1e-6))
}

pub fn check_tail_bound_tol(
    trajs: &[Trajectory],
    r: f64,
    sigma: f64,
    l: f64,
    tol: Tolerance,
) -> Result<BoundReport> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(CoagError::InvalidParameter(format!(
            "tail radius must be finite and >= 1, got {r}"
        )));
    }
    check_sigma(sigma)?;
    let mut rep = BoundReport::new(format!("tail bound R={r}"));
    for traj in trajs {
        let n = traj.meta.cutoff;
        let n = if n.is_finite() { Some(n) } else { None };
        for s in &traj.states {
            rep.push(n, s.t(), s.t(), tail(s, r, sigma), 2.0 * l / r, tol);
        }
    }
    Ok(rep)
}

/// L1 increments over consecutive stored times, default tolerance `1e-3` relative.
pub fn check_time_lipschitz(traj: &Trajectory, c: f64, l: f64) -> BoundReport {
    check_time_lipschitz_tol(traj, c, l, Tolerance::relative(1e-3))
}

pub fn check_time_lipschitz_tol(traj: &Trajectory, c: f64, l: f64, tol: Tolerance) -> BoundReport {
    let mut rep = BoundReport::new("time-Lipschitz bound");
    let slope = 18.0 * c * l * l;
    for w in traj.states.windows(2) {
        let d: f64 = w[0]
            .values()
            .iter()
            .zip(w[1].values())
            .map(|(a, b)| (b - a).abs())
            .sum();
        rep.push(None, w[0].t(), w[1].t(), d, slope * (w[1].t() - w[0].t()), tol);
    }
    rep
}

/// Pairing increments over all stored pairs `s < t`, default tolerance
/// `1e-3` relative.
pub fn check_equicontinuity(traj: &Trajectory, phi: &TestFunction, c: f64, l: f64) -> Result<BoundReport> {
    check_equicontinuity_tol(traj, phi, c, l, Tolerance::relative(1e-3))
}

pub fn check_equicontinuity_tol(
    traj: &Trajectory,
    phi: &TestFunction,
    c: f64,
    l: f64,
    tol: Tolerance,
) -> Result<BoundReport> {
    let sup = phi.sup_norm(traj.initial().grid())?;
    let slope = 13.5 * c * sup * l * l;
    let pairings = traj
        .states
        .iter()
        .map(|s| phi.pair(s))
        .collect::<Result<Vec<_>>>()?;
    let mut rep = BoundReport::new(format!("equicontinuity phi={}", phi.name()));
    let times = traj.times();
    for a in 0..times.len() {
        for b in a + 1..times.len() {
            let d = (pairings[b] - pairings[a]).abs();
            rep.push(None, times[a], times[b], d, slope * (times[b] - times[a]), tol);
        }
    }
    Ok(rep)
}

/// Largest exceedance ratio still treated as possibly numerical.
pub const MARGINAL_RATIO: f64 = 1.1;

#[derive(Clone, Debug, PartialEq)]
pub enum EquicontinuityVerdict {
    Pass(BoundReport),
    /// Failed at the original resolution, passed after halving the step.
    DiscretizationArtifact { original: BoundReport, refined: BoundReport },
    Violation(BoundReport),
}

impl EquicontinuityVerdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, EquicontinuityVerdict::Violation(_))
    }
}

/// Check equicontinuity on `traj`; a marginal failure (max ratio up to
/// [`MARGINAL_RATIO`]) is re-examined on a run with halved step sizes.
pub fn equicontinuity_with_recheck(
    traj: &Trajectory,
    u0: &DensityState,
    kernel: &KernelSpec,
    config: &SolverConfig,
    phi: &TestFunction,
    c: f64,
    l: f64,
    tol: Tolerance,
) -> Result<EquicontinuityVerdict> {
    let original = check_equicontinuity_tol(traj, phi, c, l, tol)?;
    if original.passed() {
        return Ok(EquicontinuityVerdict::Pass(original));
    }
    if original.max_ratio() > MARGINAL_RATIO * (1.0 + tol.rel) {
        return Ok(EquicontinuityVerdict::Violation(original));
    }
    let mut finer = config.clone();
    finer.dt_init *= 0.5;
    finer.dt_min *= 0.5;
    finer.safety *= 0.5;
    finer.output_times = traj.times().into_iter().filter(|&t| t > 0.0).collect();
    let refined_traj = solve(u0, kernel, &finer)?;
    let refined = check_equicontinuity_tol(&refined_traj, phi, c, l, tol)?;
    if refined.passed() {
        Ok(EquicontinuityVerdict::DiscretizationArtifact { original, refined })
    } else {
        Ok(EquicontinuityVerdict::Violation(refined))
    }
}

type PhiFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A named test function for weak pairings.
#[derive(Clone)]
pub struct TestFunction {
    name: String,
    f: Arc<PhiFn>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TestFunction({})", self.name)
    }
}

impl PartialEq for TestFunction {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl TestFunction {
    pub fn new<F>(name: &str, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        TestFunction {
            name: name.to_string(),
            f: Arc::new(f),
        }
    }

    pub fn one() -> Self {
        Self::new("one", |_| 1.0)
    }

    pub fn zero() -> Self {
        Self::new("zero", |_| 0.0)
    }

    pub fn indicator01() -> Self {
        Self::new("indicator01", |x| if x <= 1.0 { 1.0 } else { 0.0 })
    }

    pub fn exp_neg() -> Self {
        Self::new("exp", |x| (-x).exp())
    }

    pub fn min1() -> Self {
        Self::new("min1", |x| x.min(1.0))
    }

    /// `phi(x) = x`; unbounded, used for the mass pairing.
    pub fn identity() -> Self {
        Self::new("x", |x| x)
    }

    /// The default bounded witness set.
    pub fn default_set() -> Vec<Self> {
        vec![Self::one(), Self::indicator01(), Self::exp_neg(), Self::min1()]
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "one" => Self::one(),
            "zero" => Self::zero(),
            "indicator01" => Self::indicator01(),
            "exp" => Self::exp_neg(),
            "min1" => Self::min1(),
            "x" => Self::identity(),
            other => {
                return Err(CoagError::InvalidParameter(format!(
                    "unknown test function '{other}' (expected one, zero, indicator01, exp, min1, x)"
                )))
            }
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn pair(&self, state: &DensityState) -> Result<f64> {
        weak_pairing(state, |x| self.eval(x))
    }

    /// `max_i |phi(x_i)|` over the pivots.
    pub fn sup_norm(&self, grid: &SizeGrid) -> Result<f64> {
        let mut sup: f64 = 0.0;
        for &x in grid.pivots() {
            let v = self.eval(x);
            if !v.is_finite() {
                return Err(CoagError::BadTestFunction { x });
            }
            sup = sup.max(v.abs());
        }
        Ok(sup)
    }
}

/// Inputs of a truncation-convergence study.
#[derive(Clone, Debug)]
pub struct ConvergenceSetup {
    pub grid: Arc<SizeGrid>,
    pub n_list: Vec<f64>,
    /// Template for each run; its `n` and output times are replaced.
    pub solver: SolverConfig,
    pub test_functions: Vec<TestFunction>,
    pub times: Vec<f64>,
    pub sigma: f64,
    /// Zero the projected initial data above `n` for each run.
    pub truncate_initial: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairingRow {
    pub n: f64,
    pub phi: String,
    pub t: f64,
    pub pairing: f64,
    pub weighted_pairing: f64,
}

/// Successive differences `|p_{n_{k+1}} - p_{n_k}|` for one `(phi, t)` and
/// one of the two pairings.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceSequence {
    pub phi: String,
    pub t: f64,
    pub weighted: bool,
    pub diffs: Vec<f64>,
}

impl DifferenceSequence {
    pub fn strictly_decreasing(&self) -> bool {
        self.diffs.windows(2).all(|w| w[1] < w[0])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceReport {
    pub n_list: Vec<f64>,
    pub sigma: f64,
    pub rows: Vec<PairingRow>,
    pub sequences: Vec<DifferenceSequence>,
}

impl ConvergenceReport {
    pub fn all_strictly_decreasing(&self) -> bool {
        self.sequences.iter().all(DifferenceSequence::strictly_decreasing)
    }

    /// Sequences that fail to decrease strictly.
    pub fn flagged(&self) -> Vec<&DifferenceSequence> {
        self.sequences.iter().filter(|s| !s.strictly_decreasing()).collect()
    }

    pub fn pairing(&self, n: f64, phi: &str, t: f64) -> Option<&PairingRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.phi == phi && (r.t - t).abs() <= 1e-12 * t.max(1.0))
    }
}

/// A study aborted by a failed run, with the rows of the runs that finished.
#[derive(Debug)]
pub struct StudyFailure {
    pub n: f64,
    pub error: CoagError,
    pub partial: ConvergenceReport,
}

impl From<Box<StudyFailure>> for CoagError {
    fn from(f: Box<StudyFailure>) -> Self {
        f.error
    }
}

/// Solve the truncated problem for each `n` (concurrently on the current
/// rayon pool) and compare pairings across successive `n`.
pub fn convergence_study(
    u0: &InitialProfile,
    kernel: &KernelSpec,
    setup: &ConvergenceSetup,
) -> std::result::Result<ConvergenceReport, Box<StudyFailure>> {
    let early = |error: CoagError| {
        Box::new(StudyFailure {
            n: f64::NAN,
            error,
            partial: ConvergenceReport::default(),
        })
    };
    validate_setup(setup).map_err(early)?;
    let projected = project_density(u0, Arc::clone(&setup.grid)).map_err(early)?.state;

    let mut times = setup.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let t_final = *times.last().unwrap();

    let runs: Vec<Result<Trajectory>> = setup
        .n_list
        .par_iter()
        .map(|&n| {
            let mut cfg = setup.solver.clone();
            cfg.n = CutoffParam::new(n)?;
            cfg.t_final = t_final;
            cfg.output_times = times.iter().copied().filter(|&t| t > 0.0).collect();
            let start = if setup.truncate_initial {
                projected.truncate_above(n).0
            } else {
                projected.clone()
            };
            Ok(solve(&start, kernel, &cfg)?)
        })
        .collect();

    let mut report = ConvergenceReport {
        n_list: Vec::new(),
        sigma: setup.sigma,
        rows: Vec::new(),
        sequences: Vec::new(),
    };
    for (&n, run) in setup.n_list.iter().zip(runs) {
        let traj = match run {
            Ok(t) => t,
            Err(error) => {
                finish_sequences(&mut report, setup, &times);
                return Err(Box::new(StudyFailure {
                    n,
                    error,
                    partial: report,
                }));
            }
        };
        report.n_list.push(n);
        for phi in &setup.test_functions {
            for &t in &times {
                let state = traj
                    .state_at(t)
                    .expect("requested times are output times");
                let row = pair_row(n, phi, t, state, setup.sigma).map_err(|error| {
                    Box::new(StudyFailure {
                        n,
                        error,
                        partial: ConvergenceReport::default(),
                    })
                })?;
                report.rows.push(row);
            }
        }
    }
    finish_sequences(&mut report, setup, &times);
    Ok(report)
}

fn validate_setup(setup: &ConvergenceSetup) -> Result<()> {
    let bad = |m: String| Err(CoagError::InvalidParameter(m));
    if setup.n_list.len() < 2 {
        return bad("a convergence study needs at least two cut-off values".into());
    }
    if setup.n_list.windows(2).any(|w| w[1] <= w[0]) {
        return bad("n list must be strictly increasing".into());
    }
    for &n in &setup.n_list {
        CutoffParam::new(n)?;
    }
    let n_max = *setup.n_list.last().unwrap();
    if setup.grid.x_min() > 1.0 / n_max || setup.grid.x_max() < n_max {
        return bad(format!(
            "grid [{}, {}] must contain [1/{n_max}, {n_max}]",
            setup.grid.x_min(),
            setup.grid.x_max()
        ));
    }
    if setup.times.is_empty() || setup.times.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return bad("study times must be non-empty, finite and >= 0".into());
    }
    if setup.times.iter().all(|&t| t == 0.0) {
        return bad("study needs a positive time".into());
    }
    if setup.test_functions.is_empty() {
        return bad("no test functions".into());
    }
    check_sigma(setup.sigma)
}

fn pair_row(n: f64, phi: &TestFunction, t: f64, state: &DensityState, sigma: f64) -> Result<PairingRow> {
    Ok(PairingRow {
        n,
        phi: phi.name().to_string(),
        t,
        pairing: phi.pair(state)?,
        weighted_pairing: phi.pair(&state.weighted(sigma))?,
    })
}

fn finish_sequences(report: &mut ConvergenceReport, setup: &ConvergenceSetup, times: &[f64]) {
    for phi in &setup.test_functions {
        for &t in times {
            for weighted in [false, true] {
                let vals: Vec<f64> = report
                    .n_list
                    .iter()
                    .filter_map(|&n| report.pairing(n, phi.name(), t))
                    .map(|r| if weighted { r.weighted_pairing } else { r.pairing })
                    .collect();
                let diffs = vals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
                report.sequences.push(DifferenceSequence {
                    phi: phi.name().to_string(),
                    t,
                    weighted,
                    diffs,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Trajectory;

    fn grid(lo: f64, hi: f64, cells: usize) -> Arc<SizeGrid> {
        Arc::new(SizeGrid::geometric(lo, hi, cells).unwrap())
    }

    fn traj_of(states: Vec<Vec<f64>>, g: &Arc<SizeGrid>, dt: f64) -> Trajectory {
        let states = states
            .into_iter()
            .enumerate()
            .map(|(k, v)| DensityState::new(Arc::clone(g), k as f64 * dt, v).unwrap())
            .collect();
        Trajectory::from_states(states, &RecordSettings::default()).unwrap()
    }

    #[test]
    fn constant_c_values() {
        assert_eq!(constant_c(2.0 / 3.0).unwrap(), 1.0);
        assert_eq!(constant_c(2.0).unwrap(), 4.0);
        assert_eq!(constant_c(1.0).unwrap(), 1.0);
        assert!((constant_c(1.0 + 1e-12).unwrap() - 1.0).abs() < 1e-11);
        assert!((constant_c(7.0 / 6.0).unwrap() - 2f64.powf(1.0 / 3.0)).abs() < 1e-15);
        assert!(constant_c(-0.1).is_err());
    }

    #[test]
    fn zero_trajectory_passes_everything() {
        let g = grid(0.1, 10.0, 8);
        let tr = traj_of(vec![vec![0.0; 8]; 3], &g, 0.5);
        let l = 3.0;
        let lemma = check_lemma_i(&tr, 0.25, l).unwrap();
        assert!(lemma.passed());
        assert_eq!(lemma.worst_margin(), 9.0);
        assert!(check_xm1_monotone(&tr).passed());
        let tail = check_tail_bound(std::slice::from_ref(&tr), 10.0, 0.0, l).unwrap();
        assert!(tail.passed());
        assert_eq!(tail.rows[0].bound, 0.6);
        let lip = check_time_lipschitz(&tr, 1.0, l);
        assert!(lip.passed() && lip.max_ratio() == 0.0);
        assert_eq!(lip.rows[0].bound, 162.0 * 0.5);
        let eq = check_equicontinuity(&tr, &TestFunction::one(), 1.0, l).unwrap();
        assert!(eq.passed());
        assert_eq!(eq.rows[0].bound, 121.5 * 0.5);
        assert!(check_equicontinuity(&tr, &TestFunction::zero(), 1.0, l).unwrap().passed());
    }

    #[test]
    fn rejects_bad_parameters() {
        let g = grid(0.1, 10.0, 4);
        let tr = traj_of(vec![vec![0.0; 4]], &g, 1.0);
        assert!(check_lemma_i(&tr, 0.6, 1.0).is_err());
        assert!(check_tail_bound(&[tr], 0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn increasing_xm1_fails() {
        let g = grid(0.1, 10.0, 4);
        let tr = traj_of(vec![vec![1.0; 4], vec![1.0, 1.0, 1.0, 1.0], vec![2.0, 1.0, 1.0, 1.0]], &g, 0.1);
        let rep = check_xm1_monotone(&tr);
        assert!(!rep.passed());
        assert_eq!(rep.failures().count(), 1);
    }

    #[test]
    fn indicator_tail_example() {
        // N = 1 on [1, 2], sigma = 0, R = 1: tail = 2 M0 = 2
        let g = Arc::new(SizeGrid::uniform(1.0, 2.0, 1000).unwrap());
        let p = InitialProfile::indicator(1.0, 2.0).unwrap();
        let s = project_density(&p, Arc::clone(&g)).unwrap().state;
        let l = s.norm_y();
        assert!((l - (1.5 + 2f64.ln())).abs() < 1e-6);
        assert!((tail(&s, 1.0, 0.0) - 2.0).abs() < 1e-12);
        let tr = Trajectory::from_states(vec![s], &RecordSettings::default()).unwrap();
        let rep = check_tail_bound(&[tr], 1.0, 0.0, l).unwrap();
        assert!(rep.passed());
        assert!((rep.rows[0].bound - 4.386294).abs() < 1e-6);
    }

    #[test]
    fn weighted_pairing_two_ways() {
        let g = grid(1e-3, 50.0, 64);
        let s = project_density(&InitialProfile::xexp(), Arc::clone(&g)).unwrap().state;
        let sigma = 1.0 / 3.0;
        for phi in TestFunction::default_set() {
            let a = phi.pair(&s.weighted(sigma)).unwrap();
            let b = weak_pairing(&s, |x| phi.eval(x) * x.powf(-sigma)).unwrap();
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-300), "{}", phi.name());
        }
    }

    #[test]
    fn records_margins() {
        let g = grid(1e-2, 20.0, 40);
        let s = project_density(&InitialProfile::xexp(), Arc::clone(&g)).unwrap().state;
        let settings = RecordSettings::new(0.25, vec![5.0]).unwrap();
        let r = DiagnosticsRecord::compute(&s, &s, &settings);
        assert_eq!(r.mass_drift, 0.0);
        assert_eq!(r.xm1_margin, 0.0);
        assert!(r.lemma_margin > 0.0);
        assert_eq!(r.tails.len(), 1);
        assert!(r.tail_margins[0] > 0.0);
        assert!(RecordSettings::new(0.7, vec![]).is_err());
        assert!(RecordSettings::new(0.0, vec![0.5]).is_err());
    }

    #[test]
    fn test_function_names() {
        for name in ["one", "zero", "indicator01", "exp", "min1", "x"] {
            assert_eq!(TestFunction::by_name(name).unwrap().name(), name);
        }
        assert!(TestFunction::by_name("sin").is_err());
        let bad = TestFunction::new("inv", |x| 1.0 / (x - x));
        assert!(bad.sup_norm(&grid(1.0, 2.0, 2)).is_err());
    }

    #[test]
    fn study_setup_validation() {
        let setup = ConvergenceSetup {
            grid: grid(1e-2, 10.0, 20),
            n_list: vec![8.0],
            solver: SolverConfig::new(CutoffParam::new(8.0).unwrap(), 1.0),
            test_functions: TestFunction::default_set(),
            times: vec![1.0],
            sigma: 0.0,
            truncate_initial: true,
        };
        let k = KernelSpec::constant(1.0).unwrap();
        let err = convergence_study(&InitialProfile::exp(), &k, &setup).unwrap_err();
        assert!(matches!(err.error, CoagError::InvalidParameter(_)));
        let mut wide = setup.clone();
        wide.n_list = vec![8.0, 16.0];
        // x_max = 10 < 16
        assert!(convergence_study(&InitialProfile::exp(), &k, &wide).is_err());
    }

    #[test]
    fn constant_kernel_study_approaches_analytic_number() {
        let setup = ConvergenceSetup {
            grid: grid(1.0 / 64.0, 64.0, 96),
            n_list: vec![8.0, 16.0, 32.0, 64.0],
            solver: SolverConfig::new(CutoffParam::new(8.0).unwrap(), 1.0),
            test_functions: vec![TestFunction::one(), TestFunction::zero(), TestFunction::identity()],
            times: vec![0.0, 0.5, 1.0],
            sigma: 0.0,
            truncate_initial: true,
        };
        let k = KernelSpec::constant(1.0).unwrap();
        let rep = convergence_study(&InitialProfile::exp(), &k, &setup).unwrap();
        let m0 = rep.pairing(64.0, "one", 1.0).unwrap().pairing;
        let m0_8 = rep.pairing(8.0, "one", 1.0).unwrap().pairing;
        assert!((m0 - 2.0 / 3.0).abs() < (m0_8 - 2.0 / 3.0).abs());
        assert!((m0 - 2.0 / 3.0).abs() < 2e-2, "{m0}");
        for r in rep.rows.iter().filter(|r| r.phi == "zero") {
            assert_eq!(r.pairing, 0.0);
        }
        for &n in &rep.n_list {
            let m_a = rep.pairing(n, "x", 0.0).unwrap().pairing;
            let m_b = rep.pairing(n, "x", 1.0).unwrap().pairing;
            assert!(((m_b - m_a) / m_a).abs() < 1e-12);
        }
    }
}
