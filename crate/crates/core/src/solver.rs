//! Sectional solver for the truncated coagulation system.
//!
//! The kernel is replaced by its cut-off `K_n` and the size axis by a
//! [`SizeGrid`]. Each coalescence of pivots `x_i`, `x_j` deposits the merged
//! mass `s = x_i + x_j` on the two pivots bracketing `s` with linear weights
//! `w x_k + (1 - w) x_{k+1} = s`, so the discrete system conserves mass to
//! round-off. Two time integrators are provided: explicit Heun with
//! positivity rejection, and a backward-Euler step solved by plain Picard
//! iteration.

use std::sync::Arc;

use crate::diagnostics::{DiagnosticsRecord, RecordSettings};
use crate::error::{CoagError, Result};
use crate::grid::{DensityState, SizeGrid};
use crate::kernels::{CutoffParam, KernelSpec};

/// Where the mass of one coalescence lands.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassSplit {
    pub lo: usize,
    pub w_lo: f64,
    /// Upper neighbour and its weight, absent for exact pivot hits and for
    /// masses beyond the last pivot.
    pub hi: Option<(usize, f64)>,
}

/// Split mass `s >= pivots[0]` between the bracketing pivots. Past the last
/// pivot the whole mass goes to the last cell with weight `s / x_last`.
pub fn mass_split(pivots: &[f64], s: f64) -> MassSplit {
    let k = pivots.partition_point(|&p| p <= s).saturating_sub(1);
    let xk = pivots[k];
    if s == xk {
        return MassSplit {
            lo: k,
            w_lo: 1.0,
            hi: None,
        };
    }
    if k + 1 == pivots.len() {
        return MassSplit {
            lo: k,
            w_lo: s / xk,
            hi: None,
        };
    }
    let xh = pivots[k + 1];
    let w = (xh - s) / (xh - xk);
    MassSplit {
        lo: k,
        w_lo: w,
        hi: Some((k + 1, 1.0 - w)),
    }
}

#[derive(Clone, Copy, Debug)]
struct ActivePair {
    i: usize,
    j: usize,
    rate: f64,
    split: MassSplit,
}

/// Pairwise cut-off rates `R_ij = K_n(x_i, x_j)` and the splitting table.
#[derive(Clone, Debug)]
pub struct CoagRates {
    grid: Arc<SizeGrid>,
    cutoff: CutoffParam,
    rates: Vec<f64>,
    pairs: Vec<ActivePair>,
    unreachable: usize,
}

/// Tabulate the cut-off rates for every pivot pair.
///
/// Pairs whose merged mass lies beyond `x_max` are outside the computational
/// domain; they get zero rate and are counted in [`CoagRates::unreachable_pairs`].
pub fn precompute_rates(
    grid: Arc<SizeGrid>,
    kernel: &KernelSpec,
    n: CutoffParam,
) -> Result<CoagRates> {
    let pivots = grid.pivots();
    let nv = n.value();
    if !pivots.iter().any(|&x| x >= 1.0 / nv && x <= nv) {
        return Err(CoagError::EmptySystem(format!(
            "no pivot of [{}, {}] lies in [1/n, n] = [{}, {}]",
            grid.x_min(),
            grid.x_max(),
            1.0 / nv,
            nv
        )));
    }
    let m = grid.len();
    let mut rates = vec![0.0; m * m];
    let mut pairs = Vec::new();
    let mut unreachable = 0;
    for i in 0..m {
        for j in i..m {
            let (xi, xj) = (pivots[i], pivots[j]);
            let r = kernel.eval_cutoff(n, xi, xj)?;
            if r == 0.0 {
                continue;
            }
            if !r.is_finite() {
                return Err(CoagError::Inadmissible(format!(
                    "K_n({xi}, {xj}) = {r} is not finite"
                )));
            }
            let s = xi + xj;
            if s > grid.x_max() {
                unreachable += 1;
                continue;
            }
            rates[i * m + j] = r;
            rates[j * m + i] = r;
            pairs.push(ActivePair {
                i,
                j,
                rate: r,
                split: mass_split(pivots, s),
            });
        }
    }
    Ok(CoagRates {
        grid,
        cutoff: n,
        rates,
        pairs,
        unreachable,
    })
}

impl CoagRates {
    pub fn grid(&self) -> &Arc<SizeGrid> {
        &self.grid
    }

    pub fn cutoff(&self) -> CutoffParam {
        self.cutoff
    }

    /// `R_ij`.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.grid.len() + j]
    }

    /// Splitting of the pair `(i, j)`, `None` if the pair is inactive.
    pub fn split(&self, i: usize, j: usize) -> Option<MassSplit> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.pairs
            .iter()
            .find(|p| p.i == i && p.j == j)
            .map(|p| p.split)
    }

    pub fn active_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Pairs inside the cut-off support whose merged mass exceeds `x_max`.
    pub fn unreachable_pairs(&self) -> usize {
        self.unreachable
    }

    fn check_grid(&self, state: &DensityState) -> Result<()> {
        if Arc::ptr_eq(&self.grid, state.grid()) || *self.grid == **state.grid() {
            Ok(())
        } else {
            Err(CoagError::GridMismatch)
        }
    }

    /// Gain and loss terms of the discrete right-hand side.
    pub(crate) fn gain_loss_into(&self, n: &[f64], gain: &mut [f64], loss: &mut [f64]) {
        gain.fill(0.0);
        loss.fill(0.0);
        for p in &self.pairs {
            let (ni, nj) = (n[p.i], n[p.j]);
            // events per unit time: R N_i N_j for i != j, R N_i^2 / 2 for i == j
            let flux = if p.i == p.j {
                0.5 * p.rate * ni * ni
            } else {
                p.rate * ni * nj
            };
            loss[p.i] += flux;
            loss[p.j] += flux;
            gain[p.split.lo] += p.split.w_lo * flux;
            if let Some((hi, w)) = p.split.hi {
                gain[hi] += w * flux;
            }
        }
    }

    pub(crate) fn rhs_into(&self, n: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.gain_loss_into(n, out, scratch);
        for (o, l) in out.iter_mut().zip(scratch.iter()) {
            *o -= l;
        }
    }

    /// Largest per-particle loss frequency `max_i sum_j R_ij N_j`.
    pub(crate) fn max_loss_frequency(&self, n: &[f64]) -> f64 {
        let m = self.grid.len();
        let mut best: f64 = 0.0;
        for i in 0..m {
            let row = &self.rates[i * m..(i + 1) * m];
            let f: f64 = row.iter().zip(n).map(|(r, v)| r * v).sum();
            best = best.max(f);
        }
        best
    }
}

/// Gain (birth) and loss (death) terms evaluated separately.
pub fn gain_loss(state: &DensityState, rates: &CoagRates) -> Result<(Vec<f64>, Vec<f64>)> {
    rates.check_grid(state)?;
    let m = state.values().len();
    let (mut g, mut l) = (vec![0.0; m], vec![0.0; m]);
    rates.gain_loss_into(state.values(), &mut g, &mut l);
    Ok((g, l))
}

/// Per-cell time derivative `gain - loss`.
pub fn rhs(state: &DensityState, rates: &CoagRates) -> Result<Vec<f64>> {
    rates.check_grid(state)?;
    let m = state.values().len();
    let (mut out, mut scratch) = (vec![0.0; m], vec![0.0; m]);
    rates.rhs_into(state.values(), &mut out, &mut scratch);
    Ok(out)
}

/// One forward-Euler substep `N + dt * rhs(N)` without positivity handling.
pub fn euler_substep(state: &DensityState, rates: &CoagRates, dt: f64) -> Result<Vec<f64>> {
    let d = rhs(state, rates)?;
    Ok(state
        .values()
        .iter()
        .zip(&d)
        .map(|(n, f)| n + dt * f)
        .collect())
}

/// Result of one accepted step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: DensityState,
    pub dt_used: f64,
    pub rejections: usize,
    /// Picard iterations (zero for the explicit integrator).
    pub iterations: usize,
    /// Mass removed by post-convergence clipping (Picard only).
    pub clipped_mass: f64,
}

/// Heun step. A step producing a negative entry (in the predictor or the
/// corrector) is rejected and retried with half the step, down to `dt_min`.
pub fn step_explicit(
    state: &DensityState,
    rates: &CoagRates,
    dt: f64,
    dt_min: f64,
) -> Result<StepOutcome> {
    rates.check_grid(state)?;
    if !(dt > 0.0) {
        return Err(CoagError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let n = state.values();
    let m = n.len();
    let mut f0 = vec![0.0; m];
    let mut f1 = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    let mut pred = vec![0.0; m];
    rates.rhs_into(n, &mut f0, &mut scratch);

    let mut h = dt;
    let mut rejections = 0;
    loop {
        for k in 0..m {
            pred[k] = n[k] + h * f0[k];
        }
        let mut ok = pred.iter().all(|&v| v >= 0.0);
        if ok {
            rates.rhs_into(&pred, &mut f1, &mut scratch);
            for k in 0..m {
                pred[k] = n[k] + 0.5 * h * (f0[k] + f1[k]);
            }
            ok = pred.iter().all(|&v| v >= 0.0);
        }
        if ok {
            if !pred.iter().all(|v| v.is_finite()) {
                return Err(CoagError::NonFinite {
                    t: state.t() + h,
                    last_good_t: state.t(),
                });
            }
            let next = DensityState::from_parts_unchecked(
                Arc::clone(state.grid()),
                state.t() + h,
                pred,
            );
            return Ok(StepOutcome {
                state: next,
                dt_used: h,
                rejections,
                iterations: 0,
                clipped_mass: 0.0,
            });
        }
        rejections += 1;
        if h * 0.5 < dt_min {
            return Err(CoagError::StepFailure {
                t: state.t(),
                dt: h * 0.5,
                dt_min,
                reason: "the Heun update still produced negative concentrations".into(),
            });
        }
        h *= 0.5;
    }
}

/// Backward-Euler step `N+ = N + dt rhs(N+)` by Picard iteration from `N`.
/// Converged when successive iterates differ by less than `tol` in max norm.
/// Negative entries are clipped to zero after convergence and the removed
/// mass is reported.
pub fn step_fixed_point(
    state: &DensityState,
    rates: &CoagRates,
    dt: f64,
    tol: f64,
    max_iter: usize,
) -> Result<StepOutcome> {
    rates.check_grid(state)?;
    if !(dt >= 0.0) || !(tol > 0.0) {
        return Err(CoagError::InvalidParameter(format!(
            "fixed-point step needs dt >= 0 and tol > 0, got dt={dt}, tol={tol}"
        )));
    }
    let n = state.values();
    let m = n.len();
    let mut cur = n.to_vec();
    let mut next = vec![0.0; m];
    let mut f = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    let mut last_update = f64::INFINITY;
    for iter in 1..=max_iter {
        rates.rhs_into(&cur, &mut f, &mut scratch);
        let mut diff: f64 = 0.0;
        for k in 0..m {
            next[k] = n[k] + dt * f[k];
            diff = diff.max((next[k] - cur[k]).abs());
        }
        std::mem::swap(&mut cur, &mut next);
        if !diff.is_finite() {
            break;
        }
        last_update = diff;
        if diff < tol {
            let pivots = state.grid().pivots();
            let mut clipped_mass = 0.0;
            for (v, x) in cur.iter_mut().zip(pivots) {
                if *v < 0.0 {
                    clipped_mass += -*v * x;
                    *v = 0.0;
                }
            }
            let next = DensityState::from_parts_unchecked(
                Arc::clone(state.grid()),
                state.t() + dt,
                cur,
            );
            return Ok(StepOutcome {
                state: next,
                dt_used: dt,
                rejections: 0,
                iterations: iter,
                clipped_mass,
            });
        }
    }
    Err(CoagError::NoConvergence {
        iterations: max_iter,
        dt,
        last_update,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    ExplicitHeun,
    Picard,
}

impl Integrator {
    pub fn name(self) -> &'static str {
        match self {
            Integrator::ExplicitHeun => "explicit_heun",
            Integrator::Picard => "picard",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub n: CutoffParam,
    pub t_final: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    /// Fraction `theta` of the inverse largest loss frequency allowed per
    /// step; `theta = 1` keeps the Euler predictor non-negative.
    pub safety: f64,
    pub integrator: Integrator,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Requested output times in `(0, t_final]`; `t_final` is always emitted.
    pub output_times: Vec<f64>,
    /// Never enlarge the step beyond its initial value after a rejection
    /// (`false` allows regrowth up to `dt_init`).
    pub fixed_step: bool,
    pub record: RecordSettings,
}

impl SolverConfig {
    pub fn new(n: CutoffParam, t_final: f64) -> Self {
        SolverConfig {
            n,
            t_final,
            dt_init: 1e-2,
            dt_min: 1e-10,
            safety: 0.5,
            integrator: Integrator::ExplicitHeun,
            picard_tol: 1e-12,
            picard_max_iter: 50,
            output_times: Vec::new(),
            fixed_step: false,
            record: RecordSettings::default(),
        }
    }

    /// Evenly spaced outputs every `dt_out` up to `t_final`.
    pub fn with_output_every(mut self, dt_out: f64) -> Self {
        let k = (self.t_final / dt_out).round() as usize;
        self.output_times = (1..=k).map(|i| self.t_final * i as f64 / k as f64).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoagError::InvalidParameter(msg));
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init) || !self.dt_init.is_finite() {
            return bad(format!(
                "need 0 < dt_min <= dt_init, got dt_min={}, dt_init={}",
                self.dt_min, self.dt_init
            ));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad(format!("safety must lie in (0, 1], got {}", self.safety));
        }
        if !(self.picard_tol > 0.0) || self.picard_max_iter == 0 {
            return bad("picard_tol must be positive and picard_max_iter >= 1".into());
        }
        if self
            .output_times
            .iter()
            .any(|&t| !(t > 0.0 && t <= self.t_final))
        {
            return bad("output times must lie in (0, t_final]".into());
        }
        if self.output_times.windows(2).any(|w| w[1] <= w[0]) {
            return bad("output times must be strictly increasing".into());
        }
        self.record.validate()
    }

    fn schedule(&self) -> Vec<f64> {
        let mut times = self.output_times.clone();
        if times.last().is_none_or(|&t| t < self.t_final) {
            times.push(self.t_final);
        }
        times
    }
}

#[derive(Clone, Debug)]
pub struct RunMeta {
    pub kernel: String,
    pub cutoff: f64,
    pub cells: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub integrator: Integrator,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub picard_iterations: usize,
    pub clipped_mass: f64,
    pub unreachable_pairs: usize,
    /// `max_t |M1(t) / M1(0) - 1|`.
    pub mass_drift: f64,
}

/// States at the output times (starting at `t = 0`) with their diagnostics.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<DensityState>,
    pub records: Vec<DiagnosticsRecord>,
    pub meta: RunMeta,
}

impl Trajectory {
    /// Assemble a trajectory from externally produced states.
    pub fn from_states(states: Vec<DensityState>, settings: &RecordSettings) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| CoagError::Trajectory("no states".into()))?;
        if first.t() != 0.0 {
            return Err(CoagError::Trajectory("first state must be at t = 0".into()));
        }
        if states.windows(2).any(|w| w[1].t() <= w[0].t()) {
            return Err(CoagError::Trajectory("times must be strictly increasing".into()));
        }
        let grid = Arc::clone(first.grid());
        if states.iter().any(|s| *s.grid() != grid) {
            return Err(CoagError::GridMismatch);
        }
        let records: Vec<_> = states
            .iter()
            .map(|s| DiagnosticsRecord::compute(s, first, settings))
            .collect();
        let mass_drift = records.iter().map(|r| r.mass_drift).fold(0.0, f64::max);
        Ok(Trajectory {
            states,
            records,
            meta: RunMeta {
                kernel: "external".into(),
                cutoff: f64::NAN,
                cells: grid.len(),
                x_min: grid.x_min(),
                x_max: grid.x_max(),
                integrator: Integrator::ExplicitHeun,
                accepted_steps: 0,
                rejected_steps: 0,
                picard_iterations: 0,
                clipped_mass: 0.0,
                unreachable_pairs: 0,
                mass_drift,
            },
        })
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t()).collect()
    }

    pub fn initial(&self) -> &DensityState {
        &self.states[0]
    }

    pub fn last(&self) -> &DensityState {
        self.states.last().unwrap()
    }

    /// Index of the stored state at time `t` (matched to 1e-12 relative).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.states
            .iter()
            .position(|s| (s.t() - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    pub fn state_at(&self, t: f64) -> Option<&DensityState> {
        self.index_of(t).map(|i| &self.states[i])
    }
}

/// A failed solve: the error, the last good state, and everything emitted
/// before the failure.
#[derive(Debug)]
pub struct SolveFailure {
    pub error: CoagError,
    pub last_good: DensityState,
    pub partial: Trajectory,
}

impl From<Box<SolveFailure>> for CoagError {
    fn from(f: Box<SolveFailure>) -> Self {
        f.error
    }
}

/// Integrate the truncated system from `u0` to `config.t_final`.
pub fn solve(
    u0: &DensityState,
    kernel: &KernelSpec,
    config: &SolverConfig,
) -> std::result::Result<Trajectory, Box<SolveFailure>> {
    let early = |error: CoagError| {
        let partial = Trajectory::from_states(vec![u0.clone().with_time(0.0)], &config.record)
            .expect("single state at t = 0");
        Box::new(SolveFailure {
            error,
            last_good: u0.clone(),
            partial,
        })
    };
    config.validate().map_err(early)?;
    let rates = precompute_rates(Arc::clone(u0.grid()), kernel, config.n).map_err(early)?;
    solve_with_rates(u0, &rates, kernel.name(), config)
}

/// [`solve`] with precomputed rates.
pub fn solve_with_rates(
    u0: &DensityState,
    rates: &CoagRates,
    kernel_name: &str,
    config: &SolverConfig,
) -> std::result::Result<Trajectory, Box<SolveFailure>> {
    let initial = u0.clone().with_time(0.0);
    let grid = Arc::clone(initial.grid());
    let mut meta = RunMeta {
        kernel: kernel_name.to_string(),
        cutoff: config.n.value(),
        cells: grid.len(),
        x_min: grid.x_min(),
        x_max: grid.x_max(),
        integrator: config.integrator,
        accepted_steps: 0,
        rejected_steps: 0,
        picard_iterations: 0,
        clipped_mass: 0.0,
        unreachable_pairs: rates.unreachable_pairs(),
        mass_drift: 0.0,
    };
    let mut states = vec![initial.clone()];
    let mut records = vec![DiagnosticsRecord::compute(&initial, &initial, &config.record)];

    let fail = |error: CoagError,
                last: &DensityState,
                states: &[DensityState],
                records: &[DiagnosticsRecord],
                meta: &RunMeta| {
        Box::new(SolveFailure {
            error,
            last_good: last.clone(),
            partial: Trajectory {
                states: states.to_vec(),
                records: records.to_vec(),
                meta: meta.clone(),
            },
        })
    };

    if let Err(e) = config.validate().and_then(|_| rates.check_grid(&initial)) {
        return Err(fail(e, &initial, &states, &records, &meta));
    }

    let mut current = initial.clone();
    let mut dt_nominal = config.dt_init;
    for &target in &config.schedule() {
        loop {
            let remaining = target - current.t();
            if remaining <= 1e-12 * target.max(1.0) {
                break;
            }
            let freq = rates.max_loss_frequency(current.values());
            let cap = if freq > 0.0 {
                config.safety / freq
            } else {
                f64::INFINITY
            };
            let h = dt_nominal.min(cap).max(config.dt_min).min(remaining);

            let step = match config.integrator {
                Integrator::ExplicitHeun => step_explicit(&current, rates, h, config.dt_min),
                Integrator::Picard => picard_with_halving(&current, rates, h, config),
            };
            let out = match step {
                Ok(out) => out,
                Err(e) => return Err(fail(e, &current, &states, &records, &meta)),
            };
            meta.accepted_steps += 1;
            meta.rejected_steps += out.rejections;
            meta.picard_iterations += out.iterations;
            meta.clipped_mass += out.clipped_mass;
            if out.rejections > 0 {
                dt_nominal = out.dt_used;
            } else if !config.fixed_step {
                dt_nominal = (dt_nominal * 2.0).min(config.dt_init);
            }
            current = out.state;
        }
        current = current.with_time(target);
        let rec = DiagnosticsRecord::compute(&current, &initial, &config.record);
        meta.mass_drift = meta.mass_drift.max(rec.mass_drift);
        states.push(current.clone());
        records.push(rec);
    }

    Ok(Trajectory {
        states,
        records,
        meta,
    })
}

fn picard_with_halving(
    state: &DensityState,
    rates: &CoagRates,
    dt: f64,
    config: &SolverConfig,
) -> Result<StepOutcome> {
    let mut h = dt;
    let mut rejections = 0;
    loop {
        match step_fixed_point(state, rates, h, config.picard_tol, config.picard_max_iter) {
            Ok(mut out) => {
                out.rejections = rejections;
                return Ok(out);
            }
            Err(CoagError::NoConvergence { .. }) if h * 0.5 >= config.dt_min => {
                rejections += 1;
                h *= 0.5;
            }
            Err(CoagError::NoConvergence { last_update, .. }) => {
                return Err(CoagError::StepFailure {
                    t: state.t(),
                    dt: h * 0.5,
                    dt_min: config.dt_min,
                    reason: format!(
                        "the Picard iteration did not converge (last update {last_update:e})"
                    ),
                })
            }
            Err(e) => return Err(e),
        }
    }
}

/// `sum_k |N_k(t) - N_k(0) - int_0^t rhs_k ds|`, the time integral taken by
/// the trapezoid rule over the stored output times.
pub fn residual_integral_form(traj: &Trajectory, rates: &CoagRates, t: f64) -> Result<f64> {
    if traj.states.len() < 2 {
        return Err(CoagError::Trajectory(
            "the integral-form residual needs at least two stored times".into(),
        ));
    }
    let idx = traj
        .index_of(t)
        .ok_or_else(|| CoagError::Trajectory(format!("t = {t} is not an output time")))?;
    let m = traj.initial().values().len();
    let mut integral = vec![0.0; m];
    let mut prev = rhs(&traj.states[0], rates)?;
    for w in 1..=idx {
        let cur = rhs(&traj.states[w], rates)?;
        let h = traj.states[w].t() - traj.states[w - 1].t();
        for k in 0..m {
            integral[k] += 0.5 * h * (prev[k] + cur[k]);
        }
        prev = cur;
    }
    let (n0, nt) = (traj.states[0].values(), traj.states[idx].values());
    Ok((0..m).map(|k| (nt[k] - n0[k] - integral[k]).abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pivot() -> (Arc<SizeGrid>, CoagRates) {
        let grid = Arc::new(SizeGrid::with_pivots(vec![0.5, 1.5, 2.5], vec![1.0, 2.0]).unwrap());
        let k = KernelSpec::constant(1.0).unwrap();
        let rates = precompute_rates(Arc::clone(&grid), &k, CutoffParam::new(100.0).unwrap()).unwrap();
        (grid, rates)
    }

    #[test]
    fn mass_split_examples() {
        let p = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            mass_split(&p, 3.0),
            MassSplit {
                lo: 2,
                w_lo: 1.0,
                hi: None
            }
        );
        let s = mass_split(&p, 3.5);
        assert_eq!(s.lo, 2);
        assert_eq!(s.w_lo, 0.5);
        assert_eq!(s.hi, Some((3, 0.5)));
        let s = mass_split(&p, 5.0);
        assert_eq!(s.lo, 3);
        assert_eq!(s.w_lo * 4.0, 5.0);
    }

    #[test]
    fn cutoff_pairs_have_zero_rate() {
        let grid = Arc::new(
            SizeGrid::with_pivots(vec![0.02, 0.08, 4.5, 5.5, 6.5, 20.0], vec![0.05, 1.0, 5.0, 6.0, 10.0])
                .unwrap(),
        );
        let k = KernelSpec::smoluchowski();
        let rates = precompute_rates(grid, &k, CutoffParam::new(10.0).unwrap()).unwrap();
        assert_eq!(rates.rate(3, 2), 0.0); // 6 + 5 > 10
        assert_eq!(rates.rate(0, 1), 0.0); // 0.05 < 1/10
        assert_eq!(rates.rate(1, 2), k.eval(1.0, 5.0).unwrap());
        assert_eq!(rates.rate(1, 2), rates.rate(2, 1));
    }

    #[test]
    fn empty_system_is_rejected() {
        let grid = Arc::new(SizeGrid::geometric(20.0, 40.0, 4).unwrap());
        let k = KernelSpec::constant(1.0).unwrap();
        assert!(matches!(
            precompute_rates(grid, &k, CutoffParam::new(10.0).unwrap()),
            Err(CoagError::EmptySystem(_))
        ));
    }

    #[test]
    fn rhs_two_pivot_example() {
        let (grid, rates) = two_pivot();
        let s = DensityState::new(grid, 0.0, vec![2.0, 0.0]).unwrap();
        let d = rhs(&s, &rates).unwrap();
        assert_eq!(d, vec![-4.0, 2.0]);
        assert_eq!(1.0 * d[0] + 2.0 * d[1], 0.0);
        let e = euler_substep(&s, &rates, 0.1).unwrap();
        assert!((e[0] - 1.6).abs() < 1e-15 && (e[1] - 0.2).abs() < 1e-15);
        assert!((e[0] + 2.0 * e[1] - 2.0).abs() < 1e-15);
        assert_eq!(euler_substep(&s, &rates, 0.0).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn zero_state_has_zero_rhs() {
        let (grid, rates) = two_pivot();
        let z = DensityState::zeros(grid);
        assert_eq!(rhs(&z, &rates).unwrap(), vec![0.0, 0.0]);
        let out = step_explicit(&z, &rates, 10.0, 1e-6).unwrap();
        assert_eq!(out.state.values(), &[0.0, 0.0]);
    }

    #[test]
    fn inactive_support_gives_zero_rhs() {
        let grid = Arc::new(SizeGrid::geometric(6.0, 40.0, 6).unwrap());
        let k = KernelSpec::constant(1.0).unwrap();
        let rates = precompute_rates(Arc::clone(&grid), &k, CutoffParam::new(10.0).unwrap()).unwrap();
        assert_eq!(rates.active_pairs(), 0);
        let s = DensityState::new(grid, 0.0, vec![1.0; 6]).unwrap();
        assert!(rhs(&s, &rates).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let (_, rates) = two_pivot();
        let other = Arc::new(SizeGrid::geometric(1.0, 4.0, 2).unwrap());
        let s = DensityState::zeros(other);
        assert_eq!(rhs(&s, &rates), Err(CoagError::GridMismatch));
    }

    #[test]
    fn heun_rejects_then_fails_below_dt_min() {
        let (grid, rates) = two_pivot();
        let s = DensityState::new(grid, 0.0, vec![2.0, 0.0]).unwrap();
        let out = step_explicit(&s, &rates, 1.0, 1e-3).unwrap();
        assert!(out.rejections > 0 && out.dt_used < 1.0);
        assert!(out.state.values().iter().all(|&v| v >= 0.0));
        assert!(matches!(
            step_explicit(&s, &rates, 1.0, 0.9),
            Err(CoagError::StepFailure { .. })
        ));
    }

    #[test]
    fn picard_examples() {
        let (grid, rates) = two_pivot();
        let s = DensityState::new(grid, 0.0, vec![2.0, 0.0]).unwrap();
        let out = step_fixed_point(&s, &rates, 0.0, 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.state.values(), s.values());

        let dt = 1e-3;
        let p = step_fixed_point(&s, &rates, dt, 1e-12, 20).unwrap();
        let h = step_explicit(&s, &rates, dt, 1e-9).unwrap();
        for (a, b) in p.state.values().iter().zip(h.state.values()) {
            assert!((a - b).abs() < 20.0 * dt * dt, "{a} vs {b}");
        }
        assert!(p.iterations <= 20);

        assert!(matches!(
            step_fixed_point(&s, &rates, 1e3, 1e-12, 50),
            Err(CoagError::NoConvergence { .. })
        ));
    }

    #[test]
    fn solve_zero_initial_state_stays_zero() {
        let grid = Arc::new(SizeGrid::geometric(1e-2, 10.0, 30).unwrap());
        let z = DensityState::zeros(grid);
        for k in [KernelSpec::smoluchowski(), KernelSpec::eke()] {
            let cfg = SolverConfig::new(CutoffParam::new(10.0).unwrap(), 1.0).with_output_every(0.25);
            let traj = solve(&z, &k, &cfg).unwrap();
            assert_eq!(traj.states.len(), 5);
            assert!(traj.states.iter().all(|s| s.values().iter().all(|&v| v == 0.0)));
            assert_eq!(residual_integral_form(&traj, &precompute_rates(Arc::clone(z.grid()), &k, cfg.n).unwrap(), 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn residual_needs_two_times_and_vanishes_at_zero() {
        let (grid, rates) = two_pivot();
        let s = DensityState::new(grid, 0.0, vec![2.0, 0.0]).unwrap();
        let single = Trajectory::from_states(vec![s.clone()], &RecordSettings::default()).unwrap();
        assert!(residual_integral_form(&single, &rates, 0.0).is_err());
        let cfg = SolverConfig::new(CutoffParam::new(100.0).unwrap(), 1.0).with_output_every(0.1);
        let traj = solve_with_rates(&s, &rates, "constant", &cfg).unwrap();
        assert_eq!(residual_integral_form(&traj, &rates, 0.0).unwrap(), 0.0);
        assert!(residual_integral_form(&traj, &rates, 0.55).is_err());
    }

    #[test]
    fn config_validation() {
        let n = CutoffParam::new(10.0).unwrap();
        let mut c = SolverConfig::new(n, 1.0);
        assert!(c.validate().is_ok());
        c.dt_min = 1.0;
        assert!(c.validate().is_err());
        let mut c = SolverConfig::new(n, 1.0);
        c.output_times = vec![0.5, 0.25];
        assert!(c.validate().is_err());
        let mut c = SolverConfig::new(n, 1.0);
        c.safety = 0.0;
        assert!(c.validate().is_err());
        assert!(SolverConfig::new(n, 0.0).validate().is_err());
    }

    #[test]
    fn stiff_settings_fail_with_last_good_state() {
        let (grid, rates) = two_pivot();
        let s = DensityState::new(grid, 0.0, vec![2.0, 0.0]).unwrap();
        let mut cfg = SolverConfig::new(CutoffParam::new(100.0).unwrap(), 1.0);
        // forcing steps far beyond the positivity limit with no room to halve
        cfg.dt_init = 5.0;
        cfg.dt_min = 5.0;
        cfg.t_final = 10.0;
        cfg.safety = 1.0;
        let err = solve_with_rates(&s, &rates, "constant", &cfg).unwrap_err();
        assert!(matches!(err.error, CoagError::StepFailure { .. }));
        assert_eq!(err.last_good.t(), 0.0);
        assert_eq!(err.partial.states.len(), 1);
    }
}
