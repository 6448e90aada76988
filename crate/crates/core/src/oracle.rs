//! Independent references: the closed-form constant-kernel solution and a
//! Marcus-Lushnikov particle simulation.
//!
//! The particle system lives in a box of volume `V`, so `count / V` is a
//! number concentration. Each unordered pair coalesces at rate
//! `K(x_i, x_j) / V`. Events are generated by thinning: candidate times come
//! from the majorant rate `K_hat n (n - 1) / (2V)`, a uniformly drawn pair is
//! accepted with probability `K(x_i, x_j) / K_hat`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{CoagError, Result};
use crate::grid::SizeGrid;
use crate::kernels::KernelSpec;
use crate::profile::InitialProfile;

/// Constant-kernel (`K = 1`) solution for `u0 = e^{-x}`:
/// `u(x, t) = (2 / (2 + t))^2 exp(-2x / (2 + t))`.
pub fn analytic_constant_kernel(x: f64, t: f64) -> f64 {
    let a = 2.0 / (2.0 + t);
    a * a * (-a * x).exp()
}

/// Cell integrals of [`analytic_constant_kernel`] over `grid`.
pub fn analytic_constant_kernel_cells(grid: &SizeGrid, t: f64) -> Vec<f64> {
    let a = 2.0 / (2.0 + t);
    grid.edges()
        .windows(2)
        .map(|w| a * ((-a * w[0]).exp() - (-a * w[1]).exp()))
        .collect()
}

/// Number concentration under `dM0/dt = -M0^2 / 2`.
pub fn analytic_m0_constant(t: f64, m0_0: f64) -> f64 {
    2.0 * m0_0 / (2.0 + m0_0 * t)
}

/// Points used to tabulate the cumulative distribution of `u0`.
pub const SAMPLER_POINTS: usize = 100_001;

/// Inverse-transform sampler for the normalized density `u0 / int u0`.
#[derive(Clone, Debug)]
pub struct SizeSampler {
    xs: Vec<f64>,
    cdf: Vec<f64>,
    integral: f64,
}

impl SizeSampler {
    pub fn new(profile: &InitialProfile) -> Result<Self> {
        let (lo, hi) = sampling_range(profile)?;
        let mut xs = if profile.support().1.is_finite() && profile.support().0 > 0.0 {
            (0..SAMPLER_POINTS)
                .map(|k| lo + (hi - lo) * k as f64 / (SAMPLER_POINTS - 1) as f64)
                .collect::<Vec<_>>()
        } else {
            crate::kernels::log_space(lo, hi, SAMPLER_POINTS)
        };
        xs[0] = lo;
        *xs.last_mut().unwrap() = hi;
        let us = xs
            .iter()
            .map(|&x| {
                let u = profile.eval(x);
                if u.is_finite() && u >= 0.0 {
                    Ok(u)
                } else {
                    Err(CoagError::BadDensity { x, value: u })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cdf = Vec::with_capacity(xs.len());
        cdf.push(0.0);
        for k in 1..xs.len() {
            let prev = cdf[k - 1];
            cdf.push(prev + 0.5 * (us[k] + us[k - 1]) * (xs[k] - xs[k - 1]));
        }
        let integral = *cdf.last().unwrap();
        if !(integral > 0.0) || !integral.is_finite() {
            return Err(CoagError::Oracle(format!(
                "initial profile '{}' has integral {integral}; cannot sample particles",
                profile.name()
            )));
        }
        Ok(SizeSampler { xs, cdf, integral })
    }

    /// `int u0` over the tabulated range.
    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let target = rng.gen::<f64>() * self.integral;
        let k = self.cdf.partition_point(|&c| c <= target).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let w = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        (x0 + w * (x1 - x0)).clamp(x0, x1)
    }

    /// Draw `n` particles using the RNG stream `stream` of `seed`.
    pub fn sample_system(&self, n: usize, seed: u64, stream: u64) -> Result<ParticleSystem> {
        if n < 2 {
            return Err(CoagError::InvalidParameter(format!(
                "a particle system needs at least 2 particles, got {n}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let sizes = (0..n).map(|_| self.sample(&mut rng)).collect();
        Ok(ParticleSystem {
            sizes,
            volume: n as f64 / self.integral,
            t: 0.0,
            seed,
            stream,
            rng,
        })
    }
}

fn sampling_range(profile: &InitialProfile) -> Result<(f64, f64)> {
    let (a, b) = profile.support();
    if !(a >= 0.0) || !(b > a) {
        return Err(CoagError::Oracle(format!("invalid support [{a}, {b}]")));
    }
    let lo = if a > 0.0 { a } else { 1e-12 };
    if b.is_finite() {
        return Ok((lo, b));
    }
    // last power of two where the mass density x u0(x) is still visible
    let mut peak: f64 = 0.0;
    let mut last = 1.0;
    for k in -40..=60 {
        let x = 2f64.powi(k);
        let v = x * profile.eval(x);
        peak = peak.max(v);
        if v > 1e-17 * peak {
            last = x;
        }
    }
    Ok((lo, 4.0 * last))
}

/// Finite particle population in a box of volume `V`.
#[derive(Clone, Debug)]
pub struct ParticleSystem {
    sizes: Vec<f64>,
    volume: f64,
    t: f64,
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl ParticleSystem {
    /// Explicit sizes and volume, for tests and replay.
    pub fn from_sizes(sizes: Vec<f64>, volume: f64, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(CoagError::InvalidParameter(
                "need at least 2 particles with finite positive sizes".into(),
            ));
        }
        if !(volume > 0.0) || !volume.is_finite() {
            return Err(CoagError::InvalidParameter(format!("volume must be positive, got {volume}")));
        }
        Ok(ParticleSystem {
            sizes,
            volume,
            t: 0.0,
            seed,
            stream: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn seed(&self) -> (u64, u64) {
        (self.seed, self.stream)
    }

    pub fn total_mass(&self) -> f64 {
        self.sizes.iter().sum()
    }

    /// `sum_i x_i^p / V`.
    pub fn moment(&self, p: f64) -> f64 {
        let s: f64 = if p == 0.0 {
            self.sizes.len() as f64
        } else if p == 1.0 {
            self.sizes.iter().sum()
        } else if p == 2.0 {
            self.sizes.iter().map(|x| x * x).sum()
        } else {
            self.sizes.iter().map(|x| x.powf(p)).sum()
        };
        s / self.volume
    }
}

/// `mc_init` on stream 0 of `seed`.
pub fn mc_init(profile: &InitialProfile, n: usize, seed: u64) -> Result<ParticleSystem> {
    SizeSampler::new(profile)?.sample_system(n, seed, 0)
}

/// Event generator bound to one system and kernel.
pub struct McSimulator<'a> {
    sys: &'a mut ParticleSystem,
    kernel: &'a KernelSpec,
    k_hat: f64,
    /// Accepted coalescences.
    pub events: u64,
    /// Candidate events drawn from the majorant process.
    pub candidates: u64,
    /// Full recomputations of the majorant.
    pub refreshes: u64,
}

impl<'a> McSimulator<'a> {
    pub fn new(sys: &'a mut ParticleSystem, kernel: &'a KernelSpec) -> Result<Self> {
        let mut sim = McSimulator {
            sys,
            kernel,
            k_hat: 0.0,
            events: 0,
            candidates: 0,
            refreshes: 0,
        };
        sim.refresh()?;
        Ok(sim)
    }

    fn rate(&self, x: f64, y: f64) -> Result<f64> {
        let k = self.kernel.eval(x, y)?;
        if k.is_finite() && k >= 0.0 {
            Ok(k)
        } else {
            Err(CoagError::Oracle(format!("kernel value {k} at the pair ({x}, {y})")))
        }
    }

    /// Exact maximum over all current pairs.
    fn refresh(&mut self) -> Result<()> {
        self.refreshes += 1;
        let sizes = &self.sys.sizes;
        if let crate::kernels::KernelFamily::Constant { kappa0 } = self.kernel.family() {
            self.k_hat = *kappa0;
            return Ok(());
        }
        let mut best: f64 = 0.0;
        for i in 0..sizes.len() {
            for j in i + 1..sizes.len() {
                best = best.max(self.rate(sizes[i], sizes[j])?);
            }
        }
        self.k_hat = best;
        Ok(())
    }

    /// Raise the majorant to cover every pair involving particle `k`.
    fn include(&mut self, k: usize) -> Result<()> {
        if self.kernel.is_constant() {
            return Ok(());
        }
        let z = self.sys.sizes[k];
        let mut best = self.k_hat;
        for (j, &y) in self.sys.sizes.iter().enumerate() {
            if j != k {
                best = best.max(self.rate(z, y)?);
            }
        }
        self.k_hat = best;
        Ok(())
    }

    /// Current majorant `K_hat`.
    pub fn majorant(&self) -> f64 {
        self.k_hat
    }

    pub fn system(&self) -> &ParticleSystem {
        self.sys
    }

    /// Advance to the next coalescence unless it would happen after
    /// `horizon`; returns whether an event happened. On `false` the clock
    /// is left at `horizon` (or unchanged if fewer than two particles remain).
    pub fn next_event(&mut self, horizon: f64) -> Result<bool> {
        loop {
            let n = self.sys.sizes.len();
            if n < 2 || self.k_hat <= 0.0 {
                if n >= 2 {
                    self.sys.t = self.sys.t.max(horizon);
                }
                return Ok(false);
            }
            let total = self.k_hat * (n * (n - 1)) as f64 / (2.0 * self.sys.volume);
            let u: f64 = self.sys.rng.gen();
            let tau = -(1.0 - u).ln() / total;
            if self.sys.t + tau > horizon {
                self.sys.t = horizon;
                return Ok(false);
            }
            self.sys.t += tau;
            self.candidates += 1;
            let i = self.sys.rng.gen_range(0..n);
            let mut j = self.sys.rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let (x, y) = (self.sys.sizes[i], self.sys.sizes[j]);
            let k = self.rate(x, y)?;
            let accept: f64 = self.sys.rng.gen();
            if accept * self.k_hat >= k {
                continue;
            }
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            self.sys.sizes[lo] = x + y;
            self.sys.sizes.swap_remove(hi);
            self.events += 1;
            if k >= self.k_hat {
                // the maximal pair is gone: tighten
                self.refresh()?;
            } else {
                self.include(lo)?;
            }
            return Ok(true);
        }
    }
}

/// Moments of one stochastic run at its output times.
#[derive(Clone, Debug, PartialEq)]
pub struct McRun {
    pub times: Vec<f64>,
    pub m0: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub mm1: Vec<f64>,
    pub mm2sigma: Vec<f64>,
    pub events: u64,
    pub candidates: u64,
    pub refreshes: u64,
    pub final_count: usize,
}

/// Run the particle system to `t_final`, recording moments at
/// `output_times` (in `[0, t_final]`, increasing). `sigma` selects the
/// `M_{-2 sigma}` column.
pub fn mc_run(
    sys: &mut ParticleSystem,
    kernel: &KernelSpec,
    t_final: f64,
    output_times: &[f64],
    sigma: f64,
) -> Result<McRun> {
    if !(t_final >= 0.0) || !t_final.is_finite() {
        return Err(CoagError::InvalidParameter(format!("invalid final time {t_final}")));
    }
    if output_times.iter().any(|&t| !(t >= sys.t && t <= t_final))
        || output_times.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(CoagError::InvalidParameter(
            "output times must be increasing and lie in [t, t_final]".into(),
        ));
    }
    let mut run = McRun {
        times: Vec::with_capacity(output_times.len()),
        m0: Vec::new(),
        m1: Vec::new(),
        m2: Vec::new(),
        mm1: Vec::new(),
        mm2sigma: Vec::new(),
        events: 0,
        candidates: 0,
        refreshes: 0,
        final_count: 0,
    };
    let mut sim = McSimulator::new(sys, kernel)?;
    for &t_out in output_times {
        while sim.next_event(t_out)? {}
        let s = sim.system();
        run.times.push(t_out);
        run.m0.push(s.moment(0.0));
        run.m1.push(s.moment(1.0));
        run.m2.push(s.moment(2.0));
        run.mm1.push(s.moment(-1.0));
        run.mm2sigma.push(s.moment(-2.0 * sigma));
    }
    while sim.next_event(t_final)? {}
    run.events = sim.events;
    run.candidates = sim.candidates;
    run.refreshes = sim.refreshes;
    run.final_count = sim.system().len();
    Ok(run)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub particles: usize,
    pub runs: usize,
    pub master_seed: u64,
    pub t_final: f64,
    pub output_times: Vec<f64>,
    pub sigma: f64,
}

/// Independent runs; run `r` uses stream `r` of the master seed. Runs are
/// spread over the current rayon pool and returned in run order.
pub fn mc_ensemble(
    profile: &InitialProfile,
    kernel: &KernelSpec,
    cfg: &EnsembleConfig,
) -> Result<Vec<McRun>> {
    if cfg.runs == 0 {
        return Err(CoagError::InvalidParameter("ensemble needs at least one run".into()));
    }
    let sampler = SizeSampler::new(profile)?;
    (0..cfg.runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut sys = sampler.sample_system(cfg.particles, cfg.master_seed, r)?;
            mc_run(&mut sys, kernel, cfg.t_final, &cfg.output_times, cfg.sigma)
        })
        .collect()
}

/// Per-time mean and standard error of each moment.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentStats {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub runs: usize,
    pub times: Vec<f64>,
    pub m0: MomentStats,
    pub m1: MomentStats,
    pub m2: MomentStats,
    pub mm1: MomentStats,
    pub mm2sigma: MomentStats,
}

pub fn ensemble_moments(runs: &[McRun]) -> Result<EnsembleStats> {
    if runs.len() < 2 {
        return Err(CoagError::Oracle(
            "standard errors need at least two runs".into(),
        ));
    }
    let times = runs[0].times.clone();
    if runs.iter().any(|r| r.times != times) {
        return Err(CoagError::Oracle("runs have different output times".into()));
    }
    let stats = |get: fn(&McRun) -> &Vec<f64>| {
        let r = runs.len() as f64;
        let mut mean = Vec::with_capacity(times.len());
        let mut se = Vec::with_capacity(times.len());
        for k in 0..times.len() {
            let m = runs.iter().map(|run| get(run)[k]).sum::<f64>() / r;
            let var = runs.iter().map(|run| (get(run)[k] - m).powi(2)).sum::<f64>() / (r - 1.0);
            mean.push(m);
            se.push((var / r).sqrt());
        }
        MomentStats { mean, se }
    };
    Ok(EnsembleStats {
        runs: runs.len(),
        m0: stats(|r| &r.m0),
        m1: stats(|r| &r.m1),
        m2: stats(|r| &r.m2),
        mm1: stats(|r| &r.mm1),
        mm2sigma: stats(|r| &r.mm2sigma),
        times,
    })
}
