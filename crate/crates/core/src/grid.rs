//! Size-axis discretization, the discrete density state, and the weighted
//! integrals built on it (moments, the `Y` norm, weak pairings).
//!
//! A state stores per-cell number concentrations `N_i ~ int_cell u(x) dx`.
//! Moments use the pivot rule `M_p = sum_i x_i^p N_i`, which is exact for the
//! sectional representation; composite Gauss-Legendre quadrature is used only
//! when projecting a continuous profile onto the grid.

use std::sync::{Arc, OnceLock};

use crate::error::{CoagError, Result};
use crate::profile::InitialProfile;

/// Strictly increasing cell edges with one pivot inside each cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeGrid {
    edges: Vec<f64>,
    pivots: Vec<f64>,
    widths: Vec<f64>,
}

impl SizeGrid {
    /// Edges `x_min * r^k`, `r = (x_max / x_min)^(1/cells)`, pivots at the
    /// geometric mean of each cell.
    pub fn geometric(x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        check_range(x_min, x_max, cells)?;
        let (a, b) = (x_min.ln(), x_max.ln());
        let edges = (0..=cells)
            .map(|k| match k {
                0 => x_min,
                k if k == cells => x_max,
                k => (a + (b - a) * k as f64 / cells as f64).exp(),
            })
            .collect();
        Self::from_edges(edges)
    }

    /// Equal-width cells; pivots at the geometric mean of each cell.
    pub fn uniform(x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        check_range(x_min, x_max, cells)?;
        let h = (x_max - x_min) / cells as f64;
        let edges = (0..=cells)
            .map(|k| if k == cells { x_max } else { x_min + h * k as f64 })
            .collect();
        Self::from_edges(edges)
    }

    /// Geometric-mean pivots for the given edges.
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        let pivots = edges.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
        Self::with_pivots(edges, pivots)
    }

    /// Explicit edges and pivots.
    pub fn with_pivots(edges: Vec<f64>, pivots: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(CoagError::Grid("need at least one cell".into()));
        }
        if !(edges[0] > 0.0) || !edges.iter().all(|e| e.is_finite()) {
            return Err(CoagError::Grid(format!(
                "x_min must be positive and all edges finite, got x_min={}",
                edges[0]
            )));
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoagError::Grid("edges must be strictly increasing".into()));
        }
        if pivots.len() != edges.len() - 1 {
            return Err(CoagError::Grid(format!(
                "{} pivots for {} cells",
                pivots.len(),
                edges.len() - 1
            )));
        }
        for (i, &p) in pivots.iter().enumerate() {
            if !(p > edges[i] && p < edges[i + 1]) {
                return Err(CoagError::Grid(format!(
                    "pivot {p} not strictly inside cell [{}, {}]",
                    edges[i],
                    edges[i + 1]
                )));
            }
        }
        let widths = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(SizeGrid {
            edges,
            pivots,
            widths,
        })
    }

    pub fn len(&self) -> usize {
        self.pivots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivots.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn pivots(&self) -> &[f64] {
        &self.pivots
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn x_min(&self) -> f64 {
        self.edges[0]
    }

    pub fn x_max(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }
}

/// Geometric grid on `[x_min, x_max]` with `cells` cells.
pub fn build_geometric_grid(x_min: f64, x_max: f64, cells: usize) -> Result<SizeGrid> {
    SizeGrid::geometric(x_min, x_max, cells)
}

fn check_range(x_min: f64, x_max: f64, cells: usize) -> Result<()> {
    if !(x_min > 0.0) || !x_min.is_finite() {
        return Err(CoagError::Grid(format!(
            "x_min must be positive (the origin is singular), got {x_min}"
        )));
    }
    if !(x_max > x_min) || !x_max.is_finite() {
        return Err(CoagError::Grid(format!(
            "x_max must exceed x_min, got [{x_min}, {x_max}]"
        )));
    }
    if cells == 0 {
        return Err(CoagError::Grid("cell count must be at least 1".into()));
    }
    Ok(())
}

/// Per-cell number concentrations at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityState {
    t: f64,
    values: Vec<f64>,
    grid: Arc<SizeGrid>,
}

impl DensityState {
    /// Validates non-negativity and finiteness.
    pub fn new(grid: Arc<SizeGrid>, t: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CoagError::GridMismatch);
        }
        if !(t >= 0.0) || !t.is_finite() {
            return Err(CoagError::InvalidParameter(format!("time must be >= 0, got {t}")));
        }
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(CoagError::BadDensity {
                x: grid.pivots()[i],
                value: v,
            });
        }
        Ok(DensityState { t, values, grid })
    }

    pub fn zeros(grid: Arc<SizeGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        DensityState { t: 0.0, values, grid }
    }

    pub(crate) fn from_parts_unchecked(grid: Arc<SizeGrid>, t: f64, values: Vec<f64>) -> Self {
        DensityState { t, values, grid }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &Arc<SizeGrid> {
        &self.grid
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub fn moment(&self, p: f64) -> f64 {
        integrate_weighted(self, p)
    }

    pub fn mass(&self) -> f64 {
        integrate_weighted(self, 1.0)
    }

    pub fn norm_y(&self) -> f64 {
        weighted_norm_y(self)
    }

    /// The state of `x^{-sigma} u`, i.e. `N_i x_i^{-sigma}`.
    pub fn weighted(&self, sigma: f64) -> DensityState {
        let values = self
            .values
            .iter()
            .zip(self.grid.pivots())
            .map(|(n, x)| n * x.powf(-sigma))
            .collect();
        DensityState {
            t: self.t,
            values,
            grid: Arc::clone(&self.grid),
        }
    }

    /// Zero every cell whose pivot exceeds `n`, returning the removed number
    /// and mass alongside the truncated state.
    pub fn truncate_above(&self, n: f64) -> (DensityState, f64, f64) {
        let mut values = self.values.clone();
        let (mut number, mut mass) = (0.0, 0.0);
        for (v, &x) in values.iter_mut().zip(self.grid.pivots()) {
            if x > n {
                number += *v;
                mass += x * *v;
                *v = 0.0;
            }
        }
        let state = DensityState {
            t: self.t,
            values,
            grid: Arc::clone(&self.grid),
        };
        (state, number, mass)
    }
}

/// `M_p = sum_i x_i^p N_i`.
pub fn integrate_weighted(state: &DensityState, p: f64) -> f64 {
    let pivots = state.grid.pivots();
    if p == 0.0 {
        return state.values.iter().sum();
    }
    if p == 1.0 {
        return state.values.iter().zip(pivots).map(|(n, x)| x * n).sum();
    }
    state
        .values
        .iter()
        .zip(pivots)
        .map(|(n, x)| x.powf(p) * n)
        .sum()
}

/// `||u||_Y = M_1 + M_{-1}`.
pub fn weighted_norm_y(state: &DensityState) -> f64 {
    integrate_weighted(state, 1.0) + integrate_weighted(state, -1.0)
}

/// `sum_i phi(x_i) N_i`.
pub fn weak_pairing<F: Fn(f64) -> f64>(state: &DensityState, phi: F) -> Result<f64> {
    let mut acc = 0.0;
    for (n, &x) in state.values.iter().zip(state.grid.pivots()) {
        let v = phi(x);
        if !v.is_finite() {
            return Err(CoagError::BadTestFunction { x });
        }
        acc += v * n;
    }
    Ok(acc)
}

/// Projection of a profile plus what fell outside `[x_min, x_max]`.
#[derive(Clone, Debug)]
pub struct Projection {
    pub state: DensityState,
    pub dropped_number_below: f64,
    pub dropped_mass_below: f64,
    pub dropped_number_above: f64,
    pub dropped_mass_above: f64,
}

impl Projection {
    pub fn dropped_mass(&self) -> f64 {
        self.dropped_mass_below + self.dropped_mass_above
    }
}

/// Per-cell integrals of `u0` by 16-point Gauss-Legendre quadrature on each
/// cell (split at the profile's breakpoints). The profile outside the grid is
/// dropped; the dropped number and mass are reported.
pub fn project_density(profile: &InitialProfile, grid: Arc<SizeGrid>) -> Result<Projection> {
    let checked = |x: f64| -> Result<f64> {
        let v = profile.eval(x);
        if !v.is_finite() || v < 0.0 {
            Err(CoagError::BadDensity { x, value: v })
        } else {
            Ok(v)
        }
    };

    let edges = grid.edges();
    let mut values = Vec::with_capacity(grid.len());
    for w in edges.windows(2) {
        let mut total = 0.0;
        for (a, b) in split_at_breakpoints(w[0], w[1], profile) {
            total += gauss_legendre(a, b, &checked)?;
        }
        values.push(total);
    }

    let (lo, hi) = profile.support();
    let x_min = grid.x_min();
    let x_max = grid.x_max();

    let (mut nb, mut mb) = (0.0, 0.0);
    if lo < x_min {
        // geometric panels towards the origin
        let mut right = x_min.min(hi);
        let stop = lo.max(x_min * 1e-30);
        while right > stop {
            let left = (right * 0.5).max(stop);
            for (a, b) in split_at_breakpoints(left, right, profile) {
                nb += gauss_legendre(a, b, &checked)?;
                mb += gauss_legendre(a, b, &|x| Ok(x * checked(x)?))?;
            }
            right = left;
        }
    }

    let (mut na, mut ma) = (0.0, 0.0);
    if hi > x_max {
        if hi.is_finite() {
            let panels = 64;
            let h = (hi - x_max.max(lo)) / panels as f64;
            let start = x_max.max(lo);
            for k in 0..panels {
                let (a0, b0) = (start + h * k as f64, start + h * (k + 1) as f64);
                for (a, b) in split_at_breakpoints(a0, b0, profile) {
                    na += gauss_legendre(a, b, &checked)?;
                    ma += gauss_legendre(a, b, &|x| Ok(x * checked(x)?))?;
                }
            }
        } else {
            // x = x_max / s, dx = x_max / s^2 ds on s in (0, 1]
            let panels = 256;
            let h = 1.0 / panels as f64;
            for k in 0..panels {
                let (a, b) = (h * k as f64, h * (k + 1) as f64);
                na += gauss_legendre(a, b, &|s| {
                    let x = x_max / s;
                    Ok(checked(x)? * x_max / (s * s))
                })?;
                ma += gauss_legendre(a, b, &|s| {
                    let x = x_max / s;
                    Ok(x * checked(x)? * x_max / (s * s))
                })?;
            }
        }
    }

    Ok(Projection {
        state: DensityState::new(grid, 0.0, values)?,
        dropped_number_below: nb,
        dropped_mass_below: mb,
        dropped_number_above: na,
        dropped_mass_above: ma,
    })
}

fn split_at_breakpoints(a: f64, b: f64, profile: &InitialProfile) -> Vec<(f64, f64)> {
    let bps = profile.breakpoints();
    let start = bps.partition_point(|&p| p <= a);
    let mut out = Vec::new();
    let mut left = a;
    for &p in bps[start..].iter().take_while(|&&p| p < b) {
        out.push((left, p));
        left = p;
    }
    out.push((left, b));
    out
}

const GL_ORDER: usize = 16;

fn gl_rule() -> &'static ([f64; GL_ORDER], [f64; GL_ORDER]) {
    static RULE: OnceLock<([f64; GL_ORDER], [f64; GL_ORDER])> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(GL_ORDER))
}

/// Nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
fn legendre_rule<const N: usize>(n: usize) -> ([f64; N], [f64; N]) {
    let mut nodes = [0.0; N];
    let mut weights = [0.0; N];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = z;
        weights[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (nodes, weights)
}

fn gauss_legendre<F: Fn(f64) -> Result<f64>>(a: f64, b: f64, f: &F) -> Result<f64> {
    let (nodes, weights) = gl_rule();
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = 0.0;
    for (z, w) in nodes.iter().zip(weights) {
        acc += w * f(mid + half * z)?;
    }
    Ok(acc * half)
}
