//! Initial number-density profiles `u0(x)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{CoagError, Result};

type DensityFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A non-negative density on `(0, inf)` with a known support interval and
/// optional interior discontinuities (used to split quadrature panels).
#[derive(Clone)]
pub struct InitialProfile {
    name: String,
    f: Arc<DensityFn>,
    support: (f64, f64),
    breakpoints: Vec<f64>,
}

impl fmt::Debug for InitialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialProfile")
            .field("name", &self.name)
            .field("support", &self.support)
            .finish()
    }
}

impl InitialProfile {
    /// `u0(x) = e^{-x}`.
    pub fn exp() -> Self {
        Self::custom("exp", |x| (-x).exp(), (0.0, f64::INFINITY))
    }

    /// `u0(x) = x e^{-x}`.
    pub fn xexp() -> Self {
        Self::custom("xexp", |x| x * (-x).exp(), (0.0, f64::INFINITY))
    }

    /// Indicator of `[a, b]`.
    pub fn indicator(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > a && b.is_finite()) {
            return Err(CoagError::InvalidParameter(format!(
                "indicator needs 0 < a < b < inf, got [{a}, {b}]"
            )));
        }
        let mut p = Self::custom(
            &format!("indicator[{a},{b}]"),
            move |x| if (a..=b).contains(&x) { 1.0 } else { 0.0 },
            (a, b),
        );
        p.breakpoints = vec![a, b];
        Ok(p)
    }

    /// Piecewise-linear interpolation of `(x, u)` samples, zero outside.
    pub fn tabulated(xs: Vec<f64>, us: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != us.len() {
            return Err(CoagError::InvalidParameter(
                "tabulated profile needs at least two (x, u) rows of equal length".into(),
            ));
        }
        if xs[0] <= 0.0 || xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoagError::InvalidParameter(
                "tabulated sizes must be positive and strictly increasing".into(),
            ));
        }
        if let Some((&x, &u)) = xs.iter().zip(&us).find(|(_, u)| !u.is_finite() || **u < 0.0) {
            return Err(CoagError::BadDensity { x, value: u });
        }
        let support = (xs[0], *xs.last().unwrap());
        let breakpoints = xs.clone();
        let f = move |x: f64| {
            if x < xs[0] || x > xs[xs.len() - 1] {
                return 0.0;
            }
            let k = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
            let (x0, x1) = (xs[k - 1], xs[k]);
            let w = (x - x0) / (x1 - x0);
            us[k - 1] * (1.0 - w) + us[k] * w
        };
        let mut p = Self::custom("tabulated", f, support);
        p.breakpoints = breakpoints;
        Ok(p)
    }

    pub fn custom<F>(name: &str, f: F, support: (f64, f64)) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        InitialProfile {
            name: name.to_string(),
            f: Arc::new(f),
            support,
            breakpoints: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub(crate) fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }
}
