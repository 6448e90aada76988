//! Coagulation kernels, the truncated (cut-off) kernel, and sampled
//! certification of the singular growth bound
//!
//! ```text
//! K(x, y) <= kappa * (1 + x + y)^lambda * (x y)^(-sigma),
//!     sigma in [0, 1/2],  lambda - sigma in [0, 1)
//! ```
//!
//! Kernels are immutable once built and can be shared freely across threads.

use std::fmt;
use std::sync::Arc;

use crate::error::{CoagError, Result};

/// Signature for user-supplied kernels.
pub type KernelFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// Kernel families with their parameters.
#[derive(Clone)]
pub enum KernelFamily {
    /// `K = kappa0`.
    Constant { kappa0: f64 },
    /// Brownian kernel `(x^{1/3} + y^{1/3}) (x^{-1/3} + y^{-1/3})`.
    Smoluchowski,
    /// Equi-partition of kinetic energy: `(x^{1/3} + y^{1/3})^2 sqrt(1/x + 1/y)`.
    Eke,
    /// Granulation kernel `(x + y)^a / (x y)^b`.
    Granulation { a: f64, b: f64 },
    /// Arbitrary binary function, checked by sampling at construction.
    Custom { name: String, f: Arc<KernelFn> },
}

impl KernelFamily {
    /// Granulation kernel with `a = 1`, `b = 1/4`, which fits the bound with
    /// `(lambda, sigma) = (1, 1/4)`.
    pub fn granulation_default() -> Self {
        KernelFamily::Granulation { a: 1.0, b: 0.25 }
    }

    pub fn name(&self) -> &str {
        match self {
            KernelFamily::Constant { .. } => "constant",
            KernelFamily::Smoluchowski => "smoluchowski",
            KernelFamily::Eke => "eke",
            KernelFamily::Granulation { .. } => "granulation",
            KernelFamily::Custom { name, .. } => name,
        }
    }
}

impl fmt::Debug for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::Constant { kappa0 } => write!(f, "Constant {{ kappa0: {kappa0} }}"),
            KernelFamily::Smoluchowski => write!(f, "Smoluchowski"),
            KernelFamily::Eke => write!(f, "Eke"),
            KernelFamily::Granulation { a, b } => write!(f, "Granulation {{ a: {a}, b: {b} }}"),
            KernelFamily::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// A validated, symmetric, non-negative coagulation kernel.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    family: KernelFamily,
}

/// Build a kernel from a family description, validating its parameters.
pub fn make_kernel(family: KernelFamily) -> Result<KernelSpec> {
    match &family {
        KernelFamily::Constant { kappa0 } => {
            if !kappa0.is_finite() || *kappa0 < 0.0 {
                return Err(CoagError::InvalidParameter(format!(
                    "constant kernel needs a finite kappa0 >= 0, got {kappa0}"
                )));
            }
        }
        KernelFamily::Smoluchowski | KernelFamily::Eke => {}
        KernelFamily::Granulation { a, b } => {
            for (key, v) in [("a", a), ("b", b)] {
                if !v.is_finite() || *v < 0.0 {
                    return Err(CoagError::InvalidParameter(format!(
                        "granulation exponent {key} must be finite and >= 0, got {v}"
                    )));
                }
            }
        }
        KernelFamily::Custom { f, .. } => check_custom(f.as_ref())?,
    }
    Ok(KernelSpec { family })
}

fn check_custom(f: &KernelFn) -> Result<()> {
    let pts = log_space(1e-6, 1e6, 49);
    for &x in &pts {
        for &y in &pts {
            let k = f(x, y);
            if !k.is_finite() || k < 0.0 {
                return Err(CoagError::Inadmissible(format!(
                    "K({x}, {y}) = {k} is not finite and non-negative"
                )));
            }
            if k != f(y, x) {
                return Err(CoagError::Inadmissible(format!(
                    "K is not symmetric at ({x}, {y})"
                )));
            }
        }
    }
    Ok(())
}

impl KernelSpec {
    pub fn constant(kappa0: f64) -> Result<Self> {
        make_kernel(KernelFamily::Constant { kappa0 })
    }

    pub fn smoluchowski() -> Self {
        KernelSpec {
            family: KernelFamily::Smoluchowski,
        }
    }

    pub fn eke() -> Self {
        KernelSpec {
            family: KernelFamily::Eke,
        }
    }

    pub fn granulation(a: f64, b: f64) -> Result<Self> {
        make_kernel(KernelFamily::Granulation { a, b })
    }

    pub fn custom<F>(name: &str, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        make_kernel(KernelFamily::Custom {
            name: name.to_string(),
            f: Arc::new(f),
        })
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn name(&self) -> &str {
        self.family.name()
    }

    /// True when the rate does not depend on the sizes.
    pub fn is_constant(&self) -> bool {
        matches!(self.family, KernelFamily::Constant { .. })
    }

    /// `K(x, y)` for positive sizes.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        if !(x > 0.0 && y > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(CoagError::Domain { x, y });
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// Evaluation without the domain check; callers guarantee `x, y > 0`.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: f64, y: f64) -> f64 {
        match &self.family {
            KernelFamily::Constant { kappa0 } => *kappa0,
            KernelFamily::Smoluchowski => {
                let (cx, cy) = (x.cbrt(), y.cbrt());
                (cx + cy) * (1.0 / cx + 1.0 / cy)
            }
            KernelFamily::Eke => {
                let s = x.cbrt() + y.cbrt();
                s * s * (1.0 / x + 1.0 / y).sqrt()
            }
            KernelFamily::Granulation { a, b } => (x + y).powf(*a) / (x * y).powf(*b),
            KernelFamily::Custom { f, .. } => f(x, y),
        }
    }

    /// The truncated kernel `K_n`: equal to `K` on
    /// `{x + y <= n, x >= 1/n, y >= 1/n}` and zero elsewhere.
    pub fn eval_cutoff(&self, n: CutoffParam, x: f64, y: f64) -> Result<f64> {
        let k = self.eval(x, y)?;
        Ok(if n.contains(x, y) { k } else { 0.0 })
    }

    /// Known `(kappa, lambda, sigma)` for the named families: `(kappa0, 0, 0)`,
    /// `(3, 2/3, 1/3)`, `(3, 7/6, 1/2)` and `(1, a, b)`. `None` for custom
    /// kernels and for granulation exponents outside the admissible ranges.
    pub fn default_bound(&self) -> Option<SingularBound> {
        match &self.family {
            KernelFamily::Constant { kappa0 } => {
                SingularBound::new(if *kappa0 > 0.0 { *kappa0 } else { 1.0 }, 0.0, 0.0).ok()
            }
            KernelFamily::Smoluchowski => SingularBound::new(3.0, 2.0 / 3.0, 1.0 / 3.0).ok(),
            KernelFamily::Eke => SingularBound::new(3.0, 7.0 / 6.0, 0.5).ok(),
            KernelFamily::Granulation { a, b } => SingularBound::new(1.0, *a, *b).ok(),
            KernelFamily::Custom { .. } => None,
        }
    }
}

/// Truncation level `n >= 2` of the cut-off kernel.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct CutoffParam(f64);

impl CutoffParam {
    pub fn new(n: f64) -> Result<Self> {
        if !n.is_finite() || n < 2.0 {
            return Err(CoagError::InvalidParameter(format!(
                "truncation level n must be finite and >= 2, got {n}"
            )));
        }
        Ok(CutoffParam(n))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Whether `(x, y)` lies in the support of the cut-off kernel.
    #[inline]
    pub fn contains(self, x: f64, y: f64) -> bool {
        let inv = 1.0 / self.0;
        x + y <= self.0 && x >= inv && y >= inv
    }
}

/// Constants `(kappa, lambda, sigma)` of the singular growth bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingularBound {
    pub kappa: f64,
    pub lambda: f64,
    pub sigma: f64,
}

impl SingularBound {
    pub fn new(kappa: f64, lambda: f64, sigma: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(CoagError::InvalidBound(format!(
                "kappa must be positive and finite, got {kappa}"
            )));
        }
        if !(0.0..=0.5).contains(&sigma) {
            return Err(CoagError::InvalidBound(format!(
                "sigma must lie in [0, 1/2], got {sigma}"
            )));
        }
        let excess = lambda - sigma;
        if !(excess >= 0.0 && excess < 1.0) {
            return Err(CoagError::InvalidBound(format!(
                "lambda - sigma must lie in [0, 1), got {excess}"
            )));
        }
        Ok(SingularBound {
            kappa,
            lambda,
            sigma,
        })
    }

    /// `kappa (1 + x + y)^lambda (x y)^(-sigma)`.
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.kappa * (1.0 + x + y).powf(self.lambda) * (x * y).powf(-self.sigma)
    }

    /// Upper bound of the cut-off kernel over its whole support.
    pub fn cutoff_sup(&self, n: CutoffParam) -> f64 {
        let n = n.value();
        self.kappa * (1.0 + 2.0 * n).powf(self.lambda) * n.powf(2.0 * self.sigma)
    }
}

/// Axis-aligned sampling rectangle in `(0, inf)^2`. Degenerate ranges
/// (`lo == hi`) sample a single coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundDomain {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl BoundDomain {
    pub fn square(lo: f64, hi: f64) -> Self {
        BoundDomain {
            x_lo: lo,
            x_hi: hi,
            y_lo: lo,
            y_hi: hi,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| lo > 0.0 && hi >= lo && hi.is_finite();
        if ok(self.x_lo, self.x_hi) && ok(self.y_lo, self.y_hi) {
            Ok(())
        } else {
            Err(CoagError::InvalidParameter(format!(
                "sampling domain must lie in (0, inf)^2 with lo <= hi, got {self:?}"
            )))
        }
    }
}

impl Default for BoundDomain {
    fn default() -> Self {
        BoundDomain::square(1e-6, 1e6)
    }
}

/// Default per-axis sample count for [`verify_bound`].
pub const DEFAULT_BOUND_SAMPLES: usize = 256;

/// Outcome of a sampled bound check. `max_ratio` / `ratio` is the largest
/// observed `K / bound`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Certificate {
    Pass { max_ratio: f64 },
    Fail { x: f64, y: f64, ratio: f64 },
}

impl Certificate {
    pub fn passed(&self) -> bool {
        matches!(self, Certificate::Pass { .. })
    }
}

/// Sample `K / (kappa (1+x+y)^lambda (xy)^-sigma)` on a log-spaced
/// `samples x samples` grid plus a refined diagonal and report the worst
/// ratio. Passes iff every sampled ratio is `<= 1`.
pub fn verify_bound(
    kernel: &KernelSpec,
    bound: SingularBound,
    domain: BoundDomain,
    samples: usize,
) -> Result<Certificate> {
    // re-validate in case the struct was built by hand
    let bound = SingularBound::new(bound.kappa, bound.lambda, bound.sigma)?;
    domain.validate()?;
    if samples == 0 {
        return Err(CoagError::InvalidParameter(
            "verify_bound needs at least one sample".into(),
        ));
    }

    let xs = log_space(domain.x_lo, domain.x_hi, samples);
    let ys = log_space(domain.y_lo, domain.y_hi, samples);

    let mut worst = (f64::NAN, f64::NAN, f64::NEG_INFINITY);
    let mut visit = |x: f64, y: f64| -> Result<()> {
        let ratio = kernel.eval(x, y)? / bound.eval(x, y);
        if ratio > worst.2 || ratio.is_nan() {
            worst = (x, y, ratio);
        }
        Ok(())
    };

    for &x in &xs {
        for &y in &ys {
            visit(x, y)?;
        }
    }
    let diag_lo = domain.x_lo.max(domain.y_lo);
    let diag_hi = domain.x_hi.min(domain.y_hi);
    if diag_lo <= diag_hi {
        for d in log_space(diag_lo, diag_hi, 16 * samples) {
            visit(d, d)?;
        }
    }

    let (x, y, ratio) = worst;
    if ratio <= 1.0 {
        Ok(Certificate::Pass { max_ratio: ratio })
    } else {
        Ok(Certificate::Fail { x, y, ratio })
    }
}

pub(crate) fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 || lo == hi {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| {
            if k == 0 {
                lo
            } else if k == count - 1 {
                hi
            } else {
                (a + (b - a) * k as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_kernel_values() {
        assert_eq!(KernelSpec::constant(1.0).unwrap().eval(3.7, 0.2).unwrap(), 1.0);
        assert_eq!(KernelSpec::smoluchowski().eval(1.0, 1.0).unwrap(), 4.0);
        let eke = KernelSpec::eke().eval(1.0, 1.0).unwrap();
        assert!((eke - 4.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((eke - 5.656854).abs() < 1e-6);
        assert!((KernelSpec::smoluchowski().eval(8.0, 1.0).unwrap() - 4.5).abs() < 1e-14);
        assert!((KernelSpec::granulation(1.0, 0.5).unwrap().eval(1.0, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(KernelSpec::constant(1.0).unwrap().eval(1e-6, 1e6).unwrap(), 1.0);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(KernelSpec::constant(-1.0).is_err());
        assert!(KernelSpec::granulation(1.0, f64::NAN).is_err());
        assert!(KernelSpec::granulation(-0.5, 0.25).is_err());
        assert!(KernelSpec::custom("neg", |_, _| -1.0).is_err());
        assert!(KernelSpec::custom("skew", |x, y| x / y).is_err());
        assert!(KernelSpec::custom("sum", |x, y| x + y).is_ok());
    }

    #[test]
    fn domain_errors_on_singular_axes() {
        let k = KernelSpec::smoluchowski();
        assert!(matches!(k.eval(0.0, 1.0), Err(CoagError::Domain { .. })));
        assert!(matches!(k.eval(1.0, -2.0), Err(CoagError::Domain { .. })));
        let n = CutoffParam::new(10.0).unwrap();
        assert!(k.eval_cutoff(n, 0.0, 1.0).is_err());
    }

    #[test]
    fn cutoff_examples() {
        let k = KernelSpec::smoluchowski();
        let n = CutoffParam::new(10.0).unwrap();
        assert_eq!(k.eval_cutoff(n, 6.0, 5.0).unwrap(), 0.0);
        assert_eq!(k.eval_cutoff(n, 0.05, 1.0).unwrap(), 0.0);
        assert_eq!(k.eval_cutoff(n, 1.0, 2.0).unwrap(), k.eval(1.0, 2.0).unwrap());
        // boundary points belong to the support
        assert_eq!(k.eval_cutoff(n, 0.1, 9.9).unwrap(), k.eval(0.1, 9.9).unwrap());
    }

    #[test]
    fn cutoff_param_range() {
        assert!(CutoffParam::new(1.5).is_err());
        assert!(CutoffParam::new(f64::INFINITY).is_err());
        assert!(CutoffParam::new(2.0).is_ok());
    }

    #[test]
    fn singular_bound_ranges() {
        assert!(SingularBound::new(1.0, 0.0, 0.0).is_ok());
        assert!(SingularBound::new(1.0, 1.5, 0.9).is_err());
        assert!(SingularBound::new(1.0, 1.5, 0.3).is_err()); // lambda - sigma = 1.2
        assert!(SingularBound::new(1.0, 0.1, 0.3).is_err()); // lambda < sigma
        assert!(SingularBound::new(0.0, 0.0, 0.0).is_err());
        assert!(SingularBound::new(1.0, 1.499, 0.5).is_ok());
    }

    #[test]
    fn certificates() {
        let one = KernelSpec::constant(1.0).unwrap();
        let unit = SingularBound::new(1.0, 0.0, 0.0).unwrap();
        let cert = verify_bound(&one, unit, BoundDomain::default(), 64).unwrap();
        assert_eq!(cert, Certificate::Pass { max_ratio: 1.0 });

        let smol = KernelSpec::smoluchowski();
        let cert = verify_bound(&smol, unit, BoundDomain::square(1.0, 1.0), 8).unwrap();
        assert_eq!(
            cert,
            Certificate::Fail {
                x: 1.0,
                y: 1.0,
                ratio: 4.0
            }
        );
        let cert = verify_bound(&smol, unit, BoundDomain::default(), 32).unwrap();
        match cert {
            Certificate::Fail { ratio, .. } => assert!(ratio >= 4.0),
            other => panic!("expected failure, got {other:?}"),
        }

        let tight = SingularBound::new(3.0, 2.0 / 3.0, 1.0 / 3.0).unwrap();
        let cert = verify_bound(&smol, tight, BoundDomain::default(), DEFAULT_BOUND_SAMPLES).unwrap();
        assert!(cert.passed(), "{cert:?}");
    }

    #[test]
    fn verify_bound_rejects_bad_inputs() {
        let k = KernelSpec::smoluchowski();
        let bad = SingularBound {
            kappa: 1.0,
            lambda: 2.0,
            sigma: 0.9,
        };
        assert!(matches!(
            verify_bound(&k, bad, BoundDomain::default(), 4),
            Err(CoagError::InvalidBound(_))
        ));
        let ok = SingularBound::new(3.0, 2.0 / 3.0, 1.0 / 3.0).unwrap();
        assert!(verify_bound(&k, ok, BoundDomain::square(0.0, 1.0), 4).is_err());
        assert!(verify_bound(&k, ok, BoundDomain::default(), 0).is_err());
    }

    #[test]
    fn log_space_endpoints() {
        let v = log_space(1e-3, 1e3, 7);
        assert_eq!(v.len(), 7);
        assert_eq!(v[0], 1e-3);
        assert_eq!(v[6], 1e3);
        assert!((v[3] - 1.0).abs() < 1e-12);
        assert_eq!(log_space(2.0, 2.0, 5), vec![2.0]);
    }

    #[test]
    fn default_bounds_certify() {
        let kernels = [
            KernelSpec::constant(2.5).unwrap(),
            KernelSpec::smoluchowski(),
            KernelSpec::eke(),
            KernelSpec::granulation(1.0, 0.25).unwrap(),
        ];
        for k in &kernels {
            let b = k.default_bound().unwrap();
            let cert = verify_bound(k, b, BoundDomain::default(), 64).unwrap();
            assert!(cert.passed(), "{} {cert:?}", k.name());
        }
        assert!(KernelSpec::granulation(2.0, 0.25).unwrap().default_bound().is_none());
    }
}
