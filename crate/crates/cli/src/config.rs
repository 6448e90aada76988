//! Run configuration: TOML text, validated into core types at load time.
//!
//! Every section except `[kernel]` is optional. Defaults reproduce the
//! constant-kernel reference run (grid `[1e-3, 200]` with 200 geometric
//! cells, `n = 200`, `T = 2`, `u0 = e^{-x}`, outputs every 0.02).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use coag_core::diagnostics::{RecordSettings, TestFunction};
use coag_core::kernels::{BoundDomain, DEFAULT_BOUND_SAMPLES};
use coag_core::solver::Integrator;
use coag_core::{
    CoagError, CutoffParam, InitialProfile, KernelSpec, SingularBound, SizeGrid, SolverConfig,
};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kernel: RawKernel,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    initial: RawInitial,
    #[serde(default)]
    diagnostics: RawDiagnostics,
    oracle: Option<RawOracle>,
    converge: Option<RawConverge>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    family: String,
    kappa0: Option<f64>,
    a: Option<f64>,
    b: Option<f64>,
    certificate: Option<RawCertificate>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCertificate {
    kappa: f64,
    lambda: f64,
    sigma: f64,
    samples: Option<usize>,
    x_min: Option<f64>,
    x_max: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawGrid {
    x_min: f64,
    x_max: f64,
    cells: usize,
    spacing: String,
}

impl Default for RawGrid {
    fn default() -> Self {
        RawGrid {
            x_min: 1e-3,
            x_max: 200.0,
            cells: 200,
            spacing: "geometric".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSolver {
    n: f64,
    t_final: f64,
    dt_init: f64,
    dt_min: f64,
    safety: f64,
    integrator: String,
    picard_tol: f64,
    picard_max_iter: usize,
    output_every: Option<f64>,
    output_times: Option<Vec<f64>>,
    truncate_initial: bool,
}

impl Default for RawSolver {
    fn default() -> Self {
        RawSolver {
            n: 200.0,
            t_final: 2.0,
            dt_init: 1e-2,
            dt_min: 1e-10,
            safety: 0.5,
            integrator: "explicit".into(),
            picard_tol: 1e-12,
            picard_max_iter: 50,
            output_every: None,
            output_times: None,
            truncate_initial: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawInitial {
    preset: Option<String>,
    a: Option<f64>,
    b: Option<f64>,
    file: Option<PathBuf>,
}

impl Default for RawInitial {
    fn default() -> Self {
        RawInitial {
            preset: Some("exp".into()),
            a: None,
            b: None,
            file: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDiagnostics {
    checks: Vec<String>,
    tail_radii: Vec<f64>,
    test_functions: Vec<String>,
    kappa_scaling: bool,
    lemma_tol: f64,
    xm1_tol: f64,
    tail_tol: f64,
    lipschitz_rel_tol: f64,
    equicontinuity_rel_tol: f64,
}

impl Default for RawDiagnostics {
    fn default() -> Self {
        RawDiagnostics {
            checks: ALL_CHECKS.iter().map(|s| s.to_string()).collect(),
            tail_radii: vec![5.0, 10.0, 20.0],
            test_functions: vec!["one".into(), "indicator01".into(), "exp".into(), "min1".into()],
            kappa_scaling: true,
            lemma_tol: 1e-8,
            xm1_tol: 1e-8,
            tail_tol: 1e-6,
            lipschitz_rel_tol: 1e-3,
            equicontinuity_rel_tol: 1e-3,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    #[serde(default = "default_particles")]
    particles: usize,
    #[serde(default = "default_runs")]
    runs: usize,
    #[serde(default)]
    seed: u64,
    output_times: Option<Vec<f64>>,
}

fn default_particles() -> usize {
    10_000
}

fn default_runs() -> usize {
    32
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConverge {
    n_list: Vec<f64>,
    times: Vec<f64>,
    test_functions: Option<Vec<String>>,
    #[serde(default = "default_true")]
    truncate_initial: bool,
}

fn default_true() -> bool {
    true
}

pub const ALL_CHECKS: [&str; 5] = ["lemma", "xm1", "tail", "lipschitz", "equicontinuity"];

#[derive(Clone, Debug)]
pub struct Checks {
    pub lemma: bool,
    pub xm1: bool,
    pub tail: bool,
    pub lipschitz: bool,
    pub equicontinuity: bool,
}

impl Checks {
    pub fn any(&self) -> bool {
        self.lemma || self.xm1 || self.tail || self.lipschitz || self.equicontinuity
    }
}

#[derive(Clone, Debug)]
pub struct DiagnosticsSettings {
    pub checks: Checks,
    pub tail_radii: Vec<f64>,
    pub test_functions: Vec<TestFunction>,
    /// Multiply the time-Lipschitz and equicontinuity constants by kappa.
    pub kappa_scaling: bool,
    /// Absolute tolerance of the weighted moment bound, in units of `L`.
    pub lemma_tol: f64,
    pub xm1_tol: f64,
    pub tail_tol: f64,
    pub lipschitz_rel_tol: f64,
    pub equicontinuity_rel_tol: f64,
}

#[derive(Clone, Debug)]
pub struct OracleSettings {
    pub particles: usize,
    pub runs: usize,
    pub seed: u64,
    pub output_times: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ConvergeSettings {
    pub n_list: Vec<f64>,
    pub times: Vec<f64>,
    pub test_functions: Vec<TestFunction>,
    pub truncate_initial: bool,
}

#[derive(Clone, Debug)]
pub struct VerifySettings {
    pub domain: BoundDomain,
    pub samples: usize,
}

/// A fully validated configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    /// Certificate given in the file.
    pub certificate: Option<SingularBound>,
    /// Certificate used by the diagnostics: the file's, else the family default.
    pub bound: Option<SingularBound>,
    pub verify: VerifySettings,
    pub grid: Arc<SizeGrid>,
    pub solver: SolverConfig,
    pub truncate_initial: bool,
    pub initial: InitialProfile,
    pub diagnostics: DiagnosticsSettings,
    pub oracle: Option<OracleSettings>,
    pub converge: Option<ConvergeSettings>,
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, path, base)
}

/// Parse and validate configuration text; relative file names resolve
/// against `base`.
pub fn parse_config(text: &str, path: &Path, base: &Path) -> CliResult<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        CliError::Parse {
            path: path.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })?;
    validate(raw, base)
}

fn at(key: &str) -> impl Fn(CoagError) -> CliError + '_ {
    move |e| CliError::invalid(key, e.to_string())
}

fn validate(raw: RawConfig, base: &Path) -> CliResult<RunConfig> {
    let kernel = build_kernel(&raw.kernel)?;
    let (certificate, verify) = match &raw.kernel.certificate {
        Some(c) => {
            let b = SingularBound::new(c.kappa, c.lambda, c.sigma)
                .map_err(at("kernel.certificate"))?;
            let domain = BoundDomain::square(c.x_min.unwrap_or(1e-6), c.x_max.unwrap_or(1e6));
            if !(domain.x_lo > 0.0 && domain.x_hi >= domain.x_lo && domain.x_hi.is_finite()) {
                return Err(CliError::invalid(
                    "kernel.certificate.x_min",
                    "sampling range must satisfy 0 < x_min <= x_max < inf",
                ));
            }
            let samples = c.samples.unwrap_or(DEFAULT_BOUND_SAMPLES);
            if samples == 0 {
                return Err(CliError::invalid("kernel.certificate.samples", "must be >= 1"));
            }
            (Some(b), VerifySettings { domain, samples })
        }
        None => (
            None,
            VerifySettings {
                domain: BoundDomain::default(),
                samples: DEFAULT_BOUND_SAMPLES,
            },
        ),
    };
    let bound = certificate.or_else(|| kernel.default_bound());

    let g = &raw.grid;
    let grid = match g.spacing.as_str() {
        "geometric" => SizeGrid::geometric(g.x_min, g.x_max, g.cells),
        "uniform" => SizeGrid::uniform(g.x_min, g.x_max, g.cells),
        other => {
            return Err(CliError::invalid(
                "grid.spacing",
                format!("expected \"geometric\" or \"uniform\", got \"{other}\""),
            ))
        }
    }
    .map_err(at("grid"))?;
    let grid = Arc::new(grid);

    let diagnostics = build_diagnostics(&raw.diagnostics)?;
    let sigma = bound.map(|b| b.sigma).unwrap_or(0.0);
    if diagnostics.checks.any() && bound.is_none() {
        return Err(CliError::invalid(
            "kernel.certificate",
            "bound checks need (kappa, lambda, sigma); add a certificate or disable diagnostics.checks",
        ));
    }
    let solver = build_solver(&raw.solver, sigma, &diagnostics)?;
    let initial = build_initial(&raw.initial, base)?;

    let oracle = match raw.oracle {
        None => None,
        Some(o) => Some(build_oracle(o, &solver)?),
    };
    let converge = match raw.converge {
        None => None,
        Some(c) => Some(build_converge(c, &diagnostics, &grid)?),
    };

    Ok(RunConfig {
        kernel,
        certificate,
        bound,
        verify,
        grid,
        solver,
        truncate_initial: raw.solver.truncate_initial,
        initial,
        diagnostics,
        oracle,
        converge,
    })
}

fn build_kernel(k: &RawKernel) -> CliResult<KernelSpec> {
    let unused = |key: &str, present: bool| {
        if present {
            Err(CliError::invalid(
                &format!("kernel.{key}"),
                format!("not a parameter of the {} kernel", k.family),
            ))
        } else {
            Ok(())
        }
    };
    match k.family.as_str() {
        "constant" => {
            unused("a", k.a.is_some())?;
            unused("b", k.b.is_some())?;
            KernelSpec::constant(k.kappa0.unwrap_or(1.0)).map_err(at("kernel.kappa0"))
        }
        "smoluchowski" | "eke" => {
            unused("kappa0", k.kappa0.is_some())?;
            unused("a", k.a.is_some())?;
            unused("b", k.b.is_some())?;
            Ok(if k.family == "eke" {
                KernelSpec::eke()
            } else {
                KernelSpec::smoluchowski()
            })
        }
        "granulation" => {
            unused("kappa0", k.kappa0.is_some())?;
            KernelSpec::granulation(k.a.unwrap_or(1.0), k.b.unwrap_or(0.25)).map_err(at("kernel"))
        }
        other => Err(CliError::invalid(
            "kernel.family",
            format!("expected constant, smoluchowski, eke or granulation, got \"{other}\""),
        )),
    }
}

fn build_solver(s: &RawSolver, sigma: f64, diag: &DiagnosticsSettings) -> CliResult<SolverConfig> {
    let n = CutoffParam::new(s.n).map_err(at("solver.n"))?;
    let mut cfg = SolverConfig::new(n, s.t_final);
    cfg.dt_init = s.dt_init;
    cfg.dt_min = s.dt_min;
    cfg.safety = s.safety;
    cfg.picard_tol = s.picard_tol;
    cfg.picard_max_iter = s.picard_max_iter;
    cfg.integrator = match s.integrator.as_str() {
        "explicit" | "heun" => Integrator::ExplicitHeun,
        "picard" => Integrator::Picard,
        other => {
            return Err(CliError::invalid(
                "solver.integrator",
                format!("expected \"explicit\" or \"picard\", got \"{other}\""),
            ))
        }
    };
    if !(s.t_final > 0.0 && s.t_final.is_finite()) {
        return Err(CliError::invalid("solver.t_final", "must be positive and finite"));
    }
    match (&s.output_times, s.output_every) {
        (Some(_), Some(_)) => {
            return Err(CliError::invalid(
                "solver.output_times",
                "give either output_times or output_every, not both",
            ))
        }
        (Some(times), None) => cfg.output_times = times.clone(),
        (None, every) => {
            let every = every.unwrap_or(0.02_f64.min(s.t_final));
            if !(every > 0.0 && every <= s.t_final) {
                return Err(CliError::invalid(
                    "solver.output_every",
                    "must lie in (0, t_final]",
                ));
            }
            cfg = cfg.with_output_every(every);
        }
    }
    cfg.record = RecordSettings::new(sigma, diag.tail_radii.clone()).map_err(at("diagnostics"))?;
    cfg.validate().map_err(at("solver"))?;
    Ok(cfg)
}

fn build_initial(i: &RawInitial, base: &Path) -> CliResult<InitialProfile> {
    match (&i.preset, &i.file) {
        (Some(_), Some(_)) => Err(CliError::invalid(
            "initial.file",
            "give either a preset or a file, not both",
        )),
        (None, None) => Err(CliError::invalid("initial", "needs a preset or a file")),
        (None, Some(file)) => {
            if i.a.is_some() || i.b.is_some() {
                return Err(CliError::invalid("initial.a", "only used by the indicator preset"));
            }
            let path = base.join(file);
            let text = fs::read_to_string(&path).map_err(|source| CliError::Read {
                path: path.clone(),
                source,
            })?;
            let (xs, us) = parse_table(&text, &path)?;
            InitialProfile::tabulated(xs, us).map_err(at("initial.file"))
        }
        (Some(p), None) => {
            let plain = |p: InitialProfile| {
                if i.a.is_some() || i.b.is_some() {
                    Err(CliError::invalid("initial.a", "only used by the indicator preset"))
                } else {
                    Ok(p)
                }
            };
            match p.as_str() {
                "exp" => plain(InitialProfile::exp()),
                "xexp" => plain(InitialProfile::xexp()),
                "indicator" => {
                    let (a, b) = i.a.zip(i.b).ok_or_else(|| {
                        CliError::invalid("initial", "the indicator preset needs a and b")
                    })?;
                    InitialProfile::indicator(a, b).map_err(at("initial"))
                }
                other => Err(CliError::invalid(
                    "initial.preset",
                    format!("expected exp, xexp or indicator, got \"{other}\""),
                )),
            }
        }
    }
}

/// Two numeric columns separated by commas or whitespace; `#` starts a
/// comment and a non-numeric first row is taken as a header.
fn parse_table(text: &str, path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let (mut xs, mut us) = (Vec::new(), Vec::new());
    let mut seen_row = false;
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parsed: Option<Vec<f64>> = cols.iter().map(|c| c.parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 2 => {
                xs.push(v[0]);
                us.push(v[1]);
            }
            None if !seen_row => {}
            _ => {
                return Err(CliError::Parse {
                    path: path.to_path_buf(),
                    line: k + 1,
                    message: "expected two numeric columns (x, u)".into(),
                })
            }
        }
        seen_row = true;
    }
    Ok((xs, us))
}

fn test_functions(names: &[String], key: &str) -> CliResult<Vec<TestFunction>> {
    names
        .iter()
        .map(|n| TestFunction::by_name(n).map_err(at(key)))
        .collect()
}

fn build_diagnostics(d: &RawDiagnostics) -> CliResult<DiagnosticsSettings> {
    for c in &d.checks {
        if !ALL_CHECKS.contains(&c.as_str()) {
            return Err(CliError::invalid(
                "diagnostics.checks",
                format!("unknown check \"{c}\" (expected one of {})", ALL_CHECKS.join(", ")),
            ));
        }
    }
    let has = |name: &str| d.checks.iter().any(|c| c == name);
    for (key, v) in [
        ("lemma_tol", d.lemma_tol),
        ("xm1_tol", d.xm1_tol),
        ("tail_tol", d.tail_tol),
        ("lipschitz_rel_tol", d.lipschitz_rel_tol),
        ("equicontinuity_rel_tol", d.equicontinuity_rel_tol),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(CliError::invalid(
                &format!("diagnostics.{key}"),
                "tolerances must be finite and >= 0",
            ));
        }
    }
    let fns = test_functions(&d.test_functions, "diagnostics.test_functions")?;
    if let Some(f) = fns.iter().find(|f| f.name() == "x") {
        return Err(CliError::invalid(
            "diagnostics.test_functions",
            format!("equicontinuity needs bounded test functions, \"{}\" is not", f.name()),
        ));
    }
    Ok(DiagnosticsSettings {
        checks: Checks {
            lemma: has("lemma"),
            xm1: has("xm1"),
            tail: has("tail"),
            lipschitz: has("lipschitz"),
            equicontinuity: has("equicontinuity"),
        },
        tail_radii: d.tail_radii.clone(),
        test_functions: fns,
        kappa_scaling: d.kappa_scaling,
        lemma_tol: d.lemma_tol,
        xm1_tol: d.xm1_tol,
        tail_tol: d.tail_tol,
        lipschitz_rel_tol: d.lipschitz_rel_tol,
        equicontinuity_rel_tol: d.equicontinuity_rel_tol,
    })
}

fn build_oracle(o: RawOracle, solver: &SolverConfig) -> CliResult<OracleSettings> {
    if o.particles < 2 {
        return Err(CliError::invalid("oracle.particles", "must be >= 2"));
    }
    if o.runs < 2 {
        return Err(CliError::invalid(
            "oracle.runs",
            "needs at least 2 runs for a standard error",
        ));
    }
    let output_times = match o.output_times {
        None => solver.output_times.clone(),
        Some(times) => {
            for &t in &times {
                let on_grid = solver
                    .output_times
                    .iter()
                    .any(|&s| (s - t).abs() <= 1e-12 * s.max(1.0));
                if !on_grid {
                    return Err(CliError::invalid(
                        "oracle.output_times",
                        format!("time {t} is not a solver output time"),
                    ));
                }
            }
            if times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CliError::invalid("oracle.output_times", "must be strictly increasing"));
            }
            times
        }
    };
    Ok(OracleSettings {
        particles: o.particles,
        runs: o.runs,
        seed: o.seed,
        output_times,
    })
}

fn build_converge(
    c: RawConverge,
    diag: &DiagnosticsSettings,
    grid: &SizeGrid,
) -> CliResult<ConvergeSettings> {
    if c.n_list.len() < 2 {
        return Err(CliError::invalid("converge.n_list", "needs at least two values to compare"));
    }
    if c.n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::invalid("converge.n_list", "must be strictly increasing"));
    }
    for &n in &c.n_list {
        CutoffParam::new(n).map_err(at("converge.n_list"))?;
    }
    let n_max = *c.n_list.last().unwrap();
    if grid.x_min() > 1.0 / n_max || grid.x_max() < n_max {
        return Err(CliError::invalid(
            "grid",
            format!("a study up to n = {n_max} needs x_min <= 1/{n_max} and x_max >= {n_max}"),
        ));
    }
    if c.times.is_empty() || c.times.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
        return Err(CliError::invalid("converge.times", "must be non-empty, finite and >= 0"));
    }
    if c.times.iter().all(|&t| t == 0.0) {
        return Err(CliError::invalid("converge.times", "needs a positive time"));
    }
    let test_functions = match c.test_functions {
        Some(names) => test_functions(&names, "converge.test_functions")?,
        None => diag.test_functions.clone(),
    };
    Ok(ConvergeSettings {
        n_list: c.n_list,
        times: c.times,
        test_functions,
        truncate_initial: c.truncate_initial,
    })
}
