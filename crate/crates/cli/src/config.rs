//! Run configuration: one TOML file, fixed schema, unknown keys rejected.
//!
//! ```toml
//! scenario = "sensitivity"
//! horizon = 2.0
//! initial = "monodisperse"          # or ["1:0.6", "2:0.2"]
//! output_dir = "runs/sens"          # optional
//!
//! [grid]
//! n_max = 64
//!
//! [kernel]
//! family = "affine-mix"
//! lambda = [0.5, 0.1, 0.05]
//! param_box = [[0, 1], [0, 1], [0, 1]]
//! phi_scale = 1.0
//! ```
//!
//! Optional tables: `[solver]`, `[stochastic]`, `[representation]`,
//! `[truncation]`.

use std::fmt;
use std::ops::Range;
use std::path::PathBuf;

use serde::Deserialize;
use toml::Spanned;

use smolsens::{BoundFunction, GridMeasure, KernelFamily, ParametricKernel, SolveOptions, TestFunction};

/// Largest grid accepted; the kernel matrix is dense.
pub const MAX_N: usize = 2048;

/// A schema violation anchored to a line of the config text.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for SchemaError {}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())]
        .iter()
        .filter(|&&b| b == b'\n')
        .count()
        + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Forward,
    Sensitivity,
    Representation,
    Truncation,
    Mlsim,
    CoupledFd,
    ValidateAll,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Forward => "forward",
            Scenario::Sensitivity => "sensitivity",
            Scenario::Representation => "representation",
            Scenario::Truncation => "truncation",
            Scenario::Mlsim => "mlsim",
            Scenario::CoupledFd => "coupled-fd",
            Scenario::ValidateAll => "validate-all",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum InitialSpec {
    Named(String),
    Atoms(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    n_max: Spanned<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSpec {
    family: Spanned<String>,
    lambda: Spanned<Vec<f64>>,
    param_box: Spanned<Vec<[f64; 2]>>,
    #[serde(default = "one")]
    phi_scale: Spanned<f64>,
    exponents: Option<Spanned<[f64; 2]>>,
}

fn one() -> Spanned<f64> {
    Spanned::new(0..0, 1.0)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSpec {
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    dt_checkpoint: Option<f64>,
    moment_ceiling: Option<f64>,
    overflow_fraction_max: Option<f64>,
    epsilon: Option<f64>,
    max_step: Option<f64>,
    fixed_step: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StochasticSpec {
    n: Option<Spanned<i64>>,
    seed: Option<u64>,
    replicas: Option<Spanned<i64>>,
    h: Option<Spanned<f64>>,
    param: Option<Spanned<i64>>,
    observe: Option<Spanned<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RepresentationSpec {
    times: Option<Spanned<Vec<f64>>>,
    functions: Option<Spanned<Vec<String>>>,
    tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruncationSpec {
    levels: Option<Spanned<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Spanned<Scenario>,
    horizon: Spanned<f64>,
    initial: Spanned<InitialSpec>,
    output_dir: Option<String>,
    grid: GridSpec,
    kernel: KernelSpec,
    #[serde(default)]
    solver: Option<Spanned<SolverSpec>>,
    #[serde(default)]
    stochastic: StochasticSpec,
    #[serde(default)]
    representation: RepresentationSpec,
    #[serde(default)]
    truncation: TruncationSpec,
}

#[derive(Clone, Debug)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub lambda: Vec<f64>,
    pub param_box: Vec<(f64, f64)>,
    pub phi_scale: f64,
}

impl KernelConfig {
    pub fn phi(&self) -> BoundFunction {
        BoundFunction::linear(self.phi_scale)
    }

    /// Catalog kernel with shape checks only; the bound hypotheses are
    /// checked separately so that they map to their own exit status.
    pub fn build(&self) -> smolsens::Result<ParametricKernel> {
        ParametricKernel::unchecked(self.family, self.lambda.clone(), self.param_box.clone(), self.phi())
    }
}

#[derive(Clone, Debug)]
pub struct StochasticConfig {
    pub n: u64,
    pub seed: u64,
    pub replicas: usize,
    pub h: f64,
    pub param: usize,
    pub observe: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RepresentationConfig {
    pub times: Vec<f64>,
    pub functions: Vec<(String, TestFunction)>,
    pub tolerance: f64,
}

/// A schema-validated run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub horizon: f64,
    pub n_max: usize,
    pub initial: GridMeasure,
    pub output_dir: Option<PathBuf>,
    pub kernel: KernelConfig,
    pub solver: SolveOptions,
    pub stochastic: StochasticConfig,
    pub representation: RepresentationConfig,
    pub truncation_levels: Vec<f64>,
}

/// Default spanning set of observables.
pub const DEFAULT_FUNCTIONS: [&str; 8] = ["one", "ind:1", "ind:2", "ind:5", "phi", "phi^2", "min:16", "le:8"];

/// Parse a test-function id: `one`, `x`, `phi`, `phi^<p>`, `ind:<k>`,
/// `le:<k>`, `min:<c>`.
pub fn parse_function(id: &str, n_max: usize, phi: &BoundFunction) -> Result<TestFunction, String> {
    let num = |s: &str| -> Result<f64, String> {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("bad number `{s}` in test function `{id}`"))
    };
    let mass = |s: &str| -> Result<u64, String> {
        s.parse::<u64>()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| format!("bad mass `{s}` in test function `{id}`"))
    };
    let f = match id {
        "one" => TestFunction::constant(n_max, 1.0),
        "x" => TestFunction::identity(n_max),
        "phi" => TestFunction::phi_power(n_max, phi, 1.0),
        _ => {
            if let Some(p) = id.strip_prefix("phi^") {
                let p = num(p)?;
                if !(0.0..=16.0).contains(&p) {
                    return Err(format!("power in `{id}` must lie in [0, 16]"));
                }
                TestFunction::phi_power(n_max, phi, p)
            } else if let Some(k) = id.strip_prefix("ind:") {
                let k = mass(k)?;
                TestFunction::from_fn(n_max, |x| if x == k { 1.0 } else { 0.0 })
            } else if let Some(k) = id.strip_prefix("le:") {
                let k = mass(k)?;
                TestFunction::from_fn(n_max, |x| if x <= k { 1.0 } else { 0.0 })
            } else if let Some(c) = id.strip_prefix("min:") {
                let c = num(c)?;
                TestFunction::from_fn(n_max, |x| (x as f64).min(c))
            } else {
                return Err(format!(
                    "unknown test function `{id}` (expected one, x, phi, phi^p, ind:k, le:k or min:c)"
                ));
            }
        }
    };
    Ok(f)
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn err(&self, span: Range<usize>, msg: impl Into<String>) -> SchemaError {
        SchemaError {
            line: (span.end > span.start).then(|| line_of(self.text, span.start)),
            message: msg.into(),
        }
    }
}

fn increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

/// Parse and validate a config file's text.
pub fn parse_config(text: &str) -> Result<RunConfig, SchemaError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| SchemaError {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    let cx = Ctx { text };

    let horizon = *raw.horizon.get_ref();
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(cx.err(raw.horizon.span(), format!("horizon must be > 0 (got {horizon})")));
    }

    let n_raw = *raw.grid.n_max.get_ref();
    if !(2..=MAX_N as i64).contains(&n_raw) {
        return Err(cx.err(raw.grid.n_max.span(), format!("n_max must lie in [2, {MAX_N}] (got {n_raw})")));
    }
    let n_max = n_raw as usize;

    let initial = match raw.initial.get_ref() {
        InitialSpec::Named(s) if s == "monodisperse" => GridMeasure::delta(n_max, 1, 1.0),
        InitialSpec::Named(s) => {
            return Err(cx.err(
                raw.initial.span(),
                format!("initial must be \"monodisperse\" or a list of \"mass:weight\" (got \"{s}\")"),
            ))
        }
        InitialSpec::Atoms(items) => {
            if items.is_empty() {
                return Err(cx.err(raw.initial.span(), "initial atom list is empty"));
            }
            let mut atoms: Vec<(usize, f64)> = Vec::new();
            for item in items {
                let bad = || cx.err(raw.initial.span(), format!("bad initial atom \"{item}\" (expected \"mass:weight\")"));
                let (m, w) = item.split_once(':').ok_or_else(bad)?;
                let m: usize = m.trim().parse().map_err(|_| bad())?;
                let w: f64 = w.trim().parse().map_err(|_| bad())?;
                if !(1..=n_max).contains(&m) {
                    return Err(cx.err(raw.initial.span(), format!("initial mass {m} outside 1..={n_max}")));
                }
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(cx.err(raw.initial.span(), format!("initial weight {w} must be finite and >= 0")));
                }
                if atoms.iter().any(|a| a.0 == m) {
                    return Err(cx.err(raw.initial.span(), format!("initial mass {m} listed twice")));
                }
                atoms.push((m, w));
            }
            let mu = GridMeasure::from_atoms(n_max, &atoms);
            if !(mu.number() > 0.0) {
                return Err(cx.err(raw.initial.span(), "initial measure has zero total weight"));
            }
            mu
        }
    };

    let ks = &raw.kernel;
    let exponents = ks.exponents.as_ref().map(|e| (e.get_ref()[0], e.get_ref()[1]));
    let family = KernelFamily::parse(ks.family.get_ref(), exponents)
        .map_err(|e| cx.err(ks.family.span(), e.to_string()))?;
    let phi_scale = *ks.phi_scale.get_ref();
    if !(phi_scale >= 1.0 && phi_scale.is_finite()) {
        return Err(cx.err(ks.phi_scale.span(), format!("phi_scale must be >= 1 (got {phi_scale})")));
    }
    let kernel = KernelConfig {
        family,
        lambda: ks.lambda.get_ref().clone(),
        param_box: ks.param_box.get_ref().iter().map(|b| (b[0], b[1])).collect(),
        phi_scale,
    };
    kernel.build().map_err(|e| {
        let span = match e {
            smolsens::Error::ParamBox { .. } => ks.lambda.span(),
            _ if kernel.lambda.len() != family.param_dim() => ks.lambda.span(),
            _ if kernel.param_box.len() != family.param_dim() => ks.param_box.span(),
            _ => ks.family.span(),
        };
        cx.err(span, e.to_string())
    })?;
    let p = family.param_dim();

    let mut solver = SolveOptions::default();
    let solver_span = raw.solver.as_ref().map(|s| s.span()).unwrap_or(0..0);
    if let Some(s) = raw.solver.as_ref().map(|s| s.get_ref()) {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut solver.rel_tol, s.rel_tol);
        set(&mut solver.abs_tol, s.abs_tol);
        set(&mut solver.dt_checkpoint, s.dt_checkpoint);
        set(&mut solver.moment_ceiling, s.moment_ceiling);
        set(&mut solver.overflow_fraction_max, s.overflow_fraction_max);
        set(&mut solver.epsilon, s.epsilon);
        solver.max_step = s.max_step;
        solver.fixed_step = s.fixed_step;
        for (name, v) in [("max_step", s.max_step), ("fixed_step", s.fixed_step)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(cx.err(solver_span.clone(), format!("solver.{name} must be > 0 (got {v})")));
                }
            }
        }
    }
    solver
        .validate()
        .map_err(|e| cx.err(solver_span.clone(), format!("solver: {e}")))?;
    if horizon / solver.dt_checkpoint > 1e7 {
        return Err(cx.err(solver_span, "more than 10^7 checkpoints requested"));
    }

    let st = &raw.stochastic;
    let n = match &st.n {
        Some(v) if !(2..=100_000_000).contains(v.get_ref()) => {
            return Err(cx.err(v.span(), "stochastic.n must lie in [2, 10^8]"))
        }
        Some(v) => *v.get_ref() as u64,
        None => 10_000,
    };
    let replicas = match &st.replicas {
        Some(v) if !(1..=1_000_000).contains(v.get_ref()) => {
            return Err(cx.err(v.span(), "stochastic.replicas must lie in [1, 10^6]"))
        }
        Some(v) => *v.get_ref() as usize,
        None => 64,
    };
    let h = match &st.h {
        Some(v) if !(*v.get_ref() > 0.0 && v.get_ref().is_finite()) => {
            return Err(cx.err(v.span(), "stochastic.h must be > 0"))
        }
        Some(v) => *v.get_ref(),
        None => 0.05,
    };
    let param = match &st.param {
        Some(v) if !(0..p as i64).contains(v.get_ref()) => {
            return Err(cx.err(v.span(), format!("stochastic.param must lie in 0..{p}")))
        }
        Some(v) => *v.get_ref() as usize,
        None => 0,
    };
    let observe = match &st.observe {
        Some(v) => {
            let t = v.get_ref();
            if t.is_empty() || !increasing(t) || t[0] < 0.0 || *t.last().unwrap() > horizon {
                return Err(cx.err(v.span(), "stochastic.observe must be increasing within [0, horizon]"));
            }
            t.clone()
        }
        None => (0..=8).map(|i| horizon * i as f64 / 8.0).collect(),
    };
    let stochastic = StochasticConfig {
        n,
        seed: st.seed.unwrap_or(0),
        replicas,
        h,
        param,
        observe,
    };

    let rs = &raw.representation;
    let times = match &rs.times {
        Some(v) => {
            let t = v.get_ref();
            if t.is_empty() || !increasing(t) || t[0] <= 0.0 || *t.last().unwrap() > horizon {
                return Err(cx.err(v.span(), "representation.times must be increasing within (0, horizon]"));
            }
            t.clone()
        }
        None => vec![horizon],
    };
    let phi = kernel.phi();
    let functions = match &rs.functions {
        Some(v) => {
            if v.get_ref().is_empty() {
                return Err(cx.err(v.span(), "representation.functions is empty"));
            }
            v.get_ref()
                .iter()
                .map(|id| Ok((id.clone(), parse_function(id, n_max, &phi).map_err(|e| cx.err(v.span(), e))?)))
                .collect::<Result<Vec<_>, SchemaError>>()?
        }
        None => DEFAULT_FUNCTIONS
            .iter()
            .map(|id| (id.to_string(), parse_function(id, n_max, &phi).expect("built-in id")))
            .collect(),
    };
    let tolerance = rs.tolerance.unwrap_or(1e-5);
    if !(tolerance > 0.0) {
        return Err(cx.err(0..0, "representation.tolerance must be > 0"));
    }

    let top = phi.eval(n_max as u64).powi(2);
    let truncation_levels = match &raw.truncation.levels {
        Some(v) => {
            let l = v.get_ref();
            if l.is_empty() || !increasing(l) || !(l[0] > 0.0) || !l.iter().all(|x| x.is_finite()) {
                return Err(cx.err(v.span(), "truncation.levels must be positive and increasing"));
            }
            l.clone()
        }
        None => {
            let mut l: Vec<f64> = std::iter::successors(Some(16.0), |x| Some(x * 4.0))
                .take_while(|&x| x < top)
                .collect();
            l.push(top);
            l
        }
    };

    Ok(RunConfig {
        scenario: *raw.scenario.get_ref(),
        horizon,
        n_max,
        initial,
        output_dir: raw.output_dir.map(PathBuf::from),
        kernel,
        solver,
        stochastic,
        representation: RepresentationConfig {
            times,
            functions,
            tolerance,
        },
        truncation_levels,
    })
}

impl RunConfig {
    /// Replace the checkpoint spacing with `horizon / count`.
    pub fn set_checkpoints(&mut self, count: usize) -> Result<(), SchemaError> {
        if count == 0 || count > 10_000_000 {
            return Err(SchemaError {
                line: None,
                message: format!("--checkpoints must lie in [1, 10^7] (got {count})"),
            });
        }
        self.solver.dt_checkpoint = self.horizon / count as f64;
        Ok(())
    }
}
