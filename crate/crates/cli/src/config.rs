//! Scenario files: TOML with the sections `[scenario]`, `[params]`,
//! `[polynomial]` and `[analysis]`. Unknown keys are rejected and every
//! validation error points at the offending line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use smallgain_core::dynsys::{assemble, Interconnection, TimeVaryingField};
use smallgain_core::fhn::{fhn_field, r_from_c, FhnParams};
use smallgain_core::linalg::Matrix;
use smallgain_core::poly::{PolyMap, Polynomial, Term};

use crate::error::{CliError, Result};
use crate::output::fmt_num as f;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Simulate,
    Certify,
    Estimate,
    InvariantSet,
    FcTable,
    Figures,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::Simulate => "simulate",
            Action::Certify => "certify",
            Action::Estimate => "estimate",
            Action::InvariantSet => "invariant-set",
            Action::FcTable => "fc-table",
            Action::Figures => "figures",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s.replace('_', "-").as_str() {
            "simulate" => Action::Simulate,
            "certify" => Action::Certify,
            "estimate" => Action::Estimate,
            "invariant-set" => Action::InvariantSet,
            "fc-table" => Action::FcTable,
            "figures" => Action::Figures,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
    Adaptive,
}

/// Two polynomial blocks `ẋ = f1(x) + ρ1 g1(y)`, `ẏ = f2(y) + ρ2 g2(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialSystem {
    pub n: usize,
    pub m: usize,
    pub f1: PolyMap,
    pub g1: PolyMap,
    pub f2: PolyMap,
    pub g2: PolyMap,
    pub rho1: f64,
    pub rho2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum System {
    Fhn(FhnParams),
    BuiltinLinear(Matrix),
    UserPolynomial(PolynomialSystem),
}

impl System {
    pub fn kind(&self) -> &'static str {
        match self {
            System::Fhn(_) => "fhn",
            System::BuiltinLinear(_) => "builtin_linear",
            System::UserPolynomial(_) => "user_polynomial",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            System::Fhn(_) => 2,
            System::BuiltinLinear(a) => a.rows(),
            System::UserPolynomial(p) => p.n + p.m,
        }
    }

    /// The two-block form, when the system has one.
    pub fn interconnection(&self) -> Option<Result<Interconnection>> {
        match self {
            System::Fhn(p) => Some(fhn_field(p).map_err(CliError::from)),
            System::BuiltinLinear(_) => None,
            System::UserPolynomial(s) => Some(Ok(Interconnection {
                f1: match s.f1.clone().into_field() {
                    Ok(f) => f,
                    Err(e) => return Some(Err(e.into())),
                },
                f2: match s.f2.clone().into_field() {
                    Ok(f) => f,
                    Err(e) => return Some(Err(e.into())),
                },
                g1: s.g1.clone().into_coupling(),
                g2: s.g2.clone().into_coupling(),
                rho1: s.rho1,
                rho2: s.rho2,
            })),
        }
    }

    pub fn field(&self) -> Result<TimeVaryingField> {
        match self {
            System::BuiltinLinear(a) => Ok(TimeVaryingField::linear(a.clone())),
            _ => {
                let ic = self.interconnection().expect("two-block system")?;
                Ok(assemble(&ic)?)
            }
        }
    }

    fn echo(&self, out: &mut String) {
        match self {
            System::Fhn(p) => {
                let _ = write!(
                    out,
                    " c={} b={} epsilon={} rho1={} rho2={} alpha={} r={}",
                    f(p.c),
                    f(p.b),
                    f(p.epsilon),
                    f(p.rho1),
                    f(p.rho2),
                    f(p.alpha),
                    f(p.r)
                );
            }
            System::BuiltinLinear(a) => {
                let rows: Vec<String> = (0..a.rows())
                    .map(|i| {
                        let r: Vec<String> = a.row(i).iter().map(|v| f(*v)).collect();
                        format!("[{}]", r.join(";"))
                    })
                    .collect();
                let _ = write!(out, " matrix=[{}]", rows.join(";"));
            }
            System::UserPolynomial(p) => {
                let _ = write!(out, " n={} m={} rho1={} rho2={}", p.n, p.m, f(p.rho1), f(p.rho2));
                for (name, map) in [("f1", &p.f1), ("g1", &p.g1), ("f2", &p.f2), ("g2", &p.g2)] {
                    let _ = write!(out, " {name}={}", poly_echo(map));
                }
            }
        }
    }
}

fn poly_echo(map: &PolyMap) -> String {
    let comps: Vec<String> = map
        .components()
        .iter()
        .map(|p| {
            let terms: Vec<String> = p
                .terms()
                .iter()
                .map(|t| {
                    let e: Vec<String> = t.exponents.iter().map(|e| e.to_string()).collect();
                    format!("{}*x^({})", f(t.coef), e.join(";"))
                })
                .collect();
            format!("[{}]", terms.join("+"))
        })
        .collect();
    format!("[{}]", comps.join(";"))
}

/// Settings for the analysis actions, all defaulted.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    /// Ball radius for certification; found with the invariant-set search when absent.
    pub radius: Option<f64>,
    /// Target composite rate; defaults to half the smaller component rate.
    pub alpha: Option<f64>,
    /// Component rates for polynomial blocks.
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub safety_factor: f64,
    pub grid_per_axis: usize,
    pub state_samples: usize,
    pub directions: usize,
    pub pairs: usize,
    pub box_half_width: f64,
    pub radii: Vec<f64>,
    pub pairs_per_radius: usize,
    pub transient_skip: f64,
    pub lambda_min: f64,
    pub residual_max: f64,
    pub late_floor: f64,
    pub level_min: f64,
    pub level_max: f64,
    pub level_count: usize,
    pub shell_width: f64,
    pub level_directions: usize,
    pub ultimate_m: f64,
    /// Build `f_c` without the `r > 2` requirement.
    pub relaxed_fc: bool,
    pub fc_grid_points: usize,
}

impl Default for Analysis {
    fn default() -> Self {
        Self {
            radius: None,
            alpha: None,
            alpha1: None,
            alpha2: None,
            safety_factor: 1.05,
            grid_per_axis: 41,
            state_samples: 400,
            directions: 16,
            pairs: 20,
            box_half_width: 3.0,
            radii: Vec::new(),
            pairs_per_radius: 5,
            transient_skip: 0.2,
            lambda_min: 1e-3,
            residual_max: 0.5,
            late_floor: 0.05,
            level_min: 1e-2,
            level_max: 1e3,
            level_count: 141,
            shell_width: 0.05,
            level_directions: 256,
            ultimate_m: 0.1,
            relaxed_fc: false,
            fc_grid_points: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub system: System,
    pub action: Action,
    pub horizon: f64,
    pub step: f64,
    /// Spacing of written samples; a multiple of `step` under RK4.
    pub sample_every: f64,
    pub integrator: Integrator,
    /// Adaptive integration and quadrature tolerance.
    pub tolerance: f64,
    pub seed: u64,
    pub initial_conditions: Vec<Vec<f64>>,
    pub output: Option<PathBuf>,
    pub analysis: Analysis,
}

impl Scenario {
    /// One-line `key=value` echo of every resolved setting.
    pub fn echo(&self) -> String {
        let mut s = format!(
            "name={} system={} action={} horizon={} step={} sample_every={} integrator={} tolerance={} seed={}",
            self.name,
            self.system.kind(),
            self.action.name(),
            f(self.horizon),
            f(self.step),
            f(self.sample_every),
            match self.integrator {
                Integrator::Rk4 => "rk4",
                Integrator::Adaptive => "adaptive",
            },
            f(self.tolerance),
            self.seed,
        );
        self.system.echo(&mut s);
        if !self.initial_conditions.is_empty() {
            let ics: Vec<String> = self
                .initial_conditions
                .iter()
                .map(|z| {
                    let v: Vec<String> = z.iter().map(|x| f(*x)).collect();
                    format!("({})", v.join(";"))
                })
                .collect();
            let _ = write!(s, " initial_conditions={}", ics.join(";"));
        }
        s
    }

    /// Output stride in integrator steps.
    pub fn stride(&self) -> usize {
        ((self.sample_every / self.step).round() as usize).max(1)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: RawScenario,
    params: Option<RawParams>,
    polynomial: Option<RawPolynomial>,
    analysis: Option<RawAnalysis>,
}

type Num = Option<Spanned<f64>>;
type Int = Option<Spanned<i64>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    system: Option<Spanned<String>>,
    action: Option<Spanned<String>>,
    horizon: Num,
    step: Num,
    sample_every: Num,
    integrator: Option<Spanned<String>>,
    tolerance: Num,
    seed: Option<Spanned<i64>>,
    initial_conditions: Option<Spanned<Vec<Vec<f64>>>>,
    output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    b: Num,
    epsilon: Num,
    rho1: Num,
    rho2: Num,
    c: Num,
    r: Num,
    alpha: Num,
    matrix: Option<Spanned<Vec<Vec<f64>>>>,
}

type RawMap = Spanned<Vec<Vec<Vec<f64>>>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolynomial {
    n: Spanned<i64>,
    m: Spanned<i64>,
    f1: RawMap,
    g1: RawMap,
    f2: RawMap,
    g2: RawMap,
    rho1: Num,
    rho2: Num,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    radius: Num,
    alpha: Num,
    alpha1: Num,
    alpha2: Num,
    safety_factor: Num,
    grid_per_axis: Int,
    state_samples: Int,
    directions: Int,
    pairs: Int,
    box_half_width: Num,
    radii: Option<Spanned<Vec<f64>>>,
    pairs_per_radius: Int,
    transient_skip: Num,
    lambda_min: Num,
    residual_max: Num,
    late_floor: Num,
    level_min: Num,
    level_max: Num,
    level_count: Int,
    shell_width: Num,
    level_directions: Int,
    ultimate_m: Num,
    relaxed_fc: Option<bool>,
    fc_grid_points: Int,
}

/// Maps byte offsets of the source to line numbers.
struct Source<'a> {
    path: &'a Path,
    text: &'a str,
}

impl Source<'_> {
    fn line(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())].matches('\n').count() + 1
    }

    fn err<T>(&self, span: std::ops::Range<usize>, message: impl Into<String>) -> Result<T> {
        Err(CliError::ConfigAt {
            path: self.path.to_path_buf(),
            line: self.line(span.start),
            message: message.into(),
        })
    }

    fn positive(&self, name: &str, v: &Spanned<f64>) -> Result<f64> {
        let x = *v.get_ref();
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            self.err(v.span(), format!("{name} must be positive"))
        }
    }

    fn nonnegative(&self, name: &str, v: &Spanned<f64>) -> Result<f64> {
        let x = *v.get_ref();
        if x >= 0.0 && x.is_finite() {
            Ok(x)
        } else {
            self.err(v.span(), format!("{name} must be nonnegative"))
        }
    }

    fn count(&self, name: &str, v: &Spanned<i64>) -> Result<usize> {
        let x = *v.get_ref();
        if x > 0 {
            Ok(x as usize)
        } else {
            self.err(v.span(), format!("{name} must be a positive integer"))
        }
    }

    fn fraction(&self, name: &str, v: &Spanned<f64>) -> Result<f64> {
        let x = *v.get_ref();
        if (0.0..1.0).contains(&x) {
            Ok(x)
        } else {
            self.err(v.span(), format!("{name} must lie in [0, 1)"))
        }
    }
}

fn opt<T, U>(v: &Option<T>, default: U, f: impl FnOnce(&T) -> Result<U>) -> Result<U> {
    match v {
        Some(x) => f(x),
        None => Ok(default),
    }
}

/// Reads and validates a scenario for `action`.
pub fn parse_config(path: &Path, action: Action) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_str(&text, path, action)
}

/// Validates scenario text; `path` only labels diagnostics.
pub fn parse_str(text: &str, path: &Path, action: Action) -> Result<Scenario> {
    let src = Source { path, text };
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| src.line(s.start)).unwrap_or(1);
        CliError::ConfigAt {
            path: path.to_path_buf(),
            line,
            message: e.message().trim().to_string(),
        }
    })?;
    let sc = &raw.scenario;

    if let Some(a) = &sc.action {
        match Action::parse(a.get_ref()) {
            Some(x) if x == action => {}
            Some(x) => {
                return src.err(
                    a.span(),
                    format!("config declares action {} but {} was requested", x.name(), action.name()),
                )
            }
            None => return src.err(a.span(), format!("unknown action `{}`", a.get_ref())),
        }
    }

    let system = match &sc.system {
        None if action == Action::Figures => System::Fhn(FhnParams::figure(1)?),
        None => {
            return Err(CliError::ConfigAt {
                path: path.to_path_buf(),
                line: 1,
                message: "[scenario] needs `system` (fhn, builtin_linear or user_polynomial)".into(),
            })
        }
        Some(s) => match s.get_ref().as_str() {
            "fhn" => System::Fhn(fhn_params(&src, raw.params.as_ref(), action)?),
            "builtin_linear" => System::BuiltinLinear(linear_params(&src, raw.params.as_ref(), s)?),
            "user_polynomial" => {
                if let Some(p) = &raw.params {
                    if let Some(b) = p.b.as_ref().or(p.epsilon.as_ref()).or(p.c.as_ref()) {
                        return src.err(b.span(), "user_polynomial takes its data from [polynomial], not [params]");
                    }
                }
                match &raw.polynomial {
                    Some(p) => System::UserPolynomial(polynomial(&src, p)?),
                    None => return src.err(s.span(), "system user_polynomial needs a [polynomial] section"),
                }
            }
            other => {
                return src.err(
                    s.span(),
                    format!("unknown system `{other}` (expected fhn, builtin_linear or user_polynomial)"),
                )
            }
        },
    };
    if action == Action::Figures && !matches!(system, System::Fhn(_)) {
        return Err(CliError::Config("figures reproduces the FitzHugh–Nagumo runs; use system = \"fhn\"".into()));
    }

    let default_horizon = if action == Action::Figures { 100.0 } else { 10.0 };
    let horizon = opt(&sc.horizon, default_horizon, |v| src.positive("horizon", v))?;
    let step = opt(&sc.step, 1e-3, |v| src.positive("step", v))?;
    if let Some(v) = &sc.step {
        if step > 0.5 * horizon {
            return src.err(v.span(), "step must be at most half the horizon");
        }
    }
    let default_every = if action == Action::Figures { 0.01 } else { step };
    let sample_every = opt(&sc.sample_every, default_every, |v| src.positive("sample_every", v))?;
    if let Some(v) = &sc.sample_every {
        if sample_every < step {
            return src.err(v.span(), "sample_every must be at least step");
        }
    }
    let integrator = match &sc.integrator {
        None => Integrator::Rk4,
        Some(s) => match s.get_ref().as_str() {
            "rk4" => Integrator::Rk4,
            "adaptive" => Integrator::Adaptive,
            other => return src.err(s.span(), format!("unknown integrator `{other}` (expected rk4 or adaptive)")),
        },
    };
    let tolerance = opt(&sc.tolerance, 1e-10, |v| src.positive("tolerance", v))?;
    let seed = match &sc.seed {
        None => 0,
        Some(v) if *v.get_ref() >= 0 => *v.get_ref() as u64,
        Some(v) => return src.err(v.span(), "seed must be nonnegative"),
    };

    let dim = system.dim();
    let initial_conditions = match &sc.initial_conditions {
        None => Vec::new(),
        Some(v) => {
            for z in v.get_ref() {
                if z.len() != dim {
                    return src.err(
                        v.span(),
                        format!("initial condition {z:?} has {} entries, system dimension is {dim}", z.len()),
                    );
                }
                if z.iter().any(|x| !x.is_finite()) {
                    return src.err(v.span(), "initial conditions must be finite");
                }
            }
            v.get_ref().clone()
        }
    };
    match action {
        Action::Simulate if initial_conditions.is_empty() => {
            return Err(CliError::ConfigAt {
                path: path.to_path_buf(),
                line: 1,
                message: "simulate needs [scenario] initial_conditions".into(),
            })
        }
        Action::Estimate if initial_conditions.len() % 2 == 1 => {
            return src.err(
                sc.initial_conditions.as_ref().expect("nonempty").span(),
                "estimate reads initial_conditions as consecutive pairs; give an even number",
            )
        }
        Action::Figures if !initial_conditions.is_empty() && initial_conditions.len() != 2 => {
            return src.err(
                sc.initial_conditions.as_ref().expect("nonempty").span(),
                "figures takes exactly one pair of initial conditions",
            )
        }
        _ => {}
    }

    let analysis = match &raw.analysis {
        None => Analysis::default(),
        Some(a) => analysis(&src, a)?,
    };

    Ok(Scenario {
        name: sc.name.clone().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into())
        }),
        system,
        action,
        horizon,
        step,
        sample_every,
        integrator,
        tolerance,
        seed,
        initial_conditions,
        output: sc.output.clone(),
        analysis,
    })
}

fn fhn_params(src: &Source, p: Option<&RawParams>, action: Action) -> Result<FhnParams> {
    let none = RawParams {
        b: None,
        epsilon: None,
        rho1: None,
        rho2: None,
        c: None,
        r: None,
        alpha: None,
        matrix: None,
    };
    let p = p.unwrap_or(&none);
    if let Some(m) = &p.matrix {
        return src.err(m.span(), "matrix is not a parameter of system fhn");
    }
    let b = opt(&p.b, 1.0, |v| src.positive("b", v))?;
    let epsilon = opt(&p.epsilon, 0.9, |v| src.positive("epsilon", v))?;
    let rho1 = opt(&p.rho1, 1.0, |v| src.nonnegative("rho1", v))?;
    let rho2 = opt(&p.rho2, 1.0, |v| src.nonnegative("rho2", v))?;
    let alpha = opt(&p.alpha, 1.0, |v| src.positive("alpha", v))?;
    let (r, c) = match (&p.r, &p.c) {
        (Some(r), Some(c)) => {
            let (rv, cv) = (*r.get_ref(), *c.get_ref());
            if (rv * rv * rv - rv - cv).abs() > 1e-12 * (1.0 + cv.abs()) {
                return src.err(c.span(), "c must equal r^3 - r when both are given");
            }
            (rv, cv)
        }
        (Some(r), None) => {
            let rv = *r.get_ref();
            if !(rv > 1.0 && rv.is_finite()) {
                return src.err(r.span(), "r must exceed 1");
            }
            (rv, rv * rv * rv - rv)
        }
        (None, Some(c)) => {
            let cv = *c.get_ref();
            if !cv.is_finite() {
                return src.err(c.span(), "c must be finite");
            }
            (r_from_c(cv), cv)
        }
        (None, None) => (2.1, 2.1f64.powi(3) - 2.1),
    };
    let params = FhnParams {
        b,
        rho1,
        rho2,
        epsilon,
        r,
        c,
        alpha,
    };
    if matches!(action, Action::FcTable | Action::Certify) {
        let limit = params.alpha_limit();
        if alpha >= limit {
            let span = p.alpha.as_ref().or(p.r.as_ref()).or(p.c.as_ref()).map(|s| s.span()).unwrap_or(0..0);
            return src.err(span, format!("alpha must lie in (0, 2r^2 - 2) = (0, {limit})"));
        }
    }
    Ok(params)
}

fn linear_params(src: &Source, p: Option<&RawParams>, sys: &Spanned<String>) -> Result<Matrix> {
    let Some(m) = p.and_then(|p| p.matrix.as_ref()) else {
        return src.err(sys.span(), "system builtin_linear needs [params] matrix");
    };
    if let Some(p) = p {
        if let Some(x) = p.b.as_ref().or(p.epsilon.as_ref()).or(p.c.as_ref()).or(p.alpha.as_ref()) {
            return src.err(x.span(), "builtin_linear only takes [params] matrix");
        }
    }
    let rows = m.get_ref();
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return src.err(m.span(), "matrix must be square and nonempty");
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return src.err(m.span(), "matrix entries must be finite");
    }
    Ok(Matrix::from_row_major(n, n, rows.iter().flatten().copied().collect()))
}

fn poly_map(src: &Source, name: &str, raw: &RawMap, vars: usize, outputs: usize) -> Result<PolyMap> {
    let comps = raw.get_ref();
    if comps.len() != outputs {
        return src.err(
            raw.span(),
            format!("{name} has {} components, expected {outputs}", comps.len()),
        );
    }
    let mut polys = Vec::with_capacity(outputs);
    for comp in comps {
        let mut terms = Vec::with_capacity(comp.len());
        for t in comp {
            if t.len() != vars + 1 {
                return src.err(
                    raw.span(),
                    format!("{name}: each term is [coefficient, {vars} exponents], got {} numbers", t.len()),
                );
            }
            let mut exponents = Vec::with_capacity(vars);
            for &e in &t[1..] {
                if !(e >= 0.0 && e.fract() == 0.0 && e <= 64.0) {
                    return src.err(raw.span(), format!("{name}: exponents must be integers in [0, 64]"));
                }
                exponents.push(e as u32);
            }
            terms.push(Term { coef: t[0], exponents });
        }
        polys.push(Polynomial::new(vars, terms).or_else(|e| src.err(raw.span(), format!("{name}: {e}")))?);
    }
    PolyMap::new(vars, polys).or_else(|e| src.err(raw.span(), format!("{name}: {e}")))
}

fn polynomial(src: &Source, p: &RawPolynomial) -> Result<PolynomialSystem> {
    let n = src.count("n", &p.n)?;
    let m = src.count("m", &p.m)?;
    Ok(PolynomialSystem {
        n,
        m,
        f1: poly_map(src, "f1", &p.f1, n, n)?,
        g1: poly_map(src, "g1", &p.g1, m, n)?,
        f2: poly_map(src, "f2", &p.f2, m, m)?,
        g2: poly_map(src, "g2", &p.g2, n, m)?,
        rho1: opt(&p.rho1, 1.0, |v| src.nonnegative("rho1", v))?,
        rho2: opt(&p.rho2, 1.0, |v| src.nonnegative("rho2", v))?,
    })
}

fn analysis(src: &Source, a: &RawAnalysis) -> Result<Analysis> {
    let d = Analysis::default();
    let radii = match &a.radii {
        None => Vec::new(),
        Some(r) => {
            let v = r.get_ref();
            if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) || v.windows(2).any(|w| w[0] >= w[1]) {
                return src.err(r.span(), "radii must be positive and increasing");
            }
            v.clone()
        }
    };
    let out = Analysis {
        radius: opt(&a.radius, None, |v| src.positive("radius", v).map(Some))?,
        alpha: opt(&a.alpha, None, |v| src.positive("alpha", v).map(Some))?,
        alpha1: opt(&a.alpha1, None, |v| src.positive("alpha1", v).map(Some))?,
        alpha2: opt(&a.alpha2, None, |v| src.positive("alpha2", v).map(Some))?,
        safety_factor: opt(&a.safety_factor, d.safety_factor, |v| {
            let x = *v.get_ref();
            if x >= 1.0 && x.is_finite() {
                Ok(x)
            } else {
                src.err(v.span(), "safety_factor must be at least 1")
            }
        })?,
        grid_per_axis: opt(&a.grid_per_axis, d.grid_per_axis, |v| src.count("grid_per_axis", v))?,
        state_samples: opt(&a.state_samples, d.state_samples, |v| src.count("state_samples", v))?,
        directions: opt(&a.directions, d.directions, |v| src.count("directions", v))?,
        pairs: opt(&a.pairs, d.pairs, |v| src.count("pairs", v))?,
        box_half_width: opt(&a.box_half_width, d.box_half_width, |v| src.positive("box_half_width", v))?,
        radii,
        pairs_per_radius: opt(&a.pairs_per_radius, d.pairs_per_radius, |v| src.count("pairs_per_radius", v))?,
        transient_skip: opt(&a.transient_skip, d.transient_skip, |v| src.fraction("transient_skip", v))?,
        lambda_min: opt(&a.lambda_min, d.lambda_min, |v| src.nonnegative("lambda_min", v))?,
        residual_max: opt(&a.residual_max, d.residual_max, |v| src.positive("residual_max", v))?,
        late_floor: opt(&a.late_floor, d.late_floor, |v| src.positive("late_floor", v))?,
        level_min: opt(&a.level_min, d.level_min, |v| src.positive("level_min", v))?,
        level_max: opt(&a.level_max, d.level_max, |v| src.positive("level_max", v))?,
        level_count: opt(&a.level_count, d.level_count, |v| src.count("level_count", v))?,
        shell_width: opt(&a.shell_width, d.shell_width, |v| src.positive("shell_width", v))?,
        level_directions: opt(&a.level_directions, d.level_directions, |v| src.count("level_directions", v))?,
        ultimate_m: opt(&a.ultimate_m, d.ultimate_m, |v| src.positive("ultimate_m", v))?,
        relaxed_fc: a.relaxed_fc.unwrap_or(d.relaxed_fc),
        fc_grid_points: opt(&a.fc_grid_points, d.fc_grid_points, |v| src.count("fc_grid_points", v))?,
    };
    if out.level_min >= out.level_max {
        let span = a.level_max.as_ref().or(a.level_min.as_ref()).map(|s| s.span()).unwrap_or(0..0);
        return src.err(span, "level_min must be below level_max");
    }
    Ok(out)
}
