use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use smallgain_core::dynsys::{
    distance_series, integrate, AugmentedTrajectory, IntegratorConfig, TimeVaryingField,
};
use smallgain_core::estimator::{
    box_pairs, fit_envelope, wies_scan, EnvelopeFit, FitOptions, FitVerdict, InitialPair,
};
use smallgain_core::fhn::{
    build_fc, component_rates, fc_bounds, fc_candidate, half_square_bounds, half_square_candidate,
    FcConfig, FcTable, FhnParams,
};
use smallgain_core::finsler::{AssumptionTwoBounds, FinslerCandidate};
use smallgain_core::invariance::{
    check_dissipation_chain_fhn, entry_time, fhn_outer_lyapunov, find_invariant_level,
    level_set_points, ultimate_bound_fhn, InvariantSetEstimate, LevelSearch, OuterLyapunov,
};
use smallgain_core::linalg::Matrix;
use smallgain_core::sampling::{rng_from_seed, BoxRegion};
use smallgain_core::smallgain::{certify, CertificateStatus, CertifyOptions, ConstantsOptions, GainCertificate};

use crate::config::{Integrator, Scenario, System};
use crate::error::{CliError, Result};
use crate::output::{fmt_num, write_atomic, Csv, TOOL};

/// What a command wrote and printed. `failure` carries the exit category of
/// a run that still produced output (blow-up, refused certificate).
#[derive(Debug)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub summary: String,
    pub failure: Option<CliError>,
}

impl Report {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            summary: String::new(),
            failure: None,
        }
    }

    fn csv(&mut self, csv: &Csv, path: PathBuf) -> Result<()> {
        csv.write(&path)?;
        self.files.push(path);
        Ok(())
    }

    fn text(&mut self, text: &str, path: PathBuf) -> Result<()> {
        write_atomic(&path, text.as_bytes())?;
        self.files.push(path);
        Ok(())
    }
}

fn integrator(s: &Scenario) -> IntegratorConfig {
    match s.integrator {
        Integrator::Rk4 => IntegratorConfig::fixed(s.step, s.horizon),
        Integrator::Adaptive => IntegratorConfig::adaptive(s.tolerance, s.tolerance, s.horizon),
    }
}

/// Sample indices (or interpolated times) at the scenario's output spacing.
fn output_states(s: &Scenario, tr: &AugmentedTrajectory) -> Vec<(f64, Vec<f64>)> {
    match s.integrator {
        Integrator::Rk4 => tr
            .times
            .iter()
            .zip(&tr.states)
            .step_by(s.stride())
            .map(|(t, z)| (*t, z.clone()))
            .collect(),
        Integrator::Adaptive => {
            let end = tr.final_time();
            let mut out = Vec::new();
            let mut k = 0u64;
            loop {
                let t = tr.t0 + k as f64 * s.sample_every;
                if t > end + 1e-12 * s.horizon {
                    break;
                }
                if let Some(z) = tr.state_at(t.min(end)) {
                    out.push((t.min(end), z));
                }
                k += 1;
            }
            out
        }
    }
}

fn header(s: &Scenario) -> Vec<String> {
    vec![TOOL.to_string(), s.echo()]
}

fn file(dir: &Path, s: &Scenario, suffix: &str) -> PathBuf {
    dir.join(format!("{}_{suffix}", s.name))
}

fn require_fhn(s: &Scenario) -> Result<FhnParams> {
    match &s.system {
        System::Fhn(p) => Ok(*p),
        other => Err(CliError::Config(format!(
            "{} needs system = \"fhn\" (got {})",
            s.action.name(),
            other.kind()
        ))),
    }
}

fn fc_table(s: &Scenario, p: &FhnParams) -> Result<FcTable> {
    let cfg = FcConfig {
        tolerance: s.tolerance,
        grid_points: s.analysis.fc_grid_points,
        require_r_above_two: !s.analysis.relaxed_fc,
    };
    Ok(build_fc(p, &cfg)?)
}

pub fn simulate(s: &Scenario, dir: &Path) -> Result<Report> {
    let field = s.system.field()?;
    let dim = s.system.dim();
    let mut cols = vec!["ic".to_string(), "t".to_string()];
    cols.extend((1..=dim).map(|k| format!("z{k}")));
    let cols: Vec<&str> = cols.iter().map(|c| c.as_str()).collect();
    let mut csv = Csv::new(&header(s), &cols);
    let mut rep = Report::new();
    let cfg = integrator(s);
    for (i, z0) in s.initial_conditions.iter().enumerate() {
        let tr = integrate(&field, 0.0, z0, &cfg)?;
        for (t, z) in output_states(s, &tr) {
            let mut row = vec![i.to_string(), fmt_num(t)];
            row.extend(z.iter().map(|v| fmt_num(*v)));
            csv.row(&row);
        }
        let _ = writeln!(
            rep.summary,
            "ic {i}: {} samples to t = {}, final state {:?}",
            tr.len(),
            tr.final_time(),
            tr.final_state()
        );
        if tr.blew_up() && rep.failure.is_none() {
            rep.failure = Some(CliError::BlowUp(format!(
                "initial condition {i} left the finite range at t = {}",
                tr.final_time()
            )));
        }
    }
    rep.csv(&csv, file(dir, s, "trajectory.csv"))?;
    Ok(rep)
}

/// Default pair of the figure runs.
pub const FIGURE_PAIR: ([f64; 2], [f64; 2]) = ([2.0, 0.0], [-2.0, 1.0]);

pub fn figures(s: &Scenario, dir: &Path) -> Result<Report> {
    let (z1, z2) = match s.initial_conditions.as_slice() {
        [a, b] => (a.clone(), b.clone()),
        _ => (FIGURE_PAIR.0.to_vec(), FIGURE_PAIR.1.to_vec()),
    };
    let cfg = integrator(s);
    let mut rep = Report::new();
    for n in 1..=3u8 {
        let p = FhnParams::figure(n)?;
        let field = smallgain_core::dynsys::assemble(&smallgain_core::fhn::fhn_field(&p)?)?;
        let a = integrate(&field, 0.0, &z1, &cfg)?;
        let b = integrate(&field, 0.0, &z2, &cfg)?;
        let d = distance_series(&a, &b);
        let fit = if d.blew_up {
            None
        } else {
            Some(fit_envelope(&d.times, &d.distances, &FitOptions::default())?)
        };
        let comments = vec![
            TOOL.to_string(),
            format!(
                "figure={n} c={} b={} epsilon={} rho1={} rho2={} z1=({};{}) z2=({};{}) horizon={} step={} sample_every={} integrator={} seed={}",
                fmt_num(p.c),
                fmt_num(p.b),
                fmt_num(p.epsilon),
                fmt_num(p.rho1),
                fmt_num(p.rho2),
                fmt_num(z1[0]),
                fmt_num(z1[1]),
                fmt_num(z2[0]),
                fmt_num(z2[1]),
                fmt_num(s.horizon),
                fmt_num(s.step),
                fmt_num(s.sample_every),
                match s.integrator {
                    Integrator::Rk4 => "rk4",
                    Integrator::Adaptive => "adaptive",
                },
                s.seed
            ),
            match &fit {
                Some(f) => format!(
                    "verdict={} lambda={} K={} late_ratio={} final_ratio={}",
                    f.verdict,
                    fmt_num(f.lambda),
                    fmt_num(f.k),
                    fmt_num(f.late_ratio),
                    fmt_num(f.final_ratio)
                ),
                None => "verdict=blew_up".to_string(),
            },
        ];
        let mut csv = Csv::new(&comments, &["t", "x1", "y1", "x2", "y2", "distance"]);
        let sa = output_states(s, &a);
        let sb = output_states(s, &b);
        for ((t, za), (_, zb)) in sa.iter().zip(&sb) {
            let dist = ((za[0] - zb[0]).powi(2) + (za[1] - zb[1]).powi(2)).sqrt();
            csv.numbers(&[*t, za[0], za[1], zb[0], zb[1], dist]);
        }
        rep.csv(&csv, dir.join(format!("fig{n}.csv")))?;
        let _ = writeln!(rep.summary, "fig{n}: {}", comments[2]);
        if d.blew_up && rep.failure.is_none() {
            rep.failure = Some(CliError::BlowUp(format!("figure {n} trajectories blew up")));
        }
    }
    Ok(rep)
}

pub fn fc_table_cmd(s: &Scenario, dir: &Path) -> Result<Report> {
    let p = require_fhn(s)?;
    let t = fc_table(s, &p)?;
    let mut comments = header(s);
    comments.push(format!(
        "mu={} eta={} eta_at={} s_star={} quadrature_error={} mu_cross_check={}",
        fmt_num(t.mu),
        fmt_num(t.eta),
        fmt_num(t.eta_at),
        fmt_num(t.s_star),
        fmt_num(t.quadrature_error),
        fmt_num(t.mu_cross_check)
    ));
    let mut csv = Csv::new(&comments, &["x", "f_c", "f_c_prime"]);
    for &x in &t.grid {
        csv.numbers(&[x, t.fc(x), t.fc_prime(x)]);
    }
    let mut rep = Report::new();
    rep.csv(&csv, file(dir, s, "fc.csv"))?;
    let _ = writeln!(
        rep.summary,
        "mu = {}, eta = {} at x = {}, s* = {}, quadrature error {:.3e}, {} grid points",
        t.mu,
        t.eta,
        t.eta_at,
        t.s_star,
        t.quadrature_error,
        t.grid.len()
    );
    Ok(rep)
}

fn outer_lyapunov(s: &Scenario) -> Result<OuterLyapunov> {
    Ok(match &s.system {
        System::Fhn(p) => fhn_outer_lyapunov(p),
        other => OuterLyapunov::diagonal_quadratic(&vec![1.0; other.dim()])?,
    })
}

fn level_search(s: &Scenario) -> LevelSearch {
    let a = &s.analysis;
    let mut search = LevelSearch::geometric(a.level_min, a.level_max, a.level_count);
    search.shell_width = a.shell_width;
    search.directions = a.level_directions;
    search
}

fn invariant_estimate(s: &Scenario, field: &TimeVaryingField) -> Result<(OuterLyapunov, InvariantSetEstimate)> {
    let w = outer_lyapunov(s)?;
    let est = find_invariant_level(&w, field, &level_search(s))?;
    Ok((w, est))
}

#[derive(Serialize)]
struct InvariantRecord {
    tool: String,
    scenario: String,
    estimate: EstimateRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    chain: Option<ChainRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ultimate_bound: Option<UltimateRecord>,
}

#[derive(Serialize)]
struct EstimateRecord {
    outer_function: String,
    level: f64,
    radius: f64,
    class_radius: f64,
    margin: f64,
    shell_width: f64,
    directions: usize,
    radial_samples: usize,
    levels_tried: usize,
}

#[derive(Serialize)]
struct ChainRecord {
    half_width: f64,
    per_axis: usize,
    tolerance: f64,
    margins: Vec<f64>,
    passed: bool,
}

#[derive(Serialize)]
struct UltimateRecord {
    m: f64,
    bound: f64,
    initial_conditions: Vec<Vec<f64>>,
    /// Negative when the bound is not reached within the horizon.
    entry_times: Vec<f64>,
    final_epsilon_y2: Vec<f64>,
}

pub fn invariant_set(s: &Scenario, dir: &Path) -> Result<Report> {
    let field = s.system.field()?;
    let (w, est) = invariant_estimate(s, &field)?;
    let mut rep = Report::new();
    let _ = writeln!(
        rep.summary,
        "level {} (tried {}), enclosing radius {}, class radius {}, worst shell Wdot {}",
        est.level, est.levels_tried, est.radius, est.class_radius, est.margin
    );
    let mut record = InvariantRecord {
        tool: TOOL.into(),
        scenario: s.echo(),
        estimate: EstimateRecord {
            outer_function: match s.system {
                System::Fhn(_) => "(x^2 + epsilon y^2)/2".into(),
                _ => "|z|^2/2".into(),
            },
            level: est.level,
            radius: est.radius,
            class_radius: est.class_radius,
            margin: est.margin,
            shell_width: est.shell_width,
            directions: est.directions,
            radial_samples: est.radial_samples,
            levels_tried: est.levels_tried,
        },
        chain: None,
        ultimate_bound: None,
    };
    if let System::Fhn(p) = &s.system {
        if p.rho1 == p.rho2 {
            let half_width = est.radius.max(6.0).ceil();
            let c = check_dissipation_chain_fhn(p, half_width, 201, 1e-9)?;
            let _ = writeln!(rep.summary, "dissipation chain margins {:?}: {}", c.margins, if c.passed { "pass" } else { "FAIL" });
            record.chain = Some(ChainRecord {
                half_width,
                per_axis: 201,
                tolerance: 1e-9,
                margins: c.margins.to_vec(),
                passed: c.passed,
            });
        }
        if p.b > p.epsilon {
            let m = s.analysis.ultimate_m;
            let bound = ultimate_bound_fhn(p, m)?;
            let ics = if s.initial_conditions.is_empty() {
                vec![vec![3.0, 3.0]]
            } else {
                s.initial_conditions.clone()
            };
            let mut entry = Vec::new();
            let mut last = Vec::new();
            for z0 in &ics {
                let tr = integrate(&field, 0.0, z0, &integrator(s))?;
                let ey2: Vec<f64> = tr.states.iter().map(|z| p.epsilon * z[1] * z[1]).collect();
                let t = entry_time(&tr.times, &ey2, bound);
                entry.push(t.unwrap_or(-1.0));
                last.push(*ey2.last().expect("nonempty"));
                let _ = writeln!(
                    rep.summary,
                    "from {z0:?}: epsilon y^2 bound {bound} {}",
                    match t {
                        Some(t) => format!("entered at t = {t}"),
                        None => format!("not reached by t = {} (final epsilon y^2 = {})", tr.final_time(), ey2.last().unwrap()),
                    }
                );
            }
            record.ultimate_bound = Some(UltimateRecord {
                m,
                bound,
                initial_conditions: ics,
                entry_times: entry,
                final_epsilon_y2: last,
            });
        }
    }
    let text = toml::to_string(&record).map_err(|e| CliError::Internal(e.to_string()))?;
    rep.text(&text, file(dir, s, "invariant.toml"))?;

    let dim = w.dim();
    let cols: Vec<String> = (1..=dim).map(|k| format!("z{k}")).collect();
    let cols: Vec<&str> = cols.iter().map(|c| c.as_str()).collect();
    let mut csv = Csv::new(&header(s), &cols);
    for z in level_set_points(&w, 0.0, est.level, s.analysis.level_directions)? {
        csv.numbers(&z);
    }
    rep.csv(&csv, file(dir, s, "boundary.csv"))?;
    Ok(rep)
}

#[derive(Serialize)]
struct CertificateRecord {
    tool: String,
    scenario: String,
    status: String,
    passed: bool,
    covers_requested: bool,
    radius: f64,
    radius_source: String,
    rates: RatesRecord,
    epsilons: [f64; 4],
    constants: ConstantsRecord,
    budget: BudgetRecord,
    decay: DecayRecord,
}

#[derive(Serialize)]
struct RatesRecord {
    alpha1: f64,
    alpha2: f64,
    alpha: f64,
    form: String,
}

#[derive(Serialize)]
struct ConstantsRecord {
    provenance: String,
    safety_factor: f64,
    grid_per_axis: usize,
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
    eta1: f64,
    eta2: f64,
    theta1: f64,
    theta2: f64,
}

#[derive(Serialize)]
struct BudgetRecord {
    rho1_max: f64,
    rho2_max: f64,
    requested_rho1: f64,
    requested_rho2: f64,
    checked_rho1: f64,
    checked_rho2: f64,
    margin_dx: f64,
    margin_dy: f64,
}

#[derive(Serialize)]
struct DecayRecord {
    composite_verdict: String,
    composite_worst: f64,
    composite_samples: usize,
    component1_worst: f64,
    component2_worst: f64,
}

fn certificate_record(s: &Scenario, cert: &GainCertificate, radius_source: &str) -> CertificateRecord {
    let c = &cert.constants;
    CertificateRecord {
        tool: TOOL.into(),
        scenario: s.echo(),
        status: cert.status().to_string(),
        passed: cert.passed(),
        covers_requested: cert.covers_requested(),
        radius: c.radius,
        radius_source: radius_source.into(),
        rates: RatesRecord {
            alpha1: cert.alpha1,
            alpha2: cert.alpha2,
            alpha: cert.alpha,
            form: "Vdot_i <= -alpha_i |delta|^2".into(),
        },
        epsilons: [cert.epsilons.e1, cert.epsilons.e2, cert.epsilons.e3, cert.epsilons.e4],
        constants: ConstantsRecord {
            provenance: "sampled, inflated: grid suprema over the ball times the safety factor".into(),
            safety_factor: c.safety_factor,
            grid_per_axis: c.grid_per_axis,
            a1: c.a1,
            a2: c.a2,
            b1: c.b1,
            b2: c.b2,
            eta1: c.eta1,
            eta2: c.eta2,
            theta1: c.theta1,
            theta2: c.theta2,
        },
        budget: BudgetRecord {
            rho1_max: cert.rho1_max,
            rho2_max: cert.rho2_max,
            requested_rho1: cert.requested.0,
            requested_rho2: cert.requested.1,
            checked_rho1: cert.checked_gains.0,
            checked_rho2: cert.checked_gains.1,
            margin_dx: cert.margins_at_budget.0,
            margin_dy: cert.margins_at_budget.1,
        },
        decay: DecayRecord {
            composite_verdict: if cert.decay_report.verdict.passed() { "no_violation_found" } else { "violated" }.into(),
            composite_worst: cert.decay_report.worst_violation,
            composite_samples: cert.decay_report.samples,
            component1_worst: cert.component_reports.0.worst_violation,
            component2_worst: cert.component_reports.1.worst_violation,
        },
    }
}

fn certificate_text(cert: &GainCertificate, radius_source: &str) -> String {
    let c = &cert.constants;
    let mut t = String::new();
    let _ = writeln!(t, "{TOOL} gain certificate");
    let _ = writeln!(t, "status: {}", cert.status());
    let _ = writeln!(t, "ball radius R = {} ({radius_source})", c.radius);
    let _ = writeln!(t, "rates: alpha1 = {}, alpha2 = {}, target alpha = {}", cert.alpha1, cert.alpha2, cert.alpha);
    let _ = writeln!(
        t,
        "slack: e1 = {}, e2 = {}, e3 = {}, e4 = {}",
        cert.epsilons.e1, cert.epsilons.e2, cert.epsilons.e3, cert.epsilons.e4
    );
    let _ = writeln!(t, "constants (sampled, inflated by {}):", c.safety_factor);
    let _ = writeln!(t, "  a1 = {}, a2 = {}, b1 = {}, b2 = {}", c.a1, c.a2, c.b1, c.b2);
    let _ = writeln!(t, "  eta1 = {}, eta2 = {}, theta1 = {}, theta2 = {}", c.eta1, c.eta2, c.theta1, c.theta2);
    let _ = writeln!(t, "budget: rho1 <= {}, rho2 <= {}", cert.rho1_max, cert.rho2_max);
    let _ = writeln!(t, "requested: rho1 = {}, rho2 = {}", cert.requested.0, cert.requested.1);
    let _ = writeln!(
        t,
        "composite decay at rho = ({}, {}): worst Vdot + alpha|dz|^2 = {} over {} samples, {}",
        cert.checked_gains.0,
        cert.checked_gains.1,
        cert.decay_report.worst_violation,
        cert.decay_report.samples,
        cert.decay_report.verdict
    );
    t
}

pub fn certify_cmd(s: &Scenario, dir: &Path) -> Result<Report> {
    let Some(ic) = s.system.interconnection() else {
        return Err(CliError::Config("certify needs a two-block system (fhn or user_polynomial)".into()));
    };
    let ic = ic?;
    let (v1, v2, b1, b2, a1, a2): (FinslerCandidate, FinslerCandidate, AssumptionTwoBounds, AssumptionTwoBounds, f64, f64) =
        match &s.system {
            System::Fhn(p) => {
                let t = fc_table(s, p)?;
                let (a1, a2) = component_rates(p);
                (fc_candidate(&t), half_square_candidate(), fc_bounds(&t), half_square_bounds(), a1, a2)
            }
            System::UserPolynomial(p) => {
                let (Some(a1), Some(a2)) = (s.analysis.alpha1, s.analysis.alpha2) else {
                    return Err(CliError::Config(
                        "certify on user_polynomial needs [analysis] alpha1 and alpha2".into(),
                    ));
                };
                let half = |k: usize| FinslerCandidate::constant_metric(Matrix::identity(k).scale(0.5));
                (
                    half(p.n)?,
                    half(p.m)?,
                    AssumptionTwoBounds::constant(0.0, 1.0),
                    AssumptionTwoBounds::constant(0.0, 1.0),
                    a1,
                    a2,
                )
            }
            System::BuiltinLinear(_) => unreachable!("no interconnection"),
        };
    let (radius, source) = match s.analysis.radius {
        Some(r) => (r, "configured".to_string()),
        None => {
            let field = s.system.field()?;
            let (_, est) = invariant_estimate(s, &field)?;
            (est.radius, format!("invariant-set search, level {}", est.level))
        }
    };
    let alpha = s.analysis.alpha.unwrap_or(0.5 * a1.min(a2));
    let mut opts = CertifyOptions::new(a1, a2, alpha);
    opts.constants = ConstantsOptions {
        grid_per_axis: s.analysis.grid_per_axis,
        safety_factor: s.analysis.safety_factor,
    };
    opts.state_samples = s.analysis.state_samples;
    opts.directions = s.analysis.directions;
    let cert = certify(&ic, (&v1, &v2), (&b1, &b2), radius, &opts)?;

    let mut rep = Report::new();
    let record = certificate_record(s, &cert, &source);
    let toml_text = toml::to_string(&record).map_err(|e| CliError::Internal(e.to_string()))?;
    rep.text(&toml_text, file(dir, s, "certificate.toml"))?;
    let text = certificate_text(&cert, &source);
    rep.text(&text, file(dir, s, "certificate.txt"))?;
    rep.summary.push_str(&text);
    match cert.status() {
        CertificateStatus::Certified => {}
        CertificateStatus::GainsExceedBudget => {
            rep.failure = Some(CliError::Refused(format!(
                "requested gains ({}, {}) exceed the budget ({}, {})",
                cert.requested.0, cert.requested.1, cert.rho1_max, cert.rho2_max
            )))
        }
        CertificateStatus::DecayViolated => {
            rep.failure = Some(CliError::Refused(format!(
                "composite decay violated at the budget gains (worst {})",
                cert.decay_report.worst_violation
            )))
        }
    }
    Ok(rep)
}

fn fit_options(s: &Scenario) -> FitOptions {
    let a = &s.analysis;
    FitOptions {
        transient_skip: a.transient_skip,
        lambda_min: a.lambda_min,
        residual_max: a.residual_max,
        late_floor: a.late_floor,
        ..FitOptions::default()
    }
}

fn point(z: &[f64]) -> String {
    let v: Vec<String> = z.iter().map(|x| fmt_num(*x)).collect();
    format!("({})", v.join(";"))
}

pub fn estimate(s: &Scenario, dir: &Path) -> Result<Report> {
    let field = s.system.field()?;
    let dim = s.system.dim();
    let pairs: Vec<InitialPair> = if s.initial_conditions.is_empty() {
        let mut rng = rng_from_seed(s.seed);
        box_pairs(&BoxRegion::centered(dim, s.analysis.box_half_width), s.analysis.pairs, &mut rng)
    } else {
        s.initial_conditions
            .chunks(2)
            .map(|c| (c[0].clone(), c[1].clone()))
            .collect()
    };
    let cfg = integrator(s);
    let opts = fit_options(s);
    let mut dist = Csv::new(&header(s), &["pair_id", "t", "distance"]);
    let mut summary = Csv::new(
        &header(s),
        &["pair_id", "z1", "z2", "K", "lambda", "residual", "late_ratio", "verdict"],
    );
    let mut rep = Report::new();
    let mut fits: Vec<Option<EnvelopeFit>> = Vec::new();
    for (i, (z1, z2)) in pairs.iter().enumerate() {
        if z1 == z2 {
            return Err(CliError::Config(format!("pair {i} has identical initial conditions")));
        }
        let a = integrate(&field, 0.0, z1, &cfg)?;
        let b = integrate(&field, 0.0, z2, &cfg)?;
        let d = distance_series(&a, &b);
        let stride = if s.integrator == Integrator::Rk4 { s.stride() } else { 1 };
        for (t, v) in d.times.iter().zip(&d.distances).step_by(stride) {
            dist.row(&[i.to_string(), fmt_num(*t), fmt_num(*v)]);
        }
        let fit = if d.blew_up {
            if rep.failure.is_none() {
                rep.failure = Some(CliError::BlowUp(format!("pair {i} blew up")));
            }
            None
        } else {
            Some(fit_envelope(&d.times, &d.distances, &opts)?)
        };
        match &fit {
            Some(f) => summary.row(&[
                i.to_string(),
                point(z1),
                point(z2),
                fmt_num(f.k),
                fmt_num(f.lambda),
                fmt_num(f.residual),
                fmt_num(f.late_ratio),
                f.verdict.to_string(),
            ]),
            None => summary.row(&[
                i.to_string(),
                point(z1),
                point(z2),
                "nan".into(),
                "nan".into(),
                "nan".into(),
                "nan".into(),
                "blew_up".into(),
            ]),
        }
        fits.push(fit);
    }
    let count = |v: FitVerdict| fits.iter().filter(|f| f.map(|f| f.verdict) == Some(v)).count();
    let min_lambda = fits.iter().flatten().map(|f| f.lambda).fold(f64::INFINITY, f64::min);
    let max_k = fits.iter().flatten().map(|f| f.k).fold(0.0, f64::max);
    let _ = writeln!(
        rep.summary,
        "{} pairs: {} contracting, {} non_contracting, {} inconclusive, {} blew up; min lambda {}, max K {}",
        pairs.len(),
        count(FitVerdict::Contracting),
        count(FitVerdict::NonContracting),
        count(FitVerdict::Inconclusive),
        fits.iter().filter(|f| f.is_none()).count(),
        min_lambda,
        max_k
    );
    rep.csv(&dist, file(dir, s, "distances.csv"))?;
    rep.csv(&summary, file(dir, s, "summary.csv"))?;

    if !s.analysis.radii.is_empty() {
        let w = wies_scan(&field, &s.analysis.radii, s.analysis.pairs_per_radius, &cfg, &opts, s.seed)?;
        let mut csv = Csv::new(
            &header(s),
            &["radius", "min_lambda", "max_k", "non_contracting", "blew_up"],
        );
        for r in &w.summaries {
            csv.row(&[
                fmt_num(r.radius),
                fmt_num(r.min_lambda),
                fmt_num(r.max_k),
                r.non_contracting.to_string(),
                r.blew_up.to_string(),
            ]);
        }
        rep.csv(&csv, file(dir, s, "wies.csv"))?;
        let _ = writeln!(
            rep.summary,
            "radius scan: lambda floor {}, gain profile {:?}, {}",
            w.lambda_floor,
            w.gain_profile,
            if w.passed { "pass" } else { "fail" }
        );
    }
    Ok(rep)
}
