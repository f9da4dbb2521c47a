//! Gain budgets for the two-block interconnection.
//!
//! On a ball of radius `R` that contains the trajectories of interest, the
//! composite candidate `V1 + V2` satisfies
//!
//! ```text
//! V̇ ≤ (−α1 + ρ1(a1η1 + b1ϑ1²/2) + ρ2 b2/2)|δx|²
//!   + (−α2 + ρ2(a2η2 + b2ϑ2²/2) + ρ1 b1/2)|δy|²
//! ```
//!
//! where `a_i` bound the couplings, `b_i` their Jacobians, and `η_i`, `ϑ_i`
//! the growth functions of the component candidates. [`gain_budget`] turns
//! slack allocations `ε1..ε4` into explicit upper limits on `(ρ1, ρ2)` that
//! keep both coefficients below `−α`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::dynsys::{assemble, Interconnection, TimeVaryingField};
use crate::error::{invalid, Error, Result};
use crate::finsler::{
    check_decay, compose, product_samples, AssumptionTwoBounds, DecayForm, DecayReport,
    FinslerCandidate, Sample, Slack,
};
use crate::linalg::norm;
use crate::sampling::{ball_grid, sphere_directions, BoxRegion};

/// Sampled suprema over the ball of radius `R`, inflated by a safety factor.
///
/// These are sampled, inflated estimates of true suprema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupConstants {
    pub radius: f64,
    /// `sup |g1(y)|`
    pub a1: f64,
    /// `sup |g2(x)|`
    pub a2: f64,
    /// `sup ‖∂g1/∂y‖`
    pub b1: f64,
    /// `sup ‖∂g2/∂x‖`
    pub b2: f64,
    /// `sup γ1`
    pub eta1: f64,
    /// `sup γ2`
    pub eta2: f64,
    /// `sup ζ1`
    pub theta1: f64,
    /// `sup ζ2`
    pub theta2: f64,
    pub safety_factor: f64,
    pub grid_per_axis: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsOptions {
    /// Nodes per axis of the uniform grid over `[-R, R]^k`.
    pub grid_per_axis: usize,
    pub safety_factor: f64,
}

impl Default for ConstantsOptions {
    fn default() -> Self {
        Self {
            grid_per_axis: 41,
            safety_factor: 1.05,
        }
    }
}

fn sampled_max(
    points: &[Vec<f64>],
    radius: f64,
    spacing: f64,
    what: &str,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    let mut eval = |p: &[f64]| -> Result<f64> {
        let v = f(p);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: format!("{what} at {p:?}"),
            });
        }
        Ok(v.abs())
    };
    let mut best = 0.0_f64;
    let mut arg: Option<&Vec<f64>> = None;
    for p in points {
        let v = eval(p)?;
        if v > best || arg.is_none() {
            best = best.max(v);
            arg = Some(p);
        }
    }
    let Some(start) = arg else { return Ok(best) };
    // compass search from the best node, kept inside the ball
    let mut x = start.clone();
    let mut step = spacing;
    let stop = radius * 1e-9;
    while step > stop {
        let mut moved = false;
        for i in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[i] += sign * step;
                if norm(&y) > radius {
                    continue;
                }
                let v = eval(&y)?;
                if v > best {
                    best = v;
                    x = y;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    Ok(best)
}

/// Grid suprema of the coupling maps, their Jacobians and the Assumption-2
/// growth functions over the ball `|·| ≤ radius`.
pub fn extract_constants(
    ic: &Interconnection,
    bounds: (&AssumptionTwoBounds, &AssumptionTwoBounds),
    radius: f64,
    opts: &ConstantsOptions,
) -> Result<SupConstants> {
    ic.validate()?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid("radius", "must be positive and finite"));
    }
    if !(opts.safety_factor >= 1.0) {
        return Err(invalid("safety_factor", "must be at least 1"));
    }
    let xs = ball_grid(ic.n(), radius, opts.grid_per_axis);
    let ys = ball_grid(ic.m(), radius, opts.grid_per_axis);
    let k = opts.safety_factor;
    let h = 2.0 * radius / (opts.grid_per_axis.max(2) - 1) as f64;
    Ok(SupConstants {
        radius,
        a1: k * sampled_max(&ys, radius, h, "g1", |y| norm(&ic.g1.eval(y)))?,
        a2: k * sampled_max(&xs, radius, h, "g2", |x| norm(&ic.g2.eval(x)))?,
        b1: k * sampled_max(&ys, radius, h, "∂g1/∂y", |y| ic.g1.jacobian(y).operator_norm())?,
        b2: k * sampled_max(&xs, radius, h, "∂g2/∂x", |x| ic.g2.jacobian(x).operator_norm())?,
        eta1: k * sampled_max(&xs, radius, h, "gamma1", |x| (bounds.0.gamma)(x))?,
        eta2: k * sampled_max(&ys, radius, h, "gamma2", |y| (bounds.1.gamma)(y))?,
        theta1: k * sampled_max(&xs, radius, h, "zeta1", |x| (bounds.0.zeta)(x))?,
        theta2: k * sampled_max(&ys, radius, h, "zeta2", |y| (bounds.1.zeta)(y))?,
        safety_factor: k,
        grid_per_axis: opts.grid_per_axis,
    })
}

/// Slack allocation with `ε1 + ε2 < α1 − α` and `ε3 + ε4 < α2 − α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilons {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
}

impl Epsilons {
    /// Thirds of each available margin.
    pub fn symmetric(alpha1: f64, alpha2: f64, alpha: f64) -> Self {
        let s1 = (alpha1 - alpha) / 3.0;
        let s2 = (alpha2 - alpha) / 3.0;
        Self {
            e1: s1,
            e2: s1,
            e3: s2,
            e4: s2,
        }
    }

    pub fn validate(&self, alpha1: f64, alpha2: f64, alpha: f64) -> Result<()> {
        let all = [self.e1, self.e2, self.e3, self.e4];
        if all.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(invalid("epsilons", "all four must be positive"));
        }
        if !(self.e1 + self.e2 < alpha1 - alpha) {
            return Err(invalid("epsilons", "need e1 + e2 < alpha1 - alpha"));
        }
        if !(self.e3 + self.e4 < alpha2 - alpha) {
            return Err(invalid("epsilons", "need e3 + e4 < alpha2 - alpha"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainBudget {
    pub rho1_max: f64,
    pub rho2_max: f64,
}

/// `num / den`, with a zero denominator meaning "no constraint".
fn branch(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Largest admissible gains for the given rates and slack allocation:
///
/// `ρ1 ≤ min(2ε1 / (2a1η1 + b1ϑ1²), 2ε4 / b1)`,
/// `ρ2 ≤ min(2ε3 / (2a2η2 + b2ϑ2²), 2ε2 / b2)`.
///
/// A zero denominator makes its branch `+∞`.
pub fn gain_budget(
    c: &SupConstants,
    alpha1: f64,
    alpha2: f64,
    alpha: f64,
    eps: &Epsilons,
) -> Result<GainBudget> {
    if !(alpha > 0.0) {
        return Err(invalid("alpha", "target rate must be positive"));
    }
    if !(alpha < alpha1.min(alpha2)) {
        return Err(Error::Infeasible(format!(
            "target rate {alpha} is not below min(alpha1, alpha2) = {}",
            alpha1.min(alpha2)
        )));
    }
    eps.validate(alpha1, alpha2, alpha)?;
    let rho1 = branch(2.0 * eps.e1, 2.0 * c.a1 * c.eta1 + c.b1 * c.theta1 * c.theta1)
        .min(branch(2.0 * eps.e4, c.b1));
    let rho2 = branch(2.0 * eps.e3, 2.0 * c.a2 * c.eta2 + c.b2 * c.theta2 * c.theta2)
        .min(branch(2.0 * eps.e2, c.b2));
    Ok(GainBudget {
        rho1_max: rho1,
        rho2_max: rho2,
    })
}

/// `0·∞ = 0` product used when a budget is unbounded.
fn times(rho: f64, coef: f64) -> f64 {
    if coef == 0.0 {
        0.0
    } else {
        rho * coef
    }
}

/// Margins `−α − coefficient` of the `|δx|²` and `|δy|²` coefficients of the
/// composite bound at gains `(ρ1, ρ2)`. Both nonnegative means `V̇ ≤ −α|δz|²`
/// holds on the ball.
pub fn inequality_margins(
    c: &SupConstants,
    alpha1: f64,
    alpha2: f64,
    alpha: f64,
    rho1: f64,
    rho2: f64,
) -> (f64, f64) {
    let dx = -alpha1
        + times(rho1, c.a1 * c.eta1 + c.b1 * c.theta1 * c.theta1 / 2.0)
        + times(rho2, c.b2 / 2.0);
    let dy = -alpha2
        + times(rho2, c.a2 * c.eta2 + c.b2 * c.theta2 * c.theta2 / 2.0)
        + times(rho1, c.b1 / 2.0);
    (-alpha - dx, -alpha - dy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyOptions {
    /// Component rates in `V̇_i ≤ −α_i|δ·|²` form.
    pub alpha1: f64,
    pub alpha2: f64,
    /// Target composite rate.
    pub alpha: f64,
    /// Defaults to [`Epsilons::symmetric`].
    pub epsilons: Option<Epsilons>,
    pub constants: ConstantsOptions,
    /// Halton state points drawn from each ball.
    pub state_samples: usize,
    /// Unit displacement directions per state point.
    pub directions: usize,
    pub slack: Slack,
    /// Time at which time-varying fields are sampled.
    pub time: f64,
}

impl CertifyOptions {
    pub fn new(alpha1: f64, alpha2: f64, alpha: f64) -> Self {
        Self {
            alpha1,
            alpha2,
            alpha,
            epsilons: None,
            constants: ConstantsOptions::default(),
            state_samples: 400,
            directions: 16,
            slack: Slack::default(),
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateStatus {
    /// Requested gains are within budget and no sampled decay violation was found.
    Certified,
    /// The budget is sound at sample resolution but the requested gains exceed it.
    GainsExceedBudget,
    /// The composite decay check failed at the budget gains.
    DecayViolated,
}

impl fmt::Display for CertificateStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertificateStatus::Certified => "certified",
            CertificateStatus::GainsExceedBudget => "requested gains exceed budget",
            CertificateStatus::DecayViolated => "composite decay violated",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainCertificate {
    pub constants: SupConstants,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha: f64,
    pub epsilons: Epsilons,
    pub rho1_max: f64,
    pub rho2_max: f64,
    /// Gains of the interconnection handed to [`certify`].
    pub requested: (f64, f64),
    /// Gains at which the composite decay check ran (budget maxima, or the
    /// requested gains where a budget is unbounded).
    pub checked_gains: (f64, f64),
    pub component_reports: (DecayReport, DecayReport),
    pub decay_report: DecayReport,
    pub margins_at_budget: (f64, f64),
}

impl GainCertificate {
    pub fn passed(&self) -> bool {
        self.decay_report.verdict.passed()
    }

    pub fn covers_requested(&self) -> bool {
        self.requested.0 <= self.rho1_max && self.requested.1 <= self.rho2_max
    }

    pub fn status(&self) -> CertificateStatus {
        if !self.passed() {
            CertificateStatus::DecayViolated
        } else if !self.covers_requested() {
            CertificateStatus::GainsExceedBudget
        } else {
            CertificateStatus::Certified
        }
    }
}

/// Halton points of `[-R, R]^dim` that fall in the ball, plus the origin.
pub fn ball_samples(dim: usize, radius: f64, count: usize) -> Vec<Vec<f64>> {
    let cube = BoxRegion::centered(dim, radius);
    let mut out = Vec::with_capacity(count.max(1));
    out.push(alloc::vec![0.0; dim]);
    // ball-to-cube volume ratio stays above 1/12 for dim ≤ 4
    let mut batch = 4 * count.max(1);
    while out.len() < count && batch < 1 << 24 {
        out.truncate(1);
        for q in cube.halton(batch) {
            if norm(&q) <= radius && out.len() < count {
                out.push(q);
            }
        }
        batch *= 4;
    }
    out
}

fn component_samples(dim: usize, radius: f64, opts: &CertifyOptions) -> Vec<Sample> {
    product_samples(
        &ball_samples(dim, radius, opts.state_samples),
        &sphere_directions(dim, opts.directions),
        opts.time,
    )
}

/// Certifies a gain budget on the ball of radius `radius`.
///
/// Steps: check each component candidate's decay on its isolated field,
/// extract the sup-constants, compute the budget, then sample the composite
/// decay `V̇ ≤ −α|δz|²` on the assembled field at the budget gains.
pub fn certify(
    ic: &Interconnection,
    candidates: (&FinslerCandidate, &FinslerCandidate),
    bounds: (&AssumptionTwoBounds, &AssumptionTwoBounds),
    radius: f64,
    opts: &CertifyOptions,
) -> Result<GainCertificate> {
    ic.validate()?;
    let (v1, v2) = candidates;
    if v1.dim() != ic.n() || v2.dim() != ic.m() {
        return Err(Error::DimensionMismatch {
            block: "candidate vs block".into(),
            expected: ic.n() + ic.m(),
            got: v1.dim() + v2.dim(),
        });
    }
    let check_component = |v: &FinslerCandidate, f: &TimeVaryingField, rate: f64, name: &str| {
        let samples = component_samples(f.dim(), radius, opts);
        let r = check_decay(v, f, rate, DecayForm::SquaredNorm, &samples, opts.slack)?;
        if !r.verdict.passed() {
            let s = r.worst_sample.as_ref().expect("nonempty sample set");
            return Err(Error::Refused(format!(
                "{name} violates V̇ ≤ -{rate}|δ|² by {:.3e} at z={:?}, δz={:?}",
                r.worst_violation, s.z, s.dz
            )));
        }
        Ok(r)
    };
    let r1 = check_component(v1, &ic.f1, opts.alpha1, "component 1")?;
    let r2 = check_component(v2, &ic.f2, opts.alpha2, "component 2")?;

    let constants = extract_constants(ic, bounds, radius, &opts.constants)?;
    let eps = opts
        .epsilons
        .unwrap_or_else(|| Epsilons::symmetric(opts.alpha1, opts.alpha2, opts.alpha));
    let budget = gain_budget(&constants, opts.alpha1, opts.alpha2, opts.alpha, &eps)?;
    let pick = |max: f64, req: f64| if max.is_finite() { max } else { req };
    let checked = (
        pick(budget.rho1_max, ic.rho1),
        pick(budget.rho2_max, ic.rho2),
    );
    let coupled = assemble(&ic.with_gains(checked.0, checked.1))?;
    let composite = compose(v1, v2);
    let samples = component_samples(ic.n() + ic.m(), radius, opts);
    let decay_report = check_decay(
        &composite,
        &coupled,
        opts.alpha,
        DecayForm::SquaredNorm,
        &samples,
        opts.slack,
    )?;
    let margins_at_budget = inequality_margins(
        &constants,
        opts.alpha1,
        opts.alpha2,
        opts.alpha,
        checked.0,
        checked.1,
    );
    Ok(GainCertificate {
        constants,
        alpha1: opts.alpha1,
        alpha2: opts.alpha2,
        alpha: opts.alpha,
        epsilons: eps,
        rho1_max: budget.rho1_max,
        rho2_max: budget.rho2_max,
        requested: (ic.rho1, ic.rho2),
        checked_gains: checked,
        component_reports: (r1, r2),
        decay_report,
        margins_at_budget,
    })
}

pub type GainFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Class-K gains of the two ISpS blocks and the threshold `r0`.
#[derive(Clone)]
pub struct IspsGainPair {
    pub chi_x: Arc<GainFn>,
    pub chi_y: Arc<GainFn>,
    pub r0: f64,
    pub r_max: f64,
}

impl fmt::Debug for IspsGainPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IspsGainPair")
            .field("r0", &self.r0)
            .field("r_max", &self.r_max)
            .finish_non_exhaustive()
    }
}

impl IspsGainPair {
    pub fn new<X, Y>(chi_x: X, chi_y: Y, r0: f64, r_max: f64) -> Self
    where
        X: Fn(f64) -> f64 + Send + Sync + 'static,
        Y: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            chi_x: Arc::new(chi_x),
            chi_y: Arc::new(chi_y),
            r0,
            r_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IspsReport {
    pub passed: bool,
    /// `max χx(χy(r)) / r` over the grid.
    pub worst_ratio: f64,
    pub worst_r: f64,
    pub grid_points: usize,
}

/// Checks `χx∘χy(r) ≤ r` on `grid_points` evenly spaced radii in `(r0, r_max]`.
pub fn isps_smallgain_check(pair: &IspsGainPair, grid_points: usize) -> Result<IspsReport> {
    if !(pair.r0 > 0.0 && pair.r0 < pair.r_max) {
        return Err(invalid("r0", "need 0 < r0 < r_max"));
    }
    if grid_points == 0 {
        return Err(Error::EmptySampleSet);
    }
    for (name, chi) in [("chi_x", &pair.chi_x), ("chi_y", &pair.chi_y)] {
        if chi(0.0) != 0.0 {
            return Err(invalid("gain", format!("{name}(0) must be 0")));
        }
        let mut prev = 0.0;
        for k in 1..=grid_points {
            let r = pair.r_max * k as f64 / grid_points as f64;
            let v = chi(r);
            if !(v >= prev) {
                return Err(invalid("gain", format!("{name} decreases near r={r}")));
            }
            prev = v;
        }
    }
    let mut worst = (f64::NEG_INFINITY, pair.r0);
    for k in 1..=grid_points {
        let r = pair.r0 + (pair.r_max - pair.r0) * k as f64 / grid_points as f64;
        let ratio = (pair.chi_x)((pair.chi_y)(r)) / r;
        if ratio > worst.0 {
            worst = (ratio, r);
        }
    }
    Ok(IspsReport {
        passed: worst.0 <= 1.0,
        worst_ratio: worst.0,
        worst_r: worst.1,
        grid_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::CouplingMap;
    use crate::linalg::Matrix;

    fn unit_constants() -> SupConstants {
        SupConstants {
            radius: 1.0,
            a1: 1.0,
            a2: 1.0,
            b1: 1.0,
            b2: 1.0,
            eta1: 1.0,
            eta2: 1.0,
            theta1: 1.0,
            theta2: 1.0,
            safety_factor: 1.0,
            grid_per_axis: 0,
        }
    }

    #[test]
    fn budget_hand_example() {
        let eps = Epsilons {
            e1: 0.2,
            e2: 0.2,
            e3: 0.2,
            e4: 0.2,
        };
        let b = gain_budget(&unit_constants(), 1.0, 1.0, 0.5, &eps).unwrap();
        assert!((b.rho1_max - 2.0 / 15.0).abs() < 1e-15);
        assert!((b.rho2_max - 2.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn budget_without_coupling_jacobians_is_unbounded_in_second_branch() {
        let c = SupConstants {
            b1: 0.0,
            b2: 0.0,
            ..unit_constants()
        };
        let eps = Epsilons::symmetric(1.0, 1.0, 0.5);
        let b = gain_budget(&c, 1.0, 1.0, 0.5, &eps).unwrap();
        // first branch 2ε/(2aη) = ε stays finite
        assert!((b.rho1_max - eps.e1).abs() < 1e-15);
        assert_eq!(branch(2.0 * eps.e4, c.b1), f64::INFINITY);
        let c0 = SupConstants {
            a1: 0.0,
            a2: 0.0,
            ..c
        };
        let b0 = gain_budget(&c0, 1.0, 1.0, 0.5, &eps).unwrap();
        assert!(b0.rho1_max.is_infinite() && b0.rho2_max.is_infinite());
    }

    #[test]
    fn infeasible_rate_is_reported() {
        let eps = Epsilons::symmetric(1.0, 1.0, 0.5);
        let e = gain_budget(&unit_constants(), 1.0, 0.4, 0.5, &eps);
        assert!(matches!(e, Err(Error::Infeasible(_))));
        let bad = Epsilons {
            e1: 0.3,
            e2: 0.3,
            e3: 0.1,
            e4: 0.1,
        };
        assert!(gain_budget(&unit_constants(), 1.0, 1.0, 0.5, &bad).is_err());
    }

    #[test]
    fn linear_coupling_constants() {
        let minus_id = CouplingMap::linear(Matrix::from_rows(&[&[-1.0]]));
        let ic = Interconnection {
            f1: TimeVaryingField::linear(Matrix::from_rows(&[&[-1.0]])),
            f2: TimeVaryingField::linear(Matrix::from_rows(&[&[-1.0]])),
            g1: minus_id.clone(),
            g2: minus_id,
            rho1: 0.1,
            rho2: 0.1,
        };
        let b = AssumptionTwoBounds::constant(0.0, 1.0);
        let c = extract_constants(&ic, (&b, &b), 3.0, &ConstantsOptions::default()).unwrap();
        assert!((c.a1 - 3.0 * 1.05).abs() < 1e-12);
        assert!((c.b1 - 1.05).abs() < 1e-12);
        assert_eq!(c.eta1, 0.0);
        assert!((c.theta2 - 1.05).abs() < 1e-12);
    }

    #[test]
    fn isps_examples() {
        let half = IspsGainPair::new(|r| r / 2.0, |r| r / 2.0, 0.1, 10.0);
        let r = isps_smallgain_check(&half, 200).unwrap();
        assert!(r.passed);
        assert!((r.worst_ratio - 0.25).abs() < 1e-12);

        let big = IspsGainPair::new(|r| 2.0 * r, |r| r, 0.1, 10.0);
        assert!(!isps_smallgain_check(&big, 200).unwrap().passed);

        let roots = IspsGainPair::new(|r: f64| r.sqrt(), |r: f64| r.sqrt(), 1.0, 100.0);
        assert!(isps_smallgain_check(&roots, 500).unwrap().passed);

        let not_k = IspsGainPair::new(|r| r + 1.0, |r| r, 1.0, 10.0);
        assert!(isps_smallgain_check(&not_k, 10).is_err());
    }
}
