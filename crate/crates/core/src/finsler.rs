//! Exponential Finsler Lyapunov candidates `V(z, δz)` and sample-based checks
//! of their sandwich, decay and gradient-growth inequalities.
//!
//! The inequalities are meant to hold for every `z` in a set and every
//! displacement. A finite sample can only refute them, so every report
//! carries a [`Verdict`] that reads "no violation found" at best.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::dynsys::TimeVaryingField;
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm, symmetric_eigenvalues, Matrix};

pub type ValueFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
pub type GradFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
pub type MetricFn = dyn Fn(&[f64]) -> Matrix + Send + Sync;
pub type MetricGradFn = dyn Fn(&[f64]) -> Vec<Matrix> + Send + Sync;
pub type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Outcome of a sampled inequality check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    NoViolationFound,
    Violated,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::NoViolationFound
    }

    fn from_pass(ok: bool) -> Self {
        if ok {
            Verdict::NoViolationFound
        } else {
            Verdict::Violated
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::NoViolationFound => "no violation found (sampled evidence, not a proof)",
            Verdict::Violated => "violated",
        })
    }
}

/// Allowed slack on a sampled inequality: `absolute + relative·|scale|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slack {
    pub absolute: f64,
    pub relative: f64,
}

impl Slack {
    pub const ZERO: Slack = Slack {
        absolute: 0.0,
        relative: 0.0,
    };

    pub fn allowed(&self, scale: f64) -> f64 {
        self.absolute + self.relative * scale.abs()
    }
}

impl Default for Slack {
    fn default() -> Self {
        Self {
            absolute: 1e-9,
            relative: 1e-9,
        }
    }
}

#[derive(Clone)]
struct QuadraticParts {
    metric: Arc<MetricFn>,
    metric_grad: Arc<MetricGradFn>,
}

/// A Finsler Lyapunov candidate with both partial gradients and quadratic
/// sandwich constants `c_lower |δz|² ≤ V ≤ c_upper |δz|²`.
#[derive(Clone)]
pub struct FinslerCandidate {
    dim: usize,
    value: Arc<ValueFn>,
    grad_state: Arc<GradFn>,
    grad_disp: Arc<GradFn>,
    pub c_lower: f64,
    pub c_upper: f64,
    quadratic: Option<QuadraticParts>,
}

impl fmt::Debug for FinslerCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FinslerCandidate")
            .field("dim", &self.dim)
            .field("c_lower", &self.c_lower)
            .field("c_upper", &self.c_upper)
            .field("quadratic", &self.quadratic.is_some())
            .finish_non_exhaustive()
    }
}

/// Central-difference step `1e-6·(1+|arg|)`.
fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

impl FinslerCandidate {
    /// Candidate from its value alone; gradients fall back to central
    /// differences.
    pub fn from_value<V>(dim: usize, value: V, c_lower: f64, c_upper: f64) -> Self
    where
        V: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        let value: Arc<ValueFn> = Arc::new(value);
        let v1 = value.clone();
        let v2 = value.clone();
        Self {
            dim,
            value,
            grad_state: Arc::new(move |z, dz, out| {
                let mut zp = z.to_vec();
                for k in 0..z.len() {
                    let h = fd_step(z[k]);
                    zp[k] = z[k] + h;
                    let p = v1(&zp, dz);
                    zp[k] = z[k] - h;
                    let m = v1(&zp, dz);
                    zp[k] = z[k];
                    out[k] = (p - m) / (2.0 * h);
                }
            }),
            grad_disp: Arc::new(move |z, dz, out| {
                let mut dp = dz.to_vec();
                for k in 0..dz.len() {
                    let h = fd_step(dz[k]);
                    dp[k] = dz[k] + h;
                    let p = v2(z, &dp);
                    dp[k] = dz[k] - h;
                    let m = v2(z, &dp);
                    dp[k] = dz[k];
                    out[k] = (p - m) / (2.0 * h);
                }
            }),
            c_lower,
            c_upper,
            quadratic: None,
        }
    }

    /// Candidate with analytic gradients.
    pub fn with_gradients<V, GS, GD>(
        dim: usize,
        value: V,
        grad_state: GS,
        grad_disp: GD,
        c_lower: f64,
        c_upper: f64,
    ) -> Self
    where
        V: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        GS: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        GD: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            dim,
            value: Arc::new(value),
            grad_state: Arc::new(grad_state),
            grad_disp: Arc::new(grad_disp),
            c_lower,
            c_upper,
            quadratic: None,
        }
    }

    /// `V = δzᵀ M δz` with constant `M`, e.g. `½|δz|²` for `M = ½ I`.
    pub fn constant_metric(m: Matrix) -> Result<Self> {
        let dim = m.rows();
        let eig = symmetric_eigenvalues(&m);
        let q = QuadraticFormCandidate {
            dim,
            metric: Arc::new(move |_z: &[f64]| m.clone()),
            metric_grad: Arc::new(move |_z: &[f64]| vec![Matrix::zeros(dim, dim); dim]),
            eigen_bounds: (eig[0], eig[dim - 1]),
        };
        q.into_candidate()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, z: &[f64], dz: &[f64]) -> f64 {
        (self.value)(z, dz)
    }

    pub fn grad_state(&self, z: &[f64], dz: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        (self.grad_state)(z, dz, &mut g);
        g
    }

    pub fn grad_disp(&self, z: &[f64], dz: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        (self.grad_disp)(z, dz, &mut g);
        g
    }

    pub fn is_quadratic(&self) -> bool {
        self.quadratic.is_some()
    }

    /// `V̇` of a quadratic-form candidate computed from `M`, `∂M` and `J_f`:
    /// `δzᵀ (Ṁ + M J + Jᵀ M) δz`. `None` for non-quadratic candidates.
    pub fn symbolic_vdot(
        &self,
        field: &TimeVaryingField,
        t: f64,
        z: &[f64],
        dz: &[f64],
    ) -> Option<f64> {
        let q = self.quadratic.as_ref()?;
        let m = (q.metric)(z);
        let dm = (q.metric_grad)(z);
        let f = field.eval(t, z);
        let j = field.jacobian(t, z);
        let mut mdot = Matrix::zeros(self.dim, self.dim);
        for (k, dmk) in dm.iter().enumerate() {
            mdot = mdot.add(&dmk.scale(f[k]));
        }
        let jdz = j.mul_vec(dz);
        Some(mdot.bilinear(dz, dz) + 2.0 * m.bilinear(dz, &jdz))
    }

    fn check_dims(&self, z: &[f64], dz: &[f64]) -> Result<()> {
        for (what, v) in [("state sample", z), ("displacement sample", dz)] {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    block: what.into(),
                    expected: self.dim,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }
}

/// `V(z, δz) = δzᵀ M(z) δz` with `M` symmetric positive definite and `C¹`.
#[derive(Clone)]
pub struct QuadraticFormCandidate {
    pub dim: usize,
    pub metric: Arc<MetricFn>,
    /// `∂M/∂z_k` for `k = 0..dim`.
    pub metric_grad: Arc<MetricGradFn>,
    /// `(inf λmin M, sup λmax M)` over the working set.
    pub eigen_bounds: (f64, f64),
}

impl QuadraticFormCandidate {
    /// Sampled `(min λmin, max λmax)` of `M` over `points`.
    pub fn sampled_eigen_bounds(metric: &MetricFn, points: &[Vec<f64>]) -> Result<(f64, f64)> {
        if points.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in points {
            let m = metric(p);
            if m.max_asymmetry() > 1e-12 * (1.0 + m.operator_norm()) {
                return Err(invalid("metric", "M(z) is not symmetric at a sample"));
            }
            let e = symmetric_eigenvalues(&m);
            lo = lo.min(e[0]);
            hi = hi.max(*e.last().unwrap());
        }
        Ok((lo, hi))
    }

    pub fn into_candidate(self) -> Result<FinslerCandidate> {
        let (lo, hi) = self.eigen_bounds;
        if !(lo > 0.0 && hi >= lo) {
            return Err(invalid(
                "eigen_bounds",
                "need 0 < inf λmin(M) ≤ sup λmax(M)",
            ));
        }
        let dim = self.dim;
        let m_val = self.metric.clone();
        let dm_gs = self.metric_grad.clone();
        let m_gd = self.metric.clone();
        Ok(FinslerCandidate {
            dim,
            value: Arc::new(move |z, dz| m_val(z).bilinear(dz, dz)),
            grad_state: Arc::new(move |z, dz, out| {
                for (k, dmk) in dm_gs(z).iter().enumerate() {
                    out[k] = dmk.bilinear(dz, dz);
                }
            }),
            grad_disp: Arc::new(move |z, dz, out| {
                let m = m_gd(z);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..dim).map(|j| (m[(i, j)] + m[(j, i)]) * dz[j]).sum();
                }
            }),
            c_lower: lo,
            c_upper: hi,
            quadratic: Some(QuadraticParts {
                metric: self.metric,
                metric_grad: self.metric_grad,
            }),
        })
    }
}

/// Assumption-2 growth functions `γ(z)`, `ζ(z)`:
/// `|∂V/∂z| ≤ γ(z)|δz|²` and `|∂V/∂δz| ≤ ζ(z)|δz|`.
#[derive(Clone)]
pub struct AssumptionTwoBounds {
    pub gamma: Arc<ScalarFn>,
    pub zeta: Arc<ScalarFn>,
}

impl fmt::Debug for AssumptionTwoBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AssumptionTwoBounds { .. }")
    }
}

impl AssumptionTwoBounds {
    pub fn new<G, Z>(gamma: G, zeta: Z) -> Self
    where
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        Z: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            gamma: Arc::new(gamma),
            zeta: Arc::new(zeta),
        }
    }

    pub fn constant(gamma: f64, zeta: f64) -> Self {
        Self::new(move |_| gamma, move |_| zeta)
    }
}

/// A state/displacement sample, optionally at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub z: Vec<f64>,
    pub dz: Vec<f64>,
}

impl Sample {
    pub fn new(z: Vec<f64>, dz: Vec<f64>) -> Self {
        Self { t: 0.0, z, dz }
    }

    pub fn at(t: f64, z: Vec<f64>, dz: Vec<f64>) -> Self {
        Self { t, z, dz }
    }
}

/// Cartesian product of state points and unit displacement directions.
///
/// For quadratic-form candidates homogeneity makes the radius of `δz`
/// irrelevant, so directions on the unit sphere suffice.
pub fn product_samples(points: &[Vec<f64>], directions: &[Vec<f64>], t: f64) -> Vec<Sample> {
    let mut out = Vec::with_capacity(points.len() * directions.len());
    for p in points {
        for d in directions {
            out.push(Sample::at(t, p.clone(), d.clone()));
        }
    }
    out
}

/// `V̇ = ∂V/∂z · f(t,z) + ∂V/∂δz · J_f(t,z) δz`.
pub fn vdot(
    candidate: &FinslerCandidate,
    field: &TimeVaryingField,
    t: f64,
    z: &[f64],
    dz: &[f64],
) -> Result<f64> {
    candidate.check_dims(z, dz)?;
    if field.dim() != candidate.dim() {
        return Err(Error::DimensionMismatch {
            block: "field vs candidate".into(),
            expected: candidate.dim(),
            got: field.dim(),
        });
    }
    let gs = candidate.grad_state(z, dz);
    let gd = candidate.grad_disp(z, dz);
    let f = field.eval(t, z);
    let jdz = field.jacobian(t, z).mul_vec(dz);
    Ok(dot(&gs, &f) + dot(&gd, &jdz))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    /// `min (V − c_lower|δz|²)`
    pub worst_lower_margin: f64,
    pub worst_lower_index: usize,
    /// `min (c_upper|δz|² − V)`
    pub worst_upper_margin: f64,
    pub worst_upper_index: usize,
    pub samples: usize,
    pub verdict: Verdict,
}

pub fn check_sandwich(
    candidate: &FinslerCandidate,
    samples: &[Sample],
    slack: Slack,
) -> Result<SandwichReport> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut lo = (f64::INFINITY, 0usize);
    let mut hi = (f64::INFINITY, 0usize);
    let mut ok = true;
    for (i, s) in samples.iter().enumerate() {
        candidate.check_dims(&s.z, &s.dz)?;
        let n2 = dot(&s.dz, &s.dz);
        if n2 == 0.0 {
            return Err(invalid("samples", "displacement samples must be nonzero"));
        }
        let v = candidate.value(&s.z, &s.dz);
        let ml = v - candidate.c_lower * n2;
        let mu = candidate.c_upper * n2 - v;
        // strict comparison keeps the lowest index on ties
        if ml < lo.0 {
            lo = (ml, i);
        }
        if mu < hi.0 {
            hi = (mu, i);
        }
        let tol = slack.allowed(v);
        ok &= ml >= -tol && mu >= -tol;
    }
    Ok(SandwichReport {
        worst_lower_margin: lo.0,
        worst_lower_index: lo.1,
        worst_upper_margin: hi.0,
        worst_upper_index: hi.1,
        samples: samples.len(),
        verdict: Verdict::from_pass(ok),
    })
}

/// Right-hand side used by the decay inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayForm {
    /// `V̇ ≤ −α V`
    Value,
    /// `V̇ ≤ −α |δz|²`, the form component candidates are stated in.
    SquaredNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub alpha: f64,
    pub form: DecayForm,
    /// Largest `V̇ + α·(V or |δz|²)` seen.
    pub worst_violation: f64,
    pub worst_index: usize,
    pub worst_sample: Option<Sample>,
    pub samples: usize,
    pub verdict: Verdict,
}

pub fn check_decay(
    candidate: &FinslerCandidate,
    field: &TimeVaryingField,
    alpha: f64,
    form: DecayForm,
    samples: &[Sample],
    slack: Slack,
) -> Result<DecayReport> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if !(alpha > 0.0) {
        return Err(invalid("alpha", "decay rate must be positive"));
    }
    let mut worst = (f64::NEG_INFINITY, 0usize);
    let mut ok = true;
    for (i, s) in samples.iter().enumerate() {
        let vd = vdot(candidate, field, s.t, &s.z, &s.dz)?;
        let v = candidate.value(&s.z, &s.dz);
        let rhs = match form {
            DecayForm::Value => v,
            DecayForm::SquaredNorm => dot(&s.dz, &s.dz),
        };
        let excess = vd + alpha * rhs;
        if !excess.is_finite() {
            return Err(Error::NonFinite {
                what: alloc::format!("V̇ at sample {i}"),
            });
        }
        if excess > worst.0 {
            worst = (excess, i);
        }
        ok &= excess <= slack.allowed(v);
    }
    Ok(DecayReport {
        alpha,
        form,
        worst_violation: worst.0,
        worst_index: worst.1,
        worst_sample: Some(samples[worst.1].clone()),
        samples: samples.len(),
        verdict: Verdict::from_pass(ok),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assumption2Report {
    /// Largest `|∂V/∂z| − γ(z)|δz|²`.
    pub worst_state_excess: f64,
    pub worst_state_index: usize,
    /// Largest `|∂V/∂δz| − ζ(z)|δz|`.
    pub worst_disp_excess: f64,
    pub worst_disp_index: usize,
    pub samples: usize,
    pub verdict: Verdict,
}

pub fn verify_assumption2(
    candidate: &FinslerCandidate,
    bounds: &AssumptionTwoBounds,
    samples: &[Sample],
    slack: Slack,
) -> Result<Assumption2Report> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut ws = (f64::NEG_INFINITY, 0usize);
    let mut wd = (f64::NEG_INFINITY, 0usize);
    let mut ok = true;
    for (i, s) in samples.iter().enumerate() {
        candidate.check_dims(&s.z, &s.dz)?;
        let n = norm(&s.dz);
        let gs = norm(&candidate.grad_state(&s.z, &s.dz));
        let gd = norm(&candidate.grad_disp(&s.z, &s.dz));
        let bs = (bounds.gamma)(&s.z) * n * n;
        let bd = (bounds.zeta)(&s.z) * n;
        let es = gs - bs;
        let ed = gd - bd;
        if es > ws.0 {
            ws = (es, i);
        }
        if ed > wd.0 {
            wd = (ed, i);
        }
        ok &= es <= slack.allowed(bs) && ed <= slack.allowed(bd);
    }
    Ok(Assumption2Report {
        worst_state_excess: ws.0,
        worst_state_index: ws.1,
        worst_disp_excess: wd.0,
        worst_disp_index: wd.1,
        samples: samples.len(),
        verdict: Verdict::from_pass(ok),
    })
}

/// `V(x, y, δx, δy) = V1(x, δx) + V2(y, δy)` on the product space, with
/// `c_lower = min` and `c_upper = max` of the parts.
pub fn compose(first: &FinslerCandidate, second: &FinslerCandidate) -> FinslerCandidate {
    let n = first.dim();
    let dim = n + second.dim();
    let (a, b) = (first.clone(), second.clone());
    let (a1, b1) = (first.clone(), second.clone());
    let (a2, b2) = (first.clone(), second.clone());
    let quadratic = match (&first.quadratic, &second.quadratic) {
        (Some(p), Some(q)) => {
            let (pm, qm) = (p.metric.clone(), q.metric.clone());
            let (pg, qg) = (p.metric_grad.clone(), q.metric_grad.clone());
            let m2 = second.dim();
            Some(QuadraticParts {
                metric: Arc::new(move |z: &[f64]| {
                    block_diag(&pm(&z[..n]), &qm(&z[n..]))
                }),
                metric_grad: Arc::new(move |z: &[f64]| {
                    let mut out = Vec::with_capacity(n + m2);
                    for g in pg(&z[..n]) {
                        out.push(block_diag(&g, &Matrix::zeros(m2, m2)));
                    }
                    for g in qg(&z[n..]) {
                        out.push(block_diag(&Matrix::zeros(n, n), &g));
                    }
                    out
                }),
            })
        }
        _ => None,
    };
    FinslerCandidate {
        dim,
        value: Arc::new(move |z, dz| a.value(&z[..n], &dz[..n]) + b.value(&z[n..], &dz[n..])),
        grad_state: Arc::new(move |z, dz, out| {
            let (o1, o2) = out.split_at_mut(n);
            (a1.grad_state)(&z[..n], &dz[..n], o1);
            (b1.grad_state)(&z[n..], &dz[n..], o2);
        }),
        grad_disp: Arc::new(move |z, dz, out| {
            let (o1, o2) = out.split_at_mut(n);
            (a2.grad_disp)(&z[..n], &dz[..n], o1);
            (b2.grad_disp)(&z[n..], &dz[n..], o2);
        }),
        c_lower: first.c_lower.min(second.c_lower),
        c_upper: first.c_upper.max(second.c_upper),
        quadratic,
    }
}

fn block_diag(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, m) = (a.rows(), b.rows());
    let mut out = Matrix::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = a[(i, j)];
        }
    }
    for i in 0..m {
        for j in 0..m {
            out[(n + i, n + j)] = b[(i, j)];
        }
    }
    out
}

/// One-line human summary of a decay report.
pub fn describe_decay(r: &DecayReport) -> String {
    alloc::format!(
        "decay check ({:?}, alpha={}): {} over {} samples; worst excess {:.3e} at sample {}",
        r.form, r.alpha, r.verdict, r.samples, r.worst_violation, r.worst_index
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_norm(dim: usize) -> FinslerCandidate {
        FinslerCandidate::constant_metric(Matrix::identity(dim).scale(0.5)).unwrap()
    }

    #[test]
    fn vdot_of_half_norm_on_contraction() {
        let f = TimeVaryingField::linear(Matrix::identity(2).scale(-1.0));
        let v = half_norm(2);
        let r = vdot(&v, &f, 0.0, &[0.3, 2.0], &[1.0, -2.0]).unwrap();
        assert!((r + 5.0).abs() < 1e-14);
    }

    #[test]
    fn sandwich_margins() {
        let v = FinslerCandidate::constant_metric(Matrix::identity(2).scale(2.0)).unwrap();
        let v = FinslerCandidate {
            c_lower: 1.0,
            c_upper: 3.0,
            ..v
        };
        let s = product_samples(&[vec![0.0, 1.0]], &crate::sampling::sphere_directions(2, 8), 0.0);
        let r = check_sandwich(&v, &s, Slack::default()).unwrap();
        assert!(r.worst_lower_margin > 0.0 && r.worst_upper_margin > 0.0);
        assert!(r.verdict.passed());

        let w = FinslerCandidate::constant_metric(Matrix::identity(2)).unwrap();
        let w = FinslerCandidate { c_lower: 2.0, ..w };
        let r = check_sandwich(&w, &s, Slack::default()).unwrap();
        assert!(r.worst_lower_margin < 0.0);
        assert_eq!(r.verdict, Verdict::Violated);
        assert!(check_sandwich(&w, &[], Slack::default()).is_err());
    }

    #[test]
    fn assumption2_for_half_norm_and_undersized_zeta() {
        let v = half_norm(3);
        let pts = crate::sampling::BoxRegion::centered(3, 2.0).halton(20);
        let s = product_samples(&pts, &crate::sampling::sphere_directions(3, 10), 0.0);
        let ok = verify_assumption2(&v, &AssumptionTwoBounds::constant(0.0, 1.0), &s, Slack::default())
            .unwrap();
        assert!(ok.verdict.passed());
        let bad = verify_assumption2(&v, &AssumptionTwoBounds::constant(0.0, 0.5), &s, Slack::default())
            .unwrap();
        assert_eq!(bad.verdict, Verdict::Violated);
        assert!(bad.worst_disp_excess > 0.4);
    }

    #[test]
    fn composition_of_half_norms() {
        let v = compose(&half_norm(1), &half_norm(2));
        assert_eq!(v.dim(), 3);
        let z = [1.0, 2.0, 3.0];
        let dz = [0.5, -1.0, 2.0];
        assert!((v.value(&z, &dz) - 0.5 * (0.25 + 1.0 + 4.0)).abs() < 1e-15);
        assert_eq!((v.c_lower, v.c_upper), (0.5, 0.5));
        assert!(v.is_quadratic());
    }

    #[test]
    fn finite_difference_fallback_matches_analytic() {
        let fd = FinslerCandidate::from_value(
            2,
            |z: &[f64], dz: &[f64]| (1.0 + z[0] * z[0]) * dz[0] * dz[0] + dz[1] * dz[1],
            1.0,
            10.0,
        );
        let gs = fd.grad_state(&[0.7, 0.0], &[2.0, 1.0]);
        assert!((gs[0] - 2.0 * 0.7 * 4.0).abs() < 1e-6);
        let gd = fd.grad_disp(&[0.7, 0.0], &[2.0, 1.0]);
        assert!((gd[0] - 2.0 * 1.49 * 2.0).abs() < 1e-6);
        assert!((gd[1] - 2.0).abs() < 1e-6);
    }
}
