//! FitzHugh–Nagumo case study.
//!
//! ```text
//! ẋ = x − x³/3 + c − ρ1 y
//! εẏ = −b y + ρ2 x
//! ```
//!
//! The x-block is contracting in the weighted metric `f_c(x)δx²`, where
//! `log f_c` integrates `(2s² − 2 − α)/(s − s³/3 + c)` from
//! `s* = √((2+α)/2)` and is constant outside `[−s*, s*]`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // inherent float methods exist when std is in the graph
use num_traits::Float;

use crate::dynsys::{CouplingMap, Interconnection, TimeVaryingField};
use crate::error::{invalid, Error, Result};
use crate::finsler::{AssumptionTwoBounds, FinslerCandidate};
use crate::linalg::Matrix;
use crate::quadrature::{adaptive_simpson, gauss_kronrod, QuadratureConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FhnParams {
    pub b: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub epsilon: f64,
    /// Largest real root of `r³ − r = c`.
    pub r: f64,
    pub c: f64,
    /// Rate in the exponent of `f_c`.
    pub alpha: f64,
}

/// Largest real root of `r³ − r − c`.
pub fn r_from_c(c: f64) -> f64 {
    // r³ − r is increasing and convex past 1/√3, so Newton from the right converges
    let mut r = 2.0 + c.abs().cbrt();
    for _ in 0..100 {
        let f = r * r * r - r - c;
        let step = f / (3.0 * r * r - 1.0);
        r -= step;
        if step.abs() <= 1e-15 * r.abs() {
            break;
        }
    }
    r
}

impl FhnParams {
    pub fn from_r(r: f64, b: f64, epsilon: f64, rho1: f64, rho2: f64, alpha: f64) -> Result<Self> {
        let p = Self {
            b,
            rho1,
            rho2,
            epsilon,
            r,
            c: r * r * r - r,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_c(c: f64, b: f64, epsilon: f64, rho1: f64, rho2: f64, alpha: f64) -> Result<Self> {
        let p = Self {
            b,
            rho1,
            rho2,
            epsilon,
            r: r_from_c(c),
            c,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameter sets of the three reference figures, with `α = 1`.
    pub fn figure(n: u8) -> Result<Self> {
        match n {
            1 => Self::from_c(1.0, 0.1, 1.0, 1.0, 1.0, 1.0),
            2 => Self::from_c(1.0, 0.1, 1.0, 0.1, 0.1, 1.0),
            3 => Self::from_c(1.0, 1.0, 0.9, 1.0, 1.0, 1.0),
            _ => Err(invalid("figure", format!("no figure {n}; expected 1, 2 or 3"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, "must be positive"))
            }
        };
        pos("b", self.b)?;
        pos("epsilon", self.epsilon)?;
        pos("alpha", self.alpha)?;
        for (name, v) in [("rho1", self.rho1), ("rho2", self.rho2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be nonnegative"));
            }
        }
        if !(self.c.is_finite() && self.r.is_finite()) {
            return Err(invalid("c", "must be finite"));
        }
        Ok(())
    }

    pub fn with_gains(mut self, rho1: f64, rho2: f64) -> Self {
        self.rho1 = rho1;
        self.rho2 = rho2;
        self
    }

    /// `s* = √((2+α)/2)`.
    pub fn s_star(&self) -> f64 {
        ((2.0 + self.alpha) / 2.0).sqrt()
    }

    /// Upper end of the admissible `α` range, `2r² − 2`.
    pub fn alpha_limit(&self) -> f64 {
        2.0 * self.r * self.r - 2.0
    }

    /// `x − x³/3 + c`.
    pub fn cubic(&self, x: f64) -> f64 {
        x - x * x * x / 3.0 + self.c
    }

    /// The assembled vector field at `(x, y)`.
    pub fn rhs(&self, x: f64, y: f64) -> [f64; 2] {
        [
            self.cubic(x) - self.rho1 * y,
            (-self.b * y + self.rho2 * x) / self.epsilon,
        ]
    }
}

/// The model as a two-block interconnection with `g2(x) = x/ε`.
pub fn fhn_field(p: &FhnParams) -> Result<Interconnection> {
    p.validate()?;
    let q = *p;
    let f1 = TimeVaryingField::new(
        1,
        move |_t, x, out| out[0] = q.cubic(x[0]),
        |_t, x, out| out[0] = 1.0 - x[0] * x[0],
    );
    let f2 = TimeVaryingField::linear(Matrix::from_rows(&[&[-p.b / p.epsilon]]));
    Ok(Interconnection {
        f1,
        f2,
        g1: CouplingMap::linear(Matrix::from_rows(&[&[-1.0]])),
        g2: CouplingMap::linear(Matrix::from_rows(&[&[1.0 / p.epsilon]])),
        rho1: p.rho1,
        rho2: p.rho2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcConfig {
    /// Absolute tolerance on `μ`.
    pub tolerance: f64,
    pub grid_points: usize,
    /// Enforce `r > 2`. When off only `s* < r` and a positive denominator on
    /// `[−s*, s*]` are required, which admits the `c = 1` figure sets.
    pub require_r_above_two: bool,
}

impl Default for FcConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            grid_points: 2048,
            require_r_above_two: true,
        }
    }
}

impl FcConfig {
    pub fn relaxed() -> Self {
        Self {
            require_r_above_two: false,
            ..Self::default()
        }
    }
}

/// Tabulated `f_c` on a Chebyshev grid of `[−s*, s*]`.
#[derive(Debug, Clone)]
pub struct FcTable {
    pub params: FhnParams,
    pub s_star: f64,
    pub mu: f64,
    /// `μ` from adaptive Simpson, an independent rule.
    pub mu_cross_check: f64,
    pub eta: f64,
    /// Location of `min f_c′`.
    pub eta_at: f64,
    pub grid: Vec<f64>,
    /// `log f_c` on the grid.
    pub log_values: Vec<f64>,
    pub values: Vec<f64>,
    pub quadrature_error: f64,
    quad: QuadratureConfig,
}

fn integrand(p: &FhnParams, s: f64) -> f64 {
    (2.0 * s * s - 2.0 - p.alpha) / p.cubic(s)
}

/// Minimum of `s − s³/3 + c` over `[−h, h]` (cubic: endpoints and `±1`).
fn cubic_min(p: &FhnParams, h: f64) -> f64 {
    let mut m = p.cubic(-h).min(p.cubic(h));
    if h >= 1.0 {
        m = m.min(p.cubic(-1.0)).min(p.cubic(1.0));
    }
    m
}

pub fn build_fc(p: &FhnParams, cfg: &FcConfig) -> Result<FcTable> {
    p.validate()?;
    if cfg.require_r_above_two && !(p.r > 2.0) {
        return Err(Error::Hypothesis(format!(
            "r = {} (c = {}) is not above 2",
            p.r, p.c
        )));
    }
    if !(p.alpha < p.alpha_limit()) {
        return Err(invalid(
            "alpha",
            format!("must lie in (0, 2r²−2) = (0, {})", p.alpha_limit()),
        ));
    }
    if cfg.grid_points < 4 {
        return Err(invalid("grid_points", "need at least 4"));
    }
    let h = p.s_star();
    if !(cubic_min(p, h) > 0.0) {
        return Err(Error::Hypothesis(format!(
            "x − x³/3 + c vanishes inside [−{h}, {h}]"
        )));
    }
    let quad = QuadratureConfig {
        abs_tol: cfg.tolerance,
        rel_tol: 0.0,
        max_subdivisions: 4000,
    };
    let q = *p;
    let g = move |s: f64| integrand(&q, s);
    let whole = gauss_kronrod(g, -h, h, &quad)?;
    let mu = -whole.value;
    let simpson = adaptive_simpson(g, -h, h, cfg.tolerance * 1e-2, 50)?;

    let n = cfg.grid_points;
    let grid: Vec<f64> = (0..n)
        .map(|k| -h * (PI * k as f64 / (n - 1) as f64).cos())
        .collect();
    let mut log_values = vec![0.0; n];
    let panel_cfg = QuadratureConfig {
        abs_tol: cfg.tolerance / n as f64,
        ..quad
    };
    let mut err = whole.abs_error;
    let mut acc = 0.0;
    for k in (0..n - 1).rev() {
        let e = gauss_kronrod(g, grid[k], grid[k + 1], &panel_cfg)?;
        acc -= e.value;
        err += e.abs_error;
        log_values[k] = acc;
    }
    // exact plateaus
    log_values[0] = mu;
    log_values[n - 1] = 0.0;
    let values: Vec<f64> = log_values.iter().map(|v| v.exp()).collect();
    let mut table = FcTable {
        params: *p,
        s_star: h,
        mu,
        mu_cross_check: -simpson.value,
        eta: 0.0,
        eta_at: 0.0,
        grid,
        log_values,
        values,
        quadrature_error: err,
        quad,
    };
    let (eta, at) = table.locate_eta();
    table.eta = eta;
    table.eta_at = at;
    Ok(table)
}

impl FcTable {
    pub fn integrand(&self, s: f64) -> f64 {
        integrand(&self.params, s)
    }

    /// `log f_c` by cubic Hermite interpolation of the tabulated values with
    /// the exact slope.
    pub fn log_fc(&self, x: f64) -> f64 {
        let h = self.s_star;
        if x >= h {
            return 0.0;
        }
        if x <= -h {
            return self.mu;
        }
        let i = match self.grid.binary_search_by(|s| s.total_cmp(&x)) {
            Ok(i) => return self.log_values[i],
            Err(i) => i - 1,
        };
        let (xa, xb) = (self.grid[i], self.grid[i + 1]);
        let dx = xb - xa;
        let s = (x - xa) / dx;
        let (ya, yb) = (self.log_values[i], self.log_values[i + 1]);
        let (da, db) = (self.integrand(xa), self.integrand(xb));
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * ya
            + (s3 - 2.0 * s2 + s) * dx * da
            + (-2.0 * s3 + 3.0 * s2) * yb
            + (s3 - s2) * dx * db
    }

    pub fn fc(&self, x: f64) -> f64 {
        self.log_fc(x).exp()
    }

    /// `f_c′ = g·f_c` inside `(−s*, s*)`, zero outside.
    pub fn fc_prime(&self, x: f64) -> f64 {
        if x.abs() >= self.s_star {
            0.0
        } else {
            self.integrand(x) * self.fc(x)
        }
    }

    /// `f_c(x)` by a fresh quadrature from `s*`, bypassing the table.
    pub fn fc_direct(&self, x: f64) -> Result<f64> {
        let h = self.s_star;
        if x >= h {
            return Ok(1.0);
        }
        if x <= -h {
            return Ok(self.mu.exp());
        }
        let p = self.params;
        let e = gauss_kronrod(|s| integrand(&p, s), h, x, &self.quad)?;
        Ok(e.value.exp())
    }

    pub fn upper(&self) -> f64 {
        self.mu.exp()
    }

    /// `(η, argmin)` by a grid scan refined with golden-section search.
    fn locate_eta(&self) -> (f64, f64) {
        let n = self.grid.len();
        let mut k = 0;
        let mut best = f64::INFINITY;
        for (i, &x) in self.grid.iter().enumerate() {
            let v = self.integrand(x) * self.values[i];
            if v < best {
                best = v;
                k = i;
            }
        }
        let mut a = self.grid[k.saturating_sub(1)];
        let mut b = self.grid[(k + 1).min(n - 1)];
        let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (self.fc_prime(c), self.fc_prime(d));
        for _ in 0..200 {
            if (b - a).abs() < 1e-13 {
                break;
            }
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = self.fc_prime(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = self.fc_prime(d);
            }
        }
        let x = 0.5 * (a + b);
        let v = self.fc_prime(x).min(best);
        (-v, if v == best { self.grid[k] } else { x })
    }
}

/// `V1(x, δx) = f_c(x)δx²` with `1 ≤ f_c ≤ e^μ`.
pub fn fc_candidate(table: &FcTable) -> FinslerCandidate {
    let t = Arc::new(table.clone());
    let (t1, t2, t3) = (t.clone(), t.clone(), t);
    let upper = t1.upper();
    FinslerCandidate::with_gradients(
        1,
        move |x, dx| t1.fc(x[0]) * dx[0] * dx[0],
        move |x, dx, out| out[0] = t2.fc_prime(x[0]) * dx[0] * dx[0],
        move |x, dx, out| out[0] = 2.0 * t3.fc(x[0]) * dx[0],
        1.0,
        upper,
    )
}

/// `V2(y, δy) = δy²/2`.
pub fn half_square_candidate() -> FinslerCandidate {
    FinslerCandidate::constant_metric(Matrix::from_rows(&[&[0.5]]))
        .expect("1x1 metric is well formed")
}

/// `γ1 = |f_c′|`, `ζ1 = 2f_c`.
pub fn fc_bounds(table: &FcTable) -> AssumptionTwoBounds {
    let t = Arc::new(table.clone());
    let t2 = t.clone();
    AssumptionTwoBounds::new(move |x| t.fc_prime(x[0]).abs(), move |x| 2.0 * t2.fc(x[0]))
}

/// `γ2 = 0`, `ζ2 = 1` for `δy²/2`.
pub fn half_square_bounds() -> AssumptionTwoBounds {
    AssumptionTwoBounds::constant(0.0, 1.0)
}

/// Component rates `(α1, α2)` in `V̇_i ≤ −α_i|δ·|²` form: `α` (as `f_c ≥ 1`)
/// and `b/ε`.
pub fn component_rates(p: &FhnParams) -> (f64, f64) {
    (p.alpha, p.b / p.epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeBound {
    pub coef_dx: f64,
    pub coef_dy: f64,
}

impl CompositeBound {
    pub fn contracting(&self) -> bool {
        self.coef_dx < 0.0 && self.coef_dy < 0.0
    }
}

/// Coefficients of `|δx|²` and `|δy|²` in the composite bound, from raw
/// constants.
pub fn composite_coefficients(
    alpha: f64,
    eta: f64,
    mu: f64,
    b: f64,
    epsilon: f64,
    c: f64,
    m: f64,
) -> CompositeBound {
    let y_bound = ((1.0 + c * c / 4.0) / b + m / epsilon).sqrt();
    CompositeBound {
        coef_dx: -alpha + eta * y_bound + mu.exp() / epsilon + 0.5,
        coef_dy: -b / epsilon + epsilon * mu.exp() + 0.5,
    }
}

/// Composite bound after the ultimate-bound transient, for `ρ1 = ρ2 = 1`
/// and `b > ε`.
pub fn composite_vdot_bound(p: &FhnParams, table: &FcTable, m: f64) -> Result<CompositeBound> {
    if !(p.b > p.epsilon) {
        return Err(Error::Hypothesis(format!(
            "needs b > epsilon (b = {}, epsilon = {})",
            p.b, p.epsilon
        )));
    }
    if p.rho1 != 1.0 || p.rho2 != 1.0 {
        return Err(Error::Hypothesis("stated for rho1 = rho2 = 1".into()));
    }
    if !(m > 0.0) {
        return Err(invalid("M", "must be positive"));
    }
    Ok(composite_coefficients(
        p.alpha, table.eta, table.mu, p.b, p.epsilon, p.c, m,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::assemble;

    fn r21() -> FhnParams {
        FhnParams::from_r(2.1, 1.0, 0.9, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn c_and_r_round_trip() {
        assert!((r21().c - 7.161).abs() < 1e-12);
        assert!((r_from_c(7.161) - 2.1).abs() < 1e-12);
        let r = r_from_c(1.0);
        assert!((r * r * r - r - 1.0).abs() < 1e-14);
    }

    #[test]
    fn field_value_and_jacobian() {
        let p = FhnParams::figure(1).unwrap();
        let f = assemble(&fhn_field(&p).unwrap()).unwrap();
        assert_eq!(f.eval(0.0, &[0.0, 0.0]), vec![1.0, 0.0]);
        let p3 = FhnParams::figure(3).unwrap();
        let f3 = assemble(&fhn_field(&p3).unwrap()).unwrap();
        let j = f3.jacobian(0.0, &[0.7, -0.3]);
        let want = [1.0 - 0.49, -1.0, 1.0 / 0.9, -1.0 / 0.9];
        for (a, b) in j.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let v = f3.eval(0.0, &[0.7, -0.3]);
        let r = p3.rhs(0.7, -0.3);
        assert!((v[0] - r[0]).abs() < 1e-15 && (v[1] - r[1]).abs() < 1e-15);
    }

    #[test]
    fn strict_mode_rejects_figure_parameters() {
        let p = FhnParams::figure(2).unwrap();
        assert!(matches!(
            build_fc(&p, &FcConfig::default()),
            Err(Error::Hypothesis(_))
        ));
        assert!(build_fc(&p, &FcConfig::relaxed()).is_ok());
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        let mut p = r21();
        p.alpha = p.alpha_limit() + 0.1;
        assert!(build_fc(&p, &FcConfig::default()).is_err());
    }

    #[test]
    fn plateaus_and_monotonicity() {
        let t = build_fc(&r21(), &FcConfig::default()).unwrap();
        assert_eq!(t.fc(t.s_star), 1.0);
        assert_eq!(t.fc(-t.s_star), t.mu.exp());
        assert_eq!(t.fc(10.0), 1.0);
        assert!(t.values.windows(2).all(|w| w[1] <= w[0]));
        assert!(t.fc(0.0) > 1.0 && t.fc(0.0) < t.upper());
        assert!((t.mu - t.mu_cross_check).abs() < 1e-8);
    }

    #[test]
    fn composite_degenerates_to_constant_metric() {
        let b = composite_coefficients(1.0, 0.0, 0.0, 2.0, 0.5, 1.0, 0.1);
        assert!((b.coef_dx - (-1.0 + 2.0 + 0.5)).abs() < 1e-15);
        assert!((b.coef_dy - (-4.0 + 0.5 + 0.5)).abs() < 1e-15);
    }
}
