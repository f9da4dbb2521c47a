//! Forward-invariant sublevel sets of an outer Lyapunov function `W` and the
//! FitzHugh–Nagumo ultimate bound.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
#[allow(unused_imports)] // inherent float methods exist when std is in the graph
use num_traits::Float;

use crate::dynsys::TimeVaryingField;
use crate::error::{invalid, Error, Result};
use crate::fhn::FhnParams;
use crate::linalg::norm;
use crate::sampling::{linspace, sphere_directions};

pub type OuterValueFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
/// Writes `∂W/∂z` and returns `∂W/∂t`.
pub type OuterGradFn = dyn Fn(f64, &[f64], &mut [f64]) -> f64 + Send + Sync;
pub type ClassFn = dyn Fn(f64) -> f64 + Send + Sync;

/// `W(t, z)` with class bounds `α1(|z|) ≤ W ≤ α2(|z|)` and optional decay
/// data `Ẇ ≤ −α3(|z|)` for `|z| ≥ mu`.
#[derive(Clone)]
pub struct OuterLyapunov {
    dim: usize,
    value: Arc<OuterValueFn>,
    grad: Arc<OuterGradFn>,
    pub class_lower: Arc<ClassFn>,
    pub class_upper: Arc<ClassFn>,
    pub mu: Option<f64>,
    pub alpha3: Option<Arc<ClassFn>>,
}

impl fmt::Debug for OuterLyapunov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OuterLyapunov")
            .field("dim", &self.dim)
            .field("mu", &self.mu)
            .finish_non_exhaustive()
    }
}

impl OuterLyapunov {
    pub fn new<V, G, L, U>(dim: usize, value: V, grad: G, class_lower: L, class_upper: U) -> Self
    where
        V: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(f64, &[f64], &mut [f64]) -> f64 + Send + Sync + 'static,
        L: Fn(f64) -> f64 + Send + Sync + 'static,
        U: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            value: Arc::new(value),
            grad: Arc::new(grad),
            class_lower: Arc::new(class_lower),
            class_upper: Arc::new(class_upper),
            mu: None,
            alpha3: None,
        }
    }

    /// `W = ½ Σ w_i z_i²` with `w_i > 0`.
    pub fn diagonal_quadratic(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(invalid("weights", "must be positive"));
        }
        let w: Arc<[f64]> = weights.into();
        let (wv, wg) = (w.clone(), w.clone());
        let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = w.iter().cloned().fold(0.0, f64::max);
        Ok(Self::new(
            w.len(),
            move |_t, z| 0.5 * z.iter().zip(wv.iter()).map(|(z, w)| w * z * z).sum::<f64>(),
            move |_t, z, out| {
                for k in 0..z.len() {
                    out[k] = wg[k] * z[k];
                }
                0.0
            },
            move |s| 0.5 * lo * s * s,
            move |s| 0.5 * hi * s * s,
        ))
    }

    pub fn with_decay<A>(mut self, mu: f64, alpha3: A) -> Self
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.mu = Some(mu);
        self.alpha3 = Some(Arc::new(alpha3));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, t: f64, z: &[f64]) -> f64 {
        (self.value)(t, z)
    }

    /// `(∂W/∂t, ∂W/∂z)`.
    pub fn grad(&self, t: f64, z: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.dim];
        let dt = (self.grad)(t, z, &mut g);
        (dt, g)
    }

    /// Smallest `s` with `α1(s) ≥ level`, by bracketing and bisection.
    pub fn class_lower_inverse(&self, level: f64) -> Result<f64> {
        let mut hi = 1.0;
        let mut n = 0;
        while (self.class_lower)(hi) < level {
            hi *= 2.0;
            n += 1;
            if n > 200 {
                return Err(Error::Hypothesis("class_lower does not reach the level".into()));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (self.class_lower)(mid) < level {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        Ok(hi)
    }

    /// Checks `α1(|z|) ≤ W(t, z) ≤ α2(|z|)` at the given points.
    pub fn class_bounds_hold(&self, t: f64, points: &[Vec<f64>], tol: f64) -> bool {
        points.iter().all(|z| {
            let r = norm(z);
            let w = self.value(t, z);
            (self.class_lower)(r) <= w + tol && w <= (self.class_upper)(r) + tol
        })
    }
}

/// `W = (x² + εy²)/2` for the FitzHugh–Nagumo model.
pub fn fhn_outer_lyapunov(p: &FhnParams) -> OuterLyapunov {
    OuterLyapunov::diagonal_quadratic(&[1.0, p.epsilon]).expect("epsilon is positive")
}

/// `Ẇ = ∂W/∂t + ∂W/∂z · f(t, z)`.
pub fn wdot(w: &OuterLyapunov, field: &TimeVaryingField, t: f64, z: &[f64]) -> f64 {
    let (dt, g) = w.grad(t, z);
    let f = field.eval(t, z);
    dt + g.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>()
}

/// Margins of the three-step dissipation chain, each `min(rhs − lhs)` over
/// the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainReport {
    pub margins: [f64; 3],
    pub worst_points: [[f64; 2]; 3],
    pub half_width: f64,
    pub per_axis: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// The four expressions of the chain at `(x, y)`:
/// `Ẇ`, `3x²/2 − x⁴/3 + c²/2 − by²`, `−x²/8 − by² + 2 + c²/2`,
/// `−2κW + 2 + c²/2`.
pub fn fhn_chain_terms(p: &FhnParams, x: f64, y: f64) -> [f64; 4] {
    let w = 0.5 * (x * x + p.epsilon * y * y);
    let [fx, fy] = p.rhs(x, y);
    let wd = x * fx + p.epsilon * y * fy;
    let c2 = p.c * p.c / 2.0;
    let x2 = x * x;
    let by2 = p.b * y * y;
    let kappa = fhn_kappa(p);
    [
        wd,
        1.5 * x2 - x2 * x2 / 3.0 + c2 - by2,
        -x2 / 8.0 - by2 + 2.0 + c2,
        -2.0 * kappa * w + 2.0 + c2,
    ]
}

/// `κ = min(1/8, b/ε)`.
pub fn fhn_kappa(p: &FhnParams) -> f64 {
    (0.125_f64).min(p.b / p.epsilon)
}

pub fn check_dissipation_chain_fhn(
    p: &FhnParams,
    half_width: f64,
    per_axis: usize,
    tolerance: f64,
) -> Result<ChainReport> {
    p.validate()?;
    if p.rho1 != p.rho2 {
        return Err(Error::Hypothesis(format!(
            "the chain needs rho1 = rho2 (got {} and {})",
            p.rho1, p.rho2
        )));
    }
    if per_axis < 2 || !(half_width > 0.0) {
        return Err(invalid("grid", "need per_axis ≥ 2 and half_width > 0"));
    }
    let axis = linspace(-half_width, half_width, per_axis);
    let mut margins = [f64::INFINITY; 3];
    let mut worst = [[0.0; 2]; 3];
    for &x in &axis {
        for &y in &axis {
            let t = fhn_chain_terms(p, x, y);
            for k in 0..3 {
                let m = t[k + 1] - t[k];
                if m < margins[k] {
                    margins[k] = m;
                    worst[k] = [x, y];
                }
            }
        }
    }
    Ok(ChainReport {
        margins,
        worst_points: worst,
        half_width,
        per_axis,
        tolerance,
        passed: margins.iter().all(|m| *m >= -tolerance),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSearch {
    /// Candidate levels, tried in increasing order.
    pub levels: Vec<f64>,
    /// Relative shell width `δ`.
    pub shell_width: f64,
    pub directions: usize,
    /// Radial samples per direction inside each shell.
    pub radial_samples: usize,
    pub time: f64,
}

impl LevelSearch {
    /// `count` geometrically spaced levels in `[lo, hi]`.
    pub fn geometric(lo: f64, hi: f64, count: usize) -> Self {
        let levels = if count <= 1 {
            vec![lo]
        } else {
            let q = (hi / lo).ln() / (count - 1) as f64;
            (0..count).map(|k| lo * (q * k as f64).exp()).collect()
        };
        Self {
            levels,
            shell_width: 0.05,
            directions: 256,
            radial_samples: 4,
            time: 0.0,
        }
    }
}

impl Default for LevelSearch {
    fn default() -> Self {
        Self::geometric(1e-2, 1e3, 141)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSetEstimate {
    pub level: f64,
    /// Largest `|z|` over sampled boundary points of `{W ≤ level}`.
    pub radius: f64,
    /// `α1⁻¹(level)`, an analytic enclosure.
    pub class_radius: f64,
    /// Largest `Ẇ` on the sampled shell (negative on acceptance).
    pub margin: f64,
    pub shell_width: f64,
    pub directions: usize,
    pub radial_samples: usize,
    pub levels_tried: usize,
}

/// Smallest `s > 0` along direction `u` with `W(t, s·u) ≥ level`.
fn ray_crossing(w: &OuterLyapunov, t: f64, u: &[f64], level: f64, s_max: f64) -> f64 {
    let at = |s: f64| {
        let z: Vec<f64> = u.iter().map(|u| s * u).collect();
        w.value(t, &z)
    };
    // coarse march guards against non-monotone W along the ray
    let steps = 64;
    let mut lo = 0.0;
    let mut hi = s_max;
    for k in 1..=steps {
        let s = s_max * k as f64 / steps as f64;
        if at(s) >= level {
            hi = s;
            break;
        }
        lo = s;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if at(mid) >= level {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    hi
}

/// Points on `{W = level}` along `count` directions.
pub fn level_set_points(w: &OuterLyapunov, t: f64, level: f64, count: usize) -> Result<Vec<Vec<f64>>> {
    let s_max = w.class_lower_inverse(level)? * 1.01;
    Ok(sphere_directions(w.dim(), count)
        .into_iter()
        .map(|u| {
            let s = ray_crossing(w, t, &u, level, s_max);
            u.iter().map(|u| s * u).collect()
        })
        .collect())
}

/// Smallest level `L` of the search whose shell `{L ≤ W ≤ L(1+δ)}` has
/// `Ẇ < 0` at every sample.
pub fn find_invariant_level(
    w: &OuterLyapunov,
    field: &TimeVaryingField,
    search: &LevelSearch,
) -> Result<InvariantSetEstimate> {
    if w.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            block: "outer Lyapunov vs field".into(),
            expected: field.dim(),
            got: w.dim(),
        });
    }
    if search.levels.is_empty() || search.directions == 0 {
        return Err(Error::EmptySampleSet);
    }
    if !(search.shell_width > 0.0) {
        return Err(invalid("shell_width", "must be positive"));
    }
    let t = search.time;
    let dirs = sphere_directions(w.dim(), search.directions);
    let mut levels = search.levels.clone();
    levels.sort_by(f64::total_cmp);
    for (tried, &level) in levels.iter().enumerate() {
        if !(level > 0.0) {
            continue;
        }
        let outer = level * (1.0 + search.shell_width);
        let s_max = w.class_lower_inverse(outer)? * 1.01;
        let mut margin = f64::NEG_INFINITY;
        let mut radius = 0.0_f64;
        for u in &dirs {
            let s0 = ray_crossing(w, t, u, level, s_max);
            let s1 = ray_crossing(w, t, u, outer, s_max);
            radius = radius.max(s0);
            let n = search.radial_samples.max(1);
            for k in 0..n {
                let s = if n == 1 {
                    s0
                } else {
                    s0 + (s1 - s0) * k as f64 / (n - 1) as f64
                };
                let z: Vec<f64> = u.iter().map(|u| s * u).collect();
                let d = wdot(w, field, t, &z);
                if !d.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("Ẇ at {z:?}"),
                    });
                }
                margin = margin.max(d);
            }
            if margin >= 0.0 {
                break;
            }
        }
        if margin < 0.0 {
            return Ok(InvariantSetEstimate {
                level,
                radius,
                class_radius: w.class_lower_inverse(level)?,
                margin,
                shell_width: search.shell_width,
                directions: search.directions,
                radial_samples: search.radial_samples,
                levels_tried: tried + 1,
            });
        }
    }
    Err(Error::LevelNotFound)
}

/// `B = (ε/b)(1 + c²/4) + M`, stated for `b > ε`.
pub fn ultimate_bound_fhn(p: &FhnParams, m: f64) -> Result<f64> {
    p.validate()?;
    if !(p.b > p.epsilon) {
        return Err(Error::Hypothesis(format!(
            "needs b > epsilon (b = {}, epsilon = {})",
            p.b, p.epsilon
        )));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(invalid("M", "must be positive"));
    }
    Ok(p.epsilon / p.b * (1.0 + p.c * p.c / 4.0) + m)
}

/// First sample time after which `values` stays at or below `bound` for the
/// rest of the series; `None` if the last value exceeds it.
pub fn entry_time(times: &[f64], values: &[f64], bound: f64) -> Option<f64> {
    let mut k = values.len();
    while k > 0 && values[k - 1] <= bound {
        k -= 1;
    }
    if k == values.len() {
        None
    } else {
        Some(times[k])
    }
}

/// `W(t) ≤ (W0 − W∞)e^{−2κt} + W∞` with `W∞ = (2 + c²/2)/(2κ)`.
pub fn comparison_bound(p: &FhnParams, w0: f64, t: f64) -> f64 {
    let kappa = fhn_kappa(p);
    let w_inf = (2.0 + p.c * p.c / 2.0) / (2.0 * kappa);
    (w0 - w_inf) * (-2.0 * kappa * t).exp() + w_inf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn wdot_of_contracting_linear_field() {
        let w = OuterLyapunov::diagonal_quadratic(&[1.0, 1.0]).unwrap();
        let f = TimeVaryingField::linear(Matrix::from_rows(&[&[-1.0, 0.0], &[0.0, -1.0]]));
        assert!((wdot(&w, &f, 0.0, &[3.0, -4.0]) + 25.0).abs() < 1e-15);
    }

    #[test]
    fn chain_at_origin() {
        let p = FhnParams::figure(1).unwrap();
        let t = fhn_chain_terms(&p, 0.0, 0.0);
        assert_eq!(t, [0.0, 0.5, 2.5, 2.5]);
    }

    #[test]
    fn chain_rejects_unequal_gains() {
        let p = FhnParams::figure(1).unwrap().with_gains(1.0, 0.5);
        assert!(check_dissipation_chain_fhn(&p, 6.0, 11, 1e-9).is_err());
    }

    #[test]
    fn entry_time_semantics() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(entry_time(&t, &[5.0, 0.5, 2.0, 0.5], 1.0), Some(3.0));
        assert_eq!(entry_time(&t, &[0.5, 0.5, 0.5, 0.5], 1.0), Some(0.0));
        assert_eq!(entry_time(&t, &[0.5, 0.5, 0.5, 1.5], 1.0), None);
    }

    #[test]
    fn class_inverse() {
        let w = OuterLyapunov::diagonal_quadratic(&[2.0, 8.0]).unwrap();
        // α1(s) = s², so α1⁻¹(9) = 3
        assert!((w.class_lower_inverse(9.0).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ultimate_bound_value() {
        let p = FhnParams::figure(3).unwrap();
        assert!((ultimate_bound_fhn(&p, 0.1).unwrap() - 1.225).abs() < 1e-15);
        assert!(ultimate_bound_fhn(&FhnParams::figure(1).unwrap(), 0.1).is_err());
    }
}
