//! Time-varying vector fields, two-block interconnections, and integration of
//! state plus displacement (variational) dynamics.
//!
//! Integration never panics on a misbehaving field: a non-finite state stops
//! the run and the partial trajectory comes back with [`Termination::NonFinite`].

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
#[allow(unused_imports)] // inherent float methods exist when std is in the graph
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::linalg::{all_finite, distance, Matrix};

pub type FieldFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
pub type MapFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A vector field `f(t, z)` on `R^dim` with its state Jacobian.
///
/// Both closures write into caller-provided buffers; the Jacobian is
/// row-major `dim × dim`.
#[derive(Clone)]
pub struct TimeVaryingField {
    dim: usize,
    eval: Arc<FieldFn>,
    jacobian: Arc<FieldFn>,
    lipschitz_hint: Option<f64>,
}

impl fmt::Debug for TimeVaryingField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeVaryingField")
            .field("dim", &self.dim)
            .field("lipschitz_hint", &self.lipschitz_hint)
            .finish_non_exhaustive()
    }
}

impl TimeVaryingField {
    pub fn new<F, J>(dim: usize, eval: F, jacobian: J) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        J: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert!(dim > 0, "field dimension must be positive");
        Self {
            dim,
            eval: Arc::new(eval),
            jacobian: Arc::new(jacobian),
            lipschitz_hint: None,
        }
    }

    /// `ż = A z`; the Lipschitz hint is the operator norm of `A`.
    pub fn linear(a: Matrix) -> Self {
        assert_eq!(a.rows(), a.cols());
        let dim = a.rows();
        let lip = a.operator_norm();
        let a = Arc::new(a);
        let a2 = a.clone();
        Self::new(
            dim,
            move |_t, z, out| a.mul_vec_into(z, out),
            move |_t, _z, out| out.copy_from_slice(a2.as_slice()),
        )
        .with_lipschitz_hint(lip)
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(
            dim,
            |_t, _z, out| out.fill(0.0),
            |_t, _z, out| out.fill(0.0),
        )
        .with_lipschitz_hint(0.0)
    }

    pub fn with_lipschitz_hint(mut self, l: f64) -> Self {
        self.lipschitz_hint = Some(l);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_hint
    }

    pub fn eval_into(&self, t: f64, z: &[f64], out: &mut [f64]) {
        (self.eval)(t, z, out)
    }

    pub fn eval(&self, t: f64, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, z, &mut out);
        out
    }

    pub fn jacobian_into(&self, t: f64, z: &[f64], out: &mut [f64]) {
        (self.jacobian)(t, z, out)
    }

    pub fn jacobian(&self, t: f64, z: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(self.dim, self.dim);
        self.jacobian_into(t, z, m.as_mut_slice());
        m
    }

    /// Largest entry-wise gap between the analytic Jacobian and a central
    /// difference of `eval` with step `h`.
    pub fn jacobian_fd_mismatch(&self, t: f64, z: &[f64], h: f64) -> f64 {
        let j = self.jacobian(t, z);
        let mut zp = z.to_vec();
        let mut worst = 0.0_f64;
        for k in 0..self.dim {
            zp[k] = z[k] + h;
            let fp = self.eval(t, &zp);
            zp[k] = z[k] - h;
            let fm = self.eval(t, &zp);
            zp[k] = z[k];
            for i in 0..self.dim {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                worst = worst.max((fd - j[(i, k)]).abs());
            }
        }
        worst
    }

    fn check_dim(&self, what: &str, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                block: what.into(),
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// Autonomous coupling map `R^input_dim → R^output_dim` with Jacobian.
#[derive(Clone)]
pub struct CouplingMap {
    input_dim: usize,
    output_dim: usize,
    eval: Arc<MapFn>,
    jacobian: Arc<MapFn>,
}

impl fmt::Debug for CouplingMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CouplingMap")
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .finish_non_exhaustive()
    }
}

impl CouplingMap {
    pub fn new<F, J>(input_dim: usize, output_dim: usize, eval: F, jacobian: J) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        J: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            input_dim,
            output_dim,
            eval: Arc::new(eval),
            jacobian: Arc::new(jacobian),
        }
    }

    /// `g(v) = M v`.
    pub fn linear(m: Matrix) -> Self {
        let (rows, cols) = (m.rows(), m.cols());
        let m = Arc::new(m);
        let m2 = m.clone();
        Self::new(
            cols,
            rows,
            move |v, out| m.mul_vec_into(v, out),
            move |_v, out| out.copy_from_slice(m2.as_slice()),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn eval_into(&self, v: &[f64], out: &mut [f64]) {
        (self.eval)(v, out)
    }

    pub fn eval(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim];
        self.eval_into(v, &mut out);
        out
    }

    pub fn jacobian(&self, v: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(self.output_dim, self.input_dim);
        (self.jacobian)(v, m.as_mut_slice());
        m
    }
}

/// The coupled system `ẋ = f1(t,x) + ρ1 g1(y)`, `ẏ = f2(t,y) + ρ2 g2(x)`.
#[derive(Debug, Clone)]
pub struct Interconnection {
    pub f1: TimeVaryingField,
    pub f2: TimeVaryingField,
    /// `g1: R^m → R^n`
    pub g1: CouplingMap,
    /// `g2: R^n → R^m`
    pub g2: CouplingMap,
    pub rho1: f64,
    pub rho2: f64,
}

impl Interconnection {
    pub fn n(&self) -> usize {
        self.f1.dim()
    }

    pub fn m(&self) -> usize {
        self.f2.dim()
    }

    pub fn with_gains(&self, rho1: f64, rho2: f64) -> Self {
        Self {
            rho1,
            rho2,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        let mismatch = |block: &str, expected: usize, got: usize| Error::DimensionMismatch {
            block: block.into(),
            expected,
            got,
        };
        if self.g1.input_dim() != m {
            return Err(mismatch("g1 input (must match f2)", m, self.g1.input_dim()));
        }
        if self.g1.output_dim() != n {
            return Err(mismatch("g1 output (must match f1)", n, self.g1.output_dim()));
        }
        if self.g2.input_dim() != n {
            return Err(mismatch("g2 input (must match f1)", n, self.g2.input_dim()));
        }
        if self.g2.output_dim() != m {
            return Err(mismatch("g2 output (must match f2)", m, self.g2.output_dim()));
        }
        if !(self.rho1 >= 0.0 && self.rho1.is_finite()) {
            return Err(invalid("rho1", "must be a finite nonnegative real"));
        }
        if !(self.rho2 >= 0.0 && self.rho2.is_finite()) {
            return Err(invalid("rho2", "must be a finite nonnegative real"));
        }
        Ok(())
    }
}

/// Builds the `(n+m)`-dimensional field of the interconnection together with
/// its block Jacobian `[[J_f1, ρ1 ∂g1/∂y], [ρ2 ∂g2/∂x, J_f2]]`.
pub fn assemble(ic: &Interconnection) -> Result<TimeVaryingField> {
    ic.validate()?;
    let (n, m) = (ic.n(), ic.m());
    let dim = n + m;
    let a = Arc::new(ic.clone());
    let b = a.clone();
    Ok(TimeVaryingField::new(
        dim,
        move |t, z, out| {
            let (x, y) = z.split_at(n);
            let (ox, oy) = out.split_at_mut(n);
            a.f1.eval_into(t, x, ox);
            a.f2.eval_into(t, y, oy);
            if a.rho1 != 0.0 {
                let g = a.g1.eval(y);
                for (o, gi) in ox.iter_mut().zip(g) {
                    *o += a.rho1 * gi;
                }
            }
            if a.rho2 != 0.0 {
                let g = a.g2.eval(x);
                for (o, gi) in oy.iter_mut().zip(g) {
                    *o += a.rho2 * gi;
                }
            }
        },
        move |t, z, out| {
            let (x, y) = z.split_at(n);
            out.fill(0.0);
            let j1 = b.f1.jacobian(t, x);
            let j2 = b.f2.jacobian(t, y);
            let dg1 = b.g1.jacobian(y);
            let dg2 = b.g2.jacobian(x);
            for i in 0..n {
                for k in 0..n {
                    out[i * dim + k] = j1[(i, k)];
                }
                for k in 0..m {
                    out[i * dim + n + k] = b.rho1 * dg1[(i, k)];
                }
            }
            for i in 0..m {
                for k in 0..n {
                    out[(n + i) * dim + k] = b.rho2 * dg2[(i, k)];
                }
                for k in 0..m {
                    out[(n + i) * dim + n + k] = j2[(i, k)];
                }
            }
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Classical fourth-order Runge–Kutta with a fixed step.
    FixedRk4 { step: f64 },
    /// Dormand–Prince 5(4) with error-per-step control.
    Adaptive { abs_tol: f64, rel_tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Integration horizon measured from `t0`.
    pub max_time: f64,
    /// Keep slopes at every sample for cubic Hermite interpolation.
    pub dense_output: bool,
    pub max_steps: usize,
}

impl IntegratorConfig {
    pub fn fixed(step: f64, horizon: f64) -> Self {
        Self {
            method: Method::FixedRk4 { step },
            max_time: horizon,
            dense_output: true,
            max_steps: 50_000_000,
        }
    }

    pub fn adaptive(abs_tol: f64, rel_tol: f64, horizon: f64) -> Self {
        Self {
            method: Method::Adaptive { abs_tol, rel_tol },
            max_time: horizon,
            dense_output: true,
            max_steps: 10_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_time > 0.0 && self.max_time.is_finite()) {
            return Err(invalid("max_time", "horizon must be positive and finite"));
        }
        match self.method {
            Method::FixedRk4 { step } => {
                if !(step > 0.0 && step.is_finite()) {
                    return Err(invalid("step", "must be positive"));
                }
                if step > 0.5 * self.max_time {
                    return Err(invalid(
                        "step",
                        "fixed step must split the horizon into at least 2 steps",
                    ));
                }
            }
            Method::Adaptive { abs_tol, rel_tol } => {
                if !(abs_tol > 0.0 && rel_tol > 0.0) {
                    return Err(invalid("tolerance", "adaptive tolerances must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Why an integration run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    /// The state (or displacement) stopped being finite.
    NonFinite,
    /// The adaptive step collapsed, which in practice means finite-time escape.
    StepSizeUnderflow,
    StepLimit,
}

/// Sampled solution of the state (and optionally displacement) dynamics.
#[derive(Debug, Clone)]
pub struct AugmentedTrajectory {
    pub t0: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub displacements: Option<Vec<Vec<f64>>>,
    /// Nominal step: the fixed step, or the mean accepted adaptive step.
    pub step: f64,
    pub termination: Termination,
    /// Slopes of the integrated system at each sample (empty without dense output).
    slopes: Vec<Vec<f64>>,
}

impl AugmentedTrajectory {
    pub fn blew_up(&self) -> bool {
        matches!(
            self.termination,
            Termination::NonFinite | Termination::StepSizeUnderflow
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has the initial sample")
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has the initial sample")
    }

    pub fn final_displacement(&self) -> Option<&[f64]> {
        self.displacements
            .as_ref()
            .and_then(|d| d.last().map(|v| v.as_slice()))
    }

    fn dim(&self) -> usize {
        self.states[0].len()
    }

    fn augmented(&self, i: usize) -> Vec<f64> {
        let mut v = self.states[i].clone();
        if let Some(d) = &self.displacements {
            v.extend_from_slice(&d[i]);
        }
        v
    }

    /// Interpolated augmented vector (state, then displacement) at `t`.
    ///
    /// Grid times return the stored sample exactly. Between samples the
    /// interpolant is cubic Hermite when slopes were kept, linear otherwise.
    /// Returns `None` outside `[t0, final_time]`.
    fn augmented_at(&self, t: f64) -> Option<Vec<f64>> {
        let first = self.times[0];
        let last = self.final_time();
        if !(t >= first && t <= last) {
            return None;
        }
        let i = match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(i) => return Some(self.augmented(i)),
            Err(i) => i - 1,
        };
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        let h = tb - ta;
        let s = (t - ta) / h;
        let ya = self.augmented(i);
        let yb = self.augmented(i + 1);
        if self.slopes.is_empty() {
            return Some(ya.iter().zip(&yb).map(|(a, b)| a + s * (b - a)).collect());
        }
        let (da, db) = (&self.slopes[i], &self.slopes[i + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Some(
            (0..ya.len())
                .map(|k| h00 * ya[k] + h10 * h * da[k] + h01 * yb[k] + h11 * h * db[k])
                .collect(),
        )
    }

    pub fn state_at(&self, t: f64) -> Option<Vec<f64>> {
        let n = self.dim();
        self.augmented_at(t).map(|mut v| {
            v.truncate(n);
            v
        })
    }

    pub fn displacement_at(&self, t: f64) -> Option<Vec<f64>> {
        self.displacements.as_ref()?;
        let n = self.dim();
        self.augmented_at(t).map(|v| v[n..].to_vec())
    }
}

struct RawSolution {
    times: Vec<f64>,
    ys: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    step: f64,
    termination: Termination,
}

fn integrate_raw(
    rhs: &dyn Fn(f64, &[f64], &mut [f64]),
    t0: f64,
    y0: &[f64],
    config: &IntegratorConfig,
) -> RawSolution {
    match config.method {
        Method::FixedRk4 { step } => rk4(rhs, t0, y0, step, config),
        Method::Adaptive { abs_tol, rel_tol } => dopri5(rhs, t0, y0, abs_tol, rel_tol, config),
    }
}

fn rk4(
    rhs: &dyn Fn(f64, &[f64], &mut [f64]),
    t0: f64,
    y0: &[f64],
    step: f64,
    config: &IntegratorConfig,
) -> RawSolution {
    let dim = y0.len();
    let horizon = config.max_time;
    let mut steps = (horizon / step).round() as usize;
    if (steps as f64 * step - horizon).abs() > 1e-9 * horizon {
        steps = (horizon / step).ceil() as usize;
    }
    let steps = steps.min(config.max_steps);
    let mut times = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut slopes = Vec::new();
    let (mut k1, mut k2, mut k3, mut k4) =
        (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    let mut y = y0.to_vec();
    times.push(t0);
    ys.push(y.clone());
    let mut termination = Termination::Completed;
    rhs(t0, &y, &mut k1);
    for i in 0..steps {
        let t = t0 + step * i as f64;
        let t_next = if i + 1 == steps {
            t0 + horizon
        } else {
            t0 + step * (i + 1) as f64
        };
        let h = t_next - t;
        if config.dense_output {
            slopes.push(k1.clone());
        }
        for k in 0..dim {
            tmp[k] = y[k] + 0.5 * h * k1[k];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for k in 0..dim {
            tmp[k] = y[k] + 0.5 * h * k2[k];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for k in 0..dim {
            tmp[k] = y[k] + h * k3[k];
        }
        rhs(t + h, &tmp, &mut k4);
        for k in 0..dim {
            tmp[k] = y[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        if !all_finite(&tmp) {
            termination = Termination::NonFinite;
            break;
        }
        y.copy_from_slice(&tmp);
        rhs(t_next, &y, &mut k1);
        if !all_finite(&k1) {
            times.push(t_next);
            ys.push(y.clone());
            if config.dense_output {
                // slope unusable; fall back to a secant so interpolation stays finite
                let prev = &ys[ys.len() - 2];
                slopes.push(y.iter().zip(prev).map(|(a, b)| (a - b) / h).collect());
            }
            termination = Termination::NonFinite;
            return RawSolution {
                times,
                ys,
                slopes,
                step,
                termination,
            };
        }
        times.push(t_next);
        ys.push(y.clone());
    }
    if config.dense_output {
        slopes.push(k1.clone());
        slopes.truncate(times.len());
    }
    if termination == Termination::Completed && steps == config.max_steps && times.len() > 1 {
        let reached = *times.last().unwrap() - t0;
        if reached < horizon * (1.0 - 1e-12) {
            termination = Termination::StepLimit;
        }
    }
    RawSolution {
        times,
        ys,
        slopes,
        step,
        termination,
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn dopri5(
    rhs: &dyn Fn(f64, &[f64], &mut [f64]),
    t0: f64,
    y0: &[f64],
    atol: f64,
    rtol: f64,
    config: &IntegratorConfig,
) -> RawSolution {
    let dim = y0.len();
    let t_end = t0 + config.max_time;
    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; dim]).collect();
    let mut tmp = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut times = vec![t0];
    let mut ys = vec![y.clone()];
    let mut slopes = Vec::new();
    rhs(t, &y, &mut k[0]);
    if config.dense_output {
        slopes.push(k[0].clone());
    }

    let scale = |yv: &[f64], i: usize| atol + rtol * yv[i].abs();
    // Hairer's starting step heuristic.
    let d0 = rms((0..dim).map(|i| y[i] / scale(&y, i)));
    let d1 = rms((0..dim).map(|i| k[0][i] / scale(&y, i)));
    let mut h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h = h.min(config.max_time);

    let mut accepted = 0usize;
    let mut h_sum = 0.0;
    let mut termination = Termination::Completed;
    let mut iterations = 0usize;
    while t < t_end {
        iterations += 1;
        if iterations > config.max_steps {
            termination = Termination::StepLimit;
            break;
        }
        if t + h > t_end {
            h = t_end - t;
        }
        if h <= 1e-14 * (1.0 + t.abs()) {
            termination = Termination::StepSizeUnderflow;
            break;
        }
        let stages: [(f64, &[f64]); 5] = [
            (C2, &[A21]),
            (C3, &[A31, A32]),
            (C4, &[A41, A42, A43]),
            (C5, &[A51, A52, A53, A54]),
            (1.0, &[A61, A62, A63, A64, A65]),
        ];
        for (s, (c, a)) in stages.iter().enumerate() {
            for i in 0..dim {
                let mut acc = y[i];
                for (j, aj) in a.iter().enumerate() {
                    acc += h * aj * k[j][i];
                }
                tmp[i] = acc;
            }
            rhs(t + c * h, &tmp, &mut k[s + 1]);
        }
        for i in 0..dim {
            y_new[i] = y[i]
                + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        rhs(t + h, &y_new, &mut k[6]);
        let err = rms((0..dim).map(|i| {
            let e = h
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * k[6][i]);
            e / (atol + rtol * y[i].abs().max(y_new[i].abs()))
        }));
        if !err.is_finite() || !all_finite(&y_new) {
            if h < 1e-10 * (1.0 + t.abs()) {
                termination = Termination::NonFinite;
                break;
            }
            h *= 0.1;
            continue;
        }
        if err <= 1.0 {
            t = if t_end - (t + h) <= 1e-14 * (1.0 + t_end.abs()) {
                t_end
            } else {
                t + h
            };
            y.copy_from_slice(&y_new);
            let last = k[6].clone();
            k[0].copy_from_slice(&last);
            times.push(t);
            ys.push(y.clone());
            if config.dense_output {
                slopes.push(k[0].clone());
            }
            accepted += 1;
            h_sum += h;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    RawSolution {
        times,
        ys,
        slopes,
        step: if accepted > 0 {
            h_sum / accepted as f64
        } else {
            h
        },
        termination,
    }
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut s = 0.0;
    for v in it {
        s += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Integrates `ż = f(t, z)` from `z0` over `config.max_time`.
pub fn integrate(
    field: &TimeVaryingField,
    t0: f64,
    z0: &[f64],
    config: &IntegratorConfig,
) -> Result<AugmentedTrajectory> {
    config.validate()?;
    field.check_dim("initial state", z0)?;
    if !all_finite(z0) {
        return Err(Error::NonFinite {
            what: "initial state".into(),
        });
    }
    let rhs = |t: f64, z: &[f64], out: &mut [f64]| field.eval_into(t, z, out);
    let raw = integrate_raw(&rhs, t0, z0, config);
    Ok(AugmentedTrajectory {
        t0,
        times: raw.times,
        states: raw.ys,
        displacements: None,
        step: raw.step,
        termination: raw.termination,
        slopes: raw.slopes,
    })
}

/// Integrates the state together with the displacement dynamics
/// `δż = J_f(t, z) δz` as one `2·dim` system.
pub fn integrate_with_displacement(
    field: &TimeVaryingField,
    t0: f64,
    z0: &[f64],
    d0: &[f64],
    config: &IntegratorConfig,
) -> Result<AugmentedTrajectory> {
    config.validate()?;
    field.check_dim("initial state", z0)?;
    field.check_dim("initial displacement", d0)?;
    if !all_finite(z0) || !all_finite(d0) {
        return Err(Error::NonFinite {
            what: "initial condition".into(),
        });
    }
    let n = field.dim();
    let jac = core::cell::RefCell::new(vec![0.0; n * n]);
    let rhs = |t: f64, w: &[f64], out: &mut [f64]| {
        let (z, dz) = w.split_at(n);
        let (oz, odz) = out.split_at_mut(n);
        field.eval_into(t, z, oz);
        let mut j = jac.borrow_mut();
        field.jacobian_into(t, z, &mut j);
        for i in 0..n {
            odz[i] = crate::linalg::dot(&j[i * n..(i + 1) * n], dz);
        }
    };
    let mut w0 = z0.to_vec();
    w0.extend_from_slice(d0);
    let raw = integrate_raw(&rhs, t0, &w0, config);
    let (states, disps) = raw
        .ys
        .into_iter()
        .map(|w| {
            let (a, b) = w.split_at(n);
            (a.to_vec(), b.to_vec())
        })
        .unzip();
    Ok(AugmentedTrajectory {
        t0,
        times: raw.times,
        states,
        displacements: Some(disps),
        step: raw.step,
        termination: raw.termination,
        slopes: raw.slopes,
    })
}

/// Euclidean distance between two solutions on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSeries {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub blew_up: bool,
}

/// Integrates from `z1` and `z2` and returns `|φ(t,z1) − φ(t,z2)|`.
///
/// The shared grid is the first trajectory's grid (identical for both under
/// fixed-step RK4); the second trajectory is interpolated onto it otherwise.
pub fn flow_difference(
    field: &TimeVaryingField,
    t0: f64,
    z1: &[f64],
    z2: &[f64],
    config: &IntegratorConfig,
) -> Result<DistanceSeries> {
    if z1.len() != z2.len() {
        return Err(Error::DimensionMismatch {
            block: "flow_difference second point".into(),
            expected: z1.len(),
            got: z2.len(),
        });
    }
    let a = integrate(field, t0, z1, config)?;
    let b = integrate(field, t0, z2, config)?;
    Ok(distance_series(&a, &b))
}

/// Distance series between two already-integrated trajectories.
pub fn distance_series(a: &AugmentedTrajectory, b: &AugmentedTrajectory) -> DistanceSeries {
    let blew_up = a.blew_up() || b.blew_up();
    let end = a.final_time().min(b.final_time());
    let same_grid = a.times.len() == b.times.len() && a.times == b.times;
    let mut times = Vec::new();
    let mut distances = Vec::new();
    for (i, &t) in a.times.iter().enumerate() {
        if t > end {
            break;
        }
        let d = if same_grid {
            distance(&a.states[i], &b.states[i])
        } else {
            match b.state_at(t) {
                Some(s) => distance(&a.states[i], &s),
                None => break,
            }
        };
        times.push(t);
        distances.push(d);
    }
    DistanceSeries {
        times,
        distances,
        blew_up,
    }
}

/// Samples a trajectory on a caller-supplied grid, dropping times past its end.
pub fn resample(traj: &AugmentedTrajectory, grid: &[f64]) -> Vec<(f64, Vec<f64>)> {
    grid.iter()
        .filter_map(|&t| traj.state_at(t).map(|s| (t, s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(rate: f64) -> TimeVaryingField {
        TimeVaryingField::linear(Matrix::from_rows(&[&[-rate]]))
    }

    #[test]
    fn rk4_hits_horizon_exactly() {
        let tr = integrate(&decay(1.0), 0.0, &[1.0], &IntegratorConfig::fixed(0.3, 1.0)).unwrap();
        assert_eq!(tr.final_time(), 1.0);
        assert_eq!(tr.termination, Termination::Completed);
    }

    #[test]
    fn config_rejects_single_step_horizon() {
        let e = integrate(&decay(1.0), 0.0, &[1.0], &IntegratorConfig::fixed(0.8, 1.0));
        assert!(matches!(e, Err(Error::InvalidParameter { name: "step", .. })));
        let e = integrate(&decay(1.0), 0.0, &[1.0], &IntegratorConfig::adaptive(0.0, 1e-6, 1.0));
        assert!(e.is_err());
    }

    #[test]
    fn wrong_initial_dimension_is_rejected() {
        let e = integrate(&decay(1.0), 0.0, &[1.0, 2.0], &IntegratorConfig::fixed(0.1, 1.0));
        assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_field_is_constant() {
        let tr = integrate(
            &TimeVaryingField::zero(3),
            2.0,
            &[1.0, -2.0, 0.5],
            &IntegratorConfig::fixed(0.1, 5.0),
        )
        .unwrap();
        assert!(tr.states.iter().all(|s| s == &[1.0, -2.0, 0.5]));
    }

    #[test]
    fn adaptive_matches_exponential() {
        let tr = integrate(
            &decay(0.7),
            0.0,
            &[2.0],
            &IntegratorConfig::adaptive(1e-12, 1e-12, 10.0),
        )
        .unwrap();
        let exact = 2.0 * (-7.0_f64).exp();
        assert!((tr.final_state()[0] - exact).abs() < 1e-10);
        assert_eq!(tr.final_time(), 10.0);
    }

    #[test]
    fn blow_up_returns_partial_trajectory() {
        // ż = z², z(0)=1 escapes at t=1
        let f = TimeVaryingField::new(
            1,
            |_t, z, o| o[0] = z[0] * z[0],
            |_t, z, o| o[0] = 2.0 * z[0],
        );
        let tr = integrate(&f, 0.0, &[1.0], &IntegratorConfig::fixed(1e-3, 3.0)).unwrap();
        assert!(tr.blew_up());
        assert!(tr.final_time() < 1.01);
        assert!(tr.states.iter().all(|s| s[0].is_finite()));
        let tr = integrate(&f, 0.0, &[1.0], &IntegratorConfig::adaptive(1e-9, 1e-9, 3.0)).unwrap();
        assert!(tr.blew_up());
    }

    #[test]
    fn interpolation_reproduces_grid_points() {
        let tr = integrate(
            &decay(1.0),
            0.0,
            &[1.0],
            &IntegratorConfig::adaptive(1e-8, 1e-8, 3.0),
        )
        .unwrap();
        for (i, &t) in tr.times.iter().enumerate() {
            assert_eq!(tr.state_at(t).unwrap(), tr.states[i]);
        }
        assert!(tr.state_at(3.5).is_none());
        let mid = 0.5 * (tr.times[3] + tr.times[4]);
        let h = tr.times[4] - tr.times[3];
        // cubic Hermite error bound h⁴·max|y''''|/384 plus the step error
        let bound = h.powi(4) / 384.0 + 1e-8;
        assert!((tr.state_at(mid).unwrap()[0] - (-mid).exp()).abs() < bound);
    }

    #[test]
    fn assemble_rejects_mismatched_coupling() {
        let ic = Interconnection {
            f1: TimeVaryingField::zero(2),
            f2: TimeVaryingField::zero(1),
            g1: CouplingMap::linear(Matrix::zeros(2, 2)),
            g2: CouplingMap::linear(Matrix::zeros(1, 2)),
            rho1: 1.0,
            rho2: 1.0,
        };
        match assemble(&ic) {
            Err(Error::DimensionMismatch { block, .. }) => assert!(block.contains("g1 input")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decoupled_assembly_has_zero_off_diagonal_blocks() {
        let ic = Interconnection {
            f1: decay(1.0),
            f2: decay(2.0),
            g1: CouplingMap::linear(Matrix::from_rows(&[&[5.0]])),
            g2: CouplingMap::linear(Matrix::from_rows(&[&[7.0]])),
            rho1: 0.0,
            rho2: 0.0,
        };
        let f = assemble(&ic).unwrap();
        let j = f.jacobian(0.0, &[0.3, -0.4]);
        assert_eq!(j[(0, 1)], 0.0);
        assert_eq!(j[(1, 0)], 0.0);
        assert_eq!(f.eval(0.0, &[0.3, -0.4]), vec![-0.3, 0.8]);
    }

    #[test]
    fn identical_points_give_zero_distance() {
        let f = decay(0.5);
        let s = flow_difference(&f, 0.0, &[1.0], &[1.0], &IntegratorConfig::fixed(0.01, 2.0)).unwrap();
        assert!(s.distances.iter().all(|&d| d == 0.0));
    }
}
