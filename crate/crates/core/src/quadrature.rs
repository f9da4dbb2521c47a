//! One-dimensional adaptive quadrature.
//!
//! [`gauss_kronrod`] is the workhorse (globally adaptive G7/K15 bisection).
//! [`adaptive_simpson`] is an unrelated rule kept as a cross-check.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-12,
            max_subdivisions: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Single K15 panel: (Kronrod value, |Kronrod − Gauss|).
fn kronrod15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        // Gauss nodes are the odd-indexed Kronrod nodes
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// The panel with the largest error estimate is bisected until the summed
/// estimate drops below `max(abs_tol, rel_tol·|I|)`.
pub fn gauss_kronrod(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> Result<Estimate> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(invalid("interval", "endpoints must be finite"));
    }
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            abs_error: 0.0,
            evaluations: 0,
        });
    }
    let mut evals = 0usize;
    let mut g = |x: f64| {
        evals += 1;
        f(x)
    };
    let (v, e) = kronrod15(&mut g, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value: v, err: e });
    let mut total = v;
    let mut total_err = e;
    let mut splits = 0usize;
    while total_err > cfg.abs_tol.max(cfg.rel_tol * total.abs()) {
        if splits >= cfg.max_subdivisions {
            break;
        }
        let p = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (p.a + p.b);
        let (v1, e1) = kronrod15(&mut g, p.a, mid);
        let (v2, e2) = kronrod15(&mut g, mid, p.b);
        total += v1 + v2 - p.value;
        total_err += e1 + e2 - p.err;
        heap.push(Panel {
            a: p.a,
            b: mid,
            value: v1,
            err: e1,
        });
        heap.push(Panel {
            a: mid,
            b: p.b,
            value: v2,
            err: e2,
        });
        splits += 1;
    }
    // re-sum to shed the drift of the running updates
    let panels: Vec<Panel> = heap.into_vec();
    let value: f64 = panels.iter().map(|p| p.value).sum();
    let abs_error: f64 = panels.iter().map(|p| p.err).sum();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "quadrature integrand".into(),
        });
    }
    Ok(Estimate {
        value,
        abs_error,
        evaluations: evals,
    })
}

/// Recursive adaptive Simpson with Richardson correction.
pub fn adaptive_simpson(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: u32,
) -> Result<Estimate> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(invalid("interval", "endpoints must be finite"));
    }
    let mut evals = 3usize;
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut err = 0.0;
    let value = simpson_rec(
        &mut f,
        [a, m, b],
        [fa, fm, fb],
        whole,
        tol,
        max_depth,
        &mut evals,
        &mut err,
    );
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "quadrature integrand".into(),
        });
    }
    Ok(Estimate {
        value,
        abs_error: err,
        evaluations: evals,
    })
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &mut dyn FnMut(f64) -> f64,
    [a, m, b]: [f64; 3],
    [fa, fm, fb]: [f64; 3],
    whole: f64,
    tol: f64,
    depth: u32,
    evals: &mut usize,
    err: &mut f64,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    *evals += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        *err += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    simpson_rec(f, [a, lm, m], [fa, flm, fm], left, 0.5 * tol, depth - 1, evals, err)
        + simpson_rec(f, [m, rm, b], [fm, frm, fb], right, 0.5 * tol, depth - 1, evals, err)
}
