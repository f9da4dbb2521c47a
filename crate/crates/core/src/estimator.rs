//! Empirical contraction envelopes `d(t) ≤ K e^{−λ(t−t0)} d(t0)` fitted to
//! distances between simulated trajectory pairs.

use alloc::vec::Vec;
use core::fmt;
#[allow(unused_imports)] // inherent float methods exist when std is in the graph
use num_traits::Float;
use rand_chacha::ChaCha8Rng;

use crate::dynsys::{flow_difference, IntegratorConfig, TimeVaryingField};
use crate::error::{invalid, Error, Result};
use crate::invariance::OuterLyapunov;
use crate::linalg::distance;
use crate::sampling::{rng_from_seed, uniform_on_sphere, BoxRegion};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Leading fraction of the horizon left out of the fit.
    pub transient_skip: f64,
    pub lambda_min: f64,
    /// RMS log-residual threshold.
    pub residual_max: f64,
    /// Late-window mean above `late_floor·d0` means non-contracting.
    pub late_floor: f64,
    /// Trailing fraction of the horizon forming the late window.
    pub late_fraction: f64,
    /// Samples after `d` first falls below `noise_floor·d0` are dropped from
    /// the fit, since they only carry roundoff.
    pub noise_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            transient_skip: 0.2,
            lambda_min: 1e-3,
            residual_max: 0.5,
            late_floor: 0.05,
            late_fraction: 0.2,
            noise_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitVerdict {
    Contracting,
    NonContracting,
    Inconclusive,
}

impl fmt::Display for FitVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitVerdict::Contracting => "contracting",
            FitVerdict::NonContracting => "non_contracting",
            FitVerdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeFit {
    pub k: f64,
    pub lambda: f64,
    /// Time interval of the samples used by the fit.
    pub window: (f64, f64),
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    pub verdict: FitVerdict,
    pub samples_used: usize,
    /// Late-window mean distance over `d(t0)`.
    pub late_ratio: f64,
    /// `d(t_end)/d(t0)`.
    pub final_ratio: f64,
}

impl EnvelopeFit {
    /// `K e^{−λ(t−t0)} d0`.
    pub fn envelope(&self, t0: f64, d0: f64, t: f64) -> f64 {
        self.k * (-self.lambda * (t - t0)).exp() * d0
    }
}

pub fn fit_envelope(times: &[f64], distances: &[f64], opts: &FitOptions) -> Result<EnvelopeFit> {
    if times.len() != distances.len() {
        return Err(Error::DimensionMismatch {
            block: "distance series".into(),
            expected: times.len(),
            got: distances.len(),
        });
    }
    if times.len() < 2 {
        return Err(Error::EmptySampleSet);
    }
    if distances.iter().chain(times).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "distance series".into(),
        });
    }
    let d0 = distances[0];
    if !(d0 > 0.0) {
        return Err(invalid("d(t0)", "initial distance is zero (identical initial conditions)"));
    }
    let t0 = times[0];
    let t_end = *times.last().expect("nonempty");
    let horizon = t_end - t0;

    let floor = opts.noise_floor * d0;
    let cut = distances
        .iter()
        .position(|&d| d < floor)
        .unwrap_or(distances.len())
        .max(2);
    let start_t = t0 + opts.transient_skip * horizon;
    let mut i0 = times.iter().position(|&t| t >= start_t).unwrap_or(0);
    if cut < i0 + 3 {
        i0 = 0;
    }
    let idx = i0..cut;
    let logd = |i: usize| distances[i].max(f64::MIN_POSITIVE).ln();

    let n = idx.len() as f64;
    let (mut st, mut sy) = (0.0, 0.0);
    for i in idx.clone() {
        st += times[i] - t0;
        sy += logd(i);
    }
    let (mt, my) = (st / n, sy / n);
    let (mut stt, mut sty) = (0.0, 0.0);
    for i in idx.clone() {
        let dt = times[i] - t0 - mt;
        stt += dt * dt;
        sty += dt * (logd(i) - my);
    }
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let intercept = my - slope * mt;
    let mut ss = 0.0;
    for i in idx.clone() {
        let e = logd(i) - (intercept + slope * (times[i] - t0));
        ss += e * e;
    }
    let residual = (ss / n).sqrt();
    let lambda = -slope;
    let log_d0 = d0.ln();
    let log_k = idx
        .clone()
        .map(|i| logd(i) + lambda * (times[i] - t0) - log_d0)
        .fold(f64::NEG_INFINITY, f64::max);
    let k = log_k.exp().max(1.0);

    let late_start = t_end - opts.late_fraction * horizon;
    let (mut late_sum, mut late_n) = (0.0, 0usize);
    for (t, d) in times.iter().zip(distances) {
        if *t >= late_start {
            late_sum += d;
            late_n += 1;
        }
    }
    let late_ratio = late_sum / late_n.max(1) as f64 / d0;

    let verdict = if lambda > opts.lambda_min && residual < opts.residual_max {
        FitVerdict::Contracting
    } else if late_ratio > opts.late_floor {
        FitVerdict::NonContracting
    } else {
        FitVerdict::Inconclusive
    };
    Ok(EnvelopeFit {
        k,
        lambda,
        window: (times[i0], times[cut - 1]),
        residual,
        verdict,
        samples_used: cut - i0,
        late_ratio,
        final_ratio: distances[distances.len() - 1] / d0,
    })
}

/// Worst `log d(t) − log envelope(t)` over the fit window.
pub fn envelope_log_excess(fit: &EnvelopeFit, times: &[f64], distances: &[f64]) -> f64 {
    let (t0, d0) = (times[0], distances[0]);
    times
        .iter()
        .zip(distances)
        .filter(|(t, d)| **t >= fit.window.0 && **t <= fit.window.1 && **d > 0.0)
        .map(|(t, d)| d.ln() - fit.envelope(t0, d0, *t).ln())
        .fold(f64::NEG_INFINITY, f64::max)
}

pub type InitialPair = (Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub index: usize,
    pub pair: InitialPair,
    /// `None` when the pair blew up.
    pub fit: Option<EnvelopeFit>,
    pub blew_up: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleReport {
    pub pairs: Vec<PairOutcome>,
    pub min_lambda: f64,
    pub max_k: f64,
    /// Set when a pair blew up.
    pub inconclusive: bool,
    pub passed: bool,
}

impl EnsembleReport {
    pub fn count(&self, v: FitVerdict) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.fit.map(|f| f.verdict) == Some(v))
            .count()
    }

    pub fn any_non_contracting(&self) -> bool {
        self.count(FitVerdict::NonContracting) > 0
    }
}

pub fn ensemble_ies(
    field: &TimeVaryingField,
    pairs: &[InitialPair],
    config: &IntegratorConfig,
    opts: &FitOptions,
) -> Result<EnsembleReport> {
    if pairs.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (index, (z1, z2)) in pairs.iter().enumerate() {
        if z1.len() == z2.len() && distance(z1, z2) == 0.0 {
            return Err(invalid("pair", alloc::format!("pair {index} has zero separation")));
        }
        let series = flow_difference(field, 0.0, z1, z2, config)?;
        let fit = if series.blew_up {
            None
        } else {
            Some(fit_envelope(&series.times, &series.distances, opts)?)
        };
        out.push(PairOutcome {
            index,
            pair: (z1.clone(), z2.clone()),
            fit,
            blew_up: series.blew_up,
        });
    }
    let fits: Vec<EnvelopeFit> = out.iter().filter_map(|p| p.fit).collect();
    let min_lambda = fits.iter().map(|f| f.lambda).fold(f64::INFINITY, f64::min);
    let max_k = fits.iter().map(|f| f.k).fold(f64::NEG_INFINITY, f64::max);
    let inconclusive = out.iter().any(|p| p.blew_up);
    let passed = !inconclusive
        && out
            .iter()
            .all(|p| p.fit.map(|f| f.verdict) == Some(FitVerdict::Contracting));
    Ok(EnsembleReport {
        pairs: out,
        min_lambda,
        max_k,
        inconclusive,
        passed,
    })
}

/// Pairs drawn uniformly from a box, skipping coincident draws.
pub fn box_pairs(region: &BoxRegion, count: usize, rng: &mut ChaCha8Rng) -> Vec<InitialPair> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = region.uniform(rng);
        let b = region.uniform(rng);
        if a != b {
            out.push((a, b));
        }
    }
    out
}

/// Pairs on the sphere of the given radius.
pub fn sphere_pairs(dim: usize, radius: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<InitialPair> {
    (0..count)
        .map(|_| {
            (
                uniform_on_sphere(dim, radius, rng),
                uniform_on_sphere(dim, radius, rng),
            )
        })
        .collect()
}

/// Pairs inside `{W(t, ·) ≤ level}` by rejection from the enclosing cube.
pub fn sublevel_pairs(
    w: &OuterLyapunov,
    t: f64,
    level: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<InitialPair>> {
    let half = w.class_lower_inverse(level)?;
    let cube = BoxRegion::centered(w.dim(), half);
    let mut inside = || loop {
        let p = cube.uniform(rng);
        if w.value(t, &p) <= level {
            return p;
        }
    };
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = inside();
        let b = inside();
        if a != b {
            out.push((a, b));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusSummary {
    pub radius: f64,
    pub min_lambda: f64,
    pub max_k: f64,
    pub non_contracting: usize,
    pub blew_up: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WiesEnsembleReport {
    pub radii: Vec<f64>,
    pub per_radius: Vec<EnsembleReport>,
    pub summaries: Vec<RadiusSummary>,
    /// Smallest fitted `λ` over every pair.
    pub lambda_floor: f64,
    /// Largest `K` per radius, reported as-is.
    pub gain_profile: Vec<f64>,
    pub passed: bool,
}

/// Fits envelopes for pairs on spheres of increasing radius.
pub fn wies_scan(
    field: &TimeVaryingField,
    radii: &[f64],
    pairs_per_radius: usize,
    config: &IntegratorConfig,
    opts: &FitOptions,
    seed: u64,
) -> Result<WiesEnsembleReport> {
    if radii.is_empty() || pairs_per_radius == 0 {
        return Err(Error::EmptySampleSet);
    }
    if radii.windows(2).any(|w| !(w[0] < w[1])) || !(radii[0] > 0.0) {
        return Err(invalid("radii", "must be positive and increasing"));
    }
    let mut rng = rng_from_seed(seed);
    let mut per_radius = Vec::with_capacity(radii.len());
    let mut summaries = Vec::with_capacity(radii.len());
    for &r in radii {
        let pairs = sphere_pairs(field.dim(), r, pairs_per_radius, &mut rng);
        let rep = ensemble_ies(field, &pairs, config, opts)?;
        summaries.push(RadiusSummary {
            radius: r,
            min_lambda: rep.min_lambda,
            max_k: rep.max_k,
            non_contracting: rep.count(FitVerdict::NonContracting),
            blew_up: rep.pairs.iter().filter(|p| p.blew_up).count(),
        });
        per_radius.push(rep);
    }
    let lambda_floor = summaries
        .iter()
        .map(|s| s.min_lambda)
        .fold(f64::INFINITY, f64::min);
    let gain_profile = summaries.iter().map(|s| s.max_k).collect();
    let passed = lambda_floor > 0.0 && per_radius.iter().all(|r| r.passed);
    Ok(WiesEnsembleReport {
        radii: radii.to_vec(),
        per_radius,
        summaries,
        lambda_floor,
        gain_profile,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::sampling::linspace;

    #[test]
    fn exact_exponential() {
        let t = linspace(0.0, 5.0, 501);
        let d: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        let f = fit_envelope(&t, &d, &FitOptions::default()).unwrap();
        assert!((f.lambda - 2.0).abs() < 1e-12);
        assert!((f.k - 1.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
        assert_eq!(f.verdict, FitVerdict::Contracting);
    }

    #[test]
    fn constant_distance_is_non_contracting() {
        let t = linspace(0.0, 10.0, 101);
        let d = alloc::vec![1.0; 101];
        let f = fit_envelope(&t, &d, &FitOptions::default()).unwrap();
        assert_eq!(f.verdict, FitVerdict::NonContracting);
    }

    #[test]
    fn zero_initial_distance_rejected() {
        let t = linspace(0.0, 1.0, 3);
        assert!(fit_envelope(&t, &[0.0, 0.0, 0.0], &FitOptions::default()).is_err());
    }

    #[test]
    fn noise_floor_truncates() {
        let t = linspace(0.0, 40.0, 401);
        let d: Vec<f64> = t
            .iter()
            .map(|t| (-t).exp().max(1e-13 * (1.0 + (7.0 * t).sin().abs())))
            .collect();
        let f = fit_envelope(&t, &d, &FitOptions::default()).unwrap();
        assert!((f.lambda - 1.0).abs() < 1e-9, "{}", f.lambda);
        assert!(f.window.1 < 21.0);
    }

    #[test]
    fn linear_ensemble() {
        let field = TimeVaryingField::linear(Matrix::from_rows(&[&[-1.0, 0.0], &[0.0, -1.0]]));
        let mut rng = rng_from_seed(7);
        let pairs = box_pairs(&BoxRegion::centered(2, 2.0), 5, &mut rng);
        let rep = ensemble_ies(
            &field,
            &pairs,
            &IntegratorConfig::fixed(0.01, 10.0),
            &FitOptions::default(),
        )
        .unwrap();
        assert!(rep.passed);
        assert!((rep.min_lambda - 1.0).abs() < 1e-6);
        assert!((rep.max_k - 1.0).abs() < 1e-6);
    }
}
