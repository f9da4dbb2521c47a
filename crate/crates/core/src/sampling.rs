//! Deterministic sample generators: Halton points, uniform per-axis grids,
//! unit-sphere directions and seeded uniform draws.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods exist when std is in the graph
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % b) as f64;
        index /= b;
        f *= inv;
    }
    r
}

/// The `index`-th Halton point in `[0, 1)^dim`, using the first `dim` primes.
///
/// Index 0 is skipped by callers that do not want the origin corner.
pub fn halton_point(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton dimension above {}", PRIMES.len());
    (0..dim).map(|k| radical_inverse(index, PRIMES[k])).collect()
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    /// Cube `[-half_width, half_width]^dim`.
    pub fn centered(dim: usize, half_width: f64) -> Self {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn map_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect()
    }

    /// First `count` Halton points mapped into the box (starting at index 1).
    pub fn halton(&self, count: usize) -> Vec<Vec<f64>> {
        (1..=count as u64)
            .map(|i| self.map_unit(&halton_point(i, self.dim())))
            .collect()
    }

    /// Uniform per-axis grid with `per_axis` nodes (endpoints included).
    pub fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let dim = self.dim();
        if dim == 0 {
            return vec![Vec::new()];
        }
        let per_axis = per_axis.max(2);
        let axes: Vec<Vec<f64>> = (0..dim)
            .map(|k| linspace(self.lower[k], self.upper[k], per_axis))
            .collect();
        let total = per_axis.pow(dim as u32);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            out.push((0..dim).map(|k| axes[k][idx[k]]).collect());
            for k in (0..dim).rev() {
                idx[k] += 1;
                if idx[k] < per_axis {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }

    /// Seeded uniform point in the box.
    pub fn uniform(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let u: Vec<f64> = (0..self.dim()).map(|_| rng.random::<f64>()).collect();
        self.map_unit(&u)
    }
}

/// `n` evenly spaced values on `[a, b]`, endpoints exact.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| a + h * i as f64).collect();
            v[n - 1] = b;
            v
        }
    }
}

/// Points of the per-axis grid over `[-radius, radius]^dim` that lie in the
/// closed ball of that radius.
pub fn ball_grid(dim: usize, radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let tol = radius * 1e-12;
    BoxRegion::centered(dim, radius)
        .grid(per_axis)
        .into_iter()
        .filter(|p| crate::linalg::norm(p) <= radius + tol)
        .collect()
}

/// Deterministic directions on the unit sphere in `R^dim`.
///
/// Dimension one alternates `+1`/`-1`; dimension two walks the circle with a
/// golden-angle increment; higher dimensions push Halton points through
/// Box–Muller and normalise.
pub fn sphere_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        0 => Vec::new(),
        1 => (0..count)
            .map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }])
            .collect(),
        2 => {
            let golden = core::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
            (0..count)
                .map(|i| {
                    let th = golden * i as f64;
                    vec![th.cos(), th.sin()]
                })
                .collect()
        }
        _ => {
            let pairs = dim.div_ceil(2);
            let mut out = Vec::with_capacity(count);
            let mut i = 1u64;
            while out.len() < count {
                let u = halton_point(i, 2 * pairs);
                i += 1;
                let mut g = Vec::with_capacity(2 * pairs);
                for k in 0..pairs {
                    let u1 = u[2 * k].max(1e-12);
                    let u2 = u[2 * k + 1];
                    let r = (-2.0 * u1.ln()).sqrt();
                    let th = 2.0 * core::f64::consts::PI * u2;
                    g.push(r * th.cos());
                    g.push(r * th.sin());
                }
                g.truncate(dim);
                let n = crate::linalg::norm(&g);
                if n > 1e-9 {
                    out.push(g.iter().map(|x| x / n).collect());
                }
            }
            out
        }
    }
}

/// Seeded generator used by every stochastic sampler in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeded point on the sphere of radius `radius`.
pub fn uniform_on_sphere(dim: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim)
            .map(|_| {
                let u1: f64 = rng.random::<f64>().max(1e-300);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
            })
            .collect();
        let n = crate::linalg::norm(&g);
        if n > 1e-9 {
            return g.iter().map(|x| radius * x / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_base_two_prefix() {
        let v: Vec<f64> = (1..5).map(|i| radical_inverse(i, 2)).collect();
        assert_eq!(v, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn grid_includes_corners_and_counts() {
        let g = BoxRegion::centered(2, 3.0).grid(5);
        assert_eq!(g.len(), 25);
        assert!(g.contains(&vec![-3.0, -3.0]));
        assert!(g.contains(&vec![3.0, 3.0]));
        assert!(g.contains(&vec![0.0, 0.0]));
    }

    #[test]
    fn ball_grid_stays_in_ball() {
        let g = ball_grid(3, 2.0, 9);
        assert!(!g.is_empty());
        assert!(g.iter().all(|p| crate::linalg::norm(p) <= 2.0 + 1e-9));
        assert!(g.contains(&vec![0.0, 0.0, 2.0]));
    }

    #[test]
    fn sphere_directions_are_unit() {
        for dim in 1..6 {
            for d in sphere_directions(dim, 40) {
                assert!((crate::linalg::norm(&d) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn seeded_draws_repeat() {
        let b = BoxRegion::centered(3, 1.0);
        let mut r1 = rng_from_seed(9);
        let mut r2 = rng_from_seed(9);
        for _ in 0..10 {
            assert_eq!(b.uniform(&mut r1), b.uniform(&mut r2));
        }
    }
}
