use smallgain_core::dynsys::{assemble, integrate, IntegratorConfig, TimeVaryingField};
use smallgain_core::fhn::{fhn_field, FhnParams};
use smallgain_core::invariance::*;
use smallgain_core::linalg::Matrix;
use smallgain_core::Error;

fn fhn(n: u8) -> (FhnParams, TimeVaryingField) {
    let p = FhnParams::figure(n).unwrap();
    let f = assemble(&fhn_field(&p).unwrap()).unwrap();
    (p, f)
}

fn scaled_identity(a: f64) -> TimeVaryingField {
    TimeVaryingField::linear(Matrix::identity(2).scale(a))
}

#[test]
fn wdot_examples() {
    let w = OuterLyapunov::diagonal_quadratic(&[1.0, 1.0]).unwrap();
    let z = [0.7, -1.3];
    assert!((wdot(&w, &scaled_identity(-1.0), 0.0, &z) + (0.49 + 1.69)).abs() < 1e-15);

    // W = e^{−t}|z|²/2 on the zero field leaves only ∂W/∂t
    let tw = OuterLyapunov::new(
        2,
        |t, z: &[f64]| 0.5 * (-t).exp() * (z[0] * z[0] + z[1] * z[1]),
        |t, z: &[f64], g: &mut [f64]| {
            let e = (-t).exp();
            g[0] = e * z[0];
            g[1] = e * z[1];
            -0.5 * e * (z[0] * z[0] + z[1] * z[1])
        },
        |s| 0.0 * s,
        |s| 0.5 * s * s,
    );
    let got = wdot(&tw, &TimeVaryingField::zero(2), 1.0, &z);
    assert!((got + 0.5 * (-1.0f64).exp() * 2.18).abs() < 1e-15);
}

#[test]
fn fhn_wdot_matches_hand_expansion() {
    for n in 1..=3 {
        let (p, f) = fhn(n);
        let w = fhn_outer_lyapunov(&p);
        for &(x, y) in &[(0.3, -1.1), (2.5, 0.4), (-4.0, 3.0)] {
            let hand = x * (x - x * x * x / 3.0 + p.c - p.rho1 * y) + y * (-p.b * y + p.rho2 * x);
            let got = wdot(&w, &f, 0.0, &[x, y]);
            assert!((got - hand).abs() < 1e-12 * (1.0 + hand.abs()), "{got} vs {hand}");
            assert!((fhn_chain_terms(&p, x, y)[0] - hand).abs() < 1e-12 * (1.0 + hand.abs()));
        }
    }
}

#[test]
fn dissipation_chain_holds_for_every_figure() {
    for n in 1..=3 {
        let p = FhnParams::figure(n).unwrap();
        let r = check_dissipation_chain_fhn(&p, 6.0, 201, 1e-9).unwrap();
        assert!(r.passed, "figure {n}: {:?}", r.margins);
    }
}

#[test]
fn chain_needs_equal_gains() {
    let p = FhnParams::figure(3).unwrap().with_gains(1.0, 0.5);
    assert!(matches!(check_dissipation_chain_fhn(&p, 6.0, 11, 1e-9), Err(Error::Hypothesis(_))));
}

#[test]
fn contracting_field_accepts_the_smallest_level() {
    let w = OuterLyapunov::diagonal_quadratic(&[1.0, 1.0]).unwrap();
    let search = LevelSearch::geometric(0.05, 50.0, 31);
    let est = find_invariant_level(&w, &scaled_identity(-1.0), &search).unwrap();
    assert_eq!(est.level, 0.05);
    assert_eq!(est.levels_tried, 1);
    assert!(est.margin < 0.0);
    assert!((est.radius - 0.1f64.sqrt()).abs() < 1e-10);
}

#[test]
fn expanding_field_has_no_invariant_level() {
    let w = OuterLyapunov::diagonal_quadratic(&[1.0, 1.0]).unwrap();
    let e = find_invariant_level(&w, &scaled_identity(1.0), &LevelSearch::default());
    assert!(matches!(e, Err(Error::LevelNotFound)));
}

#[test]
fn fhn_figure_one_invariant_set_and_simulation_check() {
    let (p, f) = fhn(1);
    let w = fhn_outer_lyapunov(&p);
    let est = find_invariant_level(&w, &f, &LevelSearch::default()).unwrap();
    assert!(est.radius <= 6.0, "R = {}", est.radius);
    assert!(est.radius <= est.class_radius * (1.0 + 1e-9));
    let cfg = IntegratorConfig::fixed(1e-2, 20.0);
    for z0 in level_set_points(&w, 0.0, est.level, 50).unwrap() {
        let tr = integrate(&f, 0.0, &z0, &cfg).unwrap();
        let worst = tr.states.iter().map(|z| w.value(0.0, z)).fold(0.0, f64::max);
        assert!(worst <= est.level * (1.0 + 1e-9), "left the set from {z0:?}: {worst}");
    }
}

#[test]
fn comparison_lemma_dominates_the_trajectory() {
    for n in 1..=3 {
        let (p, f) = fhn(n);
        let w = fhn_outer_lyapunov(&p);
        let z0 = [3.0, 3.0];
        let w0 = w.value(0.0, &z0);
        let tr = integrate(&f, 0.0, &z0, &IntegratorConfig::fixed(1e-2, 30.0)).unwrap();
        for (t, z) in tr.times.iter().zip(&tr.states) {
            assert!(w.value(0.0, z) <= comparison_bound(&p, w0, *t) + 1e-9);
        }
    }
}

#[test]
fn ultimate_bound_value_and_hypothesis() {
    let p = FhnParams::figure(3).unwrap();
    assert!((ultimate_bound_fhn(&p, 0.1).unwrap() - 1.225).abs() < 1e-15);
    assert!(matches!(ultimate_bound_fhn(&FhnParams::figure(1).unwrap(), 0.1), Err(Error::Hypothesis(_))));
    assert!(ultimate_bound_fhn(&p, 0.0).is_err());
}

#[test]
fn entry_time_shrinks_as_m_grows() {
    let (p, f) = fhn(3);
    let tr = integrate(&f, 0.0, &[3.0, 3.0], &IntegratorConfig::fixed(1e-3, 40.0)).unwrap();
    let ey2: Vec<f64> = tr.states.iter().map(|z| p.epsilon * z[1] * z[1]).collect();
    let mut prev = f64::INFINITY;
    for m in [1.0, 2.0, 4.0, 8.0] {
        let b = ultimate_bound_fhn(&p, m).unwrap();
        let t = entry_time(&tr.times, &ey2, b).expect("settles below the bound");
        assert!(t <= prev);
        prev = t;
    }
}

#[test]
fn entry_time_edge_cases() {
    let t = [0.0, 1.0, 2.0, 3.0];
    assert_eq!(entry_time(&t, &[5.0, 0.5, 2.0, 0.5], 1.0), Some(3.0));
    assert_eq!(entry_time(&t, &[0.5, 0.5, 0.5, 0.5], 1.0), Some(0.0));
    assert_eq!(entry_time(&t, &[0.5, 0.5, 0.5, 2.0], 1.0), None);
}
