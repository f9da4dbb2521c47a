use proptest::prelude::*;
use smallgain_core::dynsys::{CouplingMap, Interconnection, TimeVaryingField};
use smallgain_core::fhn::*;
use smallgain_core::finsler::{AssumptionTwoBounds, FinslerCandidate};
use smallgain_core::linalg::Matrix;
use smallgain_core::smallgain::*;
use smallgain_core::Error;

fn scalar_field(a: f64) -> TimeVaryingField {
    TimeVaryingField::linear(Matrix::from_rows(&[&[a]]))
}

fn half() -> FinslerCandidate {
    half_square_candidate()
}

fn fhn_setup(n: u8) -> (FhnParams, FcTable, Interconnection) {
    let p = FhnParams::figure(n).unwrap();
    let t = build_fc(&p, &FcConfig::relaxed()).unwrap();
    let ic = fhn_field(&p).unwrap();
    (p, t, ic)
}

#[test]
fn fhn_constants_on_a_ball() {
    let (_, t, ic) = fhn_setup(1);
    let r = 4.8;
    let c = extract_constants(&ic, (&fc_bounds(&t), &half_square_bounds()), r, &ConstantsOptions::default()).unwrap();
    assert!((c.a1 - r * 1.05).abs() < 1e-12);
    assert!((c.a2 - r * 1.05).abs() < 1e-12);
    assert!((c.b1 - 1.05).abs() < 1e-12 && (c.b2 - 1.05).abs() < 1e-12);
    assert!(c.eta1 <= t.eta * 1.05 + 1e-9);
    assert!(c.eta1 >= 0.9 * t.eta * 1.05);
    assert!(c.theta1 <= 2.0 * t.mu.exp() * 1.05 + 1e-9);
    assert_eq!(c.eta2, 0.0);
}

#[test]
fn constants_grow_with_radius() {
    let (_, t, ic) = fhn_setup(3);
    let b = (fc_bounds(&t), half_square_bounds());
    let opts = ConstantsOptions::default();
    let mut prev: Option<SupConstants> = None;
    for r in [0.5, 1.0, 2.0, 4.0] {
        let c = extract_constants(&ic, (&b.0, &b.1), r, &opts).unwrap();
        if let Some(p) = prev {
            for (x, y) in [(p.a1, c.a1), (p.a2, c.a2), (p.b1, c.b1), (p.eta1, c.eta1), (p.theta1, c.theta1)] {
                assert!(y >= x * (1.0 - 1e-12), "{x} -> {y} at r={r}");
            }
        }
        prev = Some(c);
    }
}

#[test]
fn nonfinite_coupling_is_rejected() {
    let ic = Interconnection {
        f1: scalar_field(-1.0),
        f2: scalar_field(-1.0),
        g1: CouplingMap::new(1, 1, |y, o| o[0] = 1.0 / y[0], |y, o| o[0] = -1.0 / (y[0] * y[0])),
        g2: CouplingMap::linear(Matrix::from_rows(&[&[1.0]])),
        rho1: 0.1,
        rho2: 0.1,
    };
    let b = AssumptionTwoBounds::constant(0.0, 1.0);
    let e = extract_constants(&ic, (&b, &b), 1.0, &ConstantsOptions::default());
    assert!(matches!(e, Err(Error::NonFinite { .. })));
}

#[test]
fn decoupled_system_certifies() {
    let zero = CouplingMap::linear(Matrix::zeros(1, 1));
    let ic = Interconnection {
        f1: scalar_field(-1.0),
        f2: scalar_field(-2.0),
        g1: zero.clone(),
        g2: zero,
        rho1: 0.0,
        rho2: 0.0,
    };
    let b = half_square_bounds();
    // V = δ²/2 gives V̇ = −a δ², so α1 = 1 and α2 = 2 in |δ|² form
    let opts = CertifyOptions::new(1.0, 2.0, 1.0 - 1e-6);
    let cert = certify(&ic, (&half(), &half()), (&b, &b), 3.0, &opts).unwrap();
    assert!(cert.rho1_max.is_infinite() && cert.rho2_max.is_infinite());
    assert_eq!(cert.checked_gains, (0.0, 0.0));
    assert_eq!(cert.status(), CertificateStatus::Certified);
}

#[test]
fn certify_refuses_a_non_contracting_component() {
    let one = CouplingMap::linear(Matrix::from_rows(&[&[1.0]]));
    let ic = Interconnection {
        f1: scalar_field(0.5),
        f2: scalar_field(-1.0),
        g1: one.clone(),
        g2: one,
        rho1: 0.1,
        rho2: 0.1,
    };
    let b = half_square_bounds();
    let e = certify(&ic, (&half(), &half()), (&b, &b), 2.0, &CertifyOptions::new(1.0, 1.0, 0.5));
    match e {
        Err(Error::Refused(msg)) => assert!(msg.contains("component 1"), "{msg}"),
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[test]
fn fhn_figure_two_certificate() {
    let (p, t, ic) = fhn_setup(2);
    let (a1, a2) = component_rates(&p);
    let opts = CertifyOptions::new(a1, a2, 0.05);
    let cert = certify(
        &ic,
        (&fc_candidate(&t), &half()),
        (&fc_bounds(&t), &half_square_bounds()),
        4.86,
        &opts,
    )
    .unwrap();
    assert!(cert.passed());
    assert!(cert.margins_at_budget.0 >= 0.0 && cert.margins_at_budget.1 >= 0.0);
    assert!(cert.rho1_max > 0.0 && cert.rho2_max > 0.0);
    // α2 = b/ε = 0.1 caps ρ2 well below the requested 0.1
    assert!(cert.rho2_max < 0.1);
    assert!(!cert.covers_requested());
    assert_eq!(cert.status(), CertificateStatus::GainsExceedBudget);
}

#[test]
fn fhn_figure_one_requested_gain_exceeds_budget() {
    let (p, t, ic) = fhn_setup(1);
    let (a1, a2) = component_rates(&p);
    let cert = certify(
        &ic,
        (&fc_candidate(&t), &half()),
        (&fc_bounds(&t), &half_square_bounds()),
        4.86,
        &CertifyOptions::new(a1, a2, 0.05),
    )
    .unwrap();
    assert_eq!(cert.requested, (1.0, 1.0));
    assert!(!cert.covers_requested());
    assert_ne!(cert.status(), CertificateStatus::Certified);
}

#[test]
fn shrinking_epsilons_never_grows_budget() {
    let c = SupConstants {
        radius: 1.0,
        a1: 2.0,
        a2: 0.5,
        b1: 1.5,
        b2: 0.7,
        eta1: 3.0,
        eta2: 0.2,
        theta1: 2.0,
        theta2: 1.0,
        safety_factor: 1.05,
        grid_per_axis: 0,
    };
    let big = Epsilons::symmetric(1.0, 1.5, 0.2);
    let small = Epsilons {
        e1: big.e1 * 0.5,
        e2: big.e2 * 0.9,
        e3: big.e3 * 0.3,
        e4: big.e4,
    };
    let a = gain_budget(&c, 1.0, 1.5, 0.2, &big).unwrap();
    let b = gain_budget(&c, 1.0, 1.5, 0.2, &small).unwrap();
    assert!(b.rho1_max <= a.rho1_max && b.rho2_max <= a.rho2_max);
}

#[test]
fn isps_corollary_examples() {
    let r = isps_smallgain_check(&IspsGainPair::new(|r| r / 2.0, |r| r / 2.0, 1e-3, 50.0), 1000).unwrap();
    assert!(r.passed && (r.worst_ratio - 0.25).abs() < 1e-12);
    assert!(!isps_smallgain_check(&IspsGainPair::new(|r| 2.0 * r, |r| r, 1e-3, 50.0), 1000).unwrap().passed);
    let roots = IspsGainPair::new(|r: f64| r.sqrt(), |r: f64| r.sqrt(), 1.0, 1e4);
    assert!(isps_smallgain_check(&roots, 1000).unwrap().passed);
    let below_threshold = IspsGainPair::new(|r: f64| r.sqrt(), |r: f64| r.sqrt(), 0.01, 1.0);
    assert!(!isps_smallgain_check(&below_threshold, 100).unwrap().passed);
}

/// Coefficients of the two proof inequalities at `(ρ1, ρ2)`, written out
/// independently of the library.
fn lhs(c: &SupConstants, a1: f64, a2: f64, r1: f64, r2: f64) -> (f64, f64) {
    let mul = |r: f64, k: f64| if k == 0.0 { 0.0 } else { r * k };
    (
        -a1 + mul(r1, c.a1 * c.eta1 + c.b1 * c.theta1.powi(2) / 2.0) + mul(r2, c.b2 / 2.0),
        -a2 + mul(r2, c.a2 * c.eta2 + c.b2 * c.theta2.powi(2) / 2.0) + mul(r1, c.b1 / 2.0),
    )
}

fn constants() -> impl Strategy<Value = SupConstants> {
    (prop::array::uniform8(0.0f64..10.0), 1.0f64..10.0).prop_map(|(v, r)| SupConstants {
        radius: r,
        a1: v[0],
        a2: v[1],
        b1: v[2],
        b2: v[3],
        eta1: v[4],
        eta2: v[5],
        theta1: v[6],
        theta2: v[7],
        safety_factor: 1.05,
        grid_per_axis: 0,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn budgets_satisfy_both_inequalities(
        c in constants(),
        a1 in 0.5f64..5.0,
        a2 in 0.5f64..5.0,
        frac in 0.05f64..0.9,
        split in prop::array::uniform4(0.05f64..0.95),
    ) {
        let alpha = frac * a1.min(a2);
        let eps = Epsilons {
            e1: split[0] * (a1 - alpha) / 2.0,
            e2: split[1] * (a1 - alpha) / 2.0,
            e3: split[2] * (a2 - alpha) / 2.0,
            e4: split[3] * (a2 - alpha) / 2.0,
        };
        let b = gain_budget(&c, a1, a2, alpha, &eps).unwrap();
        // an unbounded budget is checked at a large finite gain
        let r1 = if b.rho1_max.is_finite() { b.rho1_max } else { 1e6 };
        let r2 = if b.rho2_max.is_finite() { b.rho2_max } else { 1e6 };
        let (x, y) = lhs(&c, a1, a2, r1, r2);
        let tol = 1e-12 * (1.0 + a1 + a2);
        prop_assert!(x <= -alpha + tol, "dx {x} vs {}", -alpha);
        prop_assert!(y <= -alpha + tol, "dy {y} vs {}", -alpha);
        let (mx, my) = inequality_margins(&c, a1, a2, alpha, r1, r2);
        prop_assert!(mx >= -tol && my >= -tol);
    }

    #[test]
    fn infeasible_target_rate(a1 in 0.1f64..2.0, a2 in 0.1f64..2.0, extra in 0.0f64..1.0) {
        let alpha = a1.min(a2) + extra;
        let c = SupConstants { radius: 1.0, a1: 1.0, a2: 1.0, b1: 1.0, b2: 1.0, eta1: 1.0, eta2: 1.0, theta1: 1.0, theta2: 1.0, safety_factor: 1.0, grid_per_axis: 0 };
        let eps = Epsilons { e1: 0.01, e2: 0.01, e3: 0.01, e4: 0.01 };
        prop_assert!(matches!(gain_budget(&c, a1, a2, alpha, &eps), Err(Error::Infeasible(_))));
    }
}
