use proptest::prelude::*;
use smallgain_core::dynsys::{assemble, TimeVaryingField};
use smallgain_core::fhn::*;
use smallgain_core::finsler::*;
use smallgain_core::linalg::Matrix;
use smallgain_core::sampling::{linspace, sphere_directions, BoxRegion};

fn half_norm(dim: usize) -> FinslerCandidate {
    FinslerCandidate::constant_metric(Matrix::identity(dim).scale(0.5)).unwrap()
}

fn figure_table(n: u8) -> (FhnParams, FcTable) {
    let p = FhnParams::figure(n).unwrap();
    let t = build_fc(&p, &FcConfig::relaxed()).unwrap();
    (p, t)
}

fn line_samples(lo: f64, hi: f64, n: usize) -> Vec<Sample> {
    linspace(lo, hi, n)
        .into_iter()
        .map(|x| Sample::new(vec![x], vec![1.0]))
        .collect()
}

#[test]
fn v2_decay_is_exact_at_zero_slack() {
    let (p, _) = figure_table(3);
    let ic = fhn_field(&p).unwrap();
    let s = line_samples(-5.0, 5.0, 101);
    let r = check_decay(&half_square_candidate(), &ic.f2, p.b / p.epsilon, DecayForm::SquaredNorm, &s, Slack::ZERO).unwrap();
    assert!(r.verdict.passed());
    assert!(r.worst_violation.abs() < 1e-15);
}

#[test]
fn v1_sandwich_on_wide_grid() {
    let (_, t) = figure_table(1);
    let v1 = fc_candidate(&t);
    assert_eq!((v1.c_lower, v1.c_upper), (1.0, t.mu.exp()));
    let r = check_sandwich(&v1, &line_samples(-5.0, 5.0, 2001), Slack::default()).unwrap();
    assert!(r.verdict.passed());
}

#[test]
fn v1_decay_and_assumption2_at_figure_parameters() {
    let (p, t) = figure_table(2);
    let ic = fhn_field(&p).unwrap();
    let v1 = fc_candidate(&t);
    let s = line_samples(-5.0, 5.0, 2001);
    let d = check_decay(&v1, &ic.f1, p.alpha, DecayForm::Value, &s, Slack::default()).unwrap();
    assert!(d.verdict.passed(), "{}", describe_decay(&d));
    let inner = line_samples(-t.s_star, t.s_star, 4001);
    let a2 = verify_assumption2(&v1, &fc_bounds(&t), &inner, Slack::default()).unwrap();
    assert!(a2.verdict.passed());
    let eta_bound = AssumptionTwoBounds::constant(t.eta, 2.0 * t.mu.exp());
    assert!(verify_assumption2(&v1, &eta_bound, &inner, Slack::default()).unwrap().verdict.passed());
}

#[test]
fn composite_fails_in_the_oscillating_regime() {
    let (p, t) = figure_table(1);
    let f = assemble(&fhn_field(&p).unwrap()).unwrap();
    let v = compose(&fc_candidate(&t), &half_square_candidate());
    let pts = BoxRegion::centered(2, 3.0).grid(31);
    let s = product_samples(&pts, &sphere_directions(2, 16), 0.0);
    let r = check_decay(&v, &f, 0.01, DecayForm::SquaredNorm, &s, Slack::default()).unwrap();
    assert_eq!(r.verdict, Verdict::Violated);
    assert!(r.worst_sample.is_some());
}

#[test]
fn composition_constants() {
    let (_, t) = figure_table(3);
    let v = compose(&fc_candidate(&t), &half_square_candidate());
    assert_eq!(v.dim(), 2);
    assert_eq!(v.c_lower, 0.5);
    assert_eq!(v.c_upper, t.mu.exp());
    let two = compose(&half_norm(1), &half_norm(2));
    assert!(two.is_quadratic());
    assert!((two.value(&[1.0, 2.0, 3.0], &[1.0, -1.0, 2.0]) - 3.0).abs() < 1e-15);
}

#[test]
fn symbolic_and_gradient_vdot_agree_for_state_dependent_metric() {
    // M(z) = diag(1 + z0², 2)
    let q = QuadraticFormCandidate {
        dim: 2,
        metric: std::sync::Arc::new(|z: &[f64]| Matrix::from_rows(&[&[1.0 + z[0] * z[0], 0.0], &[0.0, 2.0]])),
        metric_grad: std::sync::Arc::new(|z: &[f64]| {
            vec![
                Matrix::from_rows(&[&[2.0 * z[0], 0.0], &[0.0, 0.0]]),
                Matrix::zeros(2, 2),
            ]
        }),
        eigen_bounds: (1.0, 10.0),
    };
    let v = q.into_candidate().unwrap();
    let f = TimeVaryingField::new(
        2,
        |_, z, o| {
            o[0] = -z[0] + z[1] * z[1];
            o[1] = -2.0 * z[1];
        },
        |_, z, o| {
            o.copy_from_slice(&[-1.0, 2.0 * z[1], 0.0, -2.0]);
        },
    );
    for (z, dz) in [([0.5, 1.0], [1.0, 0.0]), ([-1.5, 0.3], [0.2, -0.7])] {
        let a = vdot(&v, &f, 0.0, &z, &dz).unwrap();
        let b = v.symbolic_vdot(&f, 0.0, &z, &dz).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn finite_difference_candidate_matches_analytic() {
    let (_, t) = figure_table(3);
    let tt = t.clone();
    let fd = FinslerCandidate::from_value(1, move |x, dx| tt.fc(x[0]) * dx[0] * dx[0], 1.0, t.mu.exp());
    let exact = fc_candidate(&t);
    for x in [-0.9, -0.2, 0.4, 1.0] {
        let a = fd.grad_state(&[x], &[1.0])[0];
        let b = exact.grad_state(&[x], &[1.0])[0];
        assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
        assert!((fd.grad_disp(&[x], &[1.0])[0] - exact.grad_disp(&[x], &[1.0])[0]).abs() < 1e-6);
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let f = TimeVaryingField::linear(Matrix::identity(3).scale(-1.0));
    assert!(vdot(&half_norm(2), &f, 0.0, &[0.0, 0.0], &[1.0, 0.0]).is_err());
    assert!(vdot(&half_norm(2), &f, 0.0, &[0.0], &[1.0, 0.0]).is_err());
}

#[test]
fn quadratic_candidates_need_positive_eigen_bounds() {
    assert!(FinslerCandidate::constant_metric(Matrix::from_rows(&[&[1.0, 0.0], &[0.0, -1.0]])).is_err());
}

proptest! {
    #[test]
    fn sandwich_survives_composition(
        a in 0.1f64..5.0, b in 0.1f64..5.0,
        x in -3.0f64..3.0, y in -3.0f64..3.0,
        dx in -2.0f64..2.0, dy in -2.0f64..2.0,
    ) {
        prop_assume!(dx.abs() + dy.abs() > 1e-3);
        let va = FinslerCandidate::constant_metric(Matrix::from_rows(&[&[a]])).unwrap();
        let vb = FinslerCandidate::constant_metric(Matrix::from_rows(&[&[b]])).unwrap();
        let v = compose(&va, &vb);
        let r = check_sandwich(&v, &[Sample::new(vec![x, y], vec![dx, dy])], Slack::default()).unwrap();
        prop_assert!(r.verdict.passed());
    }

    #[test]
    fn decay_on_diagonal_contraction(r1 in 0.2f64..3.0, r2 in 0.2f64..3.0, x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let f = TimeVaryingField::linear(Matrix::from_rows(&[&[-r1, 0.0], &[0.0, -r2]]));
        let s = product_samples(&[vec![x, y]], &sphere_directions(2, 12), 0.0);
        let rate = 2.0 * r1.min(r2);
        let ok = check_decay(&half_norm(2), &f, rate, DecayForm::Value, &s, Slack::default()).unwrap();
        prop_assert!(ok.verdict.passed());
        let too_fast = check_decay(&half_norm(2), &f, rate * 1.1 + 0.01, DecayForm::Value, &s, Slack::default()).unwrap();
        prop_assert_eq!(too_fast.verdict, Verdict::Violated);
    }
}
