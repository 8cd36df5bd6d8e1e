use ivrobust::montecarlo::{
    draw, empirical_size_many, kleibergen_coordinates, kleibergen_target, null_pvalues, omega_vv_eps,
    power_curves, rep_rng, sample_pi,
};
use ivrobust::{DgpSpec, Family, TestKind};
use nalgebra::{Matrix2, Matrix3};

#[test]
fn kleibergen_design_hits_target_gram() {
    for &(l1, l2, tau) in &[(1.0, 100.0, 0.3), (0.0, 50.0, 1.2), (10.0, 10.0, 0.0), (5.0, 2000.0, 2.9)] {
        let spec = DgpSpec::kleibergen(500, 6, l1, l2, tau);
        let (xn, wn, inner) = spec.pi_targets().unwrap();
        let (px, pw) = sample_pi(spec.k, xn, wn, inner, spec.n, &mut rep_rng(1, 0)).unwrap();
        let n = spec.n as f64;
        let gram = Matrix2::new(n * px.dot(&px), n * px.dot(&pw), n * pw.dot(&px), n * pw.dot(&pw));
        let target = kleibergen_target(&spec.omega_matrix(), l1, l2, tau).unwrap();
        assert!((gram - target).amax() < 1e-8 * (1.0 + target.amax()), "{gram} vs {target}");
        let (a, b, t) = kleibergen_coordinates(&spec.omega_matrix(), &gram);
        assert!((a - l1.min(l2)).abs() < 1e-6 * (1.0 + l2));
        assert!((b - l1.max(l2)).abs() < 1e-6 * (1.0 + l2));
        if l1 < l2 {
            assert!((t - tau).abs() < 1e-6, "{t} vs {tau}");
        }
    }
}

#[test]
fn first_stage_norms_and_orthogonality() {
    let mut rng = rep_rng(9, 2);
    for &(xn, wn, inner) in &[(100.0, 1.0, 95.0), (3.0, 7.0, 0.0), (2.0, 2.0, -4.0), (0.0, 5.0, 0.0)] {
        let (px, pw) = sample_pi(8, xn, wn, inner, 400, &mut rng).unwrap();
        let sn = 20.0;
        assert!((sn * px.norm() - xn).abs() < 1e-10);
        assert!((sn * pw.norm() - wn).abs() < 1e-10);
        assert!((400.0 * px.dot(&pw) - inner).abs() < 1e-10);
    }
    assert!(sample_pi(5, 1.0, 1.0, 2.0, 100, &mut rng).is_err());
}

#[test]
fn guggenberger_design_coordinates() {
    let spec = DgpSpec::guggenberger(1000, 10);
    let gram = Matrix2::new(1e4, 95.0, 95.0, 1.0);
    let (l1, l2, _) = kleibergen_coordinates(&spec.omega_matrix(), &gram);
    assert!((l1 - 1.06).abs() < 0.01, "{l1}");
    assert!((l2 / 122_500.0 - 1.0).abs() < 0.01, "{l2}");
}

#[test]
fn conditional_covariance() {
    let om = Matrix3::new(1.0, 0.5, 0.2, 0.5, 2.0, 0.1, 0.2, 0.1, 1.5);
    let c = omega_vv_eps(&om);
    assert!((c[(0, 0)] - 1.75).abs() < 1e-15);
    assert!((c[(0, 1)] - 0.0).abs() < 1e-15);
    assert!((c[(1, 1)] - 1.46).abs() < 1e-15);
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = DgpSpec::guggenberger(100, 5);
    s.pi_inner = 1000.0;
    assert!(s.validate().is_err());
    let mut s = DgpSpec::guggenberger(100, 5);
    s.omega[0][1] = 0.3;
    assert!(s.validate().is_err());
    let s = DgpSpec::kleibergen(100, 5, -1.0, 1.0, 0.0);
    assert!(s.validate().is_err());
    let s = DgpSpec::guggenberger(6, 5);
    assert!(empirical_size_many(&[TestKind::Ar], &s, 10, 0.05, 0).is_err());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let spec = DgpSpec::guggenberger(200, 5);
    let tests = [TestKind::Ar, TestKind::Lm, TestKind::Clr];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| empirical_size_many(&tests, &spec, 200, 0.05, 42).unwrap())
    };
    let one = run(1);
    let four = run(4);
    for (a, b) in one.iter().zip(&four) {
        assert_eq!(a.rejections, b.rejections);
        assert_eq!(a.failed, b.failed);
    }
    let p1 = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| null_pvalues(&tests, &spec, 50, 3).unwrap());
    assert_eq!(p1, null_pvalues(&tests, &spec, 50, 3).unwrap());
}

#[test]
fn replication_streams_are_distinct_and_reproducible() {
    let spec = DgpSpec::kleibergen(100, 4, 5.0, 50.0, 0.5);
    assert_eq!(spec.family, Family::Kleibergen);
    let a = draw(&spec, &mut rep_rng(1, 0)).unwrap();
    let b = draw(&spec, &mut rep_rng(1, 0)).unwrap();
    let c = draw(&spec, &mut rep_rng(1, 1)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.y, c.y);
}

#[test]
fn power_at_true_value_equals_size() {
    let spec = DgpSpec::guggenberger_power(200, 5);
    let tests = [TestKind::Ar, TestKind::Lr];
    let size = empirical_size_many(&tests, &spec, 300, 0.05, 8).unwrap();
    let power = power_curves(&tests, &spec, &[-1.0, spec.beta_true, 1.0], 300, 0.05, 8).unwrap();
    for (i, s) in size.iter().enumerate() {
        let p = &power[i * 3 + 1];
        assert_eq!(p.beta, spec.beta_true);
        assert_eq!(p.rate, s.rate);
        assert!(power[i * 3].rate > s.rate && power[i * 3 + 2].rate > s.rate);
    }
}

#[test]
fn ar_size_is_nominal_with_strong_nuisance_and_conservative_otherwise() {
    let strong = DgpSpec {
        pi_w_norm: 100.0,
        pi_inner: 0.0,
        ..DgpSpec::guggenberger(500, 5)
    };
    let r = &empirical_size_many(&[TestKind::Ar], &strong, 4000, 0.05, 123).unwrap()[0];
    assert_eq!(r.failed, 0);
    assert!((r.rate - 0.05).abs() < 4.0 * r.mc_stderr, "{}", r.rate);
    let weak = DgpSpec::guggenberger(500, 5);
    let r = &empirical_size_many(&[TestKind::Ar], &weak, 4000, 0.05, 123).unwrap()[0];
    assert!(r.rate < 0.05, "{}", r.rate);
}
