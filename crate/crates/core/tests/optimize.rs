use ivrobust::montecarlo::{draw, rep_rng};
use ivrobust::optimize::minimize_multistart;
use ivrobust::{CrossProducts, DgpSpec, MinimizeOptions};
use nalgebra::DVector;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

#[test]
fn rosenbrock() {
    let f = |x: &DVector<f64>| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
    let r = minimize_multistart(f, &[v(&[-1.2, 1.0])], &MinimizeOptions::default()).unwrap();
    assert!((r.argmin[0] - 1.0).abs() < 1e-4 && (r.argmin[1] - 1.0).abs() < 1e-4, "{:?}", r.argmin);
    assert!(r.any_converged());
}

#[test]
fn best_start_wins() {
    // double well with the deeper minimum at +2
    let f = |x: &DVector<f64>| (x[0] * x[0] - 4.0).powi(2) - x[0];
    let r = minimize_multistart(f, &[v(&[-3.0]), v(&[3.0])], &MinimizeOptions::default()).unwrap();
    assert!(r.argmin[0] > 0.0);
    assert_eq!(r.starts.len(), 2);
    let lowest = r.starts.iter().map(|s| s.value).fold(f64::INFINITY, f64::min);
    assert_eq!(r.value, lowest);
    assert!((r.argmin[0] - 2.0).abs() < 0.1);
}

#[test]
fn non_finite_starts_are_skipped() {
    let f = |x: &DVector<f64>| if x[0] < 0.0 { f64::NAN } else { (x[0] - 1.0).powi(2) };
    let r = minimize_multistart(f, &[v(&[-1.0]), v(&[4.0])], &MinimizeOptions::default()).unwrap();
    assert!(r.starts[0].skipped);
    assert!((r.argmin[0] - 1.0).abs() < 1e-5);
    assert!(minimize_multistart(f, &[v(&[-1.0])], &MinimizeOptions::default()).is_err());
}

#[test]
fn lm_matches_dense_grid_scan_on_simulated_design() {
    let spec = DgpSpec::guggenberger(1000, 5);
    let opts = MinimizeOptions::default();
    for rep in 0..5u64 {
        let d = draw(&spec, &mut rep_rng(17, rep)).unwrap();
        let cp = CrossProducts::new(&d).unwrap();
        for b in [-0.3, 0.0, 0.2, 1.0] {
            let beta = v(&[b]);
            let lm = cp.lm(&beta, &opts).unwrap();
            let g_star = lm.diagnostic_vector("gamma_star").unwrap()[0];
            let g_liml = cp.inner_liml(&beta).unwrap().gamma[0];
            let center = 0.5 * (g_star + g_liml);
            let half = 10.0 + (g_star - g_liml).abs();
            let scan = (0..10_000)
                .map(|i| center - half + 2.0 * half * i as f64 / 9999.0)
                .map(|g| cp.lm_objective(&beta, &v(&[g])))
                .fold(f64::INFINITY, f64::min);
            assert!(lm.statistic <= scan + 1e-4, "rep {rep} b {b}: {} vs {scan}", lm.statistic);
            let plug = cp.lm_plugin(&beta).unwrap().statistic;
            assert!(lm.statistic <= plug + 1e-10);
        }
    }
}
