//! Random IV instances for tests, benchmarks and examples.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::IvDataset;

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Random instance with first-stage coefficients scaled by `strength`.
///
/// Structural errors are correlated with the first-stage errors (coefficient
/// 0.5 on each) so that OLS is biased.
pub fn random_dataset_with(
    n: usize,
    k: usize,
    mx: usize,
    mw: usize,
    strength: f64,
    seed: u64,
) -> IvDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = mx + mw;
    let z = normal_matrix(&mut rng, n, k);
    let pi = normal_matrix(&mut rng, k, m) * strength;
    let v = normal_matrix(&mut rng, n, m);
    let s = &z * &pi + &v;
    let e0: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let mut eps = e0;
    for j in 0..m {
        eps += v.column(j) * 0.5;
    }
    let coef = DVector::from_fn(m, |i, _| 1.0 - 0.5 * i as f64);
    let y = &s * coef + eps;
    let x = s.columns(0, mx).into_owned();
    let w = s.columns(mx, mw).into_owned();
    IvDataset::new(y, x, w, z).expect("consistent shapes")
}

/// Random instance with unit-scale first stage.
pub fn random_dataset(n: usize, k: usize, mx: usize, mw: usize, seed: u64) -> IvDataset {
    random_dataset_with(n, k, mx, mw, 1.0, seed)
}
