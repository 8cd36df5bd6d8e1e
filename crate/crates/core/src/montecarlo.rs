//! Simulation designs and empirical size / power estimation.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::IvDataset;
use crate::error::{Error, Result};
use crate::inference::TestKind;
use crate::moments::CrossProducts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Guggenberger,
    Kleibergen,
}

/// Data-generating process with one endogenous covariate of interest and one
/// endogenous nuisance covariate.
#[derive(Debug, Clone, Serialize)]
pub struct DgpSpec {
    pub family: Family,
    pub n: usize,
    pub k: usize,
    /// Covariance of `(eps, V_X, V_W)`.
    pub omega: [[f64; 3]; 3],
    /// `sqrt(n) ||Pi_X||`.
    pub pi_x_norm: f64,
    /// `sqrt(n) ||Pi_W||`.
    pub pi_w_norm: f64,
    /// `n <Pi_X, Pi_W>`.
    pub pi_inner: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub beta_true: f64,
    pub gamma_true: f64,
}

pub const GUGGENBERGER_OMEGA: [[f64; 3]; 3] = [[1.0, 0.0, 0.95], [0.0, 1.0, 0.3], [0.95, 0.3, 1.0]];

impl DgpSpec {
    /// Weakly identified nuisance design with strong `X`.
    pub fn guggenberger(n: usize, k: usize) -> Self {
        Self {
            family: Family::Guggenberger,
            n,
            k,
            omega: GUGGENBERGER_OMEGA,
            pi_x_norm: 100.0,
            pi_w_norm: 1.0,
            pi_inner: 95.0,
            lambda1: 0.0,
            lambda2: 0.0,
            tau: 0.0,
            beta_true: 0.0,
            gamma_true: 0.0,
        }
    }

    /// Same design with a ten times stronger nuisance first stage.
    pub fn guggenberger_power(n: usize, k: usize) -> Self {
        Self {
            pi_w_norm: 10.0,
            pi_inner: 950.0,
            ..Self::guggenberger(n, k)
        }
    }

    pub fn kleibergen(n: usize, k: usize, lambda1: f64, lambda2: f64, tau: f64) -> Self {
        Self {
            family: Family::Kleibergen,
            lambda1,
            lambda2,
            tau,
            ..Self::guggenberger(n, k)
        }
    }

    pub fn omega_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.omega[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        let om = self.omega_matrix();
        if (om - om.transpose()).amax() > 1e-12 || om.cholesky().is_none() {
            return Err(Error::Config("omega must be symmetric positive definite".into()));
        }
        if self.n <= self.k + 2 {
            return Err(Error::Config("n must exceed k + 2".into()));
        }
        match self.family {
            Family::Guggenberger => {
                if self.pi_inner.abs() > self.pi_x_norm * self.pi_w_norm * (1.0 + 1e-12) {
                    return Err(Error::Config(
                        "pi_inner violates the Cauchy-Schwarz bound".into(),
                    ));
                }
            }
            Family::Kleibergen => {
                if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
                    return Err(Error::Config("lambda1 and lambda2 must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// `(pi_x_norm, pi_w_norm, pi_inner)` implied by the family parameters.
    pub fn pi_targets(&self) -> Result<(f64, f64, f64)> {
        match self.family {
            Family::Guggenberger => Ok((self.pi_x_norm, self.pi_w_norm, self.pi_inner)),
            Family::Kleibergen => {
                let g = kleibergen_target(&self.omega_matrix(), self.lambda1, self.lambda2, self.tau)?;
                Ok((g[(0, 0)].max(0.0).sqrt(), g[(1, 1)].max(0.0).sqrt(), g[(0, 1)]))
            }
        }
    }
}

fn sym_sqrt2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let e = m.symmetric_eigen();
    let d = Matrix2::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    e.eigenvectors * d * e.eigenvectors.transpose()
}

/// `Cov(V) - Cov(V, eps) Var(eps)^{-1} Cov(eps, V)`.
pub fn omega_vv_eps(omega: &Matrix3<f64>) -> Matrix2<f64> {
    let cov_v = omega.fixed_view::<2, 2>(1, 1).into_owned();
    let c = omega.fixed_view::<2, 1>(1, 0).into_owned();
    cov_v - c * c.transpose() / omega[(0, 0)]
}

fn rotation(tau: f64) -> Matrix2<f64> {
    Matrix2::new(tau.cos(), -tau.sin(), tau.sin(), tau.cos())
}

/// Target `n Pi'Pi = O^{1/2} R(tau) diag(l1, l2) R(tau)' O^{1/2}` with
/// `O = Omega_{VV.eps}`.
pub fn kleibergen_target(
    omega: &Matrix3<f64>,
    lambda1: f64,
    lambda2: f64,
    tau: f64,
) -> Result<Matrix2<f64>> {
    if lambda1 < 0.0 || lambda2 < 0.0 {
        return Err(Error::Config("lambda1 and lambda2 must be >= 0".into()));
    }
    let half = sym_sqrt2(&omega_vv_eps(omega));
    let r = rotation(tau);
    let l = Matrix2::new(lambda1, 0.0, 0.0, lambda2);
    let g = half * r * l * r.transpose() * half;
    let g = (g + g.transpose()) * 0.5;
    let e = g.symmetric_eigen();
    if e.eigenvalues.min() < -1e-10 * e.eigenvalues.amax().max(1.0) {
        return Err(Error::Config("implied Gram matrix is not positive semidefinite".into()));
    }
    Ok(g)
}

/// Inverse map from a concentration Gram matrix to `(lambda1, lambda2, tau)`.
pub fn kleibergen_coordinates(omega: &Matrix3<f64>, gram: &Matrix2<f64>) -> (f64, f64, f64) {
    let half = sym_sqrt2(&omega_vv_eps(omega));
    let inv = half.try_inverse().expect("Omega_VV.eps positive definite");
    let m = inv * gram * inv;
    let e = ((m + m.transpose()) * 0.5).symmetric_eigen();
    let (i1, i2) = if e.eigenvalues[0] <= e.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let v = e.eigenvectors.column(i1);
    let mut tau = v[1].atan2(v[0]);
    if tau < 0.0 {
        tau += std::f64::consts::PI;
    }
    if tau >= std::f64::consts::PI {
        tau -= std::f64::consts::PI;
    }
    (e.eigenvalues[i1], e.eigenvalues[i2], tau)
}

fn normal_vec<R: Rng>(rng: &mut R, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.sample(StandardNormal))
}

/// First-stage coefficients with prescribed `sqrt(n)`-scaled norms and inner product.
pub fn sample_pi<R: Rng>(
    k: usize,
    pi_x_norm: f64,
    pi_w_norm: f64,
    pi_inner: f64,
    n: usize,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if k < 2 {
        return Err(Error::Domain("need k >= 2 to orthogonalize first stages".into()));
    }
    let mut p1 = normal_vec(rng, k);
    let mut p2 = normal_vec(rng, k);
    p1.add_scalar_mut(-p1.mean());
    p2.add_scalar_mut(-p2.mean());
    let sn = (n as f64).sqrt();
    let ux = &p1 / p1.norm();
    let rho = if pi_x_norm > 0.0 && pi_w_norm > 0.0 {
        pi_inner / (pi_x_norm * pi_w_norm)
    } else {
        0.0
    };
    if rho.abs() > 1.0 + 1e-12 {
        return Err(Error::Domain("pi_inner violates the Cauchy-Schwarz bound".into()));
    }
    let rho = rho.clamp(-1.0, 1.0);
    let orth = &p2 - &ux * ux.dot(&p2);
    let on = orth.norm();
    let rest = (1.0 - rho * rho).max(0.0).sqrt();
    if rest > 0.0 && !(on > 1e-12 * p2.norm()) {
        return Err(Error::Domain("degenerate orthogonalization of first stages".into()));
    }
    let uw = if rest > 0.0 {
        &ux * rho + orth * (rest / on)
    } else {
        &ux * rho
    };
    Ok((ux * (pi_x_norm / sn), uw * (pi_w_norm / sn)))
}

fn draw_with_pi<R: Rng>(
    spec: &DgpSpec,
    pi_x: &DVector<f64>,
    pi_w: &DVector<f64>,
    rng: &mut R,
) -> Result<IvDataset> {
    let (n, k) = (spec.n, spec.k);
    let l = spec
        .omega_matrix()
        .cholesky()
        .ok_or_else(|| Error::Config("omega must be positive definite".into()))?
        .l();
    let z = DMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal));
    let mut eps = DVector::zeros(n);
    let mut vx = DVector::zeros(n);
    let mut vw = DVector::zeros(n);
    for i in 0..n {
        let e = nalgebra::Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let u = l * e;
        eps[i] = u[0];
        vx[i] = u[1];
        vw[i] = u[2];
    }
    let x = &z * pi_x + vx;
    let w = &z * pi_w + vw;
    let y = &x * spec.beta_true + &w * spec.gamma_true + eps;
    IvDataset::new(
        y,
        DMatrix::from_column_slice(n, 1, x.as_slice()),
        DMatrix::from_column_slice(n, 1, w.as_slice()),
        z,
    )
}

pub fn draw_guggenberger<R: Rng>(spec: &DgpSpec, rng: &mut R) -> Result<IvDataset> {
    if spec.family != Family::Guggenberger {
        return Err(Error::Config("expected the guggenberger family".into()));
    }
    draw(spec, rng)
}

pub fn draw_kleibergen<R: Rng>(spec: &DgpSpec, rng: &mut R) -> Result<IvDataset> {
    if spec.family != Family::Kleibergen {
        return Err(Error::Config("expected the kleibergen family".into()));
    }
    draw(spec, rng)
}

/// Draws one dataset from either family.
pub fn draw<R: Rng>(spec: &DgpSpec, rng: &mut R) -> Result<IvDataset> {
    let (xn, wn, inner) = spec.pi_targets()?;
    let (px, pw) = sample_pi(spec.k, xn, wn, inner, spec.n, rng)?;
    draw_with_pi(spec, &px, &pw, rng)
}

/// Independent stream for replication `rep`.
pub fn rep_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(rep);
    r
}

#[derive(Debug, Clone, Serialize)]
pub struct RateEstimate {
    pub test: String,
    pub rate: f64,
    pub mc_stderr: f64,
    pub rejections: usize,
    pub failed: usize,
    pub reps: usize,
}

impl RateEstimate {
    fn from_counts(test: TestKind, rejections: usize, failed: usize, reps: usize) -> Self {
        let valid = reps - failed;
        let rate = if valid > 0 {
            rejections as f64 / valid as f64
        } else {
            f64::NAN
        };
        Self {
            test: test.to_string(),
            rate,
            mc_stderr: (rate * (1.0 - rate) / reps as f64).sqrt(),
            rejections,
            failed,
            reps,
        }
    }
}

/// Rejection outcome per (test, beta) for one replication; `None` on failure.
fn one_rep(
    spec: &DgpSpec,
    tests: &[TestKind],
    betas: &[f64],
    alpha: f64,
    seed: u64,
    rep: u64,
) -> Vec<Option<bool>> {
    let cells = tests.len() * betas.len();
    let mut rng = rep_rng(seed, rep);
    let cp = match draw(spec, &mut rng).and_then(|d| CrossProducts::new(&d)) {
        Ok(cp) => cp,
        Err(_) => return vec![None; cells],
    };
    let mut out = Vec::with_capacity(cells);
    for &t in tests {
        for &b in betas {
            let r = cp.run(t, &DVector::from_element(1, b));
            out.push(r.ok().map(|r| r.p_value < alpha));
        }
    }
    out
}

fn simulate(
    spec: &DgpSpec,
    tests: &[TestKind],
    betas: &[f64],
    reps: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    spec.validate()?;
    if reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let cells = tests.len() * betas.len();
    let counts = (0..reps as u64)
        .into_par_iter()
        .map(|rep| one_rep(spec, tests, betas, alpha, seed, rep))
        .fold(
            || vec![(0usize, 0usize); cells],
            |mut acc, row| {
                for (a, r) in acc.iter_mut().zip(row) {
                    match r {
                        Some(true) => a.0 += 1,
                        Some(false) => {}
                        None => a.1 += 1,
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![(0usize, 0usize); cells],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    x.0 += y.0;
                    x.1 += y.1;
                }
                a
            },
        );
    Ok(counts)
}

/// Rejection rates at `beta_true` for several tests on common draws.
pub fn empirical_size_many(
    tests: &[TestKind],
    spec: &DgpSpec,
    reps: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<RateEstimate>> {
    let counts = simulate(spec, tests, &[spec.beta_true], reps, alpha, seed)?;
    Ok(tests
        .iter()
        .zip(counts)
        .map(|(&t, (rej, fail))| RateEstimate::from_counts(t, rej, fail, reps))
        .collect())
}

pub fn empirical_size(
    test: TestKind,
    spec: &DgpSpec,
    reps: usize,
    alpha: f64,
    seed: u64,
) -> Result<RateEstimate> {
    Ok(empirical_size_many(&[test], spec, reps, alpha, seed)?.remove(0))
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerPoint {
    pub test: String,
    pub beta: f64,
    pub rate: f64,
    pub stderr: f64,
    pub failed: usize,
}

/// Rejection rates of `H0: beta = b` for each grid value `b`, data drawn at `beta_true`.
pub fn power_curves(
    tests: &[TestKind],
    spec: &DgpSpec,
    beta_grid: &[f64],
    reps: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<PowerPoint>> {
    let counts = simulate(spec, tests, beta_grid, reps, alpha, seed)?;
    let mut out = Vec::with_capacity(counts.len());
    for (ti, &t) in tests.iter().enumerate() {
        for (bi, &b) in beta_grid.iter().enumerate() {
            let (rej, fail) = counts[ti * beta_grid.len() + bi];
            let r = RateEstimate::from_counts(t, rej, fail, reps);
            out.push(PowerPoint {
                test: r.test,
                beta: b,
                rate: r.rate,
                stderr: r.mc_stderr,
                failed: fail,
            });
        }
    }
    Ok(out)
}

pub fn power_curve(
    test: TestKind,
    spec: &DgpSpec,
    beta_grid: &[f64],
    reps: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<PowerPoint>> {
    power_curves(&[test], spec, beta_grid, reps, alpha, seed)
}

/// P-values at `beta_true` for each replication (rows) and test (columns).
pub fn null_pvalues(
    tests: &[TestKind],
    spec: &DgpSpec,
    reps: usize,
    seed: u64,
) -> Result<Vec<Vec<Option<f64>>>> {
    spec.validate()?;
    Ok((0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rep_rng(seed, rep);
            match draw(spec, &mut rng).and_then(|d| CrossProducts::new(&d)) {
                Ok(cp) => tests
                    .iter()
                    .map(|&t| {
                        cp.run(t, &DVector::from_element(1, spec.beta_true))
                            .ok()
                            .map(|r| r.p_value)
                    })
                    .collect(),
                Err(_) => vec![None; tests.len()],
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct HeatmapCell {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub test: String,
    pub rate: f64,
    pub stderr: f64,
    pub failed: usize,
}

/// Sizes over a `(lambda1, lambda2, tau)` grid of the kleibergen family.
pub fn size_heatmap(
    tests: &[TestKind],
    base: &DgpSpec,
    lambda1: &[f64],
    lambda2: &[f64],
    tau: &[f64],
    reps: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<HeatmapCell>> {
    let mut out = Vec::new();
    for &l1 in lambda1 {
        for &l2 in lambda2 {
            for &t in tau {
                let spec = DgpSpec {
                    family: Family::Kleibergen,
                    lambda1: l1,
                    lambda2: l2,
                    tau: t,
                    ..base.clone()
                };
                for r in empirical_size_many(tests, &spec, reps, alpha, seed)? {
                    out.push(HeatmapCell {
                        lambda1: l1,
                        lambda2: l2,
                        tau: t,
                        test: r.test,
                        rate: r.rate,
                        stderr: r.mc_stderr,
                        failed: r.failed,
                    });
                }
            }
        }
    }
    Ok(out)
}
