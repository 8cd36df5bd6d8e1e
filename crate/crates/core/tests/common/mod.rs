// Dense n x n reference computations. Slow and naive on purpose: they form
// projection matrices explicitly and use general (non-symmetric) eigen
// solvers, so they share no code path with the library.
#![allow(dead_code)]

use ivrobust::IvDataset;
use nalgebra::{DMatrix, DVector};

pub fn pz(z: &DMatrix<f64>) -> DMatrix<f64> {
    let ztz = z.transpose() * z;
    z * ztz.try_inverse().expect("Z'Z invertible") * z.transpose()
}

pub fn mz(z: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::identity(z.nrows(), z.nrows()) - pz(z)
}

pub fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, cols);
    let mut j = 0;
    for b in blocks {
        out.columns_mut(j, b.ncols()).copy_from(b);
        j += b.ncols();
    }
    out
}

pub fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Real eigenvalues of `M^{-1} P`, ascending.
pub fn gen_eigenvalues(p: &DMatrix<f64>, m: &DMatrix<f64>) -> Vec<f64> {
    let a = m.clone().try_inverse().expect("M invertible") * p;
    let ev = a
        .clone()
        .schur()
        .eigenvalues()
        .expect("real spectrum");
    let mut v: Vec<f64> = ev.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

pub fn gen_min(t: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    gen_eigenvalues(&(t.transpose() * pz(z) * t), &(t.transpose() * mz(z) * t))[0]
}

pub fn dof(d: &IvDataset) -> f64 {
    (d.n() - d.k()) as f64
}

pub fn s(d: &IvDataset) -> DMatrix<f64> {
    hcat(&[&d.x, &d.w])
}

pub fn kappa_liml(d: &IvDataset) -> f64 {
    1.0 + gen_min(&hcat(&[&col(&d.y), &d.x, &d.w]), &d.z)
}

pub fn kclass(d: &IvDataset, kappa: f64) -> DVector<f64> {
    let s = s(d);
    let a = DMatrix::identity(d.n(), d.n()) - mz(&d.z) * kappa;
    let h = s.transpose() * &a * &s;
    h.try_inverse().unwrap() * s.transpose() * a * &d.y
}

/// Statistic `(n - k) min_gamma e'P e / e'M e` with `e = y - X b - W gamma`.
pub fn ar_stat(d: &IvDataset, beta0: &[f64]) -> f64 {
    let e = &d.y - &d.x * DVector::from_column_slice(beta0);
    dof(d) * gen_min(&hcat(&[&col(&e), &d.w]), &d.z)
}

/// `(n - k) e'P_{P_Z S~} e / e'M_Z e` for a fixed nuisance value.
pub fn lm_at(d: &IvDataset, beta0: &[f64], gamma: &[f64]) -> f64 {
    let e = &d.y - &d.x * DVector::from_column_slice(beta0) - &d.w * DVector::from_column_slice(gamma);
    let m = mz(&d.z);
    let p = pz(&d.z);
    let s = s(d);
    let eme = e.dot(&(&m * &e));
    let st = &s - col(&e) * ((e.transpose() * &m * &s) / eme);
    let ps = &p * st;
    let proj = &ps * (ps.transpose() * &ps).try_inverse().unwrap() * ps.transpose();
    dof(d) * e.dot(&(proj * &e)) / eme
}

pub fn sigma2_wald(d: &IvDataset, coef: &DVector<f64>) -> f64 {
    let r = &d.y - s(d) * coef;
    r.norm_squared() / (d.n() - d.m()) as f64
}

/// Wald statistic for the first `mx` coefficients at `kappa`.
pub fn wald_stat(d: &IvDataset, kappa: f64, beta0: &[f64]) -> f64 {
    let s = s(d);
    let a = DMatrix::identity(d.n(), d.n()) - mz(&d.z) * kappa;
    let hinv = (s.transpose() * &a * &s).try_inverse().unwrap();
    let coef = &hinv * s.transpose() * a * &d.y;
    let mx = d.mx();
    let diff = DVector::from_column_slice(beta0) - coef.rows(0, mx);
    let cov = hinv.view((0, 0), (mx, mx)).into_owned();
    diff.dot(&(cov.try_inverse().unwrap() * &diff)) / sigma2_wald(d, &coef)
}
