//! Small dense linear-algebra helpers built on nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value threshold below which directions are treated as null.
pub const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of the column span of `a` and its numerical rank.
pub fn orthonormal_basis(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = a.nrows();
    if a.ncols() == 0 || n == 0 {
        return (DMatrix::zeros(n, 0), 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return (DMatrix::zeros(n, 0), 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > RANK_TOL * smax)
        .collect();
    let basis = DMatrix::from_fn(n, keep.len(), |i, j| u[(i, keep[j])]);
    let rank = keep.len();
    (basis, rank)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in ascending order.
pub fn sym_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_fn(n, |i, _| eig.eigenvalues[idx[i]]);
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix.
pub fn pinv_sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let (vals, vecs) = sym_eigen(a);
    let amax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        if amax > 0.0 && vals[i].abs() > RANK_TOL * amax {
            let v = vecs.column(i);
            out += (v * v.transpose()) / vals[i];
        }
    }
    out
}

/// Inverse of a symmetric matrix, falling back to the pseudo-inverse when the
/// Cholesky or LU route fails.
pub fn inv_sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    let s = symmetrize(a);
    if let Some(ch) = s.clone().cholesky() {
        return symmetrize(&ch.inverse());
    }
    if let Some(inv) = s.clone().try_inverse() {
        if inv.iter().all(|v| v.is_finite()) {
            return symmetrize(&inv);
        }
    }
    pinv_sym(&s)
}

/// Solves the symmetric-definite generalized eigenproblem `p v = mu m v`.
///
/// Returns eigenvalues in ascending order and `m`-orthonormal eigenvectors.
/// `m` must be positive definite; `what` names the matrix in the error.
pub fn gen_eigen(
    p: &DMatrix<f64>,
    m: &DMatrix<f64>,
    what: &str,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let ms = symmetrize(m);
    let ps = symmetrize(p);
    let scale = ms.diagonal().max();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::RankDeficient(what.to_string()));
    }
    // whitening transform W with W' m W = I
    let whiten = match ms.clone().cholesky() {
        Some(ch) => {
            let l = ch.l();
            let linv = l
                .solve_lower_triangular(&DMatrix::identity(n, n))
                .ok_or_else(|| Error::RankDeficient(what.to_string()))?;
            linv.transpose()
        }
        None => {
            let (vals, vecs) = sym_eigen(&ms);
            let vmax = vals.max();
            if vals.min() <= RANK_TOL * vmax {
                return Err(Error::RankDeficient(what.to_string()));
            }
            let d = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()));
            &vecs * d * vecs.transpose()
        }
    };
    // reject near-singular m even when Cholesky succeeds; the scale is the
    // total sum of squares so an exact in-sample fit is caught for one column too
    let (mvals, _) = sym_eigen(&ms);
    let (tvals, _) = sym_eigen(&(&ms + &ps));
    if mvals.min() <= RANK_TOL * RANK_TOL * mvals.max().max(tvals.max()) {
        return Err(Error::RankDeficient(what.to_string()));
    }
    let c = whiten.transpose() * &ps * &whiten;
    let (vals, vecs) = sym_eigen(&c);
    Ok((vals, whiten * vecs))
}

/// Squared norm of the projection of `b` onto the column span of `a`.
pub fn projected_sq_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    if a.ncols() == 0 {
        return 0.0;
    }
    let (q, _) = orthonormal_basis(a);
    (q.transpose() * b).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_eigen_matches_explicit_product() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let m = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.7]);
        let (vals, vecs) = gen_eigen(&p, &m, "m").unwrap();
        for i in 0..2 {
            let v = vecs.column(i).into_owned();
            let r = &p * &v - &m * &v * vals[i];
            assert!(r.norm() < 1e-12);
        }
        let prod = m.clone().try_inverse().unwrap() * &p;
        let ev = prod.complex_eigenvalues();
        let mut re: Vec<f64> = ev.iter().map(|c| c.re).collect();
        re.sort_by(f64::total_cmp);
        assert!((re[0] - vals[0]).abs() < 1e-12);
    }

    #[test]
    fn singular_m_is_rejected() {
        let p = DMatrix::identity(2, 2);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(gen_eigen(&p, &m, "m").is_err());
    }

    #[test]
    fn basis_rank_of_duplicated_columns() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 0.0, 1.0, 2.0]);
        let (_, r) = orthonormal_basis(&a);
        assert_eq!(r, 1);
    }

    #[test]
    fn exact_fit_is_rank_deficient_even_for_one_column() {
        let p = DMatrix::from_element(1, 1, 3.0e4);
        let m = DMatrix::from_element(1, 1, 1.0e-25);
        assert!(matches!(gen_eigen(&p, &m, "t"), Err(Error::RankDeficient(_))));
        let m = DMatrix::from_element(1, 1, 1.0e-3);
        assert!(gen_eigen(&p, &m, "t").is_ok());
    }
}
