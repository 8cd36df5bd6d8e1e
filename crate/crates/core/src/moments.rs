//! Instrument-projected and annihilated cross products of `[y X W]`.
//!
//! Every statistic in the crate is a function of `Q'[y X W]` (with `Q` an
//! orthonormal basis of the instruments) and the annihilated Gram matrix, so
//! they are computed once per dataset and everything downstream is
//! small-dimensional algebra.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{hcat, IvDataset, Projection};
use crate::error::{Error, Result};
use crate::linalg::{gen_eigen, symmetrize};

#[derive(Debug, Clone)]
pub struct CrossProducts {
    n: usize,
    k: usize,
    mx: usize,
    mw: usize,
    /// `Q' [y X W]`, k x (1 + m).
    zd: DMatrix<f64>,
    /// `[y X W]' P_Z [y X W]`.
    pg: DMatrix<f64>,
    /// `[y X W]' M_Z [y X W]`.
    mg: DMatrix<f64>,
}

impl CrossProducts {
    /// Builds cross products after partialling out every exogenous block.
    pub fn new(data: &IvDataset) -> Result<Self> {
        let r = if data.is_residualized() && data.md() == 0 {
            std::borrow::Cow::Borrowed(data)
        } else {
            std::borrow::Cow::Owned(data.partial_out_all())
        };
        let d = hcat(&[
            &DMatrix::from_column_slice(r.n(), 1, r.y.as_slice()),
            &r.x,
            &r.w,
        ]);
        let proj = Projection::new(&r.z);
        Self::from_parts(&proj, &d, r.n() - r.absorbed, r.mx(), r.mw())
    }

    /// Cross products of `d = [y X W]` against the projector `proj`, with an
    /// effective sample size `n`.
    pub fn from_parts(
        proj: &Projection,
        d: &DMatrix<f64>,
        n: usize,
        mx: usize,
        mw: usize,
    ) -> Result<Self> {
        let k = proj.rank();
        if n <= k {
            return Err(Error::Domain(format!(
                "need more observations than instruments (n = {n}, k = {k})"
            )));
        }
        if k == 0 {
            return Err(Error::RankDeficient("the instrument matrix Z".into()));
        }
        let zd = proj.coords(d);
        let resid = d - proj.basis() * &zd;
        let mg = symmetrize(&(resid.transpose() * &resid));
        let pg = symmetrize(&(zd.transpose() * &zd));
        Ok(Self {
            n,
            k,
            mx,
            mw,
            zd,
            pg,
            mg,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn mx(&self) -> usize {
        self.mx
    }
    pub fn mw(&self) -> usize {
        self.mw
    }
    pub fn m(&self) -> usize {
        self.mx + self.mw
    }
    /// `n - k`.
    pub fn dof(&self) -> f64 {
        (self.n - self.k) as f64
    }
    pub fn zd(&self) -> &DMatrix<f64> {
        &self.zd
    }
    pub fn pg(&self) -> &DMatrix<f64> {
        &self.pg
    }
    pub fn mg(&self) -> &DMatrix<f64> {
        &self.mg
    }

    /// Selector for the `S = [X W]` columns.
    pub fn sel_s(&self) -> DMatrix<f64> {
        let m = self.m();
        DMatrix::from_fn(1 + m, m, |i, j| if i == j + 1 { 1.0 } else { 0.0 })
    }
    pub fn sel_x(&self) -> DMatrix<f64> {
        DMatrix::from_fn(1 + self.m(), self.mx, |i, j| if i == j + 1 { 1.0 } else { 0.0 })
    }
    pub fn sel_w(&self) -> DMatrix<f64> {
        let o = 1 + self.mx;
        DMatrix::from_fn(1 + self.m(), self.mw, |i, j| if i == j + o { 1.0 } else { 0.0 })
    }

    /// Coefficient vector mapping `[y X W]` to `y - X beta - W gamma`.
    pub fn resid_vec(&self, beta: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
        let mut e = DVector::zeros(1 + self.m());
        e[0] = 1.0;
        for i in 0..self.mx {
            e[1 + i] = -beta[i];
        }
        for j in 0..self.mw {
            e[1 + self.mx + j] = -gamma[j];
        }
        e
    }

    /// Coefficient vector mapping `[y X W]` to `y - S coef`.
    pub fn resid_vec_full(&self, coef: &DVector<f64>) -> DVector<f64> {
        let mut e = DVector::zeros(1 + self.m());
        e[0] = 1.0;
        for i in 0..self.m() {
            e[1 + i] = -coef[i];
        }
        e
    }

    /// `(T' P T, T' M T)` for a column transform `T` of `[y X W]`.
    pub fn grams(&self, t: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            symmetrize(&(t.transpose() * &self.pg * t)),
            symmetrize(&(t.transpose() * &self.mg * t)),
        )
    }

    /// `(v' P v, v' M v)` for the combination `[y X W] e`.
    pub fn quad(&self, e: &DVector<f64>) -> (f64, f64) {
        (
            e.dot(&(&self.pg * e)).max(0.0),
            e.dot(&(&self.mg * e)).max(0.0),
        )
    }

    /// Generalized eigenvalues (ascending) and vectors of `T'PT v = mu T'MT v`.
    pub fn eigen(&self, t: &DMatrix<f64>, what: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (p, m) = self.grams(t);
        gen_eigen(&p, &m, what)
    }

    /// Transform whose columns are `[y - X beta, W]`.
    pub fn t_inner(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let e = self.resid_vec(beta, &DVector::zeros(self.mw));
        let w = self.sel_w();
        let mut t = DMatrix::zeros(1 + self.m(), 1 + self.mw);
        t.set_column(0, &e);
        t.columns_mut(1, self.mw).copy_from(&w);
        t
    }

    /// Transform whose columns are `[y X W]`.
    pub fn t_all(&self) -> DMatrix<f64> {
        DMatrix::identity(1 + self.m(), 1 + self.m())
    }
}
