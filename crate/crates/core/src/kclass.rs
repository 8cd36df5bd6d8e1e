//! k-class estimation: OLS, TSLS, LIML, Fuller and arbitrary kappa.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::IvDataset;
use crate::error::{Error, Result};
use crate::linalg::{pinv_sym, symmetrize};
use crate::moments::CrossProducts;

/// A k-class fit of `y` on `S = [X W]`.
#[derive(Debug, Clone, Serialize)]
pub struct KClassFit {
    pub kappa: f64,
    /// Coefficients on `[X W]`.
    pub coef: Vec<f64>,
    /// `||y - S coef||^2 / (n - m)`.
    pub sigma2_wald: f64,
    /// `||M_Z (y - S coef)||^2 / (n - k)`.
    pub sigma2_mz: f64,
    /// `(S'(I - kappa M_Z) S)^{-1}`, row-major m x m.
    #[serde(skip)]
    pub cov_scale: DMatrix<f64>,
    /// False when kappa sits on the convexity boundary and the minimizer
    /// may not be attained (a pseudo-inverse solution is returned).
    pub attained: bool,
}

impl KClassFit {
    pub fn coef_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.coef.clone())
    }

    /// Square roots of the diagonal of `sigma2_wald * cov_scale`.
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.coef.len())
            .map(|i| (self.sigma2_wald * self.cov_scale[(i, i)]).max(0.0).sqrt())
            .collect()
    }
}

/// Which k-class member to fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Estimator {
    Ols,
    Tsls,
    Liml,
    Fuller(f64),
    Kappa(f64),
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Estimator::Ols => write!(f, "ols"),
            Estimator::Tsls => write!(f, "tsls"),
            Estimator::Liml => write!(f, "liml"),
            Estimator::Fuller(a) => write!(f, "fuller({a})"),
            Estimator::Kappa(k) => write!(f, "kappa({k})"),
        }
    }
}

impl CrossProducts {
    /// `1 + lambda_min` of the `[y X W]` generalized eigenproblem.
    pub fn kappa_liml(&self) -> Result<f64> {
        let (vals, _) = self.eigen(&self.t_all(), "M_Z [y X W]")?;
        Ok(1.0 + vals[0].max(0.0))
    }

    /// `1 + lambda_min((S'M_Z S)^{-1} S'P_Z S)`; k-class objectives are strictly
    /// convex only below this value.
    pub fn kappa_convex_bound(&self) -> Result<f64> {
        let (vals, _) = self.eigen(&self.sel_s(), "M_Z [X W]")?;
        Ok(1.0 + vals[0].max(0.0))
    }

    /// `(S'(I - kappa M_Z)S, S'(I - kappa M_Z)y)`.
    pub(crate) fn kclass_system(&self, kappa: f64) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.m();
        let t = self.t_all();
        let (p, mm) = self.grams(&t);
        let a = symmetrize(&(&p + &mm * (1.0 - kappa)));
        let h = a.view((1, 1), (m, m)).into_owned();
        let g = a.view((1, 0), (m, 1)).column(0).into_owned();
        (h, g)
    }

    pub fn kclass(&self, kappa: f64) -> Result<KClassFit> {
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(Error::Domain(format!("kappa must be finite and >= 0, got {kappa}")));
        }
        if kappa > 1.0 {
            let bound = self.kappa_convex_bound()?;
            if kappa >= bound {
                return Err(Error::NotConvex {
                    kappa,
                    threshold: bound,
                });
            }
        }
        self.kclass_unchecked(kappa, true)
    }

    pub(crate) fn kclass_unchecked(&self, kappa: f64, attained: bool) -> Result<KClassFit> {
        let (h, g) = self.kclass_system(kappa);
        let (cov_scale, attained) = match h.clone().cholesky() {
            Some(ch) => (symmetrize(&ch.inverse()), attained),
            None => (pinv_sym(&h), false),
        };
        let coef = &cov_scale * g;
        Ok(self.fill_fit(kappa, coef, cov_scale, attained))
    }

    fn fill_fit(
        &self,
        kappa: f64,
        coef: DVector<f64>,
        cov_scale: DMatrix<f64>,
        attained: bool,
    ) -> KClassFit {
        let e = self.resid_vec_full(&coef);
        let (pe, me) = self.quad(&e);
        let m = self.m() as f64;
        KClassFit {
            kappa,
            coef: coef.iter().copied().collect(),
            sigma2_wald: (pe + me) / (self.n() as f64 - m),
            sigma2_mz: me / self.dof(),
            cov_scale,
            attained,
        }
    }

    pub fn liml(&self) -> Result<KClassFit> {
        let kappa = self.kappa_liml()?;
        let bound = self.kappa_convex_bound()?;
        if kappa >= bound * (1.0 - 1e-12) {
            return self.kclass_unchecked(kappa, false);
        }
        self.kclass_unchecked(kappa, true)
    }

    pub fn fuller(&self, a: f64) -> Result<KClassFit> {
        if !(a >= 0.0) {
            return Err(Error::Domain(format!("Fuller constant must be >= 0, got {a}")));
        }
        if a == 0.0 {
            return self.liml();
        }
        self.kclass((self.kappa_liml()? - a / self.dof()).max(0.0))
    }

    pub fn fit(&self, est: Estimator) -> Result<KClassFit> {
        match est {
            Estimator::Ols => self.kclass(0.0),
            Estimator::Tsls => self.kclass(1.0),
            Estimator::Liml => self.liml(),
            Estimator::Fuller(a) => self.fuller(a),
            Estimator::Kappa(k) => self.kclass(k),
        }
    }
}

/// LIML kappa of `y` on `[X W]`.
pub fn kappa_liml(data: &IvDataset) -> Result<f64> {
    CrossProducts::new(data)?.kappa_liml()
}

/// k-class fit at an explicit kappa.
pub fn kclass(data: &IvDataset, kappa: f64) -> Result<KClassFit> {
    CrossProducts::new(data)?.kclass(kappa)
}

pub fn fuller(data: &IvDataset, a: f64) -> Result<KClassFit> {
    CrossProducts::new(data)?.fuller(a)
}

pub fn fit(data: &IvDataset, est: Estimator) -> Result<KClassFit> {
    CrossProducts::new(data)?.fit(est)
}
