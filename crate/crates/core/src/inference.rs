//! Test statistics and p-values: Wald, Anderson-Rubin, LR, conditional LR,
//! Lagrange multiplier, rank test and J statistics, all for subvector
//! hypotheses `H0: beta = beta0` with `gamma` unrestricted.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::clr_cdf::{GammaCvf, GammaCvfPlusChi2};
use crate::dataset::{annih, hcat, IvDataset, Projection};
use crate::dist::chi2_sf;
use crate::error::{Error, Result};
use crate::kclass::{Estimator, KClassFit};
use crate::linalg::{gen_eigen, inv_sym, projected_sq_norm, symmetrize};
use crate::moments::CrossProducts;
use crate::optimize::{minimize_multistart, MinimizeOptions};

/// Clamp window for slightly negative conditioning statistics.
pub const S_MIN_CLAMP: f64 = -1e-8;

/// Reference distribution of a statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Chi2(u32),
    GammaCvf(GammaCvf),
    GammaCvfPlusChi2(GammaCvfPlusChi2),
}

impl Dist {
    pub fn sf(&self, x: f64) -> Result<f64> {
        match self {
            Dist::Chi2(df) => Ok(chi2_sf(x, *df as f64)),
            Dist::GammaCvf(g) => g.sf(x),
            Dist::GammaCvfPlusChi2(g) => g.sf(x),
        }
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        Ok(1.0 - self.sf(x)?)
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dist::Chi2(df) => write!(f, "chi2({df})"),
            Dist::GammaCvf(g) => write!(f, "gamma_cvf({}, {}, {})", g.q, g.p, g.lambda),
            Dist::GammaCvfPlusChi2(g) => write!(
                f,
                "gamma_cvf_plus_chi2({}, {}, {}, {})",
                g.gamma.q, g.gamma.p, g.gamma.lambda, g.md
            ),
        }
    }
}

impl Serialize for Dist {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Auxiliary output attached to a test result.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Diagnostic {
    Number(f64),
    Vector(Vec<f64>),
    Flag(bool),
    Text(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub dist: Dist,
    pub p_value: f64,
    pub diagnostics: BTreeMap<String, Diagnostic>,
}

impl TestResult {
    fn new(statistic: f64, dist: Dist) -> Result<Self> {
        let p_value = dist.sf(statistic)?.clamp(0.0, 1.0);
        Ok(Self {
            statistic,
            dist,
            p_value,
            diagnostics: BTreeMap::new(),
        })
    }

    fn with(mut self, key: &str, d: Diagnostic) -> Self {
        self.diagnostics.insert(key.to_string(), d);
        self
    }

    pub fn diagnostic_number(&self, key: &str) -> Option<f64> {
        match self.diagnostics.get(key) {
            Some(Diagnostic::Number(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn diagnostic_vector(&self, key: &str) -> Option<&[f64]> {
        match self.diagnostics.get(key) {
            Some(Diagnostic::Vector(v)) => Some(v),
            _ => None,
        }
    }
}

/// Subvector tests of `H0: beta = beta0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestKind {
    Wald(Estimator),
    Ar,
    Lm,
    /// LM statistic evaluated at the inner LIML estimate of `gamma` instead of
    /// minimizing over `gamma`; kept for size comparisons.
    LmPlugin,
    Lr,
    Clr,
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestKind::Wald(e) => write!(f, "wald_{e}"),
            TestKind::Ar => write!(f, "ar"),
            TestKind::Lm => write!(f, "lm"),
            TestKind::LmPlugin => write!(f, "lm_plugin"),
            TestKind::Lr => write!(f, "lr"),
            TestKind::Clr => write!(f, "clr"),
        }
    }
}

impl FromStr for TestKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Ok(match s.as_str() {
            "ar" => TestKind::Ar,
            "lm" => TestKind::Lm,
            "lm_plugin" | "lm_liml" => TestKind::LmPlugin,
            "lr" => TestKind::Lr,
            "clr" => TestKind::Clr,
            "wald" | "wald_tsls" => TestKind::Wald(Estimator::Tsls),
            "wald_liml" => TestKind::Wald(Estimator::Liml),
            "wald_ols" => TestKind::Wald(Estimator::Ols),
            other => {
                if let Some(rest) = other.strip_prefix("wald_fuller") {
                    let a = rest.trim_matches(|c| c == '(' || c == ')' || c == '_');
                    let a = if a.is_empty() { 1.0 } else { parse_num(a)? };
                    TestKind::Wald(Estimator::Fuller(a))
                } else if let Some(rest) = other.strip_prefix("wald_kappa") {
                    let a = rest.trim_matches(|c| c == '(' || c == ')' || c == '_');
                    TestKind::Wald(Estimator::Kappa(parse_num(a)?))
                } else {
                    return Err(Error::Config(format!("unknown test `{other}`")));
                }
            }
        })
    }
}

fn parse_num(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Config(format!("`{s}` is not a number")))
}

/// Inner LIML of `y - X beta0` on `W`.
#[derive(Debug, Clone)]
pub struct InnerLiml {
    /// Minimum over `gamma` of the instrument-projected / annihilated ratio.
    pub ratio: f64,
    pub gamma: DVector<f64>,
}

fn vec_diag(v: &DVector<f64>) -> Diagnostic {
    Diagnostic::Vector(v.iter().copied().collect())
}

impl CrossProducts {
    fn check_beta(&self, beta0: &DVector<f64>) -> Result<()> {
        if beta0.len() != self.mx() {
            return Err(Error::Dimension(format!(
                "beta0 has length {}, expected {}",
                beta0.len(),
                self.mx()
            )));
        }
        Ok(())
    }

    fn check_order(&self) -> Result<()> {
        if self.k() < self.m() {
            return Err(Error::Domain(format!(
                "order condition fails: k = {} < mx + mw = {}",
                self.k(),
                self.m()
            )));
        }
        Ok(())
    }

    /// Generalized eigenvalues of the full `[y X W]` problem.
    pub fn full_eigenvalues(&self) -> Result<DVector<f64>> {
        Ok(self.eigen(&self.t_all(), "M_Z [y X W]")?.0)
    }

    pub fn inner_liml(&self, beta0: &DVector<f64>) -> Result<InnerLiml> {
        self.check_beta(beta0)?;
        let t = self.t_inner(beta0);
        let (vals, vecs) = self.eigen(&t, "M_Z [y - X beta0, W]")?;
        let ratio = vals[0].max(0.0);
        let mw = self.mw();
        if mw == 0 {
            return Ok(InnerLiml {
                ratio,
                gamma: DVector::zeros(0),
            });
        }
        let v = vecs.column(0);
        let gamma = if v[0].abs() > 1e-10 * v.amax() {
            DVector::from_fn(mw, |i, _| -v[1 + i] / v[0])
        } else {
            // eigenvector orthogonal to the outcome: fall back to the k-class formula
            let (p, m) = self.grams(&t);
            let a = &p - &m * ratio;
            let h = a.view((1, 1), (mw, mw)).into_owned();
            let g = a.view((1, 0), (mw, 1)).column(0).into_owned();
            inv_sym(&h) * g
        };
        Ok(InnerLiml { ratio, gamma })
    }

    pub fn wald(&self, beta0: &DVector<f64>, est: Estimator) -> Result<TestResult> {
        self.check_beta(beta0)?;
        self.wald_from_fit(beta0, &self.fit(est)?)
    }

    fn wald_from_fit(&self, beta0: &DVector<f64>, fit: &KClassFit) -> Result<TestResult> {
        let mx = self.mx();
        let d = beta0 - fit.coef_vec().rows(0, mx);
        let cov_bb = fit.cov_scale.view((0, 0), (mx, mx)).into_owned();
        let stat = (d.dot(&(inv_sym(&cov_bb) * &d)) / fit.sigma2_wald).max(0.0);
        Ok(TestResult::new(stat, Dist::Chi2(mx as u32))?
            .with("kappa", Diagnostic::Number(fit.kappa))
            .with("estimate", Diagnostic::Vector(fit.coef[..mx].to_vec())))
    }

    pub fn ar(&self, beta0: &DVector<f64>) -> Result<TestResult> {
        self.check_order()?;
        let inner = self.inner_liml(beta0)?;
        let stat = self.dof() * inner.ratio;
        let df = (self.k() - self.mw()) as u32;
        Ok(TestResult::new(stat, Dist::Chi2(df))?
            .with("gamma_liml", vec_diag(&inner.gamma))
            .with("kappa", Diagnostic::Number(1.0 + inner.ratio)))
    }

    /// `(n - k) u'P_{P_Z S~} u / u'M_Z u` at `(beta0, gamma)`.
    pub fn lm_objective(&self, beta0: &DVector<f64>, gamma: &DVector<f64>) -> f64 {
        let e = self.resid_vec(beta0, gamma);
        let (_, me) = self.quad(&e);
        if !(me > 0.0) {
            return f64::NAN;
        }
        let es = self.sel_s();
        let c = (e.transpose() * self.mg() * &es) / me;
        let a = self.zd() * (&es - &e * c);
        let b = self.zd() * &e;
        self.dof() * projected_sq_norm(&a, &b) / me
    }

    pub fn lm(&self, beta0: &DVector<f64>, opts: &MinimizeOptions) -> Result<TestResult> {
        self.check_order()?;
        self.check_beta(beta0)?;
        let df = Dist::Chi2(self.mx() as u32);
        if self.mw() == 0 {
            let stat = self.lm_objective(beta0, &DVector::zeros(0));
            if !stat.is_finite() {
                return Err(Error::Numerical("LM statistic is not finite".into()));
            }
            return TestResult::new(stat, df);
        }
        let inner = self.inner_liml(beta0)?;
        let starts = [inner.gamma.clone(), DVector::zeros(self.mw())];
        let report = minimize_multistart(|g| self.lm_objective(beta0, g), &starts, opts)?;
        if !report.any_converged() {
            return Err(Error::Optimizer { best: report.value });
        }
        let stat = report.value.max(0.0);
        Ok(TestResult::new(stat, df)?
            .with("gamma_star", Diagnostic::Vector(report.argmin.clone()))
            .with("gamma_liml", vec_diag(&inner.gamma))
            .with("optimizer_tol", Diagnostic::Number(opts.tol))
            .with("optimizer_max_iter", Diagnostic::Number(opts.max_iter as f64)))
    }

    pub fn lm_plugin(&self, beta0: &DVector<f64>) -> Result<TestResult> {
        self.check_order()?;
        let inner = self.inner_liml(beta0)?;
        let stat = self.lm_objective(beta0, &inner.gamma);
        if !stat.is_finite() {
            return Err(Error::Numerical("LM statistic is not finite".into()));
        }
        Ok(TestResult::new(stat.max(0.0), Dist::Chi2(self.mx() as u32))?
            .with("gamma_liml", vec_diag(&inner.gamma)))
    }

    fn lr_parts(&self, beta0: &DVector<f64>) -> Result<(f64, InnerLiml, DVector<f64>)> {
        self.check_order()?;
        let inner = self.inner_liml(beta0)?;
        let full = self.full_eigenvalues()?;
        let stat = (self.dof() * (inner.ratio - full[0].max(0.0))).max(0.0);
        Ok((stat, inner, full))
    }

    pub fn lr(&self, beta0: &DVector<f64>) -> Result<TestResult> {
        let (stat, inner, full) = self.lr_parts(beta0)?;
        Ok(TestResult::new(stat, Dist::Chi2(self.mx() as u32))?
            .with("gamma_liml", vec_diag(&inner.gamma))
            .with("j_liml", Diagnostic::Number(self.dof() * full[0].max(0.0))))
    }

    /// Conditioning statistic of the conditional LR test.
    pub fn s_min(&self, beta0: &DVector<f64>) -> Result<f64> {
        let (_, inner, full) = self.lr_parts(beta0)?;
        self.s_min_from(beta0, &inner, &full)
    }

    fn s_min_from(&self, beta0: &DVector<f64>, inner: &InnerLiml, full: &DVector<f64>) -> Result<f64> {
        let raw = if self.mw() == 0 {
            let e = self.resid_vec(beta0, &DVector::zeros(0));
            let (_, me) = self.quad(&e);
            let ex = self.sel_x();
            let c = (e.transpose() * self.mg() * &ex) / me;
            let t = &ex - &e * c;
            let (vals, _) = self.eigen(&t, "M_Z X~(beta0)")?;
            self.dof() * vals[0]
        } else {
            self.dof() * (full[0] + full[1] - inner.ratio)
        };
        clamp_s_min(raw)
    }

    pub fn clr(&self, beta0: &DVector<f64>) -> Result<TestResult> {
        let (stat, inner, full) = self.lr_parts(beta0)?;
        let s_min = self.s_min_from(beta0, &inner, &full)?;
        let g = GammaCvf::new((self.k() - self.mw()) as u32, self.mx() as u32, s_min)?;
        let mut r = TestResult::new(stat, Dist::GammaCvf(g))?
            .with("s_min", Diagnostic::Number(s_min))
            .with("gamma_liml", vec_diag(&inner.gamma));
        if self.mw() > 0 {
            r = r.with("conjectural_calibration", Diagnostic::Flag(true));
        }
        Ok(r)
    }

    /// Anderson's test of `rank(Pi) <= m - r`.
    pub fn rank_test(&self, r: usize) -> Result<TestResult> {
        let m = self.m();
        if r == 0 || r > m {
            return Err(Error::Domain(format!("rank test needs 1 <= r <= m = {m}, got {r}")));
        }
        if self.k() < m {
            return Err(Error::Domain("rank test needs k >= m".into()));
        }
        let (vals, _) = self.eigen(&self.sel_s(), "M_Z [X W]")?;
        let stat = self.dof() * vals.rows(0, r).iter().map(|v| v.max(0.0)).sum::<f64>();
        let df = (r * (self.k() - m + r)) as u32;
        TestResult::new(stat, Dist::Chi2(df))
    }

    fn just_identified(&self) -> Result<Option<TestResult>> {
        self.check_order()?;
        if self.k() == self.m() {
            let mut r = TestResult::new(0.0, Dist::Chi2(0))?;
            r.p_value = 1.0;
            return Ok(Some(r.with("just_identified", Diagnostic::Flag(true))));
        }
        Ok(None)
    }

    /// Overidentification statistic `(n - k) r'P_Z r / r'M_Z r` at the TSLS residual.
    pub fn j_statistic(&self) -> Result<TestResult> {
        if let Some(r) = self.just_identified()? {
            return Ok(r);
        }
        let fit = self.kclass(1.0)?;
        let e = self.resid_vec_full(&fit.coef_vec());
        let (pe, me) = self.quad(&e);
        TestResult::new(self.dof() * pe / me, Dist::Chi2((self.k() - self.m()) as u32))
    }

    /// `(n - k)(kappa_LIML - 1)`.
    pub fn j_liml(&self) -> Result<TestResult> {
        if let Some(r) = self.just_identified()? {
            return Ok(r);
        }
        let full = self.full_eigenvalues()?;
        TestResult::new(
            self.dof() * full[0].max(0.0),
            Dist::Chi2((self.k() - self.m()) as u32),
        )
    }

    pub fn run(&self, kind: TestKind, beta0: &DVector<f64>) -> Result<TestResult> {
        match kind {
            TestKind::Wald(e) => self.wald(beta0, e),
            TestKind::Ar => self.ar(beta0),
            TestKind::Lm => self.lm(beta0, &MinimizeOptions::default()),
            TestKind::LmPlugin => self.lm_plugin(beta0),
            TestKind::Lr => self.lr(beta0),
            TestKind::Clr => self.clr(beta0),
        }
    }
}

fn clamp_s_min(raw: f64) -> Result<f64> {
    if raw < S_MIN_CLAMP {
        return Err(Error::Numerical(format!(
            "conditioning statistic is negative ({raw:e})"
        )));
    }
    Ok(raw.max(0.0))
}

fn beta_vec(beta0: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(beta0)
}

pub fn wald_test(data: &IvDataset, beta0: &[f64], est: Estimator) -> Result<TestResult> {
    CrossProducts::new(data)?.wald(&beta_vec(beta0), est)
}

pub fn ar_test(data: &IvDataset, beta0: &[f64]) -> Result<TestResult> {
    CrossProducts::new(data)?.ar(&beta_vec(beta0))
}

pub fn lm_test(data: &IvDataset, beta0: &[f64]) -> Result<TestResult> {
    CrossProducts::new(data)?.lm(&beta_vec(beta0), &MinimizeOptions::default())
}

pub fn lm_test_plugin(data: &IvDataset, beta0: &[f64]) -> Result<TestResult> {
    CrossProducts::new(data)?.lm_plugin(&beta_vec(beta0))
}

pub fn lr_test(data: &IvDataset, beta0: &[f64]) -> Result<TestResult> {
    CrossProducts::new(data)?.lr(&beta_vec(beta0))
}

pub fn clr_test(data: &IvDataset, beta0: &[f64]) -> Result<TestResult> {
    CrossProducts::new(data)?.clr(&beta_vec(beta0))
}

pub fn rank_test(data: &IvDataset, r: usize) -> Result<TestResult> {
    CrossProducts::new(data)?.rank_test(r)
}

pub fn j_statistic(data: &IvDataset) -> Result<TestResult> {
    CrossProducts::new(data)?.j_statistic()
}

pub fn j_liml(data: &IvDataset) -> Result<TestResult> {
    CrossProducts::new(data)?.j_liml()
}

pub fn run_test(data: &IvDataset, kind: TestKind, beta0: &[f64]) -> Result<TestResult> {
    CrossProducts::new(data)?.run(kind, &beta_vec(beta0))
}

/// Tests `H0: beta = beta0, delta = delta0` jointly, where `delta` are the
/// coefficients of the exogenous covariates of interest `D`.
///
/// `D` is appended to both `X` and `Z`. The conditional LR test uses the
/// `Gamma(k - mx, mx, s_min) + chi2(md)` limit and needs `mw = 0`.
pub fn test_with_exogenous_of_interest(
    data: &IvDataset,
    beta0: &[f64],
    delta0: &[f64],
    kind: TestKind,
) -> Result<TestResult> {
    let md = data.md();
    if md == 0 {
        if !delta0.is_empty() {
            return Err(Error::Dimension("delta0 given but no exogenous covariates of interest".into()));
        }
        return run_test(data, kind, beta0);
    }
    if delta0.len() != md {
        return Err(Error::Dimension(format!(
            "delta0 has length {}, expected {md}",
            delta0.len()
        )));
    }
    if beta0.len() != data.mx() {
        return Err(Error::Dimension(format!(
            "beta0 has length {}, expected {}",
            beta0.len(),
            data.mx()
        )));
    }
    let aug = data.augment_exogenous_of_interest();
    let mut full_beta = beta0.to_vec();
    full_beta.extend_from_slice(delta0);
    let cp = CrossProducts::new(&aug)?;
    let full_beta = beta_vec(&full_beta);
    // D lies in the instrument span, so M_Z [y X D W] is singular. The
    // unrestricted minimum eigenvalue is taken from the system with D
    // partialled out instead; it has the same value and degrees of freedom.
    let lambda_full = || -> Result<f64> {
        Ok(CrossProducts::new(&data.partial_out_all())?.full_eigenvalues()?[0].max(0.0))
    };
    let lr = || -> Result<TestResult> {
        let inner = cp.inner_liml(&full_beta)?;
        let lam = lambda_full()?;
        let stat = (cp.dof() * (inner.ratio - lam)).max(0.0);
        Ok(TestResult::new(stat, Dist::Chi2(cp.mx() as u32))?
            .with("gamma_liml", vec_diag(&inner.gamma))
            .with("j_liml", Diagnostic::Number(cp.dof() * lam)))
    };
    match kind {
        TestKind::Lr => return lr(),
        TestKind::Wald(Estimator::Liml) | TestKind::Wald(Estimator::Fuller(_)) => {
            let kappa_liml = 1.0 + lambda_full()?;
            let kappa = match kind {
                TestKind::Wald(Estimator::Fuller(a)) if a > 0.0 => (kappa_liml - a / cp.dof()).max(0.0),
                TestKind::Wald(Estimator::Fuller(a)) if !(a >= 0.0) => {
                    return Err(Error::Domain(format!("Fuller constant must be >= 0, got {a}")))
                }
                _ => kappa_liml,
            };
            let fit = cp.kclass_unchecked(kappa, true)?;
            return cp.wald_from_fit(&full_beta, &fit);
        }
        TestKind::Clr => {}
        _ => return cp.run(kind, &full_beta),
    }
    if data.mw() > 0 {
        return Err(Error::Unsupported(
            "conditional LR with both endogenous nuisance and exogenous-of-interest covariates".into(),
        ));
    }
    if data.mx() == 0 {
        return Err(Error::Unsupported(
            "conditional LR needs at least one endogenous covariate of interest".into(),
        ));
    }
    let lr = lr()?;
    let r = data.residualize();
    let n = r.n();
    let u = &r.y - &r.x * beta_vec(beta0) - &r.d * beta_vec(delta0);
    let um = DMatrix::from_column_slice(n, 1, u.as_slice());
    let zd = hcat(&[&r.z, &r.d]);
    let p_zd = Projection::new(&zd);
    let mu = p_zd.annih(&um);
    let mx_ = p_zd.annih(&r.x);
    let uu = mu.column(0).norm_squared();
    let c = (mu.transpose() * &mx_) / uu;
    let xt = &r.x - &um * c;
    let mz_d = annih(&r.d, &r.z)?;
    let p2 = Projection::new(&mz_d);
    let k = p2.rank();
    let dof = (n - r.absorbed) as f64 - p_zd.rank() as f64;
    let px = p2.coords(&xt);
    let mxt = p_zd.annih(&xt);
    let a = symmetrize(&(px.transpose() * &px));
    let b = symmetrize(&(mxt.transpose() * &mxt));
    let (vals, _) = gen_eigen(&a, &b, "M_[Z D] X~")?;
    let s_min = clamp_s_min(dof * vals[0])?;
    let dist = Dist::GammaCvfPlusChi2(GammaCvfPlusChi2 {
        gamma: GammaCvf::new(k as u32, data.mx() as u32, s_min)?,
        md: md as u32,
    });
    Ok(TestResult::new(lr.statistic, dist)?.with("s_min", Diagnostic::Number(s_min)))
}
