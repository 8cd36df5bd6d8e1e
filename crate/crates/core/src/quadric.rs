//! Confidence sets by test inversion: closed-form quadrics for the Wald, AR
//! and LR tests, boundedness conditions, the AR/Wald/LR level correspondence,
//! and grid inversion for tests without a closed form.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};

use crate::dataset::IvDataset;
use crate::dist::{chi2_isf, chi2_sf};
use crate::error::{Error, Result};
use crate::inference::TestKind;
use crate::kclass::Estimator;
use crate::linalg::{pinv_sym, sym_eigen, symmetrize};
use crate::moments::CrossProducts;

/// Right-hand sides above `-RHS_ROUND * scale` are rounded to zero.
pub const RHS_ROUND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadricKind {
    Region,
    WholeSpace,
}

/// `{beta : (beta - center)' A (beta - center) <= rhs}` or the whole space.
#[derive(Debug, Clone, Serialize)]
pub struct Quadric {
    #[serde(serialize_with = "ser_matrix")]
    pub a: DMatrix<f64>,
    #[serde(serialize_with = "ser_vector")]
    pub center: DVector<f64>,
    pub rhs: f64,
    pub kind: QuadricKind,
    pub kappa: f64,
    /// Set when the whole-space result comes from kappa sitting exactly on
    /// the nuisance-block boundary.
    pub boundary_degenerate: bool,
}

fn ser_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect();
    rows.serialize(s)
}

fn ser_vector<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.as_slice().serialize(s)
}

impl Quadric {
    pub fn contains(&self, beta: &DVector<f64>) -> bool {
        match self.kind {
            QuadricKind::WholeSpace => true,
            QuadricKind::Region => {
                let d = beta - &self.center;
                d.dot(&(&self.a * &d)) <= self.rhs
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    BoundedNonempty,
    Unbounded,
    Empty,
    WholeSpace,
}

/// Tests whose confidence sets are quadrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SetTest {
    Wald(Estimator),
    Ar,
    Lr,
}

impl TryFrom<TestKind> for SetTest {
    type Error = Error;
    fn try_from(k: TestKind) -> Result<Self> {
        match k {
            TestKind::Wald(e) => Ok(SetTest::Wald(e)),
            TestKind::Ar => Ok(SetTest::Ar),
            TestKind::Lr => Ok(SetTest::Lr),
            other => Err(Error::Unsupported(format!(
                "no closed-form confidence set for `{other}`"
            ))),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

impl CrossProducts {
    pub fn kappa_ar(&self, alpha: f64) -> f64 {
        1.0 + chi2_isf(alpha, (self.k() - self.mw()) as f64) / self.dof()
    }

    pub fn kappa_lr(&self, alpha: f64) -> Result<f64> {
        Ok(self.kappa_liml()? + chi2_isf(alpha, self.mx() as f64) / self.dof())
    }

    /// `1 + lambda_min((W'M_Z W)^{-1} W'P_Z W)`, infinite when there is no `W`.
    pub fn kappa_max(&self) -> Result<f64> {
        if self.mw() == 0 {
            return Ok(f64::INFINITY);
        }
        let (vals, _) = self.eigen(&self.sel_w(), "M_Z W")?;
        Ok(1.0 + vals[0].max(0.0))
    }

    /// `A(kappa)`, the k-class coefficients and `s(kappa) = r'(I - kappa M_Z) r`
    /// at the k-class residual `r`.
    fn quadric_parts(&self, kappa: f64) -> (DMatrix<f64>, DVector<f64>, f64, f64) {
        let mx = self.mx();
        let mw = self.mw();
        let (h, g) = self.kclass_system(kappa);
        let hinv = match h.clone().try_inverse() {
            Some(inv) if inv.iter().all(|v| v.is_finite()) => symmetrize(&inv),
            _ => pinv_sym(&h),
        };
        let coef = &hinv * g;
        let hxx = h.view((0, 0), (mx, mx)).into_owned();
        let a = if mw == 0 {
            hxx
        } else {
            let hxw = h.view((0, mx), (mx, mw)).into_owned();
            let hww = h.view((mx, mx), (mw, mw)).into_owned();
            symmetrize(&(hxx - &hxw * pinv_sym(&hww) * hxw.transpose()))
        };
        let e = self.resid_vec_full(&coef);
        let s = e.dot(&((self.pg() + self.mg() * (1.0 - kappa)) * &e));
        let (pe, me) = self.quad(&e);
        let sigma2_wald = (pe + me) / (self.n() as f64 - self.m() as f64);
        (a, coef, s, sigma2_wald)
    }

    fn round_rhs(&self, rhs: f64) -> f64 {
        let scale = self.pg()[(0, 0)] + self.mg()[(0, 0)];
        if rhs < 0.0 && rhs > -RHS_ROUND * scale.max(1.0) {
            0.0
        } else {
            rhs
        }
    }

    pub fn invert_closed_form(&self, test: SetTest, alpha: f64) -> Result<Quadric> {
        check_alpha(alpha)?;
        if self.k() < self.m() {
            return Err(Error::Domain("order condition fails: k < mx + mw".into()));
        }
        let mx = self.mx();
        let kappa = match test {
            SetTest::Ar => self.kappa_ar(alpha),
            SetTest::Lr => self.kappa_lr(alpha)?,
            SetTest::Wald(est) => self.fit(est)?.kappa,
        };
        let kmax = self.kappa_max()?;
        let whole = |degenerate: bool| Quadric {
            a: DMatrix::zeros(mx, mx),
            center: DVector::zeros(mx),
            rhs: f64::INFINITY,
            kind: QuadricKind::WholeSpace,
            kappa,
            boundary_degenerate: degenerate,
        };
        if kappa > kmax {
            return Ok(whole(false));
        }
        if kmax.is_finite() && (kappa - kmax).abs() <= 1e-12 * kmax {
            warn!("kappa {kappa} lies on the nuisance boundary {kmax}; returning the whole space");
            return Ok(whole(true));
        }
        let (a, coef, s, sigma2_wald) = self.quadric_parts(kappa);
        let rhs = match test {
            SetTest::Wald(_) => sigma2_wald * chi2_isf(alpha, mx as f64),
            SetTest::Ar | SetTest::Lr => -s,
        };
        Ok(Quadric {
            a,
            center: coef.rows(0, mx).into_owned(),
            rhs: self.round_rhs(rhs),
            kind: QuadricKind::Region,
            kappa,
            boundary_degenerate: false,
        })
    }

    /// Wald set at an explicit kappa and level.
    pub fn wald_quadric(&self, kappa: f64, alpha: f64) -> Result<Quadric> {
        check_alpha(alpha)?;
        let mx = self.mx();
        let (a, coef, _, sigma2_wald) = self.quadric_parts(kappa);
        Ok(Quadric {
            a,
            center: coef.rows(0, mx).into_owned(),
            rhs: sigma2_wald * chi2_isf(alpha, mx as f64),
            kind: QuadricKind::Region,
            kappa,
            boundary_degenerate: false,
        })
    }

    pub fn boundedness_condition(&self, test: SetTest, alpha: f64) -> Result<Boundedness> {
        check_alpha(alpha)?;
        let j_liml = self.dof() * self.full_eigenvalues()?[0].max(0.0);
        let lambda = self.rank_test(1)?.statistic;
        let (critical, bounded) = match test {
            SetTest::Ar => {
                let c = chi2_isf(alpha, (self.k() - self.mw()) as f64);
                (c, j_liml <= c && c < lambda)
            }
            SetTest::Lr => {
                let c = chi2_isf(alpha, self.mx() as f64);
                (c, c < lambda - j_liml)
            }
            SetTest::Wald(_) => {
                return Err(Error::Unsupported("boundedness condition for Wald sets".into()))
            }
        };
        Ok(Boundedness {
            bounded,
            j_liml,
            lambda,
            critical,
        })
    }

    pub fn ar_wald_level_map(&self, alpha: f64) -> Result<LevelMap> {
        let b = self.boundedness_condition(SetTest::Ar, alpha)?;
        if b.j_liml > b.critical {
            return Err(Error::Domain(format!(
                "J_LIML = {} exceeds the AR critical value {}",
                b.j_liml, b.critical
            )));
        }
        if b.critical >= b.lambda {
            return Err(Error::Domain(format!(
                "AR critical value {} is not below the rank statistic {}",
                b.critical, b.lambda
            )));
        }
        let kappa_ar = self.kappa_ar(alpha);
        let (_, _, s, sigma2_wald) = self.quadric_parts(kappa_ar);
        let mx = self.mx() as f64;
        Ok(LevelMap {
            kappa_ar,
            alpha_wald: chi2_sf(-s / sigma2_wald, mx),
            alpha_lr: chi2_sf(b.critical - b.j_liml, mx),
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Boundedness {
    pub bounded: bool,
    pub j_liml: f64,
    /// Rank statistic with `r = 1`.
    pub lambda: f64,
    pub critical: f64,
}

/// Levels at which the Wald (at `kappa_ar`) and LR sets coincide with the AR set.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LevelMap {
    pub kappa_ar: f64,
    pub alpha_wald: f64,
    pub alpha_lr: f64,
}

pub fn invert_closed_form(data: &IvDataset, test: SetTest, alpha: f64) -> Result<Quadric> {
    CrossProducts::new(data)?.invert_closed_form(test, alpha)
}

pub fn boundedness_condition(data: &IvDataset, test: SetTest, alpha: f64) -> Result<Boundedness> {
    CrossProducts::new(data)?.boundedness_condition(test, alpha)
}

pub fn ar_wald_level_map(data: &IvDataset, alpha: f64) -> Result<LevelMap> {
    CrossProducts::new(data)?.ar_wald_level_map(alpha)
}

pub fn classify(q: &Quadric) -> Classification {
    if q.kind == QuadricKind::WholeSpace {
        return Classification::WholeSpace;
    }
    let (vals, _) = sym_eigen(&q.a);
    if vals.is_empty() {
        return if q.rhs >= 0.0 {
            Classification::WholeSpace
        } else {
            Classification::Empty
        };
    }
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let min = vals.min();
    if min > tol {
        if q.rhs >= 0.0 {
            Classification::BoundedNonempty
        } else {
            Classification::Empty
        }
    } else if min < -tol || q.rhs >= 0.0 {
        Classification::Unbounded
    } else {
        Classification::Empty
    }
}

/// Union of disjoint closed intervals on the real line, sorted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfidenceSet1D {
    pub pieces: Vec<(f64, f64)>,
}

impl ConfidenceSet1D {
    pub fn empty() -> Self {
        Self { pieces: Vec::new() }
    }
    pub fn line() -> Self {
        Self {
            pieces: vec![(f64::NEG_INFINITY, f64::INFINITY)],
        }
    }
    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
    pub fn is_bounded(&self) -> bool {
        self.pieces.iter().all(|p| p.0.is_finite() && p.1.is_finite())
    }
    pub fn contains(&self, x: f64) -> bool {
        self.pieces.iter().any(|p| p.0 <= x && x <= p.1)
    }
}

impl Serialize for ConfidenceSet1D {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let fin = |v: f64| if v.is_finite() { Some(v) } else { None };
        let mut seq = s.serialize_seq(Some(self.pieces.len()))?;
        for &(lo, hi) in &self.pieces {
            seq.serialize_element(&[fin(lo), fin(hi)])?;
        }
        seq.end()
    }
}

impl std::fmt::Display for ConfidenceSet1D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.pieces.is_empty() {
            return write!(f, "{{}}");
        }
        let parts: Vec<String> = self
            .pieces
            .iter()
            .map(|&(lo, hi)| {
                let l = if lo.is_finite() { format!("[{lo:.4}") } else { "(-inf".into() };
                let h = if hi.is_finite() { format!("{hi:.4}]") } else { "inf)".into() };
                format!("{l}, {h}")
            })
            .collect();
        write!(f, "{}", parts.join(" U "))
    }
}

/// Solves `a (beta - b)^2 <= c` for a one-dimensional quadric.
pub fn project_to_interval(q: &Quadric) -> Result<ConfidenceSet1D> {
    if q.kind == QuadricKind::WholeSpace {
        return Ok(ConfidenceSet1D::line());
    }
    if q.a.nrows() != 1 {
        return Err(Error::Dimension(format!(
            "interval projection needs a one-dimensional quadric, got {}",
            q.a.nrows()
        )));
    }
    let (a, b, c) = (q.a[(0, 0)], q.center[0], q.rhs);
    let scale = a.abs().max(1e-300);
    if a.abs() <= 1e-14 * scale.max(c.abs()) || a == 0.0 {
        return Ok(if c >= 0.0 {
            ConfidenceSet1D::line()
        } else {
            ConfidenceSet1D::empty()
        });
    }
    Ok(match (a > 0.0, c >= 0.0) {
        (true, true) => {
            let r = (c / a).sqrt();
            ConfidenceSet1D {
                pieces: vec![(b - r, b + r)],
            }
        }
        (true, false) => ConfidenceSet1D::empty(),
        (false, true) => ConfidenceSet1D::line(),
        (false, false) => {
            let r = (c / a).sqrt();
            ConfidenceSet1D {
                pieces: vec![(f64::NEG_INFINITY, b - r), (b + r, f64::INFINITY)],
            }
        }
    })
}

/// Outcome of a grid inversion.
#[derive(Debug, Clone, Serialize)]
pub struct GridInversion {
    pub set: ConfidenceSet1D,
    /// An accepted run touched the window edge and was extended to infinity.
    pub unbounded_at_window_edge: bool,
    /// Grid points where the test failed (treated as rejections).
    pub failed_points: usize,
}

/// Default inversion window: TSLS estimate plus or minus 20 Wald standard errors.
pub fn default_window(data: &IvDataset) -> Result<(f64, f64)> {
    let cp = CrossProducts::new(data)?;
    let fit = cp.kclass(1.0)?;
    let se = fit.std_errors()[0];
    let c = fit.coef[0];
    let half = if se > 0.0 && se.is_finite() { 20.0 * se } else { 1.0 };
    Ok((c - half, c + half))
}

pub const DEFAULT_GRID_POINTS: usize = 2000;

/// Inverts a test over `[lo, hi]` for `mx = 1` by evaluating p-values on a grid
/// and refining each acceptance boundary by bisection.
pub fn grid_invert(
    data: &IvDataset,
    test: TestKind,
    alpha: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<GridInversion> {
    check_alpha(alpha)?;
    if points < 3 || !(lo < hi) {
        return Err(Error::Domain("grid inversion needs points >= 3 and lo < hi".into()));
    }
    let cp = CrossProducts::new(data)?;
    if cp.mx() != 1 {
        return Err(Error::Dimension("grid inversion needs mx = 1".into()));
    }
    let step = (hi - lo) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let accept_at = |b: f64| -> Option<bool> {
        match cp.run(test, &DVector::from_element(1, b)) {
            Ok(r) => Some(r.p_value >= alpha),
            Err(e) => {
                warn!("{test} failed at beta = {b}: {e}");
                None
            }
        }
    };
    let flags: Vec<Option<bool>> = grid.par_iter().map(|&b| accept_at(b)).collect();
    let failed = flags.iter().filter(|f| f.is_none()).count();
    let acc: Vec<bool> = flags.iter().map(|f| f.unwrap_or(false)).collect();

    let width = (hi - lo) / 1e6;
    let refine = |inside: f64, outside: f64| -> f64 {
        let (mut a, mut b) = (inside, outside);
        while (b - a).abs() > width {
            let mid = 0.5 * (a + b);
            if accept_at(mid).unwrap_or(false) {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    };

    let mut runs = Vec::new();
    let mut i = 0;
    while i < points {
        if acc[i] {
            let start = i;
            while i + 1 < points && acc[i + 1] {
                i += 1;
            }
            runs.push((start, i));
        }
        i += 1;
    }
    let mut edge = false;
    let pieces: Vec<(f64, f64)> = runs
        .par_iter()
        .map(|&(s, e)| {
            let l = if s == 0 {
                f64::NEG_INFINITY
            } else {
                refine(grid[s], grid[s - 1])
            };
            let r = if e == points - 1 {
                f64::INFINITY
            } else {
                refine(grid[e], grid[e + 1])
            };
            (l, r)
        })
        .collect();
    if runs.iter().any(|&(s, e)| s == 0 || e == points - 1) {
        edge = true;
    }
    Ok(GridInversion {
        set: ConfidenceSet1D { pieces },
        unbounded_at_window_edge: edge,
        failed_points: failed,
    })
}

/// P-values of several tests over a grid of `beta` values (`mx = 1`).
pub fn pvalue_grid(
    data: &IvDataset,
    tests: &[TestKind],
    grid: &[f64],
) -> Result<Vec<(TestKind, f64, Option<f64>)>> {
    let cp = CrossProducts::new(data)?;
    if cp.mx() != 1 {
        return Err(Error::Dimension("p-value grids need mx = 1".into()));
    }
    let cells: Vec<(TestKind, f64)> = tests
        .iter()
        .flat_map(|&t| grid.iter().map(move |&b| (t, b)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(t, b)| {
            let p = cp.run(t, &DVector::from_element(1, b)).ok().map(|r| r.p_value);
            (t, b, p)
        })
        .collect())
}
