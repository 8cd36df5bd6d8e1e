//! CDF and quantiles of the conditional likelihood-ratio limiting law
//! `Gamma(q - p, p, lambda)`, the distribution of
//! `(Q_{q-p} + Q_p - lambda + sqrt((Q_{q-p} + Q_p + lambda)^2 - 4 Q_{q-p} lambda)) / 2`
//! for independent chi-squared variables `Q_{q-p}` and `Q_p`.

use serde::Serialize;
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::dist::{chi2_cdf, chi2_isf};
use crate::error::{Error, Result};
use crate::quadrature::integrate_weighted;

/// Absolute accuracy target of the quadrature route.
pub const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaCvf {
    /// Total degrees of freedom.
    pub q: u32,
    pub p: u32,
    pub lambda: f64,
}

impl GammaCvf {
    pub fn new(q: u32, p: u32, lambda: f64) -> Result<Self> {
        if q < 1 || p < 1 || p > q {
            return Err(Error::Domain(format!(
                "need 1 <= p <= q, got q = {q}, p = {p}"
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { q, p, lambda })
    }

    fn degenerate(&self) -> bool {
        self.lambda == 0.0 || self.q == self.p
    }

    /// CDF by integrating against the Beta((q-p)/2, p/2) mixing density.
    pub fn cdf(&self, z: f64) -> Result<f64> {
        self.cdf_quadrature(z)
    }

    pub fn cdf_quadrature(&self, z: f64) -> Result<f64> {
        if z <= 0.0 {
            return Ok(0.0);
        }
        let q = self.q as f64;
        if self.degenerate() {
            return Ok(chi2_cdf(z, q));
        }
        let a = self.lambda / (z + self.lambda);
        let al = (self.q - self.p) as f64 / 2.0;
        let be = self.p as f64 / 2.0;
        let norm = (-ln_beta(al, be)).exp();
        let r = integrate_weighted(
            |x| chi2_cdf(z / (1.0 - a * x), q),
            0.0,
            1.0,
            al - 1.0,
            be - 1.0,
            QUAD_TOL / norm,
        )?;
        Ok((norm * r.value).clamp(0.0, 1.0))
    }

    /// Number of incomplete-gamma evaluations used by the quadrature at `z`.
    pub fn quadrature_evaluations(&self, z: f64) -> Result<usize> {
        if self.degenerate() || z <= 0.0 {
            return Ok(1);
        }
        let q = self.q as f64;
        let a = self.lambda / (z + self.lambda);
        let al = (self.q - self.p) as f64 / 2.0;
        let be = self.p as f64 / 2.0;
        let norm = (-ln_beta(al, be)).exp();
        let r = integrate_weighted(
            |x| chi2_cdf(z / (1.0 - a * x), q),
            0.0,
            1.0,
            al - 1.0,
            be - 1.0,
            QUAD_TOL / norm,
        )?;
        Ok(r.evaluations)
    }

    /// Upper tail `1 - cdf(z)`.
    pub fn sf(&self, z: f64) -> Result<f64> {
        Ok((1.0 - self.cdf(z)?).clamp(0.0, 1.0))
    }

    /// Power series truncated after `j_max` terms:
    /// `(1-a)^{p/2} sum_j a^j (p/2)_j / j! F_{chi2(q+2j)}(z + lambda)`.
    pub fn cdf_series(&self, z: f64, j_max: usize) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        let q = self.q as f64;
        let h = self.p as f64 / 2.0;
        let a = self.lambda / (z + self.lambda);
        let t = z + self.lambda;
        let mut coef = (1.0 - a).powf(h);
        let mut sum = 0.0;
        for j in 0..=j_max {
            sum += coef * chi2_cdf(t, q + 2.0 * j as f64);
            coef *= a * (h + j as f64) / (j as f64 + 1.0);
        }
        sum
    }

    /// Upper bound on the error of `cdf_series(z, j_max)`.
    pub fn series_error_bound(&self, z: f64, j_max: usize) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        let q = self.q as f64;
        let h = self.p as f64 / 2.0;
        let a = self.lambda / (z + self.lambda);
        let j1 = j_max as f64 + 1.0;
        let ln_coef = j1 * a.ln() + ln_gamma(h + j1) - ln_gamma(h) - ln_gamma(j1 + 1.0);
        chi2_cdf(z + self.lambda, q + 2.0 * j1) * ln_coef.exp() * (1.0 + 2.0 / (-a.ln()).sqrt())
    }

    /// Smallest truncation index with `series_error_bound <= tol`.
    pub fn series_terms_for(&self, z: f64, tol: f64) -> usize {
        let mut j = 0;
        while self.series_error_bound(z, j) > tol {
            j += 1;
            if j > 10_000_000 {
                break;
            }
        }
        j
    }

    /// `z` with `cdf(z) = 1 - alpha`, bracketed by the chi2(p) and chi2(q) quantiles.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let q = self.q as f64;
        if self.degenerate() {
            return Ok(chi2_isf(alpha, q));
        }
        let target = 1.0 - alpha;
        let mut lo = chi2_isf(alpha, self.p as f64);
        let mut hi = chi2_isf(alpha, q);
        let f = |z: f64| self.cdf(z).map(|c| c - target);
        let mut flo = f(lo)?;
        let mut fhi = f(hi)?;
        if flo > 1e-9 || fhi < -1e-9 {
            return Err(Error::Numerical(format!(
                "quantile bracket failed: F(lo) - t = {flo}, F(hi) - t = {fhi}"
            )));
        }
        if flo >= 0.0 {
            return Ok(lo);
        }
        if fhi <= 0.0 {
            return Ok(hi);
        }
        // Illinois-modified regula falsi
        let mut side = 0i8;
        for _ in 0..200 {
            let mid = (lo * fhi - hi * flo) / (fhi - flo);
            let mid = if mid > lo && mid < hi { mid } else { 0.5 * (lo + hi) };
            let fm = f(mid)?;
            if fm.abs() < 1e-12 || (hi - lo) < 1e-13 * hi {
                return Ok(mid);
            }
            if fm < 0.0 {
                lo = mid;
                flo = fm;
                if side == -1 {
                    fhi /= 2.0;
                }
                side = -1;
            } else {
                hi = mid;
                fhi = fm;
                if side == 1 {
                    flo /= 2.0;
                }
                side = 1;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `Gamma(q - p, p, lambda) + chi2(md)` with independent summands; the limiting
/// law of the conditional likelihood-ratio statistic when exogenous covariates
/// of interest are tested jointly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaCvfPlusChi2 {
    pub gamma: GammaCvf,
    pub md: u32,
}

impl GammaCvfPlusChi2 {
    pub fn cdf(&self, t: f64) -> Result<f64> {
        if t <= 0.0 {
            return Ok(0.0);
        }
        if self.md == 0 {
            return self.gamma.cdf(t);
        }
        let md = self.md as f64;
        let upper = chi2_isf(1e-9, md).min(t);
        let h = md / 2.0;
        // chi2 density without its s^{h-1} factor, which goes into the weight
        let ln_norm = -h * std::f64::consts::LN_2 - ln_gamma(h);
        let g = self.gamma;
        let err = std::cell::RefCell::new(None);
        let r = integrate_weighted(
            |s| {
                let inner = match g.cdf(t - s) {
                    Ok(v) => v,
                    Err(e) => {
                        err.borrow_mut().get_or_insert(e.to_string());
                        f64::NAN
                    }
                };
                (ln_norm - s / 2.0).exp() * inner
            },
            0.0,
            upper,
            h - 1.0,
            0.0,
            1e-9,
        );
        match (r, err.into_inner()) {
            (_, Some(e)) => Err(Error::Numerical(e)),
            (Ok(v), None) => Ok(v.value.clamp(0.0, 1.0)),
            (Err(e), None) => Err(e),
        }
    }

    pub fn sf(&self, t: f64) -> Result<f64> {
        Ok((1.0 - self.cdf(t)?).clamp(0.0, 1.0))
    }
}
