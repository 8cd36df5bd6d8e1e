//! Chi-squared distribution helpers on top of the regularized incomplete gamma.

use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

pub fn chi2_cdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if df <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    gamma_lr(df / 2.0, x / 2.0)
}

pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if df <= 0.0 || x.is_infinite() {
        return 0.0;
    }
    gamma_ur(df / 2.0, x / 2.0)
}

pub fn chi2_pdf(x: f64, df: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let h = df / 2.0;
    if x == 0.0 {
        return if h < 1.0 {
            f64::INFINITY
        } else if h == 1.0 {
            0.5
        } else {
            0.0
        };
    }
    ((h - 1.0) * x.ln() - x / 2.0 - h * std::f64::consts::LN_2 - ln_gamma(h)).exp()
}

fn ln_chi2_pdf(x: f64, df: f64) -> f64 {
    let h = df / 2.0;
    (h - 1.0) * x.ln() - x / 2.0 - h * std::f64::consts::LN_2 - ln_gamma(h)
}

/// Upper-tail quantile: the `x` with `P(X > x) = alpha`.
pub fn chi2_isf(alpha: f64, df: f64) -> f64 {
    if alpha >= 1.0 || df <= 0.0 {
        return 0.0;
    }
    if alpha <= 0.0 {
        return f64::INFINITY;
    }
    // work on whichever tail is smaller for relative accuracy
    let upper = alpha <= 0.5;
    let target = if upper { alpha } else { 1.0 - alpha };
    let tail = |x: f64| if upper { chi2_sf(x, df) } else { chi2_cdf(x, df) };

    // Wilson-Hilferty start
    let z = normal_isf(alpha);
    let c = 2.0 / (9.0 * df);
    let mut x = df * (1.0 - c + z * c.sqrt()).powi(3);
    if !(x > 0.0) || !x.is_finite() {
        x = df.max(1e-3);
    }

    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for _ in 0..200 {
        let f = tail(x) - target;
        if f == 0.0 {
            return x;
        }
        // sf decreasing, cdf increasing in x
        let too_small_x = if upper { f > 0.0 } else { f < 0.0 };
        if too_small_x {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let dens = ln_chi2_pdf(x, df).exp();
        let step = if upper { f / dens } else { -f / dens };
        let mut next = x + step;
        if !next.is_finite() || next <= lo || next >= hi {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { x * 2.0 + 1.0 };
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) {
            return next;
        }
        x = next;
    }
    x
}

/// Lower-tail quantile: the `x` with `P(X <= x) = p`.
pub fn chi2_quantile(p: f64, df: f64) -> f64 {
    chi2_isf(1.0 - p, df)
}

/// Upper-tail standard normal quantile (Acklam's rational approximation,
/// adequate as a starting value).
fn normal_isf(alpha: f64) -> f64 {
    let p = 1.0 - alpha;
    let a = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    let b = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    let c = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    let d = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    let pl = 0.02425;
    if p < pl {
        let q = (-2.0 * p.ln()).sqrt();
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    } else if p <= 1.0 - pl {
        let q = p - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    } else {
        let q = (-2.0 * alpha.ln()).sqrt();
        -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    }
}
