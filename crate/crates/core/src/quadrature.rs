//! Adaptive Gauss-Kronrod (7/15) integration, with a wrapper for integrands
//! carrying algebraic endpoint singularities.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

const MAX_INTERVALS: usize = 2000;

#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Globally adaptive integration of `f` over `[a, b]` to the absolute target `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<Integral> {
    if a == b {
        return Ok(Integral {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let (v, e) = gk15(&f, a, b);
    let mut parts = vec![(a, b, v, e)];
    let mut evals = 15;
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::Quadrature { achieved: f64::NAN });
        }
        if err <= tol || err <= 1e-15 * total.abs() {
            return Ok(Integral {
                value: total,
                error: err,
                evaluations: evals,
            });
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature { achieved: err });
        }
        let (i, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, _, _) = parts.swap_remove(i);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(Error::Quadrature { achieved: err });
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        evals += 30;
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// Integrates `(x - a)^ea (b - x)^eb f(x)` over `[a, b]` for `ea, eb > -1`.
///
/// Each half of the interval is mapped with `t = (distance to endpoint)^(e + 1)`
/// when the exponent is negative, which turns the weight into a constant.
pub fn integrate_weighted<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    ea: f64,
    eb: f64,
    tol: f64,
) -> Result<Integral> {
    if !(ea > -1.0 && eb > -1.0) {
        return Err(Error::Domain(format!(
            "endpoint exponents must exceed -1 (got {ea}, {eb})"
        )));
    }
    let mid = 0.5 * (a + b);
    let left = if ea < 0.0 {
        let s = ea + 1.0;
        let tmax = (mid - a).powf(s);
        integrate(
            |t: f64| {
                let x = a + t.powf(1.0 / s);
                (b - x).powf(eb) * f(x) / s
            },
            0.0,
            tmax,
            tol / 2.0,
        )?
    } else {
        integrate(
            |x: f64| (x - a).powf(ea) * (b - x).powf(eb) * f(x),
            a,
            mid,
            tol / 2.0,
        )?
    };
    let right = if eb < 0.0 {
        let s = eb + 1.0;
        let tmax = (b - mid).powf(s);
        integrate(
            |t: f64| {
                let x = b - t.powf(1.0 / s);
                (x - a).powf(ea) * f(x) / s
            },
            0.0,
            tmax,
            tol / 2.0,
        )?
    } else {
        integrate(
            |x: f64| (x - a).powf(ea) * (b - x).powf(eb) * f(x),
            mid,
            b,
            tol / 2.0,
        )?
    };
    Ok(Integral {
        value: left.value + right.value,
        error: left.error + right.error,
        evaluations: left.evaluations + right.evaluations,
    })
}
