//! Multi-start BFGS with central finite-difference gradients.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MinimizeOptions {
    /// Stop when `||grad||_inf < tol * (1 + |f|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step, scaled by `1 + |x_i|`.
    pub fd_step: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StartReport {
    pub start: Vec<f64>,
    pub argmin: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    /// The objective was not finite at the start point.
    pub skipped: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimizeReport {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub starts: Vec<StartReport>,
}

impl MinimizeReport {
    pub fn any_converged(&self) -> bool {
        self.starts.iter().any(|s| s.converged)
    }
}

fn gradient<F: Fn(&DVector<f64>) -> f64>(f: &F, x: &DVector<f64>, step: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = step * (1.0 + x[i].abs());
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

fn bfgs<F: Fn(&DVector<f64>) -> f64>(
    f: &F,
    x0: &DVector<f64>,
    opts: &MinimizeOptions,
) -> StartReport {
    let n = x0.len();
    let start: Vec<f64> = x0.iter().copied().collect();
    let mut x = x0.clone();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return StartReport {
            argmin: start.clone(),
            start,
            value: f64::INFINITY,
            converged: false,
            skipped: true,
            iterations: 0,
        };
    }
    if n == 0 {
        return StartReport {
            argmin: start.clone(),
            start,
            value: fx,
            converged: true,
            skipped: false,
            iterations: 0,
        };
    }
    let mut g = gradient(f, &x, opts.fd_step);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut converged = false;
    let mut iters = 0;
    while iters < opts.max_iter {
        if g.amax() < opts.tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        iters += 1;
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        // backtracking Armijo search
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &dir * t;
            let fnew = f(&xn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            // no decrease along the search direction: stationary up to
            // finite-difference noise
            converged = g.amax() < opts.tol.sqrt() * (1.0 + fx.abs());
            break;
        };
        let gn = gradient(f, &xn, opts.fd_step);
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if first {
                h = DMatrix::identity(n, n) * (sy / yv.norm_squared());
                first = false;
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - (&s * yv.transpose()) * rho;
            let right = &i - (&yv * s.transpose()) * rho;
            h = &left * &h * &right + (&s * s.transpose()) * rho;
        }
        let small_step = (fx - fnew).abs() <= 1e-15 * (1.0 + fx.abs());
        x = xn;
        fx = fnew;
        g = gn;
        if small_step && g.amax() < opts.tol.sqrt() * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }
    StartReport {
        start,
        argmin: x.iter().copied().collect(),
        value: fx,
        converged,
        skipped: false,
        iterations: iters,
    }
}

/// Runs BFGS from each start and keeps the lowest terminal value.
pub fn minimize_multistart<F>(
    objective: F,
    starts: &[DVector<f64>],
    opts: &MinimizeOptions,
) -> Result<MinimizeReport>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let reports: Vec<StartReport> = starts.iter().map(|s| bfgs(&objective, s, opts)).collect();
    let best = reports
        .iter()
        .filter(|r| !r.skipped)
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or(Error::Optimizer { best: f64::NAN })?;
    Ok(MinimizeReport {
        argmin: best.argmin.clone(),
        value: best.value,
        starts: reports.clone(),
    })
}
