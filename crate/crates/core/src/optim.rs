//! Small unconstrained quasi-Newton minimiser used by the pair-copula fits.
//!
//! Objectives are evaluated on an unconstrained reparameterisation; bounded
//! parameters are mapped by the caller. Gradients are central differences.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once the relative objective change drops below this.
    pub rel_tol: f64,
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 200,
            rel_tol: 1e-8,
            grad_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = if fp.is_finite() && fm.is_finite() {
            (fp - fm) / (2.0 * h)
        } else if fp.is_finite() {
            (fp - fx) / h
        } else if fm.is_finite() {
            (fx - fm) / h
        } else {
            0.0
        };
    }
    g
}

/// BFGS with Armijo backtracking. Non-finite objective values are treated as
/// +inf so the line search retreats from them.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: BfgsOptions) -> Minimum {
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut x = DVector::from_column_slice(x0);
    let mut fx = eval(x.as_slice());
    if n == 0 {
        return Minimum {
            x: vec![],
            value: fx,
            iterations: 0,
            converged: true,
        };
    }
    let mut g = DVector::from_vec(gradient(&eval, x.as_slice(), fx));
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        if g.amax() < opts.grad_tol {
            converged = true;
            break;
        }
        let mut dir = -(&hinv * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            hinv = DMatrix::identity(n, n);
            fresh = true;
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + step * &dir;
            let fc = eval(cand.as_slice());
            if fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            // no descent possible along any tried step: treat as stationary
            converged = g.amax() < 1e-4;
            break;
        };
        let g_new = DVector::from_vec(gradient(&eval, x_new.as_slice(), f_new));
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        // objectives are per-observation means; near 0 the test is absolute
        let rel_change = (fx - f_new).abs() / fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if sy > 1e-10 * s.norm() * y.norm() {
            if fresh {
                // scale the identity to the observed curvature first
                hinv *= sy / y.dot(&y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - rho * &s * y.transpose();
            let right = &eye - rho * &y * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        if rel_change < opts.rel_tol && g.amax() < 100.0 * opts.grad_tol {
            converged = true;
            break;
        }
    }
    Minimum {
        x: x.as_slice().to_vec(),
        value: fx,
        iterations,
        converged,
    }
}

/// Central-difference Hessian.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let f0 = f(x);
    let steps: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    for i in 0..n {
        let hi = steps[i];
        xp[i] = x[i] + hi;
        let fp = f(&xp);
        xp[i] = x[i] - hi;
        let fm = f(&xp);
        xp[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut at = |di: f64, dj: f64| {
                xp[i] = x[i] + di;
                xp[j] = x[j] + dj;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (at(hi, hj) - at(hi, -hj) - at(-hi, hj) + at(-hi, -hj)) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}
