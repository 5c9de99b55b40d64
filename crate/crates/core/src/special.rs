//! Scalar distribution functions used by the copula families.

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Normal quantile: `erfc` inversion plus one Newton step on the lower tail.
pub fn norm_ppf(p: f64) -> f64 {
    if p > 0.5 {
        // 1 - p is exact here
        return -norm_ppf(1.0 - p);
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    x - (norm_cdf(x) - p) / norm_ln_pdf(x).exp()
}

pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Student-t CDF with `nu` degrees of freedom (any real `nu > 0`).
pub fn t_cdf(x: f64, nu: f64) -> f64 {
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let x2 = x * x;
    if x2 < nu.min(1.0) {
        // near the centre the complementary form keeps full relative accuracy
        let half = 0.5 * beta_reg(0.5, 0.5 * nu, x2 / (nu + x2));
        return if x > 0.0 { 0.5 + half } else { 0.5 - half };
    }
    let ax = x.abs();
    let w = if ax > 1e150 { (nu / ax) / ax } else { nu / (nu + x2) };
    let tail = 0.5 * beta_reg(0.5 * nu, 0.5, w);
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `ln(1 + x^2 / nu)` without overflow.
fn ln1p_sq(x: f64, nu: f64) -> f64 {
    if x.abs() > 1e150 {
        2.0 * x.abs().ln() - nu.ln()
    } else {
        (x * x / nu).ln_1p()
    }
}

pub fn t_ln_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - 0.5 * (nu + 1.0) * ln1p_sq(x, nu)
}

/// Positive `t` with `P(|T| > t) = p` (Hill, 1970), accurate to a few
/// digits; used as the Halley starting value.
fn hill_quantile(p: f64, n: f64) -> f64 {
    use std::f64::consts::FRAC_PI_2;
    if n == 1.0 {
        let a = p * FRAC_PI_2;
        return a.cos() / a.sin();
    }
    if n == 2.0 {
        return (2.0 / (p * (2.0 - p)) - 2.0).sqrt();
    }
    let a = 1.0 / (n - 0.5);
    let b = 48.0 / (a * a);
    let mut c = ((20700.0 * a / b - 98.0) * a - 16.0) * a + 96.36;
    let d = ((94.5 / (b + c) - 3.0) / b + 1.0) * (a * FRAC_PI_2).sqrt() * n;
    let x = d * p;
    let mut y = x.powf(2.0 / n);
    if y > 0.05 + a {
        // expansion around the normal quantile
        let x = norm_ppf(0.5 * p);
        y = x * x;
        if n < 5.0 {
            c += 0.3 * (n - 4.5) * (x + 0.6);
        }
        c = (((0.05 * d * x - 5.0) * x - 7.0) * x - 2.0) * x + b + c;
        y = (((((0.4 * y + 6.3) * y + 36.0) * y + 94.5) / c - y - 3.0) / b + 1.0) * x;
        y = (a * y * y).exp_m1();
    } else {
        y = ((1.0 / (((n + 6.0) / (n * y) - 0.089 * d - 0.822) * (n + 2.0) * 3.0) + 0.5 / (n + 4.0)) * y - 1.0)
            * (n + 1.0)
            / (n + 2.0)
            + 1.0 / y;
    }
    (n * y).sqrt()
}

/// Student-t quantile. Works on the lower tail so that `t_cdf(x) - p` keeps
/// relative accuracy. Halley steps start from Hill's approximation, or from
/// the leading tail term `F(x) ~ k |x|^-nu` far out. Requires `nu >= 1`
/// (NaN otherwise).
pub fn t_ppf(p: f64, nu: f64) -> f64 {
    if p.is_nan() || nu.is_nan() || nu < 1.0 {
        return f64::NAN;
    }
    if p > 0.5 {
        return -t_ppf(1.0 - p, nu);
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    let ln_norm = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
    let ln_p = p.ln();
    let far = ((ln_norm + 0.5 * (nu - 1.0) * nu.ln() - ln_p) / nu).exp();
    let mut x = if far * far > 10.0 * (nu + 1.0) {
        -far
    } else {
        -hill_quantile(2.0 * p, nu)
    };
    if !x.is_finite() {
        return x;
    }
    for _ in 0..50 {
        let f = t_cdf(x, nu);
        if !(f > 0.0) {
            break;
        }
        let ln_dens = ln_norm - 0.5 * (nu + 1.0) * ln1p_sq(x, nu);
        // (F - p) / density, formed in logs so that tiny tails do not underflow
        let newton = (f / p - 1.0) * (ln_p - ln_dens).exp();
        let curv = -(nu + 1.0) * x / (nu + x * x);
        let step = newton / (1.0 - 0.5 * newton * curv).max(0.5);
        let next = x - step;
        x = if next < 0.0 { next } else { 0.5 * x };
        // cubic convergence: the error after a step of 1e-6 is negligible
        if step.abs() <= 1e-6 * x.abs().max(1e-3) {
            break;
        }
    }
    x
}
