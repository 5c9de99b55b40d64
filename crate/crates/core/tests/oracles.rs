//! Checks of the reference implementations in `common` against brute-force
//! quadrature of the joint densities.

mod common;

use common::*;
use msvine::special::{norm_cdf, t_cdf};
use std::f64::consts::PI;

fn box_integral(f: impl Fn(f64, f64) -> f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (xs, wx) = composite_rule(a.0, a.1, 12, 20);
    let (ys, wy) = composite_rule(b.0, b.1, 12, 20);
    let mut s = 0.0;
    for (x, w1) in xs.iter().zip(&wx) {
        for (y, w2) in ys.iter().zip(&wy) {
            s += w1 * w2 * f(*x, *y);
        }
    }
    s
}

fn rect(cdf: impl Fn(f64, f64) -> f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    cdf(a.1, b.1) - cdf(a.0, b.1) - cdf(a.1, b.0) + cdf(a.0, b.0)
}

#[test]
fn legendre_rule_integrates_polynomials() {
    let (x, w) = gauss_legendre(7);
    let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
    assert!((s - 2.0 / 13.0).abs() < 1e-14);
    assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
}

#[test]
fn bivariate_normal_matches_quadrature() {
    let boxes = [((-1.0, 0.5), (-0.3, 1.2)), ((-3.0, -1.0), (0.2, 2.5)), ((0.1, 4.0), (-2.0, 3.0))];
    for r in [-0.97, -0.6, -0.1, 0.0, 0.35, 0.8, 0.95] {
        let pdf = |x: f64, y: f64| {
            let s = 1.0 - r * r;
            (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * s)).exp() / (2.0 * PI * s.sqrt())
        };
        for &(a, b) in &boxes {
            let q = box_integral(pdf, a, b);
            let o = rect(|h, k| bvn_cdf(h, k, r), a, b);
            assert!((q - o).abs() < 1e-13, "r={r} {a:?} {b:?}: {q} vs {o}");
        }
    }
    for (h, k) in [(-0.4, 1.3), (2.0, -1.0), (0.0, 0.0)] {
        assert!((bvn_cdf(h, k, 0.0) - norm_cdf(h) * norm_cdf(k)).abs() < 1e-15);
        assert!((bvn_cdf(h, 40.0, 0.7) - norm_cdf(h)).abs() < 1e-15);
    }
    // orthant probability 1/4 + asin(r) / (2 pi)
    for r in [-0.95, 0.5, 0.93] {
        let exact = 0.25 + f64::asin(r) / (2.0 * PI);
        assert!((bvn_cdf(0.0, 0.0, r) - exact).abs() < 1e-15);
    }
}

#[test]
fn bivariate_t_matches_quadrature() {
    let boxes = [((-1.0, 0.5), (-0.3, 1.2)), ((-3.0, -1.0), (0.2, 2.5)), ((0.1, 4.0), (-2.0, 3.0))];
    for nu in [1u32, 3, 4, 5, 8, 17, 30] {
        let n = nu as f64;
        for r in [-0.9, -0.2, 0.0, 0.5, 0.95] {
            let pdf = |x: f64, y: f64| {
                let s = 1.0 - r * r;
                let q = (x * x - 2.0 * r * x * y + y * y) / s;
                (1.0 + q / n).powf(-(n + 2.0) / 2.0) / (2.0 * PI * s.sqrt())
            };
            for &(a, b) in &boxes {
                let q = box_integral(pdf, a, b);
                let o = rect(|h, k| bvt_cdf(nu, h, k, r), a, b);
                assert!((q - o).abs() < 1e-13, "nu={nu} r={r} {a:?} {b:?}: {q} vs {o}");
            }
        }
        // margins share the mixing variable, so r = 0 is not independence;
        // the margin itself is recovered as k grows
        for h in [-0.4, 2.0] {
            let diff = (bvt_cdf(nu, h, 1e13, 0.3) - t_cdf(h, n)).abs();
            assert!(diff < 1e-12, "nu={nu} h={h}: {diff:e}");
        }
        let exact = 0.25 + f64::asin(0.6) / (2.0 * PI);
        assert!((bvt_cdf(nu, 0.0, 0.0, 0.6) - exact).abs() < 1e-14);
    }
}

#[test]
fn naive_tau_counts_ties() {
    let x = [1.0, 2.0, 2.0, 3.0];
    let y = [1.0, 1.0, 2.0, 3.0];
    // C = 4, D = 0, one x-only tie, one y-only tie: 4 / sqrt(5 * 5)
    assert!((naive_tau(&x, &y) - 0.8).abs() < 1e-15);
}
