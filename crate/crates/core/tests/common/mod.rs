//! Reference implementations used only by the tests. None of them share code
//! with the library beyond the standard normal / Student-t marginals.
#![allow(dead_code)]

use msvine::special::norm_cdf;
use msvine::{CopulaFamily, PairCopula};
use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Composite Gauss-Legendre rule on `[a, b]` with `panels` panels.
pub fn composite_rule(a: f64, b: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut xs = Vec::with_capacity(panels * order);
    let mut ws = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(lo + 0.5 * h * (x + 1.0));
            ws.push(0.5 * h * w);
        }
    }
    (xs, ws)
}

/// `P(X > h, Y > k)` for a standard bivariate normal with correlation `r`
/// (Genz's BVND: Drezner-Wesolowsky with Gauss-Legendre quadrature).
pub fn bvnu(h: f64, k: f64, r: f64) -> f64 {
    let lg = if r.abs() < 0.3 {
        6
    } else if r.abs() < 0.75 {
        12
    } else {
        20
    };
    let (gx, gw) = gauss_legendre(lg);
    // use the half rule: nodes x < 0 paired with their mirror
    let half: Vec<(f64, f64)> = gx.iter().zip(&gw).filter(|(x, _)| **x < 0.0).map(|(x, w)| (*x, *w)).collect();
    let phi = |x: f64| norm_cdf(x);
    let twopi = 2.0 * PI;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for &(x, w) in &half {
            for s in [1.0, -1.0] {
                let sn = (asr * (s * x + 1.0) / 2.0).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn * asr / (2.0 * twopi) + phi(-h) * phi(-k)
    } else {
        let mut k = k;
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k).powi(2);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            bvn = a * (-(bs / as_ + hk) / 2.0).exp()
                * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            if hk > -160.0 {
                let b = bs.sqrt();
                bvn -= (-hk / 2.0).exp() * twopi.sqrt() * phi(-b / a) * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for &(x, w) in &half {
                for s in [1.0, -1.0] {
                    let xs = (a * (s * x + 1.0)).powi(2);
                    let rs = (1.0 - xs).sqrt();
                    let asr = -(bs / xs + hk) / 2.0;
                    if asr > -100.0 {
                        bvn += a
                            * w
                            * asr.exp()
                            * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs - (1.0 + c * xs * (1.0 + d * xs)));
                    }
                }
            }
            bvn = -bvn / twopi;
        }
        if r > 0.0 {
            bvn + phi(-h.max(k))
        } else {
            let mut out = -bvn;
            if k > h {
                out += if h < 0.0 { phi(k) - phi(h) } else { phi(-h) - phi(-k) };
            }
            out
        }
    }
}

/// `P(X < h, Y < k)` for a standard bivariate normal.
pub fn bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    bvnu(-h, -k, r)
}

/// `P(X < h, Y < k)` for a standard bivariate t with integer `nu` degrees of
/// freedom (Dunnett-Sobel series as arranged by Genz).
pub fn bvt_cdf(nu: u32, h: f64, k: f64, r: f64) -> f64 {
    let n = nu as f64;
    let ors = 1.0 - r * r;
    let hrk = h - r * k;
    let krh = k - r * h;
    let (xnhk, xnkh) = if hrk.abs() + ors > 0.0 {
        (hrk * hrk / (hrk * hrk + ors * (n + k * k)), krh * krh / (krh * krh + ors * (n + h * h)))
    } else {
        (0.0, 0.0)
    };
    let hs = if hrk < 0.0 { -1.0 } else { 1.0 };
    let ks = if krh < 0.0 { -1.0 } else { 1.0 };
    let tpi = 2.0 * PI;
    let mut bvt;
    if nu % 2 == 0 {
        bvt = ors.sqrt().atan2(-r) / tpi;
        let mut gmph = h / (16.0 * (n + h * h)).sqrt();
        let mut gmpk = k / (16.0 * (n + k * k)).sqrt();
        let mut btnckh = 2.0 * xnkh.sqrt().atan2((1.0 - xnkh).sqrt()) / PI;
        let mut btpdkh = 2.0 * (xnkh * (1.0 - xnkh)).sqrt() / PI;
        let mut btnchk = 2.0 * xnhk.sqrt().atan2((1.0 - xnhk).sqrt()) / PI;
        let mut btpdhk = 2.0 * (xnhk * (1.0 - xnhk)).sqrt() / PI;
        for j in 1..=nu / 2 {
            let j = j as f64;
            bvt += gmph * (1.0 + ks * btnckh);
            bvt += gmpk * (1.0 + hs * btnchk);
            btnckh += btpdkh;
            btpdkh = 2.0 * j * btpdkh * (1.0 - xnkh) / (2.0 * j + 1.0);
            btnchk += btpdhk;
            btpdhk = 2.0 * j * btpdhk * (1.0 - xnhk) / (2.0 * j + 1.0);
            gmph = gmph * (2.0 * j - 1.0) / (2.0 * j * (1.0 + h * h / n));
            gmpk = gmpk * (2.0 * j - 1.0) / (2.0 * j * (1.0 + k * k / n));
        }
    } else {
        let snu = n.sqrt();
        let qhrk = (h * h + k * k - 2.0 * r * h * k + n * ors).sqrt();
        let hkrn = h * k + r * n;
        let hkn = h * k - n;
        let hpk = h + k;
        bvt = (-snu * (hkn * qhrk + hpk * hkrn)).atan2(hkn * hkrn - n * hpk * qhrk) / tpi;
        if bvt < -1e-15 {
            bvt += 1.0;
        }
        let mut gmph = h / (tpi * snu * (1.0 + h * h / n));
        let mut gmpk = k / (tpi * snu * (1.0 + k * k / n));
        let mut btnckh = xnkh.sqrt();
        let mut btpdkh = btnckh;
        let mut btnchk = xnhk.sqrt();
        let mut btpdhk = btnchk;
        for j in 1..=(nu - 1) / 2 {
            let j = j as f64;
            bvt += gmph * (1.0 + ks * btnckh);
            bvt += gmpk * (1.0 + hs * btnchk);
            btpdkh = (2.0 * j - 1.0) * btpdkh * (1.0 - xnkh) / (2.0 * j);
            btnckh += btpdkh;
            btpdhk = (2.0 * j - 1.0) * btpdhk * (1.0 - xnhk) / (2.0 * j);
            btnchk += btpdhk;
            gmph = 2.0 * j * gmph / ((2.0 * j + 1.0) * (1.0 + h * h / n));
            gmpk = 2.0 * j * gmpk / ((2.0 * j + 1.0) * (1.0 + k * k / n));
        }
    }
    bvt
}

fn gumbel_cdf(theta: f64, u: f64, v: f64) -> f64 {
    let s = (-u.ln()).powf(theta) + (-v.ln()).powf(theta);
    (-s.powf(1.0 / theta)).exp()
}

/// Copula CDF of `pc`. Student-t needs an integer `nu`.
pub fn copula_cdf(pc: &PairCopula, u: f64, v: f64) -> f64 {
    let p = pc.params();
    match pc.family() {
        CopulaFamily::Independence => u * v,
        CopulaFamily::Gaussian => {
            let x = msvine::special::norm_ppf(u);
            let y = msvine::special::norm_ppf(v);
            bvn_cdf(x, y, p[0])
        }
        CopulaFamily::StudentT => {
            let nu = p[1].round();
            assert!((nu - p[1]).abs() < 1e-12, "integer nu required");
            let x = msvine::special::t_ppf(u, nu);
            let y = msvine::special::t_ppf(v, nu);
            bvt_cdf(nu as u32, x, y, p[0])
        }
        CopulaFamily::Gumbel => gumbel_cdf(p[0], u, v),
        CopulaFamily::Gumbel180 => u + v - 1.0 + gumbel_cdf(p[0], 1.0 - u, 1.0 - v),
        CopulaFamily::Gumbel90 => v - gumbel_cdf(p[0], 1.0 - u, v),
        CopulaFamily::Gumbel270 => u - gumbel_cdf(p[0], u, 1.0 - v),
    }
}

/// Kendall's tau-b by counting all pairs.
pub fn naive_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            match (sign(x[i] - x[j]), sign(y[i] - y[j])) {
                (0, 0) => {}
                (0, _) => tx += 1,
                (_, 0) => ty += 1,
                (s, t) if s == t => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let num = (conc - disc) as f64;
    let den = (((conc + disc + tx) as f64) * ((conc + disc + ty) as f64)).sqrt();
    num / den
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Radical-inverse Halton point `i` in dimension `dim` (bases 2, 3, 5, 7).
pub fn halton(i: usize, dim: usize) -> f64 {
    let base = [2usize, 3, 5, 7, 11][dim];
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = i;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Correlation matrix implied by an all-Gaussian (or independence) vine:
/// every edge `(a, b | S)` fixes the partial correlation of `a, b` given `S`.
pub fn implied_correlation(spec: &msvine::RVineSpec) -> nalgebra::DMatrix<f64> {
    use nalgebra::DMatrix;
    let d = spec.dim();
    let mut sigma = DMatrix::<f64>::identity(d, d);
    for (r, c) in spec.edges() {
        let ((a, b), cond) = spec.matrix().edge_sets(r, c);
        let pc = spec.copula(r, c);
        let rho = match pc.family() {
            CopulaFamily::Gaussian => pc.params()[0],
            CopulaFamily::Independence => 0.0,
            f => panic!("{f:?} is not Gaussian"),
        };
        let (a, b) = (a - 1, b - 1);
        let s: Vec<usize> = cond.iter().map(|x| x - 1).collect();
        let (mut saa, mut sbb, mut proj) = (1.0, 1.0, 0.0);
        if !s.is_empty() {
            let k = s.len();
            let sss = DMatrix::from_fn(k, k, |i, j| sigma[(s[i], s[j])]);
            let inv = sss.try_inverse().expect("positive definite");
            let sa = nalgebra::DVector::from_fn(k, |i, _| sigma[(a, s[i])]);
            let sb = nalgebra::DVector::from_fn(k, |i, _| sigma[(b, s[i])]);
            saa -= (sa.transpose() * &inv * &sa)[(0, 0)];
            sbb -= (sb.transpose() * &inv * &sb)[(0, 0)];
            proj = (sa.transpose() * &inv * &sb)[(0, 0)];
        }
        let v = proj + rho * (saa * sbb).sqrt();
        sigma[(a, b)] = v;
        sigma[(b, a)] = v;
    }
    sigma
}

/// Closed-form Gaussian copula log-density with correlation `r`.
pub fn gaussian_copula_ln_density(r: &nalgebra::DMatrix<f64>, u: &[f64]) -> f64 {
    let d = u.len();
    let x = nalgebra::DVector::from_fn(d, |i, _| msvine::special::norm_ppf(u[i]));
    let chol = r.clone().cholesky().expect("positive definite");
    let ln_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let q = (x.transpose() * chol.inverse() * &x)[(0, 0)];
    -0.5 * ln_det - 0.5 * (q - x.norm_squared())
}

/// Every state path with its unnormalised log weight
/// `log pi(s_1) + sum log P(s_t | s_{t-1}) + sum log f(s_t)`.
pub fn enumerate_paths(
    ld: &msvine::RegimeLogDensities,
    trans: &msvine::TransitionMatrix,
    init: &[f64],
) -> Vec<(Vec<usize>, f64)> {
    let p = trans.dim();
    let n = ld.len();
    let total = p.pow(n as u32);
    (0..total)
        .map(|mut code| {
            let mut path = vec![0; n];
            for s in path.iter_mut() {
                *s = code % p;
                code /= p;
            }
            let mut w = init[path[0]].ln() + ld.get(0, path[0]);
            for t in 1..n {
                w += trans.get(path[t], path[t - 1]).ln() + ld.get(t, path[t]);
            }
            (path, w)
        })
        .collect()
}

pub fn logsumexp(x: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = x.into_iter().collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Random transition matrix and log-densities for `n` steps and `p` regimes.
pub fn random_instance(seed: u64, n: usize, p: usize) -> (msvine::RegimeLogDensities, msvine::TransitionMatrix) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = vec![vec![0.0; p]; p];
    for j in 0..p {
        let col: Vec<f64> = (0..p).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = col.iter().sum();
        for i in 0..p {
            rows[i][j] = col[i] / s;
        }
    }
    let trans = msvine::TransitionMatrix::from_column_weights(rows).unwrap();
    let values: Vec<f64> = (0..n * p).map(|_| rng.random_range(-4.0..3.0)).collect();
    (msvine::RegimeLogDensities::new(p, values).unwrap(), trans)
}
