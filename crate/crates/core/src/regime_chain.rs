//! Hidden first-order Markov chain: stationary law, Hamilton filter,
//! Kim smoother and an exhaustive path-enumeration oracle.
//!
//! Regimes are 0-based in memory; labels written to files are 1-based.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// `P[i][j] = P(S_t = i | S_{t-1} = j)`; columns sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    p: usize,
    /// Row-major.
    m: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = rows.len();
        if p == 0 {
            return Err(Error::Transition("no regimes".into()));
        }
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Transition("matrix is not square".into()));
        }
        let m: Vec<f64> = rows.concat();
        if let Some(x) = m.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Transition(format!("entry {x} outside [0, 1]")));
        }
        for j in 0..p {
            let s: f64 = (0..p).map(|i| m[i * p + j]).sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL * p as f64 * 10.0 {
                return Err(Error::Transition(format!("column {} sums to {s}", j + 1)));
            }
        }
        Ok(TransitionMatrix { p, m })
    }

    /// Two regimes with staying probabilities `a` (regime 1) and `b` (regime 2).
    pub fn two_state(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![vec![a, 1.0 - b], vec![1.0 - a, b]])
    }

    /// Diagonal `stay`, the rest of each column spread evenly.
    pub fn sticky(p: usize, stay: f64) -> Result<Self> {
        if p == 1 {
            return Self::new(vec![vec![1.0]]);
        }
        let off = (1.0 - stay) / (p - 1) as f64;
        Self::new(
            (0..p)
                .map(|i| (0..p).map(|j| if i == j { stay } else { off }).collect())
                .collect(),
        )
    }

    /// Normalizes each column of a nonnegative matrix.
    pub fn from_column_weights(rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = rows.len();
        let mut rows = rows;
        for j in 0..p {
            let s: f64 = rows.iter().map(|r| r[j]).sum();
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Transition(format!("column {} has no mass", j + 1)));
            }
            for r in rows.iter_mut() {
                r[j] /= s;
            }
        }
        Self::new(rows)
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.p + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.m.chunks(self.p).map(<[f64]>::to_vec).collect()
    }

    /// Same chain with regimes renamed: new regime `k` is old regime `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> TransitionMatrix {
        let p = self.p;
        let mut m = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                m[i * p + j] = self.get(perm[i], perm[j]);
            }
        }
        TransitionMatrix { p, m }
    }

    fn predict(&self, prev: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..self.p).map(|j| self.get(i, j) * prev[j]).sum();
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(t: TransitionMatrix) -> Self {
        t.rows()
    }
}

/// Solves `P pi = pi`, `sum(pi) = 1` after checking that 1 is the only
/// eigenvalue on the unit circle.
pub fn stationary_distribution(trans: &TransitionMatrix) -> Result<Vec<f64>> {
    let p = trans.p;
    let pm = DMatrix::from_row_slice(p, p, &trans.m);
    let on_circle = pm
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.norm() > 1.0 - 1e-9)
        .count();
    if on_circle != 1 {
        return Err(Error::Transition(format!(
            "chain is reducible or periodic ({on_circle} eigenvalues of modulus one)"
        )));
    }
    let mut a = pm - DMatrix::identity(p, p);
    let mut rhs = nalgebra::DVector::zeros(p);
    for j in 0..p {
        a[(p - 1, j)] = 1.0;
    }
    rhs[p - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Transition("singular stationary system".into()))?;
    if pi.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Transition("stationary distribution not positive".into()));
    }
    let s = pi.sum();
    Ok(pi.iter().map(|x| x / s).collect())
}

/// `T x p` table of `log f(u_t | S_t = k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeLogDensities {
    p: usize,
    /// Row-major `T x p`.
    v: Vec<f64>,
}

impl RegimeLogDensities {
    pub fn new(p: usize, values: Vec<f64>) -> Result<Self> {
        if p == 0 || values.len() % p != 0 {
            return Err(Error::Dimension {
                expected: p,
                found: values.len(),
            });
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite regime log-density".into()));
        }
        Ok(RegimeLogDensities { p, v: values })
    }

    /// One `T`-vector per regime.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let p = cols.len();
        let t = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != t) {
            return Err(Error::InvalidInput("regime columns differ in length".into()));
        }
        let mut v = Vec::with_capacity(t * p);
        for i in 0..t {
            v.extend(cols.iter().map(|c| c[i]));
        }
        Self::new(p, v)
    }

    pub fn regimes(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.v.len() / self.p
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.v[t * self.p..(t + 1) * self.p]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.v[t * self.p + k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    /// `P(S_t = k | u_1..u_{t-1})`, one row per t.
    pub predicted: Vec<Vec<f64>>,
    /// `P(S_t = k | u_1..u_t)`.
    pub filtered: Vec<Vec<f64>>,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherResult {
    /// `P(S_t = k | u_1..u_T)`.
    pub smoothed: Vec<Vec<f64>>,
    /// `pairwise[t][i][j] = P(S_{t+1} = i, S_t = j | u_1..u_T)`, `T - 1` entries.
    pub pairwise: Vec<Vec<Vec<f64>>>,
}

fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn check_init(init: &[f64], p: usize) -> Result<()> {
    if init.len() != p {
        return Err(Error::Dimension {
            expected: p,
            found: init.len(),
        });
    }
    let s: f64 = init.iter().sum();
    if init.iter().any(|x| !(*x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("initial distribution is not a probability vector".into()));
    }
    Ok(())
}

/// Forward recursion in log space. `init` defaults to the stationary law.
pub fn hamilton_filter(
    ld: &RegimeLogDensities,
    trans: &TransitionMatrix,
    init: Option<&[f64]>,
) -> Result<FilterResult> {
    let p = trans.p;
    if ld.p != p {
        return Err(Error::Dimension {
            expected: p,
            found: ld.p,
        });
    }
    let init = match init {
        Some(v) => {
            check_init(v, p)?;
            v.to_vec()
        }
        None if p == 1 => vec![1.0],
        None => stationary_distribution(trans)?,
    };
    let n = ld.len();
    let mut predicted = Vec::with_capacity(n);
    let mut filtered: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut loglik = 0.0;
    let mut joint = vec![0.0; p];
    for t in 0..n {
        let mut pred = vec![0.0; p];
        match filtered.last() {
            Some(prev) => trans.predict(prev, &mut pred),
            None => pred.copy_from_slice(&init),
        }
        for k in 0..p {
            joint[k] = pred[k].ln() + ld.get(t, k);
        }
        let c = logsumexp(&joint);
        if !c.is_finite() {
            return Err(Error::InvalidInput(format!(
                "observation {} has zero likelihood under every regime",
                t + 1
            )));
        }
        loglik += c;
        filtered.push(joint.iter().map(|j| (j - c).exp()).collect());
        predicted.push(pred);
    }
    Ok(FilterResult {
        predicted,
        filtered,
        loglik,
    })
}

/// Backward recursion on the filter output.
pub fn kim_smoother(fr: &FilterResult, trans: &TransitionMatrix) -> Result<SmootherResult> {
    let p = trans.p;
    let n = fr.filtered.len();
    if n == 0 {
        return Ok(SmootherResult {
            smoothed: Vec::new(),
            pairwise: Vec::new(),
        });
    }
    if fr.filtered[0].len() != p {
        return Err(Error::Dimension {
            expected: p,
            found: fr.filtered[0].len(),
        });
    }
    let mut smoothed = vec![Vec::new(); n];
    let mut pairwise = vec![Vec::new(); n - 1];
    smoothed[n - 1] = fr.filtered[n - 1].clone();
    for t in (0..n - 1).rev() {
        // ratio_i = smoothed_{t+1}(i) / predicted_{t+1}(i)
        let mut ratio = vec![0.0; p];
        for i in 0..p {
            let num = smoothed[t + 1][i];
            let den = fr.predicted[t + 1][i];
            ratio[i] = if den > 0.0 {
                num / den
            } else if num > 0.0 {
                return Err(Error::SmootherInconsistent { t: t + 1, regime: i + 1 });
            } else {
                0.0
            };
        }
        let f = &fr.filtered[t];
        let joint: Vec<Vec<f64>> = (0..p)
            .map(|i| (0..p).map(|j| trans.get(i, j) * f[j] * ratio[i]).collect())
            .collect();
        smoothed[t] = (0..p).map(|j| joint.iter().map(|row| row[j]).sum()).collect();
        pairwise[t] = joint;
    }
    Ok(SmootherResult { smoothed, pairwise })
}

/// Exact smoothing by summing over all `p^T` state paths.
pub fn oracle_smoother(
    ld: &RegimeLogDensities,
    trans: &TransitionMatrix,
    init: Option<&[f64]>,
) -> Result<(SmootherResult, f64)> {
    let p = trans.p;
    let n = ld.len();
    let paths = (p as f64).powi(n as i32);
    if paths > 1e6 {
        return Err(Error::InvalidInput(format!("{p}^{n} paths exceed the enumeration limit")));
    }
    let init = match init {
        Some(v) => v.to_vec(),
        None if p == 1 => vec![1.0],
        None => stationary_distribution(trans)?,
    };
    let paths = paths as usize;
    let mut logw = Vec::with_capacity(paths);
    let mut path = vec![0usize; n];
    for idx in 0..paths {
        let mut rest = idx;
        for s in path.iter_mut() {
            *s = rest % p;
            rest /= p;
        }
        let mut lw = 0.0;
        for t in 0..n {
            let prior = if t == 0 { init[path[0]] } else { trans.get(path[t], path[t - 1]) };
            lw += prior.ln() + ld.get(t, path[t]);
        }
        logw.push(lw);
    }
    let total = logsumexp(&logw);
    let mut smoothed = vec![vec![0.0; p]; n];
    let mut pairwise = vec![vec![vec![0.0; p]; p]; n.saturating_sub(1)];
    for (idx, lw) in logw.iter().enumerate() {
        let w = (lw - total).exp();
        let mut rest = idx;
        for s in path.iter_mut() {
            *s = rest % p;
            rest /= p;
        }
        for t in 0..n {
            smoothed[t][path[t]] += w;
            if t + 1 < n {
                pairwise[t][path[t + 1]][path[t]] += w;
            }
        }
    }
    Ok((SmootherResult { smoothed, pairwise }, total))
}

/// `n[i][j]` = number of moves from regime `j` to regime `i` (0-based labels).
pub fn transition_counts(path: &[usize], p: usize) -> Result<Vec<Vec<u64>>> {
    if let Some(&s) = path.iter().find(|&&s| s >= p) {
        return Err(Error::InvalidInput(format!("regime label {} outside 1..={p}", s + 1)));
    }
    let mut n = vec![vec![0u64; p]; p];
    for w in path.windows(2) {
        n[w[1]][w[0]] += 1;
    }
    Ok(n)
}

/// Writes `t, prob_regime_1, ..., prob_regime_p` with 1-based `t`.
pub fn write_probabilities_csv<P: AsRef<Path>>(path: P, probs: &[Vec<f64>]) -> Result<()> {
    let p = probs.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=p).map(|k| format!("prob_regime_{k}")));
    w.write_record(&header)?;
    for (t, row) in probs.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Centred moving average of width `w` (odd), shrinking at the ends.
pub fn moving_average(probs: &[Vec<f64>], w: usize) -> Vec<Vec<f64>> {
    let n = probs.len();
    let half = w / 2;
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(n);
            let p = probs[t].len();
            (0..p)
                .map(|k| probs[lo..hi].iter().map(|r| r[k]).sum::<f64>() / (hi - lo) as f64)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> TransitionMatrix {
        TransitionMatrix::two_state(0.95, 0.9).unwrap()
    }

    #[test]
    fn stationary() {
        let pi = stationary_distribution(&two_state()).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12 && (pi[1] - 1.0 / 3.0).abs() < 1e-12);
        let pi = stationary_distribution(&TransitionMatrix::two_state(0.7, 0.7).unwrap()).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12);
        let pi = stationary_distribution(&TransitionMatrix::two_state(0.5, 0.5).unwrap()).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12);
        assert!(stationary_distribution(&TransitionMatrix::two_state(1.0, 1.0).unwrap()).is_err());
        assert!(stationary_distribution(&TransitionMatrix::two_state(0.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn rejects_non_stochastic() {
        assert!(TransitionMatrix::new(vec![vec![0.9, 0.2], vec![0.2, 0.8]]).is_err());
        assert!(TransitionMatrix::new(vec![vec![1.1, 0.0], vec![-0.1, 1.0]]).is_err());
    }

    #[test]
    fn one_step_filter() {
        let ld = RegimeLogDensities::new(2, vec![2f64.ln(), 0.0]).unwrap();
        let tm = TransitionMatrix::two_state(0.5, 0.5).unwrap();
        let fr = hamilton_filter(&ld, &tm, Some(&[0.5, 0.5])).unwrap();
        assert!((fr.filtered[0][0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((fr.loglik - 1.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn equal_densities_give_no_information() {
        let tm = two_state();
        let ld = RegimeLogDensities::new(2, (0..20).map(|t| -(t as f64) * 0.1).flat_map(|x| [x, x]).collect()).unwrap();
        let fr = hamilton_filter(&ld, &tm, None).unwrap();
        let sm = kim_smoother(&fr, &tm).unwrap();
        let expect: f64 = (0..20).map(|t| -(t as f64) * 0.1).sum();
        assert!((fr.loglik - expect).abs() < 1e-12);
        for t in 0..20 {
            assert!((fr.filtered[t][0] - fr.predicted[t][0]).abs() < 1e-12);
            assert!((sm.smoothed[t][0] - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_step_hand_calculation() {
        // init (0.5,0.5), P = [[0.8,0.3],[0.2,0.7]], densities t0 (1,2), t1 (3,1)
        let tm = TransitionMatrix::new(vec![vec![0.8, 0.3], vec![0.2, 0.7]]).unwrap();
        let ld = RegimeLogDensities::new(2, vec![0.0, 2f64.ln(), 3f64.ln(), 0.0]).unwrap();
        let (sm, total) = oracle_smoother(&ld, &tm, Some(&[0.5, 0.5])).unwrap();
        // path weights: 11: .5*1*.8*3=1.2, 12: .5*1*.2*1=.1, 21: .5*2*.3*3=.9, 22: .5*2*.7*1=.7
        let z: f64 = 1.2 + 0.1 + 0.9 + 0.7;
        assert!((total - z.ln()).abs() < 1e-14);
        assert!((sm.smoothed[0][0] - 1.3 / z).abs() < 1e-14);
        assert!((sm.smoothed[1][0] - 2.1 / z).abs() < 1e-14);
        assert!((sm.pairwise[0][0][1] - 0.9 / z).abs() < 1e-14);
        let fr = hamilton_filter(&ld, &tm, Some(&[0.5, 0.5])).unwrap();
        let ks = kim_smoother(&fr, &tm).unwrap();
        assert!((ks.smoothed[0][0] - 1.3 / z).abs() < 1e-14);
    }

    #[test]
    fn counts() {
        let n = transition_counts(&[0, 0, 1, 1, 1, 0], 2).unwrap();
        assert_eq!(n, vec![vec![1, 1], vec![1, 2]]);
        let n = transition_counts(&[0, 1, 0, 1], 2).unwrap();
        assert_eq!(n[1][0], 2);
        assert_eq!(n[0][1], 1);
        let n = transition_counts(&[2; 7], 3).unwrap();
        assert_eq!(n[2][2], 6);
        assert!(transition_counts(&[0, 2], 2).is_err());
    }

    #[test]
    fn probabilities_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_probabilities_csv(&p, &[vec![0.25, 0.75]]).unwrap();
        let s = std::fs::read_to_string(&p).unwrap();
        assert_eq!(s, "t,prob_regime_1,prob_regime_2\n1,0.25,0.75\n");
        let ma = moving_average(&[vec![0.0], vec![1.0], vec![2.0]], 3);
        assert_eq!(ma, vec![vec![0.5], vec![1.0], vec![1.5]]);
    }
}
