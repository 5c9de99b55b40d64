//! Markov-switching R-vine model and its stepwise EM estimator.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CopulaData;
use crate::error::{Error, Result};
use crate::regime_chain::{
    hamilton_filter, kim_smoother, stationary_distribution, RegimeLogDensities, SmootherResult,
    TransitionMatrix,
};
use crate::rng::substream;
use crate::rvine::{fit_sequential, RVineSpec, VineFit};

/// Transition probabilities are kept inside `[CLAMP, 1 - CLAMP]`.
const CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct MsRVineModel {
    regimes: Vec<RVineSpec>,
    trans: TransitionMatrix,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    trans: TransitionMatrix,
    regimes: Vec<RVineSpec>,
}

impl TryFrom<ModelFile> for MsRVineModel {
    type Error = Error;
    fn try_from(f: ModelFile) -> Result<Self> {
        MsRVineModel::new(f.regimes, f.trans)
    }
}

impl From<MsRVineModel> for ModelFile {
    fn from(m: MsRVineModel) -> Self {
        ModelFile {
            trans: m.trans,
            regimes: m.regimes,
        }
    }
}

impl MsRVineModel {
    pub fn new(regimes: Vec<RVineSpec>, trans: TransitionMatrix) -> Result<Self> {
        let Some(first) = regimes.first() else {
            return Err(Error::InvalidInput("model needs at least one regime".into()));
        };
        if trans.dim() != regimes.len() {
            return Err(Error::Dimension {
                expected: regimes.len(),
                found: trans.dim(),
            });
        }
        if let Some(r) = regimes.iter().find(|r| r.dim() != first.dim()) {
            return Err(Error::Dimension {
                expected: first.dim(),
                found: r.dim(),
            });
        }
        Ok(MsRVineModel { regimes, trans })
    }

    /// Single regime, no switching.
    pub fn single(spec: RVineSpec) -> Self {
        MsRVineModel {
            regimes: vec![spec],
            trans: TransitionMatrix::new(vec![vec![1.0]]).expect("1x1 identity is stochastic"),
        }
    }

    pub fn dim(&self) -> usize {
        self.regimes[0].dim()
    }

    pub fn num_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn regimes(&self) -> &[RVineSpec] {
        &self.regimes
    }

    pub fn regime(&self, k: usize) -> &RVineSpec {
        &self.regimes[k]
    }

    pub fn trans(&self) -> &TransitionMatrix {
        &self.trans
    }

    pub fn with_trans(&self, trans: TransitionMatrix) -> Result<Self> {
        Self::new(self.regimes.clone(), trans)
    }

    pub fn with_regimes(&self, regimes: Vec<RVineSpec>) -> Result<Self> {
        Self::new(regimes, self.trans.clone())
    }

    /// Relabels regimes: new regime `k` is old regime `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let p = self.num_regimes();
        let mut seen = vec![false; p];
        if perm.len() != p || perm.iter().any(|&k| k >= p || std::mem::replace(&mut seen[k], true)) {
            return Err(Error::InvalidInput("not a permutation of the regimes".into()));
        }
        Self::new(
            perm.iter().map(|&k| self.regimes[k].clone()).collect(),
            self.trans.permuted(perm),
        )
    }

    /// Number of free parameters (copulas plus off-diagonal transitions).
    pub fn num_params(&self) -> usize {
        let p = self.num_regimes();
        self.regimes.iter().map(RVineSpec::num_params).sum::<usize>() + p * (p - 1)
    }

    pub fn regime_log_densities(&self, data: &CopulaData) -> Result<RegimeLogDensities> {
        let cols: Vec<Vec<f64>> = self
            .regimes
            .par_iter()
            .map(|r| r.log_density_rows(data))
            .collect::<Result<_>>()?;
        RegimeLogDensities::from_columns(&cols)
    }

    /// Hidden path from the stationary law, then one vine draw per row.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<(CopulaData, Vec<usize>)> {
        let p = self.num_regimes();
        let pi = if p == 1 {
            vec![1.0]
        } else {
            stationary_distribution(&self.trans)?
        };
        let mut chain = substream(seed, 0);
        let draw = |probs: &mut dyn Iterator<Item = f64>, rng: &mut crate::rng::Rng| -> usize {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut last = 0;
            for (k, q) in probs.enumerate() {
                acc += q;
                last = k;
                if u < acc {
                    return k;
                }
            }
            last
        };
        let mut states = Vec::with_capacity(n);
        for t in 0..n {
            let s = if t == 0 {
                draw(&mut pi.iter().copied(), &mut chain)
            } else {
                let prev = states[t - 1];
                draw(&mut (0..p).map(|i| self.trans.get(i, prev)), &mut chain)
            };
            states.push(s);
        }
        let mut rows = substream(seed, 1);
        let d = self.dim();
        let mut values = Vec::with_capacity(n * d);
        for &s in &states {
            values.extend(self.regimes[s].sample_with(&mut rows)?);
        }
        Ok((CopulaData::new(d, values)?, states))
    }
}

/// Log-likelihood with the states integrated out, started at the stationary law.
pub fn ms_log_likelihood(model: &MsRVineModel, data: &CopulaData) -> Result<f64> {
    let ld = model.regime_log_densities(data)?;
    Ok(hamilton_filter(&ld, &model.trans, None)?.loglik)
}

/// Filter and smoother output for `model` on `data`.
pub fn smooth(model: &MsRVineModel, data: &CopulaData) -> Result<(SmootherResult, f64)> {
    let ld = model.regime_log_densities(data)?;
    let fr = hamilton_filter(&ld, &model.trans, None)?;
    Ok((kim_smoother(&fr, &model.trans)?, fr.loglik))
}

/// Output of one EM iteration.
#[derive(Debug, Clone)]
pub struct EmStep {
    pub model: MsRVineModel,
    /// Log-likelihood of the model the step started from.
    pub loglik: f64,
    pub smoother: SmootherResult,
    pub fits: Vec<VineFit>,
}

/// Ratio of summed pairwise to summed marginal smoothed probabilities.
pub fn update_transition(sm: &SmootherResult, p: usize) -> Result<TransitionMatrix> {
    if sm.pairwise.is_empty() {
        return TransitionMatrix::sticky(p, if p == 1 { 1.0 } else { 0.9 });
    }
    let mut rows = vec![vec![0.0; p]; p];
    for j in 0..p {
        let den: f64 = sm.smoothed[..sm.smoothed.len() - 1].iter().map(|s| s[j]).sum();
        for (i, row) in rows.iter_mut().enumerate() {
            let num: f64 = sm.pairwise.iter().map(|pw| pw[i][j]).sum();
            row[j] = if den > 0.0 { num / den } else { (i == j) as u8 as f64 };
        }
    }
    if p > 1 {
        for j in 0..p {
            for row in rows.iter_mut() {
                row[j] = row[j].clamp(CLAMP, 1.0 - CLAMP);
            }
        }
    }
    TransitionMatrix::from_column_weights(rows)
}

/// E-step by Kim smoothing, M-step by closed-form transitions and weighted
/// stepwise vine fits.
pub fn em_step(model: &MsRVineModel, data: &CopulaData) -> Result<EmStep> {
    let (smoother, loglik) = smooth(model, data)?;
    let p = model.num_regimes();
    let trans = update_transition(&smoother, p)?;
    let fits: Vec<VineFit> = (0..p)
        .into_par_iter()
        .map(|k| {
            let w: Vec<f64> = smoother.smoothed.iter().map(|s| s[k]).collect();
            fit_sequential(&model.regimes[k], data, Some(&w))
        })
        .collect::<Result<_>>()?;
    let regimes = fits.iter().map(|f| f.spec.clone()).collect();
    Ok(EmStep {
        model: MsRVineModel::new(regimes, trans)?,
        loglik,
        smoother,
        fits,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    /// Relative log-likelihood change that stops the iteration.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmTrace {
    /// Log-likelihood after each iteration.
    pub logliks: Vec<f64>,
    /// Smoothed probabilities under the returned model.
    pub smoothed: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// 0-based iteration that produced the returned model.
    pub best_iteration: usize,
    /// Per regime, the stepwise fit behind the returned model.
    pub fits: Vec<VineFit>,
}

/// Iterates [`em_step`] and returns the iterate with the highest
/// log-likelihood.
pub fn em_fit(model0: &MsRVineModel, data: &CopulaData, opts: EmOptions) -> Result<(MsRVineModel, EmTrace)> {
    if opts.max_iter == 0 {
        return Err(Error::InvalidInput("max_iter must be positive".into()));
    }
    let mut current = model0.clone();
    let mut ll_cur = ms_log_likelihood(&current, data)?;
    let mut logliks = Vec::new();
    let mut best: Option<(MsRVineModel, f64, usize, Vec<VineFit>)> = None;
    let mut converged = false;
    for it in 0..opts.max_iter {
        let step = em_step(&current, data)?;
        let ll_new = ms_log_likelihood(&step.model, data)?;
        logliks.push(ll_new);
        if best.as_ref().is_none_or(|b| ll_new > b.1) {
            best = Some((step.model.clone(), ll_new, it, step.fits));
        }
        let rel = (ll_new - ll_cur).abs() / ll_new.abs().max(f64::MIN_POSITIVE);
        current = step.model;
        ll_cur = ll_new;
        if rel < opts.tol {
            converged = true;
            break;
        }
    }
    let (model, _, best_iteration, fits) = best.expect("at least one iteration");
    let (sm, _) = smooth(&model, data)?;
    Ok((
        model,
        EmTrace {
            iterations: logliks.len(),
            logliks,
            smoothed: sm.smoothed,
            converged,
            best_iteration,
            fits,
        },
    ))
}

/// Starting values: fit every regime to all rows, then refit regime `k` on
/// the half of the rows where it is most favoured relative to the other
/// regimes. Transition diagonal 0.9.
pub fn initialize(templates: &[RVineSpec], data: &CopulaData) -> Result<MsRVineModel> {
    let p = templates.len();
    if p == 0 {
        return Err(Error::InvalidInput("no regime templates".into()));
    }
    let d = templates[0].dim();
    if data.len() < 2 * p * d {
        return Err(Error::InvalidInput(format!(
            "{} rows are too few to initialise {p} regimes in dimension {d}",
            data.len()
        )));
    }
    let full: Vec<VineFit> = templates
        .par_iter()
        .map(|t| fit_sequential(t, data, None))
        .collect::<Result<_>>()?;
    if p == 1 {
        return Ok(MsRVineModel::single(full[0].spec.clone()));
    }
    let ld: Vec<Vec<f64>> = full
        .iter()
        .map(|f| f.spec.log_density_rows(data))
        .collect::<Result<_>>()?;
    let n = data.len();
    let half = n / 2;
    // Identical templates give identical fits and every score ties. Bands of
    // the shared log-density (strong rows first) break the symmetry instead.
    let twins = full.iter().all(|f| f.spec == full[0].spec);
    let regimes: Vec<RVineSpec> = (0..p)
        .into_par_iter()
        .map(|k| {
            let mut idx: Vec<usize> = (0..n).collect();
            if twins {
                idx.sort_by(|&a, &b| ld[0][b].total_cmp(&ld[0][a]).then(a.cmp(&b)));
                let start = k * (n - half) / (p - 1);
                idx = idx[start..start + half].to_vec();
            } else {
                let score = |t: usize| {
                    let other = (0..p)
                        .filter(|&j| j != k)
                        .map(|j| ld[j][t])
                        .fold(f64::NEG_INFINITY, f64::max);
                    ld[k][t] - other
                };
                idx.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
                idx.truncate(half);
            }
            idx.sort_unstable();
            fit_sequential(&templates[k], &data.select_rows(&idx), None).map(|f| f.spec)
        })
        .collect::<Result<_>>()?;
    MsRVineModel::new(regimes, TransitionMatrix::sticky(p, 0.9)?)
}
