//! Metropolis-within-Gibbs sampler for MS R-vine models, with posterior
//! diagnostics (ESS, credible intervals) and the DIC.
//!
//! One iteration draws the state path as a block (forward filtering,
//! backward sampling), then each column of the transition matrix from its
//! Dirichlet full conditional, then every pair-copula parameter vector by a
//! Metropolis-Hastings step whose proposal mixes a random walk with an
//! independence proposal centred at the maximum-likelihood mode.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CopulaData;
use crate::error::{Error, Result};
use crate::ms_em::{smooth, ms_log_likelihood, MsRVineModel};
use crate::pair_copula::{CopulaFamily, PairCopula};
use crate::regime_chain::{hamilton_filter, transition_counts, RegimeLogDensities, TransitionMatrix};
use crate::rng::substream;
use crate::rvine::{fit_sequential, EdgeLikelihood, RVineSpec};
use crate::special::{norm_cdf, norm_ln_pdf, norm_ppf};

/// Smallest random-walk and independence proposal scale.
pub const MIN_PROPOSAL_SCALE: f64 = 0.01;
const CHECKPOINT_EVERY: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    /// `alpha[i][j]`: Dirichlet weight of `P[i][j]` in column `j`.
    pub alpha: Vec<Vec<f64>>,
    pub rho: (f64, f64),
    pub theta: (f64, f64),
    pub nu: (f64, f64),
}

impl PriorSpec {
    /// Unit Dirichlet weights and the default parameter supports.
    pub fn flat(p: usize) -> Self {
        PriorSpec {
            alpha: vec![vec![1.0; p]; p],
            rho: (-0.999, 0.999),
            theta: (1.0, 17.0),
            nu: (2.0, 30.0),
        }
    }

    /// Support of each parameter of `family`.
    pub fn bounds(&self, family: CopulaFamily) -> Vec<(f64, f64)> {
        match family {
            CopulaFamily::Independence => Vec::new(),
            CopulaFamily::Gaussian => vec![self.rho],
            CopulaFamily::StudentT => vec![self.rho, self.nu],
            _ => vec![self.theta],
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.alpha.len() != p || self.alpha.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension {
                expected: p,
                found: self.alpha.len(),
            });
        }
        if self.alpha.iter().flatten().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidInput("Dirichlet weights must be positive".into()));
        }
        for (lo, hi) in [self.rho, self.theta, self.nu] {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidInput(format!("empty prior support [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Rule that orders the regimes of each draw.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum IdentStat {
    /// Leave labels as sampled.
    None,
    /// Sum of `|tau|` over the given trees (1-based); all trees if empty.
    #[default]
    SumAbsTau,
    SumAbsTauTrees(Vec<usize>),
}

impl std::str::FromStr for IdentStat {
    type Err = Error;

    /// `none`, `tau` or `tau:1,2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "none" => Ok(IdentStat::None),
            "tau" => Ok(IdentStat::SumAbsTau),
            _ => {
                let trees = s
                    .strip_prefix("tau:")
                    .ok_or_else(|| Error::InvalidInput(format!("unknown identification statistic {s:?}")))?;
                let trees = trees
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<usize>()
                            .ok()
                            .filter(|&k| k > 0)
                            .ok_or_else(|| Error::InvalidInput(format!("bad tree index {t:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(IdentStat::SumAbsTauTrees(trees))
            }
        }
    }
}

impl IdentStat {
    fn value(&self, spec: &RVineSpec) -> f64 {
        let in_set = |tree: usize| match self {
            IdentStat::SumAbsTauTrees(t) => t.contains(&tree),
            _ => true,
        };
        spec.edges()
            .filter(|&(r, _)| in_set(spec.matrix().tree_of_row(r)))
            .map(|(r, c)| spec.copula(r, c).tau().abs())
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Probability of the random-walk component.
    pub proposal_weight: f64,
    pub ident: IdentStat,
    /// Where to write the chain state every 1000 iterations.
    pub checkpoint: Option<PathBuf>,
}

impl ChainConfig {
    pub fn new(iterations: usize, burnin: usize, thin: usize, seed: u64) -> Self {
        ChainConfig {
            iterations,
            burnin,
            thin,
            seed,
            proposal_weight: 0.5,
            ident: IdentStat::default(),
            checkpoint: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.burnin >= self.iterations {
            return Err(Error::InvalidInput("iterations must exceed burnin".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidInput("thin must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.proposal_weight) {
            return Err(Error::InvalidInput("proposal weight must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraw {
    /// 1-based iteration of the chain.
    pub iteration: usize,
    pub model: MsRVineModel,
    /// 0-based regime per observation.
    pub states: Vec<usize>,
}

/// Centre and scale of the independence proposal per edge.
#[derive(Debug, Clone)]
pub struct ProposalInfo {
    pub modes: Vec<RVineSpec>,
    /// Per regime, row-major `d x d` standard errors.
    pub std_errors: Vec<Vec<Vec<f64>>>,
}

impl ProposalInfo {
    /// Weighted stepwise fit at the smoothed probabilities of `model`.
    pub fn from_model(model: &MsRVineModel, data: &CopulaData) -> Result<Self> {
        let (sm, _) = smooth(model, data)?;
        let fits = (0..model.num_regimes())
            .into_par_iter()
            .map(|k| {
                let w: Vec<f64> = sm.smoothed.iter().map(|s| s[k]).collect();
                fit_sequential(model.regime(k), data, Some(&w))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProposalInfo {
            modes: fits.iter().map(|f| f.spec.clone()).collect(),
            std_errors: fits.into_iter().map(|f| f.std_errors).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<PosteriorDraw>,
    /// Acceptance rate of the copula updates per regime.
    pub acceptance: Vec<f64>,
    /// Sweeps in which every proposal of a regime was rejected.
    pub all_rejected_sweeps: usize,
    /// False when regimes differ in structure and labels were kept as sampled.
    pub relabeled: bool,
}

/// Draws the state path from its joint posterior given the parameters.
pub fn sample_states<R: Rng + ?Sized>(
    ld: &RegimeLogDensities,
    trans: &TransitionMatrix,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = ld.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let fr = hamilton_filter(ld, trans, None)?;
    let p = trans.dim();
    let mut states = vec![0; n];
    states[n - 1] = draw_index(&fr.filtered[n - 1], rng);
    let mut w = vec![0.0; p];
    for t in (0..n - 1).rev() {
        let next = states[t + 1];
        for (j, wj) in w.iter_mut().enumerate() {
            *wj = trans.get(next, j) * fr.filtered[t][j];
        }
        states[t] = draw_index(&w, rng);
    }
    Ok(states)
}

fn draw_index<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let total: f64 = w.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, x) in w.iter().enumerate() {
        acc += x;
        if u < acc {
            return k;
        }
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(w.len() - 1)
}

/// Independent Dirichlet draws for the columns, with weights `alpha + counts`.
pub fn update_transition<R: Rng + ?Sized>(
    counts: &[Vec<u64>],
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<TransitionMatrix> {
    let p = counts.len();
    prior.validate(p)?;
    let mut rows = vec![vec![0.0; p]; p];
    for j in 0..p {
        loop {
            let mut s = 0.0;
            for i in 0..p {
                let shape = prior.alpha[i][j] + counts[i][j] as f64;
                let g = Gamma::new(shape, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
                rows[i][j] = g.sample(rng);
                s += rows[i][j];
            }
            if s > 0.0 {
                for row in rows.iter_mut() {
                    row[j] /= s;
                }
                break;
            }
        }
    }
    TransitionMatrix::from_column_weights(rows)
}

/// `ln(Phi(b) - Phi(a))` without cancellation in the upper tail.
fn ln_normal_mass(a: f64, b: f64) -> f64 {
    let m = if a > 0.0 {
        norm_cdf(-a) - norm_cdf(-b)
    } else {
        norm_cdf(b) - norm_cdf(a)
    };
    m.ln()
}

struct TruncNormal {
    mu: f64,
    sd: f64,
    lo: f64,
    hi: f64,
}

impl TruncNormal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b) = ((self.lo - self.mu) / self.sd, (self.hi - self.mu) / self.sd);
        // sample the mirrored variable when the window lies in the upper tail
        let flip = a > 0.0;
        let (a, b) = if flip { (-b, -a) } else { (a, b) };
        let (pa, pb) = (norm_cdf(a), norm_cdf(b));
        let z = if pb - pa > 1e-300 {
            let u = pa + rng.random::<f64>() * (pb - pa);
            norm_ppf(u).clamp(a, b)
        } else {
            a + rng.random::<f64>() * (b - a)
        };
        let z = if flip { -z } else { z };
        (self.mu + self.sd * z).clamp(self.lo, self.hi)
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return f64::NEG_INFINITY;
        }
        let (a, b) = ((self.lo - self.mu) / self.sd, (self.hi - self.mu) / self.sd);
        let mass = ln_normal_mass(a, b);
        if mass.is_finite() {
            norm_ln_pdf((x - self.mu) / self.sd) - self.sd.ln() - mass
        } else {
            -(self.hi - self.lo).ln()
        }
    }
}

/// Mixture proposal for one parameter vector.
struct EdgeProposal {
    weight: f64,
    bounds: Vec<(f64, f64)>,
    rw_scale: Vec<f64>,
    mode: Vec<f64>,
    mode_scale: Vec<f64>,
}

impl EdgeProposal {
    fn component(&self, centre: &[f64], scale: &[f64], i: usize) -> TruncNormal {
        let (lo, hi) = self.bounds[i];
        TruncNormal {
            mu: centre[i],
            sd: scale[i],
            lo,
            hi,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, current: &[f64], rng: &mut R) -> Vec<f64> {
        let rw = rng.random::<f64>() < self.weight;
        (0..current.len())
            .map(|i| {
                if rw {
                    self.component(current, &self.rw_scale, i).sample(rng)
                } else {
                    self.component(&self.mode, &self.mode_scale, i).sample(rng)
                }
            })
            .collect()
    }

    /// `ln q(to | from)`.
    fn ln_q(&self, to: &[f64], from: &[f64]) -> f64 {
        let rw: f64 = (0..to.len())
            .map(|i| self.component(from, &self.rw_scale, i).ln_pdf(to[i]))
            .sum();
        let ind: f64 = (0..to.len())
            .map(|i| self.component(&self.mode, &self.mode_scale, i).ln_pdf(to[i]))
            .sum();
        let a = self.weight.ln() + rw;
        let b = (1.0 - self.weight).ln() + ind;
        let m = a.max(b);
        if m == f64::NEG_INFINITY {
            m
        } else {
            m + ((a - m).exp() + (b - m).exp()).ln()
        }
    }
}

fn in_support(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| {
            let eps = 1e-9 * (hi - lo);
            v.clamp(lo + eps, hi - eps)
        })
        .collect()
}

/// One Metropolis-Hastings sweep over the edges of `spec`, tree by tree and
/// by column within a tree. The likelihood is the vine density of `rows`.
/// Returns the updated spec and one acceptance flag per non-independence edge.
#[allow(clippy::too_many_arguments)]
pub fn update_copula_params<R: Rng + ?Sized>(
    spec: &RVineSpec,
    rows: &CopulaData,
    mode: &RVineSpec,
    std_errors: &[Vec<f64>],
    prior: &PriorSpec,
    proposal_weight: f64,
    rng: &mut R,
) -> Result<(RVineSpec, Vec<bool>)> {
    let d = spec.dim();
    let mut current = spec.clone();
    let mut cache = EdgeLikelihood::new(&current, rows)?;
    let mut ll = cache.total();
    let mut accepted = Vec::new();
    for (r, c) in spec.active_edges() {
        let pc = current.copula(r, c).clone();
        let family = pc.family();
        let bounds = prior.bounds(family);
        let se = &std_errors[r * d + c];
        let scale: Vec<f64> = (0..bounds.len())
            .map(|i| se.get(i).copied().unwrap_or(f64::NAN).max(MIN_PROPOSAL_SCALE))
            .collect();
        let prop = EdgeProposal {
            weight: proposal_weight,
            rw_scale: scale.clone(),
            mode: in_support(mode.copula(r, c).params(), &bounds),
            mode_scale: scale,
            bounds: bounds.clone(),
        };
        let x = in_support(pc.params(), &bounds);
        let y = prop.draw(&x, rng);
        let Ok(cand) = PairCopula::new(family, y.clone()) else {
            accepted.push(false);
            continue;
        };
        let mut next = current.clone();
        next.set_copula(r, c, cand)?;
        let trial = cache.with_edge(&next, r, c);
        let ll_new = trial.total();
        let ln_ratio = ll_new - ll + prop.ln_q(&x, &y) - prop.ln_q(&y, &x);
        let accept = ln_ratio.is_finite() && rng.random::<f64>().ln() < ln_ratio;
        if accept {
            current = next;
            cache = trial;
            ll = ll_new;
        }
        accepted.push(accept);
    }
    Ok((current, accepted))
}

#[derive(Serialize)]
struct Checkpoint<'a> {
    iteration: usize,
    model: &'a MsRVineModel,
    states: &'a [usize],
}

fn write_checkpoint(path: &Path, iteration: usize, model: &MsRVineModel, states: &[usize]) -> Result<()> {
    let cp = Checkpoint {
        iteration,
        model,
        states,
    };
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(&cp)?)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Runs the sampler from `model0`, keeps every `thin`-th iteration after
/// `burnin`, then orders the regimes of each kept draw by `cfg.ident`.
pub fn gibbs_run(
    model0: &MsRVineModel,
    data: &CopulaData,
    cfg: &ChainConfig,
    prior: &PriorSpec,
) -> Result<ChainOutput> {
    let info = ProposalInfo::from_model(model0, data)?;
    gibbs_run_with(model0, data, cfg, prior, &info)
}

/// [`gibbs_run`] with explicit proposal centres and scales.
pub fn gibbs_run_with(
    model0: &MsRVineModel,
    data: &CopulaData,
    cfg: &ChainConfig,
    prior: &PriorSpec,
    info: &ProposalInfo,
) -> Result<ChainOutput> {
    cfg.validate()?;
    let p = model0.num_regimes();
    prior.validate(p)?;
    if model0.dim() != data.dim() {
        return Err(Error::Dimension {
            expected: model0.dim(),
            found: data.dim(),
        });
    }
    let mut rng = substream(cfg.seed, 0);
    let mut model = model0.clone();
    let mut draws = Vec::with_capacity((cfg.iterations - cfg.burnin) / cfg.thin + 1);
    let mut accepted = vec![0usize; p];
    let mut proposed = vec![0usize; p];
    let mut all_rejected_sweeps = 0;
    let mut states = vec![0usize; data.len()];

    for it in 1..=cfg.iterations {
        if p > 1 {
            let ld = model.regime_log_densities(data)?;
            states = sample_states(&ld, model.trans(), &mut rng)?;
            let counts = transition_counts(&states, p)?;
            model = model.with_trans(update_transition(&counts, prior, &mut rng)?)?;
        }
        let mut regimes = Vec::with_capacity(p);
        for k in 0..p {
            let idx: Vec<usize> = (0..states.len()).filter(|&t| states[t] == k).collect();
            let rows = data.select_rows(&idx);
            let (spec, flags) = update_copula_params(
                model.regime(k),
                &rows,
                &info.modes[k],
                &info.std_errors[k],
                prior,
                cfg.proposal_weight,
                &mut rng,
            )?;
            let acc = flags.iter().filter(|&&a| a).count();
            if !flags.is_empty() && acc == 0 {
                all_rejected_sweeps += 1;
            }
            accepted[k] += acc;
            proposed[k] += flags.len();
            regimes.push(spec);
        }
        model = model.with_regimes(regimes)?;

        if it > cfg.burnin && (it - cfg.burnin) % cfg.thin == 0 {
            draws.push(PosteriorDraw {
                iteration: it,
                model: model.clone(),
                states: states.clone(),
            });
        }
        if let Some(path) = &cfg.checkpoint {
            if it % CHECKPOINT_EVERY == 0 {
                write_checkpoint(path, it, &model, &states)?;
            }
        }
    }

    let structural = model0
        .regimes()
        .windows(2)
        .all(|w| w[0].same_structure(&w[1]));
    let relabeled = structural && cfg.ident != IdentStat::None && p > 1;
    if relabeled {
        for draw in draws.iter_mut() {
            relabel(draw, &cfg.ident)?;
        }
    }
    Ok(ChainOutput {
        draws,
        acceptance: accepted
            .iter()
            .zip(&proposed)
            .map(|(&a, &n)| if n == 0 { f64::NAN } else { a as f64 / n as f64 })
            .collect(),
        all_rejected_sweeps,
        relabeled,
    })
}

/// Sorts the regimes of `draw` by increasing statistic (stable).
pub fn relabel(draw: &mut PosteriorDraw, stat: &IdentStat) -> Result<()> {
    let values: Vec<f64> = draw.model.regimes().iter().map(|s| stat.value(s)).collect();
    let mut perm: Vec<usize> = (0..values.len()).collect();
    perm.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut inverse = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    draw.model = draw.model.permuted(&perm)?;
    for s in draw.states.iter_mut() {
        *s = inverse[*s];
    }
    Ok(())
}

/// Identification statistic of every regime of `model`.
pub fn ident_values(model: &MsRVineModel, stat: &IdentStat) -> Vec<f64> {
    model.regimes().iter().map(|s| stat.value(s)).collect()
}

/// `P(S_t = k | data)` as the share of draws with `states[t] == k`.
pub fn state_probabilities(draws: &[PosteriorDraw], p: usize) -> Vec<Vec<f64>> {
    let n = draws.first().map_or(0, |d| d.states.len());
    let mut probs = vec![vec![0.0; p]; n];
    for d in draws {
        for (t, &s) in d.states.iter().enumerate() {
            probs[t][s] += 1.0;
        }
    }
    let r = draws.len().max(1) as f64;
    for row in probs.iter_mut() {
        for x in row.iter_mut() {
            *x /= r;
        }
    }
    probs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ess {
    pub ess: f64,
    /// The chain is constant; `ess` is then its length.
    pub degenerate: bool,
}

/// `n / (1 + 2 sum rho_k)`, summing autocorrelations up to the first
/// nonpositive one.
pub fn effective_sample_size(chain: &[f64]) -> Result<Ess> {
    let n = chain.len();
    if n < 10 {
        return Err(Error::InvalidInput("effective sample size needs at least 10 values".into()));
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = chain.iter().map(|x| x - mean).collect();
    let var = dev.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if var <= 1e-300 * mean.abs().max(1.0) {
        return Ok(Ess {
            ess: n as f64,
            degenerate: true,
        });
    }
    let mut sum = 0.0;
    for k in 1..n {
        let rho = dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * var);
        if rho <= 0.0 {
            break;
        }
        sum += rho;
    }
    Ok(Ess {
        ess: n as f64 / (1.0 + 2.0 * sum),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Intervals {
    pub symmetric: (f64, f64),
    pub hpd: (f64, f64),
}

/// Linear-interpolation sample quantile (`(n - 1) q` positioning).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed and highest-posterior-density intervals at `level`.
pub fn credible_intervals(samples: &[f64], level: f64) -> Result<Intervals> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} outside (0, 1)")));
    }
    if samples.len() < 2 {
        return Err(Error::InvalidInput("too few samples for a credible interval".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("NaN sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    let symmetric = (quantile(&s, alpha / 2.0), quantile(&s, 1.0 - alpha / 2.0));
    let n = s.len();
    let k = ((level * n as f64).ceil() as usize).clamp(1, n);
    let mut best = 0;
    for i in 1..=n - k {
        if s[i + k - 1] - s[i] < s[best + k - 1] - s[best] {
            best = i;
        }
    }
    Ok(Intervals {
        symmetric,
        hpd: (s[best], s[best + k - 1]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicResult {
    pub dic: f64,
    pub p_d: f64,
    pub mean_deviance: f64,
    /// Posterior-mean parameters had to be moved into the admissible domain.
    pub projected: bool,
}

fn mean_model(draws: &[PosteriorDraw]) -> Result<(MsRVineModel, bool)> {
    let first = &draws[0].model;
    let p = first.num_regimes();
    let n = draws.len() as f64;
    let mut projected = false;
    let mut regimes = Vec::with_capacity(p);
    for k in 0..p {
        let template = first.regime(k);
        if draws.iter().any(|d| !d.model.regime(k).same_structure(template)) {
            return Err(Error::InvalidInput(
                "draws differ in structure; parameters cannot be averaged".into(),
            ));
        }
        let mut spec = template.clone();
        for (r, c) in template.active_edges() {
            let family = template.family(r, c);
            let arity = family.arity();
            let mut mean = vec![0.0; arity];
            for draw in draws {
                for (m, v) in mean.iter_mut().zip(draw.model.regime(k).copula(r, c).params()) {
                    *m += v / n;
                }
            }
            let pc = match PairCopula::new(family, mean.clone()) {
                Ok(pc) => pc,
                Err(_) => {
                    projected = true;
                    let bounds = PriorSpec::flat(1).bounds(family);
                    PairCopula::new(family, in_support(&mean, &bounds))?
                }
            };
            spec.set_copula(r, c, pc)?;
        }
        regimes.push(spec);
    }
    let mut rows = vec![vec![0.0; p]; p];
    for draw in draws {
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x += draw.model.trans().get(i, j) / n;
            }
        }
    }
    let trans = TransitionMatrix::from_column_weights(rows)?;
    Ok((MsRVineModel::new(regimes, trans)?, projected))
}

/// Deviance information criterion with the states integrated out:
/// `D = -2 loglik`, `DIC = 2 mean(D) - D(posterior mean)`.
pub fn dic(draws: &[PosteriorDraw], data: &CopulaData) -> Result<DicResult> {
    if draws.len() < 100 {
        return Err(Error::InvalidInput(format!(
            "DIC needs at least 100 draws, got {}",
            draws.len()
        )));
    }
    let dev: Vec<f64> = draws
        .par_iter()
        .map(|d| ms_log_likelihood(&d.model, data).map(|ll| -2.0 * ll))
        .collect::<Result<_>>()?;
    let mean_deviance = dev.iter().sum::<f64>() / dev.len() as f64;
    let (mean, projected) = mean_model(draws)?;
    let d_mean = -2.0 * ms_log_likelihood(&mean, data)?;
    Ok(DicResult {
        dic: 2.0 * mean_deviance - d_mean,
        p_d: mean_deviance - d_mean,
        mean_deviance,
        projected,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub ci90_symmetric: (f64, f64),
    pub ci90_hpd: (f64, f64),
    pub ci95_symmetric: (f64, f64),
    pub ci95_hpd: (f64, f64),
}

impl ParamSummary {
    pub fn new(name: String, x: &[f64]) -> Result<Self> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        let ess = effective_sample_size(x)?.ess;
        let c90 = credible_intervals(x, 0.90)?;
        let c95 = credible_intervals(x, 0.95)?;
        Ok(ParamSummary {
            name,
            mean,
            sd,
            ess,
            ci90_symmetric: c90.symmetric,
            ci90_hpd: c90.hpd,
            ci95_symmetric: c95.symmetric,
            ci95_hpd: c95.hpd,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainSummary {
    pub draws: usize,
    pub acceptance: Vec<f64>,
    pub relabeled: bool,
    /// Kendall's tau per edge, per regime.
    pub regimes: Vec<Vec<ParamSummary>>,
    pub trans: Vec<ParamSummary>,
    pub dic: Option<DicResult>,
}

/// Column of edge taus `(label, values)` for regime `k`.
pub fn tau_chains(draws: &[PosteriorDraw], k: usize) -> Vec<(String, Vec<f64>)> {
    let Some(first) = draws.first() else { return Vec::new() };
    let spec = first.model.regime(k);
    spec.active_edges()
        .into_iter()
        .map(|(r, c)| {
            let label = format!("tau_{}", spec.matrix().edge_label(r, c));
            let v = draws.iter().map(|d| d.model.regime(k).copula(r, c).tau()).collect();
            (label, v)
        })
        .collect()
}

/// Transition entries `(p{i}{j}, values)`, 1-based.
pub fn trans_chains(draws: &[PosteriorDraw]) -> Vec<(String, Vec<f64>)> {
    let Some(first) = draws.first() else { return Vec::new() };
    let p = first.model.num_regimes();
    let mut out = Vec::new();
    for j in 0..p {
        for i in 0..p {
            let v = draws.iter().map(|d| d.model.trans().get(i, j)).collect();
            out.push((format!("p{}{}", i + 1, j + 1), v));
        }
    }
    out
}

pub fn summarize(out: &ChainOutput, dic: Option<DicResult>) -> Result<ChainSummary> {
    let p = out.draws.first().map_or(0, |d| d.model.num_regimes());
    let regimes = (0..p)
        .map(|k| {
            tau_chains(&out.draws, k)
                .into_iter()
                .map(|(name, v)| ParamSummary::new(name, &v))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let trans = if p > 1 {
        trans_chains(&out.draws)
            .into_iter()
            .map(|(name, v)| ParamSummary::new(name, &v))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(ChainSummary {
        draws: out.draws.len(),
        acceptance: out.acceptance.clone(),
        relabeled: out.relabeled,
        regimes,
        trans,
        dic,
    })
}

fn write_columns(path: &Path, iterations: &[usize], cols: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration".to_string()];
    header.extend(cols.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for (i, it) in iterations.iter().enumerate() {
        let mut rec = vec![it.to_string()];
        rec.extend(cols.iter().map(|(_, v)| v[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `regime_k.csv`, `trans.csv` and `states.csv` into `dir`.
pub fn write_chain_csvs(dir: &Path, draws: &[PosteriorDraw]) -> Result<()> {
    let iterations: Vec<usize> = draws.iter().map(|d| d.iteration).collect();
    let p = draws.first().map_or(0, |d| d.model.num_regimes());
    for k in 0..p {
        write_columns(&dir.join(format!("regime_{}.csv", k + 1)), &iterations, &tau_chains(draws, k))?;
    }
    write_columns(&dir.join("trans.csv"), &iterations, &trans_chains(draws))?;
    let mut w = csv::Writer::from_path(dir.join("states.csv"))?;
    let n = draws.first().map_or(0, |d| d.states.len());
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=n).map(|t| format!("s{t}")));
    w.write_record(&header)?;
    for d in draws {
        let mut rec = vec![d.iteration.to_string()];
        rec.extend(d.states.iter().map(|s| (s + 1).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Evenly spaced subsample of at most `keep` draws, last draw included.
pub fn subsample(draws: Vec<PosteriorDraw>, keep: usize) -> Vec<PosteriorDraw> {
    let n = draws.len();
    if keep == 0 || n <= keep {
        return draws;
    }
    let picks: Vec<usize> = (0..keep).map(|i| n - 1 - (i * n) / keep).rev().collect();
    let mut out = Vec::with_capacity(keep);
    let mut it = draws.into_iter().enumerate();
    for &k in &picks {
        for (i, d) in it.by_ref() {
            if i == k {
                out.push(d);
                break;
            }
        }
    }
    out
}
