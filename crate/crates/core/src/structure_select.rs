//! Sequential structure selection: Kendall's tau graphs, maximum spanning
//! trees, AIC family choice per edge, and the rolling-window comparison of
//! fixed recipes.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;

use crate::data::CopulaData;
use crate::error::{Error, Result};
use crate::pair_copula::{select_family, CopulaFamily, PairCopula, WeightedPairSample, U_MAX, U_MIN};
use crate::rvine::{RVineMatrix, RVineSpec};

/// One-sided 5% critical value of the standard normal.
const INDEPENDENCE_CRITICAL: f64 = 1.645;

/// Tau-b with tie correction in `O(n log n)` (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidInput("Kendall's tau needs at least two pairs".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in Kendall's tau input".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |t: i64| t * (t - 1) / 2;
    let n0 = pairs(n as i64);
    let (mut tie_x, mut tie_xy) = (0i64, 0i64);
    let (mut run_x, mut run_xy) = (1i64, 1i64);
    for k in 1..n {
        let (a, b) = (idx[k - 1], idx[k]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                tie_xy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tie_x += pairs(run_x);
            tie_xy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tie_x += pairs(run_x);
    tie_xy += pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut tie_y = 0i64;
    let mut run_y = 1i64;
    for k in 1..n {
        if ys[k] == ys[k - 1] {
            run_y += 1;
        } else {
            tie_y += pairs(run_y);
            run_y = 1;
        }
    }
    tie_y += pairs(run_y);

    Ok(tau_b(n0, tie_x, tie_y, tie_xy, swaps))
}

pub(crate) fn tau_b(n0: i64, tie_x: i64, tie_y: i64, tie_xy: i64, discordant: i64) -> f64 {
    let num = n0 - tie_x - tie_y + tie_xy - 2 * discordant;
    let den = ((n0 - tie_x) as f64 * (n0 - tie_y) as f64).sqrt();
    if den == 0.0 {
        f64::NAN
    } else {
        num as f64 / den
    }
}

/// Stable merge sort returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

fn checked_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    let t = kendall_tau(x, y)?;
    if t.is_nan() {
        Err(Error::InvalidInput("constant margin in Kendall's tau".into()))
    } else {
        Ok(t)
    }
}

/// Undirected graph; `None` marks a pair that may not be joined.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    n: usize,
    w: Vec<Option<f64>>,
}

impl WeightedGraph {
    pub fn new(n: usize) -> Self {
        WeightedGraph {
            n,
            w: vec![None; n * n],
        }
    }

    pub fn complete(n: usize, weight: impl Fn(usize, usize) -> f64) -> Self {
        let mut g = Self::new(n);
        for i in 0..n {
            for j in i + 1..n {
                g.set(i, j, weight(i, j));
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn set(&mut self, i: usize, j: usize, w: f64) {
        self.w[i * self.n + j] = Some(w);
        self.w[j * self.n + i] = Some(w);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.w[i * self.n + j]
    }
}

/// Maximum spanning tree by Prim's algorithm from node 0. Among equal weights
/// the lexicographically smallest edge `(min, max)` wins. Edges are returned
/// as `(i, j)` with `i < j`, sorted.
pub fn mst(g: &WeightedGraph) -> Result<Vec<(usize, usize)>> {
    let n = g.n;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut in_tree = vec![false; n];
    in_tree[0] = true;
    let mut edges = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let mut best: Option<(f64, (usize, usize), usize)> = None;
        for i in (0..n).filter(|&i| in_tree[i]) {
            for j in (0..n).filter(|&j| !in_tree[j]) {
                let Some(w) = g.get(i, j) else { continue };
                let key = (i.min(j), i.max(j));
                let better = match &best {
                    None => true,
                    Some((bw, bk, _)) => match w.total_cmp(bw) {
                        Ordering::Greater => true,
                        Ordering::Equal => key < *bk,
                        Ordering::Less => false,
                    },
                };
                if better {
                    best = Some((w, key, j));
                }
            }
        }
        let (_, key, j) = best.ok_or_else(|| Error::InvalidInput("graph is not connected".into()))?;
        in_tree[j] = true;
        edges.push(key);
    }
    edges.sort_unstable();
    Ok(edges)
}

/// Options for [`select_structure`].
#[derive(Debug, Clone)]
pub struct SelectOptions {
    /// Catalogue per tree; the last entry applies to all deeper trees.
    pub catalogues: Vec<Vec<CopulaFamily>>,
    /// Trees above this level are independence.
    pub trunc: Option<usize>,
    /// Assign independence when the tau-based test does not reject it.
    pub independence_test: bool,
}

impl SelectOptions {
    pub fn new(catalogue: Vec<CopulaFamily>) -> Self {
        SelectOptions {
            catalogues: vec![catalogue],
            trunc: None,
            independence_test: true,
        }
    }

    fn catalogue(&self, tree: usize) -> &[CopulaFamily] {
        let k = (tree - 1).min(self.catalogues.len() - 1);
        &self.catalogues[k]
    }
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self::new(CopulaFamily::ALL.to_vec())
    }
}

/// One selected edge: copula of `(F(a | cond), F(b | cond))`.
#[derive(Debug, Clone)]
struct TreeEdge {
    a: usize,
    b: usize,
    /// All variables of the edge, as a bitmask of 0-based indices.
    all: u64,
    /// Endpoint nodes in the previous tree (variables for tree 1).
    ends: (usize, usize),
    copula: PairCopula,
    /// `F(a | b, cond)` and `F(b | a, cond)`; empty above the truncation level.
    ha: Vec<f64>,
    hb: Vec<f64>,
}

impl TreeEdge {
    fn conditional_of(&self, v: usize) -> &[f64] {
        if v == self.a {
            &self.ha
        } else {
            &self.hb
        }
    }
}

fn independence_accepted(tau: f64, n: f64) -> bool {
    let z = tau.abs() * (9.0 * n * (n - 1.0) / (2.0 * (2.0 * n + 5.0))).sqrt();
    z < INDEPENDENCE_CRITICAL
}

fn pair_tau(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    match weights {
        None => checked_tau(x, y),
        Some(w) => Ok(WeightedPairSample::new(x, y, Some(w))?.weighted_tau()),
    }
}

/// Selects an R-vine tree by tree: maximum spanning tree on `|tau|`, AIC
/// family choice per edge, h-function transforms for the next tree.
pub fn select_structure(
    data: &CopulaData,
    opts: &SelectOptions,
    weights: Option<&[f64]>,
) -> Result<RVineSpec> {
    let d = data.dim();
    if d < 2 {
        return Err(Error::InvalidInput("structure selection needs d >= 2".into()));
    }
    if d > 64 {
        return Err(Error::InvalidInput("dimension above 64 is not supported".into()));
    }
    if data.len() < 2 {
        return Err(Error::InvalidInput("structure selection needs at least two rows".into()));
    }
    if opts.catalogues.is_empty() || opts.catalogues.iter().any(Vec::is_empty) {
        return Err(Error::InvalidInput("empty family catalogue".into()));
    }
    let trunc = opts.trunc.unwrap_or(d - 1).min(d - 1);
    let n_eff = match weights {
        None => data.len() as f64,
        Some(w) => {
            let s: f64 = w.iter().sum();
            s * s / w.iter().map(|x| x * x).sum::<f64>()
        }
    };

    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| data.column(j).into_iter().map(|x| x.clamp(U_MIN, U_MAX)).collect())
        .collect();
    let mut trees: Vec<Vec<TreeEdge>> = Vec::with_capacity(d - 1);

    for tree in 1..d {
        let fitted = tree <= trunc;
        // Candidate pairs: (node i, node j, var a from i, var b from j).
        let (n_nodes, candidates): (usize, Vec<(usize, usize, usize, usize)>) = if tree == 1 {
            let c = (0..d)
                .flat_map(|i| (i + 1..d).map(move |j| (i, j, i, j)))
                .collect();
            (d, c)
        } else {
            let prev = &trees[tree - 2];
            let mut c = Vec::new();
            for i in 0..prev.len() {
                for j in i + 1..prev.len() {
                    let (e, f) = (&prev[i], &prev[j]);
                    let shared = [e.ends.0, e.ends.1].iter().any(|x| *x == f.ends.0 || *x == f.ends.1);
                    if shared {
                        let only_e = e.all & !f.all;
                        let only_f = f.all & !e.all;
                        c.push((i, j, only_e.trailing_zeros() as usize, only_f.trailing_zeros() as usize));
                    }
                }
            }
            (prev.len(), c)
        };
        let inputs = |i: usize, j: usize, a: usize, b: usize| -> (&[f64], &[f64]) {
            if tree == 1 {
                (&cols[a], &cols[b])
            } else {
                let prev = &trees[tree - 2];
                (prev[i].conditional_of(a), prev[j].conditional_of(b))
            }
        };

        let weights_of: Vec<Result<f64>> = candidates
            .par_iter()
            .map(|&(i, j, a, b)| {
                if fitted {
                    let (x, y) = inputs(i, j, a, b);
                    pair_tau(x, y, weights).map(f64::abs)
                } else {
                    Ok(0.0)
                }
            })
            .collect();
        let mut g = WeightedGraph::new(n_nodes);
        let mut tau_of = std::collections::HashMap::new();
        for (&(i, j, a, b), w) in candidates.iter().zip(weights_of) {
            let w = w.map_err(|e| e.at_tree(tree))?;
            g.set(i, j, w);
            tau_of.insert((i, j), (a, b, w));
        }
        let chosen = mst(&g).map_err(|e| e.at_tree(tree))?;

        let edges: Vec<Result<TreeEdge>> = chosen
            .par_iter()
            .map(|&(i, j)| {
                let (a, b, abs_tau) = tau_of[&(i, j)];
                let (all_i, all_j) = if tree == 1 {
                    (1u64 << i, 1u64 << j)
                } else {
                    let prev = &trees[tree - 2];
                    (prev[i].all, prev[j].all)
                };
                let mut edge = TreeEdge {
                    a,
                    b,
                    all: all_i | all_j,
                    ends: (i, j),
                    copula: PairCopula::independence(),
                    ha: Vec::new(),
                    hb: Vec::new(),
                };
                if !fitted {
                    return Ok(edge);
                }
                let (x, y) = inputs(i, j, a, b);
                if !(opts.independence_test && independence_accepted(abs_tau, n_eff)) {
                    let sample = WeightedPairSample::new(x, y, weights)?;
                    edge.copula = select_family(&sample, opts.catalogue(tree))?.copula;
                }
                if tree < trunc {
                    edge.ha = x
                        .iter()
                        .zip(y)
                        .map(|(&u, &v)| edge.copula.h(u, v).clamp(U_MIN, U_MAX))
                        .collect();
                    edge.hb = x
                        .iter()
                        .zip(y)
                        .map(|(&u, &v)| edge.copula.h2(u, v).clamp(U_MIN, U_MAX))
                        .collect();
                }
                Ok(edge)
            })
            .collect();
        let edges = edges
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at_tree(tree))?;
        trees.push(edges);
    }
    to_spec(d, &trees, trunc)
}

/// Encodes the selected trees as a matrix, column by column: take a
/// conditioned variable of the top remaining edge and walk down the trees
/// along the edges that contain it.
fn to_spec(d: usize, trees: &[Vec<TreeEdge>], trunc: usize) -> Result<RVineSpec> {
    let mut used: Vec<Vec<bool>> = trees.iter().map(|t| vec![false; t.len()]).collect();
    let mut m = vec![vec![0usize; d]; d];
    let mut copulas = vec![PairCopula::independence(); d * d];
    let mut remaining: u64 = if d == 64 { u64::MAX } else { (1u64 << d) - 1 };
    for c in 0..d - 1 {
        let top = d - 1 - c;
        let k = used[top - 1]
            .iter()
            .position(|u| !u)
            .ok_or_else(|| Error::InvalidMatrix("selected trees do not form a vine".into()))?;
        let var = trees[top - 1][k].a;
        m[c][c] = var + 1;
        let mut node = k;
        for tree in (1..=top).rev() {
            let e = &trees[tree - 1][node];
            used[tree - 1][node] = true;
            let (partner, pc) = if e.a == var {
                (e.b, e.copula.clone())
            } else if e.b == var {
                (e.a, e.copula.transposed())
            } else {
                return Err(Error::InvalidMatrix("selected trees do not form a vine".into()));
            };
            let r = d - tree;
            m[r][c] = partner + 1;
            copulas[r * d + c] = pc;
            if tree > 1 {
                let prev = &trees[tree - 2];
                node = if prev[e.ends.0].all & (1 << var) != 0 {
                    e.ends.0
                } else {
                    e.ends.1
                };
            }
        }
        remaining &= !(1u64 << var);
    }
    m[d - 1][d - 1] = remaining.trailing_zeros() as usize + 1;
    let matrix = RVineMatrix::new(&m)?;
    RVineSpec::new(matrix, copulas, trunc)
}

/// A fixed model recipe refitted on every window.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub name: String,
    pub options: SelectOptions,
}

#[derive(Debug, Clone)]
pub struct RollingReport {
    pub window: usize,
    /// 0-based first row of each window.
    pub starts: Vec<usize>,
    pub names: Vec<String>,
    /// `loglik[c][w]` for candidate `c` on window `w`; `NaN` when the fit failed.
    pub loglik: Vec<Vec<f64>>,
    /// `(window index, candidate index, message)` for failed fits.
    pub failures: Vec<(usize, usize, String)>,
}

impl RollingReport {
    pub fn mean_loglik(&self, c: usize) -> f64 {
        let v: Vec<f64> = self.loglik[c].iter().copied().filter(|x| x.is_finite()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Tidy CSV `window_start, candidate_id, loglik` with 1-based starts.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["window_start", "candidate_id", "loglik"])?;
        for (k, &s) in self.starts.iter().enumerate() {
            for (c, name) in self.names.iter().enumerate() {
                w.write_record([(s + 1).to_string(), name.clone(), self.loglik[c][k].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Selects and fits every candidate on each window of `window` consecutive rows.
pub fn rolling_window(data: &CopulaData, window: usize, candidates: &[Candidate]) -> Result<RollingReport> {
    if window < 2 || window > data.len() {
        return Err(Error::InvalidInput(format!(
            "window {window} must lie in 2..={}",
            data.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidates".into()));
    }
    let starts: Vec<usize> = (0..=data.len() - window).collect();
    let results: Vec<Vec<std::result::Result<f64, String>>> = starts
        .par_iter()
        .map(|&s| {
            let w = data.window(s, window);
            candidates
                .iter()
                .map(|cand| {
                    select_structure(&w, &cand.options, None)
                        .and_then(|spec| spec.loglik(&w))
                        .map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();
    let mut loglik = vec![vec![f64::NAN; starts.len()]; candidates.len()];
    let mut failures = Vec::new();
    for (k, row) in results.into_iter().enumerate() {
        for (c, r) in row.into_iter().enumerate() {
            match r {
                Ok(v) => loglik[c][k] = v,
                Err(msg) => failures.push((k, c, msg)),
            }
        }
    }
    Ok(RollingReport {
        window,
        starts,
        names: candidates.iter().map(|c| c.name.clone()).collect(),
        loglik,
        failures,
    })
}
