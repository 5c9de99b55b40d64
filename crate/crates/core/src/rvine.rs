//! Regular vines in matrix form.
//!
//! A `d x d` lower-triangular matrix `M` encodes the vine: column `c` holds
//! the edges `(m[c][c], m[r][c] | m[r+1][c], ..., m[d-1][c])` for
//! `r = c+1 .. d-1`, and row `r` belongs to tree `d - r`. Indices into the
//! matrix are 0-based; the variable labels stored in it are `1..=d`.
//!
//! Density evaluation, stepwise estimation and simulation all walk the same
//! recursion: for every edge the two conditional distribution values
//! ("direct" for the diagonal variable, "indirect" for the other one) are
//! propagated into the next tree through the h-functions.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::CopulaData;
use crate::error::{Error, Result};
use crate::pair_copula::{fit_edge, CopulaFamily, PairCopula, WeightedPairSample, U_MAX, U_MIN};
use crate::rng::substream;

/// Where the conditioning-variable input of an edge comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    /// Direct value of column `j` at the same row.
    Direct(usize),
    /// Indirect value of column `j` at the same row.
    Indirect(usize),
}

/// Outcome of [`validate_matrix`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatrixCheck {
    Valid,
    Invalid(String),
}

impl MatrixCheck {
    pub fn is_valid(&self) -> bool {
        matches!(self, MatrixCheck::Valid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RVineMatrix {
    d: usize,
    m: Vec<usize>,
    sources: Vec<Option<Source>>,
}

fn bit(label: usize) -> u64 {
    1u64 << (label - 1)
}

/// Accepts full square rows (zeros above the diagonal) or ragged lower rows.
fn flatten(rows: &[Vec<usize>]) -> std::result::Result<(usize, Vec<usize>), String> {
    let d = rows.len();
    if d == 0 {
        return Err("empty matrix".into());
    }
    if d > 64 {
        return Err("dimension above 64 is not supported".into());
    }
    let mut m = vec![0; d * d];
    for (r, row) in rows.iter().enumerate() {
        if row.len() != d && row.len() != r + 1 {
            return Err(format!("row {} has {} entries", r + 1, row.len()));
        }
        for (c, &v) in row.iter().enumerate() {
            if c > r {
                if v != 0 {
                    return Err("matrix is not lower triangular".into());
                }
            } else {
                if v == 0 || v > d {
                    return Err(format!("entry ({}, {}) = {v} is not in 1..={d}", r + 1, c + 1));
                }
                m[r * d + c] = v;
            }
        }
    }
    Ok((d, m))
}

fn analyse(d: usize, m: &[usize]) -> std::result::Result<Vec<Option<Source>>, String> {
    let at = |r: usize, c: usize| m[r * d + c];
    let col_mask = |c: usize, from: usize| (from..d).fold(0u64, |acc, r| acc | bit(at(r, c)));

    let diag = (0..d).fold(0u64, |acc, i| acc | bit(at(i, i)));
    if diag.count_ones() as usize != d {
        return Err("diagonal not a permutation".into());
    }
    for c in 0..d {
        if col_mask(c, c).count_ones() as usize != d - c {
            return Err(format!("column {} has repeated entries", c + 1));
        }
    }
    for c in 0..d.saturating_sub(1) {
        if col_mask(c + 1, c + 1) != col_mask(c, c + 1) {
            return Err(format!("column {} is not a subset of column {}", c + 2, c + 1));
        }
    }
    let mut sources = vec![None; d * d];
    for c in 0..d {
        for r in c + 1..d.saturating_sub(1) {
            let x = at(r, c);
            let cond = col_mask(c, r + 1);
            let found = (0..=r).filter(|&j| j != c).find_map(|j| {
                if at(j, j) == x && col_mask(j, r + 1) == cond {
                    Some(Source::Direct(j))
                } else if at(r + 1, j) == x && (bit(at(j, j)) | col_mask(j, r + 2)) == cond {
                    Some(Source::Indirect(j))
                } else {
                    None
                }
            });
            match found {
                Some(s) => sources[r * d + c] = Some(s),
                None => {
                    return Err(format!(
                        "edge in row {}, column {} violates the proximity condition",
                        r + 1,
                        c + 1
                    ))
                }
            }
        }
    }
    Ok(sources)
}

/// Checks that `rows` encodes a regular vine: entries in range, permutation
/// diagonal, nested columns, and the proximity condition for every edge.
pub fn validate_matrix(rows: &[Vec<usize>]) -> MatrixCheck {
    match flatten(rows).and_then(|(d, m)| analyse(d, &m)) {
        Ok(_) => MatrixCheck::Valid,
        Err(msg) => MatrixCheck::Invalid(msg),
    }
}

impl RVineMatrix {
    pub fn new(rows: &[Vec<usize>]) -> Result<Self> {
        let (d, m) = flatten(rows).map_err(Error::InvalidMatrix)?;
        let sources = analyse(d, &m).map_err(Error::InvalidMatrix)?;
        Ok(RVineMatrix { d, m, sources })
    }

    /// C-vine whose tree `k` is a star around `order[k-1]`.
    pub fn cvine(order: &[usize]) -> Result<Self> {
        let d = order.len();
        let rows: Vec<Vec<usize>> = (0..d)
            .map(|r| {
                (0..=r)
                    .map(|c| if r == c { order[d - 1 - c] } else { order[d - 1 - r] })
                    .collect()
            })
            .collect();
        Self::new(&rows)
    }

    /// D-vine whose first tree is the path `order[0] - order[1] - ...`.
    pub fn dvine(order: &[usize]) -> Result<Self> {
        let d = order.len();
        let rows: Vec<Vec<usize>> = (0..d)
            .map(|r| {
                (0..=r)
                    .map(|c| if r == c { order[d - 1 - c] } else { order[r - c - 1] })
                    .collect()
            })
            .collect();
        Self::new(&rows)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Entry at 0-based `(row, col)`; zero above the diagonal.
    pub fn get(&self, r: usize, c: usize) -> usize {
        self.m[r * self.d + c]
    }

    /// Full square rows, zeros above the diagonal.
    pub fn rows(&self) -> Vec<Vec<usize>> {
        self.m.chunks(self.d).map(<[usize]>::to_vec).collect()
    }

    /// Tree (1-based) of row `r`.
    pub fn tree_of_row(&self, r: usize) -> usize {
        self.d - r
    }

    /// Every edge `(row, col)`, tree by tree and by column within a tree.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.d).rev().flat_map(|r| (0..r).map(move |c| (r, c)))
    }

    /// Conditioned pair and conditioning set of edge `(r, c)`.
    pub fn edge_sets(&self, r: usize, c: usize) -> ((usize, usize), Vec<usize>) {
        let cond = (r + 1..self.d).map(|k| self.get(k, c)).collect();
        ((self.get(c, c), self.get(r, c)), cond)
    }

    /// Label like `4,1|2,3`.
    pub fn edge_label(&self, r: usize, c: usize) -> String {
        let ((a, b), cond) = self.edge_sets(r, c);
        if cond.is_empty() {
            format!("{a},{b}")
        } else {
            let cond: Vec<String> = cond.iter().map(ToString::to_string).collect();
            format!("{a},{b}|{}", cond.join(","))
        }
    }

    fn source(&self, r: usize, c: usize) -> Source {
        self.sources[r * self.d + c].expect("validated matrix has a source for every inner edge")
    }
}

/// One regime's copula: matrix, pair copulas and truncation level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecFile", into = "SpecFile")]
pub struct RVineSpec {
    matrix: RVineMatrix,
    /// Row-major `d x d`; only entries below the diagonal are edges.
    copulas: Vec<PairCopula>,
    trunc: usize,
}

impl RVineSpec {
    pub fn new(matrix: RVineMatrix, copulas: Vec<PairCopula>, trunc: usize) -> Result<Self> {
        let d = matrix.d;
        if copulas.len() != d * d {
            return Err(Error::Dimension {
                expected: d * d,
                found: copulas.len(),
            });
        }
        if trunc > d.saturating_sub(1) {
            return Err(Error::InvalidInput(format!(
                "truncation level {trunc} outside 0..={}",
                d.saturating_sub(1)
            )));
        }
        for (r, c) in matrix.edges() {
            if matrix.tree_of_row(r) > trunc && !copulas[r * d + c].is_independence() {
                return Err(Error::InvalidInput(format!(
                    "edge {} lies above truncation level {trunc} but is not independence",
                    matrix.edge_label(r, c)
                )));
            }
        }
        Ok(RVineSpec {
            matrix,
            copulas,
            trunc,
        })
    }

    /// Spec with `f(row, col)` on every edge.
    pub fn from_fn<F>(matrix: RVineMatrix, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Result<PairCopula>,
    {
        let d = matrix.d;
        let mut copulas = vec![PairCopula::independence(); d * d];
        for (r, c) in matrix.edges() {
            copulas[r * d + c] = f(r, c)?;
        }
        Self::new(matrix, copulas, d.saturating_sub(1))
    }

    pub fn independence(matrix: RVineMatrix) -> Self {
        let d = matrix.d;
        RVineSpec {
            copulas: vec![PairCopula::independence(); d * d],
            trunc: d.saturating_sub(1),
            matrix,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.d
    }

    pub fn matrix(&self) -> &RVineMatrix {
        &self.matrix
    }

    pub fn trunc_level(&self) -> usize {
        self.trunc
    }

    pub fn copula(&self, r: usize, c: usize) -> &PairCopula {
        &self.copulas[r * self.matrix.d + c]
    }

    pub fn family(&self, r: usize, c: usize) -> CopulaFamily {
        self.copula(r, c).family()
    }

    /// Replaces one edge's copula, keeping the truncation invariant.
    pub fn set_copula(&mut self, r: usize, c: usize, pc: PairCopula) -> Result<()> {
        if r <= c || r >= self.dim() {
            return Err(Error::InvalidInput(format!("({r}, {c}) is not an edge")));
        }
        if self.matrix.tree_of_row(r) > self.trunc && !pc.is_independence() {
            return Err(Error::InvalidInput("edge above truncation level".into()));
        }
        let d = self.dim();
        self.copulas[r * d + c] = pc;
        Ok(())
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.matrix.edges()
    }

    /// Number of free parameters.
    pub fn num_params(&self) -> usize {
        self.edges().map(|(r, c)| self.family(r, c).arity()).sum()
    }

    /// Edges that are not independence.
    pub fn active_edges(&self) -> Vec<(usize, usize)> {
        self.edges().filter(|&(r, c)| !self.copula(r, c).is_independence()).collect()
    }

    pub fn same_structure(&self, other: &RVineSpec) -> bool {
        self.matrix.m == other.matrix.m
            && self.trunc == other.trunc
            && self.edges().all(|(r, c)| self.family(r, c) == other.family(r, c))
    }

    /// Replaces every edge on trees above `level` by independence.
    pub fn truncate(&self, level: usize) -> Result<RVineSpec> {
        let d = self.dim();
        if level > d.saturating_sub(1) {
            return Err(Error::InvalidInput(format!(
                "truncation level {level} outside 0..={}",
                d.saturating_sub(1)
            )));
        }
        let mut out = self.clone();
        for (r, c) in self.matrix.edges() {
            if self.matrix.tree_of_row(r) > level {
                out.copulas[r * d + c] = PairCopula::independence();
            }
        }
        out.trunc = level;
        Ok(out)
    }

    /// Log-density of every row of `data`.
    pub fn log_density_rows(&self, data: &CopulaData) -> Result<Vec<f64>> {
        self.check_dim(data)?;
        let mut out = vec![0.0; data.len()];
        sweep(&self.matrix, data, self.trunc, |r, c, a, b| {
            let pc = self.copula(r, c);
            if !pc.is_independence() {
                for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                    *o += pc.ln_c(x, y);
                }
            }
            Ok(pc.clone())
        })?;
        Ok(out)
    }

    /// The two argument columns reaching each edge of the trees up to the
    /// truncation level, in tree order: `((r, c), a, b)`.
    pub fn pseudo_observations(&self, data: &CopulaData) -> Result<Vec<((usize, usize), Vec<f64>, Vec<f64>)>> {
        self.check_dim(data)?;
        let mut out = Vec::new();
        sweep(&self.matrix, data, self.trunc, |r, c, a, b| {
            out.push(((r, c), a.to_vec(), b.to_vec()));
            Ok(self.copula(r, c).clone())
        })?;
        Ok(out)
    }

    /// Log-density of one observation.
    pub fn log_density(&self, u_row: &[f64]) -> Result<f64> {
        let data = CopulaData::new(u_row.len(), u_row.to_vec())?;
        Ok(self.log_density_rows(&data)?[0])
    }

    pub fn loglik(&self, data: &CopulaData) -> Result<f64> {
        Ok(self.log_density_rows(data)?.iter().sum())
    }

    /// Draws one observation by inverting the Rosenblatt transform, column by
    /// column from the right, consuming `d` uniforms.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let d = self.dim();
        let m = &self.matrix;
        let mut dir = vec![0.0; d * d];
        let mut ind = vec![0.0; d * d];
        let mut u = vec![0.0; d];
        let clamp = |x: f64| x.clamp(U_MIN, U_MAX);
        for c in (0..d).rev() {
            let w = clamp(rng.random::<f64>());
            dir[c * d + c] = w;
            if c == d - 1 {
                u[m.get(c, c) - 1] = w;
                continue;
            }
            let input = |r: usize, dir: &[f64], ind: &[f64], u: &[f64]| -> f64 {
                if r == d - 1 {
                    u[m.get(r, c) - 1]
                } else {
                    match m.source(r, c) {
                        Source::Direct(j) => dir[r * d + j],
                        Source::Indirect(j) => ind[r * d + j],
                    }
                }
            };
            for r in c + 1..d {
                let b = input(r, &dir, &ind, &u);
                dir[r * d + c] = self.copula(r, c).h_inv(dir[(r - 1) * d + c], b)?;
            }
            u[m.get(c, c) - 1] = dir[(d - 1) * d + c];
            for r in c + 1..d {
                let b = input(r, &dir, &ind, &u);
                ind[(r - 1) * d + c] = clamp(self.copula(r, c).h2(dir[r * d + c], b));
            }
        }
        Ok(u)
    }

    fn check_dim(&self, data: &CopulaData) -> Result<()> {
        if data.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: data.dim(),
            });
        }
        Ok(())
    }
}

/// `n` i.i.d. rows from `spec`; deterministic in `seed`.
pub fn sample(spec: &RVineSpec, n: usize, seed: u64) -> Result<CopulaData> {
    let mut rng = substream(seed, 0);
    let d = spec.dim();
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n {
        values.extend(spec.sample_with(&mut rng)?);
    }
    CopulaData::new(d, values)
}

/// Pseudo-observation columns of one data set, indexed like the matrix:
/// `dir[r * d + c]` and `ind[r * d + c]` are the direct and indirect values
/// entering row `r`.
#[derive(Debug, Clone)]
struct Pseudo {
    d: usize,
    cols: Arc<Vec<Vec<f64>>>,
    dir: Vec<Option<Vec<f64>>>,
    ind: Vec<Option<Vec<f64>>>,
}

impl Pseudo {
    fn new(matrix: &RVineMatrix, data: &CopulaData) -> Self {
        let d = matrix.d;
        let cols: Vec<Vec<f64>> = (0..d)
            .map(|j| data.column(j).into_iter().map(|x| x.clamp(U_MIN, U_MAX)).collect())
            .collect();
        let mut dir = vec![None; d * d];
        for c in 0..d {
            dir[(d - 1) * d + c] = Some(cols[matrix.get(c, c) - 1].clone());
        }
        Pseudo {
            d,
            cols: Arc::new(cols),
            dir,
            ind: vec![None; d * d],
        }
    }

    fn inputs(&self, matrix: &RVineMatrix, r: usize, c: usize) -> (&[f64], &[f64]) {
        let d = self.d;
        let a = self.dir[r * d + c].as_deref().expect("direct value computed");
        let b: &[f64] = if r == d - 1 {
            &self.cols[matrix.get(r, c) - 1]
        } else {
            match matrix.source(r, c) {
                Source::Direct(j) => self.dir[r * d + j].as_deref(),
                Source::Indirect(j) => self.ind[r * d + j].as_deref(),
            }
            .expect("source computed in previous tree")
        };
        (a, b)
    }

    /// Pushes the values of edge `(r, c)` through `pc` into row `r - 1`,
    /// skipping those no edge reads.
    fn advance(&mut self, matrix: &RVineMatrix, needed: &Needed, r: usize, c: usize, pc: &PairCopula) {
        let k = (r - 1) * self.d + c;
        let (a, b) = self.inputs(matrix, r, c);
        let nd = needed.dir[k].then(|| a.iter().zip(b).map(|(&x, &y)| pc.h(x, y).clamp(U_MIN, U_MAX)).collect());
        let ni = needed.ind[k].then(|| a.iter().zip(b).map(|(&x, &y)| pc.h2(x, y).clamp(U_MIN, U_MAX)).collect());
        self.dir[k] = nd;
        self.ind[k] = ni;
    }
}

/// Which direct and indirect values the edges up to `max_tree` read.
#[derive(Debug, Clone)]
struct Needed {
    dir: Vec<bool>,
    ind: Vec<bool>,
}

impl Needed {
    fn new(matrix: &RVineMatrix, max_tree: usize) -> Self {
        let d = matrix.d;
        let mut dir = vec![false; d * d];
        let mut ind = vec![false; d * d];
        for r in 1..d.saturating_sub(1) {
            if matrix.tree_of_row(r) > max_tree {
                continue;
            }
            for c in 0..r {
                dir[r * d + c] = true;
                match matrix.source(r, c) {
                    Source::Direct(j) => dir[r * d + j] = true,
                    Source::Indirect(j) => ind[r * d + j] = true,
                }
            }
        }
        Needed { dir, ind }
    }
}

/// Walks the trees up to `max_tree`, handing each edge its two pseudo-observation
/// columns `(a, b)`; `a` belongs to the diagonal variable. The closure returns
/// the copula used to propagate values to the next tree.
fn sweep<F>(matrix: &RVineMatrix, data: &CopulaData, max_tree: usize, mut edge: F) -> Result<()>
where
    F: FnMut(usize, usize, &[f64], &[f64]) -> Result<PairCopula>,
{
    let needed = Needed::new(matrix, max_tree);
    let mut p = Pseudo::new(matrix, data);
    for r in (1..matrix.d).rev() {
        if matrix.tree_of_row(r) > max_tree {
            break;
        }
        for c in 0..r {
            let pc = {
                let (a, b) = p.inputs(matrix, r, c);
                edge(r, c, a, b)?
            };
            p.advance(matrix, &needed, r, c, &pc);
        }
    }
    Ok(())
}

/// Log-likelihood of a fixed data set kept per edge together with the
/// pseudo-observations, so that replacing one pair copula re-evaluates only
/// that edge and the trees above it.
#[derive(Debug, Clone)]
pub struct EdgeLikelihood {
    pseudo: Pseudo,
    needed: Arc<Needed>,
    edge_ll: Vec<f64>,
    trunc: usize,
}

impl EdgeLikelihood {
    pub fn new(spec: &RVineSpec, data: &CopulaData) -> Result<Self> {
        spec.check_dim(data)?;
        let d = spec.dim();
        let mut out = EdgeLikelihood {
            pseudo: Pseudo::new(&spec.matrix, data),
            needed: Arc::new(Needed::new(&spec.matrix, spec.trunc)),
            edge_ll: vec![0.0; d * d],
            trunc: spec.trunc,
        };
        out.refresh_from(spec, d, 0);
        Ok(out)
    }

    pub fn total(&self) -> f64 {
        self.edge_ll.iter().sum()
    }

    /// The cache for `spec`, which must agree with the cached spec except at
    /// edge `(r, c)`.
    pub fn with_edge(&self, spec: &RVineSpec, r: usize, c: usize) -> Self {
        let mut out = self.clone();
        if spec.matrix.tree_of_row(r) <= self.trunc {
            out.refresh_from(spec, r, c);
        }
        out
    }

    /// Re-evaluates edge `(r0, c0)` onwards in sweep order; `r0 == d` starts
    /// at the first tree.
    fn refresh_from(&mut self, spec: &RVineSpec, r0: usize, c0: usize) {
        let m = &spec.matrix;
        let d = spec.dim();
        let full = r0 >= d;
        let r_top = if full { d - 1 } else { r0 };
        for r in (1..=r_top).rev() {
            if m.tree_of_row(r) > self.trunc {
                break;
            }
            let cols = if !full && r == r_top { c0..c0 + 1 } else { 0..r };
            for c in cols {
                let pc = spec.copula(r, c);
                self.edge_ll[r * d + c] = if pc.is_independence() {
                    0.0
                } else {
                    let (a, b) = self.pseudo.inputs(m, r, c);
                    a.iter().zip(b).map(|(&x, &y)| pc.ln_c(x, y)).sum()
                };
                self.pseudo.advance(m, &self.needed, r, c, pc);
            }
        }
    }
}

/// Stepwise estimate with per-edge diagnostics.
#[derive(Debug, Clone)]
pub struct VineFit {
    pub spec: RVineSpec,
    /// Row-major `d x d`, natural-scale standard errors per edge parameter.
    pub std_errors: Vec<Vec<f64>>,
    /// Sum of the edges' weighted log-likelihoods.
    pub loglik: f64,
    /// Edges estimated by tau inversion for lack of effective weight.
    pub fallback_edges: Vec<(usize, usize)>,
    pub boundary_edges: Vec<(usize, usize)>,
}

impl VineFit {
    pub fn std_error(&self, r: usize, c: usize) -> &[f64] {
        &self.std_errors[r * self.spec.dim() + c]
    }
}

/// Tree-by-tree weighted maximum likelihood. The structure, families and
/// truncation level are taken from `template`; its parameters are ignored.
pub fn fit_sequential(
    template: &RVineSpec,
    data: &CopulaData,
    weights: Option<&[f64]>,
) -> Result<VineFit> {
    template.check_dim(data)?;
    if let Some(w) = weights {
        if w.len() != data.len() {
            return Err(Error::Dimension {
                expected: data.len(),
                found: w.len(),
            });
        }
    }
    let d = template.dim();
    let mut copulas = vec![PairCopula::independence(); d * d];
    let mut std_errors = vec![Vec::new(); d * d];
    let mut fallback_edges = Vec::new();
    let mut boundary_edges = Vec::new();
    let mut loglik = 0.0;
    sweep(&template.matrix, data, template.trunc, |r, c, a, b| {
        let family = template.family(r, c);
        if family == CopulaFamily::Independence {
            return Ok(PairCopula::independence());
        }
        let fit = WeightedPairSample::new(a, b, weights)
            .and_then(|s| fit_edge(family, &s))
            .map_err(|e| e.at_edge(r, c))?;
        if fit.fallback {
            fallback_edges.push((r, c));
        }
        if fit.at_boundary {
            boundary_edges.push((r, c));
        }
        loglik += fit.loglik;
        std_errors[r * d + c] = fit.std_errors;
        copulas[r * d + c] = fit.copula.clone();
        Ok(fit.copula)
    })?;
    Ok(VineFit {
        spec: RVineSpec::new(template.matrix.clone(), copulas, template.trunc)?,
        std_errors,
        loglik,
        fallback_edges,
        boundary_edges,
    })
}

/// On-disk layout: full square matrices, row-major, 1-based labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecFile {
    pub d: usize,
    pub matrix: Vec<Vec<usize>>,
    pub families: Vec<Vec<CopulaFamily>>,
    pub params: Vec<Vec<Vec<f64>>>,
    pub trunc: usize,
}

impl From<RVineSpec> for SpecFile {
    fn from(spec: RVineSpec) -> Self {
        let d = spec.dim();
        let families = (0..d)
            .map(|r| (0..d).map(|c| spec.copulas[r * d + c].family()).collect())
            .collect();
        let params = (0..d)
            .map(|r| (0..d).map(|c| spec.copulas[r * d + c].params().to_vec()).collect())
            .collect();
        SpecFile {
            d,
            matrix: spec.matrix.rows(),
            families,
            params,
            trunc: spec.trunc,
        }
    }
}

impl TryFrom<SpecFile> for RVineSpec {
    type Error = Error;

    fn try_from(f: SpecFile) -> Result<Self> {
        let matrix = RVineMatrix::new(&f.matrix)?;
        let d = matrix.dim();
        if f.d != d {
            return Err(Error::Dimension {
                expected: f.d,
                found: d,
            });
        }
        let get = |r: usize, c: usize| -> Result<(CopulaFamily, Vec<f64>)> {
            let fam = *f
                .families
                .get(r)
                .and_then(|row| row.get(c))
                .ok_or_else(|| Error::InvalidInput("families matrix too small".into()))?;
            let p = f
                .params
                .get(r)
                .and_then(|row| row.get(c))
                .cloned()
                .ok_or_else(|| Error::InvalidInput("params matrix too small".into()))?;
            Ok((fam, p))
        };
        let mut copulas = vec![PairCopula::independence(); d * d];
        for (r, c) in matrix.edges() {
            let (fam, p) = get(r, c)?;
            copulas[r * d + c] = PairCopula::new(fam, p).map_err(|e| e.at_edge(r, c))?;
        }
        RVineSpec::new(matrix, copulas, f.trunc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure_select::kendall_tau;

    fn five_variable_matrix() -> Vec<Vec<usize>> {
        vec![
            vec![5],
            vec![2, 2],
            vec![4, 4, 1],
            vec![3, 3, 4, 3],
            vec![1, 1, 3, 4, 4],
        ]
    }

    #[test]
    fn validates_example_matrix() {
        assert_eq!(validate_matrix(&five_variable_matrix()), MatrixCheck::Valid);
        let mut dup = five_variable_matrix();
        dup[1][1] = 5;
        assert_eq!(
            validate_matrix(&dup),
            MatrixCheck::Invalid("diagonal not a permutation".into())
        );
        assert!(validate_matrix(&[vec![1], vec![2, 2]]).is_valid());
    }

    #[test]
    fn rejects_proximity_violation() {
        // nested columns but tree 2 edge 4,1|3 needs edge 1-3 in tree 1, which is absent
        // (tree 1 is 4-3, 3-2, 2-1)
        let rows = vec![
            vec![4],
            vec![2, 3],
            vec![1, 1, 2],
            vec![3, 2, 1, 1],
        ];
        assert!(!validate_matrix(&rows).is_valid());
        assert!(RVineMatrix::dvine(&[1, 2, 3, 4]).is_ok());
        assert!(RVineMatrix::cvine(&[1, 2, 3, 4]).is_ok());
        assert!(RVineMatrix::dvine(&[3, 1, 4, 2, 5]).is_ok());
    }

    #[test]
    fn cvine_and_dvine_edges() {
        let c = RVineMatrix::cvine(&[1, 2, 3, 4]).unwrap();
        let labels: Vec<String> = c.edges().map(|(r, k)| c.edge_label(r, k)).collect();
        assert_eq!(labels, ["4,1", "3,1", "2,1", "4,2|1", "3,2|1", "4,3|2,1"]);
        let dv = RVineMatrix::dvine(&[1, 2, 3, 4]).unwrap();
        let labels: Vec<String> = dv.edges().map(|(r, k)| dv.edge_label(r, k)).collect();
        assert_eq!(labels, ["4,3", "3,2", "2,1", "4,2|3", "3,1|2", "4,1|2,3"]);
    }

    #[test]
    fn independence_density_is_zero() {
        let spec = RVineSpec::independence(RVineMatrix::new(&five_variable_matrix()).unwrap());
        assert_eq!(spec.log_density(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn two_dim_vine_is_pair_copula() {
        let m = RVineMatrix::new(&[vec![2], vec![1, 1]]).unwrap();
        let pc = PairCopula::gaussian(0.4).unwrap();
        let spec = RVineSpec::from_fn(m, |_, _| Ok(pc.clone())).unwrap();
        let ld = spec.log_density(&[0.3, 0.9]).unwrap();
        assert!((ld - pc.ln_density(0.9, 0.3).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn truncation() {
        let m = RVineMatrix::dvine(&[1, 2, 3]).unwrap();
        let spec = RVineSpec::from_fn(m, |_, _| PairCopula::gaussian(0.5)).unwrap();
        assert_eq!(spec.truncate(2).unwrap(), spec);
        let t0 = spec.truncate(0).unwrap();
        assert_eq!(t0.log_density(&[0.2, 0.5, 0.9]).unwrap(), 0.0);
        assert!(spec.truncate(3).is_err());
        let t1 = spec.truncate(1).unwrap();
        assert_eq!(t1.active_edges().len(), 2);
    }

    #[test]
    fn sampling_reproduces_tau() {
        let m = RVineMatrix::new(&[vec![2], vec![1, 1]]).unwrap();
        let spec = RVineSpec::from_fn(m, |_, _| PairCopula::gaussian(0.6)).unwrap();
        let data = sample(&spec, 10_000, 3).unwrap();
        let tau = kendall_tau(&data.column(0), &data.column(1)).unwrap();
        let expect = std::f64::consts::FRAC_2_PI * 0.6_f64.asin();
        assert!((tau - expect).abs() < 0.03, "{tau} vs {expect}");
        assert_eq!(sample(&spec, 50, 3).unwrap(), sample(&spec, 50, 3).unwrap());
    }

    #[test]
    fn edge_cache_matches_full_evaluation() {
        let m = RVineMatrix::new(&five_variable_matrix()).unwrap();
        for trunc in [2, 4] {
            let spec = RVineSpec::from_fn(m.clone(), |r, c| PairCopula::gaussian(0.1 * (r + c) as f64 - 0.3))
                .unwrap()
                .truncate(trunc)
                .unwrap();
            let data = sample(&spec, 300, 8).unwrap();
            let cache = EdgeLikelihood::new(&spec, &data).unwrap();
            assert!((cache.total() - spec.loglik(&data).unwrap()).abs() < 1e-9);
            for (r, c) in spec.active_edges() {
                let mut next = spec.clone();
                next.set_copula(r, c, PairCopula::gumbel(CopulaFamily::Gumbel180, 2.5).unwrap()).unwrap();
                let fresh = next.loglik(&data).unwrap();
                let cached = cache.with_edge(&next, r, c).total();
                assert!((fresh - cached).abs() < 1e-9, "edge ({r}, {c}): {fresh} vs {cached}");
            }
        }
    }

    #[test]
    fn fit_with_indicator_weights_equals_subsample_fit() {
        let m = RVineMatrix::dvine(&[1, 2, 3]).unwrap();
        let spec = RVineSpec::from_fn(m, |r, _| {
            PairCopula::from_tau(CopulaFamily::Gumbel, if r == 2 { 0.5 } else { 0.2 }, None)
        })
        .unwrap();
        let data = sample(&spec, 600, 8).unwrap();
        let w: Vec<f64> = (0..600).map(|t| (t % 3 == 0) as u8 as f64).collect();
        let idx: Vec<usize> = (0..600).filter(|t| t % 3 == 0).collect();
        let a = fit_sequential(&spec, &data, Some(&w)).unwrap();
        let b = fit_sequential(&spec, &data.select_rows(&idx), None).unwrap();
        for (r, c) in spec.edges() {
            let (x, y) = (a.spec.copula(r, c).params()[0], b.spec.copula(r, c).params()[0]);
            assert!((x - y).abs() < 1e-6, "{x} {y}");
        }
    }

    #[test]
    fn json_round_trip() {
        let m = RVineMatrix::new(&five_variable_matrix()).unwrap();
        let spec = RVineSpec::from_fn(m, |r, c| {
            if (r + c) % 2 == 0 {
                PairCopula::gumbel(CopulaFamily::Gumbel270, 1.0 + 0.1 * (r + c) as f64)
            } else {
                PairCopula::student_t(0.3, 7.25)
            }
        })
        .unwrap()
        .truncate(3)
        .unwrap();
        let s = serde_json::to_string(&spec).unwrap();
        let back: RVineSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }
}
