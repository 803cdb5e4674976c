//! PLS path modelling (Lohmöller's alternating least squares, reflective
//! blocks), bootstrap-t significance for the path coefficients, and plain
//! least squares with a log-linear interaction design.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::PanelDataset;
use crate::stats::t_two_tailed_p;
use crate::util::{float_or_sentinel, vec_float_or_sentinel};

pub const MAX_ITERATIONS: usize = 300;
pub const WEIGHT_TOL: f64 = 1e-7;
pub const DEFAULT_BOOTSTRAP: usize = 500;
pub const MIN_BOOTSTRAP: usize = 100;
/// |R_kk| below this fraction of |R_00| counts as rank loss.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum PlsError {
    #[error("column `{0}` has zero variance")]
    Degenerate(String),
    #[error("invalid path model: {0}")]
    Spec(String),
    #[error("collinear columns: {}", .0.join(", "))]
    Collinearity(Vec<String>),
    #[error("log of nonpositive value {value} for `{variable}` at dmu `{dmu}`, period `{period}`")]
    Domain {
        dmu: String,
        period: String,
        variable: String,
        value: f64,
    },
    #[error("missing value for `{variable}` at dmu `{dmu}`, period `{period}`")]
    Missing { dmu: String, period: String, variable: String },
    #[error("{0}")]
    Usage(String),
    #[error("bootstrap gave up after {redraws} redraws of degenerate resamples")]
    RedrawBudget { redraws: usize },
}

/// Named columns of equal length (column-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl DataMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, PlsError> {
        if names.len() != columns.len() {
            return Err(PlsError::Usage(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &names {
            if !seen.insert(name) {
                return Err(PlsError::Usage(format!("duplicate column `{name}`")));
            }
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(PlsError::Usage("columns differ in length".into()));
            }
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(PlsError::Usage(format!("non-finite value in `{name}`")));
            }
        }
        Ok(Self { names, columns })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, PlsError> {
        let columns = (0..names.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        if rows.iter().any(|r| r.len() != names.len()) {
            return Err(PlsError::Usage("ragged rows".into()));
        }
        Self::new(names, columns)
    }

    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|j| self.columns[j].as_slice())
    }

    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix {
        DataMatrix {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn standardize_column(name: &str, col: &[f64]) -> Result<Vec<f64>, PlsError> {
    let n = col.len();
    if n < 2 {
        return Err(PlsError::Degenerate(name.to_string()));
    }
    let m = mean(col);
    let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let magnitude = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if sd.is_nan() || sd <= 16.0 * f64::EPSILON * magnitude {
        return Err(PlsError::Degenerate(name.to_string()));
    }
    Ok(col.iter().map(|v| (v - m) / sd).collect())
}

/// Centres every column and scales it to unit sample variance (n − 1).
pub fn standardize(data: &DataMatrix) -> Result<DataMatrix, PlsError> {
    let columns = data
        .names
        .iter()
        .zip(&data.columns)
        .map(|(n, c)| standardize_column(n, c))
        .collect::<Result<_, _>>()?;
    Ok(DataMatrix {
        names: data.names.clone(),
        columns,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    /// one label per observation
    pub row_labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        let row_labels = (0..rows.len()).map(|i| format!("r{i}")).collect();
        Self { names, row_labels, rows }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Prepends a column of ones named `const`.
    pub fn with_intercept(&self) -> DesignMatrix {
        let mut names = vec!["const".to_string()];
        names.extend(self.names.iter().cloned());
        DesignMatrix {
            names,
            row_labels: self.row_labels.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect())
                .collect(),
        }
    }
}

/// Log-linear production design: ln(ict), ln(h) for every health variable,
/// then ln(ict)·ln(h) for every health variable. One row per (dmu, period).
pub fn build_cobb_douglas_design(
    panel: &PanelDataset,
    ict_var: &str,
    health_vars: &[&str],
) -> Result<DesignMatrix, PlsError> {
    if health_vars.is_empty() {
        return Err(PlsError::Usage("at least one health variable is required".into()));
    }
    let lookup = |name: &str| {
        panel
            .variable_index(name)
            .ok_or_else(|| PlsError::Usage(format!("unknown variable `{name}`")))
    };
    let ict = lookup(ict_var)?;
    let health: Vec<usize> = health_vars.iter().map(|h| lookup(h)).collect::<Result<_, _>>()?;
    let ln = |d: usize, p: usize, v: usize| -> Result<f64, PlsError> {
        let name = panel.variables()[v].name.clone();
        match panel.get(d, p, v) {
            None => Err(PlsError::Missing {
                dmu: panel.dmus()[d].clone(),
                period: panel.periods()[p].clone(),
                variable: name,
            }),
            Some(x) if x.is_nan() || x <= 0.0 || x.is_infinite() => Err(PlsError::Domain {
                dmu: panel.dmus()[d].clone(),
                period: panel.periods()[p].clone(),
                variable: name,
                value: x,
            }),
            Some(x) => Ok(x.ln()),
        }
    };
    let mut names = vec![format!("ln({ict_var})")];
    names.extend(health_vars.iter().map(|h| format!("ln({h})")));
    names.extend(health_vars.iter().map(|h| format!("ln({ict_var})*ln({h})")));
    let (nd, np, _) = panel.dims();
    let mut rows = Vec::with_capacity(nd * np);
    let mut row_labels = Vec::with_capacity(nd * np);
    for d in 0..nd {
        for p in 0..np {
            let li = ln(d, p, ict)?;
            let lh: Vec<f64> = health.iter().map(|&v| ln(d, p, v)).collect::<Result<_, _>>()?;
            let mut row = vec![li];
            row.extend(&lh);
            row.extend(lh.iter().map(|h| li * h));
            rows.push(row);
            row_labels.push(format!("{}@{}", panel.dmus()[d], panel.periods()[p]));
        }
    }
    Ok(DesignMatrix { names, row_labels, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    #[serde(with = "vec_float_or_sentinel")]
    pub t_statistics: Vec<f64>,
    pub p_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    pub df_residual: usize,
    /// uncentred if the design has no constant column
    pub r_squared: f64,
}

/// Least squares by Householder QR with column pivoting.
pub fn ols(design: &DesignMatrix, target: &[f64]) -> Result<OlsFit, PlsError> {
    let n = design.nrows();
    let p = design.ncols();
    if target.len() != n {
        return Err(PlsError::Usage(format!("target has {} rows, design {n}", target.len())));
    }
    if p == 0 || n <= p {
        return Err(PlsError::Usage(format!("need more rows than columns (rows = {n}, columns = {p})")));
    }
    if design.rows.iter().any(|r| r.len() != p) || design.rows.iter().flatten().chain(target).any(|v| !v.is_finite()) {
        return Err(PlsError::Usage("design must be rectangular and finite".into()));
    }
    let mut a: Vec<Vec<f64>> = (0..p).map(|j| design.column(j)).collect();
    let mut qty = target.to_vec();
    let mut perm: Vec<usize> = (0..p).collect();
    let mut rank = 0;
    let mut r00 = 0.0f64;
    for k in 0..p {
        let norm2 = |col: &Vec<f64>| col[k..].iter().map(|v| v * v).sum::<f64>();
        let (best, best_norm2) = (k..p)
            .map(|j| (j, norm2(&a[j])))
            .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        a.swap(k, best);
        perm.swap(k, best);
        let norm = best_norm2.sqrt();
        if k == 0 {
            r00 = norm;
        }
        if norm.is_nan() || norm <= RANK_TOL * r00 || norm == 0.0 {
            break;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        if vnorm2 > 0.0 {
            let reflect = |col: &mut [f64]| {
                let s = 2.0 * dot(&v, col) / vnorm2;
                col.iter_mut().zip(&v).for_each(|(c, vi)| *c -= s * vi);
            };
            for col in a.iter_mut().skip(k) {
                reflect(&mut col[k..]);
            }
            reflect(&mut qty[k..]);
        }
        a[k][k] = alpha;
        rank += 1;
    }
    if rank < p {
        let mut dependent: Vec<usize> = perm[rank..].to_vec();
        dependent.sort_unstable();
        return Err(PlsError::Collinearity(
            dependent.into_iter().map(|j| design.names[j].clone()).collect(),
        ));
    }
    // back substitution on R b = Qᵀy, R[i][j] = a[j][i]
    let mut b_perm = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| a[j][i] * b_perm[j]).sum();
        b_perm[i] = (qty[i] - s) / a[i][i];
    }
    // R⁻¹ (upper triangular), row norms give diag((XᵀX)⁻¹)
    let mut rinv = vec![vec![0.0; p]; p];
    for c in 0..p {
        for i in (0..=c).rev() {
            let rhs = if i == c { 1.0 } else { 0.0 };
            let s: f64 = (i + 1..=c).map(|j| a[j][i] * rinv[j][c]).sum();
            rinv[i][c] = (rhs - s) / a[i][i];
        }
    }
    let mut coefficients = vec![0.0; p];
    let mut var_diag = vec![0.0; p];
    for k in 0..p {
        coefficients[perm[k]] = b_perm[k];
        var_diag[perm[k]] = rinv[k].iter().map(|v| v * v).sum();
    }
    let residuals: Vec<f64> = design
        .rows
        .iter()
        .zip(target)
        .map(|(r, y)| y - dot(r, &coefficients))
        .collect();
    let rss = dot(&residuals, &residuals);
    let df_residual = n - p;
    let sigma2 = rss / df_residual as f64;
    let std_errors: Vec<f64> = var_diag.iter().map(|v| (sigma2 * v).sqrt()).collect();
    let t_statistics: Vec<f64> = coefficients
        .iter()
        .zip(&std_errors)
        .map(|(b, se)| if *se > 0.0 { b / se } else if *b == 0.0 { 0.0 } else { b.signum() * f64::INFINITY })
        .collect();
    let p_values = t_statistics.iter().map(|&t| t_two_tailed_p(t, df_residual as f64)).collect();
    let has_constant = (0..p).any(|j| design.rows.iter().all(|r| r[j] == design.rows[0][j]));
    let tss = if has_constant {
        let m = mean(target);
        target.iter().map(|y| (y - m).powi(2)).sum::<f64>()
    } else {
        dot(target, target)
    };
    Ok(OlsFit {
        names: design.names.clone(),
        coefficients,
        std_errors,
        t_statistics,
        p_values,
        residuals,
        rss,
        df_residual,
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerScheme {
    Centroid,
    #[default]
    PathWeighting,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Reflective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub indicators: Vec<String>,
    #[serde(default)]
    pub mode: Mode,
}

impl Block {
    pub fn new(name: impl Into<String>, indicators: &[&str]) -> Self {
        Self {
            name: name.into(),
            indicators: indicators.iter().map(|s| s.to_string()).collect(),
            mode: Mode::Reflective,
        }
    }

    /// A latent measured by one indicator of the same name.
    pub fn single(name: &str) -> Self {
        Self::new(name, &[name])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub from: String,
    pub to: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathModelSpec {
    pub blocks: Vec<Block>,
    pub paths: Vec<Path>,
    #[serde(default)]
    pub inner_scheme: InnerScheme,
}

struct Graph {
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
}

impl PathModelSpec {
    pub fn new(blocks: Vec<Block>, paths: &[(&str, &str)], inner_scheme: InnerScheme) -> Self {
        Self {
            blocks,
            paths: paths
                .iter()
                .map(|(f, t)| Path {
                    from: f.to_string(),
                    to: t.to_string(),
                })
                .collect(),
            inner_scheme,
        }
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    /// Structural checks: unique names, each indicator in one block, known
    /// endpoints, no duplicate or self paths, every latent connected, acyclic.
    pub fn validate(&self) -> Result<(), PlsError> {
        if self.blocks.is_empty() || self.paths.is_empty() {
            return Err(PlsError::Spec("a model needs blocks and at least one path".into()));
        }
        let mut names = BTreeSet::new();
        let mut indicators = BTreeSet::new();
        for b in &self.blocks {
            if !names.insert(&b.name) {
                return Err(PlsError::Spec(format!("duplicate latent `{}`", b.name)));
            }
            if b.indicators.is_empty() {
                return Err(PlsError::Spec(format!("latent `{}` has no indicators", b.name)));
            }
            for ind in &b.indicators {
                if !indicators.insert(ind) {
                    return Err(PlsError::Spec(format!("indicator `{ind}` appears in more than one block")));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for p in &self.paths {
            for end in [&p.from, &p.to] {
                if self.block_index(end).is_none() {
                    return Err(PlsError::Spec(format!("path endpoint `{end}` is not a latent")));
                }
            }
            if p.from == p.to {
                return Err(PlsError::Spec(format!("self-loop on `{}`", p.from)));
            }
            if !seen.insert((&p.from, &p.to)) {
                return Err(PlsError::Spec(format!("duplicate path {} -> {}", p.from, p.to)));
            }
        }
        let g = self.graph();
        if let Some(b) = (0..self.blocks.len()).find(|&b| g.preds[b].is_empty() && g.succs[b].is_empty()) {
            return Err(PlsError::Spec(format!("latent `{}` is not on any path", self.blocks[b].name)));
        }
        // Kahn's algorithm
        let mut indeg: Vec<usize> = g.preds.iter().map(Vec::len).collect();
        let mut ready: Vec<usize> = (0..indeg.len()).filter(|&b| indeg[b] == 0).collect();
        let mut visited = 0;
        while let Some(b) = ready.pop() {
            visited += 1;
            for &s in &g.succs[b] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.push(s);
                }
            }
        }
        if visited != self.blocks.len() {
            return Err(PlsError::Spec("path graph has a cycle".into()));
        }
        Ok(())
    }

    fn graph(&self) -> Graph {
        let nb = self.blocks.len();
        let mut preds = vec![Vec::new(); nb];
        let mut succs = vec![Vec::new(); nb];
        for p in &self.paths {
            if let (Some(f), Some(t)) = (self.block_index(&p.from), self.block_index(&p.to)) {
                preds[t].push(f);
                succs[f].push(t);
            }
        }
        Graph { preds, succs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathInference {
    pub std_error: f64,
    #[serde(with = "float_or_sentinel")]
    pub t_statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathCoefficient {
    pub from: String,
    pub to: String,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<PathInference>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterLoading {
    pub latent: String,
    pub indicator: String,
    pub weight: f64,
    pub loading: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInfo {
    pub replicates: usize,
    pub seed: u64,
    /// degenerate resamples that were drawn again
    pub redraws: usize,
    pub df: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEstimates {
    pub paths: Vec<PathCoefficient>,
    pub r_squared: BTreeMap<String, f64>,
    pub outer_loadings: Vec<OuterLoading>,
    pub converged: bool,
    pub iterations: usize,
    /// largest outer-weight change on the final iteration
    pub last_weight_change: f64,
    pub observations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapInfo>,
    /// standardized latent scores, in block order
    #[serde(skip)]
    pub scores: Vec<Vec<f64>>,
}

impl PathEstimates {
    pub fn path(&self, from: &str, to: &str) -> Option<&PathCoefficient> {
        self.paths.iter().find(|p| p.from == from && p.to == to)
    }

    pub fn beta(&self, from: &str, to: &str) -> Option<f64> {
        self.path(from, to).map(|p| p.beta)
    }
}

fn scale_to_unit(y: &mut [f64], w: &mut [f64]) -> bool {
    let n = y.len() as f64;
    let m = mean(y);
    let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd.is_nan() || sd <= 0.0 || sd.is_infinite() {
        return false;
    }
    y.iter_mut().for_each(|v| *v /= sd);
    w.iter_mut().for_each(|v| *v /= sd);
    true
}

fn outer_score(x: &[Vec<f64>], w: &[f64], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for (col, wk) in x.iter().zip(w) {
        y.iter_mut().zip(col).for_each(|(yi, xi)| *yi += wk * xi);
    }
    y
}

/// Regression of `target` on `predictors` without intercept (all centred).
fn regress(names: &[String], predictors: &[&Vec<f64>], target: &[f64]) -> Result<Vec<f64>, PlsError> {
    let rows: Vec<Vec<f64>> = (0..target.len()).map(|i| predictors.iter().map(|c| c[i]).collect()).collect();
    let fit = ols(&DesignMatrix::new(names.to_vec(), rows), target)?;
    Ok(fit.coefficients)
}

struct RawFit {
    estimates: PathEstimates,
    weights: Vec<Vec<f64>>,
}

fn fit_raw(data: &DataMatrix, spec: &PathModelSpec) -> Result<RawFit, PlsError> {
    spec.validate()?;
    let g = spec.graph();
    let n = data.nrows();
    let max_preds = g.preds.iter().map(Vec::len).max().unwrap_or(0);
    if n < max_preds + 3 {
        return Err(PlsError::Usage(format!(
            "{n} observations are too few for a structural equation with {max_preds} predictors"
        )));
    }
    let mut x: Vec<Vec<Vec<f64>>> = Vec::with_capacity(spec.blocks.len());
    for b in &spec.blocks {
        let mut cols = Vec::new();
        for ind in &b.indicators {
            let col = data
                .column(ind)
                .ok_or_else(|| PlsError::Usage(format!("indicator `{ind}` is not in the data")))?;
            cols.push(standardize_column(ind, col)?);
        }
        x.push(cols);
    }
    let nb = x.len();
    let latent_names: Vec<String> = spec.blocks.iter().map(|b| b.name.clone()).collect();
    let degenerate = |b: usize| PlsError::Degenerate(latent_names[b].clone());

    let mut w: Vec<Vec<f64>> = x.iter().map(|cols| vec![1.0; cols.len()]).collect();
    let mut y: Vec<Vec<f64>> = Vec::with_capacity(nb);
    for b in 0..nb {
        let mut yb = outer_score(&x[b], &w[b], n);
        if !scale_to_unit(&mut yb, &mut w[b]) {
            return Err(degenerate(b));
        }
        y.push(yb);
    }
    let cor = |a: &[f64], b: &[f64]| dot(a, b) / (n - 1) as f64;

    let mut converged = false;
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut z = vec![vec![0.0; n]; nb];
        for b in 0..nb {
            let mut add = |c: usize, e: f64| z[b].iter_mut().zip(&y[c]).for_each(|(zi, yi)| *zi += e * yi);
            match spec.inner_scheme {
                InnerScheme::Centroid => {
                    for &c in g.preds[b].iter().chain(&g.succs[b]) {
                        add(c, if cor(&y[b], &y[c]) < 0.0 { -1.0 } else { 1.0 });
                    }
                }
                InnerScheme::PathWeighting => {
                    if !g.preds[b].is_empty() {
                        let preds: Vec<&Vec<f64>> = g.preds[b].iter().map(|&c| &y[c]).collect();
                        let names: Vec<String> = g.preds[b].iter().map(|&c| latent_names[c].clone()).collect();
                        let coef = regress(&names, &preds, &y[b])?;
                        for (&c, e) in g.preds[b].iter().zip(coef) {
                            add(c, e);
                        }
                    }
                    for &c in &g.succs[b] {
                        add(c, cor(&y[b], &y[c]));
                    }
                }
            }
        }
        let mut change = 0.0f64;
        for b in 0..nb {
            let mut wb: Vec<f64> = x[b].iter().map(|col| cor(col, &z[b])).collect();
            let mut yb = outer_score(&x[b], &wb, n);
            if !scale_to_unit(&mut yb, &mut wb) {
                // inner proxy uncorrelated with every indicator: keep the current weights
                continue;
            }
            for (new, old) in wb.iter().zip(&w[b]) {
                change = change.max((new - old).abs());
            }
            w[b] = wb;
            y[b] = yb;
        }
        last_change = change;
        if change < WEIGHT_TOL {
            converged = true;
            break;
        }
    }

    let mut outer_loadings = Vec::new();
    for b in 0..nb {
        let loadings: Vec<f64> = x[b].iter().map(|col| cor(col, &y[b])).collect();
        let flip = loadings.iter().sum::<f64>() < 0.0;
        let s = if flip { -1.0 } else { 1.0 };
        if flip {
            y[b].iter_mut().for_each(|v| *v = -*v);
            w[b].iter_mut().for_each(|v| *v = -*v);
        }
        for (k, ind) in spec.blocks[b].indicators.iter().enumerate() {
            outer_loadings.push(OuterLoading {
                latent: latent_names[b].clone(),
                indicator: ind.clone(),
                weight: w[b][k],
                loading: s * loadings[k],
            });
        }
    }

    let mut betas: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut r_squared = BTreeMap::new();
    for b in 0..nb {
        if g.preds[b].is_empty() {
            continue;
        }
        let preds: Vec<&Vec<f64>> = g.preds[b].iter().map(|&c| &y[c]).collect();
        let names: Vec<String> = g.preds[b].iter().map(|&c| latent_names[c].clone()).collect();
        let coef = regress(&names, &preds, &y[b])?;
        let fitted = outer_score(
            &g.preds[b].iter().map(|&c| y[c].clone()).collect::<Vec<_>>(),
            &coef,
            n,
        );
        let rss: f64 = y[b].iter().zip(&fitted).map(|(a, f)| (a - f).powi(2)).sum();
        r_squared.insert(latent_names[b].clone(), 1.0 - rss / dot(&y[b], &y[b]));
        for (&c, beta) in g.preds[b].iter().zip(coef) {
            betas.insert((c, b), beta);
        }
    }
    let paths = spec
        .paths
        .iter()
        .map(|p| {
            let key = (spec.block_index(&p.from).unwrap(), spec.block_index(&p.to).unwrap());
            PathCoefficient {
                from: p.from.clone(),
                to: p.to.clone(),
                beta: betas[&key],
                inference: None,
            }
        })
        .collect();
    Ok(RawFit {
        estimates: PathEstimates {
            paths,
            r_squared,
            outer_loadings,
            converged,
            iterations,
            last_weight_change: last_change,
            observations: n,
            bootstrap: None,
            scores: y,
        },
        weights: w,
    })
}

/// Fits the path model. Non-convergence is reported through
/// `converged = false`, not as an error.
pub fn fit_path_model(data: &DataMatrix, spec: &PathModelSpec) -> Result<PathEstimates, PlsError> {
    fit_raw(data, spec).map(|f| f.estimates)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub info: BootstrapInfo,
    /// in spec path order
    pub paths: Vec<PathInference>,
}

fn is_redrawable(e: &PlsError) -> bool {
    matches!(e, PlsError::Degenerate(_) | PlsError::Collinearity(_))
}

/// Bootstrap-t inference for every path coefficient. Replicate `r` draws
/// from its own ChaCha stream `(seed, r)`; resamples that make a column
/// degenerate are drawn again.
pub fn bootstrap_significance(
    data: &DataMatrix,
    spec: &PathModelSpec,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapResult, PlsError> {
    if replicates < MIN_BOOTSTRAP {
        return Err(PlsError::Usage(format!(
            "at least {MIN_BOOTSTRAP} bootstrap replicates are required (got {replicates})"
        )));
    }
    let full = fit_raw(data, spec)?;
    let n = data.nrows();
    let budget = 10 * replicates;
    let edges: Vec<(usize, usize)> = spec
        .paths
        .iter()
        .map(|p| (spec.block_index(&p.from).unwrap(), spec.block_index(&p.to).unwrap()))
        .collect();

    let draws: Vec<Result<(Vec<f64>, usize), PlsError>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut redraws = 0;
            loop {
                let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                match fit_raw(&data.select_rows(&rows), spec) {
                    Ok(fit) => {
                        let sign: Vec<f64> = fit
                            .weights
                            .iter()
                            .zip(&full.weights)
                            .map(|(wb, wf)| if dot(wb, wf) < 0.0 { -1.0 } else { 1.0 })
                            .collect();
                        let betas = fit
                            .estimates
                            .paths
                            .iter()
                            .zip(&edges)
                            .map(|(p, &(f, t))| p.beta * sign[f] * sign[t])
                            .collect();
                        return Ok((betas, redraws));
                    }
                    Err(e) if is_redrawable(&e) => {
                        redraws += 1;
                        if redraws > budget {
                            return Err(PlsError::RedrawBudget { redraws });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(replicates);
    let mut redraws = 0;
    for d in draws {
        let (betas, r) = d?;
        redraws += r;
        samples.push(betas);
    }
    if redraws > budget {
        return Err(PlsError::RedrawBudget { redraws });
    }
    let df = n - 1;
    let paths = full
        .estimates
        .paths
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let vals: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let m = mean(&vals);
            let se = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (replicates - 1) as f64).sqrt();
            let (t, pv) = if se > 0.0 {
                let t = p.beta / se;
                (t, t_two_tailed_p(t, df as f64))
            } else if p.beta != 0.0 {
                (p.beta.signum() * f64::INFINITY, 0.0)
            } else {
                (0.0, 1.0)
            };
            PathInference {
                std_error: se,
                t_statistic: t,
                p_value: pv,
            }
        })
        .collect();
    Ok(BootstrapResult {
        info: BootstrapInfo {
            replicates,
            seed,
            redraws,
            df,
        },
        paths,
    })
}

/// Full-sample fit with bootstrap inference attached to every path.
pub fn fit_with_bootstrap(
    data: &DataMatrix,
    spec: &PathModelSpec,
    replicates: usize,
    seed: u64,
) -> Result<PathEstimates, PlsError> {
    let mut est = fit_path_model(data, spec)?;
    let boot = bootstrap_significance(data, spec, replicates, seed)?;
    for (p, inf) in est.paths.iter_mut().zip(boot.paths) {
        p.inference = Some(inf);
    }
    est.bootstrap = Some(boot.info);
    Ok(est)
}

/// Pools every (dmu, period) cell of the named panel variables into rows.
/// Rows with any missing value are an error.
pub fn observations_from_panel(panel: &PanelDataset, variables: &[&str]) -> Result<DataMatrix, PlsError> {
    let (nd, np, _) = panel.dims();
    let mut columns = Vec::with_capacity(variables.len());
    for &name in variables {
        let v = panel
            .variable_index(name)
            .ok_or_else(|| PlsError::Usage(format!("unknown variable `{name}`")))?;
        let mut col = Vec::with_capacity(nd * np);
        for d in 0..nd {
            for p in 0..np {
                col.push(panel.get(d, p, v).ok_or_else(|| PlsError::Missing {
                    dmu: panel.dmus()[d].clone(),
                    period: panel.periods()[p].clone(),
                    variable: name.to_string(),
                })?);
            }
        }
        columns.push(col);
    }
    DataMatrix::new(variables.iter().map(|s| s.to_string()).collect(), columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(cols: &[(&str, Vec<f64>)]) -> DataMatrix {
        DataMatrix::new(
            cols.iter().map(|(n, _)| n.to_string()).collect(),
            cols.iter().map(|(_, c)| c.clone()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn standardize_examples() {
        let s = standardize(&dm(&[("a", vec![1.0, 2.0, 3.0])])).unwrap();
        assert_eq!(s.columns[0], vec![-1.0, 0.0, 1.0]);
        let again = standardize(&s).unwrap();
        for (a, b) in again.columns[0].iter().zip(&s.columns[0]) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(
            standardize(&dm(&[("ok", vec![1.0, 2.0]), ("flat", vec![4.0, 4.0])])),
            Err(PlsError::Degenerate("flat".into()))
        );
    }

    #[test]
    fn ols_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let d = DesignMatrix::new(vec!["x".into()], x.iter().map(|&v| vec![v]).collect());
        let fit = ols(&d, &x.map(|v| 2.0 * v)).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() <= 1e-10);
        let fit = ols(&d.with_intercept(), &x.map(|v| 1.0 + 3.0 * v)).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() <= 1e-10);
        assert!((fit.coefficients[1] - 3.0).abs() <= 1e-10);
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ols_names_the_dependent_column() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 1.0, 2.0 * i as f64]).collect();
        let d = DesignMatrix::new(vec!["a".into(), "b".into(), "twice_a".into()], rows);
        match ols(&d, &[1.0, 3.0, 2.0, 5.0, 4.0, 6.0]) {
            Err(PlsError::Collinearity(cols)) => {
                assert_eq!(cols.len(), 1);
                assert!(cols[0] == "a" || cols[0] == "twice_a");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cyclic_and_malformed_specs_are_rejected() {
        let blocks = || vec![Block::single("a"), Block::single("b"), Block::single("c")];
        let cyc = PathModelSpec::new(blocks(), &[("a", "b"), ("b", "c"), ("c", "a")], InnerScheme::Centroid);
        assert_eq!(cyc.validate(), Err(PlsError::Spec("path graph has a cycle".into())));
        let data = dm(&[("a", vec![1.0, 2.0, 4.0, 3.0, 5.0]), ("b", vec![2.0, 1.0, 3.0, 5.0, 4.0]), ("c", vec![5.0, 1.0, 2.0, 3.0, 1.0])]);
        assert!(fit_path_model(&data, &cyc).is_err());
        let shared = PathModelSpec::new(
            vec![Block::new("a", &["x"]), Block::new("b", &["x"])],
            &[("a", "b")],
            InnerScheme::Centroid,
        );
        assert!(matches!(shared.validate(), Err(PlsError::Spec(_))));
        let loose = PathModelSpec::new(blocks(), &[("a", "b")], InnerScheme::Centroid);
        assert!(matches!(loose.validate(), Err(PlsError::Spec(_))));
    }

    #[test]
    fn perfect_relation() {
        let x: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let data = dm(&[("x", x.clone()), ("y", x)]);
        let spec = PathModelSpec::new(vec![Block::single("x"), Block::single("y")], &[("x", "y")], InnerScheme::PathWeighting);
        let est = fit_path_model(&data, &spec).unwrap();
        assert!((est.beta("x", "y").unwrap() - 1.0).abs() <= 1e-12);
        assert!((est.r_squared["y"] - 1.0).abs() <= 1e-12);
        assert!(est.converged);
    }

    #[test]
    fn bootstrap_needs_enough_replicates() {
        let data = dm(&[("x", vec![1.0, 2.0, 3.0, 4.0]), ("y", vec![1.0, 3.0, 2.0, 4.0])]);
        let spec = PathModelSpec::new(vec![Block::single("x"), Block::single("y")], &[("x", "y")], InnerScheme::Centroid);
        assert!(matches!(bootstrap_significance(&data, &spec, 99, 0), Err(PlsError::Usage(_))));
    }
}
