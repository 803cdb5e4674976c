//! K-means clustering of DMUs (Lloyd iterations from k-means++ seeds, best of
//! several restarts), one-way ANOVA on the clustering variable, and a sweep
//! over candidate cluster counts.
//!
//! The ANOVA F here is computed on the very variable the clusters were built
//! from, so it is inflated by construction. It is reported as descriptive
//! separation evidence, and every emitted sweep carries that caveat.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::f_sf;
use crate::util::{float_or_sentinel, opt_float_or_sentinel};

pub const MAX_LLOYD_ITERATIONS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 32;
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Spread below this fraction of the data magnitude counts as no variation.
pub const RESOLUTION: f64 = 1e-8;

pub const CIRCULARITY_CAVEAT: &str = "ANOVA F is computed on the same variable that defined the clusters; \
it is inflated by construction and is descriptive, not a test of a pre-specified grouping.";

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("usage error: {0}")]
    Usage(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSolution {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub sse_within: f64,
    pub restarts_used: usize,
    pub seed: u64,
    /// restart index that produced this solution
    pub best_restart: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterSolution {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.assignments.iter().for_each(|&a| sizes[a] += 1);
        sizes
    }

    /// Relabels clusters so that label 0 has the largest first-coordinate
    /// centroid (for efficiency scores: the most efficient tier).
    pub fn ranked_descending(&self) -> ClusterSolution {
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &b| self.centroids[b][0].total_cmp(&self.centroids[a][0]).then(a.cmp(&b)));
        let mut new_label = vec![0; self.k];
        for (rank, &old) in order.iter().enumerate() {
            new_label[old] = rank;
        }
        ClusterSolution {
            assignments: self.assignments.iter().map(|&a| new_label[a]).collect(),
            centroids: order.iter().map(|&old| self.centroids[old].clone()).collect(),
            ..self.clone()
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.iter().map(|p| nearest(p, centroids)).collect()
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

/// Within-cluster sum of squares.
pub fn sse(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &[Vec<f64>], assignments: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        assignments.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let centroids = means(points, assignments, k);
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[a]);
            if d > far_d {
                far = Some(i);
                far_d = d;
            }
        }
        match far {
            Some(i) => assignments[i] = empty,
            None => return,
        }
    }
}

/// Outcome of one Lloyd run from fixed initial centroids.
#[derive(Clone, Debug, PartialEq)]
pub struct LloydRun {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// SSE after every centroid update; non-increasing
    pub sse_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Lloyd iterations until the assignment stops changing or
/// [`MAX_LLOYD_ITERATIONS`] is reached.
pub fn lloyd(points: &[Vec<f64>], initial: Vec<Vec<f64>>) -> LloydRun {
    let k = initial.len();
    let mut centroids = initial;
    let mut assignments = assign_all(points, &centroids);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        repair_empty(points, &mut assignments, k);
        centroids = means(points, &assignments, k);
        history.push(sse(points, &assignments, &centroids));
        let next = assign_all(points, &centroids);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }
    if !converged {
        repair_empty(points, &mut assignments, k);
        centroids = means(points, &assignments, k);
    }
    LloydRun {
        assignments,
        centroids,
        sse_history: history,
        iterations,
        converged,
    }
}

/// k-means++ seeding.
pub fn kmeans_plus_plus<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let mut target = rng.gen::<f64>() * total;
        let mut pick = dist.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in dist.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

pub fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    let cmp = |a: &&Vec<f64>, b: &&Vec<f64>| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    sorted.sort_by(cmp);
    sorted.dedup_by(|a, b| cmp(&&**a, &&**b).is_eq());
    sorted.len()
}

fn check_points(points: &[Vec<f64>]) -> Result<(), ClusterError> {
    let Some(first) = points.first() else {
        return Err(ClusterError::Usage("no points".into()));
    };
    let d = first.len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(ClusterError::Usage("points must share a non-zero dimension".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusterError::Usage("non-finite coordinate".into()));
    }
    Ok(())
}

/// Best-of-`restarts` k-means. Restart `r` is seeded with `seed + r`, and the
/// winner is the lowest (SSE, restart index), so the result does not depend
/// on how restarts are scheduled.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<ClusterSolution, ClusterError> {
    check_points(points)?;
    if k == 0 {
        return Err(ClusterError::Usage("k must be at least 1".into()));
    }
    if restarts == 0 {
        return Err(ClusterError::Usage("restarts must be at least 1".into()));
    }
    let distinct = distinct_count(points);
    if k > distinct {
        return Err(ClusterError::Usage(format!(
            "k = {k} exceeds the number of distinct points ({distinct})"
        )));
    }
    let runs: Vec<(f64, usize, LloydRun)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            let init = kmeans_plus_plus(points, k, &mut rng);
            let run = lloyd(points, init);
            (sse(points, &run.assignments, &run.centroids), r, run)
        })
        .collect();
    let (best_sse, best_restart, run) = runs
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("restarts >= 1");
    Ok(ClusterSolution {
        k,
        assignments: run.assignments,
        centroids: run.centroids,
        sse_within: best_sse,
        restarts_used: restarts,
        seed,
        best_restart,
        iterations: run.iterations,
        converged: run.converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnovaFlag {
    /// SSW = 0: F reported as +∞, p as 0.
    PerfectSeparation,
    /// The points are numerically indistinguishable: F reported as 0, p as 1.
    NoVariation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
    #[serde(with = "float_or_sentinel")]
    pub f_value: f64,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<AnovaFlag>,
}

fn grand_mean(points: &[Vec<f64>]) -> Vec<f64> {
    means(points, &vec![0; points.len()], 1).remove(0)
}

/// One-way ANOVA of the points across the clusters of `solution`.
/// Multivariate points pool their sums of squares across coordinates.
pub fn anova_f(points: &[Vec<f64>], solution: &ClusterSolution) -> Result<AnovaResult, ClusterError> {
    check_points(points)?;
    let n = points.len();
    let k = solution.k;
    if solution.assignments.len() != n {
        return Err(ClusterError::Usage("solution does not belong to these points".into()));
    }
    if k < 2 || n <= k {
        return Err(ClusterError::Usage(format!("ANOVA needs k >= 2 and n > k (n = {n}, k = {k})")));
    }
    let grand = grand_mean(points);
    let centroids = means(points, &solution.assignments, k);
    let sizes = solution.sizes();
    let ss_between: f64 = centroids
        .iter()
        .zip(&sizes)
        .map(|(c, &m)| m as f64 * sq_dist(c, &grand))
        .sum();
    let ss_within = sse(points, &solution.assignments, &centroids);
    let ss_total: f64 = points.iter().map(|p| sq_dist(p, &grand)).sum();
    let (df_between, df_within) = (k - 1, n - k);

    let magnitude = points.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = n as f64 * (RESOLUTION * magnitude).powi(2);
    let (f_value, p_value, flag) = if ss_total <= floor {
        (0.0, 1.0, Some(AnovaFlag::NoVariation))
    } else if ss_within == 0.0 {
        (f64::INFINITY, 0.0, Some(AnovaFlag::PerfectSeparation))
    } else {
        let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
        (f, f_sf(f, df_between as f64, df_within as f64), None)
    };
    Ok(AnovaResult {
        df_between,
        df_within,
        ss_between,
        ss_within,
        f_value,
        p_value,
        flag,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Largest F for the improvement from k−1 to k clusters.
    #[default]
    MaxIncrementalF,
    /// Largest overall ANOVA F.
    MaxF,
}

impl SelectionRule {
    pub fn label(self) -> &'static str {
        match self {
            SelectionRule::MaxIncrementalF => "max_incremental_f: among k with ANOVA p < alpha, the largest F for the SSW reduction from k-1 to k clusters; ties to smallest k",
            SelectionRule::MaxF => "max_f: among k with ANOVA p < alpha, the largest ANOVA F; ties to smallest k",
        }
    }
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub k_max: usize,
    pub k_min: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub rule: SelectionRule,
}

impl SweepConfig {
    pub fn new(k_max: usize, k_min: usize, restarts: usize, seed: u64) -> Self {
        Self {
            k_max,
            k_min,
            restarts,
            seed,
            alpha: DEFAULT_ALPHA,
            rule: SelectionRule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSweepEntry {
    pub k: usize,
    pub solution: ClusterSolution,
    pub anova: AnovaResult,
    /// F(1, n−k) for the SSW reduction from k−1 clusters
    #[serde(with = "float_or_sentinel")]
    pub incremental_f: f64,
    pub incremental_p: f64,
    pub significant: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SweepFlag {
    NoSignificantK,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSweepReport {
    /// descending in k
    pub entries: Vec<KSweepEntry>,
    pub selected_k: Option<usize>,
    pub selection_rule: String,
    pub rule: SelectionRule,
    pub alpha: f64,
    /// SSW of the k_min − 1 solution that the first incremental F refers to
    #[serde(with = "opt_float_or_sentinel", default)]
    pub baseline_sse: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<SweepFlag>,
    pub caveat: String,
}

impl KSweepReport {
    pub fn entry(&self, k: usize) -> Option<&KSweepEntry> {
        self.entries.iter().find(|e| e.k == k)
    }

    pub fn selected(&self) -> Option<&KSweepEntry> {
        self.selected_k.and_then(|k| self.entry(k))
    }
}

/// Runs k-means and ANOVA for every k from `k_max` down to `k_min` and picks
/// the most significant solution under `config.rule`.
pub fn sweep_k(points: &[Vec<f64>], config: &SweepConfig) -> Result<KSweepReport, ClusterError> {
    check_points(points)?;
    let SweepConfig {
        k_max,
        k_min,
        restarts,
        seed,
        alpha,
        rule,
    } = *config;
    if k_min < 2 || k_max < k_min {
        return Err(ClusterError::Usage(format!(
            "need k_max >= k_min >= 2 (got k_max = {k_max}, k_min = {k_min})"
        )));
    }
    let n = points.len();
    let mut sse_by_k = std::collections::BTreeMap::new();
    let mut solutions = Vec::new();
    for k in (k_min..=k_max).rev() {
        let sol = kmeans(points, k, restarts, seed)?;
        sse_by_k.insert(k, sol.sse_within);
        solutions.push(sol);
    }
    let baseline = if k_min - 1 == 1 {
        let grand = grand_mean(points);
        points.iter().map(|p| sq_dist(p, &grand)).sum()
    } else {
        kmeans(points, k_min - 1, restarts, seed)?.sse_within
    };
    sse_by_k.insert(k_min - 1, baseline);

    let mut entries = Vec::with_capacity(solutions.len());
    for sol in solutions {
        let anova = anova_f(points, &sol)?;
        let k = sol.k;
        let previous = sse_by_k[&(k - 1)];
        let drop = (previous - sol.sse_within).max(0.0);
        let (incremental_f, incremental_p) = if anova.flag == Some(AnovaFlag::NoVariation) {
            (0.0, 1.0)
        } else if sol.sse_within == 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            let f = drop / (sol.sse_within / (n - k) as f64);
            (f, f_sf(f, 1.0, (n - k) as f64))
        };
        let significant = anova.flag != Some(AnovaFlag::NoVariation) && anova.p_value < alpha;
        entries.push(KSweepEntry {
            k,
            solution: sol,
            anova,
            incremental_f,
            incremental_p,
            significant,
        });
    }

    let score = |e: &KSweepEntry| match rule {
        SelectionRule::MaxIncrementalF => e.incremental_f,
        SelectionRule::MaxF => e.anova.f_value,
    };
    let mut selected: Option<&KSweepEntry> = None;
    // entries are in descending k; iterate ascending so ties keep the smallest k
    for e in entries.iter().rev().filter(|e| e.significant) {
        if selected.is_none_or(|s| score(e) > score(s)) {
            selected = Some(e);
        }
    }
    let selected_k = selected.map(|e| e.k);
    Ok(KSweepReport {
        selected_k,
        selection_rule: rule.label().to_string(),
        rule,
        alpha,
        baseline_sse: Some(baseline),
        flags: if selected_k.is_none() {
            vec![SweepFlag::NoSignificantK]
        } else {
            Vec::new()
        },
        caveat: CIRCULARITY_CAVEAT.to_string(),
        entries,
    })
}

/// Wraps scalars as 1-D points.
pub fn univariate(values: &[f64]) -> Vec<Vec<f64>> {
    values.iter().map(|&v| vec![v]).collect()
}
