//! Independent reference computations shared by the integration suites.
//! Nothing here calls into the solver paths it is used to check.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use tristage::linprog::{LpProblem, Relation, Sense};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleStatus {
    Optimal(f64),
    Infeasible,
    Unbounded,
}

/// Solves a small dense system with partial pivoting. `None` when singular.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-11 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Vertex enumeration for LPs whose variables are all bounded below by 0.
///
/// Feasible ⇒ the polyhedron is pointed, so the optimum (if finite) is at a
/// vertex. Unboundedness is decided by maximising the objective over the
/// normalised recession cone `{d >= 0, Σd = 1, A d (rel) 0}`, again by
/// enumerating vertices.
pub fn vertex_enumeration(lp: &LpProblem) -> OracleStatus {
    let n = lp.num_vars();
    assert!(lp.lower_bounds.iter().all(|&l| l == 0.0));
    let dir = if lp.sense == Sense::Maximize { 1.0 } else { -1.0 };
    // hyperplanes: constraint rows, then x_j = 0
    let mut planes: Vec<(Vec<f64>, f64)> = lp
        .constraints
        .iter()
        .map(|c| (c.coeffs.clone(), c.rhs))
        .collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e, 0.0));
    }
    let feasible = |x: &[f64], homogeneous: bool| {
        let tol = 1e-9;
        if x.iter().any(|&v| v < -tol) {
            return false;
        }
        lp.constraints.iter().all(|c| {
            let ax: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let b = if homogeneous { 0.0 } else { c.rhs };
            let scale = 1.0 + b.abs() + c.coeffs.iter().zip(x).map(|(a, v)| (a * v).abs()).sum::<f64>();
            match c.relation {
                Relation::Le => ax <= b + tol * scale,
                Relation::Ge => ax >= b - tol * scale,
                Relation::Eq => (ax - b).abs() <= tol * scale,
            }
        })
    };
    let mut best: Option<f64> = None;
    for combo in combinations(planes.len(), n) {
        let a: Vec<Vec<f64>> = combo.iter().map(|&i| planes[i].0.clone()).collect();
        let b: Vec<f64> = combo.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = gauss_solve(a, b) {
            if feasible(&x, false) {
                let v: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                best = Some(match best {
                    None => v,
                    Some(bv) => {
                        if dir * v > dir * bv {
                            v
                        } else {
                            bv
                        }
                    }
                });
            }
        }
    }
    let Some(best) = best else {
        return OracleStatus::Infeasible;
    };
    // recession cone
    let mut cone_best = f64::NEG_INFINITY;
    let hom: Vec<Vec<f64>> = planes.iter().map(|p| p.0.clone()).collect();
    for combo in combinations(hom.len(), n - 1) {
        let mut a: Vec<Vec<f64>> = combo.iter().map(|&i| hom[i].clone()).collect();
        let mut b = vec![0.0; n - 1];
        a.push(vec![1.0; n]);
        b.push(1.0);
        if let Some(d) = gauss_solve(a, b) {
            if feasible(&d, true) {
                let v: f64 = lp.objective.iter().zip(&d).map(|(c, v)| dir * c * v).sum();
                cone_best = cone_best.max(v);
            }
        }
    }
    if cone_best > 1e-9 {
        OracleStatus::Unbounded
    } else {
        OracleStatus::Optimal(best)
    }
}

/// Random LP with up to 5 variables, up to 5 inequality rows, entries in [-5, 5].
pub fn random_small_lp<R: Rng>(rng: &mut R) -> LpProblem {
    let n = rng.gen_range(1..=5);
    let m = rng.gen_range(1..=5);
    let obj: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..=5.0)).collect();
    let mut lp = if rng.gen_bool(0.5) {
        LpProblem::maximize(obj)
    } else {
        LpProblem::minimize(obj)
    };
    for _ in 0..m {
        let coeffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..=5.0)).collect();
        let rel = if rng.gen_bool(0.6) { Relation::Le } else { Relation::Ge };
        lp.constrain(coeffs, rel, rng.gen_range(-5.0..=5.0));
    }
    lp
}

/// Exhaustive minimum within-cluster SSE over all partitions of `points`
/// into exactly `k` non-empty groups.
pub fn best_partition_sse(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut used = vec![false; k];
        labels.iter().for_each(|&l| used[l] = true);
        if used.iter().all(|&u| u) {
            best = best.min(partition_sse(points, &labels, k));
        }
        // odometer
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

pub fn partition_sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut sse = 0.0;
    for g in 0..k {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, &l)| l == g).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        for dim in 0..d {
            let mean = members.iter().map(|p| p[dim]).sum::<f64>() / members.len() as f64;
            sse += members.iter().map(|p| (p[dim] - mean).powi(2)).sum::<f64>();
        }
    }
    sse
}

/// ln Γ via the Stirling series after shifting the argument above 10.
pub fn stirling_ln_gamma(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

/// P(F <= f) by composite Simpson quadrature of the F density, using the
/// substitution f = t² to remove the integrable singularity at zero.
pub fn f_cdf_quadrature(f: f64, d1: f64, d2: f64) -> f64 {
    let ln_norm = stirling_ln_gamma((d1 + d2) / 2.0)
        - stirling_ln_gamma(d1 / 2.0)
        - stirling_ln_gamma(d2 / 2.0)
        + 0.5 * d1 * (d1 / d2).ln();
    let integrand = |t: f64| {
        if t == 0.0 {
            return if d1 == 1.0 { 2.0 * ln_norm.exp() } else { 0.0 };
        }
        let x = t * t;
        let ln_pdf = ln_norm + (0.5 * d1 - 1.0) * x.ln() - 0.5 * (d1 + d2) * (1.0 + d1 * x / d2).ln();
        2.0 * t * ln_pdf.exp()
    };
    let upper = f.sqrt();
    let steps = 20_000;
    let h = upper / steps as f64;
    let mut acc = integrand(0.0) + integrand(upper);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(i as f64 * h);
    }
    acc * h / 3.0
}

/// Standardises a column (mean 0, sample variance 1).
pub fn zscore(col: &[f64]) -> Vec<f64> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    col.iter().map(|v| (v - mean) / sd).collect()
}

/// OLS on standardised columns via the normal equations, solved by elimination.
pub fn standardized_ols(target: &[f64], predictors: &[Vec<f64>]) -> Vec<f64> {
    let y = zscore(target);
    let xs: Vec<Vec<f64>> = predictors.iter().map(|c| zscore(c)).collect();
    let p = xs.len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            xtx[i][j] = xs[i].iter().zip(&xs[j]).map(|(a, b)| a * b).sum();
        }
        xty[i] = xs[i].iter().zip(&y).map(|(a, b)| a * b).sum();
    }
    gauss_solve(xtx, xty).expect("collinear oracle design")
}

/// Writes the synthetic demo panel and its config into `dir`, returning the
/// config path.
pub fn demo_workspace(dir: &std::path::Path) -> std::path::PathBuf {
    use tristage::panel::write_panel;
    use tristage::pipeline::demo_config;
    use tristage::synthetic::{demo_data, DEMO_SEED};

    let mut csv = Vec::new();
    write_panel(&demo_data(DEMO_SEED).panel, &mut csv).unwrap();
    std::fs::write(dir.join("demo_panel.csv"), csv).unwrap();
    let path = dir.join("demo.json");
    std::fs::write(&path, demo_config("demo_panel.csv").to_json()).unwrap();
    path
}
