//! Dense two-phase primal simplex.
//!
//! Problems are small (DEA instances have a few dozen columns), so the solver
//! keeps a full tableau. Every constraint row is scaled by its largest
//! coefficient and flipped to a nonnegative right-hand side before phase 1.
//! Pricing is Dantzig's most-negative reduced cost; after
//! [`DEGENERATE_SWITCH`] consecutive degenerate pivots it falls back to Bland's
//! rule until a pivot makes progress again.
//!
//! Artificial columns are kept in the tableau after phase 1 (they are barred
//! from re-entering) so that the columns of the initial identity basis still
//! carry `B^-1`, from which the dual multipliers are read off.

use std::fmt;

use thiserror::Error;

/// Smallest tableau entry accepted as a pivot.
pub const PIVOT_TOL: f64 = 1e-9;
/// Feasibility tolerance on scaled rows.
pub const FEAS_TOL: f64 = 1e-7;
/// Consecutive degenerate pivots before Bland's rule takes over.
pub const DEGENERATE_SWITCH: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    fn flipped(self) -> Self {
        match self {
            Relation::Le => Relation::Ge,
            Relation::Ge => Relation::Le,
            Relation::Eq => Relation::Eq,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// A linear program `opt c·x  s.t.  A x (<=|=|>=) b,  x >= lower`.
///
/// Lower bounds default to zero; `f64::NEG_INFINITY` marks a free variable.
#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower_bounds: Vec<f64>,
}

impl LpProblem {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            sense,
            objective,
            constraints: Vec::new(),
            lower_bounds: vec![0.0; n],
        }
    }

    pub fn maximize(objective: Vec<f64>) -> Self {
        Self::new(Sense::Maximize, objective)
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        Self::new(Sense::Minimize, objective)
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn constrain(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self
    }

    pub fn set_free(&mut self, var: usize) -> &mut Self {
        self.lower_bounds[var] = f64::NEG_INFINITY;
        self
    }

    pub fn set_lower(&mut self, var: usize, lower: f64) -> &mut Self {
        self.lower_bounds[var] = lower;
        self
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.lower_bounds.len() != n {
            return Err(LpError::DimensionMismatch {
                what: "lower bounds".into(),
                expected: n,
                found: self.lower_bounds.len(),
            });
        }
        if let Some(j) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(LpError::NonFinite(format!("objective coefficient {j}")));
        }
        if let Some(j) = self
            .lower_bounds
            .iter()
            .position(|l| l.is_nan() || *l == f64::INFINITY)
        {
            return Err(LpError::NonFinite(format!("lower bound {j}")));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(LpError::DimensionMismatch {
                    what: format!("constraint {i}"),
                    expected: n,
                    found: c.coeffs.len(),
                });
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(LpError::NonFinite(format!("constraint {i}")));
            }
        }
        Ok(())
    }
}

fn write_terms(f: &mut fmt::Formatter<'_>, coeffs: &[f64]) -> fmt::Result {
    let mut first = true;
    for (j, &a) in coeffs.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        if first {
            write!(f, "{a} x{j}")?;
        } else if a < 0.0 {
            write!(f, " - {} x{j}", -a)?;
        } else {
            write!(f, " + {a} x{j}")?;
        }
        first = false;
    }
    if first {
        write!(f, "0")?;
    }
    Ok(())
}

/// LP-format style dump, for troubleshooting.
impl fmt::Display for LpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sense {
            Sense::Maximize => writeln!(f, "Maximize")?,
            Sense::Minimize => writeln!(f, "Minimize")?,
        }
        write!(f, " obj: ")?;
        write_terms(f, &self.objective)?;
        writeln!(f)?;
        writeln!(f, "Subject To")?;
        for (i, c) in self.constraints.iter().enumerate() {
            write!(f, " c{i}: ")?;
            write_terms(f, &c.coeffs)?;
            writeln!(f, " {} {}", c.relation.symbol(), c.rhs)?;
        }
        writeln!(f, "Bounds")?;
        for (j, &l) in self.lower_bounds.iter().enumerate() {
            if l == f64::NEG_INFINITY {
                writeln!(f, " x{j} free")?;
            } else {
                writeln!(f, " x{j} >= {l}")?;
            }
        }
        writeln!(f, "End")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// `c·x` at the returned point; NaN unless optimal.
    pub objective_value: f64,
    pub primal: Vec<f64>,
    /// One multiplier per constraint, signed so that
    /// `objective_value = b·dual + (c - Aᵀ dual)·lower` at optimality.
    pub dual: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    fn without_point(status: LpStatus, iterations: usize) -> Self {
        Self {
            status,
            objective_value: f64::NAN,
            primal: Vec::new(),
            dual: Vec::new(),
            iterations,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(
        "simplex breakdown in phase {phase} after {iterations} iterations \
         (bland={bland}, degenerate run={degenerate_run}): {reason}"
    )]
    SolverFailure {
        phase: u8,
        iterations: usize,
        bland: bool,
        degenerate_run: usize,
        reason: String,
    },
}

/// How an original variable maps onto tableau columns.
#[derive(Clone, Copy)]
enum VarMap {
    /// `x = lower + col`
    Shifted { col: usize, lower: f64 },
    /// `x = plus - minus`
    Split { plus: usize, minus: usize },
}

struct Tableau {
    rows: usize,
    width: usize,
    /// rows × width, last column is the right-hand side
    cells: Vec<f64>,
    /// reduced costs, last entry is -objective
    cost_row: Vec<f64>,
    basis: Vec<usize>,
    /// columns that may never enter the basis
    barred: Vec<bool>,
    iterations: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.cells[r * self.width + self.width - 1]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let p = self.at(pr, pc);
        for c in 0..w {
            self.cells[pr * w + c] /= p;
        }
        self.cells[pr * w + pc] = 1.0;
        let (before, rest) = self.cells.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let factor = row[pc];
            if factor != 0.0 {
                for (x, &y) in row.iter_mut().zip(prow.iter()) {
                    *x -= factor * y;
                }
                row[pc] = 0.0;
            }
        }
        let factor = self.cost_row[pc];
        if factor != 0.0 {
            for (x, &y) in self.cost_row.iter_mut().zip(prow.iter()) {
                *x -= factor * y;
            }
            self.cost_row[pc] = 0.0;
        }
        self.basis[pr] = pc;
        // clean roundoff on the right-hand side
        for r in 0..self.rows {
            let v = &mut self.cells[r * w + w - 1];
            if *v < 0.0 && *v > -PIVOT_TOL {
                *v = 0.0;
            }
        }
        self.iterations += 1;
    }

    /// Installs `costs` (one per column) as the objective and prices out the basis.
    fn set_costs(&mut self, costs: &[f64]) {
        let w = self.width;
        self.cost_row.clear();
        self.cost_row.extend_from_slice(costs);
        self.cost_row.push(0.0);
        for r in 0..self.rows {
            let cb = costs[self.basis[r]];
            if cb != 0.0 {
                for c in 0..w {
                    self.cost_row[c] -= cb * self.cells[r * w + c];
                }
            }
        }
    }

    fn run(&mut self, phase: u8, max_iter: usize) -> Result<PhaseEnd, LpError> {
        let ncols = self.width - 1;
        let mut degenerate_run = 0usize;
        loop {
            let bland = degenerate_run >= DEGENERATE_SWITCH;
            // pricing
            let mut entering = None;
            let mut best = -PIVOT_TOL;
            for c in 0..ncols {
                if self.barred[c] {
                    continue;
                }
                let d = self.cost_row[c];
                if d < best {
                    entering = Some(c);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(pc) = entering else {
                return Ok(PhaseEnd::Optimal);
            };
            if self.iterations >= max_iter {
                return Err(LpError::SolverFailure {
                    phase,
                    iterations: self.iterations,
                    bland,
                    degenerate_run,
                    reason: "iteration limit reached".into(),
                });
            }
            // ratio test
            let mut leave: Option<(usize, f64, f64)> = None;
            let mut tiny_positive = false;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a <= PIVOT_TOL {
                    if a > 1e-14 {
                        tiny_positive = true;
                    }
                    continue;
                }
                let ratio = self.rhs(r) / a;
                leave = match leave {
                    None => Some((r, ratio, a)),
                    Some((br, bratio, ba)) => {
                        let tie = (ratio - bratio).abs() <= 1e-12 * (1.0 + bratio.abs());
                        let better = if tie {
                            if bland {
                                self.basis[r] < self.basis[br]
                            } else {
                                a > ba
                            }
                        } else {
                            ratio < bratio
                        };
                        if better {
                            Some((r, ratio, a))
                        } else {
                            Some((br, bratio, ba))
                        }
                    }
                };
            }
            let Some((pr, ratio, _)) = leave else {
                if tiny_positive && bland {
                    return Err(LpError::SolverFailure {
                        phase,
                        iterations: self.iterations,
                        bland,
                        degenerate_run,
                        reason: format!("pivot below tolerance in column {pc}"),
                    });
                }
                return Ok(PhaseEnd::Unbounded);
            };
            if ratio <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(pr, pc);
        }
    }
}

/// Solves `problem` with the two-phase primal simplex method.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    problem.validate()?;
    let n = problem.num_vars();
    let m = problem.constraints.len();

    // Column layout: structural, then slack/surplus, then artificial.
    let mut var_map = Vec::with_capacity(n);
    let mut n_struct = 0usize;
    for &l in &problem.lower_bounds {
        if l == f64::NEG_INFINITY {
            var_map.push(VarMap::Split {
                plus: n_struct,
                minus: n_struct + 1,
            });
            n_struct += 2;
        } else {
            var_map.push(VarMap::Shifted {
                col: n_struct,
                lower: l,
            });
            n_struct += 1;
        }
    }

    // Internal rows: scaled, shifted, flipped so that rhs >= 0.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::with_capacity(m);
    let mut row_factor = Vec::with_capacity(m);
    for c in &problem.constraints {
        let mut coeffs = vec![0.0; n_struct];
        let mut rhs = c.rhs;
        for (j, &a) in c.coeffs.iter().enumerate() {
            match var_map[j] {
                VarMap::Shifted { col, lower } => {
                    coeffs[col] = a;
                    rhs -= a * lower;
                }
                VarMap::Split { plus, minus } => {
                    coeffs[plus] = a;
                    coeffs[minus] = -a;
                }
            }
        }
        let scale = coeffs.iter().fold(0.0f64, |acc, a| acc.max(a.abs()));
        let mut factor = if scale > 0.0 { 1.0 / scale } else { 1.0 };
        let mut relation = c.relation;
        if rhs < 0.0 {
            factor = -factor;
            relation = relation.flipped();
        }
        coeffs.iter_mut().for_each(|a| *a *= factor);
        rows.push((coeffs, relation, rhs * factor));
        row_factor.push(factor);
    }

    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let ncols = n_struct + n_slack + n_art;
    let width = ncols + 1;
    let mut cells = vec![0.0; m * width];
    let mut basis = vec![0usize; m];
    let mut identity_col = vec![0usize; m];
    let mut next_slack = n_struct;
    let mut next_art = n_struct + n_slack;
    for (r, (coeffs, relation, rhs)) in rows.iter().enumerate() {
        let row = &mut cells[r * width..(r + 1) * width];
        row[..n_struct].copy_from_slice(coeffs);
        row[ncols] = *rhs;
        match relation {
            Relation::Le => {
                row[next_slack] = 1.0;
                basis[r] = next_slack;
                identity_col[r] = next_slack;
                next_slack += 1;
            }
            Relation::Ge => {
                row[next_slack] = -1.0;
                next_slack += 1;
                row[next_art] = 1.0;
                basis[r] = next_art;
                identity_col[r] = next_art;
                next_art += 1;
            }
            Relation::Eq => {
                row[next_art] = 1.0;
                basis[r] = next_art;
                identity_col[r] = next_art;
                next_art += 1;
            }
        }
    }
    let is_art = |c: usize| c >= n_struct + n_slack && c < ncols;

    let mut tab = Tableau {
        rows: m,
        width,
        cells,
        cost_row: Vec::new(),
        basis,
        barred: vec![false; ncols],
        iterations: 0,
    };
    let max_iter = 1_000 + 50 * (m + ncols);

    // Phase 1
    if n_art > 0 {
        let costs: Vec<f64> = (0..ncols).map(|c| if is_art(c) { 1.0 } else { 0.0 }).collect();
        tab.set_costs(&costs);
        // artificials that leave never come back
        for c in 0..ncols {
            tab.barred[c] = is_art(c) && !tab.basis.contains(&c);
        }
        tab.run(1, max_iter)?;
        let infeas = -tab.cost_row[ncols];
        let rhs_scale = (0..m).fold(1.0f64, |acc, r| acc.max(tab.rhs(r).abs()));
        if infeas > FEAS_TOL * rhs_scale {
            return Ok(LpSolution::without_point(LpStatus::Infeasible, tab.iterations));
        }
        // drive remaining artificials out of the basis
        for r in 0..m {
            if !is_art(tab.basis[r]) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for c in 0..n_struct + n_slack {
                let a = tab.at(r, c).abs();
                if a > PIVOT_TOL && best.is_none_or(|(_, b)| a > b) {
                    best = Some((c, a));
                }
            }
            if let Some((c, _)) = best {
                tab.pivot(r, c);
            }
        }
        for c in 0..ncols {
            tab.barred[c] = is_art(c);
        }
    }

    // Phase 2, internally a minimisation
    let sign = match problem.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut costs = vec![0.0; ncols];
    for (j, map) in var_map.iter().enumerate() {
        let c = sign * problem.objective[j];
        match *map {
            VarMap::Shifted { col, .. } => costs[col] = c,
            VarMap::Split { plus, minus } => {
                costs[plus] = c;
                costs[minus] = -c;
            }
        }
    }
    tab.set_costs(&costs);
    if let PhaseEnd::Unbounded = tab.run(2, max_iter)? {
        return Ok(LpSolution::without_point(LpStatus::Unbounded, tab.iterations));
    }

    let mut internal = vec![0.0; ncols];
    for r in 0..m {
        internal[tab.basis[r]] = tab.rhs(r);
    }
    let primal: Vec<f64> = var_map
        .iter()
        .map(|map| match *map {
            VarMap::Shifted { col, lower } => lower + internal[col],
            VarMap::Split { plus, minus } => internal[plus] - internal[minus],
        })
        .collect();
    let dual: Vec<f64> = (0..m)
        .map(|r| {
            let y = -tab.cost_row[identity_col[r]];
            sign * row_factor[r] * y
        })
        .collect();
    let objective_value = problem
        .objective
        .iter()
        .zip(&primal)
        .map(|(c, x)| c * x)
        .sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective_value,
        primal,
        dual,
        iterations: tab.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximize_single_bound() {
        let mut lp = LpProblem::maximize(vec![1.0]);
        lp.constrain(vec![1.0], Relation::Le, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-12);
        assert!((s.primal[0] - 1.0).abs() < 1e-12);
        assert!((s.dual[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_upper_bound_is_infeasible() {
        let mut lp = LpProblem::maximize(vec![1.0]);
        lp.constrain(vec![1.0], Relation::Le, -1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        let mut lp = LpProblem::maximize(vec![1.0, 1.0]);
        lp.constrain(vec![1.0, -1.0], Relation::Le, 2.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn textbook_two_phase() {
        // min 2x + 3y  s.t. x + y >= 4, x + 3y >= 6, x <= 3
        let mut lp = LpProblem::minimize(vec![2.0, 3.0]);
        lp.constrain(vec![1.0, 1.0], Relation::Ge, 4.0)
            .constrain(vec![1.0, 3.0], Relation::Ge, 6.0)
            .constrain(vec![1.0, 0.0], Relation::Le, 3.0);
        let s = solve_lp(&lp).unwrap();
        assert!(s.is_optimal());
        // optimum at (3, 1): 9
        assert!((s.objective_value - 9.0).abs() < 1e-10);
        let by: f64 = lp.constraints.iter().zip(&s.dual).map(|(c, y)| c.rhs * y).sum();
        assert!((by - 9.0).abs() < 1e-10);
    }

    #[test]
    fn free_variable_goes_negative() {
        // min x  s.t. x >= -3, x free
        let mut lp = LpProblem::minimize(vec![1.0]);
        lp.set_free(0).constrain(vec![1.0], Relation::Ge, -3.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.primal[0] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_lower_bound() {
        // min x + y  s.t. x + y >= 1, x >= 2
        let mut lp = LpProblem::minimize(vec![1.0, 1.0]);
        lp.set_lower(0, 2.0).constrain(vec![1.0, 1.0], Relation::Ge, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.objective_value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn equality_with_redundant_row() {
        // x + y = 2 twice; max x
        let mut lp = LpProblem::maximize(vec![1.0, 0.0]);
        lp.constrain(vec![1.0, 1.0], Relation::Eq, 2.0)
            .constrain(vec![2.0, 2.0], Relation::Eq, 4.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.objective_value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let mut lp = LpProblem::maximize(vec![1.0, 2.0]);
        lp.constrain(vec![1.0], Relation::Le, 1.0);
        assert!(matches!(solve_lp(&lp), Err(LpError::DimensionMismatch { .. })));
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's example cycles under naive Dantzig pricing.
        let mut lp = LpProblem::minimize(vec![-0.75, 150.0, -0.02, 6.0]);
        lp.constrain(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0)
            .constrain(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0)
            .constrain(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.objective_value + 0.05).abs() < 1e-10);
    }

    #[test]
    fn dump_mentions_free_vars() {
        let mut lp = LpProblem::minimize(vec![1.0, -2.0]);
        lp.set_free(1).constrain(vec![1.0, 1.0], Relation::Ge, 1.0);
        let text = lp.to_string();
        assert!(text.starts_with("Minimize"));
        assert!(text.contains("x1 free"));
        assert!(text.contains("c0: 1 x0 + 1 x1 >= 1"));
    }
}
