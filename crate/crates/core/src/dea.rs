//! Data envelopment analysis: CCR (constant returns) and BCC (variable
//! returns) models, input or output oriented.
//!
//! Every DMU is solved twice. The envelopment form gives the reported score
//! and the peer weights; the multiplier form gives the virtual input/output
//! weights. The two objectives are LP duals of each other and must agree to
//! within [`DUALITY_TOL`]. A second envelopment stage maximises the
//! (units-free) slack sum at the optimal radial score, so weakly efficient
//! DMUs show up with nonzero slacks rather than through an ε lower bound on
//! the weights.
//!
//! Columns are divided by their maximum before any LP is built. Scores are
//! invariant to that scaling; the weights and slacks are mapped back to the
//! original units.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linprog::{solve_lp, LpError, LpProblem, LpStatus, Relation};
use crate::panel::{self, CrossSection, PanelDataset, PanelError, ValidationReport};

pub const DUALITY_TOL: f64 = 1e-6;
/// Scores this close to 1 are reported as exactly 1.
pub const SNAP_TOL: f64 = 1e-7;
pub const MIN_SCORE: f64 = 1e-12;
/// Relative slack (slack / own value) treated as nonzero.
pub const SLACK_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnsToScale {
    #[default]
    Crs,
    Vrs,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    #[default]
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeaSpec {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub returns_to_scale: ReturnsToScale,
    #[serde(default)]
    pub orientation: Orientation,
}

impl DeaSpec {
    pub fn new(inputs: &[&str], outputs: &[&str], returns_to_scale: ReturnsToScale, orientation: Orientation) -> Self {
        Self {
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            returns_to_scale,
            orientation,
        }
    }

    pub fn validate(&self) -> Result<(), DeaError> {
        if self.inputs.is_empty() || self.outputs.is_empty() {
            return Err(DeaError::Spec("inputs and outputs must be non-empty".into()));
        }
        if let Some(v) = self.inputs.iter().find(|v| self.outputs.contains(v)) {
            return Err(DeaError::Spec(format!("`{v}` is both an input and an output")));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DeaError {
    #[error("invalid DEA specification: {0}")]
    Spec(String),
    #[error("DMU `{0}` is not in the cross-section")]
    UnknownDmu(String),
    #[error("dataset failed DEA validation ({} errors)", .0.errors.len())]
    Validation(ValidationReport),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("LP solver: {0}")]
    Lp(#[from] LpError),
    #[error("internal consistency: {0}")]
    Internal(String),
    #[error("multiplier score {multiplier} disagrees with envelopment score {envelopment}")]
    DualityMismatch { envelopment: f64, multiplier: f64 },
    #[error("period {period}, DMU {dmu}: {source}")]
    At {
        period: String,
        dmu: String,
        #[source]
        source: Box<DeaError>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierWeights {
    /// u, one per output
    pub outputs: Vec<f64>,
    /// v, one per input
    pub inputs: Vec<f64>,
    /// free scale term of the BCC multiplier form
    pub free_term: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelopment {
    /// peer weight for every DMU of the cross-section
    pub lambdas: Vec<f64>,
    pub input_slacks: Vec<f64>,
    pub output_slacks: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyResult {
    pub dmu: String,
    pub orientation: Orientation,
    pub returns_to_scale: ReturnsToScale,
    /// θ in (0, 1] for input orientation, φ >= 1 for output orientation.
    pub score: f64,
    pub envelopment_objective: f64,
    pub multiplier_objective: f64,
    pub weights: MultiplierWeights,
    pub envelopment: Envelopment,
    /// radially efficient but with nonzero slacks
    pub weakly_efficient: bool,
}

impl EfficiencyResult {
    /// Technical efficiency in (0, 1]: θ, or 1/φ for output orientation.
    pub fn efficiency(&self) -> f64 {
        match self.orientation {
            Orientation::Input => self.score,
            Orientation::Output => 1.0 / self.score,
        }
    }

    /// Peers with positive weight, as (index, λ).
    pub fn peers(&self) -> Vec<(usize, f64)> {
        self.envelopment
            .lambdas
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, l)| *l > 1e-9)
            .collect()
    }
}

/// Column-scaled copy of a cross-section.
struct Scaled {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    x_scale: Vec<f64>,
    y_scale: Vec<f64>,
}

fn column_max(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    (0..width)
        .map(|c| rows.iter().map(|r| r[c]).fold(0.0, f64::max))
        .collect()
}

impl Scaled {
    fn new(cs: &CrossSection) -> Self {
        let x_scale = column_max(&cs.inputs, cs.input_names.len());
        let y_scale = column_max(&cs.outputs, cs.output_names.len());
        let x = cs
            .inputs
            .iter()
            .map(|r| r.iter().zip(&x_scale).map(|(v, s)| v / s).collect())
            .collect();
        let y = cs
            .outputs
            .iter()
            .map(|r| r.iter().zip(&y_scale).map(|(v, s)| v / s).collect())
            .collect();
        Self {
            x,
            y,
            x_scale,
            y_scale,
        }
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    fn m(&self) -> usize {
        self.x_scale.len()
    }

    fn s(&self) -> usize {
        self.y_scale.len()
    }
}

fn expect_optimal(problem: &LpProblem, what: &str) -> Result<crate::linprog::LpSolution, DeaError> {
    let sol = solve_lp(problem)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol),
        status => Err(DeaError::Internal(format!("{what} LP is {status:?}"))),
    }
}

/// Radial envelopment LP. Variables: [θ or φ, λ_1..λ_n].
fn envelopment_lp(data: &Scaled, o: usize, rts: ReturnsToScale, orientation: Orientation) -> LpProblem {
    let n = data.n();
    let mut obj = vec![0.0; n + 1];
    obj[0] = 1.0;
    let mut lp = match orientation {
        Orientation::Input => LpProblem::minimize(obj),
        Orientation::Output => LpProblem::maximize(obj),
    };
    lp.set_free(0);
    for i in 0..data.m() {
        let mut row = vec![0.0; n + 1];
        for j in 0..n {
            row[j + 1] = data.x[j][i];
        }
        match orientation {
            Orientation::Input => {
                row[0] = -data.x[o][i];
                lp.constrain(row, Relation::Le, 0.0);
            }
            Orientation::Output => {
                lp.constrain(row, Relation::Le, data.x[o][i]);
            }
        }
    }
    for r in 0..data.s() {
        let mut row = vec![0.0; n + 1];
        for j in 0..n {
            row[j + 1] = data.y[j][r];
        }
        match orientation {
            Orientation::Input => {
                lp.constrain(row, Relation::Ge, data.y[o][r]);
            }
            Orientation::Output => {
                row[0] = -data.y[o][r];
                lp.constrain(row, Relation::Ge, 0.0);
            }
        }
    }
    if rts == ReturnsToScale::Vrs {
        let mut row = vec![1.0; n + 1];
        row[0] = 0.0;
        lp.constrain(row, Relation::Eq, 1.0);
    }
    lp
}

/// Second stage: maximise Σ s⁻/x₀ + Σ s⁺/y₀ at the optimal radial score.
/// Variables: [λ (n), s⁻ (m), s⁺ (s)].
fn slack_lp(data: &Scaled, o: usize, rts: ReturnsToScale, orientation: Orientation, radial: f64) -> LpProblem {
    let (n, m, s) = (data.n(), data.m(), data.s());
    let mut obj = vec![0.0; n + m + s];
    for i in 0..m {
        obj[n + i] = 1.0 / data.x[o][i];
    }
    for r in 0..s {
        obj[n + m + r] = 1.0 / data.y[o][r];
    }
    let mut lp = LpProblem::maximize(obj);
    let (x_target, y_target) = match orientation {
        Orientation::Input => (radial, 1.0),
        Orientation::Output => (1.0, radial),
    };
    for i in 0..m {
        let mut row = vec![0.0; n + m + s];
        for j in 0..n {
            row[j] = data.x[j][i];
        }
        row[n + i] = 1.0;
        lp.constrain(row, Relation::Eq, x_target * data.x[o][i]);
    }
    for r in 0..s {
        let mut row = vec![0.0; n + m + s];
        for j in 0..n {
            row[j] = data.y[j][r];
        }
        row[n + m + r] = -1.0;
        lp.constrain(row, Relation::Eq, y_target * data.y[o][r]);
    }
    if rts == ReturnsToScale::Vrs {
        let mut row = vec![0.0; n + m + s];
        row[..n].iter_mut().for_each(|v| *v = 1.0);
        lp.constrain(row, Relation::Eq, 1.0);
    }
    lp
}

/// Multiplier LP. Variables: [u (s), v (m), w (free, VRS only)].
fn multiplier_lp(data: &Scaled, o: usize, rts: ReturnsToScale, orientation: Orientation) -> LpProblem {
    let (n, m, s) = (data.n(), data.m(), data.s());
    let vrs = rts == ReturnsToScale::Vrs;
    let width = s + m + usize::from(vrs);
    let mut obj = vec![0.0; width];
    match orientation {
        Orientation::Input => obj[..s].copy_from_slice(&data.y[o]),
        Orientation::Output => obj[s..s + m].copy_from_slice(&data.x[o]),
    }
    if vrs {
        obj[s + m] = 1.0;
    }
    let mut lp = match orientation {
        Orientation::Input => LpProblem::maximize(obj),
        Orientation::Output => LpProblem::minimize(obj),
    };
    if vrs {
        lp.set_free(s + m);
    }
    // normalisation
    let mut row = vec![0.0; width];
    match orientation {
        Orientation::Input => row[s..s + m].copy_from_slice(&data.x[o]),
        Orientation::Output => row[..s].copy_from_slice(&data.y[o]),
    }
    lp.constrain(row, Relation::Eq, 1.0);
    for j in 0..n {
        let mut row = vec![0.0; width];
        let sign = match orientation {
            Orientation::Input => 1.0,
            Orientation::Output => -1.0,
        };
        for r in 0..s {
            row[r] = sign * data.y[j][r];
        }
        for i in 0..m {
            row[s + i] = -sign * data.x[j][i];
        }
        if vrs {
            row[s + m] = 1.0;
        }
        match orientation {
            Orientation::Input => lp.constrain(row, Relation::Le, 0.0),
            Orientation::Output => lp.constrain(row, Relation::Ge, 0.0),
        };
    }
    lp
}

fn solve_scaled(
    cs: &CrossSection,
    data: &Scaled,
    o: usize,
    rts: ReturnsToScale,
    orientation: Orientation,
) -> Result<EfficiencyResult, DeaError> {
    let (n, m, s) = (data.n(), data.m(), data.s());

    let env = expect_optimal(&envelopment_lp(data, o, rts, orientation), "envelopment")?;
    let radial = env.primal[0];
    let mult = expect_optimal(&multiplier_lp(data, o, rts, orientation), "multiplier")?;
    let gap = (mult.objective_value - radial).abs();
    if gap > DUALITY_TOL * radial.abs().max(1.0) {
        return Err(DeaError::DualityMismatch {
            envelopment: radial,
            multiplier: mult.objective_value,
        });
    }

    let score = match orientation {
        Orientation::Input => {
            if radial >= 1.0 - SNAP_TOL {
                1.0
            } else {
                radial.max(MIN_SCORE)
            }
        }
        Orientation::Output => {
            if radial <= 1.0 + SNAP_TOL {
                1.0
            } else {
                radial
            }
        }
    };
    let target = if score == 1.0 { 1.0 } else { radial };

    // Stage two. If roundoff makes it infeasible, fall back to the stage-one
    // peers and read the slacks off directly.
    let stage_two = solve_lp(&slack_lp(data, o, rts, orientation, target))?;
    let (lambdas, s_minus, s_plus) = if stage_two.is_optimal() {
        (
            stage_two.primal[..n].to_vec(),
            stage_two.primal[n..n + m].to_vec(),
            stage_two.primal[n + m..].to_vec(),
        )
    } else {
        let lambdas = env.primal[1..].to_vec();
        let (xt, yt) = match orientation {
            Orientation::Input => (target, 1.0),
            Orientation::Output => (1.0, target),
        };
        let s_minus = (0..m)
            .map(|i| (xt * data.x[o][i] - (0..n).map(|j| lambdas[j] * data.x[j][i]).sum::<f64>()).max(0.0))
            .collect();
        let s_plus = (0..s)
            .map(|r| ((0..n).map(|j| lambdas[j] * data.y[j][r]).sum::<f64>() - yt * data.y[o][r]).max(0.0))
            .collect();
        (lambdas, s_minus, s_plus)
    };
    let has_slack = s_minus.iter().zip(&data.x[o]).any(|(sl, x)| sl / x > SLACK_TOL)
        || s_plus.iter().zip(&data.y[o]).any(|(sl, y)| sl / y > SLACK_TOL);

    let envelopment = if score == 1.0 && !has_slack {
        // λ_o = 1 is optimal whenever the DMU is fully efficient
        let mut lambdas = vec![0.0; n];
        lambdas[o] = 1.0;
        Envelopment {
            lambdas,
            input_slacks: vec![0.0; m],
            output_slacks: vec![0.0; s],
        }
    } else {
        Envelopment {
            lambdas: lambdas.iter().map(|l| l.max(0.0)).collect(),
            input_slacks: s_minus.iter().zip(&data.x_scale).map(|(v, k)| v.max(0.0) * k).collect(),
            output_slacks: s_plus.iter().zip(&data.y_scale).map(|(v, k)| v.max(0.0) * k).collect(),
        }
    };

    let weights = MultiplierWeights {
        outputs: mult.primal[..s].iter().zip(&data.y_scale).map(|(u, k)| u / k).collect(),
        inputs: mult.primal[s..s + m].iter().zip(&data.x_scale).map(|(v, k)| v / k).collect(),
        free_term: (rts == ReturnsToScale::Vrs).then(|| mult.primal[s + m]),
    };

    Ok(EfficiencyResult {
        dmu: cs.dmus[o].clone(),
        orientation,
        returns_to_scale: rts,
        score,
        envelopment_objective: radial,
        multiplier_objective: mult.objective_value,
        weights,
        envelopment,
        weakly_efficient: score == 1.0 && has_slack,
    })
}

fn dmu_position(cs: &CrossSection, dmu: &str) -> Result<usize, DeaError> {
    cs.dmus
        .iter()
        .position(|d| d == dmu)
        .ok_or_else(|| DeaError::UnknownDmu(dmu.to_string()))
}

/// Solves one DMU under the given model.
pub fn solve_dmu(
    cs: &CrossSection,
    dmu: &str,
    rts: ReturnsToScale,
    orientation: Orientation,
) -> Result<EfficiencyResult, DeaError> {
    let o = dmu_position(cs, dmu)?;
    solve_scaled(cs, &Scaled::new(cs), o, rts, orientation)
}

/// CCR (constant returns to scale) efficiency of `dmu`.
pub fn solve_ccr(cs: &CrossSection, dmu: &str, orientation: Orientation) -> Result<EfficiencyResult, DeaError> {
    solve_dmu(cs, dmu, ReturnsToScale::Crs, orientation)
}

/// BCC (variable returns to scale) efficiency of `dmu`.
pub fn solve_bcc(cs: &CrossSection, dmu: &str, orientation: Orientation) -> Result<EfficiencyResult, DeaError> {
    solve_dmu(cs, dmu, ReturnsToScale::Vrs, orientation)
}

/// Solves every DMU of a cross-section, in DMU order.
pub fn solve_cross_section(
    cs: &CrossSection,
    rts: ReturnsToScale,
    orientation: Orientation,
) -> Result<Vec<EfficiencyResult>, DeaError> {
    let data = Scaled::new(cs);
    (0..cs.len())
        .into_par_iter()
        .map(|o| {
            solve_scaled(cs, &data, o, rts, orientation).map_err(|e| DeaError::At {
                period: cs.period.clone(),
                dmu: cs.dmus[o].clone(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Per-period scores and their per-DMU means.
#[derive(Clone, Debug, PartialEq)]
pub struct EfficiencyPanel {
    pub spec: DeaSpec,
    pub dmus: Vec<String>,
    pub periods: Vec<String>,
    /// dmu × period, technical efficiency in (0, 1]
    pub scores: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    /// dmu × period
    pub results: Vec<Vec<EfficiencyResult>>,
}

impl EfficiencyPanel {
    /// DMUs whose mean is exactly 1.
    pub fn fully_efficient(&self) -> Vec<&str> {
        self.dmus
            .iter()
            .zip(&self.means)
            .filter(|(_, &m)| m == 1.0)
            .map(|(d, _)| d.as_str())
            .collect()
    }
}

/// Arithmetic mean in period order.
pub fn mean_in_order(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    sum / values.len() as f64
}

/// Runs one independent DEA per period (each period is its own reference
/// set) and averages the scores per DMU.
pub fn run_panel_dea(panel: &PanelDataset, spec: &DeaSpec) -> Result<EfficiencyPanel, DeaError> {
    let periods: Vec<String> = panel.periods().to_vec();
    run_periods(panel, spec, &periods)
}

/// As [`run_panel_dea`], restricted to the listed periods.
pub fn run_periods(panel: &PanelDataset, spec: &DeaSpec, periods: &[String]) -> Result<EfficiencyPanel, DeaError> {
    spec.validate()?;
    let report = panel::validate_for_dea(panel, spec);
    if !report.is_admissible() {
        return Err(DeaError::Validation(report));
    }
    let sections: Vec<CrossSection> = periods
        .iter()
        .map(|p| panel::slice_period(panel, p, spec))
        .collect::<Result<_, _>>()?;
    let per_period: Vec<Vec<EfficiencyResult>> = sections
        .par_iter()
        .map(|cs| solve_cross_section(cs, spec.returns_to_scale, spec.orientation))
        .collect::<Result<_, _>>()?;

    let n = panel.dmus().len();
    let mut results: Vec<Vec<EfficiencyResult>> = (0..n).map(|_| Vec::with_capacity(periods.len())).collect();
    for period_results in per_period {
        for (d, r) in period_results.into_iter().enumerate() {
            results[d].push(r);
        }
    }
    let scores: Vec<Vec<f64>> = results
        .iter()
        .map(|row| row.iter().map(EfficiencyResult::efficiency).collect())
        .collect();
    let means = scores.iter().map(|row| mean_in_order(row)).collect();
    Ok(EfficiencyPanel {
        spec: spec.clone(),
        dmus: panel.dmus().to_vec(),
        periods: periods.to_vec(),
        scores,
        means,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cs(x: &[f64], y: &[f64]) -> CrossSection {
        CrossSection::from_matrices(x.iter().map(|&v| vec![v]).collect(), y.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    #[test]
    fn lone_dmu_is_its_own_peer() {
        let c = cs(&[3.0], &[7.0]);
        for r in [solve_ccr(&c, "D0", Orientation::Input).unwrap(), solve_bcc(&c, "D0", Orientation::Input).unwrap()] {
            assert_eq!(r.score, 1.0);
            assert_eq!(r.peers(), vec![(0, 1.0)]);
        }
    }

    #[test]
    fn two_dmu_ratio_example() {
        let c = cs(&[2.0, 4.0], &[4.0, 4.0]);
        let a = solve_ccr(&c, "D0", Orientation::Input).unwrap();
        let b = solve_ccr(&c, "D1", Orientation::Input).unwrap();
        assert_eq!(a.score, 1.0);
        assert!((b.score - 0.5).abs() < 1e-12);
        // B's only peer is A, scaled to B's output
        assert_eq!(b.peers().len(), 1);
        assert!((b.envelopment.lambdas[0] - 1.0).abs() < 1e-9);
        // output orientation reports φ = 1/θ under CRS
        let bo = solve_ccr(&c, "D1", Orientation::Output).unwrap();
        assert!((bo.score - 2.0).abs() < 1e-9);
        assert!((bo.efficiency() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn vrs_boundary_points_are_efficient() {
        let c = cs(&[1.0, 2.0, 4.0], &[1.0, 3.0, 4.0]);
        for d in ["D0", "D1", "D2"] {
            assert_eq!(solve_bcc(&c, d, Orientation::Input).unwrap().score, 1.0, "{d}");
        }
        // CCR: best ratio is B (1.5)
        let a = solve_ccr(&c, "D0", Orientation::Input).unwrap();
        assert!((a.score - 1.0 / 1.5).abs() < 1e-9);
    }

    #[test]
    fn weak_efficiency_shows_as_slack() {
        // D1 uses more of input 2 for the same output as D0: radially efficient, slack in x2
        let c = CrossSection::from_matrices(
            vec![vec![1.0, 1.0], vec![1.0, 2.0]],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap();
        let r = solve_ccr(&c, "D1", Orientation::Input).unwrap();
        assert_eq!(r.score, 1.0);
        assert!(r.weakly_efficient);
        assert!((r.envelopment.input_slacks[1] - 1.0).abs() < 1e-9);
        assert!(!solve_ccr(&c, "D0", Orientation::Input).unwrap().weakly_efficient);
    }

    #[test]
    fn vrs_multiplier_has_free_term() {
        let c = cs(&[1.0, 2.0, 4.0, 3.0], &[1.0, 3.0, 4.0, 2.0]);
        let r = solve_bcc(&c, "D3", Orientation::Input).unwrap();
        assert!(r.weights.free_term.is_some());
        assert!((r.multiplier_objective - r.envelopment_objective).abs() < 1e-9);
        let sum: f64 = r.envelopment.lambdas.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_dmu() {
        let c = cs(&[1.0], &[1.0]);
        assert!(matches!(solve_ccr(&c, "nope", Orientation::Input), Err(DeaError::UnknownDmu(_))));
    }

    #[test]
    fn spec_must_be_disjoint() {
        let s = DeaSpec::new(&["a"], &["a"], ReturnsToScale::Crs, Orientation::Input);
        assert!(s.validate().is_err());
    }
}
