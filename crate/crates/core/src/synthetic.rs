//! Demo panel: 27 DMUs over 1998–2007 with a planted three-tier efficiency
//! structure shared by an ICT and a health production model.
//!
//! Every DMU uses a near-proportional input and output mix (±0.5 % noise)
//! scaled by its size and its tier efficiency. One DMU has exactly the base
//! mix with efficiency 1 in every period, so it is the only unit on the
//! frontier and its mean score is exactly 1. Mortality outputs are generated
//! on the transformed (more-is-better) scale and stored raw, so the default
//! max-minus transform recovers them.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::panel::{PanelDataset, VariableDef};

pub const DEMO_SEED: u64 = 20_071_998;
pub const N_DMUS: usize = 27;
pub const FIRST_YEAR: usize = 1998;
pub const N_PERIODS: usize = 10;

pub const ICT_INPUTS: [&str; 4] = ["TEL_INV", "ICT_INV", "ICT_STAFF", "ICT_GDP"];
pub const ICT_OUTPUTS: [&str; 10] = [
    "MCS", "IU", "MTL", "PC", "BB", "HOSTS", "TEL_REV", "MOB_REV", "INT_BW", "PAYPHONES",
];
pub const HEALTH_INPUTS: [&str; 2] = ["HEC", "HGDP"];
pub const HEALTH_OUTPUTS: [&str; 5] = ["LEB", "IMR", "U5MR", "MMR", "AMR"];
pub const UNDESIRABLE: [&str; 4] = ["IMR", "U5MR", "MMR", "AMR"];

/// Tier sizes, most efficient first.
pub const TIER_SIZES: [usize; 3] = [3, 14, 10];
const TIER_CENTERS: [f64; 3] = [0.95, 0.72, 0.45];

#[derive(Clone, Debug, PartialEq)]
pub struct DemoData {
    pub panel: PanelDataset,
    /// planted tier per DMU, 0 = most efficient
    pub tiers: Vec<usize>,
    pub dominant: String,
}

pub fn schema() -> Vec<VariableDef> {
    let mut vars: Vec<VariableDef> = ICT_INPUTS.iter().map(|v| VariableDef::input(*v)).collect();
    vars.extend(ICT_OUTPUTS.iter().map(|v| VariableDef::output(*v)));
    vars.extend(HEALTH_INPUTS.iter().map(|v| VariableDef::input(*v)));
    for v in HEALTH_OUTPUTS {
        let def = VariableDef::output(v);
        vars.push(if UNDESIRABLE.contains(&v) { def.undesirable() } else { def });
    }
    vars
}

fn noise<R: Rng>(rng: &mut R) -> f64 {
    1.0 + rng.gen_range(-0.005..0.005)
}

/// Values for one production model: `(inputs, outputs)` indexed
/// `[dmu][period][variable]`.
type Block = (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>);

fn production_block<R: Rng>(rng: &mut R, tiers: &[usize], dominant: usize, n_in: usize, n_out: usize, growth: f64) -> Block {
    let base_in: Vec<f64> = (0..n_in).map(|_| rng.gen_range(1.0..10.0)).collect();
    let base_out: Vec<f64> = (0..n_out).map(|_| rng.gen_range(1.0..100.0)).collect();
    let mut inputs = Vec::with_capacity(tiers.len());
    let mut outputs = Vec::with_capacity(tiers.len());
    for (d, &tier) in tiers.iter().enumerate() {
        let size = rng.gen_range(0.0f64..3.0).exp();
        let level = TIER_CENTERS[tier] + rng.gen_range(-0.02..0.02);
        let mut x_rows = Vec::with_capacity(N_PERIODS);
        let mut y_rows = Vec::with_capacity(N_PERIODS);
        for p in 0..N_PERIODS {
            let scale = size * growth.powi(p as i32);
            if d == dominant {
                x_rows.push(base_in.iter().map(|b| scale * b).collect());
                y_rows.push(base_out.iter().map(|b| scale * b).collect());
                continue;
            }
            let eff = (level + rng.gen_range(-0.01..0.01)).min(0.975);
            x_rows.push(base_in.iter().map(|b| scale * b * noise(rng)).collect());
            y_rows.push(base_out.iter().map(|b| eff * scale * b * noise(rng)).collect());
        }
        inputs.push(x_rows);
        outputs.push(y_rows);
    }
    (inputs, outputs)
}

/// Builds the demo panel deterministically from `seed`.
pub fn demo_data(seed: u64) -> DemoData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..N_DMUS).collect();
    order.shuffle(&mut rng);
    let mut tiers = vec![0; N_DMUS];
    let mut next = 0;
    for (tier, &size) in TIER_SIZES.iter().enumerate() {
        for &d in &order[next..next + size] {
            tiers[d] = tier;
        }
        next += size;
    }
    let dominant = order[0];

    let (ict_x, ict_y) = production_block(&mut rng, &tiers, dominant, ICT_INPUTS.len(), ICT_OUTPUTS.len(), 1.08);
    let (h_x, mut h_y) = production_block(&mut rng, &tiers, dominant, HEALTH_INPUTS.len(), HEALTH_OUTPUTS.len(), 1.02);
    // mortality columns: raw = 101·min − t, so 1.01·max(raw) − raw = t
    for o in 1..HEALTH_OUTPUTS.len() {
        for p in 0..N_PERIODS {
            let min = (0..N_DMUS).map(|d| h_y[d][p][o]).fold(f64::INFINITY, f64::min);
            for row in h_y.iter_mut() {
                row[p][o] = 101.0 * min - row[p][o];
            }
        }
    }

    let vars = schema();
    let mut values = Vec::with_capacity(N_DMUS * N_PERIODS * vars.len());
    for d in 0..N_DMUS {
        for p in 0..N_PERIODS {
            let cells = ict_x[d][p].iter().chain(&ict_y[d][p]).chain(&h_x[d][p]).chain(&h_y[d][p]);
            values.extend(cells.map(|&v| Some(v)));
        }
    }
    let dmus: Vec<String> = (1..=N_DMUS).map(|d| format!("C{d:02}")).collect();
    let periods = (0..N_PERIODS).map(|p| (FIRST_YEAR + p).to_string()).collect();
    let panel = PanelDataset::new(dmus.clone(), periods, vars, values).expect("demo panel shape");
    DemoData {
        panel,
        tiers,
        dominant: dmus[dominant].clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_shape_and_determinism() {
        let a = demo_data(DEMO_SEED);
        assert_eq!(a.panel.dims(), (27, 10, 21));
        assert_eq!(a.panel.missing_count(), 0);
        assert_eq!(a.tiers.iter().filter(|&&t| t == 1).count(), 14);
        assert_eq!(a, demo_data(DEMO_SEED));
        assert_ne!(a.panel, demo_data(DEMO_SEED + 1).panel);
    }
}
