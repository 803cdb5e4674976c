mod common;

use common::{random_small_lp, vertex_enumeration, OracleStatus};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tristage::linprog::{solve_lp, LpProblem, LpStatus, Relation, Sense};

fn status_of(lp: &LpProblem) -> OracleStatus {
    let s = solve_lp(lp).expect("solver failure");
    match s.status {
        LpStatus::Optimal => OracleStatus::Optimal(s.objective_value),
        LpStatus::Infeasible => OracleStatus::Infeasible,
        LpStatus::Unbounded => OracleStatus::Unbounded,
    }
}

#[test]
fn matches_vertex_enumeration_on_random_lps() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut counts = [0usize; 3];
    for trial in 0..500 {
        let lp = random_small_lp(&mut rng);
        let got = status_of(&lp);
        let want = vertex_enumeration(&lp);
        match (got, want) {
            (OracleStatus::Optimal(a), OracleStatus::Optimal(b)) => {
                counts[0] += 1;
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "trial {trial}: {a} vs {b}\n{lp}");
            }
            (a, b) => {
                assert_eq!(a, b, "trial {trial}\n{lp}");
                if a == OracleStatus::Infeasible {
                    counts[1] += 1;
                } else {
                    counts[2] += 1;
                }
            }
        }
    }
    // the generator must exercise every status
    assert!(counts.iter().all(|&c| c > 20), "{counts:?}");
}

/// Feasible, bounded LPs: `A x <= b` with `b > 0` and a positive box row.
fn bounded_lp() -> impl Strategy<Value = LpProblem> {
    (1usize..=6, 1usize..=6, any::<bool>()).prop_flat_map(|(n, m, maximize)| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, n), m),
            prop::collection::vec(0.1f64..5.0, m),
            prop::collection::vec(0usize..3, m),
        )
            .prop_map(move |(c, a, b, rel)| {
                let mut lp = LpProblem::new(if maximize { Sense::Maximize } else { Sense::Minimize }, c);
                for ((row, rhs), r) in a.into_iter().zip(b).zip(rel) {
                    // x = 0 stays feasible: Le with b > 0, or Ge with -b
                    match r {
                        0 | 1 => lp.constrain(row, Relation::Le, rhs),
                        _ => lp.constrain(row, Relation::Ge, -rhs),
                    };
                }
                lp.constrain(vec![1.0; n], Relation::Le, 10.0);
                lp
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn strong_duality_and_complementary_slackness(lp in bounded_lp()) {
        let s = solve_lp(&lp).unwrap();
        prop_assert_eq!(s.status, LpStatus::Optimal);
        let scale = s.objective_value.abs().max(1.0);
        let by: f64 = lp.constraints.iter().zip(&s.dual).map(|(c, y)| c.rhs * y).sum();
        prop_assert!((s.objective_value - by).abs() <= 1e-6 * scale);
        // primal feasibility
        for c in &lp.constraints {
            let ax: f64 = c.coeffs.iter().zip(&s.primal).map(|(a, x)| a * x).sum();
            let slack = c.rhs - ax;
            match c.relation {
                Relation::Le => prop_assert!(slack >= -1e-7 * (1.0 + c.rhs.abs())),
                Relation::Ge => prop_assert!(slack <= 1e-7 * (1.0 + c.rhs.abs())),
                Relation::Eq => prop_assert!(slack.abs() <= 1e-7 * (1.0 + c.rhs.abs())),
            }
        }
        // complementary slackness on rows and columns
        for (c, y) in lp.constraints.iter().zip(&s.dual) {
            let ax: f64 = c.coeffs.iter().zip(&s.primal).map(|(a, x)| a * x).sum();
            prop_assert!((y * (c.rhs - ax)).abs() <= 1e-6 * scale);
        }
        for j in 0..lp.num_vars() {
            let reduced = lp.objective[j]
                - lp.constraints.iter().zip(&s.dual).map(|(c, y)| c.coeffs[j] * y).sum::<f64>();
            prop_assert!((reduced * s.primal[j]).abs() <= 1e-6 * scale);
            // dual feasibility
            match lp.sense {
                Sense::Maximize => prop_assert!(reduced <= 1e-7 * scale),
                Sense::Minimize => prop_assert!(reduced >= -1e-7 * scale),
            }
        }
    }

    #[test]
    fn row_permutation_keeps_objective(lp in bounded_lp(), rot in 0usize..6) {
        let a = solve_lp(&lp).unwrap();
        let mut permuted = lp.clone();
        let k = rot % permuted.constraints.len();
        permuted.constraints.rotate_left(k);
        permuted.constraints.reverse();
        let b = solve_lp(&permuted).unwrap();
        prop_assert!((a.objective_value - b.objective_value).abs() <= 1e-9 * a.objective_value.abs().max(1.0));
    }

    #[test]
    fn repeated_solves_are_bit_identical(lp in bounded_lp()) {
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        prop_assert_eq!(a, b);
    }
}
