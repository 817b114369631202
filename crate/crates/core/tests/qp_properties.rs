mod common;

use common::{active_set_oracle, random_qp};
use flexmarket::qp::{solve, QpStatus, QuadraticProgram, SolverSettings};
use nalgebra::{dmatrix, dvector, DVector};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matches_active_set_enumeration(case in random_qp()) {
        let qp = case.program();
        let oracle = active_set_oracle(&qp).expect("random instances are feasible");
        let sol = solve(&qp, &SolverSettings::default());
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!((&sol.x - &oracle.x).amax() <= 1e-6, "x {} vs {}", sol.x, oracle.x);
        prop_assert!(sol.residuals.max() <= 1e-8, "{:?}", sol.residuals);
        // multipliers are unique only where the binding set is nondegenerate
        let binding = oracle.z.iter().filter(|z| **z > 1e-6).count();
        if binding == oracle.active.len() {
            for &i in &oracle.active {
                prop_assert!((sol.z[i] - oracle.z[i]).abs() <= 1e-6, "z[{}] {} vs {}", i, sol.z[i], oracle.z[i]);
            }
            if qp.num_eq() > 0 {
                prop_assert!((&sol.y - &oracle.y).amax() <= 1e-6, "y {} vs {}", sol.y, oracle.y);
            }
        }
    }

    #[test]
    fn duality_gap_closes(case in random_qp()) {
        let qp = case.program();
        let settings = SolverSettings::default();
        let sol = solve(&qp, &settings);
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        let primal = qp.objective(&sol.x);
        let dual = qp.dual_objective(&sol.x, &sol.y, &sol.z);
        prop_assert!((primal - dual).abs() <= 10.0 * settings.tol * (1.0 + primal.abs()), "{} vs {}", primal, dual);
    }
}

#[test]
fn solution_moves_lipschitz_in_the_linear_term() {
    // min 1/2 x'Qx + c'x  s.t. x1 + x2 + x3 = 1, x1 >= 0.3, x2 <= 0.5;
    // the lower bound on x1 binds with a strictly positive multiplier
    let qp = |c: DVector<f64>| {
        QuadraticProgram::new(
            dmatrix![2.0, 0.5, 0.0; 0.5, 1.0, 0.0; 0.0, 0.0, 1.5],
            c,
            dmatrix![1.0, 1.0, 1.0],
            dvector![1.0],
            dmatrix![-1.0, 0.0, 0.0; 0.0, 1.0, 0.0],
            dvector![-0.3, 0.5],
        )
        .unwrap()
    };
    let c0 = dvector![2.0, -1.0, 0.0];
    let dir = dvector![1.0, -0.5, 0.25].normalize();
    let base = solve(&qp(c0.clone()), &SolverSettings::default());
    assert_eq!(base.status, QpStatus::Optimal);
    assert!(base.z[0] > 0.1, "{}", base.z);
    let mut ratios = Vec::new();
    for eps in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
        let s = solve(&qp(&c0 + eps * &dir), &SolverSettings::default());
        let change = (&s.x - &base.x).amax().max((&s.y - &base.y).amax()).max((&s.z - &base.z).amax());
        ratios.push(change / eps);
    }
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(worst < 10.0, "{ratios:?}");
    // the ratio settles instead of growing as the perturbation shrinks
    assert!(ratios[4] <= 1.5 * ratios[0] + 1e-2, "{ratios:?}");
}
