mod common;

use std::sync::Arc;

use common::dot;
use proptest::prelude::*;
use vfidca::{
    penalty_vector, solve_ll, value_function_probe, BilevelSpec, BoxDomain, ConvexPiece, Error, LowerLevelSolver, Matrix, SolveOptions,
};

fn ls(dim: usize, rows: &[Vec<f64>], target: Vec<f64>, block: Vec<usize>, scale: f64) -> ConvexPiece {
    ConvexPiece::least_squares(dim, Arc::new(Matrix::from_rows(rows).unwrap()), target, block, scale)
}

fn scalar() -> BilevelSpec {
    BilevelSpec::new(ConvexPiece::constant(1, 0.0), ls(1, &[vec![1.0]], vec![1.0], vec![0], 0.5), vec![ConvexPiece::l1(1, vec![0])], 1)
        .unwrap()
}

fn elastic_net() -> BilevelSpec {
    let rows = vec![vec![1.0, 0.5, 0.0], vec![0.2, 1.0, -0.4], vec![0.0, 0.3, 1.0], vec![1.0, -1.0, 0.5]];
    BilevelSpec::new(
        ConvexPiece::constant(3, 0.0),
        ls(3, &rows, vec![1.0, 2.0, -1.0, 0.5], vec![0, 1, 2], 0.5),
        vec![ConvexPiece::l1(3, vec![0, 1, 2]), ConvexPiece::squared_l2(3, vec![0, 1, 2], 0.5)],
        3,
    )
    .unwrap()
}

fn tight() -> LowerLevelSolver {
    LowerLevelSolver::new(SolveOptions::default().with_tolerance(1e-10, 1e-10))
}

#[test]
fn singleton_feasible_set() {
    let spec = elastic_net();
    let sol = tight().solve(&spec, &[0.0, 0.0], &[]).unwrap();
    assert!(sol.x_tilde.iter().all(|v| v.abs() < 1e-7));
    assert!((sol.value - spec.ll_value(&[0.0; 3], &[]).unwrap()).abs() < 1e-7);
    assert!(sol.gamma.iter().all(|g| *g >= -1e-9));
}

#[test]
fn scalar_value_slope_and_multiplier() {
    let spec = scalar();
    let sol = tight().solve(&spec, &[0.5], &[]).unwrap();
    assert!((sol.value - 0.125).abs() < 1e-8);
    assert!((sol.gamma[0] - 0.5).abs() < 1e-6);
    // v(r) = ½(1 − r)² near r = 0.5, so the forward quotient is −0.5 + h/2.
    let slope = value_function_probe(&spec, &[0.5], &[], &[vec![1.0]], 1e-4).unwrap()[0];
    assert!((slope + 0.5).abs() < 1e-4, "slope {slope}");
}

#[test]
fn inactive_direction_is_flat() {
    let spec = elastic_net();
    let mut s = tight();
    let free = s.solve(&spec, &[1e3, 1e3], &[]).unwrap();
    let p = penalty_vector(&spec, &free.x_tilde, &[]).unwrap();
    // ℓ₁ level active, quadratic level slack.
    let r = [0.5 * p[0], p[1] + 1.0];
    let slopes = value_function_probe(&spec, &r, &[], &[vec![0.0, 1.0], vec![0.0, -1.0]], 1e-2).unwrap();
    assert!(slopes.iter().all(|s| s.abs() < 1e-4), "{slopes:?}");
}

#[test]
fn probe_rejects_boundary_points() {
    let spec = scalar();
    assert!(matches!(value_function_probe(&spec, &[0.0], &[], &[vec![1.0]], 1e-3), Err(Error::BoundaryProbe { .. })));
    assert!(matches!(value_function_probe(&spec, &[0.1], &[], &[vec![-1.0]], 0.5), Err(Error::BoundaryProbe { .. })));
}

#[test]
fn penalized_and_constrained_solutions_correspond() {
    let spec = elastic_net();
    let mut s = tight();
    for lambda in [[0.1, 0.1], [1.0, 0.0], [0.0, 2.0], [0.5, 3.0]] {
        let (x_star, _) = s.solve_penalized(&spec, &lambda, &[]).unwrap();
        let r = penalty_vector(&spec, &x_star, &[]).unwrap();
        let sol = s.solve(&spec, &r, &[]).unwrap();
        assert!((sol.value - spec.ll_value(&x_star, &[]).unwrap()).abs() < 1e-5);

        let (x_hat, _) = s.solve_penalized(&spec, &sol.gamma, &[]).unwrap();
        let f = |x: &[f64]| spec.ll_value(x, &[]).unwrap() + dot(&sol.gamma, &penalty_vector(&spec, x, &[]).unwrap());
        assert!((f(&sol.x_tilde) - f(&x_hat)).abs() < 1e-5);
    }
}

#[test]
fn general_mode_subgradient_in_u() {
    // x ∈ ℝ, u ∈ ℝ: l = ½(x − 2)², P = |x|, g = x − u ≤ 0. For u < 2 and a
    // slack level, v(u) = ½(u − 2)² so ∂v/∂u = u − 2.
    let spec = BilevelSpec::general(
        ConvexPiece::constant(2, 0.0),
        ls(2, &[vec![1.0]], vec![2.0], vec![0], 0.5),
        vec![ConvexPiece::l1(2, vec![0])],
        vec![ConvexPiece::affine(vec![1.0, -1.0], 0.0)],
        1,
        BoxDomain::uniform(1, 0.0, 5.0),
    )
    .unwrap();
    let sol = solve_ll(&spec, &[10.0], &[1.0], None).unwrap();
    assert!((sol.value - 0.5).abs() < 1e-6);
    assert!((sol.zeta[0] - 1.0).abs() < 1e-5);
    assert!((sol.xi[0] + 1.0).abs() < 1e-5, "{:?}", sol.xi);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn value_function_is_nonincreasing(r in prop::collection::vec(0.05f64..3.0, 2), extra in prop::collection::vec(0.0f64..1.0, 2)) {
        let spec = elastic_net();
        let mut s = tight();
        let bigger: Vec<f64> = r.iter().zip(&extra).map(|(a, b)| a + b).collect();
        let v = s.solve(&spec, &r, &[]).unwrap().value;
        let v2 = s.solve(&spec, &bigger, &[]).unwrap().value;
        prop_assert!(v2 <= v + 1e-7);
    }

    #[test]
    fn value_function_is_convex_on_segments(a in prop::collection::vec(0.05f64..3.0, 2), b in prop::collection::vec(0.05f64..3.0, 2)) {
        let spec = elastic_net();
        let mut s = tight();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let va = s.solve(&spec, &a, &[]).unwrap().value;
        let vb = s.solve(&spec, &b, &[]).unwrap().value;
        let vm = s.solve(&spec, &mid, &[]).unwrap().value;
        prop_assert!(vm <= 0.5 * (va + vb) + 1e-6);
    }

    #[test]
    fn multiplier_gives_a_subgradient(r in prop::collection::vec(0.05f64..3.0, 2), r2 in prop::collection::vec(0.0f64..4.0, 2)) {
        let spec = elastic_net();
        let mut s = tight();
        let base = s.solve(&spec, &r, &[]).unwrap();
        let v2 = s.solve(&spec, &r2, &[]).unwrap().value;
        let shift: Vec<f64> = r2.iter().zip(&r).map(|(a, b)| a - b).collect();
        prop_assert!(v2 >= base.value - dot(&base.gamma, &shift) - 1e-5);
    }
}
