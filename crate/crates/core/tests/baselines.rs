use std::sync::Arc;

use vfidca::baselines::{evaluate_points, grid_nodes, grid_search, random_search, Axis, SearchSpace};
use vfidca::{BilevelSpec, ConvexPiece, LowerLevelSolver, Matrix, SolveOptions};

fn ls(rows: &[Vec<f64>], target: Vec<f64>) -> ConvexPiece {
    ConvexPiece::least_squares(2, Arc::new(Matrix::from_rows(rows).unwrap()), target, vec![0, 1], 0.5)
}

/// 2-feature elastic net: 4 train / 2 validation samples.
fn small_elastic_net() -> BilevelSpec {
    BilevelSpec::new(
        ls(&[vec![1.0, 0.3], vec![-0.4, 1.2]], vec![0.8, -0.9]),
        ls(&[vec![1.0, 0.2], vec![0.3, 1.0], vec![-0.5, 0.7], vec![0.9, -0.6]], vec![1.2, -0.3, -0.9, 1.4]),
        vec![ConvexPiece::l1(2, vec![0, 1]), ConvexPiece::squared_l2(2, vec![0, 1], 0.5)],
        2,
    )
    .unwrap()
}

fn opts() -> SolveOptions {
    SolveOptions::default()
}

#[test]
fn best_is_the_minimum_of_the_evaluations() {
    let spec = small_elastic_net();
    let space = SearchSpace::per_penalty(&spec, -5.0, 2.0);
    let res = grid_search(&spec, &space, 6, &opts()).unwrap();
    assert_eq!(res.evaluations.len(), 36);
    let min = res.evaluations.iter().filter_map(|e| e.ul_value).fold(f64::INFINITY, f64::min);
    assert_eq!(res.best().unwrap().ul_value, Some(min));
    assert_eq!(res.failures(), 0);
}

#[test]
fn unique_minimizer_node_is_returned() {
    // A zero validation target rewards shrinkage: both penalties at 10^1 win.
    let spec = BilevelSpec::new(
        ls(&[vec![1.0, 1.0]], vec![0.0]),
        ls(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 1.0]),
        vec![ConvexPiece::l1(2, vec![0, 1]), ConvexPiece::squared_l2(2, vec![0, 1], 0.5)],
        2,
    )
    .unwrap();
    let space = SearchSpace::per_penalty(&spec, -3.0, 1.0);
    let res = grid_search(&spec, &space, 2, &opts()).unwrap();
    assert_eq!(res.best().unwrap().point, vec![1.0, 1.0]);
}

#[test]
fn axis_order_only_permutes_the_grid() {
    let spec = small_elastic_net();
    let ab = SearchSpace::new(vec![Axis::penalties(-3.0, 1.0, vec![0]), Axis::penalties(-2.0, 2.0, vec![1])]);
    let ba = SearchSpace::new(vec![Axis::penalties(-2.0, 2.0, vec![1]), Axis::penalties(-3.0, 1.0, vec![0])]);
    let r1 = grid_search(&spec, &ab, 5, &opts()).unwrap();
    let r2 = grid_search(&spec, &ba, 5, &opts()).unwrap();
    let b1 = r1.best().unwrap();
    let b2 = r2.best().unwrap();
    assert!((b1.ul_value.unwrap() - b2.ul_value.unwrap()).abs() < 1e-7);
    assert_eq!(b1.lambda, b2.lambda);
}

#[test]
fn random_search_is_seeded() {
    let spec = small_elastic_net();
    let space = SearchSpace::per_penalty(&spec, -5.0, 2.0);
    let a = random_search(&spec, &space, 10, 42, &opts()).unwrap();
    let b = random_search(&spec, &space, 10, 42, &opts()).unwrap();
    let c = random_search(&spec, &space, 10, 43, &opts()).unwrap();
    let points = |r: &vfidca::SearchResult| r.evaluations.iter().map(|e| e.point.clone()).collect::<Vec<_>>();
    assert_eq!(points(&a), points(&b));
    assert_eq!(a.best, b.best);
    assert_ne!(points(&a), points(&c));
    assert!(points(&a).iter().flatten().all(|&m| (-5.0..=2.0).contains(&m)));

    let one = random_search(&spec, &space, 1, 5, &opts()).unwrap();
    assert_eq!(one.best, Some(0));
}

#[test]
fn random_search_comes_close_to_a_dense_scan() {
    let spec = small_elastic_net();
    let space = SearchSpace::per_penalty(&spec, -5.0, 2.0);
    let rs = random_search(&spec, &space, 200, 7, &opts()).unwrap();

    // Dense reference: 60 × 60 log grid, evaluated independently of the search module.
    let mut solver = LowerLevelSolver::new(opts());
    let (mut best, mut worst) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..60 {
        for j in 0..60 {
            let lam = [10f64.powf(-5.0 + 7.0 * i as f64 / 59.0), 10f64.powf(-5.0 + 7.0 * j as f64 / 59.0)];
            let (x, _) = solver.solve_penalized(&spec, &lam, &[]).unwrap();
            let v = spec.ul_value(&x, &[]).unwrap();
            best = best.min(v);
            worst = worst.max(v);
        }
    }
    let got = rs.best().unwrap().ul_value.unwrap();
    assert!(got - best <= 0.01 * (worst - best), "random {got} dense {best}..{worst}");
}

#[test]
fn bad_spaces_are_rejected() {
    let spec = small_elastic_net();
    let reversed = SearchSpace::new(vec![Axis::penalties(1.0, -1.0, vec![0]), Axis::penalties(0.0, 1.0, vec![1])]);
    assert!(grid_search(&spec, &reversed, 3, &opts()).is_err());
    let space = SearchSpace::per_penalty(&spec, -1.0, 1.0);
    assert!(grid_nodes(&space, 1).is_err());
    assert!(random_search(&spec, &space, 0, 1, &opts()).is_err());
    assert!(evaluate_points(&spec, &space, vec![vec![0.0]], &opts()).is_err());
}
