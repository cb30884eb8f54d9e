use std::io::Cursor;

use proptest::prelude::*;
use vfidca::data::{gen_elastic_net, gen_sparse_group_lasso, gen_svm, parse_libsvm, split_shuffle, to_libsvm, Dataset, Task};
use vfidca::Matrix;

fn snr(d: &[&Dataset], beta: &[f64]) -> f64 {
    let (mut signal, mut noise) = (0.0, 0.0);
    for s in d {
        for i in 0..s.sample_count() {
            let fit: f64 = s.features.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
            signal += fit * fit;
            noise += (s.targets[i] - fit).powi(2);
        }
    }
    (signal / noise).sqrt()
}

#[test]
fn elastic_net_draw() {
    let d = gen_elastic_net(100, 20, 250, 250, 7).unwrap();
    assert_eq!(d.beta.iter().sum::<f64>(), 15.0);
    assert_eq!(d.beta.iter().filter(|&&b| b != 0.0).count(), 15);
    assert!((snr(&[&d.train, &d.val, &d.test], &d.beta) - 2.0).abs() < 1e-9);
    assert_eq!((d.train.sample_count(), d.val.sample_count(), d.test.sample_count()), (100, 20, 250));
}

#[test]
fn elastic_net_lag_one_correlation() {
    let d = gen_elastic_net(2000, 0, 0, 20, 1).unwrap();
    let a = &d.train.features;
    let n = a.rows() as f64;
    let mut total = 0.0;
    for j in 0..19 {
        let col = |k: usize| (0..a.rows()).map(|i| a.get(i, k)).collect::<Vec<_>>();
        let (x, y) = (col(j), col(j + 1));
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum();
        let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
        total += cov / (vx * vy).sqrt();
    }
    let mean = total / 19.0;
    assert!((mean - 0.5).abs() < 0.05, "lag-1 correlation {mean}");
}

#[test]
fn group_lasso_draw() {
    let d = gen_sparse_group_lasso(600, 30, 3).unwrap();
    assert_eq!(d.beta.iter().filter(|&&b| b != 0.0).count(), 15);
    assert!(d.beta[60..80].iter().all(|&b| b == 0.0));
    assert_eq!(&d.beta[0..6], &[1.0, 2.0, 3.0, 4.0, 5.0, 0.0]);
    assert!((snr(&[&d.train, &d.val, &d.test], &d.beta) - 2.0).abs() < 1e-9);
}

#[test]
fn generators_are_seeded() {
    let a = gen_elastic_net(10, 5, 5, 20, 1).unwrap();
    let b = gen_elastic_net(10, 5, 5, 20, 1).unwrap();
    let c = gen_elastic_net(10, 5, 5, 20, 2).unwrap();
    assert_eq!(a.train, b.train);
    assert_ne!(a.train, c.train);
    let (s1, w1) = gen_svm(50, 10, 5, 0.1, 4).unwrap();
    let (s2, w2) = gen_svm(50, 10, 5, 0.1, 4).unwrap();
    assert_eq!((s1.clone(), w1), (s2, w2));
    assert_eq!(s1.task, Task::Classification);
    assert!(s1.targets.iter().all(|&y| y == 1.0 || y == -1.0));
}

#[test]
fn libsvm_examples() {
    let d = parse_libsvm(Cursor::new("+1 1:0.5 3:-1\n"), None).unwrap();
    assert_eq!(d.targets, vec![1.0]);
    assert_eq!(d.features.row(0), &[0.5, 0.0, -1.0]);

    let d = parse_libsvm(Cursor::new("+1 2:1\n-1\n"), None).unwrap();
    assert_eq!(d.targets, vec![1.0, -1.0]);
    assert_eq!(d.features.row(1), &[0.0, 0.0]);
    assert_eq!(d.task, Task::Classification);

    // Trailing newline optional, tabs and repeated spaces accepted.
    let d = parse_libsvm(Cursor::new("2.5\t1:1  2:2"), Some(4)).unwrap();
    assert_eq!(d.task, Task::Regression);
    assert_eq!(d.features.row(0), &[1.0, 2.0, 0.0, 0.0]);
}

#[test]
fn libsvm_errors_carry_the_line() {
    let err = parse_libsvm(Cursor::new("+1 1:0.5\n+1 x:1\n"), None).unwrap_err();
    assert!(matches!(err, vfidca::Error::Parse { line: 2, .. }), "{err}");
    assert!(parse_libsvm(Cursor::new("+1 3:1\n"), Some(2)).is_err());
}

#[test]
fn split_examples() {
    let (d, _) = gen_svm(30, 3, 2, 0.0, 1).unwrap();
    let parts = split_shuffle(&d, &[30, 0, 0], 9).unwrap();
    assert_eq!(parts[0].sample_count(), 30);
    assert_eq!(parts[1].sample_count(), 0);
    let mut rows: Vec<Vec<u64>> = (0..30).map(|i| parts[0].features.row(i).iter().map(|v| v.to_bits()).collect()).collect();
    let mut orig: Vec<Vec<u64>> = (0..30).map(|i| d.features.row(i).iter().map(|v| v.to_bits()).collect()).collect();
    rows.sort();
    orig.sort();
    assert_eq!(rows, orig);
    assert_eq!(split_shuffle(&d, &[10, 20], 9).unwrap(), split_shuffle(&d, &[10, 20], 9).unwrap());
}

proptest! {
    #[test]
    fn libsvm_round_trip(rows in prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), -100.0f64..100.0], 6), 1..8), labels in prop::collection::vec(any::<bool>(), 8)) {
        let n = rows.len();
        let y: Vec<f64> = labels[..n].iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        let d = Dataset::new(Matrix::from_rows(&rows).unwrap(), y, Task::Classification).unwrap();
        let back = parse_libsvm(Cursor::new(to_libsvm(&d)), Some(6)).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn splits_are_disjoint(a in 0usize..10, b in 0usize..10, seed in any::<u64>()) {
        // Row i carries the feature value i, so overlaps are visible.
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let d = Dataset::new(Matrix::from_rows(&rows).unwrap(), vec![0.0; 20], Task::Regression).unwrap();
        let parts = split_shuffle(&d, &[a, b], seed).unwrap();
        let mut seen: Vec<f64> = parts.iter().flat_map(|p| (0..p.sample_count()).map(|i| p.features.get(i, 0))).collect();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        prop_assert_eq!(seen.len(), a + b);
    }
}
