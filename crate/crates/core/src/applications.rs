//! Bilevel instances for elastic net, sparse group lasso and cross-validated
//! SVM, plus the error metrics the harness reports for them.

use std::sync::Arc;

use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::matrix::dot;
use crate::problem::{BilevelSpec, BoxDomain, ConvexPiece, Iterate};

fn check_regression(name: &str, d: &Dataset) -> Result<()> {
    if d.sample_count() == 0 {
        return Err(Error::invalid(format!("{name} split is empty")));
    }
    if d.task != Task::Regression {
        return Err(Error::invalid(format!("{name} split is not a regression set")));
    }
    Ok(())
}

fn least_squares(dim: usize, d: &Dataset) -> ConvexPiece {
    ConvexPiece::least_squares(dim, Arc::new(d.features.clone()), d.targets.clone(), (0..d.feature_dim()).collect(), 0.5)
}

/// `L = ½‖A_val β − b_val‖²`, `l = ½‖A_tr β − b_tr‖²`, `P = (‖β‖₁, ½‖β‖²)`.
pub fn elastic_net_spec(train: &Dataset, val: &Dataset) -> Result<BilevelSpec> {
    check_regression("train", train)?;
    check_regression("validation", val)?;
    Error::check_dim("validation features", train.feature_dim(), val.feature_dim())?;
    let p = train.feature_dim();
    let all: Vec<usize> = (0..p).collect();
    BilevelSpec::new(
        least_squares(p, val),
        least_squares(p, train),
        vec![ConvexPiece::l1(p, all.clone()), ConvexPiece::squared_l2(p, all, 0.5)],
        p,
    )
}

/// Penalties `‖β^{(1)}‖₂, …, ‖β^{(M)}‖₂, ‖β‖₁` for a partition into groups.
pub fn sparse_group_lasso_spec(train: &Dataset, val: &Dataset, groups: &[Vec<usize>]) -> Result<BilevelSpec> {
    check_regression("train", train)?;
    check_regression("validation", val)?;
    Error::check_dim("validation features", train.feature_dim(), val.feature_dim())?;
    let p = train.feature_dim();
    let mut seen = vec![false; p];
    for g in groups {
        if g.is_empty() {
            return Err(Error::invalid("empty group"));
        }
        for &j in g {
            if j >= p {
                return Err(Error::invalid(format!("group index {j} out of range {p}")));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::invalid(format!("feature {j} appears in more than one group")));
            }
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!("feature {j} is in no group")));
    }
    let mut penalties: Vec<ConvexPiece> = groups.iter().map(|g| ConvexPiece::l2(p, g.clone())).collect();
    penalties.push(ConvexPiece::l1(p, (0..p).collect()));
    BilevelSpec::new(least_squares(p, val), least_squares(p, train), penalties, p)
}

/// Fold structure of a cross-validated SVM instance.
#[derive(Clone, Debug)]
pub struct SvmLayout {
    pub folds: usize,
    pub features: usize,
    /// Validation rows of each fold (indices into the full data).
    pub val_rows: Vec<Vec<usize>>,
}

impl SvmLayout {
    /// Columns of `w^t` inside `x`.
    pub fn weights(&self, t: usize) -> std::ops::Range<usize> {
        let start = t * (self.features + 1);
        start..start + self.features
    }

    pub fn offset(&self, t: usize) -> usize {
        t * (self.features + 1) + self.features
    }

    /// Fold-averaged classifier `(w̄, c̄)`.
    pub fn averaged(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut w = vec![0.0; self.features];
        let mut c = 0.0;
        for t in 0..self.folds {
            for (a, b) in w.iter_mut().zip(&x[self.weights(t)]) {
                *a += b / self.folds as f64;
            }
            c += x[self.offset(t)] / self.folds as f64;
        }
        (w, c)
    }
}

/// T-fold cross-validated SVM with feature box `−w̄ ≤ w^t ≤ w̄`.
///
/// `x = (w^1, c^1, …, w^T, c^T)`, `u = w̄ ∈ [lb, ub]^p`. The LL loss is the
/// sum of the folds' training hinge losses, the single penalty is
/// `max_t ½‖w^t‖²` (one level shared by all folds), and the box rows are
/// LL constraints `|w^t_j| − w̄_j ≤ 0`. Folds are consecutive blocks.
pub fn svm_crossval_spec(data: &Dataset, folds: usize, lb: f64, ub: f64) -> Result<(BilevelSpec, SvmLayout)> {
    if folds < 2 {
        return Err(Error::invalid("need at least two folds"));
    }
    if !(lb > 0.0 && lb <= ub) {
        return Err(Error::invalid(format!("bounds must satisfy 0 < lb ≤ ub, got [{lb}, {ub}]")));
    }
    if data.task != Task::Classification {
        return Err(Error::invalid("cross-validated SVM needs ±1 labels"));
    }
    let n = data.sample_count();
    if n < folds {
        return Err(Error::invalid(format!("{n} samples cannot form {folds} folds")));
    }
    let p = data.feature_dim();
    let x_dim = folds * (p + 1);
    let dim = x_dim + p;
    let mut val_rows = Vec::with_capacity(folds);
    for t in 0..folds {
        val_rows.push((t * n / folds..(t + 1) * n / folds).collect::<Vec<_>>());
    }
    let layout = SvmLayout { folds, features: p, val_rows };

    let mut ll_terms = Vec::new();
    let mut ul_terms = Vec::new();
    let mut sq_terms = Vec::new();
    let mut constraints = Vec::new();
    for t in 0..folds {
        let val = &layout.val_rows[t];
        let train: Vec<usize> = (0..n).filter(|i| !val.contains(i)).collect();
        for (name, rows) in [("training", &train), ("validation", val)] {
            let labels: Vec<f64> = rows.iter().map(|&i| data.targets[i]).collect();
            if labels.iter().all(|&y| y == labels[0]) {
                log::warn!("fold {t}: {name} rows contain a single class");
            }
        }
        let weights: Vec<usize> = layout.weights(t).collect();
        let tr = data.subset(&train);
        ll_terms.push(ConvexPiece::hinge(dim, Arc::new(tr.features), tr.targets, weights.clone(), layout.offset(t), 1.0));
        let va = data.subset(val);
        let scale = 1.0 / (folds as f64 * val.len() as f64);
        ul_terms.push(ConvexPiece::hinge(dim, Arc::new(va.features), va.targets, weights.clone(), layout.offset(t), scale));
        sq_terms.push(ConvexPiece::squared_l2(dim, weights.clone(), 0.5));
        for (j, &col) in weights.iter().enumerate() {
            constraints.push(ConvexPiece::box_gap(dim, col, x_dim + j));
        }
    }
    let spec = BilevelSpec::general(
        ConvexPiece::sum(dim, ul_terms),
        ConvexPiece::sum(dim, ll_terms),
        vec![ConvexPiece::max(dim, sq_terms)],
        constraints,
        x_dim,
        BoxDomain::uniform(p, lb, ub),
    )?;
    Ok((spec, layout))
}

/// How errors are measured for an instance.
#[derive(Clone, Debug)]
pub enum Metric {
    /// Mean squared error of `x` as regression coefficients.
    MeanSquared,
    /// Validation: the UL hinge objective; test: 0/1 error of the
    /// fold-averaged classifier.
    CrossValidatedHinge(SvmLayout),
}

/// A bilevel instance with its data splits and defaults.
#[derive(Clone, Debug)]
pub struct Instance {
    pub name: String,
    pub spec: BilevelSpec,
    pub metric: Metric,
    pub val: Dataset,
    pub test: Dataset,
    /// Starting levels `r⁰`.
    pub r0: Vec<f64>,
    /// Starting `u⁰` (empty outside general mode).
    pub u0: Vec<f64>,
}

pub fn mean_squared_error(d: &Dataset, coef: &[f64]) -> f64 {
    let n = d.sample_count().max(1) as f64;
    (0..d.sample_count()).map(|i| (dot(d.features.row(i), coef) - d.targets[i]).powi(2)).sum::<f64>() / n
}

pub fn misclassification_rate(d: &Dataset, w: &[f64], c: f64) -> f64 {
    let n = d.sample_count().max(1) as f64;
    let wrong = (0..d.sample_count())
        .filter(|&i| {
            let score = dot(d.features.row(i), w) - c;
            let pred = if score >= 0.0 { 1.0 } else { -1.0 };
            pred != d.targets[i]
        })
        .count();
    wrong as f64 / n
}

impl Instance {
    pub fn elastic_net(train: &Dataset, val: &Dataset, test: &Dataset) -> Result<Self> {
        Ok(Self {
            name: "elastic-net".into(),
            spec: elastic_net_spec(train, val)?,
            metric: Metric::MeanSquared,
            val: val.clone(),
            test: test.clone(),
            r0: vec![10.0, 5.0],
            u0: Vec::new(),
        })
    }

    pub fn sparse_group_lasso(train: &Dataset, val: &Dataset, test: &Dataset, groups: &[Vec<usize>]) -> Result<Self> {
        let spec = sparse_group_lasso_spec(train, val, groups)?;
        let j = spec.num_penalties();
        Ok(Self {
            name: "sparse-group-lasso".into(),
            spec,
            metric: Metric::MeanSquared,
            val: val.clone(),
            test: test.clone(),
            r0: vec![10.0; j],
            u0: Vec::new(),
        })
    }

    pub fn svm_crossval(cv: &Dataset, test: &Dataset, folds: usize, lb: f64, ub: f64) -> Result<Self> {
        let (spec, layout) = svm_crossval_spec(cv, folds, lb, ub)?;
        let p = layout.features;
        Ok(Self {
            name: "svm-cv".into(),
            spec,
            metric: Metric::CrossValidatedHinge(layout),
            val: cv.clone(),
            test: test.clone(),
            r0: vec![10.0],
            u0: vec![lb; p],
        })
    }

    /// Initial iterate `(0, u⁰, r⁰)`.
    pub fn initial_iterate(&self, alpha0: f64) -> Result<Iterate> {
        Iterate::new(vec![0.0; self.spec.x_dim], self.u0.clone(), self.r0.clone(), alpha0)
    }

    pub fn val_error(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        match &self.metric {
            Metric::MeanSquared => Ok(mean_squared_error(&self.val, x)),
            Metric::CrossValidatedHinge(_) => self.spec.ul_value(x, u),
        }
    }

    pub fn test_error(&self, x: &[f64]) -> f64 {
        match &self.metric {
            Metric::MeanSquared => mean_squared_error(&self.test, x),
            Metric::CrossValidatedHinge(layout) => {
                let (w, c) = layout.averaged(x);
                misclassification_rate(&self.test, &w, c)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::problem::penalty_vector;

    fn reg(rows: &[Vec<f64>], b: &[f64]) -> Dataset {
        Dataset::new(Matrix::from_rows(rows).unwrap(), b.to_vec(), Task::Regression).unwrap()
    }

    #[test]
    fn single_group_penalties() {
        let d = reg(&[vec![1.0, 0.0]], &[1.0]);
        let spec = sparse_group_lasso_spec(&d, &d, &[vec![0, 1]]).unwrap();
        assert_eq!(penalty_vector(&spec, &[3.0, -4.0], &[]).unwrap(), vec![5.0, 7.0]);
    }

    #[test]
    fn overlapping_groups_rejected() {
        let d = reg(&[vec![1.0, 0.0]], &[1.0]);
        assert!(sparse_group_lasso_spec(&d, &d, &[vec![0, 1], vec![1]]).is_err());
    }

    #[test]
    fn empty_split_rejected() {
        let d = reg(&[vec![1.0]], &[1.0]);
        let empty = Dataset::new(Matrix::zeros(0, 1), vec![], Task::Regression).unwrap();
        assert!(elastic_net_spec(&d, &empty).is_err());
    }
}
