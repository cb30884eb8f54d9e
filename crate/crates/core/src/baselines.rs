//! Grid and random search over log10-scaled hyperparameters. Each candidate
//! is scored by solving the penalized LL problem and evaluating the UL loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{SolveOptions, Status};
use crate::lower_level::LowerLevelSolver;
use crate::problem::BilevelSpec;

/// What a search coordinate sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AxisTarget {
    /// Penalty weights `λ_i = 10^μ` for the listed penalty indices.
    Penalties(Vec<usize>),
    /// Upper-level variables `u_k = 10^μ` (general mode).
    Upper(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub target: AxisTarget,
}

impl Axis {
    pub fn penalties(lo: f64, hi: f64, indices: Vec<usize>) -> Self {
        Self { lo, hi, target: AxisTarget::Penalties(indices) }
    }

    pub fn upper(lo: f64, hi: f64, indices: Vec<usize>) -> Self {
        Self { lo, hi, target: AxisTarget::Upper(indices) }
    }
}

/// Log-scaled search space. Every penalty and every `u` coordinate must be
/// set by exactly one axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub axes: Vec<Axis>,
}

impl SearchSpace {
    pub fn new(axes: Vec<Axis>) -> Self {
        Self { axes }
    }

    /// One axis per penalty, all on `[lo, hi]`.
    pub fn per_penalty(spec: &BilevelSpec, lo: f64, hi: f64) -> Self {
        Self::new((0..spec.num_penalties()).map(|i| Axis::penalties(lo, hi, vec![i])).collect())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn validate(&self, spec: &BilevelSpec) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::invalid("search space has no axes"));
        }
        let mut pen = vec![0usize; spec.num_penalties()];
        let mut upper = vec![0usize; spec.u_dim];
        for (k, axis) in self.axes.iter().enumerate() {
            if !(axis.lo.is_finite() && axis.hi.is_finite() && axis.lo <= axis.hi) {
                return Err(Error::invalid(format!("axis {k}: bad range [{}, {}]", axis.lo, axis.hi)));
            }
            let (counts, indices, what) = match &axis.target {
                AxisTarget::Penalties(ix) => (&mut pen, ix, "penalty"),
                AxisTarget::Upper(ix) => (&mut upper, ix, "upper-level"),
            };
            if indices.is_empty() {
                return Err(Error::invalid(format!("axis {k} sets nothing")));
            }
            for &i in indices {
                let slot = counts.get_mut(i).ok_or_else(|| Error::invalid(format!("axis {k}: {what} index {i} out of range")))?;
                *slot += 1;
            }
        }
        if let Some(i) = pen.iter().position(|&c| c != 1) {
            return Err(Error::invalid(format!("penalty {i} is set by {} axes, expected 1", pen[i])));
        }
        if let Some(i) = upper.iter().position(|&c| c != 1) {
            return Err(Error::invalid(format!("upper-level coordinate {i} is set by {} axes, expected 1", upper[i])));
        }
        Ok(())
    }

    /// Maps log coordinates to `(λ, u)`.
    pub fn decode(&self, spec: &BilevelSpec, point: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Error::check_dim("search point", self.dim(), point.len())?;
        let mut lambda = vec![0.0; spec.num_penalties()];
        let mut u = vec![0.0; spec.u_dim];
        for (axis, &mu) in self.axes.iter().zip(point) {
            let value = 10f64.powf(mu);
            match &axis.target {
                AxisTarget::Penalties(ix) => ix.iter().for_each(|&i| lambda[i] = value),
                AxisTarget::Upper(ix) => ix.iter().for_each(|&i| u[i] = value),
            }
        }
        if let Some(dom) = &spec.u_domain {
            dom.clamp(&mut u);
        }
        Ok((lambda, u))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    /// Log10 coordinates of the candidate.
    pub point: Vec<f64>,
    pub lambda: Vec<f64>,
    pub u: Vec<f64>,
    pub x: Option<Vec<f64>>,
    pub ul_value: Option<f64>,
    /// Set when the node failed; the search continues.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchResult {
    pub evaluations: Vec<Evaluation>,
    /// Index of the first evaluation with the smallest UL value.
    pub best: Option<usize>,
}

impl SearchResult {
    pub fn best(&self) -> Option<&Evaluation> {
        self.best.map(|i| &self.evaluations[i])
    }

    pub fn failures(&self) -> usize {
        self.evaluations.iter().filter(|e| e.failure.is_some()).count()
    }
}

/// Index of the first minimum over successful evaluations.
fn first_minimum(evals: &[Evaluation]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in evals.iter().enumerate() {
        if let Some(v) = e.ul_value {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Evaluates `points` in order with one warm-started LL solver.
pub fn evaluate_points(spec: &BilevelSpec, space: &SearchSpace, points: Vec<Vec<f64>>, options: &SolveOptions) -> Result<SearchResult> {
    spec.validate()?;
    space.validate(spec)?;
    let mut solver = LowerLevelSolver::new(options.clone());
    let mut evaluations = Vec::with_capacity(points.len());
    for point in points {
        let (lambda, u) = space.decode(spec, &point)?;
        let outcome = solver.solve_penalized(spec, &lambda, &u).and_then(|(x, report)| {
            if report.status != Status::Optimal {
                log::debug!("search node {point:?}: inner status {:?}", report.status);
            }
            let v = spec.ul_value(&x, &u)?;
            if v.is_finite() {
                Ok((x, v))
            } else {
                Err(Error::SolverFailure("non-finite UL value".into()))
            }
        });
        let eval = match outcome {
            Ok((x, v)) => Evaluation { point, lambda, u, x: Some(x), ul_value: Some(v), failure: None },
            Err(e) => {
                log::warn!("search node {point:?} failed: {e}");
                solver.clear_warm_start();
                Evaluation { point, lambda, u, x: None, ul_value: None, failure: Some(e.to_string()) }
            }
        };
        evaluations.push(eval);
    }
    let best = first_minimum(&evaluations);
    Ok(SearchResult { evaluations, best })
}

/// Nodes of a `points`-per-axis uniform grid, first axis outermost.
pub fn grid_nodes(space: &SearchSpace, points: usize) -> Result<Vec<Vec<f64>>> {
    if points < 2 {
        return Err(Error::invalid(format!("grid needs at least 2 points per axis, got {points}")));
    }
    let d = space.dim();
    let total = points
        .checked_pow(d as u32)
        .filter(|t| *t <= 10_000_000)
        .ok_or_else(|| Error::invalid(format!("{points}^{d} grid nodes is too many")))?;
    let coords: Vec<Vec<f64>> =
        space.axes.iter().map(|a| (0..points).map(|i| a.lo + (a.hi - a.lo) * i as f64 / (points - 1) as f64).collect()).collect();
    let mut nodes = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        nodes.push(idx.iter().zip(&coords).map(|(&i, c)| c[i]).collect());
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < points {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(nodes)
}

pub fn grid_search(spec: &BilevelSpec, space: &SearchSpace, points: usize, options: &SolveOptions) -> Result<SearchResult> {
    space.validate(spec)?;
    evaluate_points(spec, space, grid_nodes(space, points)?, options)
}

pub fn random_search(spec: &BilevelSpec, space: &SearchSpace, samples: usize, seed: u64, options: &SolveOptions) -> Result<SearchResult> {
    if samples == 0 {
        return Err(Error::invalid("random search needs at least one sample"));
    }
    space.validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points =
        (0..samples).map(|_| space.axes.iter().map(|a| if a.hi > a.lo { rng.random_range(a.lo..=a.hi) } else { a.lo }).collect()).collect();
    evaluate_points(spec, space, points, options)
}
