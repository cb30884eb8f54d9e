//! Operator-splitting solver for convex quadratic programs over products of
//! zero, nonnegative and second-order cones:
//!
//! ```text
//! minimize    ½ zᵀ P z + qᵀ z
//! subject to  b − A z ∈ K
//! ```
//!
//! Every lower-level solve and every outer subproblem of the bilevel method
//! goes through [`Solver::solve`].

mod admm;
mod anderson;
pub mod cones;
pub mod ldl;
pub mod scaling;
pub mod sparse;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use admm::Solver;
pub use cones::{project_cone, Cone};
pub use sparse::CscMatrix;

use crate::error::{Error, Result};

/// A convex quadratic cone program. `p` holds the upper triangle of the
/// symmetric cost matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ConeProgram {
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConeProgram {
    pub fn new(p: CscMatrix, q: Vec<f64>, a: CscMatrix, b: Vec<f64>, cones: Vec<Cone>) -> Result<Self> {
        let program = Self { p, q, a, b, cones };
        program.validate()?;
        Ok(program)
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        let m = self.b.len();
        Error::check_dim("cost matrix rows", n, self.p.nrows)?;
        Error::check_dim("cost matrix columns", n, self.p.ncols)?;
        Error::check_dim("constraint map columns", n, self.a.ncols)?;
        Error::check_dim("constraint map rows", m, self.a.nrows)?;
        let cone_rows: usize = self.cones.iter().map(Cone::dim).sum();
        Error::check_dim("cone block rows", m, cone_rows)?;
        if self.cones.iter().any(|c| matches!(c, Cone::Soc(0))) {
            return Err(Error::invalid("second-order cone block of dimension 0"));
        }
        if !self.p.is_upper_triangular() {
            return Err(Error::invalid("cost matrix must be given by its upper triangle"));
        }
        let finite = self.p.nzval.iter().chain(&self.a.nzval).chain(&self.q).chain(&self.b);
        if finite.clone().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite program data"));
        }
        self.check_psd()
    }

    /// Spot check of positive semidefiniteness on the diagonal and on a few
    /// fixed pseudo-random directions.
    fn check_psd(&self) -> Result<()> {
        let n = self.q.len();
        for j in 0..n {
            if self.p.get(j, j) < -1e-9 {
                return Err(Error::invalid(format!("cost matrix is not PSD: P[{j},{j}] < 0")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut pz = vec![0.0; n];
        for _ in 0..8 {
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            self.p.sym_upper_mul_vec(&z, &mut pz);
            let curv: f64 = z.iter().zip(&pz).map(|(a, b)| a * b).sum();
            let norm2: f64 = z.iter().map(|v| v * v).sum();
            if curv < -1e-9 * norm2 {
                return Err(Error::invalid("cost matrix is not PSD"));
            }
        }
        Ok(())
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let mut pz = vec![0.0; z.len()];
        self.p.sym_upper_mul_vec(z, &mut pz);
        z.iter().zip(&pz).zip(&self.q).map(|((zi, pzi), qi)| 0.5 * zi * pzi + qi * zi).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    pub over_relaxation: f64,
    /// Initial step parameter; adapted during the run when `adaptive_rho`.
    pub rho: f64,
    pub sigma: f64,
    pub adaptive_rho: bool,
    pub scaling_iters: usize,
    /// Residuals are evaluated every this many iterations.
    pub check_every: usize,
    /// Anderson acceleration memory; 0 runs plain ADMM.
    pub anderson_memory: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            eps_abs: 1e-8,
            eps_rel: 1e-6,
            max_iters: 20_000,
            over_relaxation: 1.5,
            rho: 0.1,
            sigma: 1e-6,
            adaptive_rho: true,
            scaling_iters: 15,
            check_every: 5,
            anderson_memory: 20,
        }
    }
}

impl SolveOptions {
    pub fn with_tolerance(mut self, eps_abs: f64, eps_rel: f64) -> Self {
        self.eps_abs = eps_abs;
        self.eps_rel = eps_rel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.over_relaxation > 0.0 && self.over_relaxation < 2.0) {
            return Err(Error::invalid("over-relaxation must lie in (0, 2)"));
        }
        if !(self.rho > 0.0 && self.sigma > 0.0) || self.check_every == 0 {
            return Err(Error::invalid("rho, sigma and check_every must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    MaxIters,
    InfeasibleDetected,
}

/// Output of a solve, in the original (unscaled) coordinates.
///
/// Residuals are infinity norms. The primal residual is `‖A z + slack − b‖∞`
/// and the dual residual is `‖P z + q + Aᵀ y‖∞`; the solve is declared optimal
/// when they fall below `eps_abs + eps_rel · max(‖Az‖∞, ‖b − slack‖∞)` and
/// `eps_abs + eps_rel · max(‖Pz‖∞, ‖Aᵀy‖∞, ‖q‖∞)` respectively.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub slack: Vec<f64>,
    pub status: Status,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    pub iterations: usize,
    pub objective: f64,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

/// One recovered multiplier: `Σ coef · y[row]`, where `coef` is the
/// coefficient of the constraint's right-hand side inside the cone row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DualTag {
    pub rows: Vec<(usize, f64)>,
}

impl DualTag {
    pub fn value(&self, y: &[f64]) -> f64 {
        self.rows.iter().map(|&(r, c)| c * y[r]).sum()
    }
}

/// Named groups of dual tags produced by lowering, e.g. one tag per
/// penalty-level constraint `P_i(x) ≤ r_i` under the name `"gamma"`.
#[derive(Clone, Debug, Default)]
pub struct RowMap {
    groups: BTreeMap<String, Vec<DualTag>>,
}

impl RowMap {
    pub fn push(&mut self, group: &str, tag: DualTag) {
        self.groups.entry(group.to_string()).or_default().push(tag);
    }

    pub fn ensure(&mut self, group: &str) {
        self.groups.entry(group.to_string()).or_default();
    }

    pub fn group(&self, name: &str) -> Option<&[DualTag]> {
        self.groups.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }
}

/// Multipliers read back from cone duals, tolerance for clamping small
/// negative values to zero.
pub const DUAL_CLAMP_TOL: f64 = 1e-6;

/// Recovers the nonnegative multipliers of every tagged constraint group.
pub fn extract_duals(result: &SolveResult, rows: &RowMap) -> Result<BTreeMap<String, Vec<f64>>> {
    if !result.is_optimal() {
        return Err(Error::DualsUnavailable(result.status));
    }
    Ok(extract_duals_unchecked(&result.y, rows))
}

pub(crate) fn extract_duals_unchecked(y: &[f64], rows: &RowMap) -> BTreeMap<String, Vec<f64>> {
    rows.groups
        .iter()
        .map(|(name, tags)| {
            let values = tags
                .iter()
                .map(|tag| {
                    let v = tag.value(y);
                    if v < -DUAL_CLAMP_TOL * (1.0 + y.iter().fold(0.0f64, |m, x| m.max(x.abs()))) {
                        log::warn!("multiplier in group {name} is negative beyond tolerance: {v:e}");
                    }
                    v.max(0.0)
                })
                .collect();
            (name.clone(), values)
        })
        .collect()
}

/// Convenience wrapper around a fresh [`Solver`].
pub fn solve(program: &ConeProgram, options: &SolveOptions, warm_start: Option<(&[f64], &[f64])>) -> Result<SolveResult> {
    Solver::new().solve(program, options, warm_start)
}
