//! The value-function oracle `v(r, u) = min { l(x,u) : P(x,u) ≤ r, g(x,u) ≤ 0 }`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, SolveOptions, SolveResult, Solver, Status};
use crate::lowering::{lower_lower_level, lower_penalized, LoweredProgram};
use crate::problem::BilevelSpec;

/// Summary of one inner cone solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerReport {
    pub status: Status,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl From<&SolveResult> for InnerReport {
    fn from(r: &SolveResult) -> Self {
        Self { status: r.status, iterations: r.iterations, primal_residual: r.primal_residual, dual_residual: r.dual_residual }
    }
}

#[derive(Clone, Debug)]
pub struct LLSolution {
    pub x_tilde: Vec<f64>,
    /// `v(r, u)`, evaluated as `l(x̃, u)`.
    pub value: f64,
    pub gamma: Vec<f64>,
    pub zeta: Vec<f64>,
    /// A subgradient of `v` in `u`; empty when `u_dim = 0`.
    pub xi: Vec<f64>,
    pub report: InnerReport,
}

/// Reusable LL solver. Keeps the cone solver's factorization and the last
/// primal/dual pair as a warm start.
pub struct LowerLevelSolver {
    solver: Solver,
    options: SolveOptions,
    warm: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for LowerLevelSolver {
    fn default() -> Self {
        Self::new(SolveOptions::default())
    }
}

impl LowerLevelSolver {
    pub fn new(options: SolveOptions) -> Self {
        Self { solver: Solver::new(), options, warm: None }
    }

    pub fn options(&self) -> &SolveOptions {
        &self.options
    }

    pub fn clear_warm_start(&mut self) {
        self.warm = None;
    }

    fn run(&mut self, lowered: &LoweredProgram) -> Result<SolveResult> {
        let warm = self.warm.as_ref().filter(|(z, y)| z.len() == lowered.program.num_vars() && y.len() == lowered.program.num_rows());
        let res = self.solver.solve(&lowered.program, &self.options, warm.map(|(z, y)| (z.as_slice(), y.as_slice())))?;
        match res.status {
            Status::Optimal => {}
            Status::MaxIters => {
                // Near-converged iterates are still usable; the residuals are
                // reported so callers can judge.
                log::debug!("inner solve hit max iterations (prim {:.2e}, dual {:.2e})", res.primal_residual, res.dual_residual);
            }
            Status::InfeasibleDetected => {
                self.warm = None;
                return Err(Error::SolverFailure("lower-level program reported infeasible".into()));
            }
        }
        self.warm = Some((res.z.clone(), res.y.clone()));
        Ok(res)
    }

    /// Solves the constrained LL problem at `(r, u)`.
    pub fn solve(&mut self, spec: &BilevelSpec, r: &[f64], u: &[f64]) -> Result<LLSolution> {
        let wrap = |e: Error| Error::LowerLevel { r: r.to_vec(), u: u.to_vec(), source: Box::new(e) };
        let lowered = lower_lower_level(spec, r, u).map_err(wrap)?;
        let res = self.run(&lowered).map_err(wrap)?;
        let duals = kernel::extract_duals_unchecked(&res.y, &lowered.rows);
        let x_tilde = res.z[lowered.layout.x.clone()].to_vec();
        let gamma = duals["gamma"].clone();
        let zeta = duals["zeta"].clone();
        let value = spec.ll_value(&x_tilde, u)?;
        let xi = if spec.u_dim > 0 { u_subgradient(spec, &x_tilde, u, &gamma, &zeta)? } else { Vec::new() };
        Ok(LLSolution { x_tilde, value, gamma, zeta, xi, report: InnerReport::from(&res) })
    }

    /// Solves the penalized LL problem `min l + Σ λ_i P_i s.t. g ≤ 0`.
    /// Returns the minimizer and the report.
    pub fn solve_penalized(&mut self, spec: &BilevelSpec, lambda: &[f64], u: &[f64]) -> Result<(Vec<f64>, InnerReport)> {
        let wrap = |e: Error| Error::LowerLevel { r: lambda.to_vec(), u: u.to_vec(), source: Box::new(e) };
        let lowered = lower_penalized(spec, lambda, u).map_err(wrap)?;
        let res = self.run(&lowered).map_err(wrap)?;
        Ok((res.z[lowered.layout.x.clone()].to_vec(), InnerReport::from(&res)))
    }
}

/// `ξ = ∂_u l + Σ γ_i ∂_u P_i + Σ ζ_j ∂_u g_j` at `(x̃, u)`.
fn u_subgradient(spec: &BilevelSpec, x: &[f64], u: &[f64], gamma: &[f64], zeta: &[f64]) -> Result<Vec<f64>> {
    let point = spec.joint_point(x, u)?;
    let mut xi = spec.ll_loss.subgradient(&point)?[spec.x_dim..].to_vec();
    let weighted = spec.penalties.iter().zip(gamma).chain(spec.ll_constraints.iter().zip(zeta));
    for (piece, &w) in weighted {
        if w != 0.0 {
            let g = piece.subgradient(&point)?;
            for (a, b) in xi.iter_mut().zip(&g[spec.x_dim..]) {
                *a += w * b;
            }
        }
    }
    Ok(xi)
}

/// One-shot LL solve. `warm_start` is a previous primal/dual pair of the
/// same lowered program.
pub fn solve_ll(spec: &BilevelSpec, r: &[f64], u: &[f64], warm_start: Option<(Vec<f64>, Vec<f64>)>) -> Result<LLSolution> {
    let mut solver = LowerLevelSolver::default();
    solver.warm = warm_start;
    solver.solve(spec, r, u)
}

/// One-sided difference quotients `(v(r + h d) − v(r)) / h`.
pub fn value_function_probe(spec: &BilevelSpec, r: &[f64], u: &[f64], directions: &[Vec<f64>], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid("probe step must be positive"));
    }
    if let Some((index, &value)) = r.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::BoundaryProbe { index, value });
    }
    let mut solver = LowerLevelSolver::default();
    let base = solver.solve(spec, r, u)?.value;
    directions
        .iter()
        .map(|d| {
            Error::check_dim("probe direction", r.len(), d.len())?;
            let shifted: Vec<f64> = r.iter().zip(d).map(|(a, b)| a + h * b).collect();
            if let Some((index, &value)) = shifted.iter().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(Error::BoundaryProbe { index, value });
            }
            Ok((solver.solve(spec, &shifted, u)?.value - base) / h)
        })
        .collect()
}
