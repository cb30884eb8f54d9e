//! ADMM iteration on the equilibrated program.
//!
//! With `C = b − K`, the iteration alternates a linear solve with the
//! quasi-definite matrix
//!
//! ```text
//! [ P + σI      Aᵀ    ]
//! [   A      −diag(ρ)⁻¹ ]
//! ```
//!
//! and a projection onto `C`. The dual iterate stays in the normal cone of
//! `C` at the projected point, so complementary slackness holds exactly at
//! every iterate and only the residuals need to converge.

use std::time::Instant;

use super::anderson::Anderson;
use super::cones::Cone;
use super::ldl::{LdlError, LdlFactorization};
use super::scaling::{equilibrate, Scaling};
use super::sparse::CscMatrix;
use super::{ConeProgram, SolveOptions, SolveResult, Status};
use crate::error::{Error, Result};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_ADAPT_INTERVAL: usize = 25;
const RHO_ADAPT_RATIO: f64 = 5.0;
const INFEASIBILITY_TOL: f64 = 1e-7;
const DIVERGENCE_BOUND: f64 = 1e20;
/// An extrapolated point is kept only if its step is at most this
/// multiple of the previous plain step.
const ANDERSON_SAFEGUARD: f64 = 1.0;

/// A stateful solver that caches the equilibration and the KKT
/// factorization of the last program it saw. Programs that differ only in
/// `q` and `b` reuse everything; programs with the same sparsity pattern
/// reuse the symbolic analysis.
#[derive(Default)]
pub struct Solver {
    cache: Option<Workspace>,
}

struct Workspace {
    p_src: CscMatrix,
    a_src: CscMatrix,
    cones: Vec<Cone>,
    sigma: f64,
    scaling: Scaling,
    p: CscMatrix,
    a: CscMatrix,
    kkt: CscMatrix,
    factor: LdlFactorization,
    rho: f64,
    rho_vec: Vec<f64>,
}

impl Workspace {
    fn rho_vector(cones: &[Cone], rho: f64) -> Vec<f64> {
        let mut v = Vec::new();
        for cone in cones {
            let r = match cone {
                Cone::Zero(_) => (rho * RHO_EQ_FACTOR).min(RHO_MAX),
                _ => rho,
            };
            v.extend(std::iter::repeat_n(r, cone.dim()));
        }
        v
    }

    /// Upper triangle of the KKT matrix for the scaled data.
    fn assemble_kkt(p: &CscMatrix, a: &CscMatrix, sigma: f64, rho_vec: &[f64]) -> CscMatrix {
        let (n, m) = (a.ncols, a.nrows);
        let mut trip = Vec::with_capacity(p.nnz() + a.nnz() + n + m);
        for j in 0..n {
            for k in p.colptr[j]..p.colptr[j + 1] {
                trip.push((p.rowval[k], j, p.nzval[k]));
            }
            trip.push((j, j, sigma));
            for k in a.colptr[j]..a.colptr[j + 1] {
                trip.push((j, n + a.rowval[k], a.nzval[k]));
            }
        }
        for i in 0..m {
            trip.push((n + i, n + i, -1.0 / rho_vec[i]));
        }
        CscMatrix::from_triplets(n + m, n + m, &trip)
    }

    fn update_rho(&mut self, rho: f64) -> Result<()> {
        let n = self.a.ncols;
        self.rho = rho;
        self.rho_vec = Self::rho_vector(&self.cones, rho);
        for (i, r) in self.rho_vec.iter().enumerate() {
            // The diagonal is the last stored entry of its column.
            let pos = self.kkt.colptr[n + i + 1] - 1;
            self.kkt.nzval[pos] = -1.0 / r;
        }
        self.factor.refactor(&self.kkt).map_err(factor_error)
    }
}

fn factor_error(e: LdlError) -> Error {
    match e {
        LdlError::ZeroPivot(i) => Error::SolverFailure(format!("zero pivot in KKT factorization at index {i}")),
        LdlError::NotUpperTriangular => Error::SolverFailure("KKT matrix is not upper triangular".into()),
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn project_onto_c(cones: &[Cone], b: &[f64], w: &mut [f64], tmp: &mut Vec<f64>) {
    // Π_C(w) = b − Π_K(b − w)
    let mut offset = 0;
    for cone in cones {
        let dim = cone.dim();
        tmp.clear();
        tmp.extend((offset..offset + dim).map(|i| b[i] - w[i]));
        cone.project_in_place(tmp);
        for (k, i) in (offset..offset + dim).enumerate() {
            w[i] = b[i] - tmp[k];
        }
        offset += dim;
    }
}

impl Solver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops the cached factorization.
    pub fn reset(&mut self) {
        self.cache = None;
    }

    fn prepare(&mut self, program: &ConeProgram, options: &SolveOptions) -> Result<()> {
        if let Some(ws) = &self.cache {
            if ws.cones == program.cones && ws.sigma == options.sigma && ws.p_src == program.p && ws.a_src == program.a {
                return Ok(());
            }
        }
        let mut p = program.p.clone();
        let mut a = program.a.clone();
        let scaling = equilibrate(&mut p, &mut a, &program.q, &program.cones, options.scaling_iters);

        let reusable = self
            .cache
            .take()
            .filter(|ws| ws.cones == program.cones && ws.p_src.same_pattern(&program.p) && ws.a_src.same_pattern(&program.a));
        let rho = reusable.as_ref().map_or(options.rho, |ws| ws.rho);
        let rho_vec = Workspace::rho_vector(&program.cones, rho);
        let kkt = Workspace::assemble_kkt(&p, &a, options.sigma, &rho_vec);
        let factor = match reusable {
            Some(mut ws) if ws.factor.matches_pattern(&kkt) => {
                ws.factor.refactor(&kkt).map_err(factor_error)?;
                ws.factor
            }
            _ => LdlFactorization::new(&kkt).map_err(factor_error)?,
        };
        self.cache = Some(Workspace {
            p_src: program.p.clone(),
            a_src: program.a.clone(),
            cones: program.cones.clone(),
            sigma: options.sigma,
            scaling,
            p,
            a,
            kkt,
            factor,
            rho,
            rho_vec,
        });
        Ok(())
    }

    /// Solves `program`. A warm start `(z, y)` in original coordinates only
    /// changes the iteration count.
    pub fn solve(&mut self, program: &ConeProgram, options: &SolveOptions, warm_start: Option<(&[f64], &[f64])>) -> Result<SolveResult> {
        options.validate()?;
        program.validate()?;
        let started = Instant::now();
        self.prepare(program, options)?;
        let ws = self.cache.as_mut().expect("workspace prepared");

        let (n, m) = (program.num_vars(), program.num_rows());
        let s = ws.scaling.clone();
        let q: Vec<f64> = (0..n).map(|j| s.c * s.d[j] * program.q[j]).collect();
        let b: Vec<f64> = (0..m).map(|i| s.e[i] * program.b[i]).collect();
        let cones = ws.cones.clone();
        let alpha = options.over_relaxation;
        let sigma = options.sigma;

        let mut x = vec![0.0; n];
        let mut y = vec![0.0; m];
        let mut z = vec![0.0; m];
        let mut tmp = Vec::new();
        if let Some((z0, y0)) = warm_start {
            Error::check_dim("warm start primal", n, z0.len())?;
            Error::check_dim("warm start dual", m, y0.len())?;
            for j in 0..n {
                x[j] = s.dinv[j] * z0[j];
            }
            for i in 0..m {
                y[i] = s.c * s.einv[i] * y0[i];
            }
            ws.a.mul_vec(&x, &mut z);
            project_onto_c(&cones, &b, &mut z, &mut tmp);
        } else {
            z.copy_from_slice(&b);
            project_onto_c(&cones, &b, &mut z, &mut tmp);
        }
        // The iteration state is `w = (x, v)` with `v = z + y/ρ` the point
        // before projection; `z = Π_C(v)` and `y = ρ(v − z)`.
        let mut w = vec![0.0; n + m];
        w[..n].copy_from_slice(&x);
        for i in 0..m {
            w[n + i] = z[i] + y[i] / ws.rho_vec[i];
        }
        let split = |w: &[f64], rho_vec: &[f64], x: &mut [f64], z: &mut [f64], y: &mut [f64], tmp: &mut Vec<f64>| {
            x.copy_from_slice(&w[..n]);
            z.copy_from_slice(&w[n..]);
            project_onto_c(&cones, &b, z, tmp);
            for i in 0..m {
                y[i] = rho_vec[i] * (w[n + i] - z[i]);
            }
        };
        split(&w, &ws.rho_vec, &mut x, &mut z, &mut y, &mut tmp);

        let mut rhs = vec![0.0; n + m];
        let mut work = vec![0.0; n + m];
        let mut ax = vec![0.0; m];
        let mut px = vec![0.0; n];
        let mut aty = vec![0.0; n];
        let mut x_prev = x.clone();
        let mut y_prev = y.clone();
        let mut delta = vec![0.0; m.max(n)];
        let mut tw = vec![0.0; n + m];
        let mut anderson = Anderson::new(options.anderson_memory);
        // Plain image of the last input, restored when an extrapolated
        // point turns out worse.
        let mut fallback: Option<Vec<f64>> = None;
        let mut last_step = f64::INFINITY;

        let mut status = Status::MaxIters;
        let mut iterations = 0;
        let mut residuals = (f64::INFINITY, f64::INFINITY, 0.0, 0.0);

        for iter in 1..=options.max_iters {
            iterations = iter;
            x_prev.copy_from_slice(&x);
            y_prev.copy_from_slice(&y);

            for j in 0..n {
                rhs[j] = sigma * x[j] - q[j];
            }
            for i in 0..m {
                rhs[n + i] = z[i] - y[i] / ws.rho_vec[i];
            }
            ws.factor.solve(&mut rhs, &mut work);

            for j in 0..n {
                tw[j] = alpha * rhs[j] + (1.0 - alpha) * x[j];
            }
            // z̃ = z + (ν − y)/ρ, relaxed, then shifted by y/ρ.
            for i in 0..m {
                let zt = z[i] + (rhs[n + i] - y[i]) / ws.rho_vec[i];
                tw[n + i] = alpha * zt + (1.0 - alpha) * z[i] + y[i] / ws.rho_vec[i];
            }
            let step = tw.iter().zip(&w).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
            if let Some(plain) = fallback.take() {
                if step > ANDERSON_SAFEGUARD * last_step || !step.is_finite() {
                    w = plain;
                    anderson.reset();
                    split(&w, &ws.rho_vec, &mut x, &mut z, &mut y, &mut tmp);
                    continue;
                }
            }
            last_step = step;
            let prev_w = std::mem::replace(&mut w, tw.clone());
            split(&w, &ws.rho_vec, &mut x, &mut z, &mut y, &mut tmp);

            if iter % options.check_every == 0 || iter == options.max_iters || iter == 1 {
                if x.iter().chain(&y).any(|v| !v.is_finite()) {
                    return Err(Error::SolverFailure(format!("non-finite iterate after {iter} iterations (rho = {:e})", ws.rho)));
                }

                // Residuals in original coordinates.
                ws.a.mul_vec(&x, &mut ax);
                ws.p.sym_upper_mul_vec(&x, &mut px);
                ws.a.tmul_vec(&y, &mut aty);
                let mut prim = 0.0f64;
                let mut ax_norm = 0.0f64;
                let mut z_norm = 0.0f64;
                for i in 0..m {
                    prim = prim.max((s.einv[i] * (ax[i] - z[i])).abs());
                    ax_norm = ax_norm.max((s.einv[i] * ax[i]).abs());
                    z_norm = z_norm.max((s.einv[i] * z[i]).abs());
                }
                let mut dual = 0.0f64;
                let mut px_norm = 0.0f64;
                let mut aty_norm = 0.0f64;
                let mut q_norm = 0.0f64;
                for j in 0..n {
                    dual = dual.max((s.dinv[j] * (px[j] + q[j] + aty[j])).abs());
                    px_norm = px_norm.max((s.dinv[j] * px[j]).abs());
                    aty_norm = aty_norm.max((s.dinv[j] * aty[j]).abs());
                    q_norm = q_norm.max((s.dinv[j] * q[j]).abs());
                }
                dual *= s.cinv;
                px_norm *= s.cinv;
                aty_norm *= s.cinv;
                q_norm *= s.cinv;
                let prim_scale = ax_norm.max(z_norm);
                let dual_scale = px_norm.max(aty_norm).max(q_norm);
                let prim_tol = options.eps_abs + options.eps_rel * prim_scale;
                let dual_tol = options.eps_abs + options.eps_rel * dual_scale;
                residuals = (prim, dual, prim_tol, dual_tol);

                if prim <= prim_tol && dual <= dual_tol {
                    status = Status::Optimal;
                    break;
                }

                if iter > 1 && self::infeasibility_detected(ws, &q, &b, &x, &x_prev, &y, &y_prev, &mut delta, &mut tmp) {
                    status = Status::InfeasibleDetected;
                    break;
                }
                if inf_norm(&x) > DIVERGENCE_BOUND || inf_norm(&y) > DIVERGENCE_BOUND {
                    status = Status::InfeasibleDetected;
                    break;
                }

                if options.adaptive_rho && iter % RHO_ADAPT_INTERVAL == 0 {
                    let p_rel = prim / prim_scale.max(1e-12);
                    let d_rel = dual / dual_scale.max(1e-12);
                    let ratio = (p_rel / d_rel.max(1e-300)).sqrt();
                    let new_rho = (ws.rho * ratio).clamp(RHO_MIN, RHO_MAX);
                    if new_rho > RHO_ADAPT_RATIO * ws.rho || new_rho < ws.rho / RHO_ADAPT_RATIO {
                        ws.update_rho(new_rho)?;
                        for i in 0..m {
                            w[n + i] = z[i] + y[i] / ws.rho_vec[i];
                        }
                        anderson.reset();
                        last_step = f64::INFINITY;
                        continue;
                    }
                }
            }

            if let Some(extrapolated) = anderson.push(&prev_w, &w) {
                fallback = Some(std::mem::replace(&mut w, extrapolated));
                split(&w, &ws.rho_vec, &mut x, &mut z, &mut y, &mut tmp);
            }
        }

        let z_out: Vec<f64> = (0..n).map(|j| s.d[j] * x[j]).collect();
        let y_out: Vec<f64> = (0..m).map(|i| s.e[i] * y[i] * s.cinv).collect();
        let slack: Vec<f64> = (0..m).map(|i| program.b[i] - s.einv[i] * z[i]).collect();
        let objective = program.objective(&z_out);
        log::trace!(
            "cone solve: n={n} m={m} status={status:?} iters={iterations} prim={:.2e} dual={:.2e} rho={:.2e} in {:?}",
            residuals.0,
            residuals.1,
            ws.rho,
            started.elapsed()
        );
        Ok(SolveResult {
            z: z_out,
            y: y_out,
            slack,
            status,
            primal_residual: residuals.0,
            dual_residual: residuals.1,
            primal_tolerance: residuals.2,
            dual_tolerance: residuals.3,
            iterations,
            objective,
        })
    }
}

/// Certificate tests on the successive differences of the scaled iterates.
///
/// Primal infeasibility: `δy ∈ K*`, `Aᵀδy ≈ 0`, `⟨b, δy⟩ < 0`.
/// Dual infeasibility: `P δx ≈ 0`, `⟨q, δx⟩ < 0`, `−A δx ∈ K`.
#[allow(clippy::too_many_arguments)]
fn infeasibility_detected(
    ws: &Workspace,
    q: &[f64],
    b: &[f64],
    x: &[f64],
    x_prev: &[f64],
    y: &[f64],
    y_prev: &[f64],
    buf: &mut [f64],
    tmp: &mut Vec<f64>,
) -> bool {
    let (n, m) = (x.len(), y.len());
    let s = &ws.scaling;

    // Primal certificate.
    if m > 0 {
        let dy: Vec<f64> = (0..m).map(|i| y[i] - y_prev[i]).collect();
        let dy_norm = (0..m).fold(0.0f64, |acc, i| acc.max((s.e[i] * dy[i]).abs()));
        if dy_norm > 1e-12 {
            let mut atdy = vec![0.0; n];
            ws.a.tmul_vec(&dy, &mut atdy);
            let atdy_norm = (0..n).fold(0.0f64, |acc, j| acc.max((s.dinv[j] * atdy[j]).abs()));
            let support: f64 = dy.iter().zip(b).map(|(a, c)| a * c).sum();
            let mut in_dual = true;
            let mut offset = 0;
            for cone in &ws.cones {
                let dim = cone.dim();
                if cone.dual_distance(&dy[offset..offset + dim]) > INFEASIBILITY_TOL * dy_norm * 1e3 {
                    in_dual = false;
                    break;
                }
                offset += dim;
            }
            if in_dual && atdy_norm <= INFEASIBILITY_TOL * dy_norm && support < -INFEASIBILITY_TOL * dy_norm {
                return true;
            }
        }
    }

    // Dual certificate.
    let dx: Vec<f64> = (0..n).map(|j| x[j] - x_prev[j]).collect();
    let dx_norm = (0..n).fold(0.0f64, |acc, j| acc.max((s.d[j] * dx[j]).abs()));
    if dx_norm > 1e-12 {
        let lin: f64 = dx.iter().zip(q).map(|(a, c)| a * c).sum();
        if lin < -INFEASIBILITY_TOL * dx_norm {
            let mut pdx = vec![0.0; n];
            ws.p.sym_upper_mul_vec(&dx, &mut pdx);
            let pdx_norm = (0..n).fold(0.0f64, |acc, j| acc.max((s.dinv[j] * pdx[j]).abs()));
            if pdx_norm <= INFEASIBILITY_TOL * dx_norm {
                let adx = &mut buf[..m];
                ws.a.mul_vec(&dx, adx);
                let mut offset = 0;
                for cone in &ws.cones {
                    let dim = cone.dim();
                    tmp.clear();
                    tmp.extend(adx[offset..offset + dim].iter().map(|v| -v));
                    if cone.distance(tmp) > INFEASIBILITY_TOL * dx_norm * 1e3 {
                        return false;
                    }
                    offset += dim;
                }
                return true;
            }
        }
    }
    false
}
