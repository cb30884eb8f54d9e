//! The outer loop: LL solve, proximal penalty subproblem, stopping test and
//! adaptive penalty update.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, SolveOptions, Solver, Status};
use crate::lower_level::LowerLevelSolver;
use crate::lowering::{lower_subproblem, LoweredProgram};
use crate::matrix::norm2;
use crate::problem::{feasibility_gap, linearized_gap, penalty_vector, BilevelSpec, Iterate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoOptions {
    /// Proximal weight.
    pub rho: f64,
    pub alpha0: f64,
    pub c_alpha: f64,
    pub delta_alpha: f64,
    pub tol: f64,
    pub max_outer_iters: usize,
    /// Stop on `‖Δz‖ / √(1 + ‖z^k‖²)` instead of `‖Δz‖`.
    pub scaled_stopping: bool,
    /// Inner tolerance bounds for the subproblem.
    pub inner_eps_floor: f64,
    pub inner_eps_cap: f64,
    /// Relative tolerance of the subproblem solves.
    pub subproblem_eps_rel: f64,
    /// Tolerance factor of the re-solve after a failed decrease check.
    pub retry_tightening: f64,
    /// Allowed excess in the per-step decrease check.
    pub decrease_slack: f64,
    /// Options of the LL solves.
    pub lower_level: SolveOptions,
}

impl Default for AlgoOptions {
    fn default() -> Self {
        Self {
            rho: 1e-2,
            alpha0: 1.0,
            c_alpha: 1.0,
            delta_alpha: 5.0,
            tol: 0.1,
            max_outer_iters: 200,
            scaled_stopping: true,
            inner_eps_floor: 1e-8,
            inner_eps_cap: 1e-6,
            subproblem_eps_rel: 1e-5,
            retry_tightening: 0.1,
            decrease_slack: 1e-6,
            lower_level: SolveOptions::default(),
        }
    }
}

impl AlgoOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("alpha0", self.alpha0),
            ("c_alpha", self.c_alpha),
            ("delta_alpha", self.delta_alpha),
            ("tol", self.tol),
            ("inner_eps_floor", self.inner_eps_floor),
            ("inner_eps_cap", self.inner_eps_cap),
            ("subproblem_eps_rel", self.subproblem_eps_rel),
            ("retry_tightening", self.retry_tightening),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::invalid("max_outer_iters must be at least 1"));
        }
        if self.inner_eps_floor > self.inner_eps_cap {
            return Err(Error::invalid("inner_eps_floor exceeds inner_eps_cap"));
        }
        self.lower_level.validate()
    }

    /// Inner tolerance `clamp(√2/2 · ρ · Δ, floor, cap)`; the first step
    /// uses the cap.
    pub fn inner_eps(&self, last_delta: Option<f64>) -> f64 {
        match last_delta {
            Some(d) => (std::f64::consts::FRAC_1_SQRT_2 * self.rho * d).clamp(self.inner_eps_floor, self.inner_eps_cap),
            None => self.inner_eps_cap,
        }
    }
}

/// `α_{k+1}`: raised by `δ` iff `max(α, 1/t) < c/Δ`, with `1/0 = ∞`.
pub fn penalty_update(alpha: f64, t: f64, delta: f64, c_alpha: f64, delta_alpha: f64) -> f64 {
    let inv_t = if t > 0.0 { 1.0 / t } else { f64::INFINITY };
    let bound = if delta > 0.0 { c_alpha / delta } else { f64::INFINITY };
    if alpha.max(inv_t) < bound {
        alpha + delta_alpha
    } else {
        alpha
    }
}

/// One outer iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    /// `‖z^{k+1} − z^k‖`
    pub delta: f64,
    /// `Δ / √(1 + ‖z^k‖²)`
    pub delta_scaled: f64,
    pub t: f64,
    /// Penalty used in this step's subproblem.
    pub alpha: f64,
    pub alpha_next: f64,
    /// `φ_k(z^k)`
    pub phi_prev: f64,
    /// `φ_k(z^{k+1})`
    pub phi_next: f64,
    /// `ρ/4 ‖z^k − z^{k−1}‖²` (0 on the first step)
    pub prox_credit: f64,
    /// `v(r^k, u^k)`
    pub ll_value: f64,
    pub ul_value: f64,
    pub inner_eps: f64,
    /// Dual residual of the subproblem solve; bounds the distance of 0 to
    /// the subdifferential of the subproblem objective.
    pub certificate: f64,
    pub inner_iterations: usize,
    /// Iterations of the LL solve at the new point.
    pub ll_iterations: usize,
    /// The first candidate failed the decrease check and was re-solved
    /// with a tighter tolerance.
    pub retried: bool,
    /// Fraction of the segment from `z^k` to the solver's point actually
    /// taken: 1 normally, less after a damped step, 0 when safeguarded.
    pub step_fraction: f64,
    /// No point of the segment passed the decrease check and `z^k` was kept.
    pub safeguarded: bool,
    pub elapsed_s: f64,
}

impl IterRecord {
    /// Excess of `φ_k(z^{k+1})` over `φ_k(z^k) + ρ/4‖z^k − z^{k−1}‖²`.
    pub fn decrease_excess(&self) -> f64 {
        self.phi_next - self.phi_prev - self.prox_credit
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<IterRecord>,
    pub termination: Termination,
}

impl Trace {
    pub fn last(&self) -> Option<&IterRecord> {
        self.records.last()
    }
}

/// Multipliers of the last subproblem, used for the KKT report.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SubproblemCertificate {
    pub eta: f64,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// `‖∂L + η∂l + Σλ_i ∂P_i + …‖∞` read from the solver's dual residual
    /// with the proximal term removed.
    pub stationarity: f64,
    pub t: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KktReport {
    pub t_final: f64,
    pub complementarity: f64,
    pub stationarity: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.t_final.max(self.complementarity).max(self.stationarity)
    }
}

/// KKT residuals at `final_iterate` from the multipliers of the subproblem
/// that produced it.
pub fn kkt_report(spec: &BilevelSpec, final_iterate: &Iterate, cert: &SubproblemCertificate) -> Result<KktReport> {
    let pen = penalty_vector(spec, &final_iterate.x, &final_iterate.u)?;
    let complementarity =
        cert.lambda.iter().zip(pen.iter().zip(&final_iterate.r)).map(|(l, (p, r))| (l * (p - r)).abs()).fold(0.0, f64::max);
    Ok(KktReport { t_final: cert.t, complementarity, stationarity: cert.stationarity })
}

/// `φ_k(z) = L(x,u) + ρ/2 ‖z − z^k‖² + α max{0, V(z), P_i − r_i, g_j}`.
pub fn phi(spec: &BilevelSpec, z: &Iterate, center: &Iterate, alpha: f64, rho: f64) -> Result<f64> {
    let zz = z.z();
    let zk = center.z();
    let prox: f64 = zz.iter().zip(&zk).map(|(a, b)| (a - b).powi(2)).sum();
    let mut viol = linearized_gap(spec, &z.x, &z.u, &z.r, center)?.max(0.0);
    for (p, r) in penalty_vector(spec, &z.x, &z.u)?.iter().zip(&z.r) {
        viol = viol.max(p - r);
    }
    for g in spec.constraint_vector(&z.x, &z.u)? {
        viol = viol.max(g);
    }
    Ok(spec.ul_value(&z.x, &z.u)? + 0.5 * rho * prox + alpha * viol)
}

/// Golden-section minimization of `φ_k` over the segment from `center` to
/// `candidate`. Returns the fraction, the point and its value.
fn segment_search(spec: &BilevelSpec, center: &Iterate, candidate: &Iterate, alpha: f64, rho: f64) -> Result<(f64, Iterate, f64)> {
    let at = |theta: f64| -> Result<(Iterate, f64)> {
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p + theta * (q - p)).collect::<Vec<_>>();
        let it = Iterate::new(mix(&center.x, &candidate.x), mix(&center.u, &candidate.u), mix(&center.r, &candidate.r), alpha)?;
        let v = phi(spec, &it, center, alpha, rho)?;
        Ok((it, v))
    };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let mut fa = at(a)?.1;
    let mut fb = at(b)?.1;
    for _ in 0..40 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = at(a)?.1;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = at(b)?.1;
        }
    }
    let theta = if fa <= fb { a } else { b };
    let (point, value) = at(theta)?;
    Ok((theta, point, value))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Stateful runner: owns the LL and subproblem solver caches and the
/// previous iterate needed by the decrease check.
pub struct VfIdca<'a> {
    spec: &'a BilevelSpec,
    options: AlgoOptions,
    ll: LowerLevelSolver,
    sub: Solver,
    sub_warm: Option<(Vec<f64>, Vec<f64>)>,
    previous_z: Option<Vec<f64>>,
    last_delta: Option<f64>,
    iteration: usize,
    started: Instant,
    pub last_certificate: Option<SubproblemCertificate>,
}

impl<'a> VfIdca<'a> {
    pub fn new(spec: &'a BilevelSpec, options: AlgoOptions) -> Result<Self> {
        options.validate()?;
        spec.validate()?;
        let ll = LowerLevelSolver::new(options.lower_level.clone());
        Ok(Self {
            spec,
            options,
            ll,
            sub: Solver::new(),
            sub_warm: None,
            previous_z: None,
            last_delta: None,
            iteration: 0,
            started: Instant::now(),
            last_certificate: None,
        })
    }

    pub fn options(&self) -> &AlgoOptions {
        &self.options
    }

    /// Fills `gamma`, `zeta`, `xi` and `ll_value` by solving the LL problem
    /// at `(r, u)`.
    pub fn attach_lower_level(&mut self, it: &mut Iterate) -> Result<usize> {
        let sol = self.ll.solve(self.spec, &it.r, &it.u)?;
        let iterations = sol.report.iterations;
        it.gamma = Some(sol.gamma);
        it.zeta = Some(sol.zeta);
        it.xi = if self.spec.u_dim > 0 { Some(sol.xi) } else { None };
        it.ll_value = Some(sol.value);
        Ok(iterations)
    }

    fn solve_subproblem(&mut self, lowered: &LoweredProgram, eps_abs: f64, eps_rel: f64) -> Result<kernel::SolveResult> {
        let mut opts = self.options.lower_level.clone().with_tolerance(eps_abs, eps_rel);
        opts.max_iters = opts.max_iters.max(20_000);
        let warm = self.sub_warm.as_ref().filter(|(z, y)| z.len() == lowered.program.num_vars() && y.len() == lowered.program.num_rows());
        let res = self.sub.solve(&lowered.program, &opts, warm.map(|(z, y)| (z.as_slice(), y.as_slice())))?;
        if res.status == Status::InfeasibleDetected {
            self.sub_warm = None;
            return Err(Error::SolverFailure("subproblem reported infeasible".into()));
        }
        self.sub_warm = Some((res.z.clone(), res.y.clone()));
        Ok(res)
    }

    fn candidate(&self, lowered: &LoweredProgram, z: &[f64], alpha: f64) -> Result<Iterate> {
        let l = &lowered.layout;
        let mut u = z[l.u.clone()].to_vec();
        if let Some(dom) = &self.spec.u_domain {
            dom.clamp(&mut u);
        }
        let r = z[l.r.clone()].iter().map(|v| v.max(0.0)).collect();
        Iterate::new(z[l.x.clone()].to_vec(), u, r, alpha)
    }

    /// Dual residual with the proximal part removed, over every column
    /// except the penalty epigraph variable.
    fn stationarity(&self, lowered: &LoweredProgram, res: &kernel::SolveResult, center: &[f64]) -> f64 {
        let prog = &lowered.program;
        let n = prog.num_vars();
        let mut g = vec![0.0; n];
        prog.p.sym_upper_mul_vec(&res.z, &mut g);
        let mut aty = vec![0.0; n];
        prog.a.tmul_vec(&res.y, &mut aty);
        let l = &lowered.layout;
        let zblock = l.x.start..l.r.end;
        let mut worst = 0.0f64;
        for j in 0..n {
            if Some(j) == l.s {
                continue;
            }
            let mut v = g[j] + prog.q[j] + aty[j];
            if zblock.contains(&j) {
                v -= self.options.rho * (res.z[j] - center[j - zblock.start]);
            }
            worst = worst.max(v.abs());
        }
        worst
    }

    /// One outer iteration from `prev` (which must carry LL data). Returns
    /// the next iterate with its own LL data attached.
    pub fn step(&mut self, prev: &Iterate) -> Result<(Iterate, IterRecord)> {
        let k = self.iteration;
        let wrap = |e: Error| Error::Outer { iteration: k, source: Box::new(e) };
        let spec = self.spec;
        let rho = self.options.rho;
        let alpha = prev.alpha;
        let zk = prev.z();

        let lowered = lower_subproblem(spec, prev, alpha, rho).map_err(wrap)?;
        let eps = self.options.inner_eps(self.last_delta);
        let eps_rel = self.options.subproblem_eps_rel;
        let mut res = self.solve_subproblem(&lowered, eps, eps_rel).map_err(wrap)?;
        let mut next = self.candidate(&lowered, &res.z, alpha).map_err(wrap)?;

        let prox_credit = self.previous_z.as_ref().map_or(0.0, |zp| 0.25 * rho * distance(&zk, zp).powi(2));
        let phi_prev = phi(spec, prev, prev, alpha, rho).map_err(wrap)?;
        let mut phi_next = phi(spec, &next, prev, alpha, rho).map_err(wrap)?;
        let bound = phi_prev + prox_credit + self.options.decrease_slack;
        let mut safeguarded = false;
        let mut step_fraction = 1.0;
        let retried = phi_next > bound;
        if retried {
            log::debug!("step {k}: decrease check failed by {:.3e}, re-solving tighter", phi_next - bound);
            let tight = self.options.retry_tightening;
            res = self.solve_subproblem(&lowered, eps * tight, eps_rel * tight).map_err(wrap)?;
            next = self.candidate(&lowered, &res.z, alpha).map_err(wrap)?;
            phi_next = phi(spec, &next, prev, alpha, rho).map_err(wrap)?;
        }
        if phi_next > bound {
            let (theta, point, value) = segment_search(spec, prev, &next, alpha, rho).map_err(wrap)?;
            if theta > 0.0 && value <= bound {
                log::debug!("step {k}: damped to θ = {theta:.3}");
                next = point;
                phi_next = value;
                step_fraction = theta;
            } else {
                log::debug!("step {k}: keeping z^k, candidate exceeds the bound by {:.3e}", phi_next - bound);
                next = Iterate { gamma: None, zeta: None, xi: None, ll_value: None, ..prev.clone() };
                phi_next = phi_prev;
                safeguarded = true;
                step_fraction = 0.0;
            }
        }

        let t = feasibility_gap(spec, &next, prev).map_err(wrap)?;
        let znext = next.z();
        let delta = distance(&znext, &zk);
        let delta_scaled = delta / (1.0 + norm2(&zk).powi(2)).sqrt();
        // A null step carries no information about progress.
        let alpha_next = if safeguarded { alpha } else { penalty_update(alpha, t, delta, self.options.c_alpha, self.options.delta_alpha) };

        let duals = kernel::extract_duals_unchecked(&res.y, &lowered.rows);
        self.last_certificate = Some(SubproblemCertificate {
            eta: duals["eta"].first().copied().unwrap_or(0.0),
            lambda: duals["lambda"].clone(),
            mu: duals["mu"].clone(),
            stationarity: self.stationarity(&lowered, &res, &zk),
            t,
        });

        next.alpha = alpha_next;
        let ll_iterations = self.attach_lower_level(&mut next).map_err(wrap)?;

        let record = IterRecord {
            iteration: k,
            delta,
            delta_scaled,
            t,
            alpha,
            alpha_next,
            phi_prev,
            phi_next,
            prox_credit,
            ll_value: prev.ll_value.unwrap_or(f64::NAN),
            ul_value: spec.ul_value(&next.x, &next.u)?,
            inner_eps: eps,
            certificate: res.dual_residual,
            inner_iterations: res.iterations,
            ll_iterations,
            retried,
            step_fraction,
            safeguarded,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        };
        self.previous_z = Some(zk);
        self.last_delta = Some(delta);
        self.iteration += 1;
        Ok((next, record))
    }

    /// A safeguarded step has `Δ = 0` without progress and never stops the run.
    pub fn converged(&self, record: &IterRecord) -> bool {
        if record.safeguarded {
            return false;
        }
        let d = if self.options.scaled_stopping { record.delta_scaled } else { record.delta };
        d.max(record.t) < self.options.tol
    }

    /// Iterates from `init` until the stopping test or the iteration cap.
    pub fn run(&mut self, init: &Iterate) -> Result<(Iterate, Trace)> {
        init.check_against(self.spec)?;
        let mut current = init.clone();
        if let Some(dom) = &self.spec.u_domain {
            dom.clamp(&mut current.u);
        }
        self.attach_lower_level(&mut current)?;
        let mut records = Vec::new();
        let mut termination = Termination::MaxIterations;
        for _ in 0..self.options.max_outer_iters {
            let (next, record) = self.step(&current)?;
            log::debug!(
                "iter {:3}: Δ={:.3e} t={:.3e} α={} UL={:.5} inner={}",
                record.iteration,
                record.delta_scaled,
                record.t,
                record.alpha_next,
                record.ul_value,
                record.inner_iterations
            );
            let done = self.converged(&record);
            records.push(record);
            current = next;
            if done {
                termination = Termination::Converged;
                break;
            }
        }
        Ok((current, Trace { records, termination }))
    }
}

/// Runs the method from `init` with a fresh runner.
pub fn run(spec: &BilevelSpec, init: &Iterate, options: &AlgoOptions) -> Result<(Iterate, Trace)> {
    VfIdca::new(spec, options.clone())?.run(init)
}

/// One step from `prev` with a fresh runner (no decrease credit).
pub fn step(spec: &BilevelSpec, prev: &Iterate, options: &AlgoOptions) -> Result<(Iterate, IterRecord)> {
    let mut runner = VfIdca::new(spec, options.clone())?;
    let mut prev = prev.clone();
    if prev.gamma.is_none() || prev.ll_value.is_none() || (spec.u_dim > 0 && prev.xi.is_none()) {
        runner.attach_lower_level(&mut prev)?;
    }
    runner.step(&prev)
}
