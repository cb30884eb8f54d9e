//! Description of decoupled bilevel instances
//!
//! ```text
//! min_{x,u,r}  L(x,u)
//! s.t.         x ∈ argmin_{x'} { l(x',u) : P_i(x',u) ≤ r_i, g_j(x',u) ≤ 0 },  r ≥ 0,  u ∈ box
//! ```
//!
//! Every function is a [`ConvexPiece`] acting on the joint point `(x, u)`.
//! Index blocks refer to positions in that joint point, so `u` coordinates
//! start at `x_dim`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub enum PieceKind {
    /// `scale · ‖A x_B − b‖²`
    LeastSquares {
        design: Arc<Matrix>,
        target: Vec<f64>,
        block: Vec<usize>,
        scale: f64,
    },
    /// `‖x_B‖₁`
    L1 {
        block: Vec<usize>,
    },
    /// `‖x_B‖₂`
    L2 {
        block: Vec<usize>,
    },
    /// `scale · ‖x_B‖²`
    SquaredL2 {
        block: Vec<usize>,
        scale: f64,
    },
    /// `scale · Σ_j max(0, 1 − y_j (a_jᵀ w − c))` with `w = x_weights`, `c = x_offset`.
    Hinge {
        design: Arc<Matrix>,
        labels: Vec<f64>,
        weights: Vec<usize>,
        offset: usize,
        scale: f64,
    },
    /// `⟨coefficients, x⟩ + constant` over the whole point.
    Affine {
        coefficients: Vec<f64>,
        constant: f64,
    },
    /// `|x_i| − x_k`, a box row `−x_k ≤ x_i ≤ x_k` written as one function.
    BoxGap {
        x_index: usize,
        bound_index: usize,
    },
    Sum(Vec<ConvexPiece>),
    Max(Vec<ConvexPiece>),
}

/// A convex function of the joint point.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexPiece {
    pub kind: PieceKind,
    pub dim: usize,
}

impl ConvexPiece {
    pub fn least_squares(dim: usize, design: Arc<Matrix>, target: Vec<f64>, block: Vec<usize>, scale: f64) -> Self {
        Self { kind: PieceKind::LeastSquares { design, target, block, scale }, dim }
    }

    pub fn l1(dim: usize, block: Vec<usize>) -> Self {
        Self { kind: PieceKind::L1 { block }, dim }
    }

    pub fn l2(dim: usize, block: Vec<usize>) -> Self {
        Self { kind: PieceKind::L2 { block }, dim }
    }

    pub fn squared_l2(dim: usize, block: Vec<usize>, scale: f64) -> Self {
        Self { kind: PieceKind::SquaredL2 { block, scale }, dim }
    }

    pub fn hinge(dim: usize, design: Arc<Matrix>, labels: Vec<f64>, weights: Vec<usize>, offset: usize, scale: f64) -> Self {
        Self { kind: PieceKind::Hinge { design, labels, weights, offset, scale }, dim }
    }

    pub fn affine(coefficients: Vec<f64>, constant: f64) -> Self {
        let dim = coefficients.len();
        Self { kind: PieceKind::Affine { coefficients, constant }, dim }
    }

    /// The zero function.
    pub fn constant(dim: usize, value: f64) -> Self {
        Self::affine(vec![0.0; dim], value)
    }

    pub fn box_gap(dim: usize, x_index: usize, bound_index: usize) -> Self {
        Self { kind: PieceKind::BoxGap { x_index, bound_index }, dim }
    }

    pub fn sum(dim: usize, terms: Vec<ConvexPiece>) -> Self {
        Self { kind: PieceKind::Sum(terms), dim }
    }

    pub fn max(dim: usize, terms: Vec<ConvexPiece>) -> Self {
        Self { kind: PieceKind::Max(terms), dim }
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            PieceKind::LeastSquares { .. } => "least-squares",
            PieceKind::L1 { .. } => "l1-norm",
            PieceKind::L2 { .. } => "l2-norm",
            PieceKind::SquaredL2 { .. } => "squared-l2",
            PieceKind::Hinge { .. } => "hinge-sum",
            PieceKind::Affine { .. } => "affine",
            PieceKind::BoxGap { .. } => "box-gap",
            PieceKind::Sum(_) => "sum",
            PieceKind::Max(_) => "max",
        }
    }

    /// Whether the piece is nonnegative by construction.
    pub fn is_nonnegative(&self) -> bool {
        match &self.kind {
            PieceKind::L1 { .. } | PieceKind::L2 { .. } => true,
            PieceKind::LeastSquares { scale, .. } | PieceKind::SquaredL2 { scale, .. } | PieceKind::Hinge { scale, .. } => *scale >= 0.0,
            PieceKind::Affine { coefficients, constant } => coefficients.iter().all(|c| *c == 0.0) && *constant >= 0.0,
            PieceKind::BoxGap { .. } => false,
            PieceKind::Sum(terms) => terms.iter().all(ConvexPiece::is_nonnegative),
            PieceKind::Max(terms) => terms.iter().any(ConvexPiece::is_nonnegative),
        }
    }

    /// Structural checks: index ranges, data shapes, nonnegative scales.
    pub fn validate(&self) -> Result<()> {
        let in_range = |idx: &[usize]| -> Result<()> {
            match idx.iter().find(|&&i| i >= self.dim) {
                Some(i) => Err(Error::invalid(format!("{} piece index {i} out of range {}", self.kind_name(), self.dim))),
                None => Ok(()),
            }
        };
        match &self.kind {
            PieceKind::LeastSquares { design, target, block, scale } => {
                Error::check_dim("least-squares target", design.rows(), target.len())?;
                Error::check_dim("least-squares block", design.cols(), block.len())?;
                check_scale(*scale)?;
                in_range(block)
            }
            PieceKind::L1 { block } | PieceKind::L2 { block } => in_range(block),
            PieceKind::SquaredL2 { block, scale } => {
                check_scale(*scale)?;
                in_range(block)
            }
            PieceKind::Hinge { design, labels, weights, offset, scale } => {
                Error::check_dim("hinge labels", design.rows(), labels.len())?;
                Error::check_dim("hinge weights", design.cols(), weights.len())?;
                check_scale(*scale)?;
                in_range(weights)?;
                in_range(&[*offset])
            }
            PieceKind::Affine { coefficients, constant } => {
                Error::check_dim("affine coefficients", self.dim, coefficients.len())?;
                if !constant.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid("non-finite affine data"));
                }
                Ok(())
            }
            PieceKind::BoxGap { x_index, bound_index } => in_range(&[*x_index, *bound_index]),
            PieceKind::Sum(terms) | PieceKind::Max(terms) => {
                if matches!(self.kind, PieceKind::Max(_)) && terms.is_empty() {
                    return Err(Error::invalid("max of no terms"));
                }
                for t in terms {
                    Error::check_dim("composite term dimension", self.dim, t.dim)?;
                    t.validate()?;
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        Error::check_dim("piece evaluation point", self.dim, point.len())?;
        Ok(self.eval_unchecked(point))
    }

    pub(crate) fn eval_unchecked(&self, point: &[f64]) -> f64 {
        match &self.kind {
            PieceKind::LeastSquares { design, target, block, scale } => {
                let xb = gather(point, block);
                scale * (0..design.rows()).map(|i| (dot(design.row(i), &xb) - target[i]).powi(2)).sum::<f64>()
            }
            PieceKind::L1 { block } => block.iter().map(|&i| point[i].abs()).sum(),
            PieceKind::L2 { block } => block.iter().map(|&i| point[i] * point[i]).sum::<f64>().sqrt(),
            PieceKind::SquaredL2 { block, scale } => scale * block.iter().map(|&i| point[i] * point[i]).sum::<f64>(),
            PieceKind::Hinge { design, labels, weights, offset, scale } => {
                let w = gather(point, weights);
                let c = point[*offset];
                scale * (0..design.rows()).map(|j| (1.0 - labels[j] * (dot(design.row(j), &w) - c)).max(0.0)).sum::<f64>()
            }
            PieceKind::Affine { coefficients, constant } => dot(coefficients, point) + constant,
            PieceKind::BoxGap { x_index, bound_index } => point[*x_index].abs() - point[*bound_index],
            PieceKind::Sum(terms) => terms.iter().map(|t| t.eval_unchecked(point)).sum(),
            PieceKind::Max(terms) => terms.iter().map(|t| t.eval_unchecked(point)).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// One element of the subdifferential at `point`. Kinks resolve to the
    /// sign vector (`0` at zero) for absolute values, to `0` for the
    /// Euclidean norm at the origin, and to the inactive side for hinge terms.
    pub fn subgradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("piece subgradient point", self.dim, point.len())?;
        let mut g = vec![0.0; self.dim];
        self.add_subgradient(point, 1.0, &mut g);
        Ok(g)
    }

    fn add_subgradient(&self, point: &[f64], weight: f64, g: &mut [f64]) {
        match &self.kind {
            PieceKind::LeastSquares { design, target, block, scale } => {
                let xb = gather(point, block);
                let res: Vec<f64> = (0..design.rows()).map(|i| dot(design.row(i), &xb) - target[i]).collect();
                let grad = design.tmul_vec(&res);
                for (k, &i) in block.iter().enumerate() {
                    g[i] += weight * 2.0 * scale * grad[k];
                }
            }
            PieceKind::L1 { block } => {
                for &i in block {
                    g[i] += weight * sign(point[i]);
                }
            }
            PieceKind::L2 { block } => {
                let n = norm2(&gather(point, block));
                if n > 0.0 {
                    for &i in block {
                        g[i] += weight * point[i] / n;
                    }
                }
            }
            PieceKind::SquaredL2 { block, scale } => {
                for &i in block {
                    g[i] += weight * 2.0 * scale * point[i];
                }
            }
            PieceKind::Hinge { design, labels, weights, offset, scale } => {
                let w = gather(point, weights);
                let c = point[*offset];
                for j in 0..design.rows() {
                    if 1.0 - labels[j] * (dot(design.row(j), &w) - c) > 0.0 {
                        for (k, &i) in weights.iter().enumerate() {
                            g[i] -= weight * scale * labels[j] * design.get(j, k);
                        }
                        g[*offset] += weight * scale * labels[j];
                    }
                }
            }
            PieceKind::Affine { coefficients, .. } => {
                for (gi, c) in g.iter_mut().zip(coefficients) {
                    *gi += weight * c;
                }
            }
            PieceKind::BoxGap { x_index, bound_index } => {
                g[*x_index] += weight * sign(point[*x_index]);
                g[*bound_index] -= weight;
            }
            PieceKind::Sum(terms) => {
                for t in terms {
                    t.add_subgradient(point, weight, g);
                }
            }
            PieceKind::Max(terms) => {
                let best = terms.iter().map(|t| t.eval_unchecked(point)).enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
                    if v > acc.1 {
                        (i, v)
                    } else {
                        acc
                    }
                });
                terms[best.0].add_subgradient(point, weight, g);
            }
        }
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("piece scale must be finite and nonnegative, got {scale}")))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn gather(point: &[f64], block: &[usize]) -> Vec<f64> {
    block.iter().map(|&i| point[i]).collect()
}

pub fn eval_piece(piece: &ConvexPiece, point: &[f64]) -> Result<f64> {
    piece.eval(point)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        Self { lower: vec![lower; dim], upper: vec![upper; dim] }
    }

    pub fn clamp(&self, u: &mut [f64]) {
        for ((v, lo), hi) in u.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.iter().zip(&self.lower).zip(&self.upper).all(|((v, lo), hi)| *v >= lo - tol && *v <= hi + tol)
    }
}

/// A decoupled bilevel instance.
#[derive(Clone, Debug)]
pub struct BilevelSpec {
    pub ul_loss: ConvexPiece,
    pub ll_loss: ConvexPiece,
    pub penalties: Vec<ConvexPiece>,
    /// `g_j(x, u) ≤ 0`
    pub ll_constraints: Vec<ConvexPiece>,
    pub x_dim: usize,
    pub u_dim: usize,
    pub u_domain: Option<BoxDomain>,
}

impl BilevelSpec {
    pub fn new(ul_loss: ConvexPiece, ll_loss: ConvexPiece, penalties: Vec<ConvexPiece>, x_dim: usize) -> Result<Self> {
        let spec = Self { ul_loss, ll_loss, penalties, ll_constraints: Vec::new(), x_dim, u_dim: 0, u_domain: None };
        spec.validate()?;
        Ok(spec)
    }

    /// Instance with a UL-level block `u` and LL constraints.
    pub fn general(
        ul_loss: ConvexPiece,
        ll_loss: ConvexPiece,
        penalties: Vec<ConvexPiece>,
        ll_constraints: Vec<ConvexPiece>,
        x_dim: usize,
        u_domain: BoxDomain,
    ) -> Result<Self> {
        let u_dim = u_domain.lower.len();
        let spec = Self { ul_loss, ll_loss, penalties, ll_constraints, x_dim, u_dim, u_domain: Some(u_domain) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_penalties(&self) -> usize {
        self.penalties.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.ll_constraints.len()
    }

    pub fn point_dim(&self) -> usize {
        self.x_dim + self.u_dim
    }

    pub fn is_general(&self) -> bool {
        self.u_dim > 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_dim == 0 {
            return Err(Error::invalid("x_dim must be positive"));
        }
        if self.penalties.is_empty() {
            return Err(Error::invalid("at least one penalty is required"));
        }
        let dim = self.point_dim();
        let all = std::iter::once(&self.ul_loss).chain(std::iter::once(&self.ll_loss)).chain(&self.penalties).chain(&self.ll_constraints);
        for piece in all {
            Error::check_dim("piece dimension", dim, piece.dim)?;
            piece.validate()?;
        }
        for (i, p) in self.penalties.iter().enumerate() {
            if !p.is_nonnegative() {
                return Err(Error::invalid(format!("penalty {i} ({}) is not nonnegative", p.kind_name())));
            }
        }
        match (&self.u_domain, self.u_dim) {
            (None, 0) => Ok(()),
            (Some(d), n) if n > 0 => {
                Error::check_dim("u lower bounds", n, d.lower.len())?;
                Error::check_dim("u upper bounds", n, d.upper.len())?;
                if d.lower.iter().zip(&d.upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::invalid("u box has lower > upper"));
                }
                Ok(())
            }
            _ => Err(Error::invalid("u_domain must be given exactly when u_dim > 0")),
        }
    }

    pub fn joint_point(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("x", self.x_dim, x.len())?;
        Error::check_dim("u", self.u_dim, u.len())?;
        let mut p = Vec::with_capacity(self.point_dim());
        p.extend_from_slice(x);
        p.extend_from_slice(u);
        Ok(p)
    }

    pub fn ul_value(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        Ok(self.ul_loss.eval_unchecked(&self.joint_point(x, u)?))
    }

    pub fn ll_value(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        Ok(self.ll_loss.eval_unchecked(&self.joint_point(x, u)?))
    }

    pub fn constraint_vector(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let p = self.joint_point(x, u)?;
        Ok(self.ll_constraints.iter().map(|g| g.eval_unchecked(&p)).collect())
    }
}

/// `(P_1(x,u), …, P_J(x,u))`
pub fn penalty_vector(spec: &BilevelSpec, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let p = spec.joint_point(x, u)?;
    Ok(spec.penalties.iter().map(|pen| pen.eval_unchecked(&p)).collect())
}

/// Outer iterate `z = (x, u, r)` with the penalty level and the LL data
/// computed at it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub r: Vec<f64>,
    pub alpha: f64,
    pub gamma: Option<Vec<f64>>,
    pub zeta: Option<Vec<f64>>,
    pub xi: Option<Vec<f64>>,
    /// `l(x̃, u)`, the LL optimal value at `(r, u)`.
    pub ll_value: Option<f64>,
}

impl Iterate {
    pub fn new(x: Vec<f64>, u: Vec<f64>, r: Vec<f64>, alpha: f64) -> Result<Self> {
        if r.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("r must be componentwise nonnegative"));
        }
        if !(alpha > 0.0) {
            return Err(Error::invalid("alpha must be positive"));
        }
        Ok(Self { x, u, r, alpha, gamma: None, zeta: None, xi: None, ll_value: None })
    }

    /// Stacked `(x, u, r)`.
    pub fn z(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.x.len() + self.u.len() + self.r.len());
        z.extend_from_slice(&self.x);
        z.extend_from_slice(&self.u);
        z.extend_from_slice(&self.r);
        z
    }

    pub fn check_against(&self, spec: &BilevelSpec) -> Result<()> {
        Error::check_dim("iterate x", spec.x_dim, self.x.len())?;
        Error::check_dim("iterate u", spec.u_dim, self.u.len())?;
        Error::check_dim("iterate r", spec.num_penalties(), self.r.len())?;
        if let Some(g) = &self.gamma {
            Error::check_dim("iterate gamma", spec.num_penalties(), g.len())?;
            if g.iter().any(|v| *v < 0.0) {
                return Err(Error::invalid("gamma must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// The linearized value-function gap
/// `V(x,u,r) = l(x,u) − v^k + ⟨γ^k, r − r^k⟩ − ⟨ξ^k, u − u^k⟩`.
pub fn linearized_gap(spec: &BilevelSpec, x: &[f64], u: &[f64], r: &[f64], prev: &Iterate) -> Result<f64> {
    let gamma = prev.gamma.as_ref().ok_or(Error::MissingState("gamma"))?;
    let v = prev.ll_value.ok_or(Error::MissingState("ll_value"))?;
    Error::check_dim("r", gamma.len(), r.len())?;
    let mut gap = spec.ll_value(x, u)? - v;
    gap += gamma.iter().zip(r.iter().zip(&prev.r)).map(|(g, (a, b))| g * (a - b)).sum::<f64>();
    if spec.u_dim > 0 {
        let xi = prev.xi.as_ref().ok_or(Error::MissingState("xi"))?;
        gap -= xi.iter().zip(u.iter().zip(&prev.u)).map(|(g, (a, b))| g * (a - b)).sum::<f64>();
    }
    Ok(gap)
}

/// `t = max{0, V(z), P_i − r_i, g_j}` at the candidate `next`, linearized at `prev`.
pub fn feasibility_gap(spec: &BilevelSpec, next: &Iterate, prev: &Iterate) -> Result<f64> {
    let mut t = linearized_gap(spec, &next.x, &next.u, &next.r, prev)?.max(0.0);
    let pen = penalty_vector(spec, &next.x, &next.u)?;
    for (p, r) in pen.iter().zip(&next.r) {
        t = t.max(p - r);
    }
    for g in spec.constraint_vector(&next.x, &next.u)? {
        t = t.max(g);
    }
    Ok(t)
}
