//! Epigraph and slack reformulations of [`ConvexPiece`]s into cone programs.
//!
//! Rows are built as affine expressions `s = c + Σ a_j z_j` that must lie in
//! a cone; in the solver's `b − A z ∈ K` form this is `b = c`, `A = −a`.
//! A constraint `f(point) ≤ E` returns a [`DualTag`] whose value is the
//! multiplier of that constraint: the sum over its rows of
//! `(coefficient of E in the row) · y_row`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::kernel::{Cone, ConeProgram, CscMatrix, DualTag, RowMap};
use crate::problem::{BilevelSpec, ConvexPiece, Iterate, PieceKind};

/// `constant + Σ coef · z[col]`
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(col: usize) -> Self {
        Self { terms: vec![(col, 1.0)], constant: 0.0 }
    }

    pub fn add_term(&mut self, col: usize, coef: f64) -> &mut Self {
        self.terms.push((col, coef));
        self
    }

    pub fn add(&mut self, other: &AffExpr, factor: f64) -> &mut Self {
        self.terms.extend(other.terms.iter().map(|&(c, v)| (c, v * factor)));
        self.constant += factor * other.constant;
        self
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { terms: self.terms.iter().map(|&(c, v)| (c, v * factor)).collect(), constant: self.constant * factor }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(c, v)| v * z[c]).sum::<f64>()
    }
}

/// How a coordinate of the joint point `(x, u)` enters a program.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coord {
    Var(usize),
    Const(f64),
}

impl Coord {
    fn expr(self) -> AffExpr {
        match self {
            Coord::Var(c) => AffExpr::var(c),
            Coord::Const(v) => AffExpr::constant(v),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum RowRef {
    NonNeg(usize),
    Soc(usize, usize),
}

type Tag = Vec<(RowRef, f64)>;

/// Accumulates variables, objective terms and cone rows.
#[derive(Default)]
pub struct ProgramBuilder {
    n: usize,
    p: Vec<(usize, usize, f64)>,
    q: Vec<f64>,
    offset: f64,
    zero: Vec<AffExpr>,
    nonneg: Vec<AffExpr>,
    soc: Vec<Vec<AffExpr>>,
    tags: Vec<(String, Tag)>,
    groups: Vec<String>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vars(&mut self, count: usize) -> Range<usize> {
        let start = self.n;
        self.n += count;
        self.q.resize(self.n, 0.0);
        start..self.n
    }

    pub fn add_var(&mut self) -> usize {
        self.add_vars(1).start
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Adds `½ weight · z_i z_j` (`i ≤ j`, symmetric counterpart implied).
    pub fn add_quadratic(&mut self, i: usize, j: usize, weight: f64) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.p.push((a, b, weight));
    }

    pub fn add_linear(&mut self, col: usize, coef: f64) {
        self.q[col] += coef;
    }

    pub fn add_offset(&mut self, v: f64) {
        self.offset += v;
    }

    pub fn add_linear_expr(&mut self, e: &AffExpr, weight: f64) {
        for &(c, v) in &e.terms {
            self.q[c] += weight * v;
        }
        self.offset += weight * e.constant;
    }

    /// `e = 0`
    pub fn push_zero(&mut self, e: AffExpr) {
        self.zero.push(e);
    }

    /// `e ≥ 0`
    fn push_nonneg(&mut self, e: AffExpr) -> RowRef {
        self.nonneg.push(e);
        RowRef::NonNeg(self.nonneg.len() - 1)
    }

    pub fn push_nonneg_row(&mut self, e: AffExpr) {
        self.push_nonneg(e);
    }

    /// `‖rows[1..]‖ ≤ rows[0]`
    fn push_soc(&mut self, rows: Vec<AffExpr>) -> usize {
        self.soc.push(rows);
        self.soc.len() - 1
    }

    fn tag(&mut self, group: &str, tag: Tag) {
        self.tags.push((group.to_string(), tag));
    }

    /// Makes a dual group exist even when it receives no tags.
    pub fn declare_group(&mut self, group: &str) {
        self.groups.push(group.to_string());
    }

    /// Encodes `piece(point) ≤ e` and returns the tag of its multiplier.
    fn lower_le(&mut self, piece: &ConvexPiece, pm: &[Coord], e: AffExpr) -> Result<Tag> {
        match &piece.kind {
            PieceKind::Affine { coefficients, constant } => {
                let mut row = e;
                row.constant -= constant;
                for (c, &coef) in pm.iter().zip(coefficients) {
                    row.add(&c.expr(), -coef);
                }
                Ok(vec![(self.push_nonneg(row), 1.0)])
            }
            PieceKind::L1 { block } => {
                // t_j ≥ ±x_j and Σ t_j + Σ |constants| ≤ e
                let mut row = e;
                for &i in block {
                    match pm[i] {
                        Coord::Const(v) => row.constant -= v.abs(),
                        Coord::Var(col) => {
                            let t = self.add_var();
                            let mut up = AffExpr::var(t);
                            up.add_term(col, -1.0);
                            let mut down = AffExpr::var(t);
                            down.add_term(col, 1.0);
                            self.push_nonneg(up);
                            self.push_nonneg(down);
                            row.add_term(t, -1.0);
                        }
                    }
                }
                Ok(vec![(self.push_nonneg(row), 1.0)])
            }
            PieceKind::L2 { block } => {
                let mut rows = vec![e];
                rows.extend(block.iter().map(|&i| pm[i].expr()));
                let k = self.push_soc(rows);
                Ok(vec![(RowRef::Soc(k, 0), 1.0)])
            }
            PieceKind::SquaredL2 { block, scale } => {
                let exprs: Vec<AffExpr> = block.iter().map(|&i| pm[i].expr()).collect();
                Ok(self.squared_le(exprs, *scale, e))
            }
            PieceKind::LeastSquares { design, target, block, scale } => {
                if *scale == 0.0 {
                    return Ok(vec![(self.push_nonneg(e), 1.0)]);
                }
                let res = self.residual_vars(design, target, block, pm);
                let exprs = res.map(AffExpr::var).collect();
                Ok(self.squared_le(exprs, *scale, e))
            }
            PieceKind::Hinge { design, labels, weights, offset, scale } => {
                let mut row = e;
                if *scale > 0.0 {
                    for slack in self.hinge_slacks(design, labels, weights, *offset, pm) {
                        row.add_term(slack, -scale);
                    }
                }
                Ok(vec![(self.push_nonneg(row), 1.0)])
            }
            PieceKind::BoxGap { x_index, bound_index } => {
                let xi = pm[*x_index].expr();
                let bound = pm[*bound_index].expr();
                let mut tag = Vec::new();
                for sign in [1.0, -1.0] {
                    let mut row = e.clone();
                    row.add(&bound, 1.0).add(&xi, -sign);
                    tag.push((self.push_nonneg(row), 1.0));
                }
                Ok(tag)
            }
            PieceKind::Sum(terms) => {
                if terms.len() == 1 {
                    return self.lower_le(&terms[0], pm, e);
                }
                let mut row = e;
                for term in terms {
                    let tau = self.add_var();
                    self.lower_le(term, pm, AffExpr::var(tau))?;
                    row.add_term(tau, -1.0);
                }
                Ok(vec![(self.push_nonneg(row), 1.0)])
            }
            PieceKind::Max(terms) => {
                let mut tag = Vec::new();
                for term in terms {
                    tag.extend(self.lower_le(term, pm, e.clone())?);
                }
                Ok(tag)
            }
        }
    }

    /// `scale · Σ exprs² ≤ e` via the rotated-cone identity
    /// `‖x‖² ≤ w ⇔ ‖(x, (w−1)/2)‖ ≤ (w+1)/2` with `w = e / scale`.
    fn squared_le(&mut self, exprs: Vec<AffExpr>, scale: f64, e: AffExpr) -> Tag {
        if scale == 0.0 {
            return vec![(self.push_nonneg(e), 1.0)];
        }
        let w = e.scaled(1.0 / scale);
        let mut head = w.scaled(0.5);
        head.constant += 0.5;
        let mut second = w.scaled(0.5);
        second.constant -= 0.5;
        let mut rows = vec![head, second];
        rows.extend(exprs);
        let k = self.push_soc(rows);
        let c = 0.5 / scale;
        vec![(RowRef::Soc(k, 0), c), (RowRef::Soc(k, 1), c)]
    }

    /// Residual variables `e = A x_B − b` tied by equality rows.
    fn residual_vars(&mut self, design: &crate::matrix::Matrix, target: &[f64], block: &[usize], pm: &[Coord]) -> Range<usize> {
        let res = self.add_vars(design.rows());
        for (i, col) in res.clone().enumerate() {
            let mut row = AffExpr::var(col);
            row.constant += target[i];
            for (k, &j) in block.iter().enumerate() {
                let a = design.get(i, k);
                if a != 0.0 {
                    row.add(&pm[j].expr(), -a);
                }
            }
            self.push_zero(row);
        }
        res
    }

    /// Slacks `s_j ≥ 0`, `s_j ≥ 1 − y_j (a_jᵀ w − c)`.
    fn hinge_slacks(
        &mut self,
        design: &crate::matrix::Matrix,
        labels: &[f64],
        weights: &[usize],
        offset: usize,
        pm: &[Coord],
    ) -> Range<usize> {
        let slacks = self.add_vars(design.rows());
        for (j, s) in slacks.clone().enumerate() {
            self.push_nonneg(AffExpr::var(s));
            let mut row = AffExpr::var(s);
            row.constant -= 1.0;
            for (k, &wi) in weights.iter().enumerate() {
                let a = design.get(j, k);
                if a != 0.0 {
                    row.add(&pm[wi].expr(), labels[j] * a);
                }
            }
            row.add(&pm[offset].expr(), -labels[j]);
            self.push_nonneg(row);
        }
        slacks
    }

    /// Adds `weight · piece(point)` to the objective.
    pub fn lower_objective(&mut self, piece: &ConvexPiece, pm: &[Coord], weight: f64) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        if weight < 0.0 {
            return Err(Error::invalid("objective pieces need a nonnegative weight"));
        }
        match &piece.kind {
            PieceKind::Affine { coefficients, constant } => {
                self.offset += weight * constant;
                for (c, &coef) in pm.iter().zip(coefficients) {
                    self.add_linear_expr(&c.expr(), weight * coef);
                }
            }
            PieceKind::SquaredL2 { block, scale } => {
                for &i in block {
                    match pm[i] {
                        Coord::Var(col) => self.add_quadratic(col, col, 2.0 * weight * scale),
                        Coord::Const(v) => self.offset += weight * scale * v * v,
                    }
                }
            }
            PieceKind::LeastSquares { design, target, block, scale } => {
                if *scale > 0.0 {
                    for col in self.residual_vars(design, target, block, pm) {
                        self.add_quadratic(col, col, 2.0 * weight * scale);
                    }
                } else {
                    // scale 0 contributes nothing
                }
            }
            PieceKind::L1 { block } => {
                for &i in block {
                    match pm[i] {
                        Coord::Const(v) => self.offset += weight * v.abs(),
                        Coord::Var(col) => {
                            let t = self.add_var();
                            let mut up = AffExpr::var(t);
                            up.add_term(col, -1.0);
                            let mut down = AffExpr::var(t);
                            down.add_term(col, 1.0);
                            self.push_nonneg(up);
                            self.push_nonneg(down);
                            self.q[t] += weight;
                        }
                    }
                }
            }
            PieceKind::Hinge { design, labels, weights, offset, scale } => {
                if *scale > 0.0 {
                    for s in self.hinge_slacks(design, labels, weights, *offset, pm) {
                        self.q[s] += weight * scale;
                    }
                }
            }
            PieceKind::Sum(terms) => {
                for t in terms {
                    self.lower_objective(t, pm, weight)?;
                }
            }
            PieceKind::L2 { .. } | PieceKind::BoxGap { .. } | PieceKind::Max(_) => {
                let tau = self.add_var();
                self.lower_le(piece, pm, AffExpr::var(tau))?;
                self.q[tau] += weight;
            }
        }
        Ok(())
    }

    /// Encodes `piece ≤ e` and records its multiplier under `group`.
    pub fn constrain(&mut self, piece: &ConvexPiece, pm: &[Coord], e: AffExpr, group: Option<&str>) -> Result<()> {
        let tag = self.lower_le(piece, pm, e)?;
        if let Some(g) = group {
            self.tag(g, tag);
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(ConeProgram, RowMap, f64)> {
        let n = self.n;
        let nz = self.zero.len();
        let nn = self.nonneg.len();
        let mut soc_start = Vec::with_capacity(self.soc.len());
        let mut m = nz + nn;
        for block in &self.soc {
            soc_start.push(m);
            m += block.len();
        }
        let mut a = Vec::new();
        let mut b = Vec::with_capacity(m);
        let rows = self.zero.iter().chain(&self.nonneg).chain(self.soc.iter().flatten());
        for (r, e) in rows.enumerate() {
            b.push(e.constant);
            for &(c, v) in &e.terms {
                a.push((r, c, -v));
            }
        }
        let mut cones = Vec::new();
        if nz > 0 {
            cones.push(Cone::Zero(nz));
        }
        if nn > 0 {
            cones.push(Cone::NonNeg(nn));
        }
        cones.extend(self.soc.iter().map(|blk| Cone::Soc(blk.len())));

        let mut map = RowMap::default();
        for g in &self.groups {
            map.ensure(g);
        }
        for (group, tag) in self.tags {
            let rows = tag
                .into_iter()
                .map(|(rr, c)| {
                    let idx = match rr {
                        RowRef::NonNeg(i) => nz + i,
                        RowRef::Soc(k, i) => soc_start[k] + i,
                    };
                    (idx, c)
                })
                .collect();
            map.push(&group, DualTag { rows });
        }
        let program = ConeProgram::new(CscMatrix::from_triplets(n, n, &self.p), self.q, CscMatrix::from_triplets(m, n, &a), b, cones)?;
        Ok((program, map, self.offset))
    }
}

/// Column ranges of the outer variables inside a lowered program.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub x: Range<usize>,
    pub u: Range<usize>,
    pub r: Range<usize>,
    /// Epigraph variable of the penalty term in a subproblem.
    pub s: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct LoweredProgram {
    pub program: ConeProgram,
    pub rows: RowMap,
    /// Constant dropped from the objective; the lowered optimal value plus
    /// `offset` is the value of the original problem.
    pub offset: f64,
    pub layout: Layout,
}

impl LoweredProgram {
    pub fn value(&self, z: &[f64]) -> f64 {
        self.program.objective(z) + self.offset
    }
}

fn check_levels(r: &[f64]) -> Result<()> {
    if r.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid(format!("levels must be nonnegative, got {r:?}")));
    }
    Ok(())
}

/// `min l(x,u) s.t. P_i(x,u) ≤ r_i, g_j(x,u) ≤ 0` at fixed `(r, u)`.
/// Multipliers are tagged `"gamma"` (penalty rows) and `"zeta"` (constraints).
pub fn lower_lower_level(spec: &BilevelSpec, r: &[f64], u: &[f64]) -> Result<LoweredProgram> {
    Error::check_dim("levels", spec.num_penalties(), r.len())?;
    Error::check_dim("u", spec.u_dim, u.len())?;
    check_levels(r)?;
    let mut b = ProgramBuilder::new();
    let x = b.add_vars(spec.x_dim);
    let pm = point_map(x.clone(), None, u);
    b.declare_group("gamma");
    b.declare_group("zeta");
    b.lower_objective(&spec.ll_loss, &pm, 1.0)?;
    for (pen, &ri) in spec.penalties.iter().zip(r) {
        b.constrain(pen, &pm, AffExpr::constant(ri), Some("gamma"))?;
    }
    for g in &spec.ll_constraints {
        b.constrain(g, &pm, AffExpr::constant(0.0), Some("zeta"))?;
    }
    let (program, rows, offset) = b.finish()?;
    Ok(LoweredProgram { program, rows, offset, layout: Layout { x, u: 0..0, r: 0..0, s: None } })
}

/// `min l(x,u) + Σ λ_i P_i(x,u) s.t. g_j(x,u) ≤ 0` at fixed `u`.
pub fn lower_penalized(spec: &BilevelSpec, lambda: &[f64], u: &[f64]) -> Result<LoweredProgram> {
    Error::check_dim("penalty weights", spec.num_penalties(), lambda.len())?;
    Error::check_dim("u", spec.u_dim, u.len())?;
    check_levels(lambda)?;
    let mut b = ProgramBuilder::new();
    let x = b.add_vars(spec.x_dim);
    let pm = point_map(x.clone(), None, u);
    b.declare_group("zeta");
    b.lower_objective(&spec.ll_loss, &pm, 1.0)?;
    for (pen, &w) in spec.penalties.iter().zip(lambda) {
        b.lower_objective(pen, &pm, w)?;
    }
    for g in &spec.ll_constraints {
        b.constrain(g, &pm, AffExpr::constant(0.0), Some("zeta"))?;
    }
    let (program, rows, offset) = b.finish()?;
    Ok(LoweredProgram { program, rows, offset, layout: Layout { x, u: 0..0, r: 0..0, s: None } })
}

/// The proximal penalty subproblem around `prev`:
///
/// ```text
/// min L(x,u) + ρ/2 ‖z − z^k‖² + α s
/// s.t. s ≥ 0,  V(z) ≤ s,  P_i(x,u) − r_i ≤ s,  g_j(x,u) ≤ s,  r ≥ 0,  u ∈ box
/// ```
///
/// with `z = (x, u, r)` and `V` the linearized value-function gap.
/// Multipliers are tagged `"eta"` (the `V` row), `"lambda"` (penalty rows)
/// and `"mu"` (constraint rows).
pub fn lower_subproblem(spec: &BilevelSpec, prev: &Iterate, alpha: f64, rho: f64) -> Result<LoweredProgram> {
    prev.check_against(spec)?;
    let gamma = prev.gamma.as_ref().ok_or(Error::MissingState("gamma"))?;
    let ll_value = prev.ll_value.ok_or(Error::MissingState("ll_value"))?;
    let xi = if spec.u_dim > 0 {
        let xi = prev.xi.as_ref().ok_or(Error::MissingState("xi"))?;
        Error::check_dim("xi", spec.u_dim, xi.len())?;
        Some(xi)
    } else {
        None
    };
    if !(alpha >= 0.0 && rho > 0.0) {
        return Err(Error::invalid("subproblem needs alpha ≥ 0 and rho > 0"));
    }

    let mut b = ProgramBuilder::new();
    let x = b.add_vars(spec.x_dim);
    let u = b.add_vars(spec.u_dim);
    let r = b.add_vars(spec.num_penalties());
    let s = b.add_var();
    let pm = point_map(x.clone(), Some(u.clone()), &[]);
    b.declare_group("eta");
    b.declare_group("lambda");
    b.declare_group("mu");

    b.lower_objective(&spec.ul_loss, &pm, 1.0)?;
    let zk = prev.z();
    for (col, &zc) in (x.start..r.end).zip(&zk) {
        b.add_quadratic(col, col, rho);
        b.add_linear(col, -rho * zc);
        b.add_offset(0.5 * rho * zc * zc);
    }
    b.add_linear(s, alpha);

    b.push_nonneg_row(AffExpr::var(s));
    for col in r.clone() {
        b.push_nonneg_row(AffExpr::var(col));
    }
    if let Some(dom) = &spec.u_domain {
        for (k, col) in u.clone().enumerate() {
            let mut lo = AffExpr::var(col);
            lo.constant = -dom.lower[k];
            b.push_nonneg_row(lo);
            let mut hi = AffExpr::constant(dom.upper[k]);
            hi.add_term(col, -1.0);
            b.push_nonneg_row(hi);
        }
    }

    // l(x,u) ≤ s + v^k − ⟨γ, r − r^k⟩ + ⟨ξ, u − u^k⟩
    let mut bound = AffExpr::var(s);
    bound.constant += ll_value;
    for (i, col) in r.clone().enumerate() {
        bound.add_term(col, -gamma[i]);
        bound.constant += gamma[i] * prev.r[i];
    }
    if let Some(xi) = xi {
        for (k, col) in u.clone().enumerate() {
            bound.add_term(col, xi[k]);
            bound.constant -= xi[k] * prev.u[k];
        }
    }
    b.constrain(&spec.ll_loss, &pm, bound, Some("eta"))?;

    for (i, pen) in spec.penalties.iter().enumerate() {
        let mut e = AffExpr::var(s);
        e.add_term(r.start + i, 1.0);
        b.constrain(pen, &pm, e, Some("lambda"))?;
    }
    for g in &spec.ll_constraints {
        b.constrain(g, &pm, AffExpr::var(s), Some("mu"))?;
    }
    let (program, rows, offset) = b.finish()?;
    Ok(LoweredProgram { program, rows, offset, layout: Layout { x, u, r, s: Some(s) } })
}

fn point_map(x: Range<usize>, u_vars: Option<Range<usize>>, u_values: &[f64]) -> Vec<Coord> {
    let mut pm: Vec<Coord> = x.map(Coord::Var).collect();
    match u_vars {
        Some(u) => pm.extend(u.map(Coord::Var)),
        None => pm.extend(u_values.iter().map(|&v| Coord::Const(v))),
    }
    pm
}
