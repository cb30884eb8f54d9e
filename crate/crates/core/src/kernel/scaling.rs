//! Ruiz-style diagonal equilibration of a cone program.
//!
//! The scaled problem is `min c(½ x̄ᵀ D P D x̄ + qᵀ D x̄)` subject to
//! `E A D x̄ ∈ E(b − K)`. Row scaling is uniform within each second-order cone
//! block so that `E K = K`.

use super::cones::Cone;
use super::sparse::CscMatrix;

const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;

#[derive(Clone, Debug)]
pub struct Scaling {
    pub d: Vec<f64>,
    pub dinv: Vec<f64>,
    pub e: Vec<f64>,
    pub einv: Vec<f64>,
    pub c: f64,
    pub cinv: f64,
}

impl Scaling {
    pub fn identity(n: usize, m: usize) -> Self {
        Self { d: vec![1.0; n], dinv: vec![1.0; n], e: vec![1.0; m], einv: vec![1.0; m], c: 1.0, cinv: 1.0 }
    }
}

fn inv_sqrt_clamped(norm: f64) -> f64 {
    if norm < MIN_SCALING {
        1.0
    } else {
        1.0 / norm.min(MAX_SCALING).sqrt()
    }
}

/// Equilibrates `p` (upper triangle) and `a` in place and returns the
/// accumulated scaling.
pub fn equilibrate(p: &mut CscMatrix, a: &mut CscMatrix, q: &[f64], cones: &[Cone], iters: usize) -> Scaling {
    let (n, m) = (a.ncols, a.nrows);
    let mut s = Scaling::identity(n, m);
    if iters == 0 {
        return s;
    }
    let mut dt = vec![1.0; n];
    let mut et = vec![1.0; m];
    for _ in 0..iters {
        let pn = p.sym_upper_col_norms();
        let an = a.col_norms();
        for j in 0..n {
            dt[j] = inv_sqrt_clamped(pn[j].max(an[j]));
        }
        let rn = a.row_norms();
        let mut offset = 0;
        for cone in cones {
            let dim = cone.dim();
            match cone {
                Cone::Soc(_) => {
                    let block_max = rn[offset..offset + dim].iter().fold(0.0f64, |acc, v| acc.max(*v));
                    let v = inv_sqrt_clamped(block_max);
                    et[offset..offset + dim].iter_mut().for_each(|x| *x = v);
                }
                _ => {
                    for i in offset..offset + dim {
                        et[i] = inv_sqrt_clamped(rn[i]);
                    }
                }
            }
            offset += dim;
        }
        p.scale(&dt, &dt);
        a.scale(&et, &dt);
        for j in 0..n {
            s.d[j] *= dt[j];
        }
        for i in 0..m {
            s.e[i] *= et[i];
        }
    }

    // One cost scaling pass keeps the objective gradient of order one.
    let pn = p.sym_upper_col_norms();
    let mean_col = if n > 0 { pn.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let q_norm = q.iter().zip(&s.d).fold(0.0f64, |acc, (qj, dj)| acc.max((qj * dj).abs()));
    let cost = mean_col.max(q_norm);
    if cost >= MIN_SCALING {
        let ct = 1.0 / cost.min(MAX_SCALING);
        p.nzval.iter_mut().for_each(|v| *v *= ct);
        s.c = ct;
    }
    s.dinv = s.d.iter().map(|v| 1.0 / v).collect();
    s.einv = s.e.iter().map(|v| 1.0 / v).collect();
    s.cinv = 1.0 / s.c;
    s
}
