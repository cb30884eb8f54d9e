//! Cone blocks and their Euclidean projections.

use serde::{Deserialize, Serialize};

/// One block of rows of a cone program. Rows of a block are consecutive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    /// `{0}^dim`: equality rows.
    Zero(usize),
    /// The nonnegative orthant.
    NonNeg(usize),
    /// `{(t, x) : ‖x‖₂ ≤ t}` with `t` the first row of the block.
    Soc(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::NonNeg(d) | Cone::Soc(d) => d,
        }
    }

    /// Projects `v` onto the cone in place.
    pub fn project_in_place(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim());
        match self {
            Cone::Zero(_) => v.iter_mut().for_each(|x| *x = 0.0),
            Cone::NonNeg(_) => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            Cone::Soc(_) => project_soc(v),
        }
    }

    /// Projects `v` onto the dual cone in place. Zero's dual is the whole
    /// space; the other two cones are self-dual.
    pub fn project_dual_in_place(&self, v: &mut [f64]) {
        match self {
            Cone::Zero(_) => {}
            _ => self.project_in_place(v),
        }
    }

    /// Distance from `v` to the cone (Euclidean).
    pub fn distance(&self, v: &[f64]) -> f64 {
        let mut p = v.to_vec();
        self.project_in_place(&mut p);
        p.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    pub fn dual_distance(&self, v: &[f64]) -> f64 {
        let mut p = v.to_vec();
        self.project_dual_in_place(&mut p);
        p.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

/// Euclidean projection of `v` onto the cone `block`.
pub fn project_cone(block: Cone, v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    block.project_in_place(&mut out);
    out
}

fn project_soc(v: &mut [f64]) {
    let t = v[0];
    let norm = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= t {
        return;
    }
    if norm <= -t {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let scale = 0.5 * (t + norm);
    v[0] = scale;
    let factor = scale / norm;
    v[1..].iter_mut().for_each(|x| *x *= factor);
}
