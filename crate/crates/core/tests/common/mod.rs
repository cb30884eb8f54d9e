//! Dense helpers shared by the integration tests. Kept independent of the
//! library so that reference values do not reuse the code under test.

#![allow(dead_code)]

/// Solves `m x = rhs` by Gaussian elimination with partial pivoting.
/// Returns `None` when the matrix is numerically singular.
pub fn dense_solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for k in col..n {
                    m[row][k] -= f * m[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (rhs[i] - s) / m[i][i];
    }
    Some(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Minimizes a 1-D function on `[lo, hi]` by scanning with step `h`.
pub fn grid_min_1d(lo: f64, hi: f64, h: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let steps = ((hi - lo) / h).round() as usize;
    (0..=steps)
        .map(|k| {
            let x = lo + k as f64 * h;
            (x, f(x))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

/// Random dense QP `min ½zᵀHz + qᵀz` s.t. `lo ≤ z ≤ hi`, `G z ≤ h`.
#[derive(Clone, Debug)]
pub struct BoxQp {
    pub h_mat: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

impl BoxQp {
    pub fn random(rng: &mut impl rand::Rng, n: usize, general_rows: usize) -> Self {
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut h_mat = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                h_mat[i][j] = (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
            }
        }
        let q = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lo = (0..n).map(|_| rng.random_range(-1.0..0.0)).collect();
        let hi = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let g = (0..general_rows).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let h = (0..general_rows).map(|_| rng.random_range(0.0..0.5)).collect();
        Self { h_mat, q, lo, hi, g, h }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let n = self.n();
        let quad: f64 = (0..n).map(|i| z[i] * dot(&self.h_mat[i], z)).sum();
        0.5 * quad + dot(&self.q, z)
    }

    /// All rows as `(a, b)` with `aᵀz ≤ b`: upper bounds, lower bounds, then general rows.
    pub fn rows(&self) -> Vec<(Vec<f64>, f64)> {
        let n = self.n();
        let mut rows = Vec::new();
        for j in 0..n {
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            rows.push((a, self.hi[j]));
        }
        for j in 0..n {
            let mut a = vec![0.0; n];
            a[j] = -1.0;
            rows.push((a, -self.lo[j]));
        }
        for (g, h) in self.g.iter().zip(&self.h) {
            rows.push((g.clone(), *h));
        }
        rows
    }

    /// Exhaustive active-set enumeration. Each variable is free, at its lower
    /// bound or at its upper bound; each general row is active or not. The
    /// KKT point with feasible primal and nonnegative multipliers is optimal.
    pub fn active_set_solution(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let rows = self.rows();
        let k = self.g.len();
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let combos = 3usize.pow(n as u32) * (1 << k);
        for code in 0..combos {
            let mut c = code;
            let mut active = Vec::new();
            for j in 0..n {
                match c % 3 {
                    1 => active.push(j),
                    2 => active.push(n + j),
                    _ => {}
                }
                c /= 3;
            }
            for r in 0..k {
                if c & (1 << r) != 0 {
                    active.push(2 * n + r);
                }
            }
            if active.len() > n {
                continue;
            }
            let dim = n + active.len();
            let mut mat = vec![vec![0.0; dim]; dim];
            let mut rhs = vec![0.0; dim];
            for i in 0..n {
                mat[i][..n].copy_from_slice(&self.h_mat[i]);
                rhs[i] = -self.q[i];
            }
            for (w, &row) in active.iter().enumerate() {
                for i in 0..n {
                    mat[i][n + w] = rows[row].0[i];
                    mat[n + w][i] = rows[row].0[i];
                }
                rhs[n + w] = rows[row].1;
            }
            let Some(sol) = dense_solve(mat, rhs) else { continue };
            let z = sol[..n].to_vec();
            if sol[n..].iter().any(|&mu| mu < -1e-10) {
                continue;
            }
            if rows.iter().any(|(a, b)| dot(a, &z) > b + 1e-10) {
                continue;
            }
            let mut y = vec![0.0; rows.len()];
            for (w, &row) in active.iter().enumerate() {
                y[row] = sol[n + w];
            }
            let f = self.objective(&z);
            if best.as_ref().is_none_or(|b| f < b.0) {
                best = Some((f, z, y));
            }
        }
        let (_, z, y) = best.expect("a strictly convex feasible QP has a KKT point");
        (z, y)
    }

    /// Projected gradient on the box (general rows ignored), run until the
    /// step is below 1e-13.
    pub fn projected_gradient(&self) -> Vec<f64> {
        let n = self.n();
        let lip: f64 = (0..n).map(|i| self.h_mat[i].iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let mut z = vec![0.0; n];
        for _ in 0..1_000_000 {
            let mut change = 0.0f64;
            for i in 0..n {
                let grad = dot(&self.h_mat[i], &z) + self.q[i];
                let next = (z[i] - grad / lip).clamp(self.lo[i], self.hi[i]);
                change = change.max((next - z[i]).abs());
                z[i] = next;
            }
            if change < 1e-13 {
                break;
            }
        }
        z
    }

    pub fn to_program(&self, with_general: bool) -> vfidca::kernel::ConeProgram {
        use vfidca::kernel::{Cone, ConeProgram, CscMatrix};
        let n = self.n();
        let mut p = Vec::new();
        for j in 0..n {
            for i in 0..=j {
                p.push((i, j, self.h_mat[i][j]));
            }
        }
        let mut rows = self.rows();
        if !with_general {
            rows.truncate(2 * n);
        }
        let mut a = Vec::new();
        for (r, (coef, _)) in rows.iter().enumerate() {
            for (j, &v) in coef.iter().enumerate() {
                if v != 0.0 {
                    a.push((r, j, v));
                }
            }
        }
        let m = rows.len();
        ConeProgram::new(
            CscMatrix::from_triplets(n, n, &p),
            self.q.clone(),
            CscMatrix::from_triplets(m, n, &a),
            rows.iter().map(|r| r.1).collect(),
            vec![Cone::NonNeg(m)],
        )
        .unwrap()
    }
}
