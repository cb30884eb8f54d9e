//! Type-II Anderson extrapolation for a fixed-point map `w ↦ T(w)`.

use std::collections::VecDeque;

pub(crate) struct Anderson {
    memory: usize,
    /// Differences of successive inputs and of successive residuals.
    dw: VecDeque<Vec<f64>>,
    dg: VecDeque<Vec<f64>>,
    last_w: Option<Vec<f64>>,
    last_g: Option<Vec<f64>>,
    /// Inner products of the stored residual differences.
    gram: VecDeque<VecDeque<f64>>,
}

impl Anderson {
    pub(crate) fn new(memory: usize) -> Self {
        Self { memory, dw: VecDeque::new(), dg: VecDeque::new(), last_w: None, last_g: None, gram: VecDeque::new() }
    }

    pub(crate) fn reset(&mut self) {
        self.dw.clear();
        self.dg.clear();
        self.last_w = None;
        self.last_g = None;
        self.gram.clear();
    }

    /// Records the pair `(w, T(w))` and returns the extrapolated point, or
    /// `None` while the history is empty or the least-squares system is
    /// degenerate.
    pub(crate) fn push(&mut self, w: &[f64], tw: &[f64]) -> Option<Vec<f64>> {
        if self.memory == 0 {
            return None;
        }
        let g: Vec<f64> = tw.iter().zip(w).map(|(a, b)| a - b).collect();
        if let (Some(lw), Some(lg)) = (&self.last_w, &self.last_g) {
            if self.dw.len() == self.memory {
                self.dw.pop_front();
                self.dg.pop_front();
                self.gram.pop_front();
                for row in &mut self.gram {
                    row.pop_front();
                }
            }
            let new_dg: Vec<f64> = g.iter().zip(lg).map(|(a, b)| a - b).collect();
            let mut row: VecDeque<f64> = self.dg.iter().map(|d| dot(d, &new_dg)).collect();
            for (r, v) in self.gram.iter_mut().zip(&row) {
                r.push_back(*v);
            }
            row.push_back(dot(&new_dg, &new_dg));
            self.gram.push_back(row);
            self.dw.push_back(w.iter().zip(lw).map(|(a, b)| a - b).collect());
            self.dg.push_back(new_dg);
        }
        self.last_w = Some(w.to_vec());
        self.last_g = Some(g);
        let k = self.dg.len();
        if k == 0 {
            return None;
        }
        let g = self.last_g.as_ref().unwrap();

        // (FᵀF + λI) γ = Fᵀ g
        let mut gram = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for a in 0..k {
            for b in 0..k {
                gram[a * k + b] = self.gram[a][b];
            }
            rhs[a] = dot(&self.dg[a], g);
        }
        let trace: f64 = (0..k).map(|a| gram[a * k + a]).sum();
        if !(trace > 0.0) || !trace.is_finite() {
            self.reset();
            return None;
        }
        for a in 0..k {
            gram[a * k + a] += 1e-10 * trace;
        }
        let gamma = cholesky_solve(&mut gram, &mut rhs, k)?;

        let mut out = tw.to_vec();
        for (c, coef) in gamma.iter().enumerate() {
            for ((o, dw), dg) in out.iter_mut().zip(&self.dw[c]).zip(&self.dg[c]) {
                *o -= coef * (dw + dg);
            }
        }
        out.iter().all(|v| v.is_finite()).then_some(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn cholesky_solve(a: &mut [f64], b: &mut [f64], k: usize) -> Option<Vec<f64>> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut v = a[i * k + j];
            for p in 0..j {
                v -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = v / d;
        }
    }
    for i in 0..k {
        let mut v = b[i];
        for p in 0..i {
            v -= a[i * k + p] * b[p];
        }
        b[i] = v / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut v = b[i];
        for p in i + 1..k {
            v -= a[p * k + i] * b[p];
        }
        b[i] = v / a[i * k + i];
    }
    Some(b.to_vec())
}
