//! Sparse LDLᵀ factorization for quasi-definite matrices.
//!
//! The numeric phase follows the up-looking elimination-tree scheme used by
//! QDLDL. Quasi-definite matrices admit an LDLᵀ factorization for every
//! symmetric permutation, so the ordering is chosen purely to limit fill.

use super::sparse::CscMatrix;

const NONE: usize = usize::MAX;

/// Orderings above this size fall back to the natural order; the bitset
/// elimination graph needs `n²/8` bytes.
const MAX_ORDERED_DIM: usize = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub enum LdlError {
    NotUpperTriangular,
    ZeroPivot(usize),
}

/// Minimum-degree ordering on the pattern of a symmetric matrix given by its
/// upper triangle. Returns `perm` with `perm[k]` = original index eliminated at
/// step `k`.
pub fn minimum_degree(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols;
    if n > MAX_ORDERED_DIM {
        return (0..n).collect();
    }
    let words = n.div_ceil(64);
    let mut adj = vec![0u64; n * words];
    let set = |adj: &mut [u64], a: usize, b: usize| adj[a * words + b / 64] |= 1u64 << (b % 64);
    for j in 0..n {
        for k in upper.colptr[j]..upper.colptr[j + 1] {
            let i = upper.rowval[k];
            if i != j {
                set(&mut adj, i, j);
                set(&mut adj, j, i);
            }
        }
    }
    let popcount = |adj: &[u64], a: usize| -> usize { adj[a * words..(a + 1) * words].iter().map(|w| w.count_ones() as usize).sum() };
    let mut degree: Vec<usize> = (0..n).map(|a| popcount(&adj, a)).collect();
    let mut alive = vec![true; n];
    let mut perm = Vec::with_capacity(n);
    let mut neighbours = Vec::new();
    let mut clique = vec![0u64; words];

    for _ in 0..n {
        let v = (0..n).filter(|&a| alive[a]).min_by_key(|&a| degree[a]).expect("alive node");
        alive[v] = false;
        perm.push(v);

        neighbours.clear();
        clique.copy_from_slice(&adj[v * words..(v + 1) * words]);
        for (w, &bits) in clique.iter().enumerate() {
            let mut b = bits;
            while b != 0 {
                let t = b.trailing_zeros() as usize;
                neighbours.push(w * 64 + t);
                b &= b - 1;
            }
        }
        for &u in &neighbours {
            let row = &mut adj[u * words..(u + 1) * words];
            for (dst, &src) in row.iter_mut().zip(&clique) {
                *dst |= src;
            }
            row[u / 64] &= !(1u64 << (u % 64));
            row[v / 64] &= !(1u64 << (v % 64));
            degree[u] = row.iter().map(|w| w.count_ones() as usize).sum();
        }
    }
    perm
}

/// Factorization `P K Pᵀ = L D Lᵀ` of a quasi-definite matrix `K` given by its
/// upper triangle. The symbolic analysis is kept so that matrices with the
/// same pattern can be refactored cheaply.
#[derive(Debug, Clone)]
pub struct LdlFactorization {
    n: usize,
    perm: Vec<usize>,
    /// Upper triangle of the permuted matrix.
    pcolptr: Vec<usize>,
    prowval: Vec<usize>,
    pnzval: Vec<f64>,
    /// Position in the permuted storage of each entry of the input storage.
    entry_map: Vec<usize>,
    source_colptr: Vec<usize>,
    source_rowval: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
}

impl LdlFactorization {
    pub fn new(upper: &CscMatrix) -> Result<Self, LdlError> {
        if !upper.is_upper_triangular() {
            return Err(LdlError::NotUpperTriangular);
        }
        let n = upper.ncols;
        let perm = minimum_degree(upper);
        let mut iperm = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }

        // Permute the upper triangle: entry (i, j) moves to (min, max) of the
        // new indices.
        let mut counts = vec![0usize; n + 1];
        for j in 0..n {
            for k in upper.colptr[j]..upper.colptr[j + 1] {
                let (a, b) = (iperm[upper.rowval[k]], iperm[j]);
                counts[a.max(b) + 1] += 1;
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let pcolptr = counts.clone();
        let mut next = counts;
        let nnz = upper.nnz();
        let mut prowval = vec![0usize; nnz];
        let mut entry_map = vec![0usize; nnz];
        for j in 0..n {
            for k in upper.colptr[j]..upper.colptr[j + 1] {
                let (a, b) = (iperm[upper.rowval[k]], iperm[j]);
                let col = a.max(b);
                let pos = next[col];
                prowval[pos] = a.min(b);
                entry_map[k] = pos;
                next[col] += 1;
            }
        }

        // Elimination tree and column counts of L.
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &row in &prowval[pcolptr[j]..pcolptr[j + 1]] {
                let mut i = row;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let total = lp[n];

        let mut factor = Self {
            n,
            perm,
            pcolptr,
            prowval,
            pnzval: vec![0.0; nnz],
            entry_map,
            source_colptr: upper.colptr.clone(),
            source_rowval: upper.rowval.clone(),
            etree,
            lp,
            li: vec![0; total],
            lx: vec![0.0; total],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
        };
        factor.refactor(upper)?;
        Ok(factor)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    pub fn matches_pattern(&self, upper: &CscMatrix) -> bool {
        upper.ncols == self.n && upper.colptr == self.source_colptr && upper.rowval == self.source_rowval
    }

    /// Numeric factorization of a matrix with the same pattern as the one
    /// passed to [`LdlFactorization::new`].
    pub fn refactor(&mut self, upper: &CscMatrix) -> Result<(), LdlError> {
        debug_assert!(self.matches_pattern(upper));
        for (k, &pos) in self.entry_map.iter().enumerate() {
            self.pnzval[pos] = upper.nzval[k];
        }
        self.numeric()
    }

    fn numeric(&mut self) -> Result<(), LdlError> {
        let n = self.n;
        let mut y_vals = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();

        for k in 0..n {
            self.d[k] = 0.0;
            let mut nnz_y = 0;
            for p in self.pcolptr[k]..self.pcolptr[k + 1] {
                let bidx = self.prowval[p];
                if bidx == k {
                    self.d[k] += self.pnzval[p];
                    continue;
                }
                y_vals[bidx] += self.pnzval[p];
                if !y_used[bidx] {
                    y_used[bidx] = true;
                    elim[0] = bidx;
                    let mut n_elim = 1;
                    let mut next = self.etree[bidx];
                    while next != NONE && next < k {
                        if y_used[next] {
                            break;
                        }
                        y_used[next] = true;
                        elim[n_elim] = next;
                        n_elim += 1;
                        next = self.etree[next];
                    }
                    while n_elim > 0 {
                        n_elim -= 1;
                        y_idx[nnz_y] = elim[n_elim];
                        nnz_y += 1;
                    }
                }
            }

            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let tmp = next_space[c];
                let yc = y_vals[c];
                for j in self.lp[c]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                let l = yc * self.dinv[c];
                self.lx[tmp] = l;
                self.d[k] -= yc * l;
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }

            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(LdlError::ZeroPivot(self.perm[k]));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    /// Solves `K x = b` in place; `work` must have length `n`.
    pub fn solve(&self, b: &mut [f64], work: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            work[k] = b[self.perm[k]];
        }
        for i in 0..n {
            let wi = work[i];
            if wi != 0.0 {
                for j in self.lp[i]..self.lp[i + 1] {
                    work[self.li[j]] -= self.lx[j] * wi;
                }
            }
        }
        for i in 0..n {
            work[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = work[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * work[self.li[j]];
            }
            work[i] = acc;
        }
        for k in 0..n {
            b[self.perm[k]] = work[k];
        }
    }

    /// Number of negative pivots; equals the number of constraint rows for a
    /// quasi-definite KKT matrix.
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&d| d < 0.0).count()
    }
}
