//! Compressed sparse column storage used by the cone solver.

/// A sparse matrix in compressed sparse column form.
///
/// Row indices within each column are sorted and unique.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowval: Vec<usize>,
    pub nzval: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, colptr: vec![0; ncols + 1], rowval: Vec::new(), nzval: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { nrows: n, ncols: n, colptr: (0..=n).collect(), rowval: (0..n).collect(), nzval: vec![1.0; n] }
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    /// Explicit zeros are kept so that the sparsity pattern only depends on
    /// which entries were pushed, not on their values.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            counts[j + 1] += 1;
        }
        for j in 0..ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            let k = next[j];
            rows[k] = i;
            vals[k] = v;
            next[j] += 1;
        }

        let mut colptr = Vec::with_capacity(ncols + 1);
        let mut rowval = Vec::with_capacity(triplets.len());
        let mut nzval = Vec::with_capacity(triplets.len());
        colptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for j in 0..ncols {
            order.clear();
            order.extend(counts[j]..counts[j + 1]);
            order.sort_by_key(|&k| rows[k]);
            let mut last: Option<usize> = None;
            for &k in &order {
                if last == Some(rows[k]) {
                    *nzval.last_mut().unwrap() += vals[k];
                } else {
                    rowval.push(rows[k]);
                    nzval.push(vals[k]);
                    last = Some(rows[k]);
                }
            }
            colptr.push(rowval.len());
        }
        Self { nrows, ncols, colptr, rowval, nzval }
    }

    pub fn nnz(&self) -> usize {
        self.rowval.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.colptr[j]..self.colptr[j + 1];
        match self.rowval[range.clone()].binary_search(&i) {
            Ok(k) => self.nzval[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn same_pattern(&self, other: &CscMatrix) -> bool {
        self.nrows == other.nrows && self.ncols == other.ncols && self.colptr == other.colptr && self.rowval == other.rowval
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.ncols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for k in self.colptr[j]..self.colptr[j + 1] {
                y[self.rowval[k]] += self.nzval[k] * xj;
            }
        }
    }

    /// `y = Aᵀ x`
    pub fn tmul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for j in 0..self.ncols {
            let mut acc = 0.0;
            for k in self.colptr[j]..self.colptr[j + 1] {
                acc += self.nzval[k] * x[self.rowval[k]];
            }
            y[j] = acc;
        }
    }

    /// `y = S x` where `self` holds the upper triangle of a symmetric `S`.
    pub fn sym_upper_mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(self.nrows, self.ncols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.ncols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                let i = self.rowval[k];
                let v = self.nzval[k];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
    }

    pub fn is_upper_triangular(&self) -> bool {
        (0..self.ncols).all(|j| self.rowval[self.colptr[j]..self.colptr[j + 1]].iter().all(|&i| i <= j))
    }

    /// Infinity norm of every column of the symmetric matrix whose upper
    /// triangle is stored in `self`.
    pub fn sym_upper_col_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0f64; self.ncols];
        for j in 0..self.ncols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                let i = self.rowval[k];
                let v = self.nzval[k].abs();
                norms[j] = norms[j].max(v);
                norms[i] = norms[i].max(v);
            }
        }
        norms
    }

    pub fn col_norms(&self) -> Vec<f64> {
        (0..self.ncols).map(|j| self.nzval[self.colptr[j]..self.colptr[j + 1]].iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect()
    }

    pub fn row_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0f64; self.nrows];
        for (&i, v) in self.rowval.iter().zip(&self.nzval) {
            norms[i] = norms[i].max(v.abs());
        }
        norms
    }

    /// In-place `A ← diag(left) A diag(right)`.
    pub fn scale(&mut self, left: &[f64], right: &[f64]) {
        for j in 0..self.ncols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                self.nzval[k] *= left[self.rowval[k]] * right[j];
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols]; self.nrows];
        for j in 0..self.ncols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                dense[self.rowval[k]][j] = self.nzval[k];
            }
        }
        dense
    }
}
