//! Datasets, synthetic generators, LIBSVM text I/O and seeded splits.
//!
//! Random draws use `ChaCha8Rng::seed_from_u64(seed)`, so a seed fixes every
//! generated number on any platform.

use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{norm2, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Regression,
    /// Labels in `{−1, +1}`.
    Classification,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub targets: Vec<f64>,
    pub task: Task,
}

impl Dataset {
    pub fn new(features: Matrix, targets: Vec<f64>, task: Task) -> Result<Self> {
        Error::check_dim("targets", features.rows(), targets.len())?;
        if task == Task::Classification {
            if let Some(bad) = targets.iter().find(|&&y| y != 1.0 && y != -1.0) {
                return Err(Error::invalid(format!("classification label {bad} is not ±1")));
            }
        }
        Ok(Self { features, targets, task })
    }

    pub fn sample_count(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self { features: self.features.select_rows(rows), targets: rows.iter().map(|&i| self.targets[i]).collect(), task: self.task }
    }

    /// Consecutive blocks of the given sizes.
    pub fn split_in_order(&self, sizes: &[usize]) -> Result<Vec<Self>> {
        let total: usize = sizes.iter().sum();
        if total > self.sample_count() {
            return Err(Error::invalid(format!("split sizes {total} exceed {} samples", self.sample_count())));
        }
        let mut start = 0;
        Ok(sizes
            .iter()
            .map(|&s| {
                let rows: Vec<usize> = (start..start + s).collect();
                start += s;
                self.subset(&rows)
            })
            .collect())
    }

    /// Writes `target,f1,…,fp` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["target".to_string()];
        header.extend((1..=self.feature_dim()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for i in 0..self.sample_count() {
            let mut rec = vec![self.targets[i].to_string()];
            rec.extend(self.features.row(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Splits of a regression draw and the coefficients that generated it.
#[derive(Clone, Debug)]
pub struct RegressionDraw {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub beta: Vec<f64>,
}

/// `b = Aβ + σε` with `σ = ‖Aβ‖ / (snr ‖ε‖)` on the realized draw.
fn responses(features: &Matrix, beta: &[f64], snr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let signal = features.mul_vec(beta);
    let noise: Vec<f64> = (0..signal.len()).map(|_| rng.sample(StandardNormal)).collect();
    let sigma = norm2(&signal) / (snr * norm2(&noise));
    signal.iter().zip(&noise).map(|(s, e)| s + sigma * e).collect()
}

fn regression_splits(features: Matrix, beta: Vec<f64>, sizes: [usize; 3], rng: &mut ChaCha8Rng) -> Result<RegressionDraw> {
    let b = responses(&features, &beta, 2.0, rng);
    let full = Dataset::new(features, b, Task::Regression)?;
    let mut parts = full.split_in_order(&sizes)?.into_iter();
    Ok(RegressionDraw { train: parts.next().unwrap(), val: parts.next().unwrap(), test: parts.next().unwrap(), beta })
}

/// Features with `cor(a_j, a_k) = 0.5^{|j−k|}` via the AR(1) recursion, 15
/// unit coefficients at uniformly chosen positions, SNR 2.
pub fn gen_elastic_net(n_tr: usize, n_val: usize, n_test: usize, p: usize, seed: u64) -> Result<RegressionDraw> {
    if p < 15 {
        return Err(Error::invalid(format!("elastic-net generator needs p ≥ 15, got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_tr + n_val + n_test;
    let mut features = Matrix::zeros(n, p);
    let innovation = (1.0f64 - 0.25).sqrt();
    for i in 0..n {
        let row = features.row_mut(i);
        row[0] = rng.sample(StandardNormal);
        for j in 1..p {
            let e: f64 = rng.sample(StandardNormal);
            row[j] = 0.5 * row[j - 1] + innovation * e;
        }
    }
    let mut beta = vec![0.0; p];
    for j in index::sample(&mut rng, p, 15) {
        beta[j] = 1.0;
    }
    regression_splits(features, beta, [n_tr, n_val, n_test], &mut rng)
}

/// Standard normal features, groups of `p / groups` consecutive features,
/// the first three groups carrying `(1, 2, 3, 4, 5, 0, …)`.
pub fn gen_sparse_group_lasso(p: usize, groups: usize, seed: u64) -> Result<RegressionDraw> {
    gen_sparse_group_lasso_sized(p, groups, [100, 100, 100], seed)
}

pub fn gen_sparse_group_lasso_sized(p: usize, groups: usize, sizes: [usize; 3], seed: u64) -> Result<RegressionDraw> {
    if groups == 0 || p % groups != 0 {
        return Err(Error::invalid(format!("{groups} groups do not divide p = {p}")));
    }
    let size = p / groups;
    if size < 5 {
        return Err(Error::invalid(format!("group size {size} < 5")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = sizes.iter().sum();
    let data: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    let features = Matrix::from_vec(n, p, data)?;
    let mut beta = vec![0.0; p];
    for g in 0..groups.min(3) {
        for k in 0..5 {
            beta[g * size + k] = (k + 1) as f64;
        }
    }
    regression_splits(features, beta, sizes, &mut rng)
}

/// Consecutive groups of equal size.
pub fn ordered_groups(p: usize, groups: usize) -> Vec<Vec<usize>> {
    let size = p / groups;
    (0..groups).map(|g| (g * size..(g + 1) * size).collect()).collect()
}

/// Linearly generated binary labels with a fraction of flips: standard
/// normal features, a sparse `w*` with `nonzeros` entries of ±1, offset 0.
pub fn gen_svm(n: usize, p: usize, nonzeros: usize, flip_rate: f64, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    if nonzeros == 0 || nonzeros > p {
        return Err(Error::invalid("need 1 ≤ nonzeros ≤ p"));
    }
    if !(0.0..=0.5).contains(&flip_rate) {
        return Err(Error::invalid("flip rate must lie in [0, 0.5]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; p];
    for j in index::sample(&mut rng, p, nonzeros) {
        w[j] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let data: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    let features = Matrix::from_vec(n, p, data)?;
    let labels = features
        .mul_vec(&w)
        .into_iter()
        .map(|s| {
            let y = if s >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < flip_rate {
                -y
            } else {
                y
            }
        })
        .collect();
    Ok((Dataset::new(features, labels, Task::Classification)?, w))
}

/// Deterministic shuffle then consecutive disjoint splits.
pub fn split_shuffle(data: &Dataset, sizes: &[usize], seed: u64) -> Result<Vec<Dataset>> {
    let total: usize = sizes.iter().sum();
    if total > data.sample_count() {
        return Err(Error::invalid(format!("split sizes sum to {total} but only {} samples exist", data.sample_count())));
    }
    let mut perm: Vec<usize> = (0..data.sample_count()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|&s| {
            let part = data.subset(&perm[start..start + s]);
            start += s;
            part
        })
        .collect())
}

/// Parses LIBSVM text: `label idx:val idx:val …` with 1-based strictly
/// increasing indices. Labels that are all ±1 give a classification set.
pub fn parse_libsvm<R: BufRead>(reader: R, feature_dim: Option<usize>) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().unwrap();
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse { line: line_no, message: format!("bad label `{label_tok}`") })?;
        let mut row = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (idx, val) =
                tok.split_once(':').ok_or_else(|| Error::Parse { line: line_no, message: format!("token `{tok}` is not idx:val") })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse { line: line_no, message: format!("bad index in `{tok}`") })?;
            let val: f64 = val.parse().map_err(|_| Error::Parse { line: line_no, message: format!("bad value in `{tok}`") })?;
            if idx == 0 || idx <= last {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("indices must be 1-based and strictly increasing (got {idx} after {last})"),
                });
            }
            last = idx;
            row.push((idx, val));
        }
        max_index = max_index.max(last);
        labels.push(label);
        rows.push(row);
    }
    let dim = match feature_dim {
        Some(d) if d < max_index => return Err(Error::invalid(format!("feature index {max_index} exceeds requested dimension {d}"))),
        Some(d) => d,
        None => max_index,
    };
    let mut features = Matrix::zeros(rows.len(), dim);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            features.set(i, j - 1, v);
        }
    }
    let task = if !labels.is_empty() && labels.iter().all(|&y| y == 1.0 || y == -1.0) { Task::Classification } else { Task::Regression };
    Dataset::new(features, labels, task)
}

/// Inverse of [`parse_libsvm`]; zero entries are omitted.
pub fn to_libsvm(data: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..data.sample_count() {
        let y = data.targets[i];
        if data.task == Task::Classification {
            out.push_str(if y > 0.0 { "+1" } else { "-1" });
        } else {
            out.push_str(&format!("{y:?}"));
        }
        for (j, &v) in data.features.row(i).iter().enumerate() {
            if v != 0.0 {
                out.push_str(&format!(" {}:{v:?}", j + 1));
            }
        }
        out.push('\n');
    }
    out
}
