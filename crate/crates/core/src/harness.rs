//! Config-driven experiments: data per seed, method dispatch, records,
//! aggregation and CSV / table output.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::applications::Instance;
use crate::baselines::{grid_search, random_search, Axis, SearchResult, SearchSpace};
use crate::data::{gen_elastic_net, gen_sparse_group_lasso_sized, gen_svm, ordered_groups, parse_libsvm, split_shuffle, Dataset};
use crate::error::{Error, Result};
use crate::kernel::SolveOptions;
use crate::vfidca::{AlgoOptions, Trace, VfIdca};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    VfIdca,
    Grid,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::VfIdca => "vf-idca",
            Method::Grid => "grid",
            Method::Random => "random",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vf-idca" | "vfidca" => Ok(Method::VfIdca),
            "grid" => Ok(Method::Grid),
            "random" => Ok(Method::Random),
            other => Err(Error::Config(format!("unknown method `{other}` (expected vf-idca, grid or random)"))),
        }
    }
}

fn default_true() -> bool {
    true
}

/// Problem family and its data source. A `source` file (LIBSVM format)
/// replaces the synthetic generator; it is shuffled per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    ElasticNet {
        #[serde(default = "en::train")]
        n_train: usize,
        #[serde(default = "en::val")]
        n_val: usize,
        #[serde(default = "en::test")]
        n_test: usize,
        #[serde(default = "en::features")]
        features: usize,
        #[serde(default)]
        source: Option<PathBuf>,
    },
    SparseGroupLasso {
        #[serde(default = "sgl::features")]
        features: usize,
        #[serde(default = "sgl::groups")]
        groups: usize,
        #[serde(default = "sgl::split")]
        n_train: usize,
        #[serde(default = "sgl::split")]
        n_val: usize,
        #[serde(default = "sgl::split")]
        n_test: usize,
        #[serde(default)]
        source: Option<PathBuf>,
    },
    SvmCv {
        #[serde(default = "svm::samples")]
        samples: usize,
        #[serde(default = "svm::features")]
        features: usize,
        #[serde(default = "svm::nonzeros")]
        nonzeros: usize,
        #[serde(default = "svm::flip_rate")]
        flip_rate: f64,
        #[serde(default = "svm::folds")]
        folds: usize,
        #[serde(default = "svm::lb")]
        lb: f64,
        #[serde(default = "svm::ub")]
        ub: f64,
        #[serde(default)]
        source: Option<PathBuf>,
        /// Scale features of a source file to [−1, 1] per column.
        #[serde(default = "default_true")]
        scale: bool,
    },
}

mod en {
    pub fn train() -> usize {
        100
    }
    pub fn val() -> usize {
        20
    }
    pub fn test() -> usize {
        250
    }
    pub fn features() -> usize {
        250
    }
}

mod sgl {
    pub fn features() -> usize {
        600
    }
    pub fn groups() -> usize {
        30
    }
    pub fn split() -> usize {
        100
    }
}

mod svm {
    pub fn samples() -> usize {
        200
    }
    pub fn features() -> usize {
        10
    }
    pub fn nonzeros() -> usize {
        5
    }
    pub fn flip_rate() -> f64 {
        0.1
    }
    pub fn folds() -> usize {
        3
    }
    pub fn lb() -> f64 {
        1e-6
    }
    pub fn ub() -> f64 {
        10.0
    }
}

impl ProblemConfig {
    pub fn elastic_net() -> Self {
        ProblemConfig::ElasticNet { n_train: en::train(), n_val: en::val(), n_test: en::test(), features: en::features(), source: None }
    }

    pub fn sparse_group_lasso() -> Self {
        ProblemConfig::SparseGroupLasso {
            features: sgl::features(),
            groups: sgl::groups(),
            n_train: sgl::split(),
            n_val: sgl::split(),
            n_test: sgl::split(),
            source: None,
        }
    }

    pub fn svm_cv() -> Self {
        ProblemConfig::SvmCv {
            samples: svm::samples(),
            features: svm::features(),
            nonzeros: svm::nonzeros(),
            flip_rate: svm::flip_rate(),
            folds: svm::folds(),
            lb: svm::lb(),
            ub: svm::ub(),
            source: None,
            scale: true,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemConfig::ElasticNet { .. } => "elastic-net",
            ProblemConfig::SparseGroupLasso { .. } => "sparse-group-lasso",
            ProblemConfig::SvmCv { .. } => "svm-cv",
        }
    }

    fn source(&self) -> Option<&Path> {
        match self {
            ProblemConfig::ElasticNet { source, .. }
            | ProblemConfig::SparseGroupLasso { source, .. }
            | ProblemConfig::SvmCv { source, .. } => source.as_deref(),
        }
    }

    /// Outer-loop defaults of each problem family.
    pub fn default_algo(&self) -> AlgoOptions {
        let mut o = AlgoOptions::default();
        match self {
            ProblemConfig::ElasticNet { .. } => {}
            ProblemConfig::SparseGroupLasso { .. } => {
                o.c_alpha = 0.1;
                o.tol = 0.05;
            }
            ProblemConfig::SvmCv { .. } => o.tol = 0.01,
        }
        o
    }

    /// Default search ranges per axis for grid and random search.
    pub fn default_ranges(&self, method: Method) -> Vec<[f64; 2]> {
        match (self, method) {
            (ProblemConfig::ElasticNet { .. }, _) => vec![[-5.0, 2.0]; 2],
            (ProblemConfig::SparseGroupLasso { groups, .. }, Method::Random) => vec![[-3.0, 1.0]; groups + 1],
            (ProblemConfig::SparseGroupLasso { .. }, _) => vec![[-3.0, 1.0]; 2],
            (ProblemConfig::SvmCv { .. }, _) => vec![[-4.0, 4.0], [-6.0, 2.0]],
        }
    }

    /// Axis layout: which penalties or upper-level coordinates each search
    /// coordinate sets.
    fn search_space(&self, instance: &Instance, method: Method, ranges: &[[f64; 2]]) -> Result<SearchSpace> {
        let spec = &instance.spec;
        let j = spec.num_penalties();
        let targets: Vec<Axis> = match (self, method) {
            (ProblemConfig::SparseGroupLasso { .. }, Method::Grid) => {
                vec![Axis::penalties(0.0, 0.0, (0..j - 1).collect()), Axis::penalties(0.0, 0.0, vec![j - 1])]
            }
            (ProblemConfig::SvmCv { .. }, _) => {
                vec![Axis::penalties(0.0, 0.0, vec![0]), Axis::upper(0.0, 0.0, (0..spec.u_dim).collect())]
            }
            _ => (0..j).map(|i| Axis::penalties(0.0, 0.0, vec![i])).collect(),
        };
        if targets.len() != ranges.len() {
            return Err(Error::Config(format!(
                "{} {} search has {} axes but {} ranges were given",
                self.name(),
                method.name(),
                targets.len(),
                ranges.len()
            )));
        }
        let axes = targets.into_iter().zip(ranges).map(|(a, r)| Axis { lo: r[0], hi: r[1], ..a }).collect();
        let space = SearchSpace::new(axes);
        space.validate(spec)?;
        Ok(space)
    }

    fn load_source(path: &Path) -> Result<Dataset> {
        let file = File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
        parse_libsvm(BufReader::new(file), None)
    }

    /// Named data splits of repetition `seed`: train / val / test for the
    /// regression problems, cv / test for the SVM.
    pub fn splits(&self, seed: u64) -> Result<Vec<(&'static str, Dataset)>> {
        let file = self.source().map(Self::load_source).transpose()?;
        let named = |v: Vec<Dataset>, names: &[&'static str]| names.iter().copied().zip(v).collect();
        match self {
            ProblemConfig::ElasticNet { n_train, n_val, n_test, features, .. } => {
                let parts = match file {
                    Some(d) => split_shuffle(&d, &[*n_train, *n_val, *n_test], seed)?,
                    None => {
                        let d = gen_elastic_net(*n_train, *n_val, *n_test, *features, seed)?;
                        vec![d.train, d.val, d.test]
                    }
                };
                Ok(named(parts, &["train", "val", "test"]))
            }
            ProblemConfig::SparseGroupLasso { features, groups, n_train, n_val, n_test, .. } => {
                let parts = match file {
                    Some(d) => split_shuffle(&d, &[*n_train, *n_val, *n_test], seed)?,
                    None => {
                        let d = gen_sparse_group_lasso_sized(*features, *groups, [*n_train, *n_val, *n_test], seed)?;
                        vec![d.train, d.val, d.test]
                    }
                };
                Ok(named(parts, &["train", "val", "test"]))
            }
            ProblemConfig::SvmCv { samples, features, nonzeros, flip_rate, scale, .. } => {
                let data = match file {
                    Some(mut d) => {
                        if *scale {
                            scale_columns(&mut d);
                        }
                        d
                    }
                    None => gen_svm(*samples, *features, *nonzeros, *flip_rate, seed)?.0,
                };
                // 3⌊N/6⌋ samples for cross-validation, the rest for testing.
                let n = data.sample_count();
                let cv = 3 * (n / 6);
                Ok(named(split_shuffle(&data, &[cv, n - cv], seed)?, &["cv", "test"]))
            }
        }
    }

    /// Builds the instance of repetition `seed`.
    pub fn instance(&self, seed: u64) -> Result<Instance> {
        let mut parts: Vec<Dataset> = self.splits(seed)?.into_iter().map(|(_, d)| d).collect();
        match self {
            ProblemConfig::ElasticNet { .. } => Instance::elastic_net(&parts[0], &parts[1], &parts[2]),
            ProblemConfig::SparseGroupLasso { groups, .. } => {
                let p = parts[0].feature_dim();
                if p % groups != 0 {
                    return Err(Error::Config(format!("{p} features do not split into {groups} groups")));
                }
                Instance::sparse_group_lasso(&parts[0], &parts[1], &parts[2], &ordered_groups(p, *groups))
            }
            ProblemConfig::SvmCv { folds, lb, ub, .. } => {
                let test = parts.pop().expect("two splits");
                Instance::svm_crossval(&parts[0], &test, *folds, *lb, *ub)
            }
        }
    }
}

fn scale_columns(d: &mut Dataset) {
    let (n, p) = (d.sample_count(), d.feature_dim());
    for j in 0..p {
        let m = (0..n).map(|i| d.features.get(i, j).abs()).fold(0.0, f64::max);
        if m > 0.0 {
            for i in 0..n {
                let v = d.features.get(i, j) / m;
                d.features.set(i, j, v);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub grid_points: usize,
    pub random_samples: usize,
    /// Per-axis log10 ranges; problem defaults when absent.
    pub grid_ranges: Option<Vec<[f64; 2]>>,
    pub random_ranges: Option<Vec<[f64; 2]>>,
    /// Inner solver options for candidate evaluations.
    pub solver: SolveOptions,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { grid_points: 10, random_samples: 100, grid_ranges: None, random_ranges: None, solver: SolveOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads for repetitions; rayon's default when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Overrides on top of the problem's outer-loop defaults.
    #[serde(default)]
    pub algo: toml::Table,
    #[serde(default)]
    pub search: SearchConfig,
}

fn default_methods() -> Vec<Method> {
    vec![Method::VfIdca, Method::Grid, Method::Random]
}

fn default_reps() -> usize {
    10
}

fn merge(base: &mut toml::Table, patch: &toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl ExperimentConfig {
    pub fn new(problem: ProblemConfig) -> Self {
        Self {
            problem,
            methods: default_methods(),
            repetitions: default_reps(),
            seed_base: 0,
            output: None,
            threads: None,
            algo: toml::Table::new(),
            search: SearchConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if let Some(path) = self.problem.source() {
            if !path.is_file() {
                return Err(Error::Config(format!("data file {} does not exist", path.display())));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.algo_options()?.validate()?;
        self.search.solver.validate()
    }

    /// Problem defaults with the `[algo]` table applied.
    pub fn algo_options(&self) -> Result<AlgoOptions> {
        let base = self.problem.default_algo();
        if self.algo.is_empty() {
            return Ok(base);
        }
        let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, &self.algo);
        let opts: AlgoOptions = table.try_into().map_err(|e: toml::de::Error| Error::Config(format!("[algo]: {e}")))?;
        Ok(opts)
    }

    fn ranges(&self, method: Method) -> Vec<[f64; 2]> {
        let given = match method {
            Method::Random => self.search.random_ranges.clone(),
            _ => self.search.grid_ranges.clone(),
        };
        given.unwrap_or_else(|| self.problem.default_ranges(method))
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repetitions as u64).map(|k| self.seed_base + k)
    }
}

/// One method on one repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub method: String,
    pub seed: u64,
    pub time_s: f64,
    pub val_err: f64,
    pub test_err: f64,
    pub t_final: Option<f64>,
    pub delta_final: Option<f64>,
    pub alpha_final: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: String,
    pub seed: u64,
    pub message: String,
}

/// Mean, sample standard deviation and median of one column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Some(Self { mean, std, median: median(values) })
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub failures: usize,
    pub time: Option<Stat>,
    pub val: Option<Stat>,
    pub test: Option<Stat>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub problem: String,
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<Failure>,
    pub summaries: Vec<MethodSummary>,
    /// Per-run VF-iDCA traces in seed order.
    pub traces: Vec<(u64, Trace)>,
}

impl ExperimentReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method.name())
    }

    pub fn records_of(&self, method: Method) -> impl Iterator<Item = &ExperimentRecord> {
        self.records.iter().filter(move |r| r.method == method.name())
    }
}

struct RunOutput {
    record: ExperimentRecord,
    trace: Option<Trace>,
}

fn run_search(instance: &Instance, result: SearchResult) -> Result<(f64, f64)> {
    let best = result.best().ok_or_else(|| Error::SolverFailure(format!("all {} search candidates failed", result.evaluations.len())))?;
    let x = best.x.as_ref().expect("successful evaluation has a solution");
    Ok((instance.val_error(x, &best.u)?, instance.test_error(x)))
}

/// Runs one method on one prepared instance. Time covers the method only.
pub fn run_method(config: &ExperimentConfig, instance: &Instance, method: Method, seed: u64) -> Result<(ExperimentRecord, Option<Trace>)> {
    let started = Instant::now();
    let out = match method {
        Method::VfIdca => {
            let opts = config.algo_options()?;
            let init = instance.initial_iterate(opts.alpha0)?;
            let mut runner = VfIdca::new(&instance.spec, opts)?;
            let (fin, trace) = runner.run(&init)?;
            let time_s = started.elapsed().as_secs_f64();
            let last = trace.last();
            RunOutput {
                record: ExperimentRecord {
                    method: method.name().into(),
                    seed,
                    time_s,
                    val_err: instance.val_error(&fin.x, &fin.u)?,
                    test_err: instance.test_error(&fin.x),
                    t_final: last.map(|r| r.t),
                    delta_final: last.map(|r| r.delta_scaled),
                    alpha_final: last.map(|r| r.alpha_next),
                },
                trace: Some(trace),
            }
        }
        Method::Grid | Method::Random => {
            let space = config.problem.search_space(instance, method, &config.ranges(method))?;
            let result = if method == Method::Grid {
                grid_search(&instance.spec, &space, config.search.grid_points, &config.search.solver)?
            } else {
                random_search(&instance.spec, &space, config.search.random_samples, seed, &config.search.solver)?
            };
            let time_s = started.elapsed().as_secs_f64();
            let (val_err, test_err) = run_search(instance, result)?;
            RunOutput {
                record: ExperimentRecord {
                    method: method.name().into(),
                    seed,
                    time_s,
                    val_err,
                    test_err,
                    t_final: None,
                    delta_final: None,
                    alpha_final: None,
                },
                trace: None,
            }
        }
    };
    if !(out.record.val_err.is_finite() && out.record.test_err.is_finite()) {
        return Err(Error::SolverFailure("non-finite error metric".into()));
    }
    Ok((out.record, out.trace))
}

type RepOutput = Vec<std::result::Result<(ExperimentRecord, Option<Trace>), Failure>>;

fn run_repetition(config: &ExperimentConfig, seed: u64) -> Result<RepOutput> {
    let instance = config.problem.instance(seed)?;
    Ok(config
        .methods
        .iter()
        .map(|&m| {
            run_method(config, &instance, m, seed).map_err(|e| {
                log::warn!("{} failed on seed {seed}: {e}", m.name());
                Failure { method: m.name().into(), seed, message: e.to_string() }
            })
        })
        .collect())
}

/// Runs every method on every repetition; records come back in seed order,
/// methods in config order within a seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let seeds: Vec<u64> = config.seeds().collect();
    let work = || -> Vec<Result<RepOutput>> { seeds.par_iter().map(|&s| run_repetition(config, s)).collect() };
    let outputs = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Config(e.to_string()))?.install(work),
        None => work(),
    };

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut traces = Vec::new();
    for (seed, out) in seeds.iter().zip(outputs) {
        for item in out? {
            match item {
                Ok((rec, trace)) => {
                    if let Some(t) = trace {
                        traces.push((*seed, t));
                    }
                    records.push(rec);
                }
                Err(f) => failures.push(f),
            }
        }
    }
    let summaries = config.methods.iter().map(|m| summarize(m.name(), &records, &failures)).collect();
    Ok(ExperimentReport { problem: config.problem.name().into(), records, failures, summaries, traces })
}

fn summarize(method: &str, records: &[ExperimentRecord], failures: &[Failure]) -> MethodSummary {
    let mine: Vec<&ExperimentRecord> = records.iter().filter(|r| r.method == method).collect();
    let col = |f: fn(&ExperimentRecord) -> f64| Stat::of(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
    MethodSummary {
        method: method.into(),
        runs: mine.len(),
        failures: failures.iter().filter(|f| f.method == method).count(),
        time: col(|r| r.time_s),
        val: col(|r| r.val_err),
        test: col(|r| r.test_err),
    }
}

pub fn write_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to write"));
    }
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ExperimentRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn pm(s: Option<Stat>) -> String {
    s.map_or_else(|| "-".into(), |s| format!("{:.2} ± {:.2}", s.mean, s.std))
}

fn med(s: Option<Stat>) -> String {
    s.map_or_else(|| "-".into(), |s| format!("{:.2}", s.median))
}

/// Summary table: mean ± std per column, medians alongside.
pub fn format_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} (time is method-only wall clock, seconds)", report.problem);
    let _ = writeln!(
        out,
        "{:<10} {:>16} {:>16} {:>16} {:>10} {:>10} {:>6} {:>6}",
        "method", "time", "val err", "test err", "med val", "med test", "runs", "failed"
    );
    for s in &report.summaries {
        let _ = writeln!(
            out,
            "{:<10} {:>16} {:>16} {:>16} {:>10} {:>10} {:>6} {:>6}",
            s.method,
            pm(s.time),
            pm(s.val),
            pm(s.test),
            med(s.val),
            med(s.test),
            s.runs,
            s.failures
        );
    }
    out
}

/// Per-iteration trace as CSV.
pub fn write_trace_csv<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration",
        "delta",
        "delta_scaled",
        "t",
        "alpha",
        "alpha_next",
        "phi_prev",
        "phi_next",
        "ll_value",
        "ul_value",
        "inner_iterations",
        "step_fraction",
        "safeguarded",
        "elapsed_s",
    ])?;
    for r in &trace.records {
        w.write_record(&[
            r.iteration.to_string(),
            r.delta.to_string(),
            r.delta_scaled.to_string(),
            r.t.to_string(),
            r.alpha.to_string(),
            r.alpha_next.to_string(),
            r.phi_prev.to_string(),
            r.phi_next.to_string(),
            r.ll_value.to_string(),
            r.ul_value.to_string(),
            r.inner_iterations.to_string(),
            r.step_fraction.to_string(),
            r.safeguarded.to_string(),
            r.elapsed_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs VF-iDCA on one seed and returns its trace.
pub fn run_trace(config: &ExperimentConfig, seed: u64) -> Result<Trace> {
    config.validate()?;
    let instance = config.problem.instance(seed)?;
    let (_, trace) = run_method(config, &instance, Method::VfIdca, seed)?;
    Ok(trace.expect("vf-idca returns a trace"))
}

/// Writes the splits of one seed as CSV and LIBSVM files into `dir`.
pub fn write_data(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, d) in config.problem.splits(seed)? {
        let csv_path = dir.join(format!("{name}_seed{seed}.csv"));
        d.write_csv(File::create(&csv_path)?)?;
        let svm_path = dir.join(format!("{name}_seed{seed}.libsvm"));
        std::fs::write(&svm_path, crate::data::to_libsvm(&d))?;
        written.push(csv_path);
        written.push(svm_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn algo_overrides_merge_onto_problem_defaults() {
        let cfg =
            ExperimentConfig::from_toml("[problem]\nkind = \"sparse-group-lasso\"\n[algo]\nrho = 0.5\n[algo.lower_level]\nmax_iters = 7\n")
                .unwrap();
        let o = cfg.algo_options().unwrap();
        assert_eq!(o.rho, 0.5);
        assert_eq!(o.c_alpha, 0.1);
        assert_eq!(o.lower_level.max_iters, 7);
        assert_eq!(o.lower_level.eps_rel, 1e-6);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[problem]\nkind = \"elastic-net\"\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[problem]\nkind = \"elastic-net\"\n[algo]\nbogus = 1\n").is_err());
    }
}
