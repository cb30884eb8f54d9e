use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vfidca::harness::{self, ExperimentConfig, Method};

#[derive(Parser)]
#[command(name = "vfidca", version, about = "Bilevel hyperparameter selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method over all repetitions and print the summary table.
    Run(Common),
    /// Write the data splits of one seed as CSV and LIBSVM files.
    GenData(Common),
    /// Run VF-iDCA on one seed and emit the per-iteration trace as CSV.
    Trace(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    config: PathBuf,
    /// Seed base (`run`) or the seed to use (`gen-data`, `trace`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Output file (`run`, `trace`) or directory (`gen-data`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to these methods (vf-idca, grid, random); repeatable.
    #[arg(long, value_parser = parse_method)]
    method: Vec<Method>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: vfidca::Error| e.to_string())
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed_base = s;
        }
        if let Some(r) = self.reps {
            cfg.repetitions = r;
        }
        if !self.method.is_empty() {
            cfg.methods = self.method.clone();
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot write {}", path.display()))?))
}

fn run(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let report = harness::run_experiment(&cfg)?;
    print!("{}", harness::format_table(&report));
    for f in &report.failures {
        eprintln!("failed: {} seed {}: {}", f.method, f.seed, f.message);
    }
    if report.records.is_empty() {
        bail!("every run failed");
    }
    match &cfg.output {
        Some(path) => harness::write_csv(&report.records, create(path)?)?,
        None => harness::write_csv(&report.records, io::stdout().lock())?,
    }
    Ok(())
}

fn gen_data(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("data"));
    for path in harness::write_data(&cfg, cfg.seed_base, &dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn trace(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let trace = harness::run_trace(&cfg, cfg.seed_base)?;
    log::info!("{} iterations, {:?}", trace.records.len(), trace.termination);
    match &cfg.output {
        Some(path) => harness::write_trace_csv(&trace, create(path)?)?,
        None => {
            let mut out = io::stdout().lock();
            harness::write_trace_csv(&trace, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::GenData(a) => gen_data(a),
        Command::Trace(a) => trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
