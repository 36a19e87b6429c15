//! Command-line driver for the cyclic urn experiments.
//!
//! Exit codes: 0 all gating checks pass, 1 a tolerance check failed,
//! 2 usage or parameter error, 3 a resource guard tripped.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cyclic_urn::harness::{
    cmd_clt, cmd_fixpoint, cmd_mean, cmd_oracle, cmd_rank, cmd_rate, cmd_simulate, version, Command, ExperimentConfig,
    Report,
};
use cyclic_urn::moments::LimitModel;
use cyclic_urn::residuals::NormalizationMode;
use cyclic_urn::UrnError;

#[derive(Parser)]
#[command(name = "cyclic-urn", version = version().trim_start_matches("cyclic-urn ").to_string(), about = "Experiments on the cyclic urn")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Covariance of the normalized residuals against their limits
    Clt(Common),
    /// Deterministic convergence rates from exact second moments
    Rate(Common),
    /// Rank of the limit covariance over a range of m
    Rank(Common),
    /// Moment test of the fixed-point equation of the martingale limit
    Fixpoint(Common),
    /// Exact small-n oracle suite
    Oracle(Common),
    /// Exact mean against its asymptotic expansion
    Mean(Common),
    /// One seeded trajectory
    Simulate(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    GammaRatio,
    PowerPhase,
}

#[derive(Clone, Copy, ValueEnum)]
enum Limit {
    Richardson,
    Truncated,
}

#[derive(Args)]
struct Common {
    /// Number of ball types
    #[arg(long)]
    m: Option<usize>,
    /// Checkpoint (or horizon) n
    #[arg(long)]
    n: Option<u64>,
    /// Horizon N standing in for the martingale limit
    #[arg(long)]
    nlimit: Option<u64>,
    /// Second, longer horizon for the bias trend of large blocks
    #[arg(long)]
    trend_nlimit: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Blocks k to analyse, comma separated
    #[arg(long = "k", alias = "blocks", value_delimiter = ',')]
    blocks: Option<Vec<usize>>,
    #[arg(long)]
    m_min: Option<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long)]
    initial_type: Option<usize>,
    /// Width of Monte Carlo bands in standard errors
    #[arg(long)]
    sigmas: Option<f64>,
    /// Relative tolerance for rate comparisons
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long, value_enum)]
    limit_model: Option<Limit>,
    /// Exact rational arithmetic for the oracle identities
    #[arg(long)]
    exact_rational: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

impl Common {
    fn config(&self, command: Command) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(command);
        if let Some(n) = self.n {
            c = c.with_n(n);
        }
        if let Some(m) = self.m {
            c.m = m;
        }
        if let Some(x) = self.nlimit {
            c.n_limit = x;
        }
        c.trend_limit = self.trend_nlimit.or(c.trend_limit);
        if let Some(x) = self.reps {
            c.replicates = x;
        }
        if let Some(x) = self.seed {
            c.seed = x;
        }
        if let Some(x) = self.threads {
            c.threads = x;
        }
        if let Some(x) = self.mode {
            c.mode = match x {
                Mode::GammaRatio => NormalizationMode::GammaRatio,
                Mode::PowerPhase => NormalizationMode::PowerPhase,
            };
        }
        if let Some(x) = &self.blocks {
            c.blocks = Some(x.clone());
        }
        if let Some(x) = self.m_min {
            c.m_min = x;
        }
        if let Some(x) = self.m_max {
            c.m_max = x;
        }
        if let Some(x) = self.initial_type {
            c.initial_type = x;
        }
        if let Some(x) = self.sigmas {
            c.sigmas = x;
        }
        if let Some(x) = self.rel_tol {
            c.rel_tol = x;
        }
        if let Some(x) = self.limit_model {
            c.limit_model = match x {
                Limit::Richardson => LimitModel::Richardson,
                Limit::Truncated => LimitModel::Truncated,
            };
        }
        c.exact_rational = self.exact_rational;
        c
    }
}

fn write_report(report: &Report, common: &Common) -> io::Result<()> {
    let sink: Box<dyn Write> = match &common.out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    match common.format {
        Format::Json => {
            let mut sink = sink;
            serde_json::to_writer_pretty(&mut sink, &report.to_json())?;
            writeln!(sink)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            w.write_record(&report.table.headers)?;
            for row in &report.table.rows {
                w.write_record(row)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, result) = match &cli.command {
        Sub::Clt(c) => (c, cmd_clt(&c.config(Command::Clt))),
        Sub::Rate(c) => (c, cmd_rate(&c.config(Command::Rate))),
        Sub::Rank(c) => (c, cmd_rank(&c.config(Command::Rank))),
        Sub::Fixpoint(c) => (c, cmd_fixpoint(&c.config(Command::Fixpoint))),
        Sub::Oracle(c) => (c, cmd_oracle(&c.config(Command::Oracle))),
        Sub::Mean(c) => (c, cmd_mean(&c.config(Command::Mean))),
        Sub::Simulate(c) => (c, cmd_simulate(&c.config(Command::Simulate))),
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return match e {
                UrnError::Resource(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            };
        }
    };
    if let Err(e) = write_report(&report, common) {
        eprintln!("error: cannot write output: {e}");
        return ExitCode::from(2);
    }
    for f in report.failures() {
        eprintln!("FAIL {}: {} (rule {})", f.name, f.value, f.rule);
    }
    if report.passed() {
        eprintln!("PASS ({} checks)", report.checks.len());
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
