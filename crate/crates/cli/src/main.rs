use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use gdp_core::filter::{Decision, FilterState, PrivacyBudget, QuerySpend};
use gdp_core::harness::experiment::emit_transcripts;
use gdp_core::harness::verify::{verify_cholesky, DEFAULT_CASES};
use gdp_core::harness::{run_experiment, ConfigError, ExperimentConfig, HarnessError};
use gdp_core::SessionKind;

#[derive(Parser)]
#[command(
    name = "gdp",
    version,
    about = "Adaptive Gaussian DP composition: filter, curator and simulator checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Direct,
    Simulated,
}

#[derive(Subcommand)]
enum Command {
    /// Check the online factor against I − mmᵀ on random spend vectors.
    VerifyCholesky {
        #[arg(long, default_value_t = DEFAULT_CASES)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a config and write its JSON report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `master_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Report path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a per-round CSV table.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Write the transcripts of one curator as CSV.
    EmitTranscripts {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "simulated")]
        kind: Kind,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Feed a spend sequence through the filter and print each decision.
    FilterDemo {
        #[arg(long)]
        budget: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        spends: Vec<f64>,
    },
}

/// Usage and config problems exit with 2, failed checks with 1.
struct UsageError(anyhow::Error);

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<UsageError>() {
            Ok(u) => Failure::Usage(u.0),
            Err(e) if is_config_error(&e) => Failure::Usage(e),
            Err(e) => Failure::Runtime(e),
        }
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.downcast_ref::<ConfigError>().is_some()
        || matches!(
            e.downcast_ref::<HarnessError>(),
            Some(HarnessError::Config(_))
        )
}

impl std::fmt::Debug for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    UsageError(e.into()).into()
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::VerifyCholesky { cases, seed } => {
            if cases == 0 {
                return Err(usage(anyhow::anyhow!("--cases must be at least 1")));
            }
            let r = verify_cholesky(seed, cases)?;
            println!("cases                  {}", r.cases);
            println!("exhausted cases        {}", r.exhausted_cases);
            println!("max |LL^T - Sigma|     {:.3e}", r.max_gram_deviation);
            println!("max |dense - stream|   {:.3e}", r.max_stream_deviation);
            println!("canonicality failures  {}", r.canonicality_failures);
            println!("{}", if r.pass { "PASS" } else { "FAIL" });
            Ok(r.pass)
        }
        Command::Run {
            config,
            seed,
            out,
            table,
        } => {
            let cfg = load(&config, seed)?;
            let report = run_experiment(&cfg)?;
            let json = report.to_json()?;
            match &out {
                Some(p) => {
                    let mut w = create(p)?;
                    w.write_all(json.as_bytes())?;
                    w.flush()?;
                }
                None => print!("{json}"),
            }
            if let Some(p) = &table {
                report.write_table(create(p)?)?;
            }
            eprintln!(
                "{} tests evaluated, {} failed{}; checksum {}",
                report.results.tests_evaluated,
                report.results.tests_failed,
                match &report.retry {
                    Some(r) => format!(" (retry: {} failed)", r.tests_failed),
                    None => String::new(),
                },
                report.checksum
            );
            eprintln!("{}", if report.pass { "PASS" } else { "FAIL" });
            Ok(report.pass)
        }
        Command::EmitTranscripts {
            config,
            out,
            kind,
            seed,
        } => {
            let cfg = load(&config, seed)?;
            let kind = match kind {
                Kind::Direct => SessionKind::Direct,
                Kind::Simulated => SessionKind::Simulated,
            };
            let mut w = create(&out)?;
            emit_transcripts(&cfg, kind, &mut w)?;
            w.flush()?;
            Ok(true)
        }
        Command::FilterDemo { budget, spends } => {
            let budget = PrivacyBudget::new(budget).map_err(usage)?;
            let mut filter = FilterState::new(budget);
            for (i, &s) in spends.iter().enumerate() {
                let q = QuerySpend::new(s).map_err(usage)?;
                let d = filter.spend(q);
                println!(
                    "{:>3}  spend {:<10} {:<8}  spent^2 {:.6}  remaining^2 {:.6}",
                    i + 1,
                    s,
                    match d {
                        Decision::Accepted => "accepted",
                        Decision::Refused => "refused",
                    },
                    filter.spent_sq(),
                    filter.remaining_sq()
                );
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli.command).map_err(Failure::from) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
