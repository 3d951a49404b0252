// SPDX-License-Identifier: Apache-2.0

//! `selfuzz`: seed splitting, training, generation, pass sweeps, full
//! campaigns, triage and reporting from one binary.
//!
//! Exit codes: 0 success (including campaigns that found bugs), 1 usage
//! error, 2 environment error (missing compiler, backend or file), 3 corrupt
//! or malformed input data.

mod commands;
mod overrides;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use selfuzz_core::campaign::CampaignError;
use selfuzz_core::corpus::CorpusError;
use selfuzz_core::generator::GeneratorError;
use selfuzz_core::harness::HarnessError;
use selfuzz_core::metrics::MetricsError;
use selfuzz_core::triage::TriageError;

use overrides::ConfigOverrides;

#[derive(Parser, Debug)]
#[command(name = "selfuzz", version, about = "Self-adaptive learned fuzzing for MLIR-style compilers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a directory of .mlir test files into a seed corpus.
    SeedSplit {
        /// Directory searched recursively for .mlir files.
        #[arg(long = "in")]
        input: PathBuf,
        /// Corpus directory to create or extend.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a backend on a corpus and save its snapshot.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// `ngram`, `ngram:<order>` or `http:<url>`.
        #[arg(long, default_value = "ngram")]
        backend: String,
        /// Snapshot file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: u32,
        #[arg(long, alias = "rng_seed", default_value_t = 0)]
        rng_seed: u64,
    },
    /// Generate candidates from sampled corpus seeds with a trained model.
    Generate(commands::GenerateArgs),
    /// Compile every corpus program under each pass and bucket the crashes.
    Sweep(commands::SweepArgs),
    /// Run the full train, generate, sweep and augment loop.
    Campaign {
        /// JSON config with campaign field names; `-` reads stdin.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `faultline:<spec.json>` or `exec:<path to mlir-opt>`.
        #[arg(long)]
        compiler: String,
        /// `ngram`, `ngram:<order>` or `http:<url>`.
        #[arg(long, default_value = "ngram")]
        backend: String,
        /// Pass list, one `<flag> <category>` per line.
        #[arg(long)]
        passes: PathBuf,
        /// Seed corpus directory, or a directory of raw .mlir files.
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the latest checkpoint in --out. Without --config the
        /// config saved there is reused; overrides still apply.
        #[arg(long)]
        resume: bool,
        /// Sampling interval of the bug curve, in seconds.
        #[arg(long, default_value_t = 3600.0)]
        interval: f64,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Compute bug keys for stderr files, or export a crash registry.
    Triage(commands::TriageArgs),
    /// Rebuild the metrics bundle of a finished campaign.
    Report {
        #[arg(long)]
        campaign: PathBuf,
        /// Other campaign directories to compare bug sets against.
        #[arg(long)]
        compare: Vec<PathBuf>,
        /// Two-column `timestamp,percent` coverage CSV.
        #[arg(long)]
        coverage: Option<PathBuf>,
        /// Sampling interval of the bug curve, in seconds.
        #[arg(long, default_value_t = 3600.0)]
        interval: f64,
        /// Output directory; defaults to `<campaign>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a randomized fault specification for the simulated compiler.
    FaultlineGen(commands::FaultlineGenArgs),
}

/// Failures detected by the CLI itself rather than a library call.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Corrupt(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Corrupt(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

const USAGE: u8 = 1;
const ENVIRONMENT: u8 = 2;
const CORRUPT: u8 = 3;

fn generator_code(e: &GeneratorError) -> u8 {
    match e {
        GeneratorError::InvalidConfig(_) | GeneratorError::UnknownStrategy { .. } | GeneratorError::Unsupported { .. } => USAGE,
        GeneratorError::BackendUnavailable(_) => ENVIRONMENT,
        _ => CORRUPT,
    }
}

fn harness_code(e: &HarnessError) -> u8 {
    match e {
        HarnessError::UnknownCompiler(_) => USAGE,
        HarnessError::CompilerMissing(_) | HarnessError::Io { .. } => ENVIRONMENT,
        _ => CORRUPT,
    }
}

fn corpus_code(e: &CorpusError) -> u8 {
    match e {
        CorpusError::Io { .. } => ENVIRONMENT,
        CorpusError::ZeroSampleSize => USAGE,
        _ => CORRUPT,
    }
}

fn triage_code(e: &TriageError) -> u8 {
    match e {
        TriageError::Io { .. } => ENVIRONMENT,
        _ => CORRUPT,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        let code = if let Some(e) = cause.downcast_ref::<CliError>() {
            match e {
                CliError::Usage(_) => USAGE,
                CliError::Corrupt(_) => CORRUPT,
            }
        } else if let Some(e) = cause.downcast_ref::<CampaignError>() {
            match e {
                CampaignError::ConfigInvalid(_) => USAGE,
                CampaignError::Generator(g) => generator_code(g),
                CampaignError::Corpus(c) => corpus_code(c),
                CampaignError::Harness(h) => harness_code(h),
                CampaignError::Triage(t) => triage_code(t),
                CampaignError::Io { .. } => ENVIRONMENT,
                CampaignError::EmptySeeds | CampaignError::CorruptCheckpoint { .. } => CORRUPT,
            }
        } else if let Some(e) = cause.downcast_ref::<GeneratorError>() {
            generator_code(e)
        } else if let Some(e) = cause.downcast_ref::<HarnessError>() {
            harness_code(e)
        } else if let Some(e) = cause.downcast_ref::<CorpusError>() {
            corpus_code(e)
        } else if let Some(e) = cause.downcast_ref::<TriageError>() {
            triage_code(e)
        } else if let Some(e) = cause.downcast_ref::<MetricsError>() {
            match e {
                MetricsError::Io { .. } => ENVIRONMENT,
                MetricsError::OverlapArity(_) => USAGE,
                _ => CORRUPT,
            }
        } else if cause.is::<serde_json::Error>() {
            CORRUPT
        } else if cause.is::<std::io::Error>() {
            ENVIRONMENT
        } else {
            continue;
        };
        return code;
    }
    ENVIRONMENT
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SeedSplit { input, out } => commands::seed_split(&input, &out),
        Command::Train { corpus, backend, out, epochs, rng_seed } => commands::train(&corpus, &backend, &out, epochs, rng_seed),
        Command::Generate(args) => commands::generate(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Campaign { config, compiler, backend, passes, seeds, out, resume, interval, overrides } => {
            let saved = out.join(commands::CONFIG_FILE);
            let base = config.or_else(|| (resume && saved.exists()).then_some(saved));
            let cfg = overrides::load_config(base.as_deref(), &overrides)?;
            let run = commands::CampaignRun { cfg, compiler, backend, passes, seeds, out, resume, interval: commands::interval(interval)? };
            commands::campaign(&run)
        }
        Command::Triage(args) => commands::triage(&args),
        Command::Report { campaign, compare, coverage, interval, out } => {
            let out = out.unwrap_or_else(|| campaign.join("report"));
            commands::report(&campaign, &compare, coverage.as_deref(), commands::interval(interval)?, &out)
        }
        Command::FaultlineGen(args) => commands::faultline_gen(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
