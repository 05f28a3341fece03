//! `multiway`: extract multi-way aligned examples from pivot-centric bitext, report
//! corpus statistics, derive direct pairs, build sampling schedules and augment new
//! corpora with known translations.
//!
//! Exit codes: 0 success, 1 data or I/O error, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use multiway_core::{LanguageId, NormalizationPolicy};

#[derive(Debug, Parser)]
#[command(
    name = "multiway",
    version,
    about,
    args_conflicts_with_subcommands = true
)]
struct Cli {
    /// Re-run the settings recorded in a run_config.json written by an earlier run.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

/// Effective settings of one run; echoed to `run_config.json` in the output directory.
#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Join the corpora of a manifest into a multi-way store.
    Extract(ExtractArgs),
    /// Arity histogram, per-language average arity, source overlap and pair counts.
    Stats(StatsArgs),
    /// Derive direct pair records for every language pair of every example.
    Pairs(PairsArgs),
    /// Generate a target-conditioned training schedule with target tokens.
    Schedule(ScheduleArgs),
    /// Turn a new bilingual corpus into multi-way examples using a base store.
    Augment(AugmentArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct NormalizationArgs {
    /// Skip Unicode NFC composition of join keys.
    #[arg(long)]
    pub no_nfc: bool,
    /// Keep leading and trailing whitespace in join keys.
    #[arg(long)]
    pub no_trim: bool,
    /// Keep internal whitespace runs in join keys.
    #[arg(long)]
    pub no_collapse: bool,
    /// Lowercase join keys.
    #[arg(long)]
    pub case_fold: bool,
}

impl NormalizationArgs {
    pub fn policy(&self) -> NormalizationPolicy {
        NormalizationPolicy {
            unicode_nfc: !self.no_nfc,
            trim: !self.no_trim,
            collapse_internal_whitespace: !self.no_collapse,
            case_fold: self.case_fold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    /// Group everything in memory.
    Memory,
    /// Spill to shard files and merge; memory bounded by shard size.
    Sharded,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExtractArgs {
    /// Corpus manifest (TOML).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, value_enum, default_value = "sharded")]
    pub mode: ModeArg,
    /// Number of spill shards in sharded mode.
    #[arg(long, default_value_t = 16)]
    pub shard_count: usize,
    /// Directory for spill files [default: system temp dir].
    #[arg(long, env = "MULTIWAY_SPILL_DIR")]
    pub spill_dir: Option<PathBuf>,
    /// Worker threads for shard grouping.
    #[arg(long, env = "MULTIWAY_WORKERS", default_value_t = 1)]
    pub workers: usize,
    /// Per-key pair cap used to report keys that `pairs` would truncate.
    #[arg(long, default_value_t = 10_000)]
    pub max_group_pairs: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub normalization: NormalizationArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StatsArgs {
    /// Store file written by `extract` or `augment`.
    #[arg(long)]
    pub store: PathBuf,
    /// Pivot language; read from the store's metadata sidecar when omitted.
    #[arg(long)]
    pub pivot: Option<LanguageId>,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PairsArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub pivot: Option<LanguageId>,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Cap on pair records derived from one key.
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_group_pairs: u64,
    /// Keys with fewer characters yield no pairs.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub min_key_chars: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeModeArg {
    /// D(l) = number of examples containing l.
    Examples,
    /// D(l) = number of derivable direct pairs with target l.
    DerivedPairs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub pivot: Option<LanguageId>,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Number of schedule records.
    #[arg(long)]
    pub draws: u64,
    #[arg(long)]
    pub seed: u64,
    /// Sampling temperature; 1 follows the data, large values approach uniform.
    #[arg(long)]
    pub temperature: f64,
    /// Restrict sampling to these target languages (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<LanguageId>>,
    /// JSON object of per-target sizes, e.g. {"de": 10, "fr": 3}; overrides --size-mode.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "examples")]
    pub size_mode: SizeModeArg,
    /// Worker threads for schedule generation.
    #[arg(long, env = "MULTIWAY_WORKERS", default_value_t = 1)]
    pub workers: usize,
    /// Also write compare.txt/compare.json: pair-based vs target-based marginals.
    #[arg(long)]
    pub compare: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AugmentArgs {
    /// Base store to take translations from.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub pivot: Option<LanguageId>,
    /// Manifest of the new bilingual corpora.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub normalization: NormalizationArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let command = match (cli.config, cli.command) {
        (Some(path), None) => match commands::load_config(&path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(1);
            }
        },
        (None, Some(c)) => c,
        _ => {
            eprintln!("error: give either a subcommand or --config FILE\n\nRun `multiway --help` for usage.");
            return ExitCode::from(2);
        }
    };
    match commands::run(&command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
