//! Command-line front end: argument parsing, config layering, run manifests
//! and the mapping from failures to exit codes.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::DataError;
use crate::evaluation::EvalError;
use crate::model::ModelError;
use crate::orthography::{LanguageId, OrthographyError};
use crate::tokenization::TokenizerError;
use crate::training::TrainingError;

pub use config::{AblateConfig, RunConfig};

pub const EXIT_OK: i32 = 0;
/// Anything not covered by a more specific code (I/O, numerical failure).
pub const EXIT_FAILURE: i32 = 1;
/// Bad command line; clap uses the same code.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_MISSING_CHECKPOINT: i32 = 4;
pub const EXIT_UNKNOWN_SCRIPT: i32 = 5;
/// Malformed or inconsistent input documents.
pub const EXIT_INPUT: i32 = 6;

/// Relative paths are resolved against this directory when it is set.
pub const DATA_DIR_ENV: &str = "ORTHOROBERTA_DATA_DIR";

/// Name of the manifest every command writes next to its artifacts.
pub const RUN_MANIFEST: &str = "run-manifest.conf";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("no checkpoint at {0}")]
    MissingCheckpoint(PathBuf),
    #[error("no Arabic-script text in input")]
    UnknownScript,
    #[error("input: {0}")]
    Input(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::MissingCheckpoint(_) => EXIT_MISSING_CHECKPOINT,
            CliError::UnknownScript => EXIT_UNKNOWN_SCRIPT,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<OrthographyError> for CliError {
    fn from(e: OrthographyError) -> Self {
        match e {
            OrthographyError::UnknownScript => CliError::UnknownScript,
            OrthographyError::Io(e) => e.into(),
            e => CliError::Input(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Spec(m) => CliError::Config(m),
            DataError::Orthography(e) => e.into(),
            DataError::Io(e) => e.into(),
            e => CliError::Input(e.to_string()),
        }
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::VocabTooSmall { .. } => CliError::Config(e.to_string()),
            TokenizerError::EmptyCorpus => CliError::Input(e.to_string()),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Config(m),
            ModelError::Orthography(e) => e.into(),
            ModelError::Tokenizer(e) => e.into(),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Config(m) => CliError::Config(m),
            TrainingError::EmptyCorpus => CliError::Input(e.to_string()),
            TrainingError::Model(e) => e.into(),
            TrainingError::Data(e) => e.into(),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(e) => e.into(),
            EvalError::Training(e) => e.into(),
            EvalError::Empty | EvalError::Class { .. } | EvalError::Unpaired(_) => CliError::Input(e.to_string()),
            e => CliError::Failed(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "orthoroberta", version, about = "Orthography-aware encoder training for Arabic-script text")]
pub struct Cli {
    /// Config file (`[section]` headers, `key = value` lines).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config value; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for every stage; applied last.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Base directory for relative paths.
    #[arg(long, global = true, env = DATA_DIR_ENV, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Strip markup, unify digits and normalize raw documents.
    Clean {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Language for lines that do not name one; detected otherwise.
        #[arg(long)]
        lang: Option<LanguageId>,
    },
    /// Generate the synthetic labeled corpus described by `[synth]`.
    Synth {
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the BPE and WordPiece models on a document file.
    TrainTokenizers {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-language pre-training from random initialization.
    Pretrain {
        #[arg(long)]
        input: PathBuf,
        /// Directory holding `bpe.vocab`, `bpe.merges` and `wp.vocab`.
        #[arg(long)]
        tokenizers: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the classifier heads on labeled documents.
    Finetune {
        #[arg(long)]
        input: PathBuf,
        /// Pre-trained checkpoint to start from.
        #[arg(long, conflicts_with = "tokenizers", required_unless_present = "tokenizers")]
        checkpoint: Option<PathBuf>,
        /// Start from random initialization with these tokenizers instead.
        #[arg(long)]
        tokenizers: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score labeled documents and write metrics and confusion matrices.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the ablation variants in `[ablate]` on a labeled corpus.
    Ablate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect the language of each text and classify it; reads stdin lines
    /// when no text is given.
    Classify {
        #[arg(long)]
        checkpoint: PathBuf,
        text: Vec<String>,
    },
    /// Render heatmaps and a summary for confusion-matrix CSVs in a directory.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Clean { .. } => "clean",
            Command::Synth { .. } => "synth",
            Command::TrainTokenizers { .. } => "train-tokenizers",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::Classify { .. } => "classify",
            Command::Report { .. } => "report",
        }
    }
}

/// Defaults, then the config file, then `--set`, then `--seed`.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(&resolve(cli.data_dir.as_deref(), path))?;
    }
    for s in &cli.set {
        cfg.set_dotted(s)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

/// Parses `args` (program name first). On failure clap's message has been
/// printed and the exit code is returned instead.
pub fn parse<I, T>(args: I) -> Result<Cli, i32>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        if e.use_stderr() {
            EXIT_USAGE
        } else {
            EXIT_OK
        }
    })
}

/// Runs a parsed command against stdout and returns the exit code.
pub fn run_parsed(cli: &Cli) -> i32 {
    match execute(cli, &mut std::io::stdout().lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// [`parse`] then [`run_parsed`].
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse(args) {
        Ok(cli) => run_parsed(&cli),
        Err(code) => code,
    }
}

/// Runs a parsed command, writing user-facing output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    log::info!("{} with effective config:\n{}", cli.command.name(), cfg.to_ini());
    commands::dispatch(cli, &cfg, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("orthoroberta").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.conf");
        std::fs::write(&file, "[finetune]\ngamma = 0.5\nlr = 0.01\n[pretrain]\nbeta = 0.25\n").unwrap();
        let f = file.to_str().unwrap();
        let cli = parse(&["--config", f, "--set", "finetune.gamma=0.1", "--seed", "9", "synth", "--output", "x"]);
        let cfg = effective_config(&cli).unwrap();
        assert_eq!(cfg.finetune.gamma, 0.1);
        assert_eq!(cfg.finetune.lr, 0.01);
        assert_eq!(cfg.pretrain.beta, 0.25);
        assert_eq!(cfg.pretrain.mask_rate, 0.15);
        assert_eq!((cfg.pretrain.seed, cfg.split.seed, cfg.synth.seed), (9, 9, 9));
    }

    #[test]
    fn error_categories_have_distinct_codes() {
        let codes = [
            CliError::Config(String::new()).exit_code(),
            CliError::MissingCheckpoint(PathBuf::new()).exit_code(),
            CliError::UnknownScript.exit_code(),
            CliError::Input(String::new()).exit_code(),
            CliError::Usage(String::new()).exit_code(),
            CliError::Failed(String::new()).exit_code(),
        ];
        let set: std::collections::BTreeSet<i32> = codes.iter().copied().collect();
        assert_eq!(set.len(), codes.len());
        assert!(!set.contains(&EXIT_OK));
        let nested: CliError = TrainingError::Model(ModelError::Orthography(OrthographyError::UnknownScript)).into();
        assert_eq!(nested.exit_code(), EXIT_UNKNOWN_SCRIPT);
    }

    #[test]
    fn relative_paths_follow_the_data_dir() {
        assert_eq!(resolve(Some(Path::new("/d")), Path::new("x")), PathBuf::from("/d/x"));
        assert_eq!(resolve(Some(Path::new("/d")), Path::new("/x")), PathBuf::from("/x"));
        assert_eq!(resolve(None, Path::new("x")), PathBuf::from("x"));
    }
}
