//! Command-line entry point. [`run`] parses arguments, dispatches to a
//! subcommand and maps failures to exit codes: 0 success, 1 usage error,
//! 2 data error.

mod commands;
mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::eval::EvalError;
use crate::lexicon::LexiconError;
use crate::model::{FakeFlowConfig, ModelError};
use crate::report::ReportError;
use crate::tensor::TensorError;
use crate::train::{TrainConfig, TrainError};

pub use output::{Manifest, RunOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Environment variable naming the default lexicon manifest.
pub const LEXICONS_ENV: &str = "FAKEFLOW_LEXICONS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LexiconError> for CliError {
    fn from(e: LexiconError) -> Self {
        match e {
            LexiconError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Usage(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::UnsupportedMode(_) => CliError::Usage(e.to_string()),
            ModelError::Tensor(t) => t.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Usage(_) => CliError::Usage(e.to_string()),
            EvalError::Trial(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Usage(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Tensor(t) => t.into(),
            TrainError::Eval(v) => v.into(),
            TrainError::Io(io) => io.into(),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Corpus(c) => c.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fakeflow",
    version,
    about = "Fake news detection from the flow of affective information across article segments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge source lists, project domain labels onto articles and sample a corpus.
    BuildDataset(commands::BuildDatasetArgs),
    /// Write per-segment affect features for every article.
    ExtractFeatures(commands::ExtractArgs),
    /// Train one model with early stopping.
    Train(commands::TrainArgs),
    /// Random hyperparameter search.
    Search(commands::SearchArgs),
    /// Pick the number of segments on validation data.
    SelectN(commands::SelectNArgs),
    /// Score a trained model on a labelled corpus.
    Evaluate(commands::EvaluateArgs),
    /// Train on each year and test on every other year.
    CrossYear(commands::CrossYearArgs),
    /// McNemar test between two prediction files.
    Mcnemar(commands::McnemarArgs),
    /// Per-class flow statistics and emotion highlighting.
    Analyze(commands::AnalyzeArgs),
    /// Per-segment attention profiles of a trained model.
    Attention(commands::AttentionArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BuildDataset(_) => "build-dataset",
            Command::ExtractFeatures(_) => "extract-features",
            Command::Train(_) => "train",
            Command::Search(_) => "search",
            Command::SelectN(_) => "select-n",
            Command::Evaluate(_) => "evaluate",
            Command::CrossYear(_) => "cross-year",
            Command::Mcnemar(_) => "mcnemar",
            Command::Analyze(_) => "analyze",
            Command::Attention(_) => "attention",
        }
    }
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (splits, initialization, shuffling, dropout, search).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for artifacts and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print a machine-readable JSON summary on standard output.
    #[arg(long)]
    pub json: bool,
}

/// Corpus, lexicons and segmentation.
#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Article corpus (JSON Lines, or CSV by extension).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Lexicon manifest (TOML). Defaults to $FAKEFLOW_LEXICONS.
    #[arg(long)]
    pub lexicons: Option<PathBuf>,
    #[arg(long)]
    pub n_segments: Option<usize>,
    #[arg(long)]
    pub max_seg_len: Option<usize>,
}

/// Model hyperparameters.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// full, topic_only or affect_only.
    #[arg(long)]
    pub mode: Option<String>,
    /// Pretrained word vectors (text format).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Keep the embedding table fixed during training.
    #[arg(long)]
    pub freeze_embeddings: bool,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// selu, relu, tanh or elu.
    #[arg(long)]
    pub activation: Option<String>,
    /// adam, adadelta, rmsprop or sgd.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub gru_units: Option<usize>,
    /// Comma-separated CNN filter widths.
    #[arg(long, value_delimiter = ',')]
    pub filter_widths: Option<Vec<usize>>,
    #[arg(long)]
    pub filter_count: Option<usize>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub topic_dense: Option<usize>,
    #[arg(long)]
    pub final_dense: Option<usize>,
}

/// Training loop settings.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// val_macro_f1 or val_loss.
    #[arg(long)]
    pub monitor: Option<String>,
    /// Share of the training pool held out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Minimum token frequency for a vocabulary entry.
    #[arg(long)]
    pub min_count: Option<usize>,
}

/// Fully resolved configuration of one run. Read from `--config`, then
/// overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicons: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub seed: u64,
    pub val_fraction: f64,
    pub min_count: usize,
    pub model: FakeFlowConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            lexicons: None,
            embeddings: None,
            seed: 0,
            val_fraction: 0.2,
            min_count: 1,
            model: FakeFlowConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse_flag<T: std::str::FromStr<Err = String>>(value: &Option<String>) -> Result<Option<T>, CliError> {
    value.as_deref().map(str::parse).transpose().map_err(CliError::Usage)
}

fn require_existing(path: &Option<PathBuf>, what: &str) -> Result<(), CliError> {
    match path {
        Some(p) if !p.exists() => Err(CliError::Usage(format!("{what} `{}` does not exist", p.display()))),
        _ => Ok(()),
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config `{}`: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config `{}`: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Config file, then flags, then the lexicon environment variable for a
    /// still-missing lexicon path.
    pub fn resolve(
        common: &CommonArgs,
        data: Option<&DataArgs>,
        model: Option<&ModelArgs>,
        train: Option<&TrainFlags>,
    ) -> Result<Self, CliError> {
        let mut run = match &common.config {
            Some(p) => Self::from_toml_file(p)?,
            None => Self::default(),
        };
        if let Some(seed) = common.seed {
            run.seed = seed;
        }
        if let Some(d) = data {
            run.corpus = d.corpus.clone().or(run.corpus);
            run.lexicons = d.lexicons.clone().or(run.lexicons);
            if let Some(n) = d.n_segments {
                run.model.n_segments = n;
            }
            if let Some(l) = d.max_seg_len {
                run.model.max_seg_len = l;
            }
        }
        if run.lexicons.is_none() {
            run.lexicons = std::env::var_os(LEXICONS_ENV).map(PathBuf::from);
        }
        if let Some(m) = model {
            let c = &mut run.model;
            if let Some(mode) = parse_flag(&m.mode)? {
                c.mode = mode;
            }
            run.embeddings = m.embeddings.clone().or(run.embeddings);
            if let Some(v) = m.embed_dim {
                c.embed_dim = v;
            }
            if m.freeze_embeddings {
                c.trainable_embeddings = false;
            }
            if let Some(v) = m.dropout {
                c.dropout_rate = v;
            }
            if let Some(v) = parse_flag(&m.activation)? {
                c.activation = v;
            }
            if let Some(v) = parse_flag(&m.optimizer)? {
                c.optimizer = v;
            }
            if let Some(v) = m.gru_units {
                c.gru_units = v;
                c.fused_dense_dim = 2 * v;
            }
            if let Some(v) = &m.filter_widths {
                c.cnn_filter_widths = v.clone();
            }
            if let Some(v) = m.filter_count {
                c.cnn_filter_count = v;
            }
            if let Some(v) = m.pool_size {
                c.pool_size = v;
            }
            if let Some(v) = m.topic_dense {
                c.topic_dense_dim = v;
            }
            if let Some(v) = m.final_dense {
                c.final_dense_dim = v;
            }
        }
        if let Some(t) = train {
            let c = &mut run.train;
            if let Some(v) = t.epochs {
                c.max_epochs = v;
            }
            if let Some(v) = t.patience {
                c.patience = v;
            }
            if let Some(v) = t.batch_size {
                c.batch_size = v;
            }
            if t.learning_rate.is_some() {
                c.learning_rate = t.learning_rate;
            }
            if let Some(v) = parse_flag(&t.monitor)? {
                c.monitor = v;
            }
            if let Some(v) = t.val_fraction {
                run.val_fraction = v;
            }
            if let Some(v) = t.min_count {
                run.min_count = v;
            }
        }
        run.train.seed = run.seed;
        run.train.validate()?;
        if !(0.0..1.0).contains(&run.val_fraction) {
            return Err(CliError::Usage(format!("val_fraction {} outside [0, 1)", run.val_fraction)));
        }
        require_existing(&run.corpus, "corpus")?;
        require_existing(&run.lexicons, "lexicon manifest")?;
        require_existing(&run.embeddings, "embeddings file")?;
        Ok(run)
    }

    pub fn corpus_path(&self) -> Result<&Path, CliError> {
        self.corpus
            .as_deref()
            .ok_or_else(|| CliError::Usage("no corpus given (use --corpus or `corpus` in the config)".into()))
    }

    pub fn lexicons_path(&self) -> Result<&Path, CliError> {
        self.lexicons.as_deref().ok_or_else(|| {
            CliError::Usage(format!(
                "no lexicon manifest given (use --lexicons, `lexicons` in the config, or ${LEXICONS_ENV})"
            ))
        })
    }
}

/// Where a command's artifacts, console output and provenance go.
pub struct Context<'a> {
    pub command: &'static str,
    pub argv: Vec<String>,
    pub json: bool,
    pub out: Option<PathBuf>,
    pub stdout: &'a mut dyn Write,
}

impl Context<'_> {
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(self.command))
    }

    /// Prints `summary` as JSON in `--json` mode and `text` otherwise.
    pub fn emit<T: Serialize>(&mut self, summary: &T, text: &str) -> Result<(), CliError> {
        if self.json {
            writeln!(self.stdout, "{}", serde_json::to_string_pretty(summary)?)?;
        } else {
            write!(self.stdout, "{text}")?;
        }
        Ok(())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let argv: Vec<String> = std::iter::once("fakeflow".to_string())
        .chain(args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()))
        .collect();
    match commands::dispatch(cli.command, argv, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
