use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use super::{CliError, CommonArgs, Context, DataArgs, ModelArgs, RunConfig, RunOutput, TrainFlags};
use crate::corpus::{
    assemble_test_set, build_vocabulary, load_corpus, load_source_lists, merge_source_lists, project_and_sample,
    segment, split_train_val, tokenize, CorpusError, CorpusFormat, Label, LabelMapping, RawArticle,
    SampleConfig, SplitHint, TokenizedDocument, Vocabulary,
};
use crate::eval::{cross_year, majority_baseline, mcnemar, CrossYearMatrix, EvalError, EvaluationReport};
use crate::lexicon::{extract_affect, feature_index, feature_names, load_lexicon_set, LexiconSet};
use crate::model::{encode_articles, EncodedDocument, FakeFlowConfig, FakeFlowModel};
use crate::report::{
    attention_profile, emit_plot_data, flow_statistics_from_articles, highlight_emotions, Aggregation, Artifact,
    PlotData,
};
use crate::tensor::embeddings::read_word_vectors;
use crate::train::{
    evaluate_model, random_search_with, select_n_segments_with, train, Evaluation, SearchSpace, TrainError,
};

pub(super) fn dispatch(command: super::Command, argv: Vec<String>, stdout: &mut dyn Write) -> Result<(), CliError> {
    use super::Command as C;
    let name = command.name();
    let common = match &command {
        C::BuildDataset(a) => &a.common,
        C::ExtractFeatures(a) => &a.common,
        C::Train(a) => &a.common,
        C::Search(a) => &a.common,
        C::SelectN(a) => &a.common,
        C::Evaluate(a) => &a.common,
        C::CrossYear(a) => &a.common,
        C::Mcnemar(a) => &a.common,
        C::Analyze(a) => &a.common,
        C::Attention(a) => &a.common,
    }
    .clone();
    let mut ctx = Context {
        command: name,
        argv,
        json: common.json,
        out: common.out.clone(),
        stdout,
    };
    match command {
        C::BuildDataset(a) => build_dataset(&mut ctx, a),
        C::ExtractFeatures(a) => extract_features(&mut ctx, a),
        C::Train(a) => train_command(&mut ctx, a),
        C::Search(a) => search(&mut ctx, a),
        C::SelectN(a) => select_n(&mut ctx, a),
        C::Evaluate(a) => evaluate(&mut ctx, a),
        C::CrossYear(a) => cross_year_command(&mut ctx, a),
        C::Mcnemar(a) => mcnemar_command(&mut ctx, a),
        C::Analyze(a) => analyze(&mut ctx, a),
        C::Attention(a) => attention(&mut ctx, a),
    }
}

// Argument structs. Shared option groups are folded into `RunConfig`; the
// remaining command-specific fields are serialized into the manifest.

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildDatasetArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    /// Source list CSV with header `domain,list,category`.
    #[arg(long)]
    pub sources: PathBuf,
    /// Crawled articles (JSON Lines or CSV) with a `domain` field.
    #[arg(long)]
    pub articles: PathBuf,
    /// TOML table mapping (list, category) to real, fake or drop.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub max_per_domain: usize,
    #[arg(long, default_value_t = 30)]
    pub min_words: usize,
    /// Manually verified test articles; enables test-set assembly.
    #[arg(long)]
    pub annotated_test: Option<PathBuf>,
    /// Real articles moved from the sampled pool into the test set.
    #[arg(long, default_value_t = 0)]
    pub real_from_train: usize,
    /// Leave the moved real articles in the training pool as well.
    #[arg(long)]
    pub keep_in_train: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExtractArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub train: TrainFlags,
    /// Extra labelled test corpus scored after training.
    #[arg(long)]
    pub test_corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub train: TrainFlags,
    #[arg(long, default_value_t = 35)]
    pub trials: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectNArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub train: TrainFlags,
    /// Comma-separated segment counts.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,8,10,15,20")]
    pub candidates: Vec<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub data: DataArgs,
    /// Checkpoint written by `train` or `search`.
    #[arg(long)]
    pub model: PathBuf,
    /// Vocabulary file; defaults to `vocab.json` beside the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Training corpus whose most frequent label gives a majority baseline.
    #[arg(long)]
    pub majority_from: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CrossYearArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub train: TrainFlags,
    /// Average an existing accuracy matrix (CSV: header of test years, one
    /// row per train year) instead of training.
    #[arg(long)]
    pub from_matrix: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct McnemarArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    /// Gold labels: one per line, or a CSV with a `gold` column.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predictions of system A: one per line, or a CSV with a `pred` column.
    #[arg(long)]
    pub a: PathBuf,
    /// Predictions of system B.
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub data: DataArgs,
    /// Comma-separated features for the flow curve.
    #[arg(long, value_delimiter = ',', default_value = "fear")]
    pub features: Vec<String>,
    /// Article id to highlight; repeatable.
    #[arg(long = "highlight")]
    pub highlight: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttentionArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Article id to export as a bar CSV; repeatable. Defaults to the first article.
    #[arg(long = "id")]
    pub ids: Vec<String>,
    /// Average attention rows instead of columns.
    #[arg(long)]
    pub rows: bool,
}

// Shared helpers.

fn options<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn load_articles(path: &Path) -> Result<Vec<RawArticle>, CliError> {
    let articles = load_corpus(path, CorpusFormat::from_path(path))?;
    if articles.is_empty() {
        return Err(CorpusError::EmptyCorpus.into());
    }
    Ok(articles)
}

fn load_lexicons(run: &RunConfig) -> Result<LexiconSet, CliError> {
    Ok(load_lexicon_set(run.lexicons_path()?)?)
}

fn tokenize_all(articles: &[RawArticle]) -> Result<Vec<TokenizedDocument>, CliError> {
    articles
        .iter()
        .map(|a| tokenize(&a.text).map_err(|e| CliError::Data(format!("article `{}`: {e}", a.id))))
        .collect()
}

fn vocabulary(articles: &[RawArticle], min_count: usize) -> Result<Vocabulary, CliError> {
    Ok(build_vocabulary(&tokenize_all(articles)?, min_count)?)
}

fn encode(articles: &[RawArticle], vocab: &Vocabulary, lex: &LexiconSet, cfg: &FakeFlowConfig) -> Result<Vec<EncodedDocument>, CliError> {
    Ok(encode_articles(articles, vocab, lex, cfg.n_segments, cfg.max_seg_len)?)
}

/// Training pool split into train and validation parts, plus articles
/// marked as test.
struct Splits {
    train: Vec<RawArticle>,
    val: Vec<RawArticle>,
    test: Vec<RawArticle>,
}

fn split_corpus(run: &RunConfig, articles: Vec<RawArticle>) -> Result<Splits, CliError> {
    let (test, pool): (Vec<RawArticle>, Vec<RawArticle>) =
        articles.into_iter().partition(|a| a.split_hint == Some(SplitHint::Test));
    let (train, val) = split_train_val(&pool, run.val_fraction, run.seed)?;
    if train.is_empty() || val.is_empty() {
        return Err(CliError::Usage(format!(
            "split gave {} training and {} validation articles",
            train.len(),
            val.len()
        )));
    }
    Ok(Splits { train, val, test })
}

/// Builds models for one vocabulary, loading pretrained vectors when configured.
struct ModelBuilder {
    vocab: Vocabulary,
    embeddings: Option<HashMap<String, Vec<f64>>>,
}

impl ModelBuilder {
    fn new(run: &RunConfig, vocab: &Vocabulary) -> Result<Self, CliError> {
        let embeddings = match &run.embeddings {
            Some(path) if run.model.mode.uses_topic() => {
                let wanted: HashSet<String> = vocab.words().iter().cloned().collect();
                let (dim, vectors) = read_word_vectors(BufReader::new(File::open(path)?), Some(&wanted))?;
                if dim != run.model.embed_dim {
                    return Err(CliError::Usage(format!(
                        "embeddings have {dim} dimensions but embed_dim is {}",
                        run.model.embed_dim
                    )));
                }
                Some(vectors)
            }
            _ => None,
        };
        Ok(Self {
            vocab: vocab.clone(),
            embeddings,
        })
    }

    fn build(&self, config: FakeFlowConfig, seed: u64) -> Result<FakeFlowModel, TrainError> {
        let mut model = FakeFlowModel::new(config, seed)?;
        if let Some(vectors) = &self.embeddings {
            let replaced = model.load_embeddings(&self.vocab, vectors)?;
            log::info!("loaded {replaced} of {} pretrained vectors", self.vocab.size());
        }
        Ok(model)
    }
}

fn model_config(run: &RunConfig, vocab: &Vocabulary) -> FakeFlowConfig {
    FakeFlowConfig {
        vocab_size: vocab.size(),
        ..run.model.clone()
    }
}

#[derive(Serialize)]
struct SplitReport {
    n_documents: usize,
    loss: f64,
    metrics: EvaluationReport,
}

impl SplitReport {
    fn new(eval: &Evaluation, n: usize) -> Self {
        Self {
            n_documents: n,
            loss: eval.loss,
            metrics: eval.report.clone(),
        }
    }
}

fn predictions_csv(docs: &[EncodedDocument], eval: &Evaluation) -> String {
    let mut out = String::from("id,gold,pred,p_real,p_fake\n");
    for ((doc, pred), p) in docs.iter().zip(&eval.predictions).zip(&eval.probabilities) {
        let gold = doc.label.map(|l| l.as_str()).unwrap_or("");
        let pred = Label::from_index(*pred).map(|l| l.as_str()).unwrap_or("");
        out.push_str(&format!("{},{gold},{pred},{},{}\n", csv_field(&doc.id), p[0], p[1]));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn metrics_line(name: &str, r: &EvaluationReport) -> String {
    format!(
        "{name}: accuracy {:.4}  weighted P {:.4} R {:.4} F1 {:.4}  macro F1 {:.4}  (n = {})\n",
        r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1, r.macro_f1, r.n_examples
    )
}

fn vocab_path(model: &Path, vocab: &Option<PathBuf>) -> PathBuf {
    vocab
        .clone()
        .unwrap_or_else(|| model.parent().unwrap_or(Path::new(".")).join("vocab.json"))
}

fn load_model(path: &Path, vocab: &Path) -> Result<(FakeFlowModel, Vocabulary), CliError> {
    let model = FakeFlowModel::load(BufReader::new(File::open(path)?))?;
    let text = fs::read_to_string(vocab)?;
    let vocab: Artifact<Vocabulary> = serde_json::from_str(&text)?;
    if vocab.payload.size() != model.config.vocab_size {
        return Err(CliError::Data(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.payload.size(),
            model.config.vocab_size
        )));
    }
    Ok((model, vocab.payload))
}

/// Articles as JSON Lines, the format `load_corpus` reads back.
fn corpus_jsonl(articles: &[RawArticle]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    for a in articles {
        serde_json::to_writer(&mut out, a)?;
        out.push(b'\n');
    }
    Ok(out)
}

// Commands.

fn build_dataset(ctx: &mut Context<'_>, args: BuildDatasetArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&args.common, None, None, None)?;
    let mapping = match &args.mapping {
        Some(p) => LabelMapping::from_toml_str(&fs::read_to_string(p)?)?,
        None => LabelMapping::default(),
    };
    let entries = load_source_lists(&args.sources)?;
    let merged = merge_source_lists(&entries, &mapping)?;
    let articles = load_articles(&args.articles)?;
    let sample_cfg = SampleConfig {
        max_per_domain: args.max_per_domain,
        min_words: args.min_words,
        seed: run.seed,
    };
    let sampled = project_and_sample(&articles, &merged.verdicts, &sample_cfg);
    let opts = options(&args);
    let mut out = RunOutput::create(&ctx.out_dir(), ctx.command, &run, &opts)?;
    out.write_json("domains.json", &merged)?;
    let (train_pool, test) = match &args.annotated_test {
        Some(p) => {
            let annotated = load_articles(p)?;
            assemble_test_set(&sampled.articles, &annotated, args.real_from_train, !args.keep_in_train, run.seed)?
        }
        None => (sampled.articles.clone(), Vec::new()),
    };
    out.write_bytes("corpus.jsonl", &corpus_jsonl(&train_pool)?)?;
    if args.annotated_test.is_some() {
        out.write_bytes("test.jsonl", &corpus_jsonl(&test)?)?;
    }
    #[derive(Serialize)]
    struct Summary {
        domains_labelled: usize,
        domains_conflicting: usize,
        entries_dropped: usize,
        articles_in: usize,
        articles_kept: usize,
        unknown_domain: usize,
        too_short: usize,
        test_articles: usize,
        per_domain: BTreeMap<String, usize>,
    }
    let summary = Summary {
        domains_labelled: merged.verdicts.len(),
        domains_conflicting: merged.conflicts.len(),
        entries_dropped: merged.dropped_entries,
        articles_in: articles.len(),
        articles_kept: train_pool.len(),
        unknown_domain: sampled.unknown_domain,
        too_short: sampled.too_short,
        test_articles: test.len(),
        per_domain: sampled.per_domain.clone(),
    };
    out.write_json("dataset_report.json", &summary)?;
    out.finish(ctx.argv.clone(), &run, opts)?;
    let text = format!(
        "{} labelled domains ({} conflicting), kept {} of {} articles, {} test articles\n",
        summary.domains_labelled, summary.domains_conflicting, summary.articles_kept, summary.articles_in, summary.test_articles
    );
    ctx.emit(&summary, &text)
}

fn extract_features(ctx: &mut Context<'_>, args: ExtractArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&args.common, Some(&args.data), None, None)?;
    let lex = load_lexicons(&run)?;
    let articles = load_articles(run.corpus_path()?)?;
    let opts = options(&args);
    let mut out = RunOutput::create(&ctx.out_dir(), ctx.command, &run, &opts)?;
    #[derive(Serialize)]
    struct Header<'a> {
        command: &'a str,
        config_hash: &'a str,
        n_segments: usize,
        feature_names: &'a [&'a str],
    }
    #[derive(Serialize)]
    struct Row<'a> {
        id: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        label: Option<Label>,
        values: &'a [[f64; crate::lexicon::NUM_FEATURES]],
    }
    let mut text = serde_json::to_string(&Header {
        command: ctx.command,
        config_hash: &out.provenance().config_hash,
        n_segments: run.model.n_segments,
        feature_names: feature_names(),
    })?;
    text.push('\n');
    for a in &articles {
        let seg = segment(&tokenize(&a.text)?, run.model.n_segments, run.model.max_seg_len)?;
        let m = extract_affect(&seg, &lex);
        text.push_str(&serde_json::to_string(&Row {
            id: &a.id,
            label: a.label,
            values: &m.values,
        })?);
        text.push('\n');
    }
    out.write_bytes("features.jsonl", text.as_bytes())?;
    out.finish(ctx.argv.clone(), &run, opts)?;
    let summary = serde_json::json!({ "articles": articles.len(), "n_segments": run.model.n_segments });
    ctx.emit(&summary, &format!("extracted features for {} articles\n", articles.len()))
}

fn train_command(ctx: &mut Context<'_>, args: TrainArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&args.common, Some(&args.data), Some(&args.model), Some(&args.train))?;
    if let Some(p) = &args.test_corpus {
        if !p.exists() {
            return Err(CliError::Usage(format!("test corpus `{}` does not exist", p.display())));
        }
    }
    let lex = load_lexicons(&run)?;
    let mut splits = split_corpus(&run, load_articles(run.corpus_path()?)?)?;
    if let Some(p) = &args.test_corpus {
        splits.test.extend(load_articles(p)?);
    }
    let vocab = vocabulary(&splits.train, run.min_count)?;
    let config = model_config(&run, &vocab);
    let train_docs = encode(&splits.train, &vocab, &lex, &config)?;
    let val_docs = encode(&splits.val, &vocab, &lex, &config)?;
    let test_docs = encode(&splits.test, &vocab, &lex, &config)?;
    let builder = ModelBuilder::new(&run, &vocab)?;
    let mut model = builder.build(config, run.seed)?;
    let mut result = train(&mut model, &train_docs, &val_docs, &run.train)?;
    result.checkpoint = Some("model.ckpt".into());
    let val = evaluate_model(&model, &val_docs)?;
    let test = if test_docs.is_empty() {
        None
    } else {
        Some(evaluate_model(&model, &test_docs)?)
    };

    let opts = options(&args);
    let mut out = RunOutput::create(&ctx.out_dir(), ctx.command, &run, &opts)?;
    out.write_bytes("model.ckpt", &model.to_bytes())?;
    out.write_json("vocab.json", &vocab)?;
    out.write_json("history.json", &result)?;
    #[derive(Serialize)]
    struct Report {
        best_epoch: usize,
        epochs_run: usize,
        validation: SplitReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        test: Option<SplitReport>,
    }
    let report = Report {
        best_epoch: result.best_epoch,
        epochs_run: result.epochs_run,
        validation: SplitReport::new(&val, val_docs.len()),
        test: test.as_ref().map(|t| SplitReport::new(t, test_docs.len())),
    };
    out.write_json("report.json", &report)?;
    out.write_csv("predictions_val.csv", &predictions_csv(&val_docs, &val))?;
    if let Some(t) = &test {
        out.write_csv("predictions_test.csv", &predictions_csv(&test_docs, t))?;
    }
    out.finish(ctx.argv.clone(), &run, opts)?;
    let mut text = format!(
        "trained {} epochs (best {}), {} train / {} validation / {} test articles\n",
        result.epochs_run,
        result.best_epoch,
        train_docs.len(),
        val_docs.len(),
        test_docs.len()
    );
    text.push_str(&metrics_line("validation", &val.report));
    if let Some(t) = &test {
        text.push_str(&metrics_line("test", &t.report));
    }
    ctx.emit(&report, &text)
}

fn search(ctx: &mut Context<'_>, args: SearchArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&args.common, Some(&args.data), Some(&args.model), Some(&args.train))?;
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    let lex = load_lexicons(&run)?;
    let splits = split_corpus(&run, load_articles(run.corpus_path()?)?)?;
    let vocab = vocabulary(&splits.train, run.min_count)?;
    let base = model_config(&run, &vocab);
    let train_docs = encode(&splits.train, &vocab, &lex, &base)?;
    let val_docs = encode(&splits.val, &vocab, &lex, &base)?;
    let builder = ModelBuilder::new(&run, &vocab)?;
    let mut log = Vec::new();
    let (mut outcome, best_model) = random_search_with(
        &SearchSpace::default(),
        args.trials,
        &base,
        &run.train,
        &train_docs,
        &val_docs,
        run.seed,
        Some(&mut log),
        &mut |c, s| builder.build(c, s),
    )?;
    let best_index = outcome.best_index;
    let ckpt = format!("trial-{best_index:02}-epoch-{:02}.ckpt", outcome.best().best_epoch);
    outcome.trials[best_index].checkpoint = Some(ckpt.clone());

    let opts = options(&args);
    let mut out = RunOutput::create(&ctx.out_dir(), ctx.command, &run, &opts)?;
    let mut trials = serde_json::to_vec(&serde_json::json!({
        "command": ctx.command,
        "config_hash": out.provenance().config_hash,
    }))?;
    trials.push(b'\n');
    trials.extend_from_slice(&log);
    out.write_bytes("trials.jsonl", &trials)?;
    out.write_bytes(&ckpt, &best_model.to_bytes())?;
    out.write_json("vocab.json", &vocab)?;
    out.write_json("search.json", &outcome)?;
    out.finish(ctx.argv.clone(), &run, opts)?;
    let best = outcome.best();
    let summary = serde_json::json!({
        "trials": outcome.trials.len(),
        "best_trial": best_index,
        "best_val_metric": best.best_val_metric,
        "checkpoint": ckpt,
        "config": best.config,
    });
    let text = format!(
        "{} trials; best trial {best_index} with {} {:.4} (checkpoint {ckpt})\n",
        outcome.trials.len(),
        run.train.monitor.as_str(),
        best.best_val_metric
    );
    ctx.emit(&summary, &text)
}

fn select_n(ctx: &mut Context<'_>, args: SelectNArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&args.common, Some(&args.data), Some(&args.model), Some(&args.train))?;
    let lex = load_lexicons(&run)?;
    let splits = split_corpus(&run, load_articles(run.corpus_path()?)?)?;
    let vocab = vocabulary(&splits.train, run.min_count)?;
    let base = model_config(&run, &vocab);
    let builder = ModelBuilder::new(&run, &vocab)?;
    let selection = select_n_segments_with(
        &args.candidates,
        &base,
        &run.train,
        |n, l| {
            let enc = |a: &[RawArticle]| encode_articles(a, &vocab, &lex, n, l).map_err(|e| TrainError::Usage(e.to_string()));
            Ok((enc(&splits.train)?, enc(&splits.val)?))
        },
        &mut |c, s| builder.build(c, s),
    )?;
    let opts = options(&args);
    let mut out = RunOutput::create(&ctx.out_dir(), ctx.command, &run, &opts)?;
    let csv = emit_plot_data(&PlotData::NSweep(&selection.results), out.provenance())?;
    out.write_bytes("n_sweep.csv", csv.as_bytes())?;
    out.write_json("selection.json", &selection)?;
    out.finish(ctx.argv.clone(), &run, opts)?;
    let mut text = String::from("N\taccuracy\tmacro F1\n");
    for r in &selection.results {
        text.push_str(&format!("{}\t{:.4}\t{:.4}\n", r.n_segments, r.val_accuracy, r.val_macro_f1));
    }
    text.push_str(&format!("best N = {}\n", selection.best_n));
    ctx.emit(&selection, &text)
}

fn evaluate(ctx: &mut Context<'_>, args: EvaluateArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&args.common, Some(&args.data), None, None)?;
    let (model, vocab) = load_model(&args.model, &vocab_path(&args.model, &args.vocab))?;
    let lex = load_lexicons(&run)?;
    let articles = load_articles(run.corpus_path()?)?;
    let docs = encode(&articles, &vocab, &lex, &model.config)?;
    let eval = evaluate_model(&model, &docs)?;
    let baseline = match &args.majority_from {
        Some(p) => {
            let train_labels: Vec<usize> = load_articles(p)?.iter().filter_map(|a| a.label.map(Label::index)).collect();
            let gold: Vec<usize> = docs.iter().filter_map(|d| d.label.map(Label::index)).collect();
            Some(majority_baseline(&train_labels, &gold, model.config.n_classes)?)
        }
        None => None,
    };
    let opts = options(&args);
    let mut out = RunOutput::create(&ctx.out_dir(), ctx.command, &run, &opts)?;
    #[derive(Serialize)]
    struct Report {
        model: SplitReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        majority_baseline: Option<EvaluationReport>,
    }
    let report = Report {
        model: SplitReport::new(&eval, docs.len()),
        majority_baseline: baseline,
    };
    out.write_json("report.json", &report)?;
    out.write_csv("predictions.csv", &predictions_csv(&docs, &eval))?;
    out.finish(ctx.argv.clone(), &run, opts)?;
    let mut text = metrics_line("model", &eval.report);
    if let Some(b) = &report.majority_baseline {
        text.push_str(&metrics_line("majority class", b));
    }
    ctx.emit(&report, &text)
}

fn parse_matrix(path: &Path) -> Result<CrossYearMatrix, CliError> {
    let text = fs::read_to_string(path)?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let years: Vec<i32> = headers
        .iter()
        .skip(1)
        .map(|h| h.trim().parse().map_err(|_| bad(format!("bad year `{h}`"))))
        .collect::<Result<_, _>>()?;
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.get(0).is_some_and(|c| c.trim().eq_ignore_ascii_case("average")) {
            continue;
        }
        let row: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse().map_err(|_| bad(format!("bad value `{v}`"))))
            .collect::<Result<_, _>>()?;
        values.push(row);
    }
    Ok(CrossYearMatrix::from_values(years, values)?)
}

fn cross_year_command(ctx: &mut Context<'_>, args: CrossYearArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&args.common, Some(&args.data), Some(&args.model), Some(&args.train))?;
    let matrix = match &args.from_matrix {
        Some(p) => parse_matrix(p)?,
        None => {
            let lex = load_lexicons(&run)?;
            let articles = load_articles(run.corpus_path()?)?;
            let mut by_year: BTreeMap<i32, Vec<RawArticle>> = BTreeMap::new();
            let mut undated = 0;
            for a in articles {
                match a.year {
                    Some(y) => by_year.entry(y).or_default().push(a),
                    None => undated += 1,
                }
            }
            if undated > 0 {
                log::warn!("{undated} articles without a year ignored");
            }
            cross_year(&by_year, |train_year, train_items, test_year, test_items| {
                let trial = || -> Result<f64, CliError> {
                    let splits = split_corpus(&run, train_items.to_vec())?;
                    let vocab = vocabulary(&splits.train, run.min_count)?;
                    let config = model_config(&run, &vocab);
                    let tr = encode(&splits.train, &vocab, &lex, &config)?;
                    let va = encode(&splits.val, &vocab, &lex, &config)?;
                    let te = encode(test_items, &vocab, &lex, &config)?;
                    let builder = ModelBuilder::new(&run, &vocab)?;
                    let mut model = builder.build(config, run.seed)?;
                    train(&mut model, &tr, &va, &run.train)?;
                    Ok(evaluate_model(&model, &te)?.report.accuracy)
                };
                trial().map_err(|e| EvalError::Trial(format!("train {train_year} / test {test_year}: {e}")))
            })?
        }
    };
    let opts = options(&args);
    let mut out = RunOutput::create(&ctx.out_dir(), ctx.command, &run, &opts)?;
    out.write_csv("cross_year.csv", &matrix.to_csv())?;
    out.write_json("cross_year.json", &matrix)?;
    out.finish(ctx.argv.clone(), &run, opts)?;
    ctx.emit(&matrix, &matrix.to_csv())
}

fn read_labels(path: &Path, column: &str) -> Result<Vec<usize>, CliError> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).collect();
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let parse = |s: &str| s.parse::<Label>().map(Label::index).map_err(bad);
    match lines.first() {
        Some(first) if first.contains(',') => {
            let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
            let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
            let idx = headers
                .iter()
                .position(|h| h == column)
                .ok_or_else(|| bad(format!("no `{column}` column")))?;
            rdr.records()
                .map(|r| {
                    let r = r.map_err(|e| bad(e.to_string()))?;
                    parse(r.get(idx).unwrap_or(""))
                })
                .collect()
        }
        _ => lines.iter().map(|l| parse(l)).collect(),
    }
}

fn mcnemar_command(ctx: &mut Context<'_>, args: McnemarArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&args.common, None, None, None)?;
    for p in [&args.gold, &args.a, &args.b] {
        if !p.exists() {
            return Err(CliError::Usage(format!("`{}` does not exist", p.display())));
        }
    }
    let gold = read_labels(&args.gold, "gold")?;
    let a = read_labels(&args.a, "pred")?;
    let b = read_labels(&args.b, "pred")?;
    let result = mcnemar(&gold, &a, &b)?;
    if ctx.out.is_some() {
        let opts = options(&args);
        let mut out = RunOutput::create(&ctx.out_dir(), ctx.command, &run, &opts)?;
        out.write_json("mcnemar.json", &result)?;
        out.finish(ctx.argv.clone(), &run, opts)?;
    }
    let text = format!(
        "b = {}  c = {}  statistic = {:.4}  significant at 0.05: {}\n",
        result.b,
        result.c,
        result.statistic,
        if result.significant_at_05 { "yes" } else { "no" }
    );
    ctx.emit(&result, &text)
}

fn analyze(ctx: &mut Context<'_>, args: AnalyzeArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&args.common, Some(&args.data), None, None)?;
    if let Some(bad) = args.features.iter().find(|f| feature_index(f).is_none()) {
        return Err(CliError::Usage(format!("unknown feature `{bad}`")));
    }
    let lex = load_lexicons(&run)?;
    let articles = load_articles(run.corpus_path()?)?;
    let stats = flow_statistics_from_articles(&articles, run.model.n_segments, run.model.max_seg_len, &lex)?;
    let opts = options(&args);
    let mut out = RunOutput::create(&ctx.out_dir(), ctx.command, &run, &opts)?;
    out.write_json("flow_statistics.json", &stats)?;
    let features: Vec<&str> = args.features.iter().map(String::as_str).collect();
    let csv = emit_plot_data(
        &PlotData::FlowCurve {
            stats: &stats,
            features: &features,
        },
        out.provenance(),
    )?;
    out.write_bytes("flow_curve.csv", csv.as_bytes())?;
    for (k, id) in args.highlight.iter().enumerate() {
        let article = articles
            .iter()
            .find(|a| &a.id == id)
            .ok_or_else(|| CliError::Usage(format!("no article with id `{id}`")))?;
        let doc = tokenize(&article.text)?;
        let annotation = highlight_emotions(&doc, &lex);
        out.write_json(
            &format!("highlight-{k}.json"),
            &serde_json::json!({ "document_id": id, "annotation": annotation }),
        )?;
        let html = annotation.to_html(&doc, out.provenance());
        out.write_bytes(&format!("highlight-{k}.html"), html.as_bytes())?;
    }
    out.finish(ctx.argv.clone(), &run, opts)?;
    let mut text = format!("flow statistics over N = {} segments\n", stats.n_segments);
    for (label, class) in &stats.classes {
        for f in &features {
            let ff = class.feature(f).expect("validated feature");
            text.push_str(&format!(
                "{label:5} {f:14} first {:.4}  last {:.4}  all {:.4}  std {:.4}\n",
                ff.mean_first, ff.mean_last, ff.mean_all, ff.std_across
            ));
        }
    }
    for m in &stats.missing {
        text.push_str(&format!("{m}: no documents\n"));
    }
    ctx.emit(&stats, &text)
}

fn attention(ctx: &mut Context<'_>, args: AttentionArgs) -> Result<(), CliError> {
    let run = RunConfig::resolve(&args.common, Some(&args.data), None, None)?;
    let (model, vocab) = load_model(&args.model, &vocab_path(&args.model, &args.vocab))?;
    if !model.config.mode.uses_topic() {
        return Err(CliError::Usage(format!(
            "{} models have no attention weights",
            model.config.mode.as_str()
        )));
    }
    let lex = load_lexicons(&run)?;
    let articles = load_articles(run.corpus_path()?)?;
    let docs = encode(&articles, &vocab, &lex, &model.config)?;
    let aggregation = if args.rows { Aggregation::Rows } else { Aggregation::Columns };
    let profiles = docs
        .iter()
        .map(|d| Ok(attention_profile(d.id.clone(), &model.predict(d)?, aggregation)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    let opts = options(&args);
    let mut out = RunOutput::create(&ctx.out_dir(), ctx.command, &run, &opts)?;
    out.write_json("attention.json", &profiles)?;
    let wanted: Vec<String> = if args.ids.is_empty() {
        profiles.first().map(|p| p.document_id.clone()).into_iter().collect()
    } else {
        args.ids.clone()
    };
    for (k, id) in wanted.iter().enumerate() {
        let p = profiles
            .iter()
            .find(|p| &p.document_id == id)
            .ok_or_else(|| CliError::Usage(format!("no article with id `{id}`")))?;
        let csv = emit_plot_data(&PlotData::AttentionBar(p), out.provenance())?;
        out.write_bytes(&format!("attention-bar-{k}.csv"), csv.as_bytes())?;
    }
    out.finish(ctx.argv.clone(), &run, opts)?;
    let mut text = String::new();
    for p in profiles.iter().filter(|p| wanted.contains(&p.document_id)) {
        let w: Vec<String> = p.weights.iter().map(|w| format!("{w:.3}")).collect();
        text.push_str(&format!(
            "{}: predicted {} ({:.3}); weights [{}]\n",
            p.document_id,
            p.predicted_label.map(|l| l.as_str()).unwrap_or("?"),
            p.probability,
            w.join(", ")
        ));
    }
    ctx.emit(&profiles, &text)
}
