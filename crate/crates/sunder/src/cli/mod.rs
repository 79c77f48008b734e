//! The `sunder` command line: corpus generation, training, scoring, span
//! selection, annotation, metric evaluation, unlearning, the injection
//! attack, and the scoring benchmark.
//!
//! Every subcommand is a pure function of its input files, flags, and seed:
//! reports carry no timestamps or absolute paths, and all randomness fans
//! out from `--seed` through fixed-order sub-seeding, so reruns are
//! byte-identical. Exit codes: 0 success, 2 input error, 3 forgetting
//! threshold not reached, 4 annotation-client failure.

pub mod bench;
pub mod io;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::annotate::client::{ChatClient, HttpChatClient, RecordingClient, ReplayClient};
use crate::annotate::{self, AnnotationPromptConfig, FewshotExample, Provenance};
use crate::metrics::{
    self, mean_nll, EvalConfig, InstanceMetrics, LanguageModel, MetricReport, MetricSelection,
};
use crate::replay::ReplayModel;
use crate::select::{annotation_stats, select_online, AnnotationStats, OnlineSelectConfig};
use crate::seq::{Corpus, CorpusInstance, CorpusRole, SpanSet, TokenSequence};
use crate::synth::{self, subseed, SynthConfig};
use crate::toylm::{
    self, derive_threshold, inject_knowledge, unlearn_until_threshold, ForgettingThreshold,
    InjectPlacement, ToyLm, ToyLmConfig, TrainConfig, UnlearnConfig, UnlearnMode, UnlearnOutcome,
};
use crate::{Error, Result};

const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_THRESHOLD: i32 = 3;
pub const EXIT_CLIENT: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Client(_) | Error::FixtureMiss { .. } => EXIT_CLIENT,
        _ => EXIT_INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "sunder", version, about = "Selective unlearning and sensitive-span metrics for token-level language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/heldout/forget corpora with planted
    /// sensitive strings and exact ground-truth spans.
    GenCorpus(GenCorpusArgs),
    /// Train the toy language model on trace files.
    Train(TrainArgs),
    /// Fill per-token log-probabilities of traces under a trained model.
    Score(ScoreArgs),
    /// Select sensitive spans online from per-token log-probabilities.
    Select(SelectArgs),
    /// Annotate sensitive spans with the two-stage chat-model pipeline.
    Annotate(AnnotateArgs),
    /// Compare two annotation files over the same traces.
    Stats(StatsArgs),
    /// Evaluate extraction and memorization metrics over traces.
    Eval(EvalArgs),
    /// Unlearn a forget set until the forgetting threshold is reached.
    Unlearn(UnlearnArgs),
    /// Knowledge-injection attack: splice a common fact into the forget
    /// set, unlearn, and compare how much of the fact survives.
    Attack(AttackArgs),
    /// Benchmark sensitive-restricted scoring against full scoring.
    Bench(BenchArgs),
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenCorpus(args) => cmd_gen_corpus(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Score(args) => cmd_score(&args),
        Command::Select(args) => cmd_select(&args),
        Command::Annotate(args) => cmd_annotate(&args),
        Command::Stats(args) => cmd_stats(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Unlearn(args) => cmd_unlearn(&args),
        Command::Attack(args) => cmd_attack(&args),
        Command::Bench(args) => cmd_bench(&args),
    }
}

// ---------------------------------------------------------------------------
// gen-corpus

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Directory for train.jsonl, heldout.jsonl, forget.jsonl,
    /// forget.gold.jsonl, and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 24)]
    pub train: usize,
    #[arg(long, default_value_t = 8)]
    pub heldout: usize,
    #[arg(long, default_value_t = 8)]
    pub forget: usize,
    /// Instance length in tokens.
    #[arg(long, default_value_t = 200)]
    pub len: usize,
    /// Sentence pool size shared by all instances.
    #[arg(long, default_value_t = 10)]
    pub pool: usize,
    #[arg(long, default_value_t = 2)]
    pub min_spans: usize,
    #[arg(long, default_value_t = 4)]
    pub max_spans: usize,
    #[arg(long, default_value_t = 4)]
    pub span_min_len: usize,
    #[arg(long, default_value_t = 9)]
    pub span_max_len: usize,
    /// Plant only bare digit strings, no email-shaped ones.
    #[arg(long)]
    pub no_emails: bool,
    /// Fraction of held-out sentences drawn fresh instead of from the pool.
    #[arg(long, default_value_t = 0.5)]
    pub heldout_novel: f64,
    /// Extra sampling weight of the first pool sentence (common knowledge).
    #[arg(long, default_value_t = 0.25)]
    pub anchor_weight: f64,
    /// The anchor sentence planted at that weight.
    #[arg(long, default_value = "NORWAY IS OSLO")]
    pub anchor_text: String,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    version: &'a str,
    seed: u64,
    config: &'a SynthConfig,
    files: [&'a str; 4],
    /// Shared sentence pool; any entry works as a well-known "fact" for the
    /// attack subcommand.
    sentence_pool: &'a [String],
}

fn cmd_gen_corpus(args: &GenCorpusArgs) -> Result<i32> {
    if args.min_spans > args.max_spans || args.span_min_len > args.span_max_len {
        return Err(Error::input("span count/length ranges must be min <= max"));
    }
    if !(0.0..=1.0).contains(&args.heldout_novel) {
        return Err(Error::input("--heldout-novel must be in [0,1]"));
    }
    if !(0.0..1.0).contains(&args.anchor_weight) {
        return Err(Error::input("--anchor-weight must be in [0,1)"));
    }
    let cfg = SynthConfig {
        n_train: args.train,
        n_heldout: args.heldout,
        n_forget: args.forget,
        seq_len: args.len,
        sentence_pool: args.pool,
        spans_per_instance: (args.min_spans, args.max_spans),
        span_len: (args.span_min_len, args.span_max_len),
        emails: !args.no_emails,
        heldout_novel_frac: args.heldout_novel,
        anchor_weight: args.anchor_weight,
        anchor_text: args.anchor_text.clone(),
    };
    let synth = synth::generate(&cfg, args.seed)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::input(format!("cannot create {}: {e}", args.out_dir.display())))?;
    io::write_traces(&args.out_dir.join("train.jsonl"), &io::traces_from_corpus(&synth.train))?;
    io::write_traces(
        &args.out_dir.join("heldout.jsonl"),
        &io::traces_from_corpus(&synth.heldout),
    )?;
    io::write_traces(&args.out_dir.join("forget.jsonl"), &io::traces_from_corpus(&synth.forget))?;
    let gold: Vec<io::AnnotationFileRecord> = synth
        .forget
        .instances()
        .iter()
        .map(|inst| io::AnnotationFileRecord {
            id: inst.seq.id().to_owned(),
            spans: io::spans_to_pairs(inst.spans.as_ref().expect("forget instances carry spans")),
            ratings: None,
            provenance: Provenance::External,
        })
        .collect();
    io::write_annotations(&args.out_dir.join("forget.gold.jsonl"), &gold)?;
    io::write_json(
        &args.out_dir.join("manifest.json"),
        &ManifestFile {
            version: VERSION,
            seed: args.seed,
            config: &cfg,
            files: ["train.jsonl", "heldout.jsonl", "forget.jsonl", "forget.gold.jsonl"],
            sentence_pool: &synth.pool,
        },
    )?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Trace file(s) to train on; repeat to mix corpora (e.g. train + forget).
    #[arg(long, required = true)]
    pub corpus: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub vocab: usize,
    #[arg(long, default_value_t = 8)]
    pub context: usize,
    #[arg(long, default_value_t = 16)]
    pub d_emb: usize,
    #[arg(long, default_value_t = 64)]
    pub d_hid: usize,
}

fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let mut records = Vec::new();
    for path in &args.corpus {
        records.extend(io::read_traces(path)?);
    }
    let corpus = io::corpus_from_traces(records, CorpusRole::Train)?;
    let cfg = ToyLmConfig {
        vocab_size: args.vocab,
        context: args.context,
        d_emb: args.d_emb,
        d_hid: args.d_hid,
    };
    let mut model = ToyLm::new(cfg, subseed(args.seed, "toylm-init"));
    toylm::train(
        &mut model,
        &corpus,
        &TrainConfig { epochs: args.epochs, lr: args.lr, seed: subseed(args.seed, "train-order") },
    )?;
    model.save(&args.out)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// score

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn cmd_score(args: &ScoreArgs) -> Result<i32> {
    let model = ToyLm::load(&args.model)?;
    let mut records = io::read_traces(&args.traces)?;
    for record in &mut records {
        let seq = TokenSequence::new(&record.id, record.tokens.clone())?;
        record.logprobs = Some(model.score_sequence(&seq).logprobs().to_vec());
    }
    io::write_traces(&args.out, &records)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// select

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Traces with per-token log-probabilities (see `score`).
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Log-probability threshold; defaults to each sequence's mean.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub gap: usize,
    /// Iterate gap closure to a fixed point.
    #[arg(long)]
    pub fixed_point: bool,
    /// Score traces that lack log-probabilities with this model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn cmd_select(args: &SelectArgs) -> Result<i32> {
    let records = io::read_traces(&args.traces)?;
    let model = args.model.as_deref().map(ToyLm::load).transpose()?;
    let cfg = OnlineSelectConfig {
        alpha: args.alpha,
        gap: args.gap,
        fixed_point: args.fixed_point,
    };
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        let seq = match &record.surfaces {
            Some(surfaces) => {
                TokenSequence::with_surfaces(&record.id, record.tokens.clone(), surfaces.clone())?
            }
            None => TokenSequence::new(&record.id, record.tokens.clone())?,
        };
        let logprobs = match (record.logprobs, &model) {
            (Some(lp), _) => lp,
            (None, Some(model)) => model.score_sequence(&seq).logprobs().to_vec(),
            (None, None) => {
                return Err(Error::input(format!(
                    "instance '{}' has no logprobs; run `score` first or pass --model",
                    record.id
                )))
            }
        };
        let scored = crate::seq::ScoredSequence::new(seq, logprobs)?;
        let spans = select_online(&scored, &cfg)?;
        out.push(io::AnnotationFileRecord {
            id: record.id,
            spans: io::spans_to_pairs(&spans),
            ratings: None,
            provenance: Provenance::Online,
        });
    }
    io::write_annotations(&args.out, &out)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// annotate

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Traces with surface strings.
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Chat client: `live`, `replay:<fixture>`, or `record:<fixture>`.
    #[arg(long)]
    pub client: String,
    /// Endpoint override for the live client (key via SUNDER_API_KEY).
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value = annotate::DEFAULT_MODEL_NAME)]
    pub model_name: String,
    /// JSON file with few-shot examples `[{"text", "spans"}]`.
    #[arg(long)]
    pub fewshot: Option<PathBuf>,
    /// File containing a replacement forward prompt template.
    #[arg(long)]
    pub forward_template: Option<PathBuf>,
    /// File containing a replacement backward prompt template.
    #[arg(long)]
    pub backward_template: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn build_client(spec: &str, endpoint: Option<&str>) -> Result<Box<dyn ChatClient>> {
    if spec == "live" {
        return Ok(Box::new(HttpChatClient::new(endpoint)?));
    }
    if let Some(path) = spec.strip_prefix("replay:") {
        return Ok(Box::new(ReplayClient::from_path(Path::new(path))?));
    }
    if let Some(path) = spec.strip_prefix("record:") {
        let live = HttpChatClient::new(endpoint)?;
        return Ok(Box::new(RecordingClient::new(live, PathBuf::from(path))?));
    }
    Err(Error::input(format!(
        "unknown client '{spec}' (expected live, replay:<fixture>, or record:<fixture>)"
    )))
}

fn cmd_annotate(args: &AnnotateArgs) -> Result<i32> {
    let records = io::read_traces(&args.traces)?;
    let corpus = io::corpus_from_traces(records, CorpusRole::Forget)?;
    let mut cfg = AnnotationPromptConfig {
        model_name: args.model_name.clone(),
        temperature: args.temperature,
        max_retries: args.max_retries,
        ..Default::default()
    };
    if let Some(path) = &args.forward_template {
        cfg.forward_template = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    }
    if let Some(path) = &args.backward_template {
        cfg.backward_template = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    }
    if let Some(path) = &args.fewshot {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
        let examples: Vec<FewshotExample> = serde_json::from_str(&text)
            .map_err(|e| Error::input(format!("malformed few-shot file {}: {e}", path.display())))?;
        cfg.fewshot = examples;
    }
    cfg.validate()?;
    let client = build_client(&args.client, args.endpoint.as_deref())?;
    let annotations = annotate::annotate_corpus(&corpus, &cfg, client.as_ref())?;
    let failed: Vec<&str> = annotations
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.instance_id.as_str())
        .collect();
    for record in &annotations {
        for diagnostic in &record.diagnostics {
            log::info!("{}: {diagnostic}", record.instance_id);
        }
    }
    let out: Vec<io::AnnotationFileRecord> =
        annotations.iter().map(io::annotation_file_record).collect();
    io::write_annotations(&args.out, &out)?;
    if !failed.is_empty() {
        return Err(Error::client(format!(
            "annotation failed for {} instance(s): {}",
            failed.len(),
            failed.join(", ")
        )));
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// stats

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Traces the annotations refer to (for lengths and the id set).
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub candidate: PathBuf,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct StatsFile<'a> {
    version: &'a str,
    seed: u64,
    instances: usize,
    stats: &'a AnnotationStats,
}

fn cmd_stats(args: &StatsArgs) -> Result<i32> {
    let traces = io::read_traces(&args.traces)?;
    let ids: Vec<&str> = traces.iter().map(|t| t.id.as_str()).collect();
    let lengths: Vec<usize> = traces.iter().map(|t| t.tokens.len()).collect();

    let cand_records = io::read_annotations(&args.candidate)?;
    let cand_map = io::join_annotations(ids.iter().copied(), &cand_records, &args.candidate)?;
    let candidate: Vec<SpanSet> = ids.iter().map(|id| cand_map[*id].clone()).collect();

    let reference: Option<Vec<SpanSet>> = match &args.reference {
        Some(path) => {
            let records = io::read_annotations(path)?;
            let map = io::join_annotations(ids.iter().copied(), &records, path)?;
            Some(ids.iter().map(|id| map[*id].clone()).collect())
        }
        None => None,
    };

    let stats = annotation_stats(&candidate, reference.as_deref(), &lengths)?;
    io::write_json(
        &args.out,
        &StatsFile { version: VERSION, seed: args.seed, instances: ids.len(), stats: &stats },
    )?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub traces: PathBuf,
    /// Annotation file joined to the traces by id; falls back to spans
    /// embedded in the traces.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Model source: `toylm:<params.json>` or `replay:<traces.jsonl>`.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Greedy generation cap per prefix; 0 generates full suffixes.
    #[arg(long, default_value_t = 64)]
    pub gen_cap: usize,
    /// Comma-separated subset of el, ma, sel, sma.
    #[arg(long, default_value = "el,ma,sel,sma")]
    pub metrics: String,
    /// Also score the first token from the empty prefix in MA metrics.
    #[arg(long)]
    pub include_first_token: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

enum ModelSource {
    ToyLm(Box<ToyLm>),
    Replay(ReplayModel),
}

impl ModelSource {
    fn parse(spec: &str) -> Result<Self> {
        if let Some(path) = spec.strip_prefix("toylm:") {
            return Ok(ModelSource::ToyLm(Box::new(ToyLm::load(Path::new(path))?)));
        }
        if let Some(path) = spec.strip_prefix("replay:") {
            let records = io::read_traces(Path::new(path))?;
            let corpus = io::corpus_from_traces(records, CorpusRole::Train)?;
            return Ok(ModelSource::Replay(ReplayModel::from_corpus(&corpus, 256)));
        }
        Err(Error::input(format!(
            "unknown model source '{spec}' (expected toylm:<path> or replay:<path>)"
        )))
    }
}

impl LanguageModel for ModelSource {
    fn vocab_size(&self) -> usize {
        match self {
            ModelSource::ToyLm(m) => m.vocab_size(),
            ModelSource::Replay(m) => m.vocab_size(),
        }
    }
    fn next_logprobs(&self, prefix: &[u32]) -> Vec<f64> {
        match self {
            ModelSource::ToyLm(m) => m.next_logprobs(prefix),
            ModelSource::Replay(m) => m.next_logprobs(prefix),
        }
    }
}

#[derive(Serialize)]
struct EvalReportFile<'a> {
    version: &'a str,
    seed: u64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    gen_cap: Option<usize>,
    include_first_token: bool,
    metrics: &'a str,
    report: &'a MetricReport,
}

fn gen_cap_of(flag: usize) -> Option<usize> {
    (flag > 0).then_some(flag)
}

/// Builds the evaluation corpus: annotation-file spans override any spans
/// embedded in the traces.
fn eval_corpus(
    traces_path: &Path,
    annotations: Option<&PathBuf>,
    role: CorpusRole,
) -> Result<Corpus> {
    let records = io::read_traces(traces_path)?;
    let mut corpus = io::corpus_from_traces(records, role)?;
    if let Some(path) = annotations {
        let anns = io::read_annotations(path)?;
        let ids: Vec<String> =
            corpus.instances().iter().map(|i| i.seq.id().to_owned()).collect();
        let joined = io::join_annotations(ids.iter().map(String::as_str), &anns, path)?;
        let instances = corpus
            .instances()
            .iter()
            .map(|inst| {
                let spans = joined[inst.seq.id()].clone();
                spans.validate_for(inst.seq.len(), inst.seq.id())?;
                Ok(CorpusInstance {
                    seq: inst.seq.clone(),
                    spans: Some(spans),
                    logprobs: inst.logprobs.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        corpus = Corpus::new(role, instances)?;
    }
    Ok(corpus)
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let corpus = eval_corpus(&args.traces, args.annotations.as_ref(), CorpusRole::Forget)?;
    let model = ModelSource::parse(&args.model)?;
    let cfg = EvalConfig {
        n: args.n,
        gen_cap: gen_cap_of(args.gen_cap),
        include_first_token: args.include_first_token,
        metrics: MetricSelection::parse(&args.metrics)?,
    };
    let report = metrics::evaluate_corpus(&model, &corpus, &cfg)?;
    io::write_json(
        &args.out,
        &EvalReportFile {
            version: VERSION,
            seed: args.seed,
            n: cfg.n,
            gen_cap: cfg.gen_cap,
            include_first_token: cfg.include_first_token,
            metrics: &args.metrics,
            report: &report,
        },
    )?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// unlearn

#[derive(Debug, Args)]
pub struct UnlearnArgs {
    /// Pre-unlearning model parameters.
    #[arg(long)]
    pub model: PathBuf,
    /// Forget-set traces.
    #[arg(long)]
    pub forget: PathBuf,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long, default_value = "selective")]
    pub mode: String,
    /// Forgetting instances per step (the batch size).
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    /// n-gram order for the threshold metrics.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Greedy generation cap for metric evaluation; 0 = full suffixes.
    #[arg(long, default_value_t = 64)]
    pub gen_cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Span source: `online` or `file:<annotations.jsonl>`.
    #[arg(long, default_value = "online")]
    pub spans: String,
    /// Online selection threshold override (natural log).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub gap: usize,
    /// Threshold source: `heldout:<traces.jsonl>` or `explicit:<el>,<ma>`.
    #[arg(long)]
    pub threshold_from: String,
    /// Stop on S-EL/S-MA instead of EL/MA.
    #[arg(long)]
    pub stop_on_sensitive: bool,
    /// Step rule for the unlearning loop: `sgd` or `adagrad`.
    #[arg(long, default_value = "sgd")]
    pub optimizer: String,
    /// Per-epoch metric trajectory CSV.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Run report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Attaches spans to a forget corpus, either by online selection under the
/// original model or from an annotation file.
fn attach_spans(
    corpus: &Corpus,
    spec: &str,
    model: &ToyLm,
    select_cfg: &OnlineSelectConfig,
) -> Result<Corpus> {
    let instances: Vec<CorpusInstance> = if spec == "online" {
        corpus
            .instances()
            .iter()
            .map(|inst| {
                let scored = match &inst.logprobs {
                    Some(lp) => crate::seq::ScoredSequence::new(inst.seq.clone(), lp.clone())?,
                    None => model.score_sequence(&inst.seq),
                };
                let spans = select_online(&scored, select_cfg)?;
                Ok(CorpusInstance {
                    seq: inst.seq.clone(),
                    spans: Some(spans),
                    logprobs: inst.logprobs.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else if let Some(path) = spec.strip_prefix("file:") {
        let path = Path::new(path);
        let anns = io::read_annotations(path)?;
        let ids: Vec<String> = corpus.instances().iter().map(|i| i.seq.id().to_owned()).collect();
        let joined = io::join_annotations(ids.iter().map(String::as_str), &anns, path)?;
        corpus
            .instances()
            .iter()
            .map(|inst| {
                let spans = joined[inst.seq.id()].clone();
                spans.validate_for(inst.seq.len(), inst.seq.id())?;
                Ok(CorpusInstance {
                    seq: inst.seq.clone(),
                    spans: Some(spans),
                    logprobs: inst.logprobs.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        return Err(Error::input(format!(
            "unknown span source '{spec}' (expected online or file:<path>)"
        )));
    };
    Corpus::new(corpus.role(), instances)
}

fn parse_threshold(
    spec: &str,
    model: &ToyLm,
    n: usize,
    gen_cap: Option<usize>,
) -> Result<(ForgettingThreshold, Option<Corpus>)> {
    if let Some(path) = spec.strip_prefix("heldout:") {
        let records = io::read_traces(Path::new(path))?;
        let heldout = io::corpus_from_traces(records, CorpusRole::Heldout)?;
        let threshold = derive_threshold(model, &heldout, n, gen_cap)?;
        return Ok((threshold, Some(heldout)));
    }
    if let Some(pair) = spec.strip_prefix("explicit:") {
        let parts: Vec<&str> = pair.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::input(format!(
                "explicit threshold '{pair}' must be <el>,<ma>"
            )));
        }
        let tau_el: f64 = parts[0]
            .trim()
            .parse()
            .map_err(|_| Error::input(format!("bad threshold value '{}'", parts[0])))?;
        let tau_ma: f64 = parts[1]
            .trim()
            .parse()
            .map_err(|_| Error::input(format!("bad threshold value '{}'", parts[1])))?;
        return Ok((ForgettingThreshold::explicit(tau_el, tau_ma)?, None));
    }
    Err(Error::input(format!(
        "unknown threshold source '{spec}' (expected heldout:<path> or explicit:<el>,<ma>)"
    )))
}

#[derive(Serialize)]
struct UnlearnReportFile<'a> {
    version: &'a str,
    seed: u64,
    mode: UnlearnMode,
    d: usize,
    lr: f64,
    max_epochs: usize,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    gen_cap: Option<usize>,
    stop_on_sensitive: bool,
    threshold: &'a ForgettingThreshold,
    epochs_used: usize,
    converged: bool,
    initial: &'a InstanceMetrics,
    #[serde(rename = "final")]
    final_metrics: &'a InstanceMetrics,
    /// Mean per-token held-out NLL before/after, when the threshold came
    /// from a held-out corpus.
    #[serde(skip_serializing_if = "Option::is_none")]
    heldout_nll_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    heldout_nll_after: Option<f64>,
}

struct NllDelta {
    before: Option<f64>,
    after: Option<f64>,
}

fn write_unlearn_outputs(
    args_report: Option<&PathBuf>,
    args_trajectory: Option<&PathBuf>,
    cfg: &UnlearnConfig,
    threshold: &ForgettingThreshold,
    outcome: &UnlearnOutcome,
    nll: &NllDelta,
) -> Result<()> {
    if let Some(path) = args_trajectory {
        io::write_trajectory_csv(path, &outcome.trajectory)?;
    }
    if let Some(path) = args_report {
        let initial = &outcome.trajectory.first().expect("epoch 0 present").report.corpus_avg;
        let final_metrics = &outcome.trajectory.last().expect("non-empty").report.corpus_avg;
        io::write_json(
            path,
            &UnlearnReportFile {
                version: VERSION,
                seed: cfg.seed,
                mode: cfg.mode,
                d: cfg.d,
                lr: cfg.lr,
                max_epochs: cfg.max_epochs,
                n: cfg.n,
                gen_cap: cfg.gen_cap,
                stop_on_sensitive: cfg.stop_on_sensitive,
                threshold,
                epochs_used: outcome.epochs_used,
                converged: outcome.converged,
                initial,
                final_metrics,
                heldout_nll_before: nll.before,
                heldout_nll_after: nll.after,
            },
        )?;
    }
    Ok(())
}

fn parse_optimizer(spec: &str) -> Result<bool> {
    match spec {
        "adagrad" => Ok(true),
        "sgd" => Ok(false),
        other => Err(Error::input(format!(
            "unknown optimizer '{other}' (expected adagrad or sgd)"
        ))),
    }
}

fn cmd_unlearn(args: &UnlearnArgs) -> Result<i32> {
    let mut model = ToyLm::load(&args.model)?;
    let records = io::read_traces(&args.forget)?;
    let corpus = io::corpus_from_traces(records, CorpusRole::Forget)?;
    let select_cfg =
        OnlineSelectConfig { alpha: args.alpha, gap: args.gap, fixed_point: false };
    let forget = attach_spans(&corpus, &args.spans, &model, &select_cfg)?;
    let gen_cap = gen_cap_of(args.gen_cap);
    let (threshold, heldout) = parse_threshold(&args.threshold_from, &model, args.n, gen_cap)?;
    let nll_before = heldout
        .as_ref()
        .map(|h| metrics::corpus_mean_nll(&model, h, false))
        .transpose()?;
    let cfg = UnlearnConfig {
        mode: args.mode.parse()?,
        lr: args.lr,
        d: args.d,
        max_epochs: args.max_epochs,
        n: args.n,
        gen_cap,
        seed: subseed(args.seed, "unlearn-order"),
        stop_on_sensitive: args.stop_on_sensitive,
        adagrad: parse_optimizer(&args.optimizer)?,
    };
    let outcome = unlearn_until_threshold(&mut model, &forget, &cfg, &threshold)?;
    model.save(&args.out_model)?;
    let nll_after = heldout
        .as_ref()
        .map(|h| metrics::corpus_mean_nll(&model, h, false))
        .transpose()?;
    write_unlearn_outputs(
        args.report.as_ref(),
        args.trajectory.as_ref(),
        &cfg,
        &threshold,
        &outcome,
        &NllDelta { before: nll_before, after: nll_after },
    )?;
    if !outcome.converged {
        log::warn!(
            "threshold not reached after {} epochs (el <= {:.4}, ma <= {:.4})",
            outcome.epochs_used,
            threshold.tau_el,
            threshold.tau_ma
        );
        return Ok(EXIT_THRESHOLD);
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// attack

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub unlearn: UnlearnArgsCore,
    /// The common-knowledge fact to splice into every forget instance.
    #[arg(long)]
    pub fact: String,
    /// Prepend the fact instead of appending it.
    #[arg(long)]
    pub prepend: bool,
    /// Directory for attacked.jsonl, model_after.json, trajectory.csv, and
    /// attack_report.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// The unlearning flags shared by `unlearn` and `attack`.
#[derive(Debug, Args)]
pub struct UnlearnArgsCore {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub forget: PathBuf,
    #[arg(long, default_value = "selective")]
    pub mode: String,
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub gen_cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "online")]
    pub spans: String,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub gap: usize,
    #[arg(long)]
    pub threshold_from: String,
    #[arg(long)]
    pub stop_on_sensitive: bool,
    /// Step rule for the unlearning loop: `sgd` or `adagrad`.
    #[arg(long, default_value = "sgd")]
    pub optimizer: String,
}

#[derive(Serialize)]
struct AttackReportFile<'a> {
    version: &'a str,
    seed: u64,
    fact: &'a str,
    placement: InjectPlacement,
    mode: UnlearnMode,
    threshold: &'a ForgettingThreshold,
    fact_mean_logprob_before: f64,
    fact_mean_logprob_after: f64,
    /// How far the fact's mean per-token log-probability fell.
    fact_logprob_drop: f64,
    greedy_reproduces_fact_before: bool,
    greedy_reproduces_fact_after: bool,
    epochs_used: usize,
    converged: bool,
}

/// Mean per-token log-probability of the fact scored standalone, first
/// token included.
fn fact_mean_logprob(model: &ToyLm, fact: &TokenSequence) -> f64 {
    -mean_nll(model, fact, true)
}

/// Greedy reproduction check: does the continuation of the fact's prefix
/// reproduce the rest exactly? The prefix is at least half the fact and at
/// least one full context window, so generation starts from a window shape
/// the model has actually seen.
fn greedy_reproduces(model: &ToyLm, fact: &[u32]) -> bool {
    let split = (fact.len() / 2)
        .max(model.config().context)
        .max(1)
        .min(fact.len() - 1);
    let generated = model.generate_greedy(&fact[..split], fact.len() - split);
    generated == fact[split..]
}

fn cmd_attack(args: &AttackArgs) -> Result<i32> {
    let u = &args.unlearn;
    if args.fact.is_empty() {
        return Err(Error::input("--fact must be a non-empty string"));
    }
    let mut model = ToyLm::load(&u.model)?;
    let records = io::read_traces(&u.forget)?;
    let corpus = io::corpus_from_traces(records, CorpusRole::Forget)?;
    let placement = if args.prepend { InjectPlacement::Prepend } else { InjectPlacement::Append };

    let fact_seq = TokenSequence::from_text("fact", &args.fact)?;
    let fact_tokens = fact_seq.tokens().to_vec();
    let fact_surfaces: Vec<String> = fact_seq.surfaces().expect("byte surfaces").to_vec();

    // file spans refer to the original instances, so they attach before the
    // injection (which shifts them as needed); online selection runs on the
    // attacked text, where the well-known fact scores high and is skipped
    let select_cfg = OnlineSelectConfig { alpha: u.alpha, gap: u.gap, fixed_point: false };
    let attacked = if u.spans == "online" {
        let attacked = inject_knowledge(&corpus, &fact_tokens, Some(&fact_surfaces), placement)?;
        attach_spans(&attacked, "online", &model, &select_cfg)?
    } else {
        let with_spans = attach_spans(&corpus, &u.spans, &model, &select_cfg)?;
        inject_knowledge(&with_spans, &fact_tokens, Some(&fact_surfaces), placement)?
    };

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::input(format!("cannot create {}: {e}", args.out_dir.display())))?;
    io::write_traces(&args.out_dir.join("attacked.jsonl"), &io::traces_from_corpus(&attacked))?;

    let gen_cap = gen_cap_of(u.gen_cap);
    let (threshold, _) = parse_threshold(&u.threshold_from, &model, u.n, gen_cap)?;
    let before_logprob = fact_mean_logprob(&model, &fact_seq);
    let before_greedy = greedy_reproduces(&model, &fact_tokens);

    let cfg = UnlearnConfig {
        mode: u.mode.parse()?,
        lr: u.lr,
        d: u.d,
        max_epochs: u.max_epochs,
        n: u.n,
        gen_cap,
        seed: subseed(u.seed, "unlearn-order"),
        stop_on_sensitive: u.stop_on_sensitive,
        adagrad: parse_optimizer(&u.optimizer)?,
    };
    let outcome = unlearn_until_threshold(&mut model, &attacked, &cfg, &threshold)?;
    model.save(&args.out_dir.join("model_after.json"))?;
    io::write_trajectory_csv(&args.out_dir.join("trajectory.csv"), &outcome.trajectory)?;

    let after_logprob = fact_mean_logprob(&model, &fact_seq);
    let after_greedy = greedy_reproduces(&model, &fact_tokens);
    io::write_json(
        &args.out_dir.join("attack_report.json"),
        &AttackReportFile {
            version: VERSION,
            seed: u.seed,
            fact: &args.fact,
            placement,
            mode: cfg.mode,
            threshold: &threshold,
            fact_mean_logprob_before: before_logprob,
            fact_mean_logprob_after: after_logprob,
            fact_logprob_drop: before_logprob - after_logprob,
            greedy_reproduces_fact_before: before_greedy,
            greedy_reproduces_fact_after: after_greedy,
            epochs_used: outcome.epochs_used,
            converged: outcome.converged,
        },
    )?;
    if !outcome.converged {
        return Ok(EXIT_THRESHOLD);
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// bench

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Output CSV with columns density,t_full,t_sensitive,ratio.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Comma-separated sensitive-token densities in [0,1].
    #[arg(long, default_value = "1.0,0.5,0.25,0.1")]
    pub densities: String,
    #[arg(long, default_value_t = 48)]
    pub instances: usize,
    #[arg(long, default_value_t = 200)]
    pub len: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let densities = args
        .densities
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| Error::input(format!("bad density '{part}'")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let cfg = bench::BenchConfig {
        n: args.n,
        densities,
        instances: args.instances,
        len: args.len,
        reps: args.reps,
        seed: args.seed,
    };
    let rows = bench::run_bench(&cfg)?;
    bench::write_bench_csv(&args.out, &rows)?;
    Ok(EXIT_OK)
}
