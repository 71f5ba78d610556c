//! Batch entry points behind the `hirecall` binary.
//!
//! Every failure is reported on stderr as `error[<kind>]: <message>` and the
//! process exits non-zero; successful commands exit 0.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::embeddings::{convert_embeddings, EmbeddingError, EmbeddingFormat, FusionStrategy};
use crate::engine::{run_simulation, EngineError, NegativeSampling, StopAfter};
use crate::eval::{aggregate, mean, save_report_file, write_report_file, EvalError, MetricsReport, PercentTable, Summary, DEFAULT_CUTOFFS};
use crate::features::{FeatureError, FeatureIndex, FeatureParams};
use crate::ingest::{load_corpus, load_qrels, CorpusFormat, IngestError};
use crate::manifest::{index_with_cache, CacheStatus, ManifestError, Overrides, RunManifest};
use crate::runlog::{RunLog, RunLogError};
use crate::service::{self, ServiceConfig, ServiceError};
use crate::stats::{paired_t_test, PairedTestResult, StatsError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    RunLog(#[from] RunLogError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    /// The machine-readable tag printed in `error[<kind>]`.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Manifest(_) => "manifest",
            CliError::Ingest(_) => "ingest",
            CliError::Features(_) => "features",
            CliError::Embedding(_) => "embeddings",
            CliError::Engine(EngineError::InvalidConfig { .. }) => "config",
            CliError::Engine(_) => "engine",
            CliError::Eval(_) => "eval",
            CliError::RunLog(_) => "runlog",
            CliError::Stats(_) => "stats",
            CliError::Service(_) => "service",
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses a snake_case enum value through its serde representation.
fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_stop_after(s: &str) -> Result<StopAfter, String> {
    match s.parse::<usize>() {
        Ok(n) => Ok(StopAfter::Count(n)),
        Err(_) => serde_value(s).map_err(|_| format!("expected a count or \"4r+1000\", got {s:?}")),
    }
}

fn parse_embedding_format(s: &str) -> Result<EmbeddingFormat, String> {
    match s {
        "text" | "tsv" => Ok(EmbeddingFormat::Text),
        "binary" | "bin" => Ok(EmbeddingFormat::Binary),
        _ => Err(format!("expected text or binary, got {s:?}")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "hirecall", version, about = "Continuous active learning for high-recall retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Featurize a corpus (or a manifest's corpus), fill the cache and print stats.
    Ingest(IngestArgs),
    /// Simulate every topic of a manifest and write run logs and reports.
    Run(RunArgs),
    /// Recompute reports from persisted run logs, or average a per-topic table.
    Eval(EvalArgs),
    /// Paired t-test between two report files or two table columns.
    Compare(CompareArgs),
    /// Serve live review sessions over HTTP.
    Serve(ServeArgs),
    /// Convert an embedding file between the text and binary formats.
    EmbConvert(EmbConvertArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// A run manifest (.toml) or a corpus file.
    pub input: PathBuf,
    /// Corpus format when `input` is a corpus file (default: from the extension).
    #[arg(long, value_parser = serde_value::<CorpusFormat>)]
    pub format: Option<CorpusFormat>,
    /// Feature cache path when `input` is a corpus file.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Topics simulated concurrently (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Rerank depth.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_parser = serde_value::<FusionStrategy>)]
    pub fusion: Option<FusionStrategy>,
    #[arg(long, value_parser = serde_value::<NegativeSampling>)]
    pub negatives: Option<NegativeSampling>,
    /// A document count or "4r+1000".
    #[arg(long, value_parser = parse_stop_after)]
    pub stop_after: Option<StopAfter>,
    /// Output directory (overrides data.output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        RunArgs {
            manifest: manifest.into(),
            seed: None,
            jobs: None,
            k: None,
            fusion: None,
            negatives: None,
            stop_after: None,
            out: None,
        }
    }

    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            k: self.k,
            fusion: self.fusion,
            negatives: self.negatives,
            stop_after: self.stop_after,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory of `{topic}/runlog.tsv` files.
    #[arg(required_unless_present = "table")]
    pub logs_dir: Option<PathBuf>,
    #[arg(long, required_unless_present = "table")]
    pub qrels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CUTOFFS)]
    pub cutoffs: Vec<usize>,
    /// Write the report file here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Average a `topic<TAB>col...` table of per-topic percentages instead.
    #[arg(long, conflicts_with_all = ["logs_dir", "qrels"])]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(required_unless_present = "table")]
    pub report_a: Option<PathBuf>,
    #[arg(required_unless_present = "table")]
    pub report_b: Option<PathBuf>,
    /// Compare two columns of a per-topic table instead.
    #[arg(long, conflicts_with_all = ["report_a", "report_b"])]
    pub table: Option<PathBuf>,
    /// Table columns to compare (default: the first two).
    #[arg(long, value_delimiter = ',', requires = "table")]
    pub columns: Vec<String>,
    /// Threshold for the verdict line only.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    pub manifest: PathBuf,
    /// Listen address (default: $BIND_ADDR or 127.0.0.1:8080).
    #[arg(long)]
    pub bind: Option<String>,
    /// Session storage (default: $DATA_DIR or ./hirecall-data).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EmbConvertArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long)]
    pub dim: usize,
    /// text or binary.
    #[arg(long, value_parser = parse_embedding_format)]
    pub to: EmbeddingFormat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestStats {
    pub docs: usize,
    pub vocab: usize,
    pub tokens: u64,
    pub avg_doc_len: f64,
    pub nnz: usize,
    pub cache: CacheStatus,
}

impl IngestStats {
    fn of(index: &FeatureIndex, cache: CacheStatus) -> Self {
        let corpus = index.corpus();
        IngestStats {
            docs: corpus.n_docs(),
            vocab: corpus.vocab_size(),
            tokens: corpus.total_tokens(),
            avg_doc_len: corpus.avg_doc_len(),
            nnz: index.vectors().iter().map(|v| v.len()).sum(),
            cache,
        }
    }
}

impl std::fmt::Display for IngestStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "docs={} vocab={} tokens={} avg_doc_len={:.2} nnz={} cache={}",
            self.docs,
            self.vocab,
            self.tokens,
            self.avg_doc_len,
            self.nnz,
            self.cache.as_str()
        )
    }
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<IngestStats, CliError> {
    let is_manifest = args.input.extension().is_some_and(|e| e == "toml");
    if is_manifest {
        let manifest = RunManifest::load(&args.input)?;
        if manifest.synthetic.is_some() {
            let data = manifest.load_data()?;
            return Ok(IngestStats::of(&data.index, CacheStatus::Disabled));
        }
        let path = manifest.data.corpus.clone().expect("validated");
        let format = manifest.data.format.unwrap_or_else(|| CorpusFormat::from_path(&path));
        let corpus = Arc::new(load_corpus(&path, format)?);
        let (index, status) = manifest.index(corpus)?;
        return Ok(IngestStats::of(&index, status));
    }
    let format = args.format.unwrap_or_else(|| CorpusFormat::from_path(&args.input));
    let corpus = Arc::new(load_corpus(&args.input, format)?);
    let params = FeatureParams::default();
    let (index, status) = match &args.cache {
        Some(cache) => index_with_cache(corpus, params, cache, &args.input)?,
        None => (FeatureIndex::build(corpus, params)?, CacheStatus::Disabled),
    };
    Ok(IngestStats::of(&index, status))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub reports: Vec<MetricsReport>,
    pub summary: Summary,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn topic_dir(out: &Path, topic_id: &str) -> Result<PathBuf, CliError> {
    let safe = !topic_id.is_empty()
        && topic_id != "."
        && topic_id != ".."
        && !topic_id.contains(['/', '\\']);
    if !safe {
        return Err(CliError::Data(format!("topic id {topic_id:?} cannot name an output directory")));
    }
    Ok(out.join(topic_id))
}

/// Runs every topic; outputs land in `{out}/{topic}/runlog.tsv`,
/// `{out}/{topic}/report.json`, `{out}/{topic}/gain.csv`, `{out}/summary.json`
/// and `{out}/report.jsonl` (the format `eval` and `compare` read).
pub fn cmd_run(args: &RunArgs) -> Result<RunOutcome, CliError> {
    let manifest = RunManifest::load(&args.manifest)?;
    let config = manifest.session_config(&args.overrides());
    config.validate()?;
    let out = args
        .out
        .clone()
        .or_else(|| manifest.output_dir().map(Path::to_path_buf))
        .ok_or_else(|| CliError::Usage("no output directory: set data.output or pass --out".into()))?;
    if args.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let data = manifest.load_data()?;
    let qrels = data
        .qrels
        .as_ref()
        .ok_or_else(|| CliError::Data("run simulates the reviewer and needs data.qrels".into()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let logs = pool.install(|| {
        data.topics
            .par_iter()
            .map(|t| run_simulation(t, data.index.clone(), data.embeddings.clone(), qrels, &config))
            .collect::<Result<Vec<RunLog>, EngineError>>()
    })?;

    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut reports = Vec::with_capacity(logs.len());
    for (topic, log) in data.topics.iter().zip(&logs) {
        let dir = topic_dir(&out, &topic.id)?;
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        log.save(&dir.join("runlog.tsv"))?;
        let report = MetricsReport::compute(&topic.id, log, qrels.r_t(&topic.id), &manifest.eval.cutoffs);
        write_json(&dir.join("report.json"), &report)?;
        let gain = dir.join("gain.csv");
        let mut buf = Vec::new();
        report.write_gain_csv(&mut buf).map_err(io_err(&gain))?;
        fs::write(&gain, buf).map_err(io_err(&gain))?;
        reports.push(report);
    }
    reports.sort_by(|a, b| a.topic_id.cmp(&b.topic_id));
    let summary = aggregate(&reports)?;
    write_json(&out.join("summary.json"), &summary)?;
    write_json(&out.join("config.json"), &config)?;
    save_report_file(&reports, &summary, &out.join("report.jsonl"))?;
    Ok(RunOutcome {
        out_dir: out,
        reports,
        summary,
    })
}

#[derive(Debug, Clone)]
pub enum EvalOutcome {
    Reports { reports: Vec<MetricsReport>, summary: Summary },
    Table(Vec<(String, f64)>),
}

/// Recomputes reports from `{logs_dir}/{topic}/runlog.tsv`, sorted by topic.
pub fn eval_logs(logs_dir: &Path, qrels_path: &Path, cutoffs: &[usize]) -> Result<(Vec<MetricsReport>, Summary), CliError> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(CliError::Usage("--cutoffs needs positive values".into()));
    }
    let qrels = load_qrels(qrels_path)?;
    let mut topics = Vec::new();
    for entry in fs::read_dir(logs_dir).map_err(io_err(logs_dir))? {
        let entry = entry.map_err(io_err(logs_dir))?;
        let log_path = entry.path().join("runlog.tsv");
        if log_path.is_file() {
            topics.push((entry.file_name().to_string_lossy().into_owned(), log_path));
        }
    }
    if topics.is_empty() {
        return Err(CliError::Data(format!("no */runlog.tsv under {}", logs_dir.display())));
    }
    topics.sort();
    let mut reports = Vec::with_capacity(topics.len());
    for (topic, path) in &topics {
        if !qrels.has_topic(topic) {
            return Err(CliError::Data(format!(
                "topic {topic:?} has no judgments in {}",
                qrels_path.display()
            )));
        }
        let log = RunLog::load(path)?;
        reports.push(MetricsReport::compute(topic, &log, qrels.r_t(topic), cutoffs));
    }
    let summary = aggregate(&reports)?;
    Ok((reports, summary))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutcome, CliError> {
    if let Some(table) = &args.table {
        return Ok(EvalOutcome::Table(PercentTable::load(table)?.means()));
    }
    let (Some(dir), Some(qrels)) = (&args.logs_dir, &args.qrels) else {
        return Err(CliError::Usage("eval needs LOGS_DIR and --qrels, or --table".into()));
    };
    let (reports, summary) = eval_logs(dir, qrels, &args.cutoffs)?;
    if let Some(out) = &args.out {
        save_report_file(&reports, &summary, out)?;
    }
    Ok(EvalOutcome::Reports { reports, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricComparison {
    pub mean_a: f64,
    pub mean_b: f64,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub test: Option<PairedTestResult>,
    /// Set when every paired difference is identical, so t is undefined.
    pub zero_variance: bool,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub topics: Vec<String>,
    pub alpha: f64,
    pub metrics: BTreeMap<String, MetricComparison>,
}

fn compare_metric(a: &[f64], b: &[f64], alpha: f64) -> Result<MetricComparison, CliError> {
    let (mean_a, mean_b) = (mean(a).unwrap_or(0.0), mean(b).unwrap_or(0.0));
    match paired_t_test(a, b) {
        Ok(test) => Ok(MetricComparison {
            mean_a,
            mean_b,
            significant: test.significant(alpha),
            test: Some(test),
            zero_variance: false,
        }),
        Err(StatsError::ZeroVariance { .. }) => Ok(MetricComparison {
            mean_a,
            mean_b,
            test: None,
            zero_variance: true,
            significant: false,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Paired comparison over the topics both sides report.
pub fn compare_reports(a: &[MetricsReport], b: &[MetricsReport], alpha: f64) -> Result<(Vec<String>, BTreeMap<String, MetricComparison>), CliError> {
    let by_topic = |rs: &[MetricsReport]| -> BTreeMap<String, BTreeMap<String, f64>> {
        rs.iter().map(|r| (r.topic_id.clone(), r.metrics())).collect()
    };
    let (ma, mb) = (by_topic(a), by_topic(b));
    let topics: Vec<String> = ma.keys().filter(|t| mb.contains_key(*t)).cloned().collect();
    if topics.is_empty() {
        return Err(CliError::Data("the two reports share no topics".into()));
    }
    let names: BTreeSet<&String> = topics
        .iter()
        .flat_map(|t| ma[t].keys().filter(|k| mb[t].contains_key(*k)))
        .collect();
    let mut metrics = BTreeMap::new();
    for name in names {
        if !topics.iter().all(|t| ma[t].contains_key(name) && mb[t].contains_key(name)) {
            continue;
        }
        let xs: Vec<f64> = topics.iter().map(|t| ma[t][name]).collect();
        let ys: Vec<f64> = topics.iter().map(|t| mb[t][name]).collect();
        metrics.insert(name.clone(), compare_metric(&xs, &ys, alpha)?);
    }
    Ok((topics, metrics))
}

pub fn cmd_compare(args: &CompareArgs) -> Result<Comparison, CliError> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    if let Some(path) = &args.table {
        let table = PercentTable::load(path)?;
        let cols: Vec<String> = match args.columns.as_slice() {
            [] => table.columns.iter().take(2).cloned().collect(),
            [a, b] => vec![a.clone(), b.clone()],
            _ => return Err(CliError::Usage("--columns takes exactly two names".into())),
        };
        if cols.len() != 2 {
            return Err(CliError::Data(format!("{} needs at least two columns", path.display())));
        }
        let column = |name: &str| {
            table
                .column(name)
                .ok_or_else(|| CliError::Data(format!("{} has no column {name:?}", path.display())))
        };
        let (xs, ys) = (column(&cols[0])?, column(&cols[1])?);
        let mut metrics = BTreeMap::new();
        metrics.insert(format!("{}-{}", cols[0], cols[1]), compare_metric(&xs, &ys, args.alpha)?);
        return Ok(Comparison {
            a: cols[0].clone(),
            b: cols[1].clone(),
            topics: table.rows.iter().map(|r| r.0.clone()).collect(),
            alpha: args.alpha,
            metrics,
        });
    }
    let (Some(pa), Some(pb)) = (&args.report_a, &args.report_b) else {
        return Err(CliError::Usage("compare needs two report files, or --table".into()));
    };
    let a = crate::eval::load_report_file(pa)?;
    let b = crate::eval::load_report_file(pb)?;
    let (topics, metrics) = compare_reports(&a, &b, args.alpha)?;
    Ok(Comparison {
        a: pa.display().to_string(),
        b: pb.display().to_string(),
        topics,
        alpha: args.alpha,
        metrics,
    })
}

pub fn cmd_emb_convert(args: &EmbConvertArgs) -> Result<usize, CliError> {
    Ok(convert_embeddings(&args.input, &args.output, args.dim, args.to)?)
}

pub fn cmd_serve(args: &ServeArgs) -> Result<(), CliError> {
    let mut config = ServiceConfig::from_env();
    if let Some(bind) = &args.bind {
        config.bind = bind.clone();
    }
    if let Some(dir) = &args.data_dir {
        config.data_dir = dir.clone();
    }
    // Reject a bad manifest before anything binds.
    let manifest = RunManifest::load(&args.manifest)?;
    service::serve_blocking(manifest, config)?;
    Ok(())
}

/// Runs one parsed command, printing its result to stdout.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let w = |r: io::Result<()>| r.map_err(io_err(Path::new("<stdout>")));
    match &cli.command {
        Command::Ingest(args) => {
            let started = Instant::now();
            let stats = cmd_ingest(args)?;
            w(writeln!(out, "{stats}"))?;
            eprintln!("ingest took {:.3}s", started.elapsed().as_secs_f64());
        }
        Command::Run(args) => {
            let outcome = cmd_run(args)?;
            for r in &outcome.reports {
                w(writeln!(
                    out,
                    "{}\tshown={}\tfound={}/{}\trecall_4r_1000={:.4}",
                    r.topic_id, r.shown, r.relevant_found, r.r_t, r.recall_at_4r_1000
                ))?;
            }
            w(writeln!(out, "{}", serde_json::to_string(&outcome.summary).expect("serializable")))?;
            eprintln!("wrote {}", outcome.out_dir.display());
        }
        Command::Eval(args) => match cmd_eval(args)? {
            EvalOutcome::Table(means) => {
                for (col, m) in means {
                    w(writeln!(out, "{col}\t{m:.2}"))?;
                }
            }
            EvalOutcome::Reports { reports, summary } => {
                if args.out.is_none() {
                    w(write_report_file(&reports, &summary, &mut out))?;
                }
            }
        },
        Command::Compare(args) => {
            let cmp = cmd_compare(args)?;
            w(writeln!(out, "{}", serde_json::to_string_pretty(&cmp).expect("serializable")))?;
            for (name, m) in &cmp.metrics {
                match &m.test {
                    Some(t) => eprintln!(
                        "verdict {name}: p={:.4} {} at alpha={}",
                        t.p_value,
                        if m.significant { "significant" } else { "not significant" },
                        cmp.alpha
                    ),
                    None => eprintln!("verdict {name}: zero variance, no test"),
                }
            }
        }
        Command::Serve(args) => cmd_serve(args)?,
        Command::EmbConvert(args) => {
            let n = cmd_emb_convert(args)?;
            w(writeln!(out, "converted {n} vectors to {}", args.output.display()))?;
        }
    }
    w(out.flush())
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
