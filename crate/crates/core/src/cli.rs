//! Command-line front end: corpus validation, query optimization, search,
//! evaluation and the full ablation matrix.

use std::collections::BTreeMap;
use std::fs;
use std::hash::Hasher;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{l2_norm, load_embeddings, parse_embedding_bytes, EmbeddingMatrix, ScoreScale};
use crate::error::{NsflError, Result};
use crate::eval::{
    ablation_report, derive_judgments, read_judgments, AblationReport, EvalOptions, QueryJudgment,
    BOOTSTRAP_RESAMPLES, DEFAULT_CUTOFF,
};
use crate::formula::{read_pack_records, validate_pack, Component, FormulaKind, QueryPack, QueryPackRecord};
use crate::geometric::GeometricOr;
use crate::operators::{GateMaxMode, OperatorConfig};
use crate::pipeline::{run_query, Method, PipelineConfig, RankedResult, Stage};
use crate::sqo::{optimize, SqoConfig, SqoInit, StopReason, DEFAULT_SEED};

pub const SEED_ENV: &str = "NSFL_SEED";

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "nsfl", version, about = "Logical dense retrieval with fuzzy-logic rescoring")]
pub struct Cli {
    /// Worker threads for per-query parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an embedding file and print statistics.
    Index(IndexArgs),
    /// Optimize one query vector per pack on the unit sphere.
    Optimize(OptimizeArgs),
    /// Retrieve and rank items for every pack.
    Search(SearchArgs),
    /// Shorthand for `search --stage rerank`.
    Rerank(SearchArgs),
    /// Score ranked results against relevance judgments.
    Eval(EvalArgs),
    /// Run every method and stage and report the mAP matrix.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorpusArgs {
    /// Binary embedding file.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// JSONL sidecar with one `{"id", "labels"}` object per row.
    #[arg(long)]
    pub ids: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum MethodArg {
    Baseline,
    Nsfl,
    Geometric,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Baseline => Method::Baseline,
            MethodArg::Nsfl => Method::Nsfl,
            MethodArg::Geometric => Method::Geometric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum StageArg {
    Rerank,
    Opt,
    Hybrid,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Rerank => Stage::RerankOnly,
            StageArg::Opt => Stage::OptOnly,
            StageArg::Hybrid => Stage::Hybrid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum GateMaxArg {
    Pool,
    Corpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum GeometricOrArg {
    Sum,
    Passthrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum SqoInitArg {
    Gaussian,
    Monolithic,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OperatorArgs {
    /// Weight of the first-order correction, in [0, 2].
    #[arg(long, default_value_t = 1.0)]
    pub coefficient_c: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    /// Use the ungated negation penalty.
    #[arg(long)]
    pub raw_not: bool,
    /// Disable the reinforcement and departure branches.
    #[arg(long)]
    pub no_stability: bool,
    /// Normalizer of the negation gate.
    #[arg(long, value_enum, default_value_t = GateMaxArg::Pool)]
    pub gate_max: GateMaxArg,
}

impl OperatorArgs {
    pub fn config(&self) -> OperatorConfig {
        OperatorConfig {
            coefficient_c: self.coefficient_c,
            epsilon: self.epsilon,
            use_smoothed_not: !self.raw_not,
            use_stability: !self.no_stability,
            gate_max_mode: match self.gate_max {
                GateMaxArg::Pool => GateMaxMode::PoolMax,
                GateMaxArg::Corpus => GateMaxMode::CorpusMax,
            },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SqoArgs {
    /// RNG seed; the NSFL_SEED environment variable takes precedence.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SqoInitArg::Gaussian)]
    pub sqo_init: SqoInitArg,
    #[arg(long, default_value_t = 100)]
    pub sqo_steps: usize,
    #[arg(long, default_value_t = 0.2)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Return the last iterate rather than the best one seen.
    #[arg(long)]
    pub return_final: bool,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
}

impl SqoArgs {
    pub fn config(&self, seed: u64) -> SqoConfig {
        SqoConfig {
            learning_rate: self.lr,
            max_steps: self.sqo_steps,
            patience: self.patience,
            tolerance: self.tol,
            init: match self.sqo_init {
                SqoInitArg::Gaussian => SqoInit::Gaussian,
                SqoInitArg::Monolithic => SqoInit::Monolithic,
            },
            seed: Some(seed),
            return_final: self.return_final,
            restarts: self.restarts,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RetrievalArgs {
    /// Candidate pool size before rescoring.
    #[arg(long = "K", default_value_t = 1000)]
    pub oversample_k: usize,
    /// Final ranking length.
    #[arg(long = "k", default_value_t = 100)]
    pub final_k: usize,
    /// Map cosine scores to [0, 1] via (s + 1) / 2.
    #[arg(long)]
    pub rescale_scores: bool,
    /// How the geometric baseline compiles disjunctions.
    #[arg(long, value_enum, default_value_t = GeometricOrArg::Sum)]
    pub geometric_or: GeometricOrArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IndexArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimizeArgs {
    /// Query packs (JSONL).
    #[arg(long)]
    pub packs: PathBuf,
    #[command(flatten)]
    pub operator: OperatorArgs,
    #[command(flatten)]
    pub sqo: SqoArgs,
    /// Include the per-step objective trace.
    #[arg(long)]
    pub trace: bool,
    /// Output JSONL; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Query packs (JSONL).
    #[arg(long)]
    pub packs: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Nsfl)]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value_t = StageArg::Rerank)]
    pub stage: StageArg,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[command(flatten)]
    pub operator: OperatorArgs,
    #[command(flatten)]
    pub sqo: SqoArgs,
    /// Output JSONL; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct JudgmentArgs {
    /// Judgments JSONL (`{"qid", "relevant_ids"}`).
    #[arg(long)]
    pub judgments: Option<PathBuf>,
    /// Derive judgments from pack ground truth or item labels instead.
    #[arg(long)]
    pub packs_for_judgments: Option<PathBuf>,
    /// Embedding file whose sidecar labels define relevance.
    #[arg(long)]
    pub label_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub label_ids: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// mAP cutoff.
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    pub cutoff: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![20usize, 100])]
    pub recall_k: Vec<usize>,
    /// Report each cell as the better of the two fusion styles.
    #[arg(long)]
    pub best_of_fusion: bool,
    /// Also write per-template bar-chart series.
    #[arg(long)]
    pub emit_plot_data: bool,
    #[arg(long, default_value_t = BOOTSTRAP_RESAMPLES)]
    pub bootstrap: usize,
    /// Directory for report files.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// RankedResult JSONL files.
    #[arg(long, required = true, num_args = 1..)]
    pub results: Vec<PathBuf>,
    #[command(flatten)]
    pub judgments: JudgmentArgs,
    #[command(flatten)]
    pub report: ReportArgs,
    /// Bootstrap seed; the NSFL_SEED environment variable takes precedence.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Query packs (JSONL).
    #[arg(long)]
    pub packs: PathBuf,
    /// Judgments JSONL; derived from packs and labels when absent.
    #[arg(long)]
    pub judgments: Option<PathBuf>,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[command(flatten)]
    pub operator: OperatorArgs,
    #[command(flatten)]
    pub sqo: SqoArgs,
    #[command(flatten)]
    pub report: ReportArgs,
}

/// Provenance of a run: configuration, input digests, seed and timings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub failures: usize,
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub bytes: u64,
    pub fnv64: String,
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).map_err(|e| NsflError::io(path, e))?;
    let mut h = fnv::FnvHasher::default();
    h.write(&bytes);
    Ok(InputDigest {
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        fnv64: format!("{:016x}", h.finish()),
    })
}

struct Timer {
    timings: BTreeMap<String, f64>,
}

impl Timer {
    fn new() -> Self {
        Self {
            timings: BTreeMap::new(),
        }
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(stage.to_string()).or_default() +=
            start.elapsed().as_secs_f64() * 1e3;
        out
    }
}

/// `NSFL_SEED` if set, else the flag, else the default seed.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| NsflError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag.unwrap_or(DEFAULT_SEED)),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| NsflError::Format(e.to_string()))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| NsflError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| NsflError::io("<stdout>", e))
        }
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut s = String::new();
    for it in items {
        s += &to_json(it)?;
        s.push('\n');
    }
    Ok(s)
}

fn write_manifest(path: Option<&Path>, manifest: &RunManifest) -> Result<()> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(manifest).map_err(|e| NsflError::Format(e.to_string()))?;
        fs::write(p, text + "\n").map_err(|e| NsflError::io(p, e))?;
    }
    Ok(())
}

fn manifest<A: Serialize>(
    command: &str,
    args: &A,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: Vec<String>,
    failures: usize,
    timer: Timer,
) -> Result<RunManifest> {
    Ok(RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed,
        config: serde_json::to_value(args).map_err(|e| NsflError::Format(e.to_string()))?,
        inputs: inputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
        outputs,
        failures,
        timings_ms: timer.timings,
    })
}

/// Packs sorted by qid; records that fail to convert are reported and
/// skipped.
fn load_packs(path: &Path) -> Result<(Vec<QueryPack>, usize)> {
    let mut records: Vec<QueryPackRecord> = read_pack_records(path)?;
    records.sort_by(|a, b| a.qid.cmp(&b.qid));
    let mut failures = 0;
    let mut packs = Vec::with_capacity(records.len());
    for rec in records {
        let qid = rec.qid.clone();
        match QueryPack::from_record(rec) {
            Ok(p) => packs.push(p),
            Err(e) => {
                error!("{qid}: {e}");
                failures += 1;
            }
        }
    }
    Ok((packs, failures))
}

fn load_corpus(c: &CorpusArgs) -> Result<EmbeddingMatrix> {
    load_embeddings(&c.embeddings, c.ids.as_deref())
}

fn corpus_inputs(c: &CorpusArgs) -> Vec<&Path> {
    let mut v = vec![c.embeddings.as_path()];
    if let Some(ids) = &c.ids {
        v.push(ids);
    }
    v
}

fn pipeline_config(
    method: Method,
    stage: Stage,
    retrieval: &RetrievalArgs,
    operator: &OperatorArgs,
    sqo: &SqoArgs,
    seed: u64,
) -> Result<PipelineConfig> {
    let cfg = PipelineConfig {
        method,
        stage,
        oversample_k: retrieval.oversample_k,
        final_k: retrieval.final_k,
        operator: operator.config(),
        sqo: sqo.config(seed),
        ann_backend: Default::default(),
        score_scale: if retrieval.rescale_scores {
            ScoreScale::UnitInterval
        } else {
            ScoreScale::Raw
        },
        geometric_or: match retrieval.geometric_or {
            GeometricOrArg::Sum => GeometricOr::NormalizedSum,
            GeometricOrArg::Passthrough => GeometricOr::MonolithicPassthrough,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Runs every pack, logging and counting per-query failures.
fn search_all(
    packs: &[QueryPack],
    store: &EmbeddingMatrix,
    cfg: &PipelineConfig,
) -> (Vec<RankedResult>, usize) {
    let outcomes: Vec<Result<RankedResult>> =
        packs.par_iter().map(|p| run_query(p, store, cfg)).collect();
    let mut ok = Vec::with_capacity(outcomes.len());
    let mut failures = 0;
    for (p, r) in packs.iter().zip(outcomes) {
        match r {
            Ok(r) => {
                for w in &r.provenance.warnings {
                    warn!("{}: {w}", r.qid);
                }
                ok.push(r);
            }
            Err(e) => {
                error!("{}: {e}", p.qid);
                failures += 1;
            }
        }
    }
    (ok, failures)
}

#[derive(Debug, Clone, Serialize)]
struct IndexStats {
    count: usize,
    dim: usize,
    ids: &'static str,
    labeled: usize,
    raw_norm_min: f64,
    raw_norm_max: f64,
    raw_norm_mean: f64,
}

pub fn cmd_index(args: &IndexArgs) -> Result<u8> {
    let bytes = fs::read(&args.corpus.embeddings).map_err(|e| NsflError::io(&args.corpus.embeddings, e))?;
    let (count, dim, data) = parse_embedding_bytes(&bytes)?;
    let store = load_corpus(&args.corpus)?;
    let norms: Vec<f64> = if dim == 0 {
        Vec::new()
    } else {
        data.chunks_exact(dim)
            .map(|r| l2_norm(&r.iter().map(|&x| f64::from(x)).collect::<Vec<_>>()))
            .collect()
    };
    let stats = IndexStats {
        count,
        dim,
        ids: if args.corpus.ids.is_some() { "sidecar" } else { "row-index" },
        labeled: (0..store.len()).filter(|&r| store.labels(r).is_some()).count(),
        raw_norm_min: norms.iter().copied().fold(f64::INFINITY, f64::min),
        raw_norm_max: norms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        raw_norm_mean: crate::eval::mean(&norms).unwrap_or(f64::NAN),
    };
    let text = serde_json::to_string_pretty(&stats).map_err(|e| NsflError::Format(e.to_string()))?;
    write_text(None, &(text + "\n"))?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeRecord {
    pub qid: String,
    pub kind: FormulaKind,
    pub x_star: Vec<f32>,
    pub cosine_to_monolithic: f64,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub steps_taken: usize,
    pub stop_reason: StopReason,
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_trace: Option<Vec<f64>>,
}

pub fn cmd_optimize(args: &OptimizeArgs) -> Result<u8> {
    let mut timer = Timer::new();
    let seed = resolve_seed(args.sqo.seed)?;
    let sqo = args.sqo.config(seed);
    sqo.validate()?;
    let op = args.operator.config();
    op.validate()?;
    let (packs, mut failures) = timer.time("load", || load_packs(&args.packs))?;
    let outcomes: Vec<Result<OptimizeRecord>> = timer.time("optimize", || {
        packs
            .par_iter()
            .map(|p| {
                let p = validate_pack(p.clone(), p.dim().unwrap_or(0))?;
                let res = optimize(&p, &sqo, &op)?;
                let v_m = p.vector(Component::M)?;
                Ok(OptimizeRecord {
                    qid: p.qid.clone(),
                    kind: p.kind(),
                    cosine_to_monolithic: crate::embedding_store::dot(&res.x_star, v_m),
                    x_star: res.x_star.iter().map(|&x| x as f32).collect(),
                    initial_objective: res.initial_objective,
                    final_objective: res.final_objective,
                    steps_taken: res.steps_taken,
                    stop_reason: res.stop_reason,
                    degenerate: res.degenerate,
                    objective_trace: args.trace.then_some(res.objective_trace),
                })
            })
            .collect()
    });
    let mut records = Vec::new();
    for (p, r) in packs.iter().zip(outcomes) {
        match r {
            Ok(r) => records.push(r),
            Err(e) => {
                error!("{}: {e}", p.qid);
                failures += 1;
            }
        }
    }
    write_text(args.out.as_deref(), &jsonl(&records)?)?;
    let m = manifest(
        "optimize",
        args,
        Some(seed),
        &[&args.packs],
        args.out.iter().map(|p| p.display().to_string()).collect(),
        failures,
        timer,
    )?;
    write_manifest(args.manifest.as_deref(), &m)?;
    info!("optimized {} packs, {failures} failed", records.len());
    Ok(if failures > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

pub fn cmd_search(args: &SearchArgs, command: &str) -> Result<u8> {
    let mut timer = Timer::new();
    let seed = resolve_seed(args.sqo.seed)?;
    let cfg = pipeline_config(
        args.method.into(),
        args.stage.into(),
        &args.retrieval,
        &args.operator,
        &args.sqo,
        seed,
    )?;
    let store = timer.time("load_corpus", || load_corpus(&args.corpus))?;
    let (packs, load_failures) = timer.time("load_packs", || load_packs(&args.packs))?;
    let (results, failures) = timer.time("search", || search_all(&packs, &store, &cfg));
    let failures = failures + load_failures;
    write_text(args.out.as_deref(), &jsonl(&results)?)?;
    let mut inputs = corpus_inputs(&args.corpus);
    inputs.push(&args.packs);
    let m = manifest(
        command,
        &(args, &cfg),
        Some(seed),
        &inputs,
        args.out.iter().map(|p| p.display().to_string()).collect(),
        failures,
        timer,
    )?;
    write_manifest(args.manifest.as_deref(), &m)?;
    info!("ranked {} packs, {failures} failed", results.len());
    Ok(if failures > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

pub fn read_results(path: &Path) -> Result<Vec<RankedResult>> {
    let text = fs::read_to_string(path).map_err(|e| NsflError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| NsflError::Format(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

fn report_options(r: &ReportArgs, seed: u64) -> EvalOptions {
    EvalOptions {
        cutoff: r.cutoff,
        recall_ks: r.recall_k.clone(),
        best_of_fusion: r.best_of_fusion,
        bootstrap_resamples: r.bootstrap,
        seed,
    }
}

/// Writes the report files and returns their paths.
fn write_report(report: &AblationReport, args: &ReportArgs) -> Result<Vec<String>> {
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| NsflError::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| NsflError::Format(e.to_string()))?;
    let mut files = vec![
        ("metrics.csv", report.to_long_csv()),
        ("ablation_matrix.csv", report.to_matrix_csv()),
        ("significance.csv", report.to_significance_csv()),
        ("report.json", json + "\n"),
    ];
    if args.emit_plot_data {
        files.push(("plot_data.csv", report.to_plot_csv()));
    }
    let mut written = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        write_text(Some(&p), &text)?;
        written.push(p.display().to_string());
    }
    for w in &report.warnings {
        warn!("{w}");
    }
    Ok(written)
}

fn judgments_for(args: &JudgmentArgs) -> Result<(Vec<QueryJudgment>, Vec<&Path>)> {
    if let Some(j) = &args.judgments {
        return Ok((read_judgments(j)?, vec![j.as_path()]));
    }
    let packs_path = args.packs_for_judgments.as_deref().ok_or_else(|| {
        NsflError::Config("either --judgments or --packs-for-judgments is required".into())
    })?;
    let (packs, _) = load_packs(packs_path)?;
    let mut inputs = vec![packs_path];
    let store = match &args.label_embeddings {
        Some(e) => {
            inputs.push(e);
            if let Some(i) = &args.label_ids {
                inputs.push(i);
            }
            load_embeddings(e, args.label_ids.as_deref())?
        }
        None => {
            if packs.iter().any(|p| p.ground_truth.is_none()) {
                return Err(NsflError::Config(
                    "packs without relevant_ids need --label-embeddings and --label-ids".into(),
                ));
            }
            EmbeddingMatrix::new(1, Vec::new(), Vec::new())?
        }
    };
    Ok((derive_judgments(&packs, &store), inputs))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<u8> {
    let mut timer = Timer::new();
    let seed = resolve_seed(args.seed)?;
    let mut results = Vec::new();
    for p in &args.results {
        results.extend(timer.time("load_results", || read_results(p))?);
    }
    let (judgments, mut inputs) = timer.time("load_judgments", || judgments_for(&args.judgments))?;
    let report = timer.time("evaluate", || {
        ablation_report(&results, &judgments, &report_options(&args.report, seed))
    })?;
    let written = write_report(&report, &args.report)?;
    write_text(None, &report.to_matrix_csv())?;
    inputs.extend(args.results.iter().map(PathBuf::as_path));
    let m = manifest("eval", args, Some(seed), &inputs, written, 0, timer)?;
    write_manifest(
        Some(&args.manifest.clone().unwrap_or_else(|| args.report.out_dir.join("manifest.json"))),
        &m,
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<u8> {
    let mut timer = Timer::new();
    let seed = resolve_seed(args.sqo.seed)?;
    let mut configs = Vec::new();
    for method in Method::ALL {
        for stage in Stage::ALL {
            configs.push(pipeline_config(
                method,
                stage,
                &args.retrieval,
                &args.operator,
                &args.sqo,
                seed,
            )?);
        }
    }
    let store = timer.time("load_corpus", || load_corpus(&args.corpus))?;
    let (packs, load_failures) = timer.time("load_packs", || load_packs(&args.packs))?;
    let judgments = match &args.judgments {
        Some(j) => read_judgments(j)?,
        None => derive_judgments(&packs, &store),
    };
    let dir = &args.report.out_dir;
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| NsflError::io(&runs_dir, e))?;
    let mut all = Vec::new();
    let mut written = Vec::new();
    let mut failures = load_failures;
    for cfg in &configs {
        let label = format!("{}_{}", cfg.method, cfg.stage);
        let (results, f) = timer.time(&format!("search_{label}"), || search_all(&packs, &store, cfg));
        failures += f;
        let p = runs_dir.join(format!("{label}.jsonl"));
        write_text(Some(&p), &jsonl(&results)?)?;
        written.push(p.display().to_string());
        all.extend(results);
    }
    let report = timer.time("evaluate", || {
        ablation_report(&all, &judgments, &report_options(&args.report, seed))
    })?;
    written.extend(write_report(&report, &args.report)?);
    write_text(None, &report.to_matrix_csv())?;
    let mut inputs = corpus_inputs(&args.corpus);
    inputs.push(&args.packs);
    if let Some(j) = &args.judgments {
        inputs.push(j);
    }
    let m = manifest("ablate", args, Some(seed), &inputs, written, failures, timer)?;
    write_manifest(Some(&dir.join("manifest.json")), &m)?;
    Ok(if failures > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

/// Dispatches a parsed command line and maps errors to exit codes.
pub fn run(cli: Cli) -> u8 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not configure {n} threads: {e}");
        }
    }
    let outcome = match &cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Search(a) => cmd_search(a, "search"),
        Command::Rerank(a) => {
            let mut a = a.clone();
            a.stage = StageArg::Rerank;
            cmd_search(&a, "rerank")
        }
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}
