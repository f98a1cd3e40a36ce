//! Query execution: candidate retrieval, over-sampling, rescoring and final
//! top-k selection for every (method, stage) configuration.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{dot_mixed, EmbeddingMatrix, ScoreScale};
use crate::error::{NsflError, Result};
use crate::formula::{validate_pack, Component, FormulaKind, FusionStyle, QueryPack};
use crate::geometric::{geometric_query, GeometricOr};
use crate::operators::{score_formula, Branch, GateMaxMode, GateMaxima, OperatorConfig, ScoreBundle};
use crate::sqo::{optimize, SqoConfig, StopReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Nsfl,
    Geometric,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Baseline, Method::Nsfl, Method::Geometric];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Nsfl => "nsfl",
            Method::Geometric => "geometric",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "rerank")]
    RerankOnly,
    #[serde(rename = "opt")]
    OptOnly,
    #[serde(rename = "hybrid")]
    Hybrid,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::RerankOnly, Stage::OptOnly, Stage::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::RerankOnly => "rerank",
            Stage::OptOnly => "opt",
            Stage::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnBackend {
    #[default]
    Exact,
    /// Caller-supplied [`AnnIndex`].
    Plugin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    pub stage: Stage,
    pub oversample_k: usize,
    pub final_k: usize,
    pub operator: OperatorConfig,
    pub sqo: SqoConfig,
    pub ann_backend: AnnBackend,
    pub score_scale: ScoreScale,
    pub geometric_or: GeometricOr,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: Method::Nsfl,
            stage: Stage::RerankOnly,
            oversample_k: 1000,
            final_k: 100,
            operator: OperatorConfig::default(),
            sqo: SqoConfig::default(),
            ann_backend: AnnBackend::Exact,
            score_scale: ScoreScale::Raw,
            geometric_or: GeometricOr::NormalizedSum,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.final_k == 0 {
            return Err(NsflError::Config("final k must be at least 1".into()));
        }
        if self.final_k > self.oversample_k {
            return Err(NsflError::Config(format!(
                "final k ({}) exceeds oversample K ({})",
                self.final_k, self.oversample_k
            )));
        }
        self.operator.validate()?;
        self.sqo.validate()
    }
}

/// A retrieved corpus row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub row: usize,
    pub score: f64,
}

/// Nearest-neighbor search by inner product over unit vectors.
pub trait AnnIndex: Sync {
    fn name(&self) -> &str;

    /// Up to `k` rows, best first, ties by id ascending.
    fn search(&self, query: &[f64], k: usize) -> Result<Vec<Candidate>>;
}

/// Full scan with partial selection.
#[derive(Debug, Clone, Copy)]
pub struct ExactIndex<'a> {
    store: &'a EmbeddingMatrix,
}

impl<'a> ExactIndex<'a> {
    pub fn new(store: &'a EmbeddingMatrix) -> Self {
        Self { store }
    }
}

/// Descending score, then ascending id.
pub fn rank_order(store: &EmbeddingMatrix, a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| store.id(a.row).cmp(store.id(b.row)))
}

impl AnnIndex for ExactIndex<'_> {
    fn name(&self) -> &str {
        "exact"
    }

    fn search(&self, query: &[f64], k: usize) -> Result<Vec<Candidate>> {
        if self.store.is_empty() {
            return Err(NsflError::EmptyCorpus);
        }
        let scores = self.store.scores(query)?;
        let mut cands: Vec<Candidate> = scores
            .into_iter()
            .enumerate()
            .map(|(row, score)| Candidate { row, score })
            .collect();
        let k = k.min(cands.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        let cmp = |a: &Candidate, b: &Candidate| rank_order(self.store, a, b);
        if k < cands.len() {
            cands.select_nth_unstable_by(k - 1, cmp);
            cands.truncate(k);
        }
        cands.sort_by(cmp);
        Ok(cands)
    }
}

/// Exact top-`k` by cosine as `(id, score)`.
pub fn retrieve_candidates(
    query: &[f64],
    store: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(NsflError::Config("k must be at least 1".into()));
    }
    Ok(ExactIndex::new(store)
        .search(query, k)?
        .into_iter()
        .map(|c| (store.id(c.row).to_string(), c.score))
        .collect())
}

/// Mean recall of `index` against exact search over `queries`.
pub fn measure_recall(
    index: &dyn AnnIndex,
    store: &EmbeddingMatrix,
    queries: &[Vec<f64>],
    k: usize,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(NsflError::UndefinedMetric("no queries".into()));
    }
    let exact = ExactIndex::new(store);
    let mut total = 0.0;
    for q in queries {
        let truth: std::collections::HashSet<usize> =
            exact.search(q, k)?.into_iter().map(|c| c.row).collect();
        let got = index.search(q, k)?;
        let hits = got.iter().filter(|c| truth.contains(&c.row)).count();
        total += hits as f64 / truth.len().max(1) as f64;
    }
    Ok(total / queries.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BranchCounts {
    pub reinforcement: usize,
    pub departure: usize,
    pub standard: usize,
}

impl BranchCounts {
    fn record(&mut self, b: Branch) {
        match b {
            Branch::Reinforcement => self.reinforcement += 1,
            Branch::Departure => self.departure += 1,
            Branch::Standard => self.standard += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.reinforcement + self.departure + self.standard
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqoSummary {
    pub steps_taken: usize,
    pub stop_reason: StopReason,
    pub initial_objective: f64,
    pub final_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub stage: Stage,
    pub kind: FormulaKind,
    pub fusion_style: FusionStyle,
    pub score_scale: ScoreScale,
    pub index: String,
    pub oversample_k: usize,
    pub final_k: usize,
    pub pool_size: usize,
    pub branch_counts: BranchCounts,
    pub gate_clamped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gate_maxima: Option<GateMaxima>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sqo: Option<SqoSummary>,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub qid: String,
    pub method: Method,
    pub stage: Stage,
    pub entries: Vec<RankedEntry>,
    pub provenance: Provenance,
}

impl RankedResult {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }
}

/// Similarities of one row against every component the pack carries.
fn bundle_for_row(pack: &QueryPack, row: &[f32], scale: ScoreScale) -> ScoreBundle {
    use Component::*;
    let s = |c: Component| pack.try_vector(c).map(|v| scale.apply(dot_mixed(v, row)));
    ScoreBundle {
        s_a: s(A).unwrap_or(f64::NAN),
        s_b: s(B).unwrap_or(f64::NAN),
        s_c: s(C),
        s_ab: s(AB),
        s_abc: s(ABC),
        s_m: s(M),
    }
}

fn gate_maxima(
    pack: &QueryPack,
    store: &EmbeddingMatrix,
    pool: &[Candidate],
    cfg: &PipelineConfig,
) -> Result<Option<GateMaxima>> {
    if !cfg.operator.use_smoothed_not {
        return Ok(None);
    }
    let gated = match pack.kind() {
        FormulaKind::Not2 => Component::B,
        FormulaKind::AndNot3 => Component::C,
        _ => return Ok(None),
    };
    let v = pack.vector(gated)?;
    let max = match cfg.operator.gate_max_mode {
        GateMaxMode::PoolMax => pool
            .iter()
            .map(|c| cfg.score_scale.apply(dot_mixed(v, store.row(c.row))))
            .fold(f64::NEG_INFINITY, f64::max),
        GateMaxMode::CorpusMax => store
            .scores(v)?
            .into_iter()
            .map(|s| cfg.score_scale.apply(s))
            .fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(Some(if gated == Component::B {
        GateMaxima {
            s_b_max: Some(max),
            s_c_max: None,
        }
    } else {
        GateMaxima {
            s_b_max: None,
            s_c_max: Some(max),
        }
    }))
}

fn sorted_entries(
    store: &EmbeddingMatrix,
    mut scored: Vec<Candidate>,
    final_k: usize,
) -> Vec<RankedEntry> {
    scored.sort_by(|a, b| rank_order(store, a, b));
    scored.truncate(final_k);
    scored
        .into_iter()
        .map(|c| RankedEntry {
            id: store.id(c.row).to_string(),
            score: c.score,
        })
        .collect()
}

/// Runs one query with exact retrieval.
pub fn run_query(
    pack: &QueryPack,
    store: &EmbeddingMatrix,
    cfg: &PipelineConfig,
) -> Result<RankedResult> {
    if cfg.ann_backend == AnnBackend::Plugin {
        return Err(NsflError::Config(
            "plugin backend selected but no index supplied".into(),
        ));
    }
    run_query_with_index(pack, store, &ExactIndex::new(store), cfg)
}

/// Runs one query through an arbitrary index.
pub fn run_query_with_index(
    pack: &QueryPack,
    store: &EmbeddingMatrix,
    index: &dyn AnnIndex,
    cfg: &PipelineConfig,
) -> Result<RankedResult> {
    cfg.validate()?;
    if store.is_empty() {
        return Err(NsflError::EmptyCorpus);
    }
    let pack = validate_pack(pack.clone(), store.dim())?;
    let kind = pack.kind();
    let scale = cfg.score_scale;
    let mut notes = Vec::new();
    let mut warnings = Vec::new();
    if cfg.oversample_k > store.len() {
        warnings.push(format!(
            "oversample K={} exceeds corpus size {}; clamped",
            cfg.oversample_k,
            store.len()
        ));
    }
    let oversample_k = cfg.oversample_k.min(store.len());

    let mut sqo_summary = None;
    let query_vec: Vec<f64> = match (cfg.method, cfg.stage) {
        (Method::Baseline, _) | (_, Stage::RerankOnly) => pack.vector(Component::M)?.to_vec(),
        (Method::Nsfl, _) => {
            let res = optimize(&pack, &cfg.sqo, &cfg.operator)?;
            notes.push("sqo-gate-max=1".to_string());
            sqo_summary = Some(SqoSummary {
                steps_taken: res.steps_taken,
                stop_reason: res.stop_reason,
                initial_objective: res.initial_objective,
                final_objective: res.final_objective,
            });
            res.x_star
        }
        (Method::Geometric, _) => geometric_query(&pack, cfg.geometric_or)?,
    };

    let geo_vec = if cfg.method == Method::Geometric {
        if kind == FormulaKind::AndNot3 {
            notes.push("extrapolated-baseline".to_string());
        }
        if matches!(kind, FormulaKind::Or2 | FormulaKind::Or3)
            && cfg.geometric_or == GeometricOr::MonolithicPassthrough
        {
            notes.push("geometric-or-monolithic-passthrough".to_string());
        }
        Some(match cfg.stage {
            Stage::RerankOnly => geometric_query(&pack, cfg.geometric_or)?,
            _ => query_vec.clone(),
        })
    } else {
        None
    };

    let rescore = cfg.method != Method::Baseline && cfg.stage != Stage::OptOnly;
    let pool_k = if rescore { oversample_k } else { cfg.final_k };
    let pool = index.search(&query_vec, pool_k)?;

    let mut counts = BranchCounts::default();
    let mut gate_clamped = 0;
    let mut maxima_used = None;
    let scored: Vec<Candidate> = if !rescore {
        if cfg.method == Method::Baseline {
            notes.push("monolithic".to_string());
        }
        counts.standard = pool.len();
        pool.iter()
            .map(|c| Candidate {
                row: c.row,
                score: scale.apply(c.score),
            })
            .collect()
    } else if let Some(geo) = &geo_vec {
        notes.push("geometric-rerank-by-cosine".to_string());
        counts.standard = pool.len();
        pool.iter()
            .map(|c| Candidate {
                row: c.row,
                score: scale.apply(dot_mixed(geo, store.row(c.row))),
            })
            .collect()
    } else {
        match kind {
            FormulaKind::Or3 => notes.push("extrapolated-ternary".to_string()),
            FormulaKind::AndNot3 => notes.push("and-not3-inner-stable-and".to_string()),
            _ => {}
        }
        let maxima = gate_maxima(&pack, store, &pool, cfg)?;
        maxima_used = maxima;
        let maxima = maxima.unwrap_or_default();
        let mut out = Vec::with_capacity(pool.len());
        for c in &pool {
            let b = bundle_for_row(&pack, store.row(c.row), scale);
            let s = score_formula(kind, &b, &cfg.operator, &maxima)?;
            counts.record(s.branch);
            gate_clamped += usize::from(s.gate_clamped);
            out.push(Candidate {
                row: c.row,
                score: s.value,
            });
        }
        out
    };

    let pool_size = pool.len();
    let entries = sorted_entries(store, scored, cfg.final_k);
    Ok(RankedResult {
        qid: pack.qid.clone(),
        method: cfg.method,
        stage: cfg.stage,
        entries,
        provenance: Provenance {
            method: cfg.method,
            stage: cfg.stage,
            kind,
            fusion_style: pack.fusion_style,
            score_scale: scale,
            index: index.name().to_string(),
            oversample_k,
            final_k: cfg.final_k,
            pool_size,
            branch_counts: counts,
            gate_clamped,
            gate_maxima: maxima_used,
            sqo: sqo_summary,
            notes,
            warnings,
        },
    })
}

/// Runs every pack in parallel; output order follows input order.
pub fn run_queries(
    packs: &[QueryPack],
    store: &EmbeddingMatrix,
    cfg: &PipelineConfig,
) -> Vec<Result<RankedResult>> {
    packs.par_iter().map(|p| run_query(p, store, cfg)).collect()
}
