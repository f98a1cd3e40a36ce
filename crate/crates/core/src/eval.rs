//! Retrieval metrics, the method × stage × template ablation matrix, and
//! paired significance testing.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::embedding_store::EmbeddingMatrix;
use crate::error::{NsflError, Result};
use crate::formula::{FormulaKind, FusionStyle, QueryPack};
use crate::pipeline::{Method, RankedResult, Stage};

pub const DEFAULT_CUTOFF: usize = 100;
pub const DEFAULT_RECALL_KS: [usize; 2] = [20, 100];
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
pub const DEFAULT_BOOTSTRAP_SEED: u64 = 42;
/// Largest effective sample size that uses the exact null distribution.
pub const EXACT_MAX_N: usize = 25;
pub const MIN_EFFECTIVE_PAIRS: usize = 5;

fn require_relevant(relevant: &HashSet<&str>) -> Result<()> {
    if relevant.is_empty() {
        return Err(NsflError::UndefinedMetric("empty relevant set".into()));
    }
    Ok(())
}

/// AP@cutoff normalized by `min(|relevant|, cutoff)`.
pub fn average_precision<S: AsRef<str>, R: AsRef<str>>(
    ranking: &[S],
    relevant: &[R],
    cutoff: usize,
) -> Result<f64> {
    if cutoff == 0 {
        return Err(NsflError::Config("cutoff must be at least 1".into()));
    }
    let rel: HashSet<&str> = relevant.iter().map(AsRef::as_ref).collect();
    require_relevant(&rel)?;
    let mut seen = HashSet::new();
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranking.iter().take(cutoff).enumerate() {
        let id = id.as_ref();
        if rel.contains(id) && seen.insert(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / rel.len().min(cutoff) as f64)
}

/// `|top-k ∩ relevant| / |relevant|`.
pub fn recall_at_k<S: AsRef<str>, R: AsRef<str>>(
    ranking: &[S],
    relevant: &[R],
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(NsflError::Config("K must be at least 1".into()));
    }
    let rel: HashSet<&str> = relevant.iter().map(AsRef::as_ref).collect();
    require_relevant(&rel)?;
    let found: HashSet<&str> = ranking
        .iter()
        .take(k)
        .map(AsRef::as_ref)
        .filter(|id| rel.contains(id))
        .collect();
    Ok(found.len() as f64 / rel.len() as f64)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryJudgment {
    pub qid: String,
    pub relevant_ids: BTreeSet<String>,
}

pub fn read_judgments(path: &Path) -> Result<Vec<QueryJudgment>> {
    let file = File::open(path).map_err(|e| NsflError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| NsflError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let j: QueryJudgment = serde_json::from_str(&line).map_err(|e| {
            NsflError::Format(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(j);
    }
    Ok(out)
}

pub fn write_judgments(path: &Path, judgments: &[QueryJudgment]) -> Result<()> {
    let file = File::create(path).map_err(|e| NsflError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for j in judgments {
        let line = serde_json::to_string(j).map_err(|e| NsflError::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| NsflError::io(path, e))?;
    }
    w.flush().map_err(|e| NsflError::io(path, e))
}

/// Judgments from pack ground truth, falling back to evaluating the formula
/// against item labels.
pub fn derive_judgments(packs: &[QueryPack], store: &EmbeddingMatrix) -> Vec<QueryJudgment> {
    packs
        .iter()
        .map(|p| {
            let relevant_ids = match &p.ground_truth {
                Some(gt) => gt.clone(),
                None => (0..store.len())
                    .filter(|&r| {
                        store
                            .labels(r)
                            .is_some_and(|labels| p.formula.satisfied_by(labels))
                    })
                    .map(|r| store.id(r).to_string())
                    .collect(),
            };
            QueryJudgment {
                qid: p.qid.clone(),
                relevant_ids,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub stage: Stage,
    pub template: FormulaKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion_style: Option<FusionStyle>,
    pub cutoff: usize,
    pub per_query_ap: BTreeMap<String, f64>,
    pub map_at_k: f64,
    pub recall_at: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub cutoff: usize,
    pub recall_ks: Vec<usize>,
    /// Report each cell as the better of the two fusion styles.
    pub best_of_fusion: bool,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
            recall_ks: DEFAULT_RECALL_KS.to_vec(),
            best_of_fusion: false,
            bootstrap_resamples: BOOTSTRAP_RESAMPLES,
            seed: DEFAULT_BOOTSTRAP_SEED,
        }
    }
}

type CellKey = (Method, Stage, FormulaKind);

/// Per-query scores of one result: AP and recall at each K.
struct QueryScores {
    fusion: FusionStyle,
    qid: String,
    ap: f64,
    recall: Vec<f64>,
}

/// Groups results by (method, stage, template) and scores each query.
/// Queries with an empty relevant set are skipped with a warning.
fn score_results(
    results: &[RankedResult],
    judgments: &[QueryJudgment],
    opts: &EvalOptions,
    warnings: &mut Vec<String>,
) -> Result<BTreeMap<CellKey, Vec<QueryScores>>> {
    let by_qid: BTreeMap<&str, &QueryJudgment> =
        judgments.iter().map(|j| (j.qid.as_str(), j)).collect();
    let mut cells: BTreeMap<CellKey, Vec<QueryScores>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for r in results {
        let j = by_qid
            .get(r.qid.as_str())
            .ok_or_else(|| NsflError::MissingJudgment(r.qid.clone()))?;
        let fusion = r.provenance.fusion_style;
        if !seen.insert((r.method, r.stage, fusion, r.qid.clone())) {
            return Err(NsflError::Format(format!(
                "duplicate result for {} / {} / {} / {}",
                r.qid,
                r.method,
                r.stage,
                fusion.as_str()
            )));
        }
        if j.relevant_ids.is_empty() {
            warnings.push(format!("{}: no relevant items, excluded", r.qid));
            continue;
        }
        let ranking = r.ids();
        let rel: Vec<&str> = j.relevant_ids.iter().map(String::as_str).collect();
        let ap = average_precision(&ranking, &rel, opts.cutoff)?;
        let recall = opts
            .recall_ks
            .iter()
            .map(|&k| recall_at_k(&ranking, &rel, k))
            .collect::<Result<Vec<_>>>()?;
        cells
            .entry((r.method, r.stage, r.provenance.kind))
            .or_default()
            .push(QueryScores {
                fusion,
                qid: r.qid.clone(),
                ap,
                recall,
            });
    }
    Ok(cells)
}

fn query_key(q: &QueryScores, multi_fusion: bool) -> String {
    if multi_fusion {
        format!("{}@{}", q.qid, q.fusion.as_str())
    } else {
        q.qid.clone()
    }
}

fn build_report(
    key: CellKey,
    fusion_style: Option<FusionStyle>,
    scores: &[&QueryScores],
    opts: &EvalOptions,
    multi_fusion: bool,
) -> EvalReport {
    let per_query_ap: BTreeMap<String, f64> = scores
        .iter()
        .map(|q| (query_key(q, multi_fusion), q.ap))
        .collect();
    let aps: Vec<f64> = per_query_ap.values().copied().collect();
    let recall_at = opts
        .recall_ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let v: Vec<f64> = scores.iter().map(|q| q.recall[i]).collect();
            (k, mean(&v).unwrap_or(0.0))
        })
        .collect();
    EvalReport {
        method: key.0,
        stage: key.1,
        template: key.2,
        fusion_style,
        cutoff: opts.cutoff,
        map_at_k: mean(&aps).unwrap_or(0.0),
        per_query_ap,
        recall_at,
    }
}

fn cell_reports(
    key: CellKey,
    scores: &[QueryScores],
    opts: &EvalOptions,
) -> EvalReport {
    let styles: BTreeSet<FusionStyle> = scores.iter().map(|q| q.fusion).collect();
    let multi = styles.len() > 1;
    if opts.best_of_fusion && multi {
        styles
            .iter()
            .map(|&s| {
                let subset: Vec<&QueryScores> = scores.iter().filter(|q| q.fusion == s).collect();
                build_report(key, Some(s), &subset, opts, false)
            })
            .reduce(|best, r| if r.map_at_k > best.map_at_k { r } else { best })
            .expect("at least one fusion style")
    } else {
        let all: Vec<&QueryScores> = scores.iter().collect();
        let style = if multi { None } else { styles.first().copied() };
        build_report(key, style, &all, opts, multi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    /// Mean of `b - a` over all pairs.
    pub mean_delta: f64,
    pub ci_95: (f64, f64),
    pub exact: bool,
}

/// Midranks of `values` (1-based), ties sharing the average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided exact p-value for the signed-rank statistic with possibly tied
/// ranks. `doubled` holds `2 * rank` (always an integer), `w_plus2` is twice
/// the observed positive rank sum.
fn exact_p_value(doubled: &[usize], w_plus2: usize) -> f64 {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled {
        reach += r;
        for s in (r..=reach).rev() {
            counts[s] += counts[s - r];
        }
    }
    let all: f64 = counts.iter().sum();
    let w_min = w_plus2.min(total - w_plus2);
    let lower: f64 = counts[..=w_min].iter().sum();
    (2.0 * lower / all).min(1.0)
}

fn normal_p_value(n: usize, abs_d: &[f64], ranks: &[f64], w_plus: f64) -> f64 {
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted: Vec<f64> = abs_d.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    debug_assert_eq!(ranks.len(), n);
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("valid parameters");
    (2.0 * (1.0 - std_normal.cdf(z))).clamp(0.0, 1.0)
}

/// Percentile bootstrap 95% interval of the mean of `d`.
pub fn bootstrap_ci(d: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let n = d.len();
    if n == 0 || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut means: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let s: f64 = (0..n).map(|_| d[rng.random_range(0..n)]).sum();
            s / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    // Mirrored order statistics so that negating `d` negates the interval.
    let lo = resamples * 25 / 1000;
    (means[lo], means[resamples - 1 - lo])
}

/// Wilcoxon signed-rank test on `b - a` with default bootstrap settings.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<SignificanceResult> {
    wilcoxon_signed_rank_with(a, b, BOOTSTRAP_RESAMPLES, DEFAULT_BOOTSTRAP_SEED)
}

pub fn wilcoxon_signed_rank_with(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    if a.len() != b.len() {
        return Err(NsflError::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let nonzero: Vec<f64> = d.iter().copied().filter(|&x| x != 0.0).collect();
    let n = nonzero.len();
    if n < MIN_EFFECTIVE_PAIRS {
        return Err(NsflError::InsufficientData { n_effective: n });
    }
    let abs_d: Vec<f64> = nonzero.iter().map(|x| x.abs()).collect();
    let ranks = average_ranks(&abs_d);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(x, _)| **x > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let exact = n <= EXACT_MAX_N;
    let p_value = if exact {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        exact_p_value(&doubled, (2.0 * w_plus).round() as usize)
    } else {
        normal_p_value(n, &abs_d, &ranks, w_plus)
    };
    Ok(SignificanceResult {
        statistic: w_plus.min(w_minus),
        p_value,
        n_effective: n,
        mean_delta: mean(&d).unwrap_or(0.0),
        ci_95: bootstrap_ci(&d, resamples, seed),
        exact,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: Method,
    pub stage: Stage,
    pub cells: BTreeMap<FormulaKind, f64>,
    pub average: Option<f64>,
}

impl AblationRow {
    pub fn label(&self) -> String {
        let m = match self.method {
            Method::Baseline => "Baseline",
            Method::Nsfl => "NSFL",
            Method::Geometric => "GEO",
        };
        let s = match self.stage {
            Stage::RerankOnly => "Rerank only",
            Stage::OptOnly => "Opt only",
            Stage::Hybrid => "Hybrid",
        };
        format!("{m} - {s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub template: FormulaKind,
    pub method: Method,
    pub stage: Stage,
    pub baseline_map: f64,
    pub method_map: f64,
    pub n_pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<SignificanceResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub cutoff: usize,
    pub best_of_fusion: bool,
    pub rows: Vec<AblationRow>,
    pub reports: Vec<EvalReport>,
    pub significance: Vec<SignificanceRow>,
    pub warnings: Vec<String>,
}

fn pair_aps(base: &EvalReport, other: &EvalReport) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (qid, ap) in &base.per_query_ap {
        if let Some(bp) = other.per_query_ap.get(qid) {
            a.push(*ap);
            b.push(*bp);
        }
    }
    (a, b)
}

/// mAP matrix over (method, stage) × template with per-template significance
/// of every non-baseline row against the baseline.
pub fn ablation_report(
    results: &[RankedResult],
    judgments: &[QueryJudgment],
    opts: &EvalOptions,
) -> Result<AblationReport> {
    if opts.cutoff == 0 {
        return Err(NsflError::Config("cutoff must be at least 1".into()));
    }
    let mut warnings = Vec::new();
    let cells = score_results(results, judgments, opts, &mut warnings)?;
    let reports: Vec<EvalReport> = cells
        .iter()
        .map(|(&key, scores)| cell_reports(key, scores, opts))
        .collect();
    let find = |m: Method, s: Stage, t: FormulaKind| {
        reports
            .iter()
            .find(|r| r.method == m && r.stage == s && r.template == t)
    };

    let mut rows = Vec::new();
    for method in Method::ALL {
        for stage in Stage::ALL {
            let row_cells: BTreeMap<FormulaKind, f64> = FormulaKind::ALL
                .iter()
                .filter_map(|&t| find(method, stage, t).map(|r| (t, r.map_at_k)))
                .collect();
            if row_cells.is_empty() {
                continue;
            }
            let vals: Vec<f64> = FormulaKind::ALL
                .iter()
                .filter_map(|t| row_cells.get(t).copied())
                .collect();
            rows.push(AblationRow {
                method,
                stage,
                average: mean(&vals),
                cells: row_cells,
            });
        }
    }

    let mut significance = Vec::new();
    for template in FormulaKind::ALL {
        let Some(base) = Stage::ALL
            .iter()
            .find_map(|&s| find(Method::Baseline, s, template))
        else {
            continue;
        };
        for method in [Method::Nsfl, Method::Geometric] {
            for stage in Stage::ALL {
                let Some(other) = find(method, stage, template) else {
                    continue;
                };
                let (a, b) = pair_aps(base, other);
                let (result, warning) =
                    match wilcoxon_signed_rank_with(&a, &b, opts.bootstrap_resamples, opts.seed) {
                        Ok(r) => (Some(r), None),
                        Err(e @ NsflError::InsufficientData { .. }) => (None, Some(e.to_string())),
                        Err(e) => return Err(e),
                    };
                if let Some(w) = &warning {
                    warnings.push(format!("{template} {method}/{stage}: {w}"));
                }
                significance.push(SignificanceRow {
                    template,
                    method,
                    stage,
                    baseline_map: mean(&a).unwrap_or(0.0),
                    method_map: mean(&b).unwrap_or(0.0),
                    n_pairs: a.len(),
                    result,
                    warning,
                });
            }
        }
    }

    Ok(AblationReport {
        cutoff: opts.cutoff,
        best_of_fusion: opts.best_of_fusion,
        rows,
        reports,
        significance,
        warnings,
    })
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.6}")
}

impl AblationReport {
    /// Long format: `method,stage,template,metric,value`.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("method,stage,template,metric,value\n");
        for r in &self.reports {
            let t = r.template.as_str();
            out += &format!(
                "{},{},{t},map@{},{}\n",
                r.method,
                r.stage,
                r.cutoff,
                fmt_metric(r.map_at_k)
            );
            for (k, v) in &r.recall_at {
                out += &format!("{},{},{t},recall@{k},{}\n", r.method, r.stage, fmt_metric(*v));
            }
        }
        for row in &self.rows {
            if let Some(avg) = row.average {
                out += &format!(
                    "{},{},avg,map@{},{}\n",
                    row.method,
                    row.stage,
                    self.cutoff,
                    fmt_metric(avg)
                );
            }
        }
        out
    }

    /// Wide matrix: one row per (method, stage), templates as columns, then
    /// the row average.
    pub fn to_matrix_csv(&self) -> String {
        let mut out = String::from("method,stage,row");
        for t in FormulaKind::ALL {
            out += &format!(",{}", t.as_str());
        }
        out += ",avg\n";
        for row in &self.rows {
            out += &format!("{},{},{}", row.method, row.stage, row.label());
            for t in FormulaKind::ALL {
                out.push(',');
                if let Some(v) = row.cells.get(&t) {
                    out += &fmt_metric(*v);
                }
            }
            out.push(',');
            if let Some(v) = row.average {
                out += &fmt_metric(v);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_significance_csv(&self) -> String {
        let mut out = String::from(
            "template,method,stage,baseline_map,method_map,delta,ci_low,ci_high,statistic,p_value,n_effective\n",
        );
        for s in &self.significance {
            out += &format!(
                "{},{},{},{},{}",
                s.template.as_str(),
                s.method,
                s.stage,
                fmt_metric(s.baseline_map),
                fmt_metric(s.method_map)
            );
            match &s.result {
                Some(r) => {
                    out += &format!(
                        ",{},{},{},{},{:e},{}\n",
                        fmt_metric(r.mean_delta),
                        fmt_metric(r.ci_95.0),
                        fmt_metric(r.ci_95.1),
                        r.statistic,
                        r.p_value,
                        r.n_effective
                    );
                }
                None => out += ",,,,,,\n",
            }
        }
        out
    }

    /// Bar-chart series: `template,series,value`, one series per row.
    pub fn to_plot_csv(&self) -> String {
        let mut out = String::from("template,series,value\n");
        for t in FormulaKind::ALL {
            for row in &self.rows {
                if let Some(v) = row.cells.get(&t) {
                    out += &format!("{},{},{}\n", t.template(), row.label(), fmt_metric(*v));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ap_examples() {
        let ap = average_precision(&["r1", "x", "r2", "y"], &["r1", "r2"], 100).unwrap();
        assert_abs_diff_eq!(ap, (1.0 + 2.0 / 3.0) / 2.0, epsilon = 1e-12);
        assert_eq!(average_precision(&["a", "b", "c"], &["a", "b"], 100).unwrap(), 1.0);
        assert_eq!(average_precision(&["x", "y"], &["a"], 100).unwrap(), 0.0);
        assert!(matches!(
            average_precision::<&str, &str>(&["x"], &[], 10),
            Err(NsflError::UndefinedMetric(_))
        ));
        // only the top cutoff counts; normalizer caps at the cutoff
        assert_eq!(average_precision(&["a", "b", "c"], &["a", "b", "c"], 2).unwrap(), 1.0);
        assert_eq!(average_precision(&["x", "a"], &["a"], 1).unwrap(), 0.0);
    }

    #[test]
    fn recall_examples() {
        let ranking: Vec<String> = (0..20).map(|i| format!("d{i}")).collect();
        assert_eq!(recall_at_k(&ranking, &["d3", "zz"], 20).unwrap(), 0.5);
        assert_eq!(recall_at_k(&["a", "b"], &["a", "b"], 100).unwrap(), 1.0);
        assert_eq!(recall_at_k(&["a", "b"], &["c"], 100).unwrap(), 0.0);
        assert!(recall_at_k::<&str, &str>(&["a"], &[], 5).is_err());
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[0.3, 0.1, 0.3, 0.2]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identical_series_have_insufficient_data() {
        let a = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert!(matches!(
            wilcoxon_signed_rank(&a, &a),
            Err(NsflError::InsufficientData { n_effective: 0 })
        ));
    }

    #[test]
    fn all_positive_differences_give_minimum_p() {
        let a = [0.0; 6];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = wilcoxon_signed_rank_with(&a, &b, 200, 1).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_abs_diff_eq!(r.p_value, 2.0 / 64.0, epsilon = 1e-15);
        assert!(r.exact);
        assert_abs_diff_eq!(r.mean_delta, 3.5, epsilon = 1e-15);
    }

    #[test]
    fn normal_branch_for_large_samples() {
        let a: Vec<f64> = (0..40).map(|i| i as f64 * 0.01).collect();
        let b: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, x)| x + if i % 4 == 0 { -0.005 } else { 0.01 } * (1 + i % 3) as f64)
            .collect();
        let r = wilcoxon_signed_rank_with(&a, &b, 500, 3).unwrap();
        assert!(!r.exact);
        assert!(r.p_value > 0.0 && r.p_value < 0.01);
        assert!(r.ci_95.0 <= r.mean_delta && r.mean_delta <= r.ci_95.1);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let d = [0.1, -0.2, 0.3, 0.05, 0.0, 0.4];
        assert_eq!(bootstrap_ci(&d, 1000, 9), bootstrap_ci(&d, 1000, 9));
        assert_ne!(bootstrap_ci(&d, 1000, 9), bootstrap_ci(&d, 1000, 10));
    }

    proptest! {
        #[test]
        fn swapping_series_preserves_p(pairs in prop::collection::vec((0u8..8, 0u8..8), 5..40)) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 8.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64 / 8.0).collect();
            match (wilcoxon_signed_rank_with(&a, &b, 100, 5), wilcoxon_signed_rank_with(&b, &a, 100, 5)) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(x.p_value, y.p_value);
                    prop_assert_eq!(x.statistic, y.statistic);
                    prop_assert_eq!(x.mean_delta, -y.mean_delta);
                    prop_assert_eq!(x.ci_95.0, -y.ci_95.1);
                    prop_assert!((0.0..=1.0).contains(&x.p_value));
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "asymmetric failure"),
            }
        }

        #[test]
        fn recall_grows_with_k(n in 1usize..60, rel in prop::collection::btree_set(0usize..80, 1..20), k in 1usize..70) {
            let ranking: Vec<String> = (0..n).map(|i| i.to_string()).collect();
            let rel: Vec<String> = rel.iter().map(|i| i.to_string()).collect();
            let r1 = recall_at_k(&ranking, &rel, k).unwrap();
            let r2 = recall_at_k(&ranking, &rel, k + 1).unwrap();
            prop_assert!(r1 <= r2);
        }

        #[test]
        fn ap_ignores_order_below_last_hit(
            perm_seed in any::<u64>(),
            hits in prop::collection::btree_set(0usize..30, 1..6),
        ) {
            let ranking: Vec<String> = (0..30).map(|i| format!("d{i}")).collect();
            let rel: Vec<String> = hits.iter().map(|i| format!("d{i}")).collect();
            let last = *hits.iter().max().unwrap();
            let mut shuffled = ranking.clone();
            let tail = &mut shuffled[last + 1..];
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            for i in (1..tail.len()).rev() {
                tail.swap(i, rng.random_range(0..=i));
            }
            prop_assert_eq!(
                average_precision(&ranking, &rel, 100).unwrap(),
                average_precision(&shuffled, &rel, 100).unwrap()
            );
        }
    }
}
