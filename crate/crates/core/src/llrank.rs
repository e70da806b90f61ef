//! Likelihood ranking with a report-free prior.
//!
//! For a label `c` with tokens `y_1..y_T`:
//!
//! ```text
//! l_cond(x, c) = (1/T) Σ_t -ln p(y_t | prompt(x), y_<t)
//! l_prior(c)   = (1/T) Σ_t -ln p(y_t | prompt(""), y_<t)
//! S(x, c)      = -l_cond(x, c) + alpha * l_prior(c)
//! ```
//!
//! Labels are sorted by `S` descending, ties by catalog index ascending.
//! `alpha = 0` is plain conditional likelihood; `alpha = 1` is the default.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, LabelCatalog, PromptTemplate, Report};
use crate::metrics::{self, EvalRun, MacroAveraging, MetricRow, MetricsError};
use crate::provider::{Provider, ProviderError, ProviderId};
use crate::ranking::{EntryDetail, RankedEntry, RankedList};

pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LlRankError {
    #[error("alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),

    #[error("prior cache invalid: {0}")]
    CacheInvalid(String),

    #[error("label {0:?} has no tokens")]
    EmptyLabel(String),

    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error(transparent)]
    Metrics(#[from] MetricsError),

    #[error("{0}")]
    Io(String),
}

/// Serial or data-parallel evaluation. Results are identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBreakdown {
    pub label_code: String,
    pub l_cond: f64,
    pub l_prior: f64,
    pub alpha: f64,
    pub score: f64,
}

pub fn check_alpha(alpha: f64) -> Result<(), LlRankError> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(LlRankError::InvalidAlpha(alpha))
    }
}

/// Mean negative log-likelihood per label token under `context`.
fn per_token_nll(
    provider: &dyn Provider,
    context: &str,
    label: &Label,
) -> Result<f64, LlRankError> {
    if label.token_ids.is_empty() {
        return Err(LlRankError::EmptyLabel(label.code.clone()));
    }
    let scored = provider.score_continuation(context, &label.token_ids)?;
    Ok(scored.total_nll() / label.token_ids.len() as f64)
}

pub fn conditional_nll(
    report: &Report,
    label: &Label,
    template: &PromptTemplate,
    provider: &dyn Provider,
) -> Result<f64, LlRankError> {
    per_token_nll(provider, &template.with_report(&report.text), label)
}

/// Combines the two NLLs. An infinite NLL (a zero-probability token) sends
/// the score to -inf so the label sorts last.
fn combine(l_cond: f64, l_prior: f64, alpha: f64) -> f64 {
    if !l_cond.is_finite() || (alpha > 0.0 && !l_prior.is_finite()) {
        return f64::NEG_INFINITY;
    }
    if alpha == 0.0 {
        return -l_cond;
    }
    -l_cond + alpha * l_prior
}

pub fn pmi_score(l_cond: f64, l_prior: f64, alpha: f64) -> Result<f64, LlRankError> {
    check_alpha(alpha)?;
    Ok(combine(l_cond, l_prior, alpha))
}

/// Hex SHA-256 of the report-free prompt.
pub fn prefix_hash(template: &PromptTemplate) -> String {
    crate::sha256_hex(template.report_free().as_bytes())
}

/// Report-independent prior NLLs keyed by label code, valid for one
/// `(provider, report-free prompt)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorCache {
    provider: ProviderId,
    prefix_hash: String,
    entries: BTreeMap<String, f64>,
}

// On-disk form. Infinite NLLs are stored as null.
#[derive(Serialize, Deserialize)]
struct PriorCacheFile {
    provider: ProviderId,
    prefix_hash: String,
    entries: BTreeMap<String, Option<f64>>,
}

impl PriorCache {
    pub fn empty(provider: &ProviderId, template: &PromptTemplate) -> Self {
        Self {
            provider: provider.clone(),
            prefix_hash: prefix_hash(template),
            entries: BTreeMap::new(),
        }
    }

    /// Scores every catalog label under the report-free prompt.
    pub fn build(
        catalog: &LabelCatalog,
        template: &PromptTemplate,
        provider: &dyn Provider,
        exec: Execution,
    ) -> Result<Self, LlRankError> {
        let context = template.report_free();
        let score = |label: &Label| {
            per_token_nll(provider, &context, label).map(|v| (label.code.clone(), v))
        };
        let entries = match exec {
            Execution::Serial => catalog
                .labels()
                .iter()
                .map(score)
                .collect::<Result<_, _>>()?,
            Execution::Parallel => catalog
                .labels()
                .par_iter()
                .map(score)
                .collect::<Result<_, _>>()?,
        };
        Ok(Self {
            entries,
            ..Self::empty(provider.id(), template)
        })
    }

    pub fn provider(&self) -> &ProviderId {
        &self.provider
    }

    pub fn prefix_hash(&self) -> &str {
        &self.prefix_hash
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, code: &str) -> Option<f64> {
        self.entries.get(code).copied()
    }

    /// Fails unless the cache was built for this provider and prompt.
    pub fn check(
        &self,
        provider: &ProviderId,
        template: &PromptTemplate,
    ) -> Result<(), LlRankError> {
        if &self.provider != provider {
            return Err(LlRankError::CacheInvalid(format!(
                "built for provider {:?} version {:?}, queried with {:?} version {:?}",
                self.provider.name, self.provider.version, provider.name, provider.version
            )));
        }
        let hash = prefix_hash(template);
        if self.prefix_hash != hash {
            return Err(LlRankError::CacheInvalid(format!(
                "prefix hash {} does not match current prompt {hash}",
                self.prefix_hash
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = PriorCacheFile {
            provider: self.provider.clone(),
            prefix_hash: self.prefix_hash.clone(),
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.is_finite().then_some(*v)))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("cache serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self, LlRankError> {
        let file: PriorCacheFile = serde_json::from_str(raw)
            .map_err(|e| LlRankError::CacheInvalid(format!("unreadable cache: {e}")))?;
        Ok(Self {
            provider: file.provider,
            prefix_hash: file.prefix_hash,
            entries: file
                .entries
                .into_iter()
                .map(|(k, v)| (k, v.unwrap_or(f64::INFINITY)))
                .collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LlRankError> {
        std::fs::write(path, self.to_json() + "\n")
            .map_err(|e| LlRankError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, LlRankError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| LlRankError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&raw)
    }
}

/// Report-free NLL of `label`, served from `cache` when present and stored
/// there on a miss.
pub fn prior_nll(
    label: &Label,
    template: &PromptTemplate,
    provider: &dyn Provider,
    cache: &mut PriorCache,
) -> Result<f64, LlRankError> {
    cache.check(provider.id(), template)?;
    if let Some(v) = cache.get(&label.code) {
        return Ok(v);
    }
    let v = per_token_nll(provider, &template.report_free(), label)?;
    cache.entries.insert(label.code.clone(), v);
    Ok(v)
}

/// `(l_cond, l_prior)` for every catalog label, in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportScores {
    pub report_id: String,
    pub nlls: Vec<(f64, f64)>,
}

impl ReportScores {
    /// Applies `alpha` and sorts into a complete ranking.
    pub fn rank(&self, catalog: &LabelCatalog, alpha: f64) -> Result<RankedList, LlRankError> {
        check_alpha(alpha)?;
        let mut entries: Vec<RankedEntry> = catalog
            .labels()
            .iter()
            .zip(&self.nlls)
            .enumerate()
            .map(|(i, (label, &(l_cond, l_prior)))| RankedEntry {
                code: label.code.clone(),
                catalog_index: i,
                score: combine(l_cond, l_prior, alpha),
                detail: EntryDetail::Pmi {
                    l_cond,
                    l_prior,
                    alpha,
                },
            })
            .collect();
        entries.sort_by(compare_scored);
        Ok(RankedList {
            report_id: self.report_id.clone(),
            entries,
        })
    }

    pub fn breakdowns(&self, catalog: &LabelCatalog, alpha: f64) -> Vec<ScoreBreakdown> {
        catalog
            .labels()
            .iter()
            .zip(&self.nlls)
            .map(|(label, &(l_cond, l_prior))| ScoreBreakdown {
                label_code: label.code.clone(),
                l_cond,
                l_prior,
                alpha,
                score: combine(l_cond, l_prior, alpha),
            })
            .collect()
    }
}

/// Score descending, then catalog index ascending.
fn compare_scored(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.catalog_index.cmp(&b.catalog_index))
}

/// Scores every catalog label for one report. Prior values come from `cache`
/// when present there, otherwise they are computed (and not stored).
pub fn score_report(
    report: &Report,
    catalog: &LabelCatalog,
    template: &PromptTemplate,
    provider: &dyn Provider,
    cache: &PriorCache,
    exec: Execution,
) -> Result<ReportScores, LlRankError> {
    cache.check(provider.id(), template)?;
    let cond_context = template.with_report(&report.text);
    let prior_context = template.report_free();
    let score = |label: &Label| -> Result<(f64, f64), LlRankError> {
        let l_cond = per_token_nll(provider, &cond_context, label)?;
        let l_prior = match cache.get(&label.code) {
            Some(v) => v,
            None => per_token_nll(provider, &prior_context, label)?,
        };
        Ok((l_cond, l_prior))
    };
    let nlls = match exec {
        Execution::Serial => catalog
            .labels()
            .iter()
            .map(score)
            .collect::<Result<_, _>>()?,
        Execution::Parallel => catalog
            .labels()
            .par_iter()
            .map(score)
            .collect::<Result<_, _>>()?,
    };
    Ok(ReportScores {
        report_id: report.id.clone(),
        nlls,
    })
}

pub fn rank_catalog(
    report: &Report,
    catalog: &LabelCatalog,
    template: &PromptTemplate,
    provider: &dyn Provider,
    alpha: f64,
    cache: &PriorCache,
    exec: Execution,
) -> Result<RankedList, LlRankError> {
    check_alpha(alpha)?;
    score_report(report, catalog, template, provider, cache, exec)?.rank(catalog, alpha)
}

/// A report whose scoring failed; the rest of the batch continues.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFailure {
    pub report_id: String,
    pub error: String,
}

/// Scores a batch of reports. Output order follows `reports`.
pub fn score_batch(
    reports: &[Report],
    catalog: &LabelCatalog,
    template: &PromptTemplate,
    provider: &dyn Provider,
    cache: &PriorCache,
    exec: Execution,
) -> Vec<Result<ReportScores, ReportFailure>> {
    let one = |r: &Report| {
        score_report(r, catalog, template, provider, cache, exec).map_err(|e| ReportFailure {
            report_id: r.id.clone(),
            error: e.to_string(),
        })
    };
    match exec {
        Execution::Serial => reports.iter().map(one).collect(),
        Execution::Parallel => reports.par_iter().map(one).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    #[serde(flatten)]
    pub metrics: MetricRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub ks: Vec<usize>,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<ReportFailure>,
}

impl SweepResult {
    /// `alpha,hit@k...,macro_f1@k...` with one row per requested alpha.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha");
        for k in &self.ks {
            out.push_str(&format!(",hit@{k}"));
        }
        for k in &self.ks {
            out.push_str(&format!(",macro_f1@{k}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.alpha.to_string());
            for k in &self.ks {
                out.push_str(&format!(",{}", row.metrics.hit[k]));
            }
            for k in &self.ks {
                out.push_str(&format!(",{}", row.metrics.macro_f1[k]));
            }
            out.push('\n');
        }
        out
    }
}

/// Scores each report-label pair once and re-ranks it for every alpha.
#[allow(clippy::too_many_arguments)]
pub fn alpha_sweep(
    reports: &[Report],
    catalog: &LabelCatalog,
    template: &PromptTemplate,
    provider: &dyn Provider,
    cache: &PriorCache,
    alphas: &[f64],
    ks: &[usize],
    averaging: MacroAveraging,
    exec: Execution,
) -> Result<SweepResult, LlRankError> {
    for &a in alphas {
        check_alpha(a)?;
    }
    metrics::validate_ks(ks)?;
    let mut scored = Vec::new();
    let mut failures = Vec::new();
    for r in score_batch(reports, catalog, template, provider, cache, exec) {
        match r {
            Ok(s) => scored.push(s),
            Err(f) => failures.push(f),
        }
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let ranked = scored
            .iter()
            .map(|s| s.rank(catalog, alpha))
            .collect::<Result<Vec<_>, _>>()?;
        let run = EvalRun::from_reports(
            ranked
                .iter()
                .map(|l| (l.report_id.as_str(), l.codes().map(String::from).collect())),
            reports,
        )?;
        rows.push(SweepRow {
            alpha,
            metrics: metrics::evaluate(&run, ks, averaging)?,
        });
    }
    Ok(SweepResult {
        ks: ks.to_vec(),
        rows,
        failures,
    })
}
