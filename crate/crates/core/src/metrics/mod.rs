//! Top-k retrieval metrics over ranked label lists.
//!
//! All metric values are percentages in `[0, 100]`.

mod report;

pub use report::{ComparisonTable, Delta, MethodMetrics, ModelComparison};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Report;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MetricsError {
    #[error("cutoff k must be at least 1")]
    InvalidCutoff,

    #[error("no report has a gold label present in its ranking")]
    NoEvaluableReports,

    #[error("ranking for report {0:?} does not cover the same label set as the others")]
    IncompleteRanking(String),

    #[error("cannot average an empty list")]
    Empty,
}

/// Which classes enter the macro average.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroAveraging {
    /// Classes that occur as gold in the evaluated reports.
    #[default]
    GoldPresent,
    /// Every label in the catalog, including never-gold ones (which score 0).
    AllCatalog,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalItem {
    pub report_id: String,
    pub ranking: Vec<String>,
    pub gold: Option<String>,
    pub specialty: Option<String>,
}

/// Reports dropped from evaluation, counted rather than silently ignored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalWarnings {
    pub missing_gold: usize,
    pub gold_not_in_catalog: usize,
}

impl EvalWarnings {
    pub fn total(&self) -> usize {
        self.missing_gold + self.gold_not_in_catalog
    }
}

/// Rankings paired with gold labels; only evaluable reports are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    items: Vec<EvalItem>,
    catalog: BTreeSet<String>,
    warnings: EvalWarnings,
}

impl EvalRun {
    /// Every ranking must be a permutation of one common label set (the catalog).
    pub fn new(items: Vec<EvalItem>) -> Result<Self, MetricsError> {
        let mut catalog: Option<BTreeSet<String>> = None;
        let mut kept = Vec::with_capacity(items.len());
        let mut warnings = EvalWarnings::default();
        for item in items {
            let set: BTreeSet<String> = item.ranking.iter().cloned().collect();
            if set.len() != item.ranking.len() {
                return Err(MetricsError::IncompleteRanking(item.report_id));
            }
            match &catalog {
                None => catalog = Some(set),
                Some(c) if *c != set => {
                    return Err(MetricsError::IncompleteRanking(item.report_id))
                }
                Some(_) => {}
            }
            let catalog = catalog.as_ref().expect("set above");
            match &item.gold {
                None => warnings.missing_gold += 1,
                Some(g) if !catalog.contains(g) => warnings.gold_not_in_catalog += 1,
                Some(_) => kept.push(item),
            }
        }
        if warnings.total() > 0 {
            log::warn!(
                "{} report(s) excluded from evaluation ({} without gold, {} with gold outside the catalog)",
                warnings.total(),
                warnings.missing_gold,
                warnings.gold_not_in_catalog
            );
        }
        Ok(Self {
            items: kept,
            catalog: catalog.unwrap_or_default(),
            warnings,
        })
    }

    /// Pairs `rankings` (report id, codes best-first) with gold labels and
    /// specialties taken from `reports`.
    pub fn from_reports<'a>(
        rankings: impl IntoIterator<Item = (&'a str, Vec<String>)>,
        reports: &[Report],
    ) -> Result<Self, MetricsError> {
        let by_id: HashMap<&str, &Report> = reports.iter().map(|r| (r.id.as_str(), r)).collect();
        let items = rankings
            .into_iter()
            .map(|(id, ranking)| {
                let report = by_id.get(id);
                EvalItem {
                    report_id: id.to_string(),
                    ranking,
                    gold: report.and_then(|r| r.gold_label.clone()),
                    specialty: report.and_then(|r| r.specialty.clone()),
                }
            })
            .collect();
        Self::new(items)
    }

    pub fn items(&self) -> &[EvalItem] {
        &self.items
    }

    pub fn warnings(&self) -> EvalWarnings {
        self.warnings
    }

    /// Number of labels in each ranking, `M`.
    pub fn catalog_size(&self) -> usize {
        self.catalog.len()
    }

    fn evaluable(&self) -> Result<&[EvalItem], MetricsError> {
        if self.items.is_empty() {
            Err(MetricsError::NoEvaluableReports)
        } else {
            Ok(&self.items)
        }
    }
}

fn gold(item: &EvalItem) -> &str {
    item.gold.as_deref().expect("evaluable items carry gold")
}

fn in_top_k(item: &EvalItem, k: usize) -> bool {
    item.ranking.iter().take(k).any(|c| c == gold(item))
}

fn hit_rate(items: &[&EvalItem], k: usize) -> f64 {
    let hits = items.iter().filter(|it| in_top_k(it, k)).count();
    100.0 * hits as f64 / items.len() as f64
}

/// Percentage of reports whose gold label is among the first `k` entries.
pub fn hit_at_k(run: &EvalRun, k: usize) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidCutoff);
    }
    let items: Vec<&EvalItem> = run.evaluable()?.iter().collect();
    Ok(hit_rate(&items, k))
}

/// Macro-averaged F1 treating the top `k` labels as the predicted set.
///
/// Per class `c`: TP counts reports with gold `c` and `c` in the top k, FP
/// reports with another gold but `c` in the top k, FN reports with gold `c`
/// and `c` outside the top k. `F1_c = 2TP / (2TP + FP + FN)`, or 0 when the
/// denominator is 0.
pub fn macro_f1_at_k(
    run: &EvalRun,
    k: usize,
    averaging: MacroAveraging,
) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidCutoff);
    }
    let items = run.evaluable()?;
    #[derive(Default)]
    struct Counts {
        tp: u64,
        fp: u64,
        fn_: u64,
    }
    let mut counts: HashMap<&str, Counts> = HashMap::new();
    for item in items {
        let g = gold(item);
        let mut hit = false;
        for code in item.ranking.iter().take(k) {
            let c = counts.entry(code.as_str()).or_default();
            if code == g {
                c.tp += 1;
                hit = true;
            } else {
                c.fp += 1;
            }
        }
        if !hit {
            counts.entry(g).or_default().fn_ += 1;
        }
    }
    let classes: BTreeSet<&str> = match averaging {
        MacroAveraging::GoldPresent => items.iter().map(gold).collect(),
        MacroAveraging::AllCatalog => run.catalog.iter().map(String::as_str).collect(),
    };
    // Summed as exact fractions and rounded once, so identities such as
    // balanced-class Macro-F1@M = 200/(1+C) hold bit for bit.
    let mut total = BigRational::zero();
    for c in &classes {
        if let Some(n) = counts.get(c) {
            let denom = 2 * n.tp + n.fp + n.fn_;
            if denom > 0 {
                total += BigRational::new(BigInt::from(2 * n.tp), BigInt::from(denom));
            }
        }
    }
    let mean = total * BigInt::from(100u32) / BigInt::from(classes.len());
    Ok(mean.to_f64().expect("finite ratio"))
}

/// Label used for reports without a specialty tag.
pub const UNSPECIFIED_SPECIALTY: &str = "unspecified";

/// Hit@k restricted to each specialty's reports.
pub fn per_specialty_hit(run: &EvalRun, k: usize) -> Result<BTreeMap<String, f64>, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidCutoff);
    }
    let mut groups: BTreeMap<String, Vec<&EvalItem>> = BTreeMap::new();
    for item in run.evaluable()? {
        let key = item
            .specialty
            .clone()
            .unwrap_or_else(|| UNSPECIFIED_SPECIALTY.to_string());
        groups.entry(key).or_default().push(item);
    }
    Ok(groups
        .into_iter()
        .map(|(s, items)| (s, hit_rate(&items, k)))
        .collect())
}

/// `100 * (m2 - m1) / m1`; undefined when `m1` is not positive.
pub fn relative_improvement(m1: f64, m2: f64) -> Delta {
    if m1 > 0.0 && m1.is_finite() && m2.is_finite() {
        Delta::Value(100.0 * (m2 - m1) / m1)
    } else {
        Delta::Undefined
    }
}

pub fn mean_improvement(deltas: &[f64]) -> Result<f64, MetricsError> {
    if deltas.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(deltas.iter().sum::<f64>() / deltas.len() as f64)
}

/// Rounds to one decimal place, halves rounding up (toward +inf).
pub fn round1(x: f64) -> f64 {
    // the tiny offset absorbs representation error in values such as 0.15 * 10
    ((x * 10.0) + 0.5 + 1e-9).floor() / 10.0
}

pub fn format_percent1(x: f64) -> String {
    let r = round1(x);
    // avoid printing "-0.0"
    if r == 0.0 {
        "0.0".to_string()
    } else {
        format!("{r:.1}")
    }
}

/// Validates a cutoff list: non-empty, every k ≥ 1, strictly increasing.
pub fn validate_ks(ks: &[usize]) -> Result<(), MetricsError> {
    if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::InvalidCutoff);
    }
    Ok(())
}

pub const DEFAULT_KS: [usize; 3] = [3, 5, 10];

/// Hit@k and Macro-F1@k for each cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub hit: BTreeMap<usize, f64>,
    pub macro_f1: BTreeMap<usize, f64>,
}

pub fn evaluate(
    run: &EvalRun,
    ks: &[usize],
    averaging: MacroAveraging,
) -> Result<MetricRow, MetricsError> {
    let mut hit = BTreeMap::new();
    let mut macro_f1 = BTreeMap::new();
    for &k in ks {
        hit.insert(k, hit_at_k(run, k)?);
        macro_f1.insert(k, macro_f1_at_k(run, k, averaging)?);
    }
    Ok(MetricRow { hit, macro_f1 })
}

/// Report ids present in exactly one of the two sets, sorted.
pub fn id_mismatch<'a>(
    a: impl IntoIterator<Item = &'a str>,
    b: impl IntoIterator<Item = &'a str>,
) -> Vec<String> {
    let a: HashSet<&str> = a.into_iter().collect();
    let b: HashSet<&str> = b.into_iter().collect();
    let mut diff: Vec<String> = a.symmetric_difference(&b).map(|s| s.to_string()).collect();
    diff.sort();
    diff
}
