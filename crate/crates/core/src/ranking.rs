//! Ranked label lists and their JSON Lines records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusError;

#[derive(Debug, Clone, PartialEq)]
pub enum EntryDetail {
    /// Likelihood scoring: `score = -l_cond + alpha * l_prior`.
    Pmi {
        l_cond: f64,
        l_prior: f64,
        alpha: f64,
    },
    /// Token overlap mapping: `score` is the rarity score.
    Overlap { overlap_count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub code: String,
    pub catalog_index: usize,
    pub score: f64,
    pub detail: EntryDetail,
}

/// A complete ranking of the catalog for one report, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub report_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.code.as_str())
    }

    /// 0-based rank of `code`.
    pub fn position(&self, code: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.code == code)
    }

    pub fn to_record(&self) -> RankingRecord {
        RankingRecord {
            report_id: self.report_id.clone(),
            generated: None,
            ranking: self
                .entries
                .iter()
                .map(|e| {
                    let (l_cond, l_prior, overlap) = match e.detail {
                        EntryDetail::Pmi {
                            l_cond, l_prior, ..
                        } => (Some(l_cond), Some(l_prior), None),
                        EntryDetail::Overlap { overlap_count } => (None, None, Some(overlap_count)),
                    };
                    RecordEntry {
                        code: e.code.clone(),
                        score: e.score,
                        l_cond,
                        l_prior,
                        overlap,
                    }
                })
                .collect(),
        }
    }
}

// JSON has no infinities. Scores can only diverge to -inf and NLLs to +inf,
// so `null` is unambiguous for each field.
mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

mod nll_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_finite() => s.serialize_f64(*x),
            _ => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Some(
            Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub code: String,
    #[serde(with = "neg_inf_as_null")]
    pub score: f64,
    #[serde(
        default,
        with = "nll_inf_as_null",
        skip_serializing_if = "Option::is_none"
    )]
    pub l_cond: Option<f64>,
    #[serde(
        default,
        with = "nll_inf_as_null",
        skip_serializing_if = "Option::is_none"
    )]
    pub l_prior: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<usize>,
}

/// One line of a rankings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub report_id: String,
    /// Phrase produced by greedy decoding, for generation+mapping runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<String>,
    pub ranking: Vec<RecordEntry>,
}

impl RankingRecord {
    pub fn codes(&self) -> Vec<String> {
        self.ranking.iter().map(|e| e.code.clone()).collect()
    }
}

/// One line of a batch error file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub report_id: String,
    pub error: String,
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_rankings(input: &str) -> Result<Vec<RankingRecord>, CorpusError> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_rankings(path: &Path) -> Result<Vec<RankingRecord>, CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_rankings(&raw)
}
