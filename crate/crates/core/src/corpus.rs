//! Reports, the label catalog, prompt templates and token views.
//!
//! Reports are read from JSON Lines (`{"id", "text", "specialty"?, "gold_label"?}`),
//! the catalog from a headerless `code<TAB>name` file whose row order defines
//! the canonical label index used as the final tie-break everywhere.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{TokenId, Tokenizer};

#[derive(Error, Debug)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("catalog is empty")]
    EmptyCatalog,

    #[error("no tokenizer configured")]
    TokenizerNotConfigured,

    #[error("tokenizer: {0}")]
    Tokenizer(#[from] crate::provider::ProviderError),

    #[error("invalid template: {0}")]
    Template(String),
}

fn read(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specialty: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<String>,
}

/// Parses JSON Lines report records. Blank lines are skipped but still count
/// toward line numbers in error messages.
pub fn parse_reports(input: &str) -> Result<Vec<Report>, CorpusError> {
    let mut reports = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in input.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let report: Report = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
            line,
            message: e.to_string(),
        })?;
        if report.text.trim().is_empty() {
            return Err(CorpusError::Validation {
                line,
                message: format!("report {:?} has empty text", report.id),
            });
        }
        if !seen.insert(report.id.clone()) {
            return Err(CorpusError::Validation {
                line,
                message: format!("duplicate report id {:?}", report.id),
            });
        }
        reports.push(report);
    }
    Ok(reports)
}

pub fn load_reports(path: &Path) -> Result<Vec<Report>, CorpusError> {
    parse_reports(&read(path)?)
}

/// Holds the active tokenizer. Label caches and prompts are tokenized through
/// it so that every score uses the scoring model's own vocabulary.
#[derive(Clone, Default)]
pub struct TokenView {
    tokenizer: Option<Arc<dyn Tokenizer>>,
}

impl TokenView {
    pub fn new(tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self {
            tokenizer: Some(tokenizer),
        }
    }

    pub fn unconfigured() -> Self {
        Self::default()
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, CorpusError> {
        let tok = self
            .tokenizer
            .as_ref()
            .ok_or(CorpusError::TokenizerNotConfigured)?;
        Ok(tok.tokenize(text)?)
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String, CorpusError> {
        let tok = self
            .tokenizer
            .as_ref()
            .ok_or(CorpusError::TokenizerNotConfigured)?;
        Ok(tok.detokenize(ids)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label {
    pub code: String,
    pub name: String,
    pub token_ids: Vec<TokenId>,
}

impl Label {
    /// Number of label tokens, `T(c)`; at least 1 for catalog labels.
    pub fn token_len(&self) -> usize {
        self.token_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCatalog {
    labels: Vec<Label>,
    index: HashMap<String, usize>,
}

impl LabelCatalog {
    /// Builds a catalog from `(code, name)` rows, tokenizing names eagerly.
    pub fn from_rows<I, C, N>(rows: I, view: &TokenView) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (C, N)>,
        C: Into<String>,
        N: Into<String>,
    {
        let mut labels = Vec::new();
        let mut index = HashMap::new();
        for (i, (code, name)) in rows.into_iter().enumerate() {
            let line = i + 1;
            let (code, name) = (code.into(), name.into());
            if code.trim().is_empty() {
                return Err(CorpusError::Validation {
                    line,
                    message: "empty code".into(),
                });
            }
            if name.trim().is_empty() {
                return Err(CorpusError::Validation {
                    line,
                    message: format!("label {code:?} has an empty name"),
                });
            }
            if index.contains_key(&code) {
                return Err(CorpusError::Validation {
                    line,
                    message: format!("duplicate code {code:?}"),
                });
            }
            let token_ids = view.tokenize(&name).map_err(|e| match e {
                CorpusError::Tokenizer(err) => CorpusError::Validation {
                    line,
                    message: format!("label {code:?}: {err}"),
                },
                other => other,
            })?;
            if token_ids.is_empty() {
                return Err(CorpusError::Validation {
                    line,
                    message: format!("label {code:?} tokenizes to nothing"),
                });
            }
            index.insert(code.clone(), labels.len());
            labels.push(Label {
                code,
                name,
                token_ids,
            });
        }
        if labels.is_empty() {
            return Err(CorpusError::EmptyCatalog);
        }
        Ok(Self { labels, index })
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Canonical (0-based) index of `code`.
    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn get(&self, code: &str) -> Option<&Label> {
        self.index_of(code).map(|i| &self.labels[i])
    }

    /// Serializes to the on-disk `code<TAB>name` format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for label in &self.labels {
            let _ = writeln!(out, "{}\t{}", label.code, label.name);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_tsv()).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Splits catalog TSV text into `(code, name)` rows. Blank lines are not allowed.
pub fn parse_catalog_rows(input: &str) -> Result<Vec<(String, String)>, CorpusError> {
    input
        .lines()
        .enumerate()
        .map(|(i, raw)| {
            let raw = raw.strip_suffix('\r').unwrap_or(raw);
            let mut cols = raw.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(code), Some(name), None) => Ok((code.to_string(), name.to_string())),
                _ => Err(CorpusError::Parse {
                    line: i + 1,
                    message: "expected exactly two tab-separated columns: code, name".into(),
                }),
            }
        })
        .collect()
}

pub fn load_catalog(path: &Path, view: &TokenView) -> Result<LabelCatalog, CorpusError> {
    LabelCatalog::from_rows(parse_catalog_rows(&read(path)?)?, view)
}

/// Placeholder replaced by the report text.
pub const REPORT_SLOT: &str = "{report}";

/// A prompt with exactly one report slot. The report-free prompt is the same
/// template with the slot blanked, so surrounding text stays aligned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    template: String,
}

impl PromptTemplate {
    pub fn new(template: impl Into<String>) -> Result<Self, CorpusError> {
        let template = template.into();
        match template.matches(REPORT_SLOT).count() {
            1 => Ok(Self { template }),
            n => Err(CorpusError::Template(format!(
                "expected exactly one {REPORT_SLOT} slot, found {n}"
            ))),
        }
    }

    /// Reads a template file. One trailing line break, if present, is not
    /// part of the template.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let raw = read(path)?;
        let body = raw
            .strip_suffix("\r\n")
            .or_else(|| raw.strip_suffix('\n'))
            .unwrap_or(&raw);
        Self::new(body)
    }

    pub fn source(&self) -> &str {
        &self.template
    }

    pub fn with_report(&self, report_text: &str) -> String {
        self.template.replacen(REPORT_SLOT, report_text, 1)
    }

    pub fn report_free(&self) -> String {
        self.template.replacen(REPORT_SLOT, "", 1)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            template: "Patient self-report: {report}\nMost likely diagnosis:".to_string(),
        }
    }
}
