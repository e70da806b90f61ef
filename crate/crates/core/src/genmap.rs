//! Generation + mapping baseline: greedy-decode a short phrase, then rank
//! catalog labels by word overlap with the phrase.
//!
//! Labels are ordered by the number of distinct shared words, then by the
//! summed rarity `1/df` of those words (`df` = number of labels containing the
//! word), then by catalog index. Rarity sums are compared exactly as
//! rationals so that sums which are equal on paper never split on rounding.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

use crate::corpus::{LabelCatalog, PromptTemplate, Report};
use crate::provider::{Provider, ProviderError, TokenId};
use crate::ranking::{EntryDetail, RankedEntry, RankedList};

/// Default generation length cap.
pub const DEFAULT_MAX_TOKENS: usize = 32;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GenMapError {
    #[error("max_tokens must be at least 1")]
    InvalidMaxTokens,

    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn word_set(text: &str) -> BTreeSet<String> {
    word_tokens(text).into_iter().collect()
}

/// Per-word document frequency over catalog label names.
#[derive(Debug, Clone, PartialEq)]
pub struct RarityWeights {
    doc_freq: HashMap<String, u64>,
    label_words: Vec<BTreeSet<String>>,
}

impl RarityWeights {
    pub fn build(catalog: &LabelCatalog) -> Self {
        let label_words: Vec<BTreeSet<String>> =
            catalog.labels().iter().map(|l| word_set(&l.name)).collect();
        let mut doc_freq = HashMap::new();
        for words in &label_words {
            for w in words {
                *doc_freq.entry(w.clone()).or_insert(0) += 1;
            }
        }
        Self {
            doc_freq,
            label_words,
        }
    }

    pub fn doc_freq(&self, word: &str) -> Option<u64> {
        self.doc_freq.get(word).copied()
    }

    /// `1/df`, or `None` for words absent from every label.
    pub fn weight(&self, word: &str) -> Option<f64> {
        self.doc_freq(word).map(|df| 1.0 / df as f64)
    }

    fn exact_weight(&self, word: &str) -> BigRational {
        let df = self.doc_freq[word];
        BigRational::new(BigInt::from(1), BigInt::from(df))
    }

    pub fn label_count(&self) -> usize {
        self.label_words.len()
    }
}

/// Sort key of one label against a phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapKey {
    pub overlap_count: usize,
    pub rarity: BigRational,
    pub catalog_index: usize,
}

impl OverlapKey {
    pub fn rarity_score(&self) -> f64 {
        self.rarity.to_f64().unwrap_or(0.0)
    }
}

impl Ord for OverlapKey {
    /// Best first: more overlap, then more rarity, then lower index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .overlap_count
            .cmp(&self.overlap_count)
            .then_with(|| other.rarity.cmp(&self.rarity))
            .then(self.catalog_index.cmp(&other.catalog_index))
    }
}

impl PartialOrd for OverlapKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn overlap_key(
    phrase_words: &BTreeSet<String>,
    index: usize,
    weights: &RarityWeights,
) -> OverlapKey {
    let mut overlap_count = 0;
    let mut rarity = BigRational::zero();
    for w in weights.label_words[index].intersection(phrase_words) {
        overlap_count += 1;
        rarity += weights.exact_weight(w);
    }
    OverlapKey {
        overlap_count,
        rarity,
        catalog_index: index,
    }
}

/// Ranks every catalog label against `phrase`. `weights` must come from the
/// same catalog.
pub fn map_phrase(
    report_id: &str,
    phrase: &str,
    catalog: &LabelCatalog,
    weights: &RarityWeights,
) -> RankedList {
    assert_eq!(
        weights.label_count(),
        catalog.len(),
        "weights built from a different catalog"
    );
    let words = word_set(phrase);
    let mut keys: Vec<OverlapKey> = (0..catalog.len())
        .map(|i| overlap_key(&words, i, weights))
        .collect();
    keys.sort();
    let entries = keys
        .into_iter()
        .map(|k| RankedEntry {
            code: catalog.labels()[k.catalog_index].code.clone(),
            catalog_index: k.catalog_index,
            score: k.rarity_score(),
            detail: EntryDetail::Overlap {
                overlap_count: k.overlap_count,
            },
        })
        .collect();
    RankedList {
        report_id: report_id.to_string(),
        entries,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenMapConfig {
    pub max_tokens: usize,
    pub stop: Vec<TokenId>,
}

impl Default for GenMapConfig {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            stop: Vec::new(),
        }
    }
}

/// The decoded phrase and the ranking derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct GenMapResult {
    pub generated: String,
    pub ranking: RankedList,
}

pub fn genmap_rank(
    report: &Report,
    catalog: &LabelCatalog,
    template: &PromptTemplate,
    provider: &dyn Provider,
    weights: &RarityWeights,
    config: &GenMapConfig,
) -> Result<GenMapResult, GenMapError> {
    if config.max_tokens == 0 {
        return Err(GenMapError::InvalidMaxTokens);
    }
    let generation = provider.greedy_decode(
        &template.with_report(&report.text),
        config.max_tokens,
        &config.stop,
    )?;
    let ranking = map_phrase(&report.id, &generation.text, catalog, weights);
    Ok(GenMapResult {
        generated: generation.text,
        ranking,
    })
}
