//! Lookup-table language model.
//!
//! The table maps a `(context, prefix)` pair, where `context` is the rendered
//! prompt string and `prefix` the continuation tokens emitted so far, to an
//! explicit next-token distribution. Resolution order for a query:
//!
//! 1. an entry whose `context` equals the query context exactly;
//! 2. an entry whose `context` is the wildcard `"*"`;
//! 3. the uniform distribution `1/V` over the vocabulary.
//!
//! Inside a matched entry, tokens that are not listed receive
//! `default_smoothing` so that every returned probability is strictly positive.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Generation, Provider, ProviderError, ProviderId, TokenId, TokenLogProbs, Tokenizer,
    VocabTokenizer,
};

/// Context value matching any prompt.
pub const WILDCARD_CONTEXT: &str = "*";

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub context: String,
    #[serde(default)]
    pub prefix: Vec<String>,
    pub next: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableModelSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub vocabulary: Vec<String>,
    pub default_smoothing: f64,
    #[serde(default)]
    pub entries: Vec<TableEntry>,
}

fn default_name() -> String {
    "table".to_string()
}

impl TableModelSpec {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| ProviderError::InvalidSpec(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub struct TableProvider {
    id: ProviderId,
    tokenizer: VocabTokenizer,
    // context -> prefix -> dense distribution over the vocabulary
    table: HashMap<String, HashMap<Vec<TokenId>, Vec<f64>>>,
}

impl TableProvider {
    pub fn from_spec(spec: &TableModelSpec) -> Result<Self, ProviderError> {
        let tokenizer = VocabTokenizer::new(spec.vocabulary.clone())?;
        let smoothing = spec.default_smoothing;
        if !(smoothing > 0.0 && smoothing < 1.0) {
            return Err(ProviderError::InvalidSpec(format!(
                "default_smoothing must lie in (0, 1), got {smoothing}"
            )));
        }
        let lookup = |tok: &str, what: &str, i: usize| {
            tokenizer.token_id(tok).ok_or_else(|| {
                ProviderError::InvalidSpec(format!(
                    "entry {i}: {what} token {tok:?} not in vocabulary"
                ))
            })
        };

        let vocab = tokenizer.vocab_size();
        let mut table: HashMap<String, HashMap<Vec<TokenId>, Vec<f64>>> = HashMap::new();
        for (i, entry) in spec.entries.iter().enumerate() {
            let prefix = entry
                .prefix
                .iter()
                .map(|t| lookup(t, "prefix", i))
                .collect::<Result<Vec<_>, _>>()?;
            if entry.next.is_empty() {
                return Err(ProviderError::InvalidSpec(format!(
                    "entry {i}: empty distribution"
                )));
            }
            let mut dense = vec![smoothing; vocab];
            let mut sum = 0.0;
            for (tok, &p) in &entry.next {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(ProviderError::InvalidSpec(format!(
                        "entry {i}: probability of {tok:?} is {p}, expected (0, 1]"
                    )));
                }
                dense[lookup(tok, "next", i)? as usize] = p;
                sum += p;
            }
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(ProviderError::InvalidSpec(format!(
                    "entry {i}: distribution sums to {sum}, expected 1"
                )));
            }
            let slot = table.entry(entry.context.clone()).or_default();
            if slot.insert(prefix, dense).is_some() {
                return Err(ProviderError::InvalidSpec(format!(
                    "entry {i}: duplicate (context, prefix) key"
                )));
            }
        }

        let canonical = serde_json::to_vec(spec).expect("table spec serializes");
        let id = ProviderId {
            name: spec.name.clone(),
            version: crate::sha256_hex(&canonical)[..16].to_string(),
            tokenizer_fingerprint: tokenizer.fingerprint().to_string(),
        };
        Ok(Self {
            id,
            tokenizer,
            table,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        Self::from_spec(&TableModelSpec::load(path)?)
    }

    pub fn vocab_tokenizer(&self) -> &VocabTokenizer {
        &self.tokenizer
    }

    fn distribution(&self, context: &str, prefix: &[TokenId]) -> Option<&[f64]> {
        self.table
            .get(context)
            .and_then(|m| m.get(prefix))
            .or_else(|| self.table.get(WILDCARD_CONTEXT).and_then(|m| m.get(prefix)))
            .map(Vec::as_slice)
    }

    /// `p(token | context, prefix)` under the resolution rules above.
    pub fn probability(&self, context: &str, prefix: &[TokenId], token: TokenId) -> f64 {
        match self.distribution(context, prefix) {
            Some(dist) => dist[token as usize],
            None => 1.0 / self.tokenizer.vocab_size() as f64,
        }
    }

    fn check_token(&self, token: TokenId) -> Result<(), ProviderError> {
        if (token as usize) < self.tokenizer.vocab_size() {
            Ok(())
        } else {
            Err(ProviderError::Query(format!(
                "token id {token} outside vocabulary of size {}",
                self.tokenizer.vocab_size()
            )))
        }
    }
}

impl Provider for TableProvider {
    fn id(&self) -> &ProviderId {
        &self.id
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.tokenizer
    }

    fn score_continuation(
        &self,
        context: &str,
        continuation: &[TokenId],
    ) -> Result<TokenLogProbs, ProviderError> {
        if continuation.is_empty() {
            return Err(ProviderError::Query("empty continuation".into()));
        }
        let mut logprobs = Vec::with_capacity(continuation.len());
        for (t, &tok) in continuation.iter().enumerate() {
            self.check_token(tok)?;
            logprobs.push(self.probability(context, &continuation[..t], tok).ln());
        }
        Ok(TokenLogProbs {
            tokens: continuation.to_vec(),
            logprobs,
        })
    }

    fn greedy_decode(
        &self,
        context: &str,
        max_tokens: usize,
        stop: &[TokenId],
    ) -> Result<Generation, ProviderError> {
        if max_tokens == 0 {
            return Err(ProviderError::Query("max_tokens must be at least 1".into()));
        }
        let vocab = self.tokenizer.vocab_size();
        let mut tokens: Vec<TokenId> = Vec::new();
        while tokens.len() < max_tokens {
            let next = match self.distribution(context, &tokens) {
                // uniform: every token ties, lowest id wins
                None => 0,
                Some(dist) => {
                    let mut best = 0usize;
                    for id in 1..vocab {
                        if dist[id] > dist[best] {
                            best = id;
                        }
                    }
                    best as TokenId
                }
            };
            if stop.contains(&next) {
                break;
            }
            tokens.push(next);
        }
        let text = self.tokenizer.detokenize(&tokens)?;
        Ok(Generation { text, tokens })
    }
}
