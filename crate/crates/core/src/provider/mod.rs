//! Token-likelihood providers.
//!
//! A [`Provider`] answers two questions about an autoregressive model: the
//! per-token log-probabilities of a continuation given a context string, and
//! the greedy continuation of a context. Two backends ship with the crate:
//!
//! * [`TableProvider`]: a deterministic lookup-table model, used as a test
//!   oracle and for desk-scale experiments.
//! * [`RemoteProvider`]: an HTTP client for a model server speaking the
//!   `/v1/logprobs` + `/v1/greedy` JSON protocol.
//!
//! All log-probabilities are natural logs.

mod remote;
mod table;
mod tokenizer;

pub use remote::{RemoteConfig, RemoteProvider};
pub use table::{TableEntry, TableModelSpec, TableProvider};
pub use tokenizer::{Tokenizer, VocabTokenizer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into a provider vocabulary.
pub type TokenId = u32;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ProviderError {
    /// The backend could not be reached or answered with a non-2xx status.
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport {
        message: String,
        retryable: bool,
        attempts: u32,
    },

    /// The backend answered, but the body does not match the wire schema.
    #[error("protocol error in field `{field}`: {message}")]
    Protocol { field: String, message: String },

    /// The query itself is invalid for this provider.
    #[error("invalid query: {0}")]
    Query(String),

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("invalid table model: {0}")]
    InvalidSpec(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Transport {
                retryable: true,
                ..
            }
        )
    }
}

/// Identity of a scoring model. Two providers with equal ids must return
/// identical log-probabilities for identical queries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProviderId {
    pub name: String,
    pub version: String,
    pub tokenizer_fingerprint: String,
}

/// Per-token log-probabilities of a continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProbs {
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
}

impl TokenLogProbs {
    /// Checks the structural invariants: equal lengths and every logprob ≤ 0.
    /// On failure returns the name of the offending field.
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.tokens.len() != self.logprobs.len() {
            return Err(ProviderError::Protocol {
                field: "logprobs".into(),
                message: format!(
                    "{} logprobs for {} tokens",
                    self.logprobs.len(),
                    self.tokens.len()
                ),
            });
        }
        for (i, lp) in self.logprobs.iter().enumerate() {
            if lp.is_nan() || *lp > 0.0 {
                return Err(ProviderError::Protocol {
                    field: format!("logprobs[{i}]"),
                    message: format!("log-probability {lp} is not <= 0"),
                });
            }
        }
        Ok(())
    }

    /// Sum of negative log-probabilities.
    pub fn total_nll(&self) -> f64 {
        self.logprobs.iter().map(|lp| -lp).sum()
    }
}

/// Result of greedy decoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub tokens: Vec<TokenId>,
}

/// An autoregressive model that can score and greedily extend text.
///
/// Implementations must be safe to query from many threads at once, and their
/// answers must not depend on query interleaving.
pub trait Provider: Send + Sync {
    fn id(&self) -> &ProviderId;

    /// The tokenizer whose ids this provider scores. Label token caches must be
    /// built with it so conditional and prior scoring see the same tokens.
    fn tokenizer(&self) -> &dyn Tokenizer;

    /// `logprobs[t] = ln p(continuation[t] | context, continuation[..t])`.
    fn score_continuation(
        &self,
        context: &str,
        continuation: &[TokenId],
    ) -> Result<TokenLogProbs, ProviderError>;

    /// Emits the argmax token at every step (ties to the lowest id) until a
    /// stop token is produced or `max_tokens` tokens have been emitted. Stop
    /// tokens are not part of the output.
    fn greedy_decode(
        &self,
        context: &str,
        max_tokens: usize,
        stop: &[TokenId],
    ) -> Result<Generation, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn id(&self) -> &ProviderId {
        (**self).id()
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        (**self).tokenizer()
    }

    fn score_continuation(
        &self,
        context: &str,
        continuation: &[TokenId],
    ) -> Result<TokenLogProbs, ProviderError> {
        (**self).score_continuation(context, continuation)
    }

    fn greedy_decode(
        &self,
        context: &str,
        max_tokens: usize,
        stop: &[TokenId],
    ) -> Result<Generation, ProviderError> {
        (**self).greedy_decode(context, max_tokens, stop)
    }
}
