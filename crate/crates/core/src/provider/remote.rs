//! HTTP client for a remote scoring server.
//!
//! Wire protocol (JSON over HTTP POST):
//!
//! ```text
//! POST /v1/logprobs  {"context": str, "continuation_tokens": [int], "provider": str}
//!                 -> {"tokens": [int], "logprobs": [number]}
//! POST /v1/greedy    {"context": str, "max_tokens": int, "stop": [int]}
//!                 -> {"text": str, "tokens": [int]}
//! ```
//!
//! Connection failures, timeouts, 429 and 5xx responses are retried with
//! exponential backoff; other non-2xx statuses fail immediately.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::Url;
use serde::Serialize;
use serde_json::Value;

use super::{Generation, Provider, ProviderError, ProviderId, TokenId, TokenLogProbs, Tokenizer};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Model name sent in every `/v1/logprobs` request.
    pub provider: String,
    /// Free-form model version recorded in the [`ProviderId`].
    pub version: String,
    pub timeout: Duration,
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, provider: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            provider: provider.into(),
            version: "unversioned".into(),
            timeout: Duration::from_secs(30),
            attempts: 3,
            initial_backoff: Duration::from_millis(250),
            max_in_flight: 8,
        }
    }
}

#[derive(Serialize)]
struct LogprobsRequest<'a> {
    context: &'a str,
    continuation_tokens: &'a [TokenId],
    provider: &'a str,
}

#[derive(Serialize)]
struct GreedyRequest<'a> {
    context: &'a str,
    max_tokens: usize,
    stop: &'a [TokenId],
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteProvider {
    id: ProviderId,
    config: RemoteConfig,
    base: String,
    client: Client,
    tokenizer: Arc<dyn Tokenizer>,
    in_flight: InFlight,
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("id", &self.id)
            .field("endpoint", &self.base)
            .finish()
    }
}

impl RemoteProvider {
    /// The server does not expose a tokenizer, so the caller supplies one that
    /// matches the served model's vocabulary.
    pub fn new(config: RemoteConfig, tokenizer: Arc<dyn Tokenizer>) -> Result<Self, ProviderError> {
        Url::parse(&config.endpoint).map_err(|e| {
            ProviderError::Query(format!("invalid endpoint {:?}: {e}", config.endpoint))
        })?;
        if config.attempts == 0 {
            return Err(ProviderError::Query("attempts must be at least 1".into()));
        }
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Transport {
                message: e.to_string(),
                retryable: false,
                attempts: 0,
            })?;
        let id = ProviderId {
            name: config.provider.clone(),
            version: config.version.clone(),
            tokenizer_fingerprint: tokenizer.fingerprint().to_string(),
        };
        Ok(Self {
            id,
            base: config.endpoint.trim_end_matches('/').to_string(),
            in_flight: InFlight {
                used: Mutex::new(0),
                freed: Condvar::new(),
                limit: config.max_in_flight.max(1),
            },
            config,
            client,
            tokenizer,
        })
    }

    fn post(&self, path: &str, body: Vec<u8>) -> Result<Value, ProviderError> {
        let url = format!("{}{}", self.base, path);
        let mut last = None;
        for attempt in 1..=self.config.attempts {
            if attempt > 1 {
                std::thread::sleep(self.config.initial_backoff * 2u32.pow(attempt - 2));
            }
            let outcome = {
                let _permit = self.in_flight.acquire();
                self.client
                    .post(&url)
                    .header(reqwest::header::CONTENT_TYPE, "application/json")
                    .body(body.clone())
                    .send()
                    .and_then(|resp| {
                        let status = resp.status();
                        resp.bytes().map(|b| (status, b))
                    })
            };
            match outcome {
                Ok((status, bytes)) if status.is_success() => {
                    return serde_json::from_slice(&bytes).map_err(|e| ProviderError::Protocol {
                        field: "body".into(),
                        message: format!("response is not JSON: {e}"),
                    });
                }
                Ok((status, _)) => {
                    let retryable = status.is_server_error() || status.as_u16() == 429;
                    let err = ProviderError::Transport {
                        message: format!("{url} returned HTTP {status}"),
                        retryable,
                        attempts: attempt,
                    };
                    if !retryable {
                        return Err(err);
                    }
                    last = Some(err);
                }
                Err(e) => {
                    log::debug!("attempt {attempt} to {url} failed: {e}");
                    last = Some(ProviderError::Transport {
                        message: format!("{url}: {e}"),
                        retryable: true,
                        attempts: attempt,
                    });
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

fn field<'a>(body: &'a Value, name: &str) -> Result<&'a Value, ProviderError> {
    body.get(name).ok_or_else(|| ProviderError::Protocol {
        field: name.into(),
        message: "missing".into(),
    })
}

fn token_array(body: &Value, name: &str) -> Result<Vec<TokenId>, ProviderError> {
    let bad = |message: String| ProviderError::Protocol {
        field: name.into(),
        message,
    };
    field(body, name)?
        .as_array()
        .ok_or_else(|| bad("expected an array of token ids".into()))?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_u64()
                .and_then(|n| TokenId::try_from(n).ok())
                .ok_or_else(|| bad(format!("element {i} is not a token id: {v}")))
        })
        .collect()
}

/// Parses and validates a `/v1/logprobs` response body for `requested` tokens.
pub(crate) fn parse_logprobs_response(
    body: &Value,
    requested: &[TokenId],
) -> Result<TokenLogProbs, ProviderError> {
    let tokens = token_array(body, "tokens")?;
    if tokens != requested {
        return Err(ProviderError::Protocol {
            field: "tokens".into(),
            message: format!("expected {requested:?}, got {tokens:?}"),
        });
    }
    let logprobs = field(body, "logprobs")?
        .as_array()
        .ok_or_else(|| ProviderError::Protocol {
            field: "logprobs".into(),
            message: "expected an array of numbers".into(),
        })?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64().ok_or_else(|| ProviderError::Protocol {
                field: format!("logprobs[{i}]"),
                message: format!("not a number: {v}"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let out = TokenLogProbs { tokens, logprobs };
    out.validate()?;
    Ok(out)
}

pub(crate) fn parse_greedy_response(body: &Value) -> Result<Generation, ProviderError> {
    let text = field(body, "text")?
        .as_str()
        .ok_or_else(|| ProviderError::Protocol {
            field: "text".into(),
            message: "expected a string".into(),
        })?
        .to_string();
    let tokens = token_array(body, "tokens")?;
    Ok(Generation { text, tokens })
}

impl Provider for RemoteProvider {
    fn id(&self) -> &ProviderId {
        &self.id
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }

    fn score_continuation(
        &self,
        context: &str,
        continuation: &[TokenId],
    ) -> Result<TokenLogProbs, ProviderError> {
        if continuation.is_empty() {
            return Err(ProviderError::Query("empty continuation".into()));
        }
        let body = serde_json::to_vec(&LogprobsRequest {
            context,
            continuation_tokens: continuation,
            provider: &self.config.provider,
        })
        .expect("request serializes");
        let response = self.post("/v1/logprobs", body)?;
        parse_logprobs_response(&response, continuation)
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
        let body = serde_json::to_vec(&GreedyRequest {
            context,
            max_tokens,
            stop,
        })
        .expect("request serializes");
        let response = self.post("/v1/greedy", body)?;
        parse_greedy_response(&response)
    }
}
