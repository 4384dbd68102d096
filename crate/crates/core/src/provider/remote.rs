//! Completion-endpoint provider.
//!
//! The prompt `context + continuation` is sent with `echo: true`, `max_tokens: 0` and
//! `logprobs: 0`; the endpoint answers with a log-probability and a character offset per prompt
//! token. Tokens starting at or after the context boundary belong to the continuation. A token
//! straddling the boundary makes the pair unscoreable. The very first prompt token carries no
//! log-probability (`null`) and is skipped.

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::cache::DiskCache;
use super::{LogProbProvider, ModelUpdate, Provider, ProviderVersion, TokenLogProbs};
use crate::corpus::{Sample, Template};
use crate::error::{Error, Result, ScoreError};

pub const DEFAULT_API_KEY_ENV: &str = "DATASIFT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSpec {
    /// Full URL of the completions route, e.g. `http://localhost:8000/v1/completions`.
    pub endpoint: String,
    pub model: String,
    /// Checkpoint label; the provider version is `<model>@<label>`.
    pub label: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: String,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub cache_dir: Option<std::path::PathBuf>,
}

impl Default for RemoteSpec {
    fn default() -> Self {
        RemoteSpec {
            endpoint: String::new(),
            model: String::new(),
            label: "base".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            max_retries: 3,
            backoff_ms: 500,
            timeout_secs: 60,
            max_in_flight: 8,
            cache_dir: None,
        }
    }
}

pub struct RemoteProvider {
    spec: RemoteSpec,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    version: ProviderVersion,
    cache: Option<DiskCache>,
    requests: AtomicU64,
}

enum Attempt {
    Done(Value),
    Retry(String),
    Fatal(ScoreError),
}

impl RemoteProvider {
    pub fn new(spec: RemoteSpec) -> Result<Self> {
        if spec.endpoint.is_empty() || spec.model.is_empty() {
            return Err(Error::Config("remote provider needs an endpoint and a model".into()));
        }
        if spec.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be >= 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(spec.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        let api_key = std::env::var(&spec.api_key_env).ok().filter(|k| !k.is_empty());
        let cache = spec.cache_dir.as_ref().map(DiskCache::open).transpose()?;
        Ok(RemoteProvider {
            version: ProviderVersion::new(format!("{}@{}", spec.model, spec.label)),
            spec,
            client,
            api_key,
            cache,
            requests: AtomicU64::new(0),
        })
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn attempt(&self, prompt: &str) -> Attempt {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let body = json!({
            "model": self.spec.model,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let mut req = self.client.post(&self.spec.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        if status.is_success() {
            return match resp.json::<Value>() {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fatal(ScoreError::Malformed(e.to_string())),
            };
        }
        let text = resp.text().unwrap_or_default();
        if status.as_u16() == 429 || status.is_server_error() {
            Attempt::Retry(format!("HTTP {status}: {text}"))
        } else {
            Attempt::Fatal(ScoreError::Http {
                status: status.as_u16(),
                body: text,
            })
        }
    }

    fn fetch(&self, prompt: &str) -> Result<Value, ScoreError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(prompt) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(message) if attempts > self.spec.max_retries => {
                    return Err(ScoreError::Transport { attempts, message });
                }
                Attempt::Retry(message) => {
                    let delay = self.spec.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                    warn!(attempts, delay_ms = delay, "transient endpoint failure: {message}");
                    thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
}

/// Per-token log-probabilities and character offsets of an echoed prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoedTokens {
    pub logprobs: Vec<Option<f64>>,
    pub offsets: Vec<usize>,
}

/// Reads `choices[0].logprobs.{token_logprobs,text_offset}` from a completion response.
pub fn parse_echo(body: &Value) -> Result<EchoedTokens, ScoreError> {
    let lp = body
        .pointer("/choices/0/logprobs")
        .ok_or_else(|| ScoreError::Malformed("missing choices[0].logprobs".into()))?;
    let logprobs = lp
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| ScoreError::Malformed("missing token_logprobs".into()))?
        .iter()
        .map(|v| match v {
            Value::Null => Ok(None),
            v => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| ScoreError::Malformed(format!("non-numeric log-probability {v}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let offsets = lp
        .get("text_offset")
        .and_then(Value::as_array)
        .ok_or_else(|| ScoreError::Malformed("missing text_offset".into()))?
        .iter()
        .map(|v| {
            v.as_u64()
                .map(|o| o as usize)
                .ok_or_else(|| ScoreError::Malformed(format!("bad text offset {v}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if logprobs.len() != offsets.len() {
        return Err(ScoreError::Malformed(format!(
            "{} log-probabilities but {} offsets",
            logprobs.len(),
            offsets.len()
        )));
    }
    Ok(EchoedTokens { logprobs, offsets })
}

/// Keeps the tokens whose start offset is at or past `boundary` (in chars). Tokens beyond
/// `prompt_len` are generated text and are ignored.
pub fn align_continuation(
    tokens: &EchoedTokens,
    boundary: usize,
    prompt_len: usize,
) -> Result<TokenLogProbs, ScoreError> {
    let mut values = Vec::new();
    for (i, (&start, lp)) in tokens.offsets.iter().zip(&tokens.logprobs).enumerate() {
        if start >= prompt_len {
            break;
        }
        let end = tokens.offsets.get(i + 1).copied().unwrap_or(prompt_len).min(prompt_len);
        if start < boundary && end > boundary {
            return Err(ScoreError::Alignment { boundary, start, end });
        }
        if start >= boundary {
            if let Some(v) = lp {
                values.push(*v);
            }
        }
    }
    TokenLogProbs::new(values)
}

impl LogProbProvider for RemoteProvider {
    fn version(&self) -> &ProviderVersion {
        &self.version
    }

    fn logprobs(&self, context: &str, continuation: &str) -> Result<TokenLogProbs, ScoreError> {
        if continuation.trim().is_empty() {
            return Err(ScoreError::EmptyContinuation);
        }
        if let Some(hit) = self
            .cache
            .as_ref()
            .and_then(|c| c.get(&self.version, context, continuation))
        {
            return Ok(hit);
        }
        let prompt = format!("{context}{continuation}");
        let body = self.fetch(&prompt)?;
        let tokens = parse_echo(&body)?;
        let lp = align_continuation(&tokens, context.chars().count(), prompt.chars().count())?;
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.put(&self.version, context, continuation, &lp) {
                debug!("cache write failed: {e}");
            }
        }
        Ok(lp)
    }

    fn max_in_flight(&self) -> Option<usize> {
        Some(self.spec.max_in_flight)
    }
}

impl Provider for RemoteProvider {
    fn advance(&mut self, _selected: &[&Sample], _template: &Template) -> Result<ModelUpdate> {
        Ok(ModelUpdate::External)
    }

    fn relabel(&mut self, label: &str) -> Result<()> {
        self.spec.label = label.to_string();
        self.version = ProviderVersion::new(format!("{}@{}", self.spec.model, label));
        Ok(())
    }
}
