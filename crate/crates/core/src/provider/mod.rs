//! Sources of per-token log-probabilities for a response, with and without its prompt.
//!
//! Two implementations ship: [`toy::ToyLm`], a trainable word-level n-gram model that stands in
//! for the fine-tuned network at desk scale, and [`remote::RemoteProvider`], which queries a
//! completion endpoint in echo mode.

pub mod cache;
pub mod remote;
pub mod toy;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample, Template};
use crate::error::{Result, ScoreError};

pub use remote::{RemoteProvider, RemoteSpec};
pub use toy::{ToyLm, ToySpec, ToyUpdate};

/// Natural-log probabilities of each continuation token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TokenLogProbs {
    values: Vec<f64>,
}

impl TokenLogProbs {
    pub fn new(values: Vec<f64>) -> Result<Self, ScoreError> {
        if values.is_empty() {
            return Err(ScoreError::EmptyContinuation);
        }
        if let Some(&bad) = values.iter().find(|v| !v.is_finite() || **v > 0.0) {
            return Err(ScoreError::InvalidLogProb(bad));
        }
        Ok(TokenLogProbs { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of continuation tokens (`B`).
    pub fn token_count(&self) -> usize {
        self.values.len()
    }

    /// Mean negative log-likelihood, accumulated in f64.
    pub fn mean_nll(&self) -> f64 {
        -self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

impl TryFrom<Vec<f64>> for TokenLogProbs {
    type Error = ScoreError;

    fn try_from(values: Vec<f64>) -> Result<Self, ScoreError> {
        TokenLogProbs::new(values)
    }
}

impl From<TokenLogProbs> for Vec<f64> {
    fn from(lp: TokenLogProbs) -> Self {
        lp.values
    }
}

/// Opaque label for the model state that produced a set of scores.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProviderVersion(String);

impl ProviderVersion {
    pub fn new(tag: impl Into<String>) -> Self {
        ProviderVersion(tag.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ProviderVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Read-only scoring interface. Implementations must be safe to call concurrently.
pub trait LogProbProvider: Send + Sync {
    fn version(&self) -> &ProviderVersion;

    /// Log-probabilities of each token of `continuation`, conditioned on `context` and the
    /// preceding continuation tokens. An empty context scores the continuation on its own.
    fn logprobs(&self, context: &str, continuation: &str) -> Result<TokenLogProbs, ScoreError>;

    /// Upper bound on concurrent `logprobs` calls; `None` lets the scorer decide.
    fn max_in_flight(&self) -> Option<usize> {
        None
    }
}

/// What happened to the model between two epochs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelUpdate {
    /// Trained in-process; scoring now reflects the new version.
    Trained(ProviderVersion),
    /// The model is updated elsewhere; the run must pause until a new version is supplied.
    External,
}

/// A provider whose underlying model can move between epochs.
pub trait Provider: LogProbProvider {
    /// Called with the epoch's selected data once the epoch's manifest is written.
    fn advance(&mut self, selected: &[&Sample], template: &Template) -> Result<ModelUpdate>;

    /// Points the provider at an externally updated model state.
    fn relabel(&mut self, label: &str) -> Result<()>;
}

/// Serializable recipe for constructing a provider; stored in run state so `resume` can rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderSpec {
    Toy(ToySpec),
    Remote(RemoteSpec),
}

impl ProviderSpec {
    pub fn build(&self, corpus: &Corpus, template: &Template) -> Result<Box<dyn Provider>> {
        Ok(match self {
            ProviderSpec::Toy(spec) => Box::new(ToyLm::from_spec(spec, corpus, template)?),
            ProviderSpec::Remote(spec) => Box::new(RemoteProvider::new(spec.clone())?),
        })
    }
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::Toy(ToySpec::default())
    }
}
