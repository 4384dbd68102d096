//! Instruction-following difficulty: how much the instruction lowers the response's perplexity.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::corpus::{Sample, Template};
use crate::error::{Error, Result, ScoreError};
use crate::provider::{LogProbProvider, ProviderVersion, TokenLogProbs};

/// Above this, perplexities are too close to overflow to divide safely.
const PPL_RATIO_LIMIT: f64 = 1e300;

/// `exp` of the mean negative log-likelihood.
pub fn perplexity(lp: &TokenLogProbs) -> f64 {
    lp.mean_nll().exp()
}

/// Ratio of conditional to prior perplexity.
pub fn ifd(prior: f64, cond: f64) -> Result<f64> {
    if !(prior > 0.0 && cond > 0.0) {
        return Err(Error::Internal(format!(
            "perplexities must be positive (prior {prior}, cond {cond})"
        )));
    }
    Ok(cond / prior)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityScore {
    pub ppl_prior: f64,
    pub ppl_cond: f64,
    pub s_com: f64,
    pub version: ProviderVersion,
}

impl ComplexityScore {
    pub fn from_logprobs(
        prior: &TokenLogProbs,
        cond: &TokenLogProbs,
        version: ProviderVersion,
    ) -> Result<Self, ScoreError> {
        let (nll_prior, nll_cond) = (prior.mean_nll(), cond.mean_nll());
        let (ppl_prior, ppl_cond) = (nll_prior.exp(), nll_cond.exp());
        let s_com = if ppl_prior <= PPL_RATIO_LIMIT && ppl_cond <= PPL_RATIO_LIMIT {
            ppl_cond / ppl_prior
        } else {
            (nll_cond - nll_prior).exp()
        };
        // perplexities may overflow to infinity; only the ratio has to be usable
        if !(s_com.is_finite() && s_com > 0.0 && ppl_prior > 0.0 && ppl_cond > 0.0) {
            return Err(ScoreError::Degenerate(format!(
                "(ppl_prior {ppl_prior}, ppl_cond {ppl_cond}, s_com {s_com})"
            )));
        }
        Ok(ComplexityScore {
            ppl_prior,
            ppl_cond,
            s_com,
            version,
        })
    }

    pub fn is_aligned(&self) -> bool {
        is_aligned(self.s_com)
    }
}

/// Conditioning on the instruction must strictly lower perplexity.
pub fn is_aligned(s_com: f64) -> bool {
    s_com < 1.0
}

/// Complexity scores of one provider version, keyed by sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub version: ProviderVersion,
    pub entries: BTreeMap<usize, ComplexityScore>,
}

impl ScoreTable {
    pub fn new(version: ProviderVersion) -> Self {
        ScoreTable {
            version,
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: usize) -> Option<&ComplexityScore> {
        self.entries.get(&id)
    }

    pub fn s_com(&self, id: usize) -> Option<f64> {
        self.entries.get(&id).map(|s| s.s_com)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Builds a table directly from `(id, s_com)` pairs, mostly for tests and baselines.
    pub fn from_s_com(version: ProviderVersion, scores: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let entries = scores
            .into_iter()
            .map(|(id, s_com)| {
                (
                    id,
                    ComplexityScore {
                        ppl_prior: 1.0,
                        ppl_cond: s_com,
                        s_com,
                        version: version.clone(),
                    },
                )
            })
            .collect();
        ScoreTable { version, entries }
    }
}

#[derive(Debug, Clone)]
pub struct PoolScoring {
    pub table: ScoreTable,
    /// Samples submitted for scoring.
    pub scored: usize,
    /// `logprobs` calls issued.
    pub calls: u64,
    pub unscoreable: Vec<(usize, ScoreError)>,
}

/// Scores every sample under the provider's current version: one unconditioned and one
/// prompt-conditioned `logprobs` call each. Fails when more than half the pool is unscoreable.
pub fn score_pool(pool: &[&Sample], provider: &dyn LogProbProvider, template: &Template) -> Result<PoolScoring> {
    if pool.is_empty() {
        return Err(Error::Selection("cannot score an empty pool".into()));
    }
    let version = provider.version().clone();
    let calls = AtomicU64::new(0);
    let score_one = |sample: &&Sample| -> (usize, Result<ComplexityScore, ScoreError>) {
        let result = (|| {
            calls.fetch_add(1, Ordering::Relaxed);
            let prior = provider.logprobs("", &sample.response)?;
            calls.fetch_add(1, Ordering::Relaxed);
            let cond = provider.logprobs(&template.render(sample), &sample.response)?;
            ComplexityScore::from_logprobs(&prior, &cond, version.clone())
        })();
        (sample.id, result)
    };

    let threads = provider.max_in_flight().unwrap_or(0);
    let results: Vec<_> = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?
        .install(|| pool.par_iter().map(score_one).collect());

    let mut table = ScoreTable::new(version);
    let mut unscoreable = Vec::new();
    for (id, r) in results {
        match r {
            Ok(score) => {
                table.entries.insert(id, score);
            }
            Err(e) => {
                warn!(id, "sample is unscoreable: {e}");
                unscoreable.push((id, e));
            }
        }
    }
    if unscoreable.len() * 2 > pool.len() {
        return Err(Error::TooManyUnscoreable {
            unscoreable: unscoreable.len(),
            total: pool.len(),
        });
    }
    let calls = calls.into_inner();
    debug!(
        scored = pool.len(),
        calls,
        unscoreable = unscoreable.len(),
        "pool scored"
    );
    Ok(PoolScoring {
        table,
        scored: pool.len(),
        calls,
        unscoreable,
    })
}
