//! Word-level interpolated trigram model trained by count accumulation.
//!
//! Each order uses add-k smoothing over a closed vocabulary (corpus words plus `<unk>`):
//!
//! ```text
//! P(w | u v) = l1 * (c(w) + k) / (N + kV)
//!            + l2 * (c(v w) + k) / (c(v .) + kV)
//!            + l3 * (c(u v w) + k) / (c(u v .) + kV)
//! ```
//!
//! Sequences are padded with two begin-of-sequence symbols that condition predictions but are
//! never predicted themselves, so every conditional distribution sums to one over `V` words.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use super::{LogProbProvider, ModelUpdate, Provider, ProviderVersion, TokenLogProbs};
use crate::corpus::{Corpus, Format, Sample, Template};
use crate::error::{Error, Result, ScoreError};

pub const UNK: &str = "<unk>";
const UNK_ID: u32 = 0;
const BOS_ID: u32 = u32::MAX;

/// Whether the toy model trains itself on each epoch's selection or waits for an external label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyUpdate {
    #[default]
    InLoop,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    /// Smoothing constant added to every count.
    pub k: f64,
    /// Interpolation weights for orders 1, 2 and 3.
    pub weights: [f64; 3],
    /// Pretraining data; when absent the selection corpus itself is used.
    pub pretrain: Option<PathBuf>,
    pub pretrain_format: Format,
    /// Repetitions of each selected sample per in-loop training pass.
    pub pass_weight: u64,
    pub update: ToyUpdate,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            k: 0.1,
            weights: [0.2, 0.3, 0.5],
            pretrain: None,
            pretrain_format: Format::Plain,
            pass_weight: 1,
            update: ToyUpdate::InLoop,
        }
    }
}

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

#[derive(Debug, Clone)]
pub struct ToyLm {
    vocab: HashMap<String, u32>,
    k: f64,
    weights: [f64; 3],
    unigram: Vec<u64>,
    unigram_total: u64,
    bigram: HashMap<(u32, u32), u64>,
    bigram_ctx: HashMap<u32, u64>,
    trigram: HashMap<(u32, u32, u32), u64>,
    trigram_ctx: HashMap<(u32, u32), u64>,
    fingerprint: [u8; 32],
    version: ProviderVersion,
    pass_weight: u64,
    update: ToyUpdate,
}

impl ToyLm {
    /// An untrained model over the words of `texts`. With no counts every token gets `1/V`.
    pub fn new<'a>(texts: impl IntoIterator<Item = &'a str>, k: f64, weights: [f64; 3]) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Config(format!("smoothing constant must be > 0, got {k}")));
        }
        let wsum: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || (wsum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "interpolation weights must be non-negative and sum to 1, got {weights:?}"
            )));
        }
        let words: BTreeSet<String> = texts.into_iter().flat_map(tokenize).collect();
        let mut vocab = HashMap::with_capacity(words.len() + 1);
        vocab.insert(UNK.to_string(), UNK_ID);
        for w in words {
            let next = vocab.len() as u32;
            vocab.entry(w).or_insert(next);
        }

        let mut hasher = Sha256::new();
        hasher.update(b"toy-ngram-v1");
        hasher.update(k.to_le_bytes());
        for w in weights {
            hasher.update(w.to_le_bytes());
        }
        let mut by_id: Vec<(&String, &u32)> = vocab.iter().collect();
        by_id.sort_by_key(|(_, id)| **id);
        for (word, _) in by_id {
            hasher.update((word.len() as u64).to_le_bytes());
            hasher.update(word.as_bytes());
        }
        let fingerprint: [u8; 32] = hasher.finalize().into();

        let v = vocab.len();
        Ok(ToyLm {
            vocab,
            k,
            weights,
            unigram: vec![0; v],
            unigram_total: 0,
            bigram: HashMap::new(),
            bigram_ctx: HashMap::new(),
            trigram: HashMap::new(),
            trigram_ctx: HashMap::new(),
            version: version_from(&fingerprint),
            fingerprint,
            pass_weight: 1,
            update: ToyUpdate::InLoop,
        })
    }

    /// Builds the base model for a run: vocabulary from the corpus, pretraining data and template,
    /// then one pass over the pretraining samples (or the corpus when none are configured).
    pub fn from_spec(spec: &ToySpec, corpus: &Corpus, template: &Template) -> Result<Self> {
        if spec.pass_weight == 0 {
            return Err(Error::Config("toy pass weight must be >= 1".into()));
        }
        let pretrain = spec
            .pretrain
            .as_ref()
            .map(|p| Corpus::load(p, spec.pretrain_format))
            .transpose()?;
        let source = pretrain.as_ref().unwrap_or(corpus);
        let template_words = template.render_instruction("");
        let texts = corpus
            .samples()
            .iter()
            .chain(pretrain.iter().flat_map(|c| c.samples()))
            .flat_map(|s| [s.instruction.as_str(), s.response.as_str()])
            .chain(std::iter::once(template_words.as_str()));
        let mut lm = ToyLm::new(texts, spec.k, spec.weights)?;
        let all: Vec<&Sample> = source.samples().iter().collect();
        lm.train(&all, template, 1)?;
        lm.pass_weight = spec.pass_weight;
        lm.update = spec.update;
        debug!(version = %lm.version, vocab = lm.vocab_size(), "toy model ready");
        Ok(lm)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_id(&self, word: &str) -> u32 {
        self.vocab.get(word).copied().unwrap_or(UNK_ID)
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).map(|w| self.token_id(&w)).collect()
    }

    /// Adds the n-gram counts of `render(sample) + response` for every sample, `pass_weight`
    /// times, and returns the new version.
    pub fn train(&mut self, subset: &[&Sample], template: &Template, pass_weight: u64) -> Result<ProviderVersion> {
        if subset.is_empty() {
            return Err(Error::Config("toy training requires a non-empty subset".into()));
        }
        if pass_weight == 0 {
            return Err(Error::Config("pass weight must be >= 1".into()));
        }
        let mut hasher = Sha256::new();
        hasher.update(self.fingerprint);
        hasher.update(b"train");
        hasher.update(pass_weight.to_le_bytes());
        for sample in subset {
            let mut seq = self.encode(&template.render(sample));
            let response = self.encode(&sample.response);
            if response.is_empty() {
                warn!(id = sample.id, "skipping sample with no response tokens");
                continue;
            }
            seq.extend(response);
            hasher.update((seq.len() as u64).to_le_bytes());
            for t in &seq {
                hasher.update(t.to_le_bytes());
            }
            self.add_sequence(&seq, pass_weight);
        }
        self.fingerprint = hasher.finalize().into();
        self.version = version_from(&self.fingerprint);
        Ok(self.version.clone())
    }

    fn add_sequence(&mut self, seq: &[u32], weight: u64) {
        let (mut u, mut v) = (BOS_ID, BOS_ID);
        for &w in seq {
            self.unigram[w as usize] += weight;
            self.unigram_total += weight;
            *self.bigram.entry((v, w)).or_default() += weight;
            *self.bigram_ctx.entry(v).or_default() += weight;
            *self.trigram.entry((u, v, w)).or_default() += weight;
            *self.trigram_ctx.entry((u, v)).or_default() += weight;
            u = v;
            v = w;
        }
    }

    /// Interpolated probability of `w` after history `(u, v)`.
    pub fn prob(&self, u: u32, v: u32, w: u32) -> f64 {
        let k = self.k;
        let kv = k * self.vocab.len() as f64;
        let p1 = (self.unigram[w as usize] as f64 + k) / (self.unigram_total as f64 + kv);
        let c2 = self.bigram.get(&(v, w)).copied().unwrap_or(0) as f64;
        let h2 = self.bigram_ctx.get(&v).copied().unwrap_or(0) as f64;
        let p2 = (c2 + k) / (h2 + kv);
        let c3 = self.trigram.get(&(u, v, w)).copied().unwrap_or(0) as f64;
        let h3 = self.trigram_ctx.get(&(u, v)).copied().unwrap_or(0) as f64;
        let p3 = (c3 + k) / (h3 + kv);
        self.weights[0] * p1 + self.weights[1] * p2 + self.weights[2] * p3
    }

    /// Next-token distribution over the whole vocabulary after `history` (words, in order).
    pub fn distribution(&self, history: &str) -> Vec<f64> {
        let (u, v) = last_two(&self.encode(history));
        (0..self.vocab.len() as u32).map(|w| self.prob(u, v, w)).collect()
    }

    pub fn update_mode(&self) -> ToyUpdate {
        self.update
    }
}

fn last_two(seq: &[u32]) -> (u32, u32) {
    match seq {
        [] => (BOS_ID, BOS_ID),
        [v] => (BOS_ID, *v),
        [.., u, v] => (*u, *v),
    }
}

fn version_from(fingerprint: &[u8; 32]) -> ProviderVersion {
    ProviderVersion::new(format!("toy-{}", &hex::encode(fingerprint)[..16]))
}

impl LogProbProvider for ToyLm {
    fn version(&self) -> &ProviderVersion {
        &self.version
    }

    fn logprobs(&self, context: &str, continuation: &str) -> Result<TokenLogProbs, ScoreError> {
        let cont = self.encode(continuation);
        if cont.is_empty() {
            return Err(ScoreError::EmptyContinuation);
        }
        let (mut u, mut v) = last_two(&self.encode(context));
        let mut values = Vec::with_capacity(cont.len());
        for w in cont {
            values.push(self.prob(u, v, w).ln());
            u = v;
            v = w;
        }
        TokenLogProbs::new(values)
    }
}

impl Provider for ToyLm {
    fn advance(&mut self, selected: &[&Sample], template: &Template) -> Result<ModelUpdate> {
        match self.update {
            ToyUpdate::InLoop => Ok(ModelUpdate::Trained(self.train(
                selected,
                template,
                self.pass_weight,
            )?)),
            ToyUpdate::External => Ok(ModelUpdate::External),
        }
    }

    fn relabel(&mut self, label: &str) -> Result<()> {
        match self.update {
            ToyUpdate::External => {
                self.version = ProviderVersion::new(label);
                Ok(())
            }
            ToyUpdate::InLoop => Err(Error::Config(
                "the toy model trains in-loop; its version cannot be relabelled".into(),
            )),
        }
    }
}
