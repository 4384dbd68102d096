//! Iterative instruction-data selection: complexity scoring against a language model,
//! TF-IDF diversity with weight decay, greedy selection, and per-epoch re-scoring.

pub mod analysis;
pub mod baselines;
pub mod complexity;
pub mod corpus;
pub mod diversity;
pub mod error;
pub mod manifest;
pub mod provider;
pub mod selector;
pub mod synth;

pub use complexity::{ifd, perplexity, score_pool, ComplexityScore, PoolScoring, ScoreTable};
pub use corpus::{Corpus, Format, Sample, Template, DEFAULT_TEMPLATE};
pub use diversity::{extract_features, FeatureIndex, GramCounts};
pub use error::{Error, Result, ScoreError};
pub use manifest::ManifestEntry;
pub use provider::remote::{RemoteProvider, RemoteSpec};
pub use provider::toy::{ToyLm, ToySpec, ToyUpdate};
pub use provider::{LogProbProvider, ModelUpdate, Provider, ProviderSpec, ProviderVersion, TokenLogProbs};
pub use selector::{
    greedy_select, reserve_pool, resume, run, DiversitySource, EpochSelection, FilterOrder, IdfScope, Pick, RunOptions,
    RunState, RunStatus, SelectionConfig, SelectionSize,
};
