//! Shared inputs for the criterion benches.

use datasift::synth::{generate, SynthSpec};
use datasift::Corpus;

/// Synthetic corpus of `samples` instruction-response pairs, fixed seed.
pub fn corpus(samples: usize) -> Corpus {
    generate(&SynthSpec {
        samples,
        ..SynthSpec::default()
    })
    .expect("synthetic corpus")
}

/// `(id, response)` pairs for index construction.
pub fn responses(corpus: &Corpus) -> Vec<(usize, &str)> {
    corpus.samples().iter().map(|s| (s.id, s.response.as_str())).collect()
}

/// Deterministic pseudo-random complexity scores in `(0.2, 1.0)`.
pub fn scores(corpus: &Corpus) -> Vec<(usize, f64)> {
    corpus
        .samples()
        .iter()
        .map(|s| {
            let h = (s.id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11;
            (s.id, 0.2 + 0.8 * (h as f64 / (1u64 << 53) as f64))
        })
        .collect()
}
