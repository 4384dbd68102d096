//! Seeded synthetic corpora for benchmarks and scale tests.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::Result;

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ba", "de", "fu", "go", "hi", "ja", "po", "ze",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub samples: usize,
    /// Mean response length in words; actual lengths are uniform in `[mean/2, 3*mean/2]`.
    pub response_words: usize,
    pub instruction_words: usize,
    pub vocab: usize,
    /// Zipf exponent of the word distribution.
    pub exponent: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            samples: 1000,
            response_words: 60,
            instruction_words: 12,
            vocab: 5000,
            exponent: 1.05,
            seed: 0,
        }
    }
}

fn word(mut i: usize) -> String {
    let mut w = String::new();
    loop {
        w.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
        if i == 0 {
            return w;
        }
    }
}

/// Generates `spec.samples` pairs of Zipf-distributed pseudo-words.
pub fn generate(spec: &SynthSpec) -> Result<Corpus> {
    let vocab: Vec<String> = (0..spec.vocab.max(1)).map(word).collect();
    let weights: Vec<f64> = (1..=vocab.len()).map(|r| (r as f64).powf(-spec.exponent)).collect();
    let dist = WeightedIndex::new(&weights).expect("weights are positive");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let text = |rng: &mut ChaCha8Rng, mean: usize| {
        let len = if mean < 2 {
            1
        } else {
            rng.gen_range(mean / 2..=mean + mean / 2)
        };
        (0..len.max(1))
            .map(|_| vocab[dist.sample(rng)].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let pairs: Vec<(String, String)> = (0..spec.samples)
        .map(|_| {
            let instruction = text(&mut rng, spec.instruction_words);
            let response = text(&mut rng, spec.response_words);
            (instruction, response)
        })
        .collect();
    Corpus::from_pairs(pairs)
}
