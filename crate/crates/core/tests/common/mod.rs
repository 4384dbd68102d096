//! Fixture helpers and deliberately naive reference implementations used as test oracles.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use datasift::{Corpus, Format, ToySpec};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

pub fn load(name: &str) -> Corpus {
    Corpus::load(fixture(name), Format::Plain).unwrap()
}

/// Toy provider pretrained on the shipped pretraining set.
pub fn toy_spec() -> ToySpec {
    ToySpec {
        pretrain: Some(fixture("pretrain.jsonl")),
        ..ToySpec::default()
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

const EXTRA_PUNCT: &str = "\u{2018}\u{2019}\u{201C}\u{201D}\u{2026}\u{2013}\u{2014}\u{00AB}\u{00BB}\u{00BF}\u{00A1}";

/// N-gram counts written out longhand.
pub fn naive_grams(text: &str, n_min: usize, n_max: usize) -> BTreeMap<String, u32> {
    let mut words = Vec::new();
    for raw in text.split_whitespace() {
        let w: &str = raw.trim_matches(|c: char| c.is_ascii_punctuation() || EXTRA_PUNCT.contains(c));
        if !w.is_empty() {
            words.push(w.to_lowercase());
        }
    }
    let mut out = BTreeMap::new();
    for n in n_min..=n_max {
        if words.len() < n {
            continue;
        }
        for start in 0..=words.len() - n {
            *out.entry(words[start..start + n].join(" ")).or_insert(0) += 1;
        }
    }
    out
}

/// Diversity scores recomputed from scratch on every query.
pub struct NaiveDiversity {
    pub docs: Vec<(usize, BTreeMap<String, u32>)>,
    /// Documents containing each gram, counted once up front.
    pub df: HashMap<String, usize>,
    pub alpha: HashMap<String, f64>,
}

impl NaiveDiversity {
    pub fn new(pool: &[(usize, &str)], n_min: usize, n_max: usize) -> Self {
        let docs: Vec<(usize, BTreeMap<String, u32>)> =
            pool.iter().map(|(id, t)| (*id, naive_grams(t, n_min, n_max))).collect();
        let mut df = HashMap::new();
        for (_, grams) in &docs {
            for g in grams.keys() {
                *df.entry(g.clone()).or_insert(0) += 1;
            }
        }
        NaiveDiversity {
            docs,
            df,
            alpha: HashMap::new(),
        }
    }

    fn doc(&self, id: usize) -> &BTreeMap<String, u32> {
        &self.docs.iter().find(|(d, _)| *d == id).unwrap().1
    }

    pub fn s_div(&self, id: usize) -> f64 {
        let n = self.docs.len() as f64;
        let grams = self.doc(id);
        let total: u32 = grams.values().sum();
        let mut s = 0.0;
        for (g, &f) in grams {
            let df = self.df[g] as f64;
            let alpha = self.alpha.get(g).copied().unwrap_or(1.0);
            s += alpha * (f as f64 / total as f64) * (n / df).ln();
        }
        s
    }

    pub fn decay(&mut self, id: usize, b: f64) {
        let grams: Vec<String> = self.doc(id).keys().cloned().collect();
        for g in grams {
            *self.alpha.entry(g).or_insert(1.0) *= b;
        }
    }

    pub fn decay_gram(&mut self, gram: &str, b: f64) {
        *self.alpha.entry(gram.to_string()).or_insert(1.0) *= b;
    }
}

/// Greedy selection recomputing every remaining candidate's score at every step.
/// Same tie rule as the engine: scores within 1e-9 (relative, floored at 1) of the best tie,
/// then higher s_com, then lower id.
pub fn naive_greedy(
    candidates: &[(usize, f64)],
    texts: &[(usize, &str)],
    n_min: usize,
    n_max: usize,
    m: usize,
    b: f64,
) -> Vec<usize> {
    let mut div = NaiveDiversity::new(texts, n_min, n_max);
    let mut remaining: Vec<(usize, f64)> = candidates.to_vec();
    let mut picked = Vec::new();
    while picked.len() < m && !remaining.is_empty() {
        let scored: Vec<(usize, f64, f64)> = remaining.iter().map(|&(id, c)| (id, c, c * div.s_div(id))).collect();
        let max = scored.iter().map(|x| x.2).fold(f64::NEG_INFINITY, f64::max);
        let floor = max - 1e-9 * max.abs().max(1.0);
        let best = scored
            .iter()
            .filter(|x| x.2 >= floor)
            .min_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)))
            .unwrap()
            .0;
        picked.push(best);
        remaining.retain(|&(id, _)| id != best);
        div.decay(best, b);
    }
    picked
}

/// Random text over a small vocabulary so that grams repeat across documents.
pub fn random_text(rng: &mut impl rand::Rng, max_words: usize, vocab: usize) -> String {
    let n = rng.gen_range(1..=max_words);
    (0..n)
        .map(|_| {
            let w = rng.gen_range(0..vocab);
            match rng.gen_range(0..10) {
                0 => format!("W{w},"),
                1 => format!("\u{201C}w{w}"),
                _ => format!("w{w}"),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Echo-mode completion response for `prompt`: one token per whitespace-delimited word, offsets
/// in chars, `null` for the first token. A word scores higher when it already occurred earlier in
/// the prompt, so instructions that share words with their response lower its perplexity.
pub fn fake_echo(prompt: &str) -> serde_json::Value {
    let chars: Vec<char> = prompt.chars().collect();
    let mut offsets = Vec::new();
    let mut words = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        offsets.push(start);
        words.push(chars[start..i].iter().collect::<String>().to_lowercase());
    }
    if offsets.first() != Some(&0) && !chars.is_empty() {
        offsets.insert(0, 0);
        words.insert(0, String::new());
    }
    let mut logprobs = vec![serde_json::Value::Null];
    for k in 1..words.len() {
        let h = words[k]
            .bytes()
            .fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
        let mut lp = -(0.5 + (h % 7) as f64 * 0.3);
        if words[..k].contains(&words[k]) {
            lp += 0.4;
        }
        logprobs.push(serde_json::json!(lp));
    }
    serde_json::json!({
        "choices": [{"text": prompt, "logprobs": {"token_logprobs": logprobs, "text_offset": offsets}}]
    })
}

/// A mock completion endpoint answering every POST with [`fake_echo`] of the request's prompt.
pub fn fake_endpoint(server: &mut mockito::ServerGuard) -> mockito::Mock {
    server
        .mock("POST", "/v1/completions")
        .with_status(200)
        .with_header("content-type", "application/json")
        .with_body_from_request(|req| {
            let body: serde_json::Value = serde_json::from_slice(req.body().unwrap()).unwrap();
            fake_echo(body["prompt"].as_str().unwrap()).to_string().into_bytes()
        })
        .create()
}

/// Compares `actual` with `tests/fixtures/golden/<name>`; `UPDATE_GOLDENS=1` rewrites the file.
pub fn check_golden(name: &str, actual: &str) {
    let path = fixture(&format!("golden/{name}"));
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e} (run with UPDATE_GOLDENS=1 to create)", path.display()));
    let (e, a) = (golden_tokens(&expected), golden_tokens(actual));
    assert_eq!(e.len(), a.len(), "{} differs from the committed golden", path.display());
    for (x, y) in e.iter().zip(&a) {
        let same = match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(x), Ok(y)) => rel_close(x, y, 1e-9),
            _ => x == y,
        };
        assert!(same, "{}: `{x}` vs `{y}`", path.display());
    }
}

/// Splits text into numeric literals and the text between them, so goldens can be compared with a
/// float tolerance (summation order moves the last bits).
fn golden_tokens(text: &str) -> Vec<String> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut start = 0;
    while i < b.len() {
        let num_start = b[i].is_ascii_digit() || (b[i] == b'-' && b.get(i + 1).is_some_and(u8::is_ascii_digit));
        if num_start {
            if start < i {
                out.push(text[start..i].to_string());
            }
            let mut j = i + 1;
            while j < b.len() && (b[j].is_ascii_digit() || matches!(b[j], b'.' | b'e' | b'E' | b'+' | b'-')) {
                j += 1;
            }
            out.push(text[i..j].to_string());
            i = j;
            start = j;
        } else {
            i += 1;
        }
    }
    if start < b.len() {
        out.push(text[start..].to_string());
    }
    out
}

/// The fixture run used by several tests: 100 samples, M = 5, a = 3, b = 0.1, three epochs.
pub fn fixture_config() -> datasift::SelectionConfig {
    datasift::SelectionConfig {
        size: datasift::SelectionSize::Count(5),
        ..datasift::SelectionConfig::default()
    }
}

pub fn run_fixture(
    out: &Path,
    spec: &datasift::ProviderSpec,
    opts: &datasift::RunOptions,
) -> datasift::Result<datasift::RunState> {
    let corpus = load("corpus_100.jsonl");
    let config = fixture_config();
    let mut provider = spec.build(&corpus, &config.template().unwrap())?;
    datasift::run(&config, spec, &corpus, provider.as_mut(), out, opts)
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Full-recompute greedy over interned grams: at every step each remaining candidate's s_div is
/// summed afresh from its gram weights. Same tie rule as [`naive_greedy`].
pub fn recompute_greedy(
    candidates: &[(usize, f64)],
    texts: &[(usize, &str)],
    n_min: usize,
    n_max: usize,
    m: usize,
    b: f64,
) -> Vec<usize> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let bags: Vec<BTreeMap<String, u32>> = texts
        .iter()
        .map(|(_, t)| datasift::extract_features(t, n_min, n_max).unwrap().counts)
        .collect();
    let mut df: Vec<f64> = Vec::new();
    for bag in &bags {
        for g in bag.keys() {
            let next = ids.len();
            let gid = *ids.entry(g.clone()).or_insert(next);
            if gid == df.len() {
                df.push(0.0);
            }
            df[gid] += 1.0;
        }
    }
    let n = texts.len() as f64;
    let row: HashMap<usize, usize> = texts.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect();
    let docs: Vec<Vec<(usize, f64)>> = bags
        .iter()
        .map(|bag| {
            let total: u32 = bag.values().sum();
            bag.iter()
                .map(|(g, &f)| {
                    let gid = ids[g];
                    (gid, f as f64 / total as f64 * (n / df[gid]).ln())
                })
                .collect()
        })
        .collect();
    let mut alpha = vec![1.0f64; df.len()];
    let mut remaining: Vec<(usize, f64, usize)> = candidates.iter().map(|&(id, c)| (id, c, row[&id])).collect();
    let mut picked = Vec::new();
    let mut scored = Vec::with_capacity(remaining.len());
    while picked.len() < m && !remaining.is_empty() {
        scored.clear();
        for &(id, c, r) in &remaining {
            let s: f64 = docs[r].iter().map(|&(g, t)| alpha[g] * t).sum();
            scored.push((id, c, c * s));
        }
        let max = scored.iter().map(|x| x.2).fold(f64::NEG_INFINITY, f64::max);
        let floor = max - 1e-9 * max.abs().max(1.0);
        let best = scored
            .iter()
            .filter(|x| x.2 >= floor)
            .min_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)))
            .unwrap()
            .0;
        let k = remaining.iter().position(|x| x.0 == best).unwrap();
        let (_, _, r) = remaining.swap_remove(k);
        for &(g, _) in &docs[r] {
            alpha[g] *= b;
        }
        picked.push(best);
    }
    picked
}
