//! N-gram TF-IDF diversity with multiplicative weight decay.
//!
//! For a document `i` with n-gram counts `f_g`,
//!
//! ```text
//! tfidf(g, i) = f_g / sum_k f_k * ln(N' / N_g)
//! s_div(i)    = sum over distinct g in i of alpha_g * tfidf(g, i)
//! ```
//!
//! where `N'` is the number of indexed documents and `N_g` the number containing `g`. Selecting a
//! document multiplies `alpha_g` by `b` for each of its grams. The index keeps an inverted list per
//! gram with the precomputed `tfidf(g, j)` of every posting, so a decay touches only the documents
//! sharing a gram with the selected one.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 5;

/// N-gram multiset of one text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GramCounts {
    pub counts: BTreeMap<String, u32>,
}

impl GramCounts {
    /// Sum of all counts across orders (the TF denominator).
    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn get(&self, gram: &str) -> u32 {
        self.counts.get(gram).copied().unwrap_or(0)
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{2026}'
                | '\u{2013}'
                | '\u{2014}'
                | '\u{00AB}'
                | '\u{00BB}'
                | '\u{00BF}'
                | '\u{00A1}'
        )
}

/// Lowercased whitespace tokens with leading/trailing punctuation removed; empty tokens dropped.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    normalized(text).map(Cow::into_owned).collect()
}

fn normalized(text: &str) -> impl Iterator<Item = Cow<'_, str>> {
    text.split_whitespace().filter_map(|t| {
        let t = t.trim_matches(is_punct);
        if t.is_empty() {
            None
        } else if t.bytes().all(|b| b.is_ascii() && !b.is_ascii_uppercase()) {
            Some(Cow::Borrowed(t))
        } else {
            Some(Cow::Owned(t.to_lowercase()))
        }
    })
}

pub fn check_orders(n_min: usize, n_max: usize) -> Result<()> {
    if n_min < 1 || n_min > n_max || n_max > MAX_ORDER {
        return Err(Error::Config(format!(
            "n-gram orders must satisfy 1 <= min <= max <= {MAX_ORDER}, got {n_min}..{n_max}"
        )));
    }
    Ok(())
}

/// All contiguous n-grams of orders `n_min..=n_max`, tokens joined by a single space.
pub fn extract_features(text: &str, n_min: usize, n_max: usize) -> Result<GramCounts> {
    check_orders(n_min, n_max)?;
    let tokens = normalize_tokens(text);
    let mut counts = BTreeMap::new();
    for n in n_min..=n_max {
        for window in tokens.windows(n) {
            *counts.entry(window.join(" ")).or_insert(0) += 1;
        }
    }
    Ok(GramCounts { counts })
}

#[derive(Debug, Clone, Copy)]
struct Posting {
    doc: u32,
    tfidf: f64,
}

#[derive(Debug, Clone)]
struct Doc {
    id: usize,
    /// (gram index, count), ascending gram index.
    grams: Vec<(u32, u32)>,
    total: u32,
}

const NONE: u32 = u32::MAX;

/// One node of the token trie: an n-gram seen in the pool, stored as its (n-1)-gram prefix plus
/// the last word. Feature grams are the nodes whose order falls in `n_min..=n_max`.
#[derive(Debug, Clone, Copy)]
struct Node {
    parent: u32,
    word: u32,
    gram: u32,
}

/// Inverted index over a pool of documents plus the mutable decay state of one greedy pass.
#[derive(Debug, Clone)]
pub struct FeatureIndex {
    n_min: usize,
    n_max: usize,
    words: Vec<String>,
    word_ids: FxHashMap<String, u32>,
    /// Unigram node of each word.
    word_node: Vec<u32>,
    nodes: Vec<Node>,
    /// `(parent node << 32 | word)` to child node.
    children: FxHashMap<u64, u32>,
    /// Trie node of each feature gram.
    grams: Vec<u32>,
    idf: Vec<f64>,
    alpha: Vec<f64>,
    /// Times each gram has been decayed this epoch.
    decays: Vec<u32>,
    /// Postings of gram `g` are `postings[offsets[g]..offsets[g + 1]]`.
    offsets: Vec<u32>,
    postings: Vec<Posting>,
    docs: Vec<Doc>,
    doc_of: FxHashMap<usize, u32>,
    s_div: Vec<f64>,
    fresh_s_div: Vec<f64>,
    /// Distinct grams of each doc whose alpha is still non-zero.
    live: Vec<u32>,
    fresh_live: Vec<u32>,
}

impl FeatureIndex {
    /// Indexes `(id, text)` pairs. `N'` is the pool size.
    pub fn build(pool: &[(usize, &str)], n_min: usize, n_max: usize) -> Result<Self> {
        check_orders(n_min, n_max)?;
        if pool.is_empty() {
            return Err(Error::Selection("cannot index an empty pool".into()));
        }
        let mut words = Vec::new();
        let mut word_ids: FxHashMap<String, u32> = FxHashMap::default();
        let mut word_node: Vec<u32> = Vec::new();
        let mut nodes: Vec<Node> = Vec::new();
        let chars: usize = pool.iter().map(|(_, t)| t.len()).sum();
        let mut children: FxHashMap<u64, u32> = if n_max > 1 {
            FxHashMap::with_capacity_and_hasher(chars / 8 * (n_max - 1), Default::default())
        } else {
            FxHashMap::default()
        };
        let mut grams: Vec<u32> = Vec::new();
        let mut doc_freq: Vec<u32> = Vec::new();
        let mut docs = Vec::with_capacity(pool.len());
        let mut doc_of = FxHashMap::default();
        let mut tokens = Vec::new();
        let mut occurrences = Vec::new();

        let emit = |node: u32, nodes: &mut [Node], grams: &mut Vec<u32>, occurrences: &mut Vec<u32>| {
            let slot = &mut nodes[node as usize].gram;
            if *slot == NONE {
                *slot = grams.len() as u32;
                grams.push(node);
            }
            occurrences.push(*slot);
        };

        for (id, text) in pool {
            if doc_of.insert(*id, docs.len() as u32).is_some() {
                return Err(Error::Selection(format!("duplicate id {id} in pool")));
            }
            tokens.clear();
            for w in normalized(text) {
                let wid = match word_ids.get(w.as_ref()) {
                    Some(&wid) => wid,
                    None => {
                        let wid = words.len() as u32;
                        words.push(w.to_string());
                        word_ids.insert(w.into_owned(), wid);
                        word_node.push(nodes.len() as u32);
                        nodes.push(Node {
                            parent: NONE,
                            word: wid,
                            gram: NONE,
                        });
                        wid
                    }
                };
                tokens.push(wid);
            }
            occurrences.clear();
            for i in 0..tokens.len() {
                let mut node = word_node[tokens[i] as usize];
                if n_min == 1 {
                    emit(node, &mut nodes, &mut grams, &mut occurrences);
                }
                for (k, &w) in tokens[i + 1..].iter().take(n_max - 1).enumerate() {
                    let next = nodes.len() as u32;
                    let child = *children.entry((node as u64) << 32 | w as u64).or_insert(next);
                    if child == next {
                        nodes.push(Node {
                            parent: node,
                            word: w,
                            gram: NONE,
                        });
                    }
                    node = child;
                    if k + 2 >= n_min {
                        emit(node, &mut nodes, &mut grams, &mut occurrences);
                    }
                }
            }
            doc_freq.resize(grams.len(), 0);
            occurrences.sort_unstable();
            let mut doc_grams: Vec<(u32, u32)> = Vec::new();
            for &g in &occurrences {
                match doc_grams.last_mut() {
                    Some((last, c)) if *last == g => *c += 1,
                    _ => {
                        doc_freq[g as usize] += 1;
                        doc_grams.push((g, 1));
                    }
                }
            }
            docs.push(Doc {
                id: *id,
                grams: doc_grams,
                total: occurrences.len() as u32,
            });
        }

        let n = pool.len() as f64;
        let idf: Vec<f64> = doc_freq.iter().map(|&df| (n / df as f64).ln()).collect();
        let mut offsets = Vec::with_capacity(doc_freq.len() + 1);
        offsets.push(0u32);
        for &df in &doc_freq {
            offsets.push(offsets.last().unwrap() + df);
        }
        let mut cursor: Vec<u32> = offsets[..doc_freq.len()].to_vec();
        let mut postings = vec![Posting { doc: 0, tfidf: 0.0 }; *offsets.last().unwrap() as usize];
        let mut s_div = Vec::with_capacity(docs.len());
        for (d, doc) in docs.iter().enumerate() {
            let mut s = 0.0;
            for &(g, count) in &doc.grams {
                let tfidf = count as f64 / doc.total as f64 * idf[g as usize];
                let c = &mut cursor[g as usize];
                postings[*c as usize] = Posting { doc: d as u32, tfidf };
                *c += 1;
                s += tfidf;
            }
            s_div.push(s);
        }
        let live: Vec<u32> = docs.iter().map(|d| d.grams.len() as u32).collect();
        Ok(FeatureIndex {
            n_min,
            n_max,
            words,
            word_ids,
            word_node,
            nodes,
            children,
            alpha: vec![1.0; grams.len()],
            decays: vec![0; grams.len()],
            grams,
            idf,
            offsets,
            postings,
            fresh_s_div: s_div.clone(),
            s_div,
            fresh_live: live.clone(),
            live,
            docs,
            doc_of,
        })
    }

    fn gram_id(&self, gram: &str) -> Option<u32> {
        let mut parts = gram.split(' ');
        let mut node = self.word_node[*self.word_ids.get(parts.next()?)? as usize];
        for w in parts {
            let w = *self.word_ids.get(w)?;
            node = *self.children.get(&((node as u64) << 32 | w as u64))?;
        }
        let g = self.nodes[node as usize].gram;
        (g != NONE).then_some(g)
    }

    fn postings_of(&self, g: usize) -> &[Posting] {
        &self.postings[self.offsets[g] as usize..self.offsets[g + 1] as usize]
    }

    fn gram_text(&self, g: u32) -> String {
        let mut parts = Vec::new();
        let mut node = self.grams[g as usize];
        while node != NONE {
            let n = self.nodes[node as usize];
            parts.push(self.words[n.word as usize].as_str());
            node = n.parent;
        }
        parts.reverse();
        parts.join(" ")
    }

    /// `N'`.
    pub fn pool_size(&self) -> usize {
        self.docs.len()
    }

    pub fn orders(&self) -> (usize, usize) {
        (self.n_min, self.n_max)
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.docs.iter().map(|d| d.id)
    }

    pub fn contains(&self, id: usize) -> bool {
        self.doc_of.contains_key(&id)
    }

    pub fn num_grams(&self) -> usize {
        self.grams.len()
    }

    pub fn idf(&self, gram: &str) -> Option<f64> {
        self.gram_id(gram).map(|g| self.idf[g as usize])
    }

    pub fn alpha(&self, gram: &str) -> Option<f64> {
        self.gram_id(gram).map(|g| self.alpha[g as usize])
    }

    /// `N_g`.
    pub fn doc_frequency(&self, gram: &str) -> Option<usize> {
        self.gram_id(gram).map(|g| self.postings_of(g as usize).len())
    }

    /// Distinct grams of a document with their counts.
    pub fn grams_of(&self, id: usize) -> Option<Vec<(String, u32)>> {
        let d = *self.doc_of.get(&id)?;
        Some(
            self.docs[d as usize]
                .grams
                .iter()
                .map(|&(g, c)| (self.gram_text(g), c))
                .collect(),
        )
    }

    /// Current `s_div` from the incrementally maintained table.
    pub fn s_div(&self, id: usize) -> Option<f64> {
        self.doc_of.get(&id).map(|&d| self.s_div[d as usize])
    }

    pub(crate) fn s_div_at(&self, doc: u32) -> f64 {
        self.s_div[doc as usize]
    }

    pub(crate) fn doc_index(&self, id: usize) -> Option<u32> {
        self.doc_of.get(&id).copied()
    }

    /// All current scores, keyed by id.
    pub fn diversity_scores(&self) -> BTreeMap<usize, f64> {
        self.docs.iter().zip(&self.s_div).map(|(d, &s)| (d.id, s)).collect()
    }

    /// Recomputes `s_div` of one document from the current alphas, bypassing the incremental table.
    pub fn recompute(&self, id: usize) -> Option<f64> {
        let d = *self.doc_of.get(&id)?;
        let doc = &self.docs[d as usize];
        Some(
            doc.grams
                .iter()
                .map(|&(g, c)| self.alpha[g as usize] * (c as f64 / doc.total as f64) * self.idf[g as usize])
                .sum(),
        )
    }

    /// Decays every gram of `id` by `b` and returns the other documents whose score changed.
    pub fn apply_decay(&mut self, id: usize, b: f64) -> Result<BTreeSet<usize>> {
        let d = self
            .doc_index(id)
            .ok_or_else(|| Error::Internal(format!("id {id} is not in the feature index")))?;
        let mut affected = BTreeSet::new();
        for &(g, _) in &self.docs[d as usize].grams {
            if self.alpha[g as usize] != 0.0 {
                affected.extend(
                    self.postings_of(g as usize)
                        .iter()
                        .filter(|p| p.doc != d)
                        .map(|p| self.docs[p.doc as usize].id),
                );
            }
        }
        self.decay_doc(d, b)?;
        Ok(affected)
    }

    pub(crate) fn decay_doc(&mut self, d: u32, b: f64) -> Result<()> {
        check_decay(b)?;
        for i in 0..self.docs[d as usize].grams.len() {
            let g = self.docs[d as usize].grams[i].0;
            self.decay_gram_index(g as usize, b);
        }
        Ok(())
    }

    /// Multiplies one gram's alpha by `b`, updating every posting's score. `b` must stay the same
    /// between epoch resets.
    pub fn decay_gram(&mut self, gram: &str, b: f64) -> Result<()> {
        check_decay(b)?;
        let g = self
            .gram_id(gram)
            .ok_or_else(|| Error::Internal(format!("gram `{gram}` is not in the feature index")))?;
        self.decay_gram_index(g as usize, b);
        Ok(())
    }

    fn decay_gram_index(&mut self, g: usize, b: f64) {
        let old = self.alpha[g];
        if old == 0.0 {
            return;
        }
        self.decays[g] += 1;
        let new = decay_weight(b, self.decays[g]);
        self.alpha[g] = new;
        let delta = old - new;
        let (lo, hi) = (self.offsets[g] as usize, self.offsets[g + 1] as usize);
        for p in &self.postings[lo..hi] {
            let j = p.doc as usize;
            let s = (self.s_div[j] - delta * p.tfidf).max(0.0);
            if new == 0.0 {
                self.live[j] -= 1;
                self.s_div[j] = if self.live[j] == 0 { 0.0 } else { s };
            } else {
                self.s_div[j] = s;
            }
        }
    }

    /// Restores every alpha to 1 for a new epoch. If `pool` lists a different set of documents
    /// the index is rebuilt over it instead.
    pub fn reset_epoch(&mut self, pool: &[(usize, &str)]) -> Result<()> {
        let same = pool.len() == self.docs.len() && pool.iter().zip(&self.docs).all(|((id, _), d)| *id == d.id);
        if same {
            self.alpha.iter_mut().for_each(|a| *a = 1.0);
            self.decays.iter_mut().for_each(|k| *k = 0);
            self.s_div.copy_from_slice(&self.fresh_s_div);
            self.live.copy_from_slice(&self.fresh_live);
        } else {
            *self = FeatureIndex::build(pool, self.n_min, self.n_max)?;
        }
        Ok(())
    }
}

/// `b^k`, evaluated as `1 / (1/b)^k` so that decays like 0.1 land on the nearest double of the
/// decimal power (0.1 twice gives 0.01, not 0.1 * 0.1).
pub fn decay_weight(b: f64, k: u32) -> f64 {
    if k == 0 {
        1.0
    } else if b == 0.0 {
        0.0
    } else {
        1.0 / (1.0 / b).powi(k as i32)
    }
}

pub fn check_decay(b: f64) -> Result<()> {
    if !(0.0..1.0).contains(&b) {
        return Err(Error::Config(format!("decay b must be in [0, 1), got {b}")));
    }
    Ok(())
}
