//! Reference selection strategies for comparisons and ablations.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::complexity::{is_aligned, ScoreTable};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::selector::{reserve_pool, select_epoch, top_up, DiversitySource, Pick, SelectionConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub strategy: String,
    pub picks: Vec<Pick>,
}

impl StrategyResult {
    pub fn selected_ids(&self) -> Vec<usize> {
        self.picks.iter().map(|p| p.id).collect()
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn check_m(corpus: &Corpus, m: usize) -> Result<()> {
    if m == 0 || m > corpus.len() {
        return Err(Error::Selection(format!(
            "cannot select {m} samples from a corpus of {}",
            corpus.len()
        )));
    }
    Ok(())
}

fn plain_picks(ids: impl IntoIterator<Item = usize>) -> Vec<Pick> {
    ids.into_iter()
        .enumerate()
        .map(|(i, id)| Pick {
            id,
            rank: i + 1,
            s_com: None,
            s_div: None,
            s_combined: None,
            shortfall: false,
        })
        .collect()
}

/// The `m` responses with the most whitespace-separated words, ties by ascending id.
pub fn select_longest(corpus: &Corpus, m: usize) -> Result<StrategyResult> {
    check_m(corpus, m)?;
    let mut ranked: Vec<(usize, usize)> = corpus
        .samples()
        .iter()
        .map(|s| (s.id, word_count(&s.response)))
        .collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(StrategyResult {
        strategy: "longest".into(),
        picks: plain_picks(ranked.into_iter().take(m).map(|(id, _)| id)),
    })
}

/// Uniform sample without replacement, reproducible from `seed`.
pub fn select_random(corpus: &Corpus, m: usize, seed: u64) -> Result<StrategyResult> {
    check_m(corpus, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = rand::seq::index::sample(&mut rng, corpus.len(), m);
    Ok(StrategyResult {
        strategy: "random".into(),
        picks: plain_picks(ids),
    })
}

/// The `m` aligned samples with the highest `s_com`, topped up from unaligned ones if needed.
pub fn select_ifd_only(table: &ScoreTable, m: usize) -> Result<StrategyResult> {
    if table.is_empty() {
        return Err(Error::Selection("empty score table".into()));
    }
    let mut aligned: Vec<(usize, f64)> = table
        .entries
        .iter()
        .filter(|(_, s)| is_aligned(s.s_com))
        .map(|(&id, s)| (id, s.s_com))
        .collect();
    aligned.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    aligned.truncate(m);
    let mut picks: Vec<Pick> = aligned
        .into_iter()
        .enumerate()
        .map(|(i, (id, s_com))| Pick {
            id,
            rank: i + 1,
            s_com: Some(s_com),
            s_div: None,
            s_combined: Some(s_com),
            shortfall: false,
        })
        .collect();
    let latest: BTreeMap<usize, f64> = table.entries.iter().map(|(&id, s)| (id, s.s_com)).collect();
    top_up(&mut picks, m, &latest);
    Ok(StrategyResult {
        strategy: "ifd".into(),
        picks,
    })
}

/// Single-epoch complexity x diversity selection with the diversity index built over `source`
/// text. `Instruction` is the GraphFilter-style instruction TF-IDF x IFD ranking; `Response` is
/// the main selector's first epoch; `None` ranks by complexity alone.
pub fn select_with_source(
    corpus: &Corpus,
    table: &ScoreTable,
    config: &SelectionConfig,
    source: DiversitySource,
) -> Result<StrategyResult> {
    let m = config.resolve_m(corpus.len())?;
    let reserved = reserve_pool(table, config.reserve_size(corpus.len())?, config.filter_order)?;
    let latest: BTreeMap<usize, f64> = table.entries.iter().map(|(&id, s)| (id, s.s_com)).collect();
    let config = SelectionConfig {
        diversity: source,
        ..config.clone()
    };
    let sel = select_epoch(corpus, &config, m, 0, table, &latest, &reserved, &mut None)?;
    let strategy = match source {
        DiversitySource::Instruction => "graphfilter-style".to_string(),
        DiversitySource::Response => "iterit".to_string(),
        other => format!("iterit-div({other})"),
    };
    Ok(StrategyResult {
        strategy,
        picks: sel.picks,
    })
}

/// GraphFilter-style selection: instruction TF-IDF diversity times complexity.
pub fn select_instruction_diverse(
    corpus: &Corpus,
    table: &ScoreTable,
    config: &SelectionConfig,
) -> Result<StrategyResult> {
    select_with_source(corpus, table, config, DiversitySource::Instruction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::ProviderVersion;

    fn corpus_with_lengths(lengths: &[usize]) -> Corpus {
        Corpus::from_pairs(
            lengths
                .iter()
                .enumerate()
                .map(|(i, &n)| (format!("q{i}"), vec!["w"; n.max(1)].join(" "))),
        )
        .unwrap()
    }

    #[test]
    fn longest_with_ties() {
        let c = corpus_with_lengths(&[5, 9, 9, 1]);
        assert_eq!(select_longest(&c, 2).unwrap().selected_ids(), vec![1, 2]);
        assert_eq!(select_longest(&c, 4).unwrap().selected_ids().len(), 4);
        assert!(select_longest(&c, 5).is_err());
        let one = corpus_with_lengths(&[3]);
        assert_eq!(select_longest(&one, 1).unwrap().selected_ids(), vec![0]);
    }

    #[test]
    fn longest_ignores_whitespace_runs() {
        let a = Corpus::from_pairs([("x", "a b c"), ("y", "a  b")]).unwrap();
        let b = Corpus::from_pairs([("x", "a \n\t b   c"), ("y", "a b")]).unwrap();
        assert_eq!(
            select_longest(&a, 1).unwrap().selected_ids(),
            select_longest(&b, 1).unwrap().selected_ids()
        );
    }

    #[test]
    fn random_is_seeded() {
        let c = corpus_with_lengths(&[1; 50]);
        let a = select_random(&c, 10, 7).unwrap();
        assert_eq!(a, select_random(&c, 10, 7).unwrap());
        let mut all = select_random(&c, 50, 1).unwrap().selected_ids();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn ifd_only_examples() {
        let t = ScoreTable::from_s_com(ProviderVersion::new("v"), [(0, 0.5), (1, 0.9), (2, 1.2)]);
        assert_eq!(select_ifd_only(&t, 1).unwrap().selected_ids(), vec![1]);
        assert_eq!(select_ifd_only(&t, 2).unwrap().selected_ids(), vec![1, 0]);
        let r = select_ifd_only(&t, 3).unwrap();
        assert_eq!(r.selected_ids(), vec![1, 0, 2]);
        assert!(r.picks[2].shortfall);
    }
}
