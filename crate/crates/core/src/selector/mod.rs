//! Candidate reservation and greedy complexity x diversity selection.

mod run;

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::complexity::{is_aligned, ScoreTable};
use crate::corpus::{Corpus, Sample, Template, DEFAULT_TEMPLATE};
use crate::diversity::{check_decay, check_orders, FeatureIndex};
use crate::error::{Error, Result};
use crate::provider::ProviderVersion;

pub use run::{resume, run, EpochRecord, RunOptions, RunState, RunStatus, STATE_FILE};

/// Number of samples per epoch, absolute or as a fraction of the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionSize {
    Count(usize),
    Fraction(f64),
}

/// Whether the alignment filter runs before or after the top-`a*M` cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterOrder {
    #[default]
    FilterFirst,
    TruncateFirst,
}

/// Which documents define `N'` and the document frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdfScope {
    /// The epoch's aligned candidates.
    #[default]
    EpochPool,
    /// The fixed reserved pool.
    ReservedPool,
    /// The whole corpus.
    Corpus,
}

/// Text that feeds the diversity index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiversitySource {
    /// No diversity term: ranking by complexity alone.
    None,
    #[serde(rename = "i")]
    Instruction,
    #[default]
    #[serde(rename = "o")]
    Response,
    #[serde(rename = "io")]
    Both,
}

impl DiversitySource {
    pub fn text<'a>(&self, sample: &'a Sample) -> Cow<'a, str> {
        match self {
            DiversitySource::Instruction => Cow::Borrowed(&sample.instruction),
            DiversitySource::Response | DiversitySource::None => Cow::Borrowed(&sample.response),
            DiversitySource::Both => Cow::Owned(format!("{}\n{}", sample.instruction, sample.response)),
        }
    }
}

impl fmt::Display for DiversitySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiversitySource::None => "none",
            DiversitySource::Instruction => "i",
            DiversitySource::Response => "o",
            DiversitySource::Both => "io",
        })
    }
}

impl FromStr for DiversitySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => DiversitySource::None,
            "i" => DiversitySource::Instruction,
            "o" => DiversitySource::Response,
            "io" => DiversitySource::Both,
            other => return Err(Error::Config(format!("unknown diversity mode `{other}` (none|i|o|io)"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub size: SelectionSize,
    /// Reservation coefficient: `a*M` candidates are kept for re-scoring.
    pub a: f64,
    /// Weight decay applied to the grams of each selected sample.
    pub b: f64,
    pub epochs: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub template: String,
    pub seed: u64,
    pub filter_order: FilterOrder,
    pub idf_scope: IdfScope,
    pub diversity: DiversitySource,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            size: SelectionSize::Fraction(0.05),
            a: 3.0,
            b: 0.1,
            epochs: 3,
            ngram_min: 1,
            ngram_max: 2,
            template: DEFAULT_TEMPLATE.to_string(),
            seed: 0,
            filter_order: FilterOrder::default(),
            idf_scope: IdfScope::default(),
            diversity: DiversitySource::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 1.0 && self.a.is_finite()) {
            return Err(Error::Config(format!("a must be > 1, got {}", self.a)));
        }
        check_decay(self.b)?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        check_orders(self.ngram_min, self.ngram_max)?;
        match self.size {
            SelectionSize::Count(0) => return Err(Error::Config("count must be >= 1".into())),
            SelectionSize::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::Config(format!("fraction must be in (0, 1], got {f}")))
            }
            _ => {}
        }
        self.template()?;
        Ok(())
    }

    pub fn template(&self) -> Result<Template> {
        Template::new(self.template.clone())
    }

    /// `M`: a count, or `floor(fraction * N)` with a minimum of 1.
    pub fn resolve_m(&self, n: usize) -> Result<usize> {
        let m = match self.size {
            SelectionSize::Count(c) => c,
            SelectionSize::Fraction(f) => ((f * n as f64 + 1e-9).floor() as usize).max(1),
        };
        if m > n {
            return Err(Error::Config(format!("cannot select {m} samples from a corpus of {n}")));
        }
        Ok(m)
    }

    /// `floor(a * M)`, capped at the corpus size.
    pub fn reserve_size(&self, n: usize) -> Result<usize> {
        let m = self.resolve_m(n)?;
        let want = ((self.a * m as f64 + 1e-9).floor() as usize).max(m);
        if want > n {
            warn!(
                requested = want,
                corpus = n,
                "a*M exceeds the corpus size; reserving the whole corpus"
            );
        }
        Ok(want.min(n))
    }
}

/// Top `size` candidates by descending `s_com` (ties by ascending id). With
/// [`FilterOrder::FilterFirst`] only aligned samples are eligible.
pub fn reserve_pool(table: &ScoreTable, size: usize, order: FilterOrder) -> Result<Vec<usize>> {
    let mut ranked: Vec<(usize, f64)> = table.entries.iter().map(|(&id, s)| (id, s.s_com)).collect();
    if order == FilterOrder::FilterFirst {
        ranked.retain(|&(_, s)| is_aligned(s));
    }
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    ranked.truncate(size);
    if !ranked.iter().any(|&(_, s)| is_aligned(s)) {
        return Err(Error::NoAlignedSamples);
    }
    if ranked.len() < size {
        warn!(
            aligned = ranked.len(),
            requested = size,
            "fewer aligned samples than the reservation size"
        );
    }
    Ok(ranked.into_iter().map(|(id, _)| id).collect())
}

/// One selected sample with the scores it had when it was picked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub id: usize,
    pub rank: usize,
    pub s_com: Option<f64>,
    pub s_div: Option<f64>,
    pub s_combined: Option<f64>,
    /// Added from the unaligned remainder because the aligned pool was smaller than `M`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub shortfall: bool,
}

/// Greedy maximisation of `s_com * s_div` with decay after every pick.
///
/// Ties (see [`best_candidate`]) go to the higher `s_com`, then the lower id. Without an index
/// the ranking is by `s_com` alone. Picks `min(m, candidates)` samples; every candidate must be indexed.
pub fn greedy_select(
    candidates: &[(usize, f64)],
    mut index: Option<&mut FeatureIndex>,
    m: usize,
    b: f64,
) -> Result<Vec<Pick>> {
    check_decay(b)?;
    let mut remaining = Vec::with_capacity(candidates.len());
    let mut seen = BTreeSet::new();
    for &(id, s_com) in candidates {
        if !seen.insert(id) {
            return Err(Error::Selection(format!("duplicate candidate id {id}")));
        }
        let doc = match index.as_deref() {
            Some(idx) => idx
                .doc_index(id)
                .ok_or_else(|| Error::Internal(format!("candidate {id} is not indexed")))?,
            None => 0,
        };
        remaining.push((doc, id, s_com));
    }

    let target = m.min(remaining.len());
    let mut picks = Vec::with_capacity(target);
    let mut scores = vec![0.0; remaining.len()];
    while picks.len() < target {
        for (slot, &(doc, _, s_com)) in scores.iter_mut().zip(&remaining) {
            *slot = match index.as_deref() {
                Some(idx) => s_com * idx.s_div_at(doc),
                None => s_com,
            };
        }
        let k = best_candidate(
            remaining
                .iter()
                .zip(&scores)
                .map(|(&(_, id, s_com), &s)| (id, s_com, s)),
        )
        .expect("remaining is non-empty");
        let score = scores[k];
        scores.swap_remove(k);
        let (doc, id, s_com) = remaining.swap_remove(k);
        let s_div = match index.as_deref_mut() {
            Some(idx) => {
                let s = idx.s_div_at(doc);
                idx.decay_doc(doc, b)?;
                Some(s)
            }
            None => None,
        };
        picks.push(Pick {
            id,
            rank: picks.len() + 1,
            s_com: Some(s_com),
            s_div,
            s_combined: Some(score),
            shortfall: false,
        });
    }
    Ok(picks)
}

/// Combined scores this close to the maximum count as tied with it. Keeps the pick order stable
/// against last-bit differences between incrementally updated and recomputed scores.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-9;

/// Position of the best `(id, s_com, score)`: highest score, where scores within
/// [`SCORE_TIE_TOLERANCE`] (relative, floored at 1) of the maximum tie; ties go to the higher
/// `s_com`, then the lower id. The result does not depend on iteration order.
pub fn best_candidate(items: impl Iterator<Item = (usize, f64, f64)> + Clone) -> Option<usize> {
    let max = items.clone().map(|(_, _, s)| s).reduce(f64::max)?;
    let floor = max - SCORE_TIE_TOLERANCE * max.abs().max(1.0);
    let mut best: Option<(usize, usize, f64)> = None;
    for (k, (id, s_com, score)) in items.enumerate() {
        if score < floor {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, bid, bcom)) => match s_com.total_cmp(&bcom) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => id < bid,
            },
        };
        if better {
            best = Some((k, id, s_com));
        }
    }
    best.map(|(k, _, _)| k)
}

/// Fills `picks` up to `m` from unaligned samples in ascending `s_com` order (ties by id).
/// Returns how many were added.
pub fn top_up(picks: &mut Vec<Pick>, m: usize, latest: &BTreeMap<usize, f64>) -> usize {
    if picks.len() >= m {
        return 0;
    }
    let taken: BTreeSet<usize> = picks.iter().map(|p| p.id).collect();
    let mut rest: Vec<(usize, f64)> = latest
        .iter()
        .filter(|(id, s)| !is_aligned(**s) && !taken.contains(id))
        .map(|(&id, &s)| (id, s))
        .collect();
    rest.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    let need = m - picks.len();
    let added = need.min(rest.len());
    warn!(
        aligned = picks.len(),
        requested = m,
        added,
        "aligned pool smaller than M; topping up from unaligned samples"
    );
    for (id, s_com) in rest.into_iter().take(need) {
        picks.push(Pick {
            id,
            rank: picks.len() + 1,
            s_com: Some(s_com),
            s_div: None,
            s_combined: None,
            shortfall: true,
        });
    }
    if picks.len() < m {
        warn!(selected = picks.len(), requested = m, "selection is short of M");
    }
    added
}

/// Selected data for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSelection {
    pub epoch: usize,
    pub version: ProviderVersion,
    /// The aligned candidates `D'` selection drew from.
    pub pool_ids: Vec<usize>,
    pub picks: Vec<Pick>,
}

impl EpochSelection {
    pub fn ids(&self) -> Vec<usize> {
        self.picks.iter().map(|p| p.id).collect()
    }

    pub fn shortfall(&self) -> usize {
        self.picks.iter().filter(|p| p.shortfall).count()
    }
}

/// Per-epoch selection: filter the reserved pool by alignment, (re)index the diversity source,
/// run the greedy loop and top up if needed. `index` carries the feature index across epochs.
#[allow(clippy::too_many_arguments)]
pub fn select_epoch(
    corpus: &Corpus,
    config: &SelectionConfig,
    m: usize,
    epoch: usize,
    scores: &ScoreTable,
    latest: &BTreeMap<usize, f64>,
    reserved: &[usize],
    index: &mut Option<FeatureIndex>,
) -> Result<EpochSelection> {
    let candidates: Vec<(usize, f64)> = reserved
        .iter()
        .filter_map(|&id| scores.s_com(id).map(|s| (id, s)))
        .filter(|&(_, s)| is_aligned(s))
        .collect();
    let pool_ids: Vec<usize> = candidates.iter().map(|&(id, _)| id).collect();

    let source = config.diversity;
    let mut picks = if source == DiversitySource::None || candidates.is_empty() {
        greedy_select(&candidates, None, m, config.b)?
    } else {
        let stats_ids: Vec<usize> = match config.idf_scope {
            IdfScope::EpochPool => pool_ids.clone(),
            IdfScope::ReservedPool => reserved.to_vec(),
            IdfScope::Corpus => (0..corpus.len()).collect(),
        };
        let texts: Vec<(usize, Cow<str>)> = corpus
            .select(&stats_ids)?
            .into_iter()
            .map(|s| (s.id, source.text(s)))
            .collect();
        let pool: Vec<(usize, &str)> = texts.iter().map(|(id, t)| (*id, t.as_ref())).collect();
        match index {
            Some(idx) => idx.reset_epoch(&pool)?,
            None => *index = Some(FeatureIndex::build(&pool, config.ngram_min, config.ngram_max)?),
        }
        greedy_select(&candidates, index.as_mut(), m, config.b)?
    };
    top_up(&mut picks, m, latest);
    Ok(EpochSelection {
        epoch,
        version: scores.version.clone(),
        pool_ids,
        picks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(scores: &[(usize, f64)]) -> ScoreTable {
        ScoreTable::from_s_com(ProviderVersion::new("t"), scores.iter().copied())
    }

    #[test]
    fn reserve_filters_then_truncates() {
        let t = table(&[(0, 0.5), (1, 0.9), (2, 1.2), (3, 0.7)]);
        assert_eq!(reserve_pool(&t, 2, FilterOrder::FilterFirst).unwrap(), vec![1, 3]);
        assert_eq!(reserve_pool(&t, 2, FilterOrder::TruncateFirst).unwrap(), vec![2, 1]);
        assert_eq!(reserve_pool(&t, 10, FilterOrder::FilterFirst).unwrap(), vec![1, 3, 0]);
    }

    #[test]
    fn reserve_ties_and_failures() {
        let t = table(&[(0, 0.8), (1, 0.8)]);
        assert_eq!(reserve_pool(&t, 1, FilterOrder::FilterFirst).unwrap(), vec![0]);
        let t = table(&[(0, 1.0), (1, 2.0)]);
        assert!(matches!(
            reserve_pool(&t, 1, FilterOrder::FilterFirst),
            Err(Error::NoAlignedSamples)
        ));
        let t = table(&[(0, 3.0), (1, 0.2)]);
        assert!(matches!(
            reserve_pool(&t, 1, FilterOrder::TruncateFirst),
            Err(Error::NoAlignedSamples)
        ));
    }

    #[test]
    fn greedy_single_argmax() {
        let mut idx = FeatureIndex::build(&[(0, "x y"), (1, "y z"), (2, "q r")], 1, 1).unwrap();
        let picks = greedy_select(&[(0, 0.5), (1, 0.9)], Some(&mut idx), 1, 0.1).unwrap();
        // s_div(0) = s_div(1) here; higher s_com wins
        assert_eq!(picks[0].id, 1);
        assert_eq!(picks[0].rank, 1);
    }

    #[test]
    fn greedy_zero_diversity_orders_by_complexity() {
        let mut idx = FeatureIndex::build(&[(0, "same"), (1, "same"), (2, "same")], 1, 1).unwrap();
        let picks = greedy_select(&[(0, 0.2), (1, 0.7), (2, 0.4)], Some(&mut idx), 3, 0.1).unwrap();
        assert_eq!(picks.iter().map(|p| p.id).collect::<Vec<_>>(), vec![1, 2, 0]);
        assert!(picks.iter().all(|p| p.s_combined == Some(0.0)));
    }

    #[test]
    fn greedy_without_index_is_complexity_order() {
        let picks = greedy_select(&[(4, 0.3), (2, 0.3), (9, 0.8)], None, 2, 0.1).unwrap();
        assert_eq!(picks.iter().map(|p| p.id).collect::<Vec<_>>(), vec![9, 2]);
        assert_eq!(picks[0].s_div, None);
    }

    #[test]
    fn greedy_rejects_unindexed_or_duplicate() {
        let mut idx = FeatureIndex::build(&[(0, "a")], 1, 1).unwrap();
        assert!(greedy_select(&[(5, 0.5)], Some(&mut idx), 1, 0.1).is_err());
        assert!(greedy_select(&[(0, 0.5), (0, 0.4)], None, 1, 0.1).is_err());
    }

    #[test]
    fn top_up_from_unaligned_ascending() {
        let mut picks = greedy_select(&[(0, 0.5)], None, 3, 0.1).unwrap();
        let latest = BTreeMap::from([(0, 0.5), (1, 1.7), (2, 1.1), (3, 1.1), (4, 0.3)]);
        assert_eq!(top_up(&mut picks, 3, &latest), 2);
        assert_eq!(picks.iter().map(|p| p.id).collect::<Vec<_>>(), vec![0, 2, 3]);
        assert!(picks[1].shortfall && picks[2].shortfall && !picks[0].shortfall);
        assert_eq!(picks[2].rank, 3);
    }

    #[test]
    fn size_resolution() {
        let mut c = SelectionConfig::default();
        assert_eq!(c.resolve_m(100).unwrap(), 5);
        assert_eq!(c.reserve_size(100).unwrap(), 15);
        assert_eq!(c.resolve_m(10).unwrap(), 1);
        c.size = SelectionSize::Count(4);
        assert_eq!(c.reserve_size(10).unwrap(), 10);
        assert!(c.resolve_m(3).is_err());
        c.a = 1.0;
        assert!(c.validate().is_err());
        c.a = 2.5;
        c.b = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_serde_shape() {
        let c = SelectionConfig::default();
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["size"], serde_json::json!({"fraction": 0.05}));
        assert_eq!(v["diversity"], "o");
        assert_eq!(v["filter_order"], "filter-first");
        let back: SelectionConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }
}
