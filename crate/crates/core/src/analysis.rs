//! Post-hoc analysis of selected subsets: response lengths, overlap, score distributions.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::baselines::word_count;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::selector::RunState;

pub const HISTOGRAM_BINS: usize = 20;

const QUARTILE_CONVENTION: &str = "inclusive linear interpolation: value at rank (n-1)*p between order statistics";
const OVERLAP_NOTE: &str = "overlap values depend on the model driving selection; published figures obtained with \
     large fine-tuned models are context, not reproduction targets";

/// `|A ∩ B| / |A ∪ B|`. Two empty sets are defined as identical.
pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    if a.is_empty() && b.is_empty() {
        warn!("jaccard of two empty sets; returning 1");
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Quantile of sorted data by linear interpolation between order statistics at `(n-1)*p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl LengthStats {
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::Selection("length statistics of an empty subset".into()));
        }
        let mut v: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
        v.sort_by(f64::total_cmp);
        Ok(LengthStats {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Response word-count statistics over `ids`.
pub fn length_stats(corpus: &Corpus, ids: &[usize]) -> Result<LengthStats> {
    let lengths: Vec<usize> = corpus.select(ids)?.iter().map(|s| word_count(&s.response)).collect();
    LengthStats::from_lengths(&lengths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl OverlapMatrix {
    pub fn new(subsets: &[(String, BTreeSet<usize>)]) -> Self {
        let n = subsets.len();
        let mut values = vec![vec![1.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = jaccard(&subsets[i].1, &subsets[j].1);
                values[i][j] = v;
                values[j][i] = v;
            }
        }
        OverlapMatrix {
            labels: subsets.iter().map(|(l, _)| l.clone()).collect(),
            values,
        }
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.values[i][j])
    }
}

/// Uniform bins over `[lo, hi]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `None` for an empty sample. A constant sample puts everything in the first bin.
    pub fn new(values: &[f64], bins: usize) -> Option<Self> {
        let lo = values.iter().copied().reduce(f64::min)?;
        let hi = values.iter().copied().reduce(f64::max)?;
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Some(Histogram { lo, hi, counts })
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub quartiles: String,
    pub length_unit: String,
    pub histogram_bins: usize,
    pub overlap_note: String,
    pub data: String,
    pub m: usize,
    pub reserve_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub version: String,
    pub selected: usize,
    pub shortfall: usize,
    pub pool: usize,
    pub lengths: LengthStats,
    pub s_com: Option<Histogram>,
    pub s_div: Option<Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub name: String,
    pub lengths: LengthStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metadata: ReportMetadata,
    pub corpus: LengthStats,
    pub epochs: Vec<EpochReport>,
    pub epoch_overlap: OverlapMatrix,
    pub extras: Vec<SubsetReport>,
    /// Epochs and extra subsets together; absent when no extras were given.
    pub cross_overlap: Option<OverlapMatrix>,
}

pub fn epoch_label(epoch: usize) -> String {
    format!("epoch_{epoch}")
}

/// Builds the report for a run with at least one completed epoch. `extras` are named id lists,
/// e.g. manifests of baseline strategies over the same corpus.
pub fn build_report(state: &RunState, corpus: &Corpus, extras: &[(String, Vec<usize>)]) -> Result<Report> {
    if state.completed_epochs.is_empty() {
        return Err(Error::Selection("the run has no completed epochs".into()));
    }
    if state.data.fingerprint != corpus.fingerprint() {
        return Err(Error::Config(format!(
            "corpus does not match the run's dataset {}",
            state.data.path.display()
        )));
    }
    let all: Vec<usize> = (0..corpus.len()).collect();
    let mut epochs = Vec::new();
    let mut epoch_sets = Vec::new();
    for rec in &state.completed_epochs {
        let sel = &rec.selection;
        let ids = sel.ids();
        let s_com: Vec<f64> = sel.picks.iter().filter_map(|p| p.s_com).collect();
        let s_div: Vec<f64> = sel.picks.iter().filter_map(|p| p.s_div).collect();
        epochs.push(EpochReport {
            epoch: sel.epoch,
            version: sel.version.to_string(),
            selected: ids.len(),
            shortfall: sel.shortfall(),
            pool: sel.pool_ids.len(),
            lengths: length_stats(corpus, &ids)?,
            s_com: Histogram::new(&s_com, HISTOGRAM_BINS),
            s_div: Histogram::new(&s_div, HISTOGRAM_BINS),
        });
        epoch_sets.push((epoch_label(sel.epoch), ids.into_iter().collect::<BTreeSet<_>>()));
    }

    let mut extra_reports = Vec::new();
    let mut cross = epoch_sets.clone();
    for (name, ids) in extras {
        if cross.iter().any(|(l, _)| l == name) {
            return Err(Error::Config(format!("duplicate subset name `{name}`")));
        }
        extra_reports.push(SubsetReport {
            name: name.clone(),
            lengths: length_stats(corpus, ids)?,
        });
        cross.push((name.clone(), ids.iter().copied().collect()));
    }

    Ok(Report {
        metadata: ReportMetadata {
            quartiles: QUARTILE_CONVENTION.into(),
            length_unit: "whitespace-separated words of the response".into(),
            histogram_bins: HISTOGRAM_BINS,
            overlap_note: OVERLAP_NOTE.into(),
            data: state.data.path.display().to_string(),
            m: state.m,
            reserve_size: state.reserve_size,
        },
        corpus: length_stats(corpus, &all)?,
        epochs,
        epoch_overlap: OverlapMatrix::new(&epoch_sets),
        extras: extra_reports,
        cross_overlap: (!extras.is_empty()).then(|| OverlapMatrix::new(&cross)),
    })
}

impl Report {
    /// Long-format CSV: `section,subject,key,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,subject,key,value\n");
        let mut row = |section: &str, subject: &str, key: &str, value: String| {
            let _ = writeln!(out, "{section},{},{},{value}", csv_field(subject), csv_field(key));
        };
        let mut lengths = |subject: &str, l: &LengthStats| {
            for (k, v) in [
                ("count", l.count as f64),
                ("mean", l.mean),
                ("min", l.min),
                ("q1", l.q1),
                ("median", l.median),
                ("q3", l.q3),
                ("max", l.max),
            ] {
                row("length", subject, k, v.to_string());
            }
        };
        lengths("corpus", &self.corpus);
        for e in &self.epochs {
            lengths(&epoch_label(e.epoch), &e.lengths);
        }
        for x in &self.extras {
            lengths(&x.name, &x.lengths);
        }
        let mut row = |section: &str, subject: &str, key: &str, value: String| {
            let _ = writeln!(out, "{section},{},{},{value}", csv_field(subject), csv_field(key));
        };
        for e in &self.epochs {
            for (name, h) in [("s_com", &e.s_com), ("s_div", &e.s_div)] {
                if let Some(h) = h {
                    let edges = h.edges();
                    for (i, c) in h.counts.iter().enumerate() {
                        row(
                            &format!("{name}_hist"),
                            &epoch_label(e.epoch),
                            &format!("[{}:{}]", edges[i], edges[i + 1]),
                            c.to_string(),
                        );
                    }
                }
            }
        }
        let matrix = self.cross_overlap.as_ref().unwrap_or(&self.epoch_overlap);
        for (i, a) in matrix.labels.iter().enumerate() {
            for (j, b) in matrix.labels.iter().enumerate() {
                row("overlap", a, b, matrix.values[i][j].to_string());
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[usize]) -> BTreeSet<usize> {
        ids.iter().copied().collect()
    }

    #[test]
    fn jaccard_examples() {
        assert!((jaccard(&set(&[1, 2]), &set(&[2, 3])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&set(&[4, 5]), &set(&[5, 4])), 1.0);
        assert_eq!(jaccard(&set(&[1]), &set(&[2])), 0.0);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 1.0);
        assert_eq!(jaccard(&set(&[1]), &set(&[])), 0.0);
    }

    #[test]
    fn length_examples() {
        let s = LengthStats::from_lengths(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        let s = LengthStats::from_lengths(&[7]).unwrap();
        assert_eq!([s.mean, s.min, s.q1, s.median, s.q3, s.max], [7.0; 6]);
        assert_eq!(LengthStats::from_lengths(&[1, 100]).unwrap().mean, 50.5);
        assert!(LengthStats::from_lengths(&[]).is_err());
        // numpy.percentile([1, 2, 3, 4], [25, 50, 75]) with the default method
        let s = LengthStats::from_lengths(&[4, 1, 3, 2]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
    }

    #[test]
    fn length_stats_uses_words() {
        let c = Corpus::from_pairs([("a", "one two  three"), ("b", "x")]).unwrap();
        let s = length_stats(&c, &[0, 1]).unwrap();
        assert_eq!((s.min, s.max, s.count), (1.0, 3.0, 2));
        assert!(length_stats(&c, &[]).is_err());
        assert!(length_stats(&c, &[9]).is_err());
    }

    #[test]
    fn overlap_shape() {
        let m = OverlapMatrix::new(&[
            ("a".into(), set(&[1, 2])),
            ("b".into(), set(&[2, 3])),
            ("c".into(), set(&[9])),
        ]);
        for i in 0..3 {
            assert_eq!(m.values[i][i], 1.0);
            for j in 0..3 {
                assert_eq!(m.values[i][j], m.values[j][i]);
            }
        }
        assert_eq!(m.get("a", "c"), Some(0.0));
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::new(&[0.0, 0.5, 1.0, 0.26], 4).unwrap();
        assert_eq!(h.counts, vec![1, 1, 1, 1]);
        assert_eq!(h.edges(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let h = Histogram::new(&[2.0, 2.0], 20).unwrap();
        assert_eq!(h.counts[0], 2);
        assert!(Histogram::new(&[], 20).is_none());
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
