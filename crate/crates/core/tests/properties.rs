use std::collections::BTreeSet;

use proptest::collection::{btree_set, vec};
use proptest::prelude::*;

use datasift::analysis::{jaccard, LengthStats, OverlapMatrix};
use datasift::baselines::{select_ifd_only, select_longest, select_random, select_with_source};
use datasift::diversity::extract_features;
use datasift::*;

fn words() -> impl Strategy<Value = String> {
    vec("[a-e]{1,3}", 1..12).prop_map(|w| w.join(" "))
}

fn corpus_and_m() -> impl Strategy<Value = (Vec<String>, usize)> {
    vec(words(), 1..40).prop_flat_map(|r| {
        let n = r.len();
        (Just(r), 1..=n)
    })
}

fn corpus(responses: &[String]) -> Corpus {
    Corpus::from_pairs(responses.iter().enumerate().map(|(i, r)| (format!("q{i}"), r.clone()))).unwrap()
}

fn ids(picks: &[Pick]) -> Vec<usize> {
    picks.iter().map(|p| p.id).collect()
}

fn distinct(v: &[usize]) -> bool {
    v.iter().collect::<BTreeSet<_>>().len() == v.len()
}

proptest! {
    #[test]
    fn jaccard_bounds_and_symmetry(a in btree_set(0usize..30, 0..20), b in btree_set(0usize..30, 0..20)) {
        let j = jaccard(&a, &b);
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j, jaccard(&b, &a));
        prop_assert_eq!(jaccard(&a, &a), 1.0);
        if !a.is_empty() && a.is_disjoint(&b) {
            prop_assert_eq!(j, 0.0);
        }
    }

    #[test]
    fn length_stats_are_ordered(lengths in vec(0usize..500, 1..60)) {
        let s = LengthStats::from_lengths(&lengths).unwrap();
        prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
        prop_assert!(s.min <= s.mean && s.mean <= s.max);
        prop_assert_eq!(s.count, lengths.len());
    }

    #[test]
    fn overlap_matrix_is_symmetric(sets in vec(btree_set(0usize..20, 0..10), 1..5)) {
        let named: Vec<(String, BTreeSet<usize>)> =
            sets.into_iter().enumerate().map(|(i, s)| (format!("s{i}"), s)).collect();
        let m = OverlapMatrix::new(&named);
        for (a, _) in &named {
            prop_assert_eq!(m.get(a, a), Some(1.0));
            for (b, _) in &named {
                prop_assert_eq!(m.get(a, b), m.get(b, a));
            }
        }
    }

    #[test]
    fn strategies_return_m_unique_ids((responses, m) in corpus_and_m(), seed in 0u64..1000) {
        let c = corpus(&responses);
        let longest = ids(&select_longest(&c, m).unwrap().picks);
        let random = ids(&select_random(&c, m, seed).unwrap().picks);
        for v in [&longest, &random] {
            prop_assert_eq!(v.len(), m);
            prop_assert!(distinct(v));
            prop_assert!(v.iter().all(|&id| id < c.len()));
        }
        let table = ScoreTable::from_s_com(
            ProviderVersion::new("p"),
            (0..c.len()).map(|i| (i, 0.2 + 1.2 * ((i * 7919 + seed as usize) % 97) as f64 / 97.0)),
        );
        if table.entries.values().any(|s| s.s_com < 1.0) {
            let ifd = ids(&select_ifd_only(&table, m).unwrap().picks);
            prop_assert_eq!(ifd.len(), m);
            prop_assert!(distinct(&ifd));
            let config = SelectionConfig { size: SelectionSize::Count(m), ..SelectionConfig::default() };
            for source in [DiversitySource::Instruction, DiversitySource::Response, DiversitySource::Both] {
                let picked = ids(&select_with_source(&c, &table, &config, source).unwrap().picks);
                prop_assert_eq!(picked.len(), m);
                prop_assert!(distinct(&picked));
            }
        }
    }

    #[test]
    fn features_ignore_whitespace_layout(tokens in vec("[a-z]{1,4}", 1..15), seps in vec(prop_oneof![Just(" "), Just("  "), Just("\t"), Just("\n"), Just(" \r\n ")], 15)) {
        let single = tokens.join(" ");
        let mut messy = String::from("  ");
        for (i, t) in tokens.iter().enumerate() {
            messy.push_str(t);
            messy.push_str(seps[i % seps.len()]);
        }
        prop_assert_eq!(extract_features(&single, 1, 3).unwrap(), extract_features(&messy, 1, 3).unwrap());
        let a = Corpus::from_pairs([("q", single.clone()), ("r", "x".to_string())]).unwrap();
        let b = Corpus::from_pairs([("q", messy.clone()), ("r", "x".to_string())]).unwrap();
        prop_assert_eq!(ids(&select_longest(&a, 1).unwrap().picks), ids(&select_longest(&b, 1).unwrap().picks));
    }

    #[test]
    fn corpus_round_trips_through_jsonl(pairs in vec(("\\PC{0,12}", "\\PC{0,12}[a-z]"), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut text = String::new();
        for (i, r) in &pairs {
            text.push_str(&serde_json::json!({"instruction": i, "response": r}).to_string());
            text.push('\n');
        }
        std::fs::write(&path, text).unwrap();
        let loaded = Corpus::load(&path, Format::Plain).unwrap();
        prop_assert_eq!(loaded.len(), pairs.len());
        for (s, (i, r)) in loaded.samples().iter().zip(&pairs) {
            prop_assert_eq!(&s.instruction, i);
            prop_assert_eq!(&s.response, r);
        }
        prop_assert_eq!(loaded.fingerprint(), Corpus::from_pairs(pairs.clone()).unwrap().fingerprint());
    }

    #[test]
    fn s_div_is_non_negative_and_decays(texts in vec(words(), 1..25), picks in vec(0usize..25, 0..8), b in prop_oneof![Just(0.0), Just(0.1), Just(0.5), Just(0.9)]) {
        let pool: Vec<(usize, &str)> = texts.iter().enumerate().map(|(i, t)| (i, t.as_str())).collect();
        let mut idx = FeatureIndex::build(&pool, 1, 2).unwrap();
        let mut before: Vec<f64> = (0..pool.len()).map(|i| idx.s_div(i).unwrap()).collect();
        prop_assert!(before.iter().all(|&s| s >= 0.0));
        for p in picks.into_iter().filter(|&p| p < pool.len()) {
            idx.apply_decay(p, b).unwrap();
            let after: Vec<f64> = (0..pool.len()).map(|i| idx.s_div(i).unwrap()).collect();
            for (x, y) in before.iter().zip(&after) {
                prop_assert!(*y >= 0.0);
                prop_assert!(*y <= *x + 1e-12);
            }
            before = after;
        }
    }
}
