mod common;

use common::{fixture, load, rel_close, toy_spec};
use datasift::complexity::{ifd, perplexity, score_pool};
use datasift::provider::LogProbProvider;
use datasift::selector::{reserve_pool, FilterOrder};
use datasift::{Error, Provider, Template, ToyLm};
use serde_json::Value;

fn golden(name: &str) -> Value {
    let text = std::fs::read_to_string(fixture(&format!("golden/scores_{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn check_against_reference(name: &str) {
    let corpus = load(&format!("{name}.jsonl"));
    let template = Template::default();
    let lm = ToyLm::from_spec(&toy_spec(), &corpus, &template).unwrap();
    let expected = golden(name);
    assert_eq!(lm.vocab_size() as u64, expected["vocab_size"].as_u64().unwrap());

    let pool: Vec<_> = corpus.samples().iter().collect();
    let scoring = score_pool(&pool, &lm, &template).unwrap();
    let rows = expected["scores"].as_array().unwrap();
    assert_eq!(scoring.table.len(), rows.len());
    for row in rows {
        let id = row["id"].as_u64().unwrap() as usize;
        let got = scoring.table.get(id).unwrap();
        for (field, value) in [
            ("s_com", got.s_com),
            ("ppl_prior", got.ppl_prior),
            ("ppl_cond", got.ppl_cond),
        ] {
            let want = row[field].as_f64().unwrap();
            assert!(
                rel_close(value, want, 1e-9),
                "{name} id {id} {field}: {value} vs {want}"
            );
        }
    }
}

#[test]
fn ten_sample_fixture_matches_reference() {
    check_against_reference("corpus_10");
}

#[test]
fn hundred_sample_fixture_matches_reference() {
    check_against_reference("corpus_100");
}

#[test]
fn untrained_model_is_context_blind() {
    let corpus = load("corpus_10.jsonl");
    let template = Template::default();
    let texts = corpus
        .samples()
        .iter()
        .flat_map(|s| [s.instruction.as_str(), s.response.as_str()]);
    let lm = ToyLm::new(texts, 0.1, [0.2, 0.3, 0.5]).unwrap();
    let pool: Vec<_> = corpus.samples().iter().collect();
    let scoring = score_pool(&pool, &lm, &template).unwrap();
    for s in scoring.table.entries.values() {
        assert_eq!(s.s_com, 1.0);
    }
    assert!(matches!(
        reserve_pool(&scoring.table, 5, FilterOrder::FilterFirst),
        Err(Error::NoAlignedSamples)
    ));
}

#[test]
fn single_sample_pool_is_the_composition() {
    let corpus = load("corpus_10.jsonl");
    let template = Template::default();
    let lm = ToyLm::from_spec(&toy_spec(), &corpus, &template).unwrap();
    let s = &corpus.samples()[3];
    let scoring = score_pool(&[s], &lm, &template).unwrap();
    let prior = lm.logprobs("", &s.response).unwrap();
    let cond = lm.logprobs(&template.render(s), &s.response).unwrap();
    let want = ifd(perplexity(&prior), perplexity(&cond)).unwrap();
    assert_eq!(scoring.table.s_com(s.id), Some(want));
    assert_eq!((scoring.scored, scoring.calls), (1, 2));
}

#[test]
fn training_on_a_sample_raises_its_likelihood() {
    let corpus = load("corpus_100.jsonl");
    let template = Template::default();
    let base = ToyLm::from_spec(&toy_spec(), &corpus, &template).unwrap();
    for s in corpus.samples() {
        let ctx = template.render(s);
        let before: f64 = base.logprobs(&ctx, &s.response).unwrap().values().iter().sum();
        let mut lm = base.clone();
        lm.advance(&[s], &template).unwrap();
        let after: f64 = lm.logprobs(&ctx, &s.response).unwrap().values().iter().sum();
        assert!(after > before, "sample {}: {after} <= {before}", s.id);
        assert_ne!(lm.version(), base.version());
    }
}

#[test]
fn equal_versions_score_identically() {
    let corpus = load("corpus_10.jsonl");
    let template = Template::default();
    let a = ToyLm::from_spec(&toy_spec(), &corpus, &template).unwrap();
    let b = ToyLm::from_spec(&toy_spec(), &corpus, &template).unwrap();
    assert_eq!(a.version(), b.version());
    for s in corpus.samples() {
        assert_eq!(a.logprobs("", &s.response), b.logprobs("", &s.response));
    }
}
