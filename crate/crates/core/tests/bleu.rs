mod common;

use mtmono_core::corpus::{Corpus, Sentence};
use mtmono_core::eval::{corpus_bleu, Smoothing};
use proptest::prelude::*;

#[test]
fn matches_sacrebleu_fixtures() {
    let (diff, seed, n) = common::bleu_fixture_max_diff();
    assert_eq!(n, 20);
    assert!(diff < 0.01, "fixture {seed} differs by {diff}");
}

#[test]
fn fixture_counts_match_exactly() {
    let v: serde_json::Value = serde_json::from_str(include_str!("fixtures/bleu_sacrebleu.json")).unwrap();
    for f in v["fixtures"].as_array().unwrap() {
        let c = |k: &str| -> Corpus {
            let l: Vec<&str> = f[k].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
            Corpus::from_lines(&l).unwrap()
        };
        let b = corpus_bleu(&c("hypotheses"), &c("references"), Smoothing::None).unwrap();
        let want = |k: &str| -> Vec<usize> { f[k].as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect() };
        assert_eq!(b.matches.to_vec(), want("counts"));
        assert_eq!(b.totals.to_vec(), want("totals"));
        assert_eq!(b.hyp_len as u64, f["sys_len"].as_u64().unwrap());
        assert_eq!(b.ref_len as u64, f["ref_len"].as_u64().unwrap());
    }
}

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    let word = prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]);
    let sent = prop::collection::vec(word, 1..12).prop_map(|w| Sentence::from_words(&w).unwrap());
    prop::collection::vec(sent, 1..6).prop_map(Corpus::new)
}

fn sized(n: usize) -> impl Strategy<Value = Corpus> {
    let word = prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]);
    let sent = prop::collection::vec(word, 1..12).prop_map(|w| Sentence::from_words(&w).unwrap());
    prop::collection::vec(sent, n).prop_map(Corpus::new)
}

proptest! {
    #[test]
    fn identical_output_scores_exactly_100(c in corpus_strategy()) {
        // Only corpora with at least one 4-gram can reach 100 unsmoothed.
        prop_assume!(c.iter().any(|s| s.len() >= 4));
        let b = corpus_bleu(&c, &c, Smoothing::None).unwrap();
        prop_assert_eq!(b.score, 100.0);
    }

    #[test]
    fn score_is_bounded((h, r) in (1usize..6).prop_flat_map(|n| (sized(n), sized(n)))) {
        for s in [Smoothing::None, Smoothing::AddOneOnZero] {
            let b = corpus_bleu(&h, &r, s).unwrap();
            prop_assert!((0.0..=100.0).contains(&b.score));
            prop_assert!(b.brevity_penalty <= 1.0);
        }
    }
}
