use std::collections::HashMap;

use mtmono_core::align::{ibm1_train, ibm1_train_with, mean, select_by_monotonicity, select_random, tau_distances};
use mtmono_core::corpus::{ParallelCorpus, SentencePair};
use mtmono_core::toyworld::{make_toy_world, ToyWorldSpec};

fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
    ParallelCorpus::new(pairs.iter().map(|(s, t)| SentencePair::natural(s, t).unwrap()).collect())
}

/// From a uniform table every source position (NULL included) gets the
/// same posterior 1/(l+1), so one EM step yields co-occurrence counts
/// weighted by 1/(l+1), normalised per source word.
fn one_step_oracle(c: &ParallelCorpus) -> HashMap<(Option<String>, String), f64> {
    let mut counts: HashMap<(Option<String>, String), f64> = HashMap::new();
    for p in c.iter() {
        let w = 1.0 / (p.source.len() + 1) as f64;
        for f in p.target.words() {
            *counts.entry((None, f.to_string())).or_default() += w;
            for e in p.source.words() {
                *counts.entry((Some(e.to_string()), f.to_string())).or_default() += w;
            }
        }
    }
    let mut totals: HashMap<Option<String>, f64> = HashMap::new();
    for ((e, _), v) in &counts {
        *totals.entry(e.clone()).or_default() += v;
    }
    counts.into_iter().map(|((e, f), v)| ((e.clone(), f), v / totals[&e])).collect()
}

#[test]
fn one_em_step_from_uniform_matches_hand_counts() {
    let c = corpus(&[("a b", "x y"), ("a", "x"), ("b c a", "z y y")]);
    let table = ibm1_train(&c, 1).unwrap().table;
    let want = one_step_oracle(&c);
    for ((e, f), p) in &want {
        let got = table.prob(e.as_deref(), f);
        assert!((got - p).abs() < 1e-12, "t({f}|{e:?}) = {got}, expected {p}");
    }
}

#[test]
fn textbook_two_pair_example() {
    let c = corpus(&[("a", "x"), ("a b", "x y")]);
    let out = ibm1_train_with(&c, 20, false).unwrap();
    assert!(out.table.prob(Some("a"), "x") > 0.99);
    assert!(out.table.prob(Some("b"), "y") > out.table.prob(Some("b"), "x"));
    // First iteration by hand: t(x|a) = (1 + 1/2) / (1 + 1/2 + 1/2) = 0.75.
    let one = ibm1_train_with(&c, 1, false).unwrap();
    assert!((one.table.prob(Some("a"), "x") - 0.75).abs() < 1e-12);
}

#[test]
fn monotone_selection_beats_random_on_tau() {
    let spec = ToyWorldSpec {
        out_train: 600,
        ..ToyWorldSpec::default()
    };
    let b = make_toy_world(&spec).unwrap();
    let table = ibm1_train(&b.out_train, 10).unwrap().table;
    let budget = b.out_train.source_tokens() / 3;
    let mono = select_by_monotonicity(&b.out_train, &table, budget).unwrap();
    let rand = select_random(&b.out_train, budget, 3).unwrap();
    let (tm, tr) = (mean(&tau_distances(&table, &mono)), mean(&tau_distances(&table, &rand)));
    assert!(tm <= tr, "monotone {tm} vs random {tr}");
}
