use std::collections::{BTreeSet, HashMap};

use mtmono_core::align::{ibm1_train, kendall_tau_distance, select_by_monotonicity, select_random, Alignment};
use mtmono_core::corpus::{
    load_parallel, mix_equal, read_corpus, save_corpus, save_parallel, Corpus, ParallelCorpus, Provenance, Sentence,
    SentencePair, Vocabulary, DEFAULT_MARKER, DUMMY_STR,
};
use mtmono_core::gan::{gate, GanSpec};
use mtmono_core::stats::{token_type_stats, vocab_growth};
use mtmono_core::synth::{add_noise, make_copy_dummies, make_copy_marked, NoiseSpec};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["a", "b", "c", "dd", "e", "ff", "g", "h@@", "x", "yz"]).prop_map(str::to_string)
}

fn sentence(max: usize) -> impl Strategy<Value = Sentence> {
    prop::collection::vec(word(), 1..max).prop_map(|w| Sentence::from_words(&w).unwrap())
}

fn corpus(max_len: usize) -> impl Strategy<Value = Corpus> {
    prop::collection::vec(sentence(max_len), 1..12).prop_map(Corpus::new)
}

fn provenance() -> impl Strategy<Value = Provenance> {
    prop_oneof![
        Just(Provenance::Natural),
        Just(Provenance::Copy),
        Just(Provenance::CopyMarked),
        Just(Provenance::CopyDummies),
        Just(Provenance::BackTranslated("bt-1".into())),
        Just(Provenance::ForwardTranslated("ft".into())),
        Just(Provenance::Noised(Box::new(Provenance::CopyMarked))),
    ]
}

fn parallel(max_len: usize) -> impl Strategy<Value = ParallelCorpus> {
    prop::collection::vec((sentence(max_len), sentence(max_len), provenance()), 1..12)
        .prop_map(|v| ParallelCorpus::new(v.into_iter().map(|(s, t, p)| SentencePair::new(s, t, p)).collect()))
}

/// Pairwise definition: a pair of links is discordant when target order and
/// source order disagree.
fn tau_oracle(links: &[(usize, usize)]) -> f64 {
    let n = links.len();
    if n < 2 {
        return 0.0;
    }
    let mut d = 0;
    for a in 0..n {
        for b in 0..n {
            let (sa, ta) = links[a];
            let (sb, tb) = links[b];
            if ta < tb && sa > sb {
                d += 1;
            }
        }
    }
    d as f64 / (n * (n - 1) / 2) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parallel_corpus_survives_save_and_load(c in parallel(8)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tsv");
        save_parallel(&c, &p).unwrap();
        prop_assert_eq!(load_parallel(&p).unwrap(), c);
    }

    #[test]
    fn monolingual_corpus_survives_save_and_load(c in corpus(8)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        save_corpus(&c, &p).unwrap();
        prop_assert_eq!(read_corpus(&p, DEFAULT_MARKER).unwrap(), c);
    }

    #[test]
    fn mixing_takes_every_in_domain_pair_and_as_many_out(n_in in 0usize..10, extra in 0usize..10, seed in any::<u64>()) {
        let mk = |n: usize, p: Provenance, w: &str| ParallelCorpus::new(
            (0..n).map(|i| SentencePair::new(
                Sentence::from_words(&[format!("{w}{i}")]).unwrap(),
                Sentence::from_words(&["t"]).unwrap(),
                p.clone(),
            )).collect());
        let inn = mk(n_in, Provenance::CopyMarked, "i");
        let out = mk(n_in + extra, Provenance::Natural, "o");
        let m = mix_equal(&inn, &out, seed).unwrap();
        prop_assert_eq!(m.len(), 2 * n_in);
        prop_assert_eq!(m.iter().filter(|p| p.provenance.is_natural()).count(), n_in);
        let ins: BTreeSet<String> = m.iter().filter(|p| !p.provenance.is_natural()).map(|p| p.source.to_string()).collect();
        prop_assert_eq!(ins.len(), n_in);
        let outs: BTreeSet<String> = m.iter().filter(|p| p.provenance.is_natural()).map(|p| p.source.to_string()).collect();
        prop_assert_eq!(outs.len(), n_in, "out-of-domain pairs are drawn without replacement");
        prop_assert_eq!(mix_equal(&inn, &out, seed).unwrap(), m);
    }

    #[test]
    fn noise_moves_no_survivor_more_than_k(len in 1usize..20, p_drop in 0.0f64..1.0, k in 0usize..5, seed in any::<u64>(), index in any::<u64>()) {
        let words: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
        let s = Sentence::from_words(&words).unwrap();
        let out = add_noise(&s, &NoiseSpec { p_drop, k, seed }, index);
        prop_assert!(!out.is_empty());
        let orig: Vec<usize> = out.words().map(|w| w[1..].parse().unwrap()).collect();
        let mut kept = orig.clone();
        kept.sort_unstable();
        kept.dedup();
        prop_assert_eq!(kept.len(), orig.len(), "no token duplicated");
        for (j, o) in orig.iter().enumerate() {
            let rank = kept.binary_search(o).unwrap();
            prop_assert!(j.abs_diff(rank) <= k, "w{} moved from {} to {}", o, rank, j);
        }
        prop_assert_eq!(add_noise(&s, &NoiseSpec { p_drop, k, seed }, index), out);
    }

    #[test]
    fn copy_marked_prefixes_and_extension_is_a_set(c in corpus(8)) {
        let vocab = Vocabulary::build(std::iter::empty(), 1, DEFAULT_MARKER);
        let (pc, ext) = make_copy_marked(&c, "@fr@", &vocab).unwrap();
        prop_assert_eq!(pc.len(), c.len());
        for (p, t) in pc.iter().zip(c.iter()) {
            prop_assert_eq!(&p.target, t);
            let want: Vec<String> = t.words().map(|w| format!("@fr@{w}")).collect();
            let got: Vec<&str> = p.source.words().collect();
            prop_assert_eq!(got, want);
        }
        let mut doubled = c.sentences.clone();
        doubled.extend(c.sentences.iter().cloned());
        let (_, ext2) = make_copy_marked(&Corpus::new(doubled), "@fr@", &vocab).unwrap();
        prop_assert_eq!(&ext2, &ext);
        let distinct: BTreeSet<&str> = c.iter().flat_map(|s| s.words()).collect();
        prop_assert_eq!(ext.len(), distinct.len());
    }

    #[test]
    fn dummies_keep_lengths_and_have_one_type(c in corpus(10)) {
        let pc = make_copy_dummies(&c);
        for (p, t) in pc.iter().zip(c.iter()) {
            prop_assert_eq!(p.source.len(), t.len());
        }
        let types: BTreeSet<&str> = pc.iter().flat_map(|p| p.source.words()).collect();
        prop_assert_eq!(types.into_iter().collect::<Vec<_>>(), vec![DUMMY_STR]);
    }

    #[test]
    fn ibm1_likelihood_never_decreases(c in parallel(6)) {
        let out = ibm1_train(&c, 10).unwrap();
        for w in out.log_likelihoods.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "{:?}", out.log_likelihoods);
        }
        let srcs: BTreeSet<&str> = c.iter().flat_map(|p| p.source.words()).collect();
        for s in srcs {
            prop_assert!((out.table.row_sum(Some(s)) - 1.0).abs() < 1e-9);
        }
        prop_assert!((out.table.row_sum(None) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tau_matches_pairwise_definition(perm in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle(), n in 0usize..8, gaps in prop::collection::vec(0usize..3, 8)) {
        let mut t = 0;
        let links: Vec<(usize, usize)> = perm.iter().take(n).zip(&gaps).map(|(&s, &g)| { t += g + 1; (s, t) }).collect();
        let d = kendall_tau_distance(&Alignment { links: links.clone() });
        prop_assert!((d - tau_oracle(&links)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn monotone_selection_is_a_prefix_across_budgets(c in parallel(6), a in 0usize..60, b in 0usize..60) {
        let table = ibm1_train(&c, 3).unwrap().table;
        let total = c.source_tokens();
        let (lo, hi) = (a.min(b).min(total), a.max(b).min(total));
        let small = select_by_monotonicity(&c, &table, lo).unwrap();
        let big = select_by_monotonicity(&c, &table, hi).unwrap();
        prop_assert!(small.len() <= big.len());
        prop_assert_eq!(&big.pairs[..small.len()], &small.pairs[..]);
        prop_assert!(small.source_tokens() >= lo);
        if lo == 0 {
            prop_assert!(small.is_empty());
        }
        prop_assert_eq!(select_random(&c, lo, 5).unwrap(), select_random(&c, lo, 5).unwrap());
    }

    #[test]
    fn growth_curve_is_monotone_and_ends_at_type_count(c in corpus(8), step in 1usize..5) {
        let g = vocab_growth(&c, step).unwrap();
        for w in g.points.windows(2) {
            prop_assert!(w[0].0 < w[1].0 && w[0].1 <= w[1].1);
        }
        let s = token_type_stats(&c, 3);
        prop_assert_eq!(g.points.last().copied(), Some((c.len(), s.types)));
        prop_assert!(s.hapax <= s.types && s.types <= s.tokens);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        c.iter().flat_map(|x| x.words()).for_each(|w| *counts.entry(w).or_default() += 1);
        prop_assert_eq!(s.tokens, counts.values().sum::<usize>());
    }

    #[test]
    fn gate_opens_exactly_by_thresholds(a in 0.0f64..=1.0) {
        let spec = GanSpec::default();
        let g = gate(a, &spec);
        prop_assert_eq!(g.update_d, a <= 0.99);
        prop_assert_eq!(g.update_g, a > 0.75);
    }
}

#[test]
fn gate_boundaries() {
    let spec = GanSpec::default();
    for (a, d, g) in [(0.75, true, false), (0.7500001, true, true), (0.99, true, true), (0.9900001, false, true)] {
        let r = gate(a, &spec);
        assert_eq!((r.update_d, r.update_g), (d, g), "a = {a}");
    }
}
