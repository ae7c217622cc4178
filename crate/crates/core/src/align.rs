//! IBM Model 1 alignment, Kendall τ monotonicity and alignment-based data
//! selection.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::rng;

/// Probability assumed for word pairs the table has never seen.
pub const PROB_FLOOR: f64 = 1e-12;

/// Source id of the empty word.
pub const NULL: usize = 0;
pub const NULL_STR: &str = "<null>";

/// Lexical translation probabilities t(target | source), NULL included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationTable {
    src_words: Vec<String>,
    tgt_words: Vec<String>,
    /// `probs[src_id]` maps target ids to probabilities.
    probs: Vec<BTreeMap<usize, f64>>,
    #[serde(skip)]
    src_index: HashMap<String, usize>,
    #[serde(skip)]
    tgt_index: HashMap<String, usize>,
}

impl TranslationTable {
    fn index(words: &[String]) -> HashMap<String, usize> {
        words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect()
    }

    fn reindex(&mut self) {
        self.src_index = Self::index(&self.src_words);
        self.tgt_index = Self::index(&self.tgt_words);
    }

    pub fn src_id(&self, w: &str) -> Option<usize> {
        self.src_index.get(w).copied()
    }

    pub fn tgt_id(&self, w: &str) -> Option<usize> {
        self.tgt_index.get(w).copied()
    }

    /// t(tgt | src) for word strings; `None` as source means NULL.
    pub fn prob(&self, src: Option<&str>, tgt: &str) -> f64 {
        let s = match src {
            None => Some(NULL),
            Some(w) => self.src_id(w),
        };
        match (s, self.tgt_id(tgt)) {
            (Some(s), Some(t)) => self.prob_ids(s, t),
            _ => PROB_FLOOR,
        }
    }

    fn prob_ids(&self, s: usize, t: usize) -> f64 {
        self.probs[s].get(&t).copied().unwrap_or(0.0).max(PROB_FLOOR)
    }

    /// Σ over observed targets of t(· | src).
    pub fn row_sum(&self, src: Option<&str>) -> f64 {
        let s = match src {
            None => NULL,
            Some(w) => match self.src_id(w) {
                Some(s) => s,
                None => return 0.0,
            },
        };
        self.probs[s].values().sum()
    }

    pub fn num_source_words(&self) -> usize {
        self.src_words.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut t: TranslationTable = serde_json::from_str(&s)?;
        t.reindex();
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ibm1Output {
    pub table: TranslationTable,
    /// Corpus log-likelihood after each iteration.
    pub log_likelihoods: Vec<f64>,
}

struct Encoded {
    src: Vec<usize>,
    tgt: Vec<usize>,
}

fn encode_pairs(corpus: &ParallelCorpus) -> (Vec<String>, Vec<String>, Vec<Encoded>) {
    let mut src_words = vec![NULL_STR.to_string()];
    let mut src_index: HashMap<String, usize> = HashMap::new();
    let mut tgt_words = Vec::new();
    let mut tgt_index: HashMap<String, usize> = HashMap::new();
    let intern = |w: &str, words: &mut Vec<String>, idx: &mut HashMap<String, usize>| -> usize {
        if let Some(&i) = idx.get(w) {
            return i;
        }
        words.push(w.to_string());
        idx.insert(w.to_string(), words.len() - 1);
        words.len() - 1
    };
    let pairs = corpus
        .iter()
        .map(|p| Encoded {
            src: p.source.words().map(|w| intern(w, &mut src_words, &mut src_index)).collect(),
            tgt: p.target.words().map(|w| intern(w, &mut tgt_words, &mut tgt_index)).collect(),
        })
        .collect();
    (src_words, tgt_words, pairs)
}

/// Expected counts and log-likelihood under `probs`.
fn e_step(probs: &[BTreeMap<usize, f64>], pairs: &[Encoded], null_word: bool) -> (Vec<BTreeMap<usize, f64>>, f64) {
    let mut counts: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); probs.len()];
    let mut ll = 0.0;
    let get = |s: usize, t: usize| probs[s].get(&t).copied().unwrap_or(0.0);
    for p in pairs {
        let l = p.src.len() as f64 + if null_word { 1.0 } else { 0.0 };
        for &f in &p.tgt {
            let mut z = get(NULL, f);
            for &e in &p.src {
                z += get(e, f);
            }
            ll += (z / l).max(f64::MIN_POSITIVE).ln();
            if z <= 0.0 {
                continue;
            }
            if null_word {
                *counts[NULL].entry(f).or_insert(0.0) += get(NULL, f) / z;
            }
            for &e in &p.src {
                *counts[e].entry(f).or_insert(0.0) += get(e, f) / z;
            }
        }
    }
    (counts, ll)
}

fn m_step(counts: Vec<BTreeMap<usize, f64>>) -> Vec<BTreeMap<usize, f64>> {
    counts
        .into_iter()
        .map(|row| {
            let total: f64 = row.values().sum();
            if total <= 0.0 {
                return BTreeMap::new();
            }
            row.into_iter().map(|(t, c)| (t, c / total)).collect()
        })
        .collect()
}

/// EM training of IBM Model 1 with a NULL source word, starting from
/// uniform t over co-occurring target words.
pub fn ibm1_train(corpus: &ParallelCorpus, iterations: usize) -> Result<Ibm1Output> {
    ibm1_train_with(corpus, iterations, true)
}

/// As [`ibm1_train`]; `null_word = false` gives the textbook model without
/// the empty source word.
pub fn ibm1_train_with(corpus: &ParallelCorpus, iterations: usize, null_word: bool) -> Result<Ibm1Output> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if iterations == 0 {
        return Err(Error::Config("IBM-1 needs at least one iteration".into()));
    }
    let (src_words, tgt_words, pairs) = encode_pairs(corpus);
    let uniform = 1.0 / tgt_words.len() as f64;
    let mut probs: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); src_words.len()];
    for p in &pairs {
        for &f in &p.tgt {
            if null_word {
                probs[NULL].insert(f, uniform);
            }
            for &e in &p.src {
                probs[e].insert(f, uniform);
            }
        }
    }
    let mut lls = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let (counts, ll) = e_step(&probs, &pairs, null_word);
        if it > 0 {
            lls.push(ll);
        }
        probs = m_step(counts);
    }
    lls.push(e_step(&probs, &pairs, null_word).1);
    let mut table = TranslationTable {
        src_words,
        tgt_words,
        probs,
        src_index: HashMap::new(),
        tgt_index: HashMap::new(),
    };
    table.reindex();
    Ok(Ibm1Output {
        table,
        log_likelihoods: lls,
    })
}

/// Word links `(src_pos, tgt_pos)`, 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub links: Vec<(usize, usize)>,
}

impl fmt::Display for Alignment {
    /// Pharaoh format: `i-j` pairs separated by spaces.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (i, j)) in self.links.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{i}-{j}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let links = s
            .split_whitespace()
            .map(|l| {
                let (a, b) = l.split_once('-').ok_or_else(|| Error::Config(format!("bad link {l:?}")))?;
                let a = a.parse().map_err(|_| Error::Config(format!("bad link {l:?}")))?;
                let b = b.parse().map_err(|_| Error::Config(format!("bad link {l:?}")))?;
                Ok((a, b))
            })
            .collect::<Result<_>>()?;
        Ok(Alignment { links })
    }
}

/// Links every target word to its most probable source word. NULL is
/// considered first, so it wins ties and NULL links are dropped; among
/// source words the smallest position wins.
pub fn viterbi_align(table: &TranslationTable, pair: &SentencePair) -> Alignment {
    let src: Vec<Option<usize>> = pair.source.words().map(|w| table.src_id(w)).collect();
    let mut links = Vec::new();
    for (j, f) in pair.target.words().enumerate() {
        let Some(f) = table.tgt_id(f) else { continue };
        let mut best = table.prob_ids(NULL, f);
        let mut arg = None;
        for (i, e) in src.iter().enumerate() {
            let p = e.map_or(PROB_FLOOR, |e| table.prob_ids(e, f));
            if p > best {
                best = p;
                arg = Some(i);
            }
        }
        if let Some(i) = arg {
            links.push((i, j));
        }
    }
    Alignment { links }
}

/// Fraction of discordant source-position pairs once links are ordered by
/// target position; 0 for fewer than two links.
pub fn kendall_tau_distance(alignment: &Alignment) -> f64 {
    let mut links = alignment.links.clone();
    let n = links.len();
    if n < 2 {
        return 0.0;
    }
    links.sort_by_key(|&(s, t)| (t, s));
    let mut discordant = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            if links[a].1 < links[b].1 && links[a].0 > links[b].0 {
                discordant += 1;
            }
        }
    }
    discordant as f64 / (n * (n - 1) / 2) as f64
}

/// τ-distance of every pair under the table's Viterbi alignments.
pub fn tau_distances(table: &TranslationTable, corpus: &ParallelCorpus) -> Vec<f64> {
    corpus.iter().map(|p| kendall_tau_distance(&viterbi_align(table, p))).collect()
}

fn check_budget(corpus: &ParallelCorpus, budget: usize) -> Result<()> {
    let available = corpus.source_tokens();
    if budget > available {
        return Err(Error::BudgetExceedsCorpus { budget, available });
    }
    Ok(())
}

fn take_budget(corpus: &ParallelCorpus, order: &[usize], budget: usize) -> ParallelCorpus {
    let mut taken = 0usize;
    let mut pairs = Vec::new();
    for &i in order {
        if taken >= budget {
            break;
        }
        taken += corpus.pairs[i].source.len();
        pairs.push(corpus.pairs[i].clone());
    }
    ParallelCorpus::new(pairs)
}

/// Most monotone pairs first (longer source, then corpus order, on ties),
/// until the source-token budget is reached.
pub fn select_by_monotonicity(corpus: &ParallelCorpus, table: &TranslationTable, budget: usize) -> Result<ParallelCorpus> {
    check_budget(corpus, budget)?;
    let tau = tau_distances(table, corpus);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| {
        tau[a]
            .total_cmp(&tau[b])
            .then(corpus.pairs[b].source.len().cmp(&corpus.pairs[a].source.len()))
            .then(a.cmp(&b))
    });
    Ok(take_budget(corpus, &order, budget))
}

/// Seeded shuffle, then the same greedy take.
pub fn select_random(corpus: &ParallelCorpus, budget: usize, seed: u64) -> Result<ParallelCorpus> {
    check_budget(corpus, budget)?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng::rng(seed));
    Ok(take_budget(corpus, &order, budget))
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new(pairs.iter().map(|(s, t)| SentencePair::natural(s, t).unwrap()).collect())
    }

    fn links(l: &[(usize, usize)]) -> Alignment {
        Alignment { links: l.to_vec() }
    }

    #[test]
    fn tau_examples() {
        assert_eq!(kendall_tau_distance(&links(&[(0, 0), (1, 1), (2, 2)])), 0.0);
        assert_eq!(kendall_tau_distance(&links(&[(2, 0), (1, 1), (0, 2)])), 1.0);
        assert!((kendall_tau_distance(&links(&[(0, 0), (2, 1), (1, 2)])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(kendall_tau_distance(&links(&[(4, 1)])), 0.0);
    }

    #[test]
    fn classic_two_pair_example_converges() {
        let c = corpus(&[("a", "x"), ("a b", "x y")]);
        let out = ibm1_train_with(&c, 20, false).unwrap();
        assert!(out.table.prob(Some("a"), "x") > 0.99);
        // With NULL, `a` and NULL co-occur identically with `x` and share it.
        let with_null = ibm1_train(&c, 20).unwrap().table;
        assert_eq!(with_null.prob(Some("a"), "x"), with_null.prob(None, "x"));
        for w in out.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn rows_are_normalised() {
        let c = corpus(&[("a b c", "x y"), ("b c", "y z w"), ("c", "w")]);
        let out = ibm1_train(&c, 5).unwrap();
        for w in [None, Some("a"), Some("b"), Some("c")] {
            assert!((out.table.row_sum(w) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn viterbi_ties_and_null() {
        let c = corpus(&[("a b", "y")]);
        let t = ibm1_train(&c, 1).unwrap().table;
        // After one step from uniform, t(y|a) = t(y|b) = t(y|NULL): NULL wins.
        assert!(viterbi_align(&t, &c.pairs[0]).links.is_empty());
        let c2 = corpus(&[("a b", "y"), ("a b", "y"), ("q", "z")]);
        let t2 = ibm1_train(&c2, 3).unwrap().table;
        assert_eq!(t2.prob(Some("a"), "y"), t2.prob(Some("b"), "y"));
        assert_eq!(viterbi_align(&t2, &c2.pairs[0]).links, vec![(0, 0)]);
    }

    #[test]
    fn pharaoh_round_trip() {
        let a = links(&[(0, 0), (2, 1)]);
        assert_eq!(a.to_string(), "0-0 2-1");
        assert_eq!("0-0 2-1".parse::<Alignment>().unwrap(), a);
    }

    #[test]
    fn selection_budget_rules() {
        let c = corpus(&[("a b c", "a b c"), ("c b a", "a b c")]);
        assert!(matches!(select_random(&c, 7, 1), Err(Error::BudgetExceedsCorpus { .. })));
        assert!(select_random(&c, 0, 1).unwrap().is_empty());
        assert_eq!(select_random(&c, 4, 9).unwrap(), select_random(&c, 4, 9).unwrap());
        assert_eq!(select_random(&c, 6, 2).unwrap().len(), 2);
    }
}
