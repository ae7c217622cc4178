//! Distributional diagnostics for natural versus synthetic corpora.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, ParallelCorpus, Sentence};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthRatioReport {
    pub src_shorter: usize,
    pub equal: usize,
    pub src_longer: usize,
    /// len(source) − len(target) → number of pairs.
    pub histogram: BTreeMap<i64, usize>,
}

impl LengthRatioReport {
    pub fn total(&self) -> usize {
        self.src_shorter + self.equal + self.src_longer
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("diff\tcount\n");
        for (d, c) in &self.histogram {
            let _ = writeln!(s, "{d}\t{c}");
        }
        s
    }
}

pub fn length_ratio_report(corpus: &ParallelCorpus) -> Result<LengthRatioReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut r = LengthRatioReport {
        src_shorter: 0,
        equal: 0,
        src_longer: 0,
        histogram: BTreeMap::new(),
    };
    for p in corpus.iter() {
        let d = p.source.len() as i64 - p.target.len() as i64;
        match d.signum() {
            -1 => r.src_shorter += 1,
            0 => r.equal += 1,
            _ => r.src_longer += 1,
        }
        *r.histogram.entry(d).or_insert(0) += 1;
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthCurve {
    /// `(sentences_seen, types_seen)`
    pub points: Vec<(usize, usize)>,
}

impl GrowthCurve {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("sentences\ttypes\n");
        for (n, t) in &self.points {
            let _ = writeln!(s, "{n}\t{t}");
        }
        s
    }
}

/// Distinct types seen after every `step` sentences, in corpus order. A
/// final point is added when the corpus size is not a multiple of `step`.
pub fn vocab_growth(corpus: &Corpus, step: usize) -> Result<GrowthCurve> {
    if step == 0 {
        return Err(Error::Config("growth step must be at least 1".into()));
    }
    let mut seen: HashSet<&str> = HashSet::new();
    let mut points = Vec::new();
    for (i, s) in corpus.iter().enumerate() {
        seen.extend(s.words());
        let n = i + 1;
        if n % step == 0 || n == corpus.len() {
            points.push((n, seen.len()));
        }
    }
    Ok(GrowthCurve { points })
}

/// Same as [`vocab_growth`] after a seeded shuffle of the sentences.
pub fn vocab_growth_shuffled(corpus: &Corpus, step: usize, seed: u64) -> Result<GrowthCurve> {
    let mut sentences: Vec<Sentence> = corpus.sentences.clone();
    sentences.shuffle(&mut rng::rng(seed));
    vocab_growth(&Corpus::new(sentences), step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTypeStats {
    pub tokens: usize,
    pub types: usize,
    pub hapax: usize,
    /// Share of tokens covered by the `k` most frequent types.
    pub top_k_mass: f64,
    pub k: usize,
}

pub const DEFAULT_TOP_K: usize = 100;

pub fn token_type_stats(corpus: &Corpus, k: usize) -> TokenTypeStats {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in corpus.iter() {
        for w in s.words() {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    let tokens: usize = counts.values().sum();
    let mut freq: Vec<usize> = counts.values().copied().collect();
    freq.sort_unstable_by(|a, b| b.cmp(a));
    let top: usize = freq.iter().take(k).sum();
    TokenTypeStats {
        tokens,
        types: counts.len(),
        hapax: freq.iter().filter(|&&c| c == 1).count(),
        top_k_mass: if tokens == 0 { 0.0 } else { top as f64 / tokens as f64 },
        k,
    }
}
