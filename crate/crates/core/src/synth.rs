//! Pseudo-parallel data: copies, marked copies, dummy sources, source noise
//! and back/forward translation through a [`Translator`].
//!
//! Every scheme leaves the target side of its input untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{is_reserved, Corpus, ParallelCorpus, Provenance, Sentence, SentencePair, Token, Vocabulary, CONTINUATION, UNK_STR};
use crate::error::{Error, Result};
use crate::nmt::Model;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub p_drop: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            p_drop: 0.1,
            k: 3,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::Config(format!("p_drop {} outside [0, 1]", self.p_drop)));
        }
        Ok(())
    }
}

/// Greedy longest-match segmentation of `word` into units of `vocab`.
/// Characters with no matching unit become UNK; every non-final unit
/// carries the continuation suffix.
pub fn segment(word: &str, vocab: &Vocabulary) -> Vec<String> {
    if vocab.contains(word) && !is_reserved(word) {
        return vec![word.to_string()];
    }
    let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
    let mut pieces = Vec::new();
    let mut i = 0;
    while i + 1 < bounds.len() {
        let found = (i + 1..bounds.len())
            .rev()
            .find(|&j| {
                let piece = &word[bounds[i]..bounds[j]];
                vocab.contains(piece) && !is_reserved(piece)
            });
        match found {
            Some(j) => {
                pieces.push(word[bounds[i]..bounds[j]].to_string());
                i = j;
            }
            None => {
                pieces.push(UNK_STR.to_string());
                i += 1;
            }
        }
    }
    let last = pieces.len() - 1;
    for p in &mut pieces[..last] {
        if p != UNK_STR {
            p.push_str(CONTINUATION);
        }
    }
    pieces
}

/// Source = target, with out-of-vocabulary words split into source units.
pub fn make_copy(targets: &Corpus, src_vocab: &Vocabulary) -> ParallelCorpus {
    let pairs = targets
        .iter()
        .map(|t| {
            let tokens = t
                .tokens
                .iter()
                .flat_map(|tok| segment(tok.surface(), src_vocab))
                .map(|s| Token::new(s).expect("segments are non-empty and whitespace-free"))
                .collect();
            SentencePair::new(Sentence::new(tokens), t.clone(), Provenance::Copy)
        })
        .collect();
    ParallelCorpus::new(pairs)
}

/// Source = target with every token prefixed by `marker`. Returns the new
/// source-vocabulary entries (sorted, deduplicated, excluding entries the
/// source vocabulary already has).
pub fn make_copy_marked(
    targets: &Corpus,
    marker: &str,
    src_vocab: &Vocabulary,
) -> Result<(ParallelCorpus, Vec<String>)> {
    if marker.is_empty() || marker.chars().any(char::is_whitespace) {
        return Err(Error::Config(format!("invalid marker {marker:?}")));
    }
    if let Some(tok) = src_vocab
        .entries()
        .iter()
        .find(|e| e.starts_with(marker) && !e.starts_with(src_vocab.marker()))
    {
        return Err(Error::MarkerCollision {
            marker: marker.to_string(),
            token: tok.clone(),
        });
    }
    let mut extension = BTreeSet::new();
    let mut pairs = Vec::with_capacity(targets.len());
    for t in targets.iter() {
        let tokens = t
            .tokens
            .iter()
            .map(|tok| Token::marked(tok.surface(), marker))
            .collect::<Result<Vec<_>>>()?;
        for tok in &tokens {
            if !src_vocab.contains(tok.surface()) {
                extension.insert(tok.surface().to_string());
            }
        }
        pairs.push(SentencePair::new(Sentence::new(tokens), t.clone(), Provenance::CopyMarked));
    }
    Ok((ParallelCorpus::new(pairs), extension.into_iter().collect()))
}

/// Source = one DUMMY token per target token.
pub fn make_copy_dummies(targets: &Corpus) -> ParallelCorpus {
    let pairs = targets
        .iter()
        .map(|t| {
            let src = Sentence::new(vec![Token::dummy(); t.len()]);
            SentencePair::new(src, t.clone(), Provenance::CopyDummies)
        })
        .collect();
    ParallelCorpus::new(pairs)
}

/// Word dropout plus a local shuffle.
///
/// Each token survives independently with probability `1 - p_drop`; if none
/// would survive, the one with the highest survival draw is kept. Survivors
/// are reordered by sorting `i + U[0, k+1)` (stable), so no token moves by
/// more than `k` positions. The random stream is derived from
/// `(spec.seed, index)`.
pub fn add_noise(sentence: &Sentence, spec: &NoiseSpec, index: u64) -> Sentence {
    if sentence.is_empty() {
        return sentence.clone();
    }
    let mut r = rng::rng_for(spec.seed, index);
    let draws: Vec<f64> = (0..sentence.len()).map(|_| r.gen::<f64>()).collect();
    let mut kept: Vec<&Token> = sentence
        .tokens
        .iter()
        .zip(&draws)
        .filter(|(_, &u)| u >= spec.p_drop)
        .map(|(t, _)| t)
        .collect();
    if kept.is_empty() {
        let best = draws
            .iter()
            .enumerate()
            .fold(0, |b, (i, &u)| if u > draws[b] { i } else { b });
        kept.push(&sentence.tokens[best]);
    }
    let perm = jitter_permutation(kept.len(), spec.k, &mut r);
    Sentence::new(perm.into_iter().map(|i| kept[i].clone()).collect())
}

/// `out[j]` = index of the element placed at position `j`.
pub fn jitter_permutation<R: Rng>(n: usize, k: usize, r: &mut R) -> Vec<usize> {
    let mut keys: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let jitter = if k == 0 { 0.0 } else { r.gen_range(0.0..(k as f64 + 1.0)) };
            (i as f64 + jitter, i)
        })
        .collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0));
    keys.into_iter().map(|(_, i)| i).collect()
}

/// Noises every source side; provenance becomes `Noised(base)`.
pub fn noise_sources(corpus: &ParallelCorpus, spec: &NoiseSpec) -> Result<ParallelCorpus> {
    spec.validate()?;
    corpus
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(SentencePair::new(
                add_noise(&p.source, spec, i as u64),
                p.target.clone(),
                Provenance::noised(p.provenance.clone())?,
            ))
        })
        .collect::<Result<Vec<_>>>()
        .map(ParallelCorpus::new)
}

/// Swap adjacent input words `a b` when `a ∈ left` and `b ∈ right`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorderRule {
    pub left: BTreeSet<String>,
    pub right: BTreeSet<String>,
}

/// Word-substitution translator with local reordering rules.
///
/// Each input word maps to zero or more output words; words outside the
/// table become UNK.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleTranslator {
    pub id: String,
    pub table: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub reorder: Vec<ReorderRule>,
}

impl RuleTranslator {
    pub fn identity<S: AsRef<str>>(id: &str, words: &[S]) -> Self {
        RuleTranslator {
            id: id.to_string(),
            table: words
                .iter()
                .map(|w| (w.as_ref().to_string(), vec![w.as_ref().to_string()]))
                .collect(),
            reorder: Vec::new(),
        }
    }

    pub fn translate(&self, s: &Sentence) -> Sentence {
        let mut words: Vec<&str> = s.words().collect();
        let mut i = 0;
        while i + 1 < words.len() {
            if self
                .reorder
                .iter()
                .any(|r| r.left.contains(words[i]) && r.right.contains(words[i + 1]))
            {
                words.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
        let tokens = words
            .into_iter()
            .flat_map(|w| match self.table.get(w) {
                Some(out) => out.iter().map(|o| Token::new(o.as_str()).expect("table outputs are valid tokens")).collect(),
                None => vec![Token::unk()],
            })
            .collect();
        Sentence::new(tokens)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    /// Replace the token by UNK.
    Unk,
    /// Delete the token.
    Drop,
}

#[derive(Debug, Clone)]
pub enum Translator {
    Neural {
        id: String,
        model: Arc<Model>,
        beam: usize,
    },
    RuleBased(RuleTranslator),
    Degraded {
        id: String,
        base: Box<Translator>,
        error_rate: f64,
        kind: ErrorKind,
        seed: u64,
    },
}

impl Translator {
    pub fn degraded(id: &str, base: Translator, error_rate: f64, kind: ErrorKind, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&error_rate) {
            return Err(Error::Config(format!("error rate {error_rate} outside [0, 1]")));
        }
        Ok(Translator::Degraded {
            id: id.to_string(),
            base: Box::new(base),
            error_rate,
            kind,
            seed,
        })
    }

    pub fn id(&self) -> &str {
        match self {
            Translator::Neural { id, .. } | Translator::Degraded { id, .. } => id,
            Translator::RuleBased(r) => &r.id,
        }
    }

    /// Translates the `index`-th sentence of a corpus.
    pub fn translate(&self, s: &Sentence, index: u64) -> Sentence {
        match self {
            Translator::Neural { model, beam, .. } => model.translate(s, *beam),
            Translator::RuleBased(r) => r.translate(s),
            Translator::Degraded {
                base,
                error_rate,
                kind,
                seed,
                ..
            } => {
                let out = base.translate(s, index);
                let mut r = rng::rng_for(*seed, index);
                let tokens = out
                    .tokens
                    .into_iter()
                    .filter_map(|t| {
                        if r.gen::<f64>() < *error_rate {
                            match kind {
                                ErrorKind::Unk => Some(Token::unk()),
                                ErrorKind::Drop => None,
                            }
                        } else {
                            Some(t)
                        }
                    })
                    .collect();
                Sentence::new(tokens)
            }
        }
    }
}

/// Output of [`back_translate`] / [`forward_translate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Translated {
    pub corpus: ParallelCorpus,
    /// Inputs whose translation came out empty and were dropped.
    pub dropped: usize,
}

/// Synthesizes sources for natural targets.
pub fn back_translate(targets: &Corpus, translator: &Translator) -> Translated {
    let mut dropped = 0;
    let mut pairs = Vec::with_capacity(targets.len());
    for (i, t) in targets.iter().enumerate() {
        let src = translator.translate(t, i as u64);
        if src.is_empty() {
            dropped += 1;
            continue;
        }
        pairs.push(SentencePair::new(src, t.clone(), Provenance::BackTranslated(translator.id().to_string())));
    }
    Translated {
        corpus: ParallelCorpus::new(pairs),
        dropped,
    }
}

/// Synthesizes targets for natural sources.
pub fn forward_translate(sources: &Corpus, translator: &Translator) -> Translated {
    let mut dropped = 0;
    let mut pairs = Vec::with_capacity(sources.len());
    for (i, s) in sources.iter().enumerate() {
        let tgt = translator.translate(s, i as u64);
        if tgt.is_empty() {
            dropped += 1;
            continue;
        }
        pairs.push(SentencePair::new(s.clone(), tgt, Provenance::ForwardTranslated(translator.id().to_string())));
    }
    Translated {
        corpus: ParallelCorpus::new(pairs),
        dropped,
    }
}
