//! Attentional encoder-decoder: training, fine-tuning, decoding, scoring
//! and checkpoints.

pub(crate) mod beam;
pub mod layers;
mod model;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use beam::LENGTH_ALPHA;
pub use model::{Model, ModelConfig, ATTENTION, DECODER, ENCODER, GROUPS, SRC_EMBEDDINGS, TGT_EMBEDDINGS};
pub(crate) use model::{mean_token_loss, split_rows, EncoderIds};
pub use crate::train::{History, TrainSpec, ValidationPoint};

use crate::corpus::{mix_equal, ParallelCorpus, Sentence, SentencePair, Vocabulary};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{read_params, write_params, ParamStore};
use crate::train::{self, Objective};

/// Sentences per forward pass when scoring.
const EVAL_BATCH: usize = 64;

struct Trainable<'a>(&'a mut Model);

impl Objective for Trainable<'_> {
    type Item = SentencePair;

    fn stores(&self) -> Vec<&ParamStore> {
        vec![&self.0.params]
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![&mut self.0.params]
    }

    fn accumulate(&mut self, batch: &[&SentencePair]) -> Result<f64> {
        self.0.accumulate_loss(batch)
    }

    fn evaluate(&self, items: &[SentencePair]) -> Result<f64> {
        Ok(score_corpus(self.0, items)?.mean_token_xent)
    }

    fn length(item: &SentencePair) -> usize {
        item.source.len().max(item.target.len())
    }
}

/// Trains with early stopping on dev cross-entropy. Groups listed in
/// `spec.freeze_mask` are left bit-identical.
pub fn train(model: &mut Model, corpus: &ParallelCorpus, dev: &ParallelCorpus, spec: &TrainSpec) -> Result<History> {
    spec.validate(&GROUPS)?;
    model.params.freeze_groups(&spec.freeze_mask);
    let out = train::run(&mut Trainable(model), &corpus.pairs, &dev.pairs, spec);
    model.params.set_requires_grad(true);
    let h = out?;
    model.updates += h.updates;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneSpec {
    /// Epochs over the in-domain data for new source embeddings, with the
    /// rest of the model frozen.
    pub pretrain_epochs: usize,
    /// Mix the in-domain data with an equal amount of out-of-domain data.
    pub mix_out_domain: bool,
}

impl Default for FineTuneSpec {
    fn default() -> Self {
        FineTuneSpec {
            pretrain_epochs: 3,
            mix_out_domain: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneReport {
    pub added_source_entries: usize,
    pub pretrain: Option<History>,
    pub joint: History,
}

/// Marked source tokens of `corpus` that `vocab` does not know yet, sorted.
pub fn new_marked_entries(corpus: &ParallelCorpus, vocab: &Vocabulary) -> Vec<String> {
    let set: BTreeSet<String> = corpus
        .iter()
        .flat_map(|p| p.source.tokens.iter())
        .filter(|t| t.is_marked() && !vocab.contains(t.surface()))
        .map(|t| t.surface().to_string())
        .collect();
    set.into_iter().collect()
}

/// Resumes training of a converged model on in-domain pseudo-parallel data
/// (mixed 1:1 with out-of-domain natural data), with a fresh optimizer.
/// Marked source tokens unknown to the model get new embedding rows that are
/// first trained alone on the in-domain data, unless source embeddings are
/// frozen, in which case the new rows keep their initial values.
pub fn fine_tune(
    model: &mut Model,
    in_domain: &ParallelCorpus,
    out_domain: &ParallelCorpus,
    dev: &ParallelCorpus,
    spec: &TrainSpec,
    ft: &FineTuneSpec,
) -> Result<FineTuneReport> {
    spec.validate(&GROUPS)?;
    let new = new_marked_entries(in_domain, &model.src_vocab);
    let first_new = model.src_vocab.len();
    let added = model.extend_source_vocab(new, rng::derive_named(spec.seed, "extend-embeddings"))?;
    let mut pretrain = None;
    let emb_frozen = spec.freeze_mask.iter().any(|g| g == SRC_EMBEDDINGS);
    if !added.is_empty() && ft.pretrain_epochs > 0 && !emb_frozen {
        model.params.set_requires_grad(false);
        let emb = model.src_embedding_id();
        {
            let p = model.params.get_mut(emb);
            p.requires_grad = true;
            p.train_rows = Some(first_new..first_new + added.len());
        }
        let pspec = TrainSpec {
            max_epochs: Some(ft.pretrain_epochs),
            max_updates: usize::MAX,
            validation_interval: usize::MAX,
            keep_best: false,
            freeze_mask: Vec::new(),
            seed: rng::derive_named(spec.seed, "pretrain-embeddings"),
            ..spec.clone()
        };
        let out = train::run(&mut Trainable(model), &in_domain.pairs, &dev.pairs, &pspec);
        model.params.get_mut(emb).train_rows = None;
        model.params.set_requires_grad(true);
        let h = out?;
        model.updates += h.updates;
        pretrain = Some(h);
    }
    let data = if ft.mix_out_domain {
        mix_equal(in_domain, out_domain, rng::derive_named(spec.seed, "mix"))?
    } else {
        in_domain.clone()
    };
    let joint = train(model, &data, dev, spec)?;
    Ok(FineTuneReport {
        added_source_entries: added.len(),
        pretrain,
        joint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusScore {
    /// Mean over sentences of the summed token cross-entropy.
    pub mean_sentence_xent: f64,
    pub mean_token_xent: f64,
    pub sentences: usize,
    pub tokens: usize,
}

/// Teacher-forced cross-entropy (nats, EOS included).
pub fn score_corpus(model: &Model, pairs: &[SentencePair]) -> Result<CorpusScore> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    let mut sent_sum = 0.0;
    for chunk in pairs.chunks(EVAL_BATCH) {
        let refs: Vec<&SentencePair> = chunk.iter().collect();
        for row in model.token_nlls(&refs)? {
            let s: f64 = row.iter().sum();
            sent_sum += s;
            total += s;
            tokens += row.len();
        }
    }
    let n = pairs.len().max(1) as f64;
    Ok(CorpusScore {
        mean_sentence_xent: sent_sum / n,
        mean_token_xent: if tokens == 0 { 0.0 } else { total / tokens as f64 },
        sentences: pairs.len(),
        tokens,
    })
}

impl Model {
    /// Beam-search translation (length-normalised, capped at `max_len`).
    pub fn translate(&self, sentence: &Sentence, beam: usize) -> Sentence {
        self.translate_ids(&self.src_vocab.encode(sentence), beam)
    }

    fn translate_ids(&self, src: &[usize], beam: usize) -> Sentence {
        let ids = beam::search(self, src, beam, self.config.max_len, LENGTH_ALPHA)
            .expect("parameter shapes are fixed at construction");
        self.tgt_vocab.decode(&ids)
    }

    /// Greedy argmax decoding.
    pub fn translate_greedy(&self, sentence: &Sentence) -> Sentence {
        let ids = beam::greedy(self, &self.src_vocab.encode(sentence), self.config.max_len)
            .expect("parameter shapes are fixed at construction");
        self.tgt_vocab.decode(&ids)
    }

    /// Writes `path` (binary parameters) and `path.json` (sidecar).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        write_params(&mut buf, &self.params).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))?;
        let side = Sidecar {
            config: self.config.clone(),
            src_vocab_hash: self.src_vocab.hash(),
            tgt_vocab_hash: self.tgt_vocab.hash(),
            updates: self.updates,
            src_vocab: self.src_vocab.clone(),
            tgt_vocab: self.tgt_vocab.clone(),
        };
        let sp = sidecar_path(path);
        fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&sp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sp = sidecar_path(path);
        let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        if side.src_vocab.hash() != side.src_vocab_hash || side.tgt_vocab.hash() != side.tgt_vocab_hash {
            return Err(Error::Checkpoint(format!("vocabulary hash mismatch in {}", sp.display())));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let params = read_params(&mut bytes.as_slice())?;
        Model::from_parts(side.config, side.src_vocab, side.tgt_vocab, params, side.updates)
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: ModelConfig,
    src_vocab_hash: String,
    tgt_vocab_hash: String,
    updates: usize,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
