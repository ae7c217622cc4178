//! Recurrent target language model and deep fusion into the translation
//! model's output layer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, ParallelCorpus, Sentence, SentencePair, Vocabulary};
use crate::error::{Error, Result};
use crate::nmt::beam::{self, ModelState, StepModel};
use crate::nmt::layers::{embed, run_gru, GruIds, PaddedBatch};
use crate::nmt::{mean_token_loss, sidecar_path, split_rows, Model, History, TrainSpec, LENGTH_ALPHA};
use crate::rng;
use crate::tensor::{read_params, write_params, Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::train::{self, Objective};

pub const LM_GROUP: &str = "lm";
pub const FUSION_GROUP: &str = "fusion";

const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,
}

impl LmConfig {
    /// Dimensions matching a translation model's decoder.
    pub fn matching(model: &Model) -> Self {
        LmConfig {
            vocab_size: model.tgt_vocab.len(),
            embed_dim: model.config.embed_dim,
            hidden_dim: model.config.hidden_dim,
            init_scale: model.config.init_scale,
        }
    }
}

/// One-layer GRU language model. Sentences start from EOS and end with it.
#[derive(Debug, Clone)]
pub struct RnnLm {
    pub config: LmConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    emb: ParamId,
    gru: GruIds,
    proj_w: ParamId,
    proj_b: ParamId,
    pub updates: usize,
}

impl RnnLm {
    pub fn new(mut config: LmConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.len();
        if config.embed_dim == 0 || config.hidden_dim == 0 {
            return Err(Error::Config("language model dimensions must be positive".into()));
        }
        let mut r = rng::rng(seed);
        let s = config.init_scale;
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        let mut p = ParamStore::new();
        let emb = p.add_uniform("lm.emb", LM_GROUP, &[v, e], s, &mut r);
        let gru = GruIds::new(&mut p, "lm.gru", LM_GROUP, e, h, s, &mut r);
        let proj_w = p.add_uniform("lm.proj.w", LM_GROUP, &[h, v], s, &mut r);
        let proj_b = p.add_uniform("lm.proj.b", LM_GROUP, &[v], s, &mut r);
        Ok(RnnLm {
            config,
            vocab,
            params: p,
            emb,
            gru,
            proj_w,
            proj_b,
            updates: 0,
        })
    }

    fn batch(&self, sentences: &[&Sentence]) -> PaddedBatch {
        let ids: Vec<Vec<usize>> = sentences.iter().map(|s| self.vocab.encode(s)).collect();
        let refs: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
        PaddedBatch::with_eos(&refs)
    }

    /// `[B*T,H]` states; row `t` has read the inputs up to position `t` of
    /// the shifted sequence and predicts token `t`.
    pub(crate) fn states(&self, g: &mut Graph, b: &Bound, batch: &PaddedBatch) -> Result<Var> {
        let (bs, t) = (batch.batch_size(), batch.width);
        let x = embed(g, b[self.emb], &batch.shifted_right(), bs, t)?;
        let hs = run_gru(g, b, &self.gru, x, &batch.mask(), false)?;
        let stacked = g.stack_time(&hs)?;
        g.reshape(stacked, &[bs * t, self.config.hidden_dim])
    }

    /// Zero state for `n` rows.
    pub(crate) fn start(&self, g: &mut Graph, n: usize) -> Var {
        g.constant(Tensor::zeros(&[n, self.config.hidden_dim]))
    }

    /// Reads one token per row.
    pub(crate) fn advance(&self, g: &mut Graph, b: &Bound, h: Var, prev: &[usize]) -> Result<Var> {
        let y = g.gather_rows(b[self.emb], prev)?;
        let gx = self.gru.project(g, b, y)?;
        self.gru.step(g, b, gx, h)
    }

    fn logits(&self, g: &mut Graph, b: &Bound, h: Var) -> Result<Var> {
        let l = g.matmul(h, b[self.proj_w])?;
        g.add_row(l, b[self.proj_b])
    }

    fn loss_node(&self, g: &mut Graph, b: &Bound, batch: &PaddedBatch) -> Result<Var> {
        let h = self.states(g, b, batch)?;
        let logits = self.logits(g, b, h)?;
        let nll = g.nll_rows(logits, &batch.ids)?;
        mean_token_loss(g, nll, batch)
    }

    /// Mean per-token cross-entropy of a batch, with gradients added to
    /// `self.params`.
    pub fn accumulate_loss(&mut self, sentences: &[&Sentence]) -> Result<f64> {
        let batch = self.batch(sentences);
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let loss = self.loss_node(&mut g, &b, &batch)?;
        let mut grads = g.backward(loss)?;
        self.params.accumulate(&b, &mut grads);
        Ok(g.value(loss).item())
    }

    /// Per-sentence token negative log-likelihoods (EOS included).
    pub fn token_nlls(&self, sentences: &[&Sentence]) -> Result<Vec<Vec<f64>>> {
        let batch = self.batch(sentences);
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let h = self.states(&mut g, &b, &batch)?;
        let logits = self.logits(&mut g, &b, h)?;
        let nll = g.nll_rows(logits, &batch.ids)?;
        Ok(split_rows(g.value(nll).data(), &batch))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_store(path, &self.params)?;
        let side = LmSidecar {
            config: self.config.clone(),
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.clone(),
            updates: self.updates,
        };
        let sp = sidecar_path(path);
        fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&sp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sp = sidecar_path(path);
        let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let side: LmSidecar = serde_json::from_str(&text)?;
        if side.vocab.hash() != side.vocab_hash {
            return Err(Error::Checkpoint(format!("vocabulary hash mismatch in {}", sp.display())));
        }
        let mut lm = RnnLm::new(side.config, side.vocab, 0)?;
        lm.params.load_values(&load_store(path)?)?;
        lm.updates = side.updates;
        Ok(lm)
    }
}

#[derive(Serialize, Deserialize)]
struct LmSidecar {
    config: LmConfig,
    vocab_hash: String,
    vocab: Vocabulary,
    updates: usize,
}

pub(crate) fn save_store(path: &Path, store: &ParamStore) -> Result<()> {
    let mut buf = Vec::new();
    write_params(&mut buf, store).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub(crate) fn load_store(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_params(&mut bytes.as_slice())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmScore {
    pub mean_token_xent: f64,
    pub perplexity: f64,
    pub tokens: usize,
}

/// Perplexity is `exp` of the mean per-token cross-entropy (EOS included).
pub fn perplexity(lm: &RnnLm, corpus: &Corpus) -> Result<LmScore> {
    let (mut total, mut tokens) = (0.0, 0usize);
    for chunk in corpus.sentences.chunks(EVAL_BATCH) {
        let refs: Vec<&Sentence> = chunk.iter().collect();
        for row in lm.token_nlls(&refs)? {
            total += row.iter().sum::<f64>();
            tokens += row.len();
        }
    }
    let mean = if tokens == 0 { 0.0 } else { total / tokens as f64 };
    Ok(LmScore {
        mean_token_xent: mean,
        perplexity: mean.exp(),
        tokens,
    })
}

struct LmObjective<'a>(&'a mut RnnLm);

impl Objective for LmObjective<'_> {
    type Item = Sentence;

    fn stores(&self) -> Vec<&ParamStore> {
        vec![&self.0.params]
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![&mut self.0.params]
    }

    fn accumulate(&mut self, batch: &[&Sentence]) -> Result<f64> {
        self.0.accumulate_loss(batch)
    }

    fn evaluate(&self, items: &[Sentence]) -> Result<f64> {
        Ok(perplexity(self.0, &Corpus::new(items.to_vec()))?.mean_token_xent)
    }

    fn length(item: &Sentence) -> usize {
        item.len()
    }
}

/// Next-token cross-entropy training with early stopping on `dev`.
pub fn lm_train(lm: &mut RnnLm, corpus: &Corpus, dev: &Corpus, spec: &TrainSpec) -> Result<History> {
    spec.validate(&[LM_GROUP])?;
    lm.params.freeze_groups(&spec.freeze_mask);
    let out = train::run(&mut LmObjective(lm), &corpus.sentences, &dev.sentences, spec);
    lm.params.set_requires_grad(true);
    let h = out?;
    lm.updates += h.updates;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuseSpec {
    /// Scale the LM state by a learned sigmoid gate before projection.
    pub gate: bool,
    /// Also train the decoder readout and output projection.
    pub unfreeze_readout: bool,
}

impl Default for FuseSpec {
    fn default() -> Self {
        FuseSpec {
            gate: true,
            unfreeze_readout: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FusionIds {
    w_fuse: ParamId,
    gate: Option<(ParamId, ParamId)>,
}

/// Translation model plus frozen language model; the LM state enters the
/// output layer through `W_fuse` (initialised to zero).
#[derive(Debug, Clone)]
pub struct FusedModel {
    pub base: Model,
    pub lm: RnnLm,
    pub fusion: ParamStore,
    pub spec: FuseSpec,
    ids: FusionIds,
}

/// Decoder parameters trainable under `unfreeze_readout`.
const READOUT_PREFIXES: [&str; 2] = ["dec.out.", "dec.proj."];

impl FusedModel {
    pub fn new(base: Model, lm: RnnLm, spec: FuseSpec, seed: u64) -> Result<Self> {
        if base.tgt_vocab.hash() != lm.vocab.hash() {
            return Err(Error::VocabConflict("language model and translation model target vocabularies differ".into()));
        }
        let h = lm.config.hidden_dim;
        let v = base.tgt_vocab.len();
        let mut r = rng::rng(seed);
        let mut fusion = ParamStore::new();
        let w_fuse = fusion.add("fuse.w", FUSION_GROUP, Tensor::zeros(&[h, v]));
        let gate = spec.gate.then(|| {
            let scale = base.config.init_scale;
            (
                fusion.add_uniform("fuse.gate.u", FUSION_GROUP, &[h, h], scale, &mut r),
                fusion.add_uniform("fuse.gate.b", FUSION_GROUP, &[h], scale, &mut r),
            )
        });
        Ok(FusedModel {
            base,
            lm,
            fusion,
            spec,
            ids: FusionIds { w_fuse, gate },
        })
    }

    /// `base + (g ⊙ h_lm)·W_fuse`.
    fn fuse(&self, g: &mut Graph, fb: &Bound, base_logits: Var, h_lm: Var) -> Result<Var> {
        let h = match self.ids.gate {
            Some((u, b)) => {
                let pre = g.matmul(h_lm, fb[u])?;
                let pre = g.add_row(pre, fb[b])?;
                let gate = g.sigmoid(pre);
                g.mul(gate, h_lm)?
            }
            None => h_lm,
        };
        let extra = g.matmul(h, fb[self.ids.w_fuse])?;
        g.add(base_logits, extra)
    }

    fn nll_node(&self, g: &mut Graph, mb: &Bound, lb: &Bound, fb: &Bound, pairs: &[&SentencePair]) -> Result<(Var, PaddedBatch)> {
        let (src, tgt) = self.base.encode_ids(pairs);
        let enc = self.base.encode(g, mb, &src)?;
        let (readout, _) = self.base.teacher_forced(g, mb, &enc, &tgt)?;
        let logits = self.base.logits(g, mb, readout)?;
        let h_lm = self.lm.states(g, lb, &tgt)?;
        let fused = self.fuse(g, fb, logits, h_lm)?;
        Ok((g.nll_rows(fused, &tgt.ids)?, tgt))
    }

    /// Mean per-token loss; gradients go to the fusion store and to any
    /// base parameter left trainable.
    pub fn accumulate_loss(&mut self, pairs: &[&SentencePair]) -> Result<f64> {
        let mut g = Graph::new();
        let mb = self.base.params.bind(&mut g);
        let lb = self.lm.params.bind_frozen(&mut g);
        let fb = self.fusion.bind(&mut g);
        let (nll, tgt) = self.nll_node(&mut g, &mb, &lb, &fb, pairs)?;
        let loss = mean_token_loss(&mut g, nll, &tgt)?;
        let mut grads = g.backward(loss)?;
        self.fusion.accumulate(&fb, &mut grads);
        self.base.params.accumulate(&mb, &mut grads);
        Ok(g.value(loss).item())
    }

    pub fn token_nlls(&self, pairs: &[&SentencePair]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let mb = self.base.params.bind_frozen(&mut g);
        let lb = self.lm.params.bind_frozen(&mut g);
        let fb = self.fusion.bind_frozen(&mut g);
        let (nll, tgt) = self.nll_node(&mut g, &mb, &lb, &fb, pairs)?;
        Ok(split_rows(g.value(nll).data(), &tgt))
    }

    /// Mean per-token cross-entropy over a corpus.
    pub fn score(&self, pairs: &[SentencePair]) -> Result<f64> {
        let (mut total, mut tokens) = (0.0, 0usize);
        for chunk in pairs.chunks(EVAL_BATCH) {
            let refs: Vec<&SentencePair> = chunk.iter().collect();
            for row in self.token_nlls(&refs)? {
                total += row.iter().sum::<f64>();
                tokens += row.len();
            }
        }
        Ok(if tokens == 0 { 0.0 } else { total / tokens as f64 })
    }

    pub fn translate(&self, sentence: &Sentence, beam: usize) -> Sentence {
        let src = self.base.src_vocab.encode(sentence);
        let ids = beam::search(self, &src, beam, self.base.config.max_len, LENGTH_ALPHA)
            .expect("parameter shapes are fixed at construction");
        self.base.tgt_vocab.decode(&ids)
    }

    /// Writes `dir/{base.bin,lm.bin,fusion.bin,fusion.json}`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.base.save(&dir.join("base.bin"))?;
        self.lm.save(&dir.join("lm.bin"))?;
        save_store(&dir.join("fusion.bin"), &self.fusion)?;
        let p = dir.join("fusion.json");
        fs::write(&p, serde_json::to_string_pretty(&self.spec)?).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("fusion.json");
        let spec: FuseSpec = serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
        let base = Model::load(&dir.join("base.bin"))?;
        let lm = RnnLm::load(&dir.join("lm.bin"))?;
        let mut f = FusedModel::new(base, lm, spec, 0)?;
        f.fusion.load_values(&load_store(&dir.join("fusion.bin"))?)?;
        Ok(f)
    }
}

#[derive(Clone)]
pub(crate) struct FusedState {
    inner: ModelState,
    lm_bound: Bound,
    fusion_bound: Bound,
    h_lm: Var,
}

impl StepModel for FusedModel {
    type State = FusedState;

    fn start(&self, g: &mut Graph, src: &[usize]) -> Result<FusedState> {
        let inner = self.base.start_state(g, src)?;
        let lm_bound = self.lm.params.bind_frozen(g);
        let fusion_bound = self.fusion.bind_frozen(g);
        let h_lm = self.lm.start(g, 1);
        Ok(FusedState {
            inner,
            lm_bound,
            fusion_bound,
            h_lm,
        })
    }

    fn advance(&self, g: &mut Graph, st: &FusedState, prev: &[usize]) -> Result<(FusedState, Var)> {
        let (inner, r) = self.base.advance_state(g, &st.inner, prev)?;
        let logits = self.base.logits(g, &st.inner.bound, r)?;
        let h_lm = self.lm.advance(g, &st.lm_bound, st.h_lm, prev)?;
        let fused = self.fuse(g, &st.fusion_bound, logits, h_lm)?;
        Ok((FusedState { inner, h_lm, ..st.clone() }, fused))
    }

    fn select(&self, g: &mut Graph, st: &FusedState, rows: &[usize]) -> Result<FusedState> {
        let inner = self.base.select_state(g, &st.inner, rows)?;
        let h_lm = g.gather_rows(st.h_lm, rows)?;
        Ok(FusedState { inner, h_lm, ..st.clone() })
    }
}

struct FusionObjective<'a>(&'a mut FusedModel);

impl Objective for FusionObjective<'_> {
    type Item = SentencePair;

    fn stores(&self) -> Vec<&ParamStore> {
        vec![&self.0.fusion, &self.0.base.params]
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        let m = &mut *self.0;
        vec![&mut m.fusion, &mut m.base.params]
    }

    fn accumulate(&mut self, batch: &[&SentencePair]) -> Result<f64> {
        self.0.accumulate_loss(batch)
    }

    fn evaluate(&self, items: &[SentencePair]) -> Result<f64> {
        self.0.score(items)
    }

    fn length(item: &SentencePair) -> usize {
        item.source.len().max(item.target.len())
    }
}

/// Builds a fused model and trains the fusion parameters (and, when
/// `spec.unfreeze_readout`, the decoder output layer) on `tuning`. The
/// language model is never updated.
pub fn deep_fuse(base: Model, lm: RnnLm, tuning: &ParallelCorpus, dev: &ParallelCorpus, train_spec: &TrainSpec, spec: &FuseSpec) -> Result<(FusedModel, History)> {
    train_spec.validate(&[])?;
    let mut fused = FusedModel::new(base, lm, spec.clone(), rng::derive_named(train_spec.seed, "fusion-init"))?;
    for p in fused.base.params.iter_mut() {
        p.requires_grad = spec.unfreeze_readout && READOUT_PREFIXES.iter().any(|pre| p.name.starts_with(pre));
    }
    let out = train::run(&mut FusionObjective(&mut fused), &tuning.pairs, &dev.pairs, train_spec);
    fused.base.params.set_requires_grad(true);
    let h = out?;
    fused.base.updates += h.updates;
    Ok((fused, h))
}
