use serde::{Deserialize, Serialize};

use super::layers::{embed, run_bigru, GruIds, PaddedBatch, SeqMask};
use crate::corpus::{SentencePair, Vocabulary};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Bound, Graph, ParamId, ParamStore, Tensor, Var};

pub const SRC_EMBEDDINGS: &str = "src_embeddings";
pub const ENCODER: &str = "encoder";
pub const ATTENTION: &str = "attention";
pub const DECODER: &str = "decoder";
pub const TGT_EMBEDDINGS: &str = "tgt_embeddings";
pub const GROUPS: [&str; 5] = [SRC_EMBEDDINGS, ENCODER, ATTENTION, DECODER, TGT_EMBEDDINGS];

fn default_init_scale() -> f64 {
    0.08
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub max_len: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl ModelConfig {
    /// Default dimensions for the given vocabulary sizes.
    pub fn new(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        ModelConfig {
            src_vocab_size,
            tgt_vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
            attention_dim: 64,
            max_len: 50,
            init_scale: default_init_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.src_vocab_size,
            self.tgt_vocab_size,
            self.embed_dim,
            self.hidden_dim,
            self.attention_dim,
            self.max_len,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Embedding table plus bidirectional GRU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EncoderIds {
    pub emb: ParamId,
    pub fwd: GruIds,
    pub bwd: GruIds,
}

impl EncoderIds {
    pub fn new<R: rand::Rng>(store: &mut ParamStore, vocab: usize, embed_dim: usize, hidden: usize, scale: f64, rng: &mut R, groups: (&str, &str)) -> Self {
        let emb = store.add_uniform("src_emb", groups.0, &[vocab, embed_dim], scale, rng);
        let fwd = GruIds::new(store, "enc.fwd", groups.1, embed_dim, hidden, scale, rng);
        let bwd = GruIds::new(store, "enc.bwd", groups.1, embed_dim, hidden, scale, rng);
        EncoderIds { emb, fwd, bwd }
    }

    /// Returns `[B,T,2H]` annotations.
    pub fn encode(&self, g: &mut Graph, b: &Bound, src: &PaddedBatch) -> Result<Var> {
        let x = embed(g, b[self.emb], &src.ids, src.batch_size(), src.width)?;
        run_bigru(g, b, &self.fwd, &self.bwd, x, &src.mask())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct DecoderIds {
    pub att_ws: ParamId,
    pub att_uh: ParamId,
    pub att_b: ParamId,
    pub att_v: ParamId,
    pub init_w: ParamId,
    pub init_b: ParamId,
    /// Recurrent cell; `gru.w` projects the previous target embedding.
    pub gru: GruIds,
    pub gru_wc: ParamId,
    pub out_ws: ParamId,
    pub out_wc: ParamId,
    pub out_wy: ParamId,
    pub out_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub tgt_emb: ParamId,
}

/// Encoder output prepared for attention.
#[derive(Debug, Clone)]
pub(crate) struct Encoded {
    /// `[B,T,2H]`
    pub h: Var,
    /// `[B,T,A]` precomputed key projection.
    pub uh: Var,
    /// `[B,T]` additive mask.
    pub mask_add: Var,
    pub mask: SeqMask,
}

/// Attentional encoder-decoder with named parameter groups.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub params: ParamStore,
    pub(crate) enc: EncoderIds,
    pub(crate) dec: DecoderIds,
    /// Updates applied over the model's lifetime.
    pub updates: usize,
}

impl Model {
    /// Freshly initialised model. The vocabulary sizes in `config` are
    /// overwritten from the vocabularies.
    pub fn new(mut config: ModelConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.src_vocab_size = src_vocab.len();
        config.tgt_vocab_size = tgt_vocab.len();
        config.validate()?;
        let mut r = rng::rng(seed);
        let s = config.init_scale;
        let (e, h, a, v) = (config.embed_dim, config.hidden_dim, config.attention_dim, config.tgt_vocab_size);
        let mut p = ParamStore::new();
        let enc = EncoderIds::new(&mut p, config.src_vocab_size, e, h, s, &mut r, (SRC_EMBEDDINGS, ENCODER));
        let dec = DecoderIds {
            att_ws: p.add_uniform("att.w_s", ATTENTION, &[h, a], s, &mut r),
            att_uh: p.add_uniform("att.u_h", ATTENTION, &[2 * h, a], s, &mut r),
            att_b: p.add_uniform("att.b", ATTENTION, &[a], s, &mut r),
            att_v: p.add_uniform("att.v", ATTENTION, &[a, 1], s, &mut r),
            init_w: p.add_uniform("dec.init.w", DECODER, &[2 * h, h], s, &mut r),
            init_b: p.add_uniform("dec.init.b", DECODER, &[h], s, &mut r),
            gru: GruIds::new(&mut p, "dec.gru", DECODER, e, h, s, &mut r),
            gru_wc: p.add_uniform("dec.gru.w_c", DECODER, &[2 * h, 3 * h], s, &mut r),
            out_ws: p.add_uniform("dec.out.w_s", DECODER, &[h, e], s, &mut r),
            out_wc: p.add_uniform("dec.out.w_c", DECODER, &[2 * h, e], s, &mut r),
            out_wy: p.add_uniform("dec.out.w_y", DECODER, &[e, e], s, &mut r),
            out_b: p.add_uniform("dec.out.b", DECODER, &[e], s, &mut r),
            proj_w: p.add_uniform("dec.proj.w", DECODER, &[e, v], s, &mut r),
            proj_b: p.add_uniform("dec.proj.b", DECODER, &[v], s, &mut r),
            tgt_emb: p.add_uniform("tgt_emb", TGT_EMBEDDINGS, &[v, e], s, &mut r),
        };
        Ok(Model {
            config,
            src_vocab,
            tgt_vocab,
            params: p,
            enc,
            dec,
            updates: 0,
        })
    }

    /// Rebuilds the parameter handles for an existing store (same layout
    /// as [`Model::new`]).
    pub(crate) fn from_parts(config: ModelConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary, params: ParamStore, updates: usize) -> Result<Self> {
        let mut m = Model::new(config, src_vocab, tgt_vocab, 0)?;
        if params.len() != m.params.len() {
            return Err(Error::Checkpoint(format!("expected {} parameters, found {}", m.params.len(), params.len())));
        }
        m.params.load_values(&params)?;
        m.updates = updates;
        Ok(m)
    }

    /// Appends rows to the source embedding table for newly added source
    /// vocabulary entries, initialised like the rest of the model.
    pub fn extend_source_vocab(&mut self, entries: Vec<String>, seed: u64) -> Result<Vec<usize>> {
        let added = self.src_vocab.extend(entries)?;
        if added.is_empty() {
            return Ok(added);
        }
        let mut r = rng::rng(seed);
        let extra = Tensor::uniform(&[added.len(), self.config.embed_dim], self.config.init_scale, &mut r);
        let p = self.params.get_mut(self.enc.emb);
        p.value.append_rows(&extra)?;
        p.grad = Tensor::zeros(p.value.shape());
        self.config.src_vocab_size = self.src_vocab.len();
        Ok(added)
    }

    pub(crate) fn src_embedding_id(&self) -> ParamId {
        self.enc.emb
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_values()
    }

    pub(crate) fn encode_ids(&self, pairs: &[&SentencePair]) -> (PaddedBatch, PaddedBatch) {
        let src: Vec<Vec<usize>> = pairs.iter().map(|p| self.src_vocab.encode(&p.source)).collect();
        let tgt: Vec<Vec<usize>> = pairs.iter().map(|p| self.tgt_vocab.encode(&p.target)).collect();
        let src_refs: Vec<&[usize]> = src.iter().map(Vec::as_slice).collect();
        let tgt_refs: Vec<&[usize]> = tgt.iter().map(Vec::as_slice).collect();
        (PaddedBatch::with_eos(&src_refs), PaddedBatch::with_eos(&tgt_refs))
    }

    /// Prepares `[B,T,2H]` annotations for attention.
    pub(crate) fn prepare(&self, g: &mut Graph, b: &Bound, h: Var, mask: SeqMask) -> Result<Encoded> {
        let shape = g.value(h).shape().to_vec();
        let (bs, t, d) = (shape[0], shape[1], shape[2]);
        let flat = g.reshape(h, &[bs * t, d])?;
        let uh = g.matmul(flat, b[self.dec.att_uh])?;
        let uh = g.add_row(uh, b[self.dec.att_b])?;
        let uh = g.reshape(uh, &[bs, t, self.config.attention_dim])?;
        let mask_add = g.constant(mask.additive());
        Ok(Encoded { h, uh, mask_add, mask })
    }

    pub(crate) fn encode(&self, g: &mut Graph, b: &Bound, src: &PaddedBatch) -> Result<Encoded> {
        let h = self.enc.encode(g, b, src)?;
        self.prepare(g, b, h, src.mask())
    }

    /// Initial decoder state from the masked mean of the annotations.
    pub(crate) fn init_state(&self, g: &mut Graph, b: &Bound, enc: &Encoded) -> Result<Var> {
        let w = g.constant(enc.mask.mean_weights());
        let mean = g.weighted_sum(w, enc.h)?;
        let s = g.matmul(mean, b[self.dec.init_w])?;
        let s = g.add_row(s, b[self.dec.init_b])?;
        Ok(g.tanh(s))
    }

    /// Projections of previous-target embeddings into the recurrent cell
    /// (`[N,3H]`, bias included) and into the readout (`[N,E]`).
    pub(crate) fn embed_prev(&self, g: &mut Graph, b: &Bound, ids: &[usize]) -> Result<(Var, Var)> {
        let y = g.gather_rows(b[self.dec.tgt_emb], ids)?;
        let yg = self.dec.gru.project(g, b, y)?;
        let yo = g.matmul(y, b[self.dec.out_wy])?;
        Ok((yg, yo))
    }

    /// Additive attention from the previous state; returns the `[B,2H]` context.
    pub(crate) fn attend(&self, g: &mut Graph, b: &Bound, enc: &Encoded, s_prev: Var) -> Result<Var> {
        let (bs, t) = (enc.mask.batch_size(), enc.mask.width);
        let ws = g.matmul(s_prev, b[self.dec.att_ws])?;
        let e = g.add_mid(enc.uh, ws)?;
        let e = g.tanh(e);
        let e = g.reshape(e, &[bs * t, self.config.attention_dim])?;
        let scores = g.matmul(e, b[self.dec.att_v])?;
        let scores = g.reshape(scores, &[bs, t])?;
        let scores = g.add(scores, enc.mask_add)?;
        let alpha = g.softmax_rows(scores)?;
        g.weighted_sum(alpha, enc.h)
    }

    /// One decoder step; returns the new state and the `[B,E]` readout.
    pub(crate) fn step(&self, g: &mut Graph, b: &Bound, enc: &Encoded, s_prev: Var, yg: Var, yo: Var) -> Result<(Var, Var)> {
        let ctx = self.attend(g, b, enc, s_prev)?;
        let cx = g.matmul(ctx, b[self.dec.gru_wc])?;
        let gx = g.add(yg, cx)?;
        let s = self.dec.gru.step(g, b, gx, s_prev)?;
        let r1 = g.matmul(s, b[self.dec.out_ws])?;
        let r2 = g.matmul(ctx, b[self.dec.out_wc])?;
        let r = g.add_n(&[r1, r2, yo])?;
        let r = g.add_row(r, b[self.dec.out_b])?;
        Ok((s, g.tanh(r)))
    }

    /// Vocabulary logits for `[N,E]` readouts.
    pub(crate) fn logits(&self, g: &mut Graph, b: &Bound, readout: Var) -> Result<Var> {
        let l = g.matmul(readout, b[self.dec.proj_w])?;
        g.add_row(l, b[self.dec.proj_b])
    }

    /// Teacher-forced decoding. Returns the `[B*T',E]` readouts (batch-major)
    /// and, per step, the decoder state that produced them.
    pub(crate) fn teacher_forced(&self, g: &mut Graph, b: &Bound, enc: &Encoded, tgt: &PaddedBatch) -> Result<(Var, Vec<Var>)> {
        let (bs, t) = (tgt.batch_size(), tgt.width);
        let prev = tgt.shifted_right();
        let (yg, yo) = self.embed_prev(g, b, &prev)?;
        let yg = g.reshape(yg, &[bs, t, 3 * self.config.hidden_dim])?;
        let yo = g.reshape(yo, &[bs, t, self.config.embed_dim])?;
        let mut s = self.init_state(g, b, enc)?;
        let mut readouts = Vec::with_capacity(t);
        let mut states = Vec::with_capacity(t);
        for i in 0..t {
            let ygi = g.time_slice(yg, i)?;
            let yoi = g.time_slice(yo, i)?;
            let (s_new, r) = self.step(g, b, enc, s, ygi, yoi)?;
            s = s_new;
            readouts.push(r);
            states.push(s);
        }
        let stacked = g.stack_time(&readouts)?;
        let flat = g.reshape(stacked, &[bs * t, self.config.embed_dim])?;
        Ok((flat, states))
    }

    /// Per-position negative log-likelihoods (`[B*T']`) of `tgt` given
    /// an encoded source.
    pub(crate) fn nll_given(&self, g: &mut Graph, b: &Bound, enc: &Encoded, tgt: &PaddedBatch) -> Result<Var> {
        let (readout, _) = self.teacher_forced(g, b, enc, tgt)?;
        let logits = self.logits(g, b, readout)?;
        g.nll_rows(logits, &tgt.ids)
    }

    /// Mean per-token loss node for a batch.
    pub(crate) fn loss_node(&self, g: &mut Graph, b: &Bound, src: &PaddedBatch, tgt: &PaddedBatch) -> Result<Var> {
        let enc = self.encode(g, b, src)?;
        let nll = self.nll_given(g, b, &enc, tgt)?;
        mean_token_loss(g, nll, tgt)
    }

    /// Mean per-token cross-entropy of teacher-forced decoding.
    pub fn forward_loss(&self, pairs: &[SentencePair]) -> Result<f64> {
        let refs: Vec<&SentencePair> = pairs.iter().collect();
        let (src, tgt) = self.encode_ids(&refs);
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let loss = self.loss_node(&mut g, &b, &src, &tgt)?;
        Ok(g.value(loss).item())
    }

    /// Forward + backward; gradients are added to `self.params`.
    pub fn accumulate_loss(&mut self, pairs: &[&SentencePair]) -> Result<f64> {
        let (src, tgt) = self.encode_ids(pairs);
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let loss = self.loss_node(&mut g, &b, &src, &tgt)?;
        let mut grads = g.backward(loss)?;
        self.params.accumulate(&b, &mut grads);
        Ok(g.value(loss).item())
    }

    /// Per-sentence token negative log-likelihoods (EOS included).
    pub fn token_nlls(&self, pairs: &[&SentencePair]) -> Result<Vec<Vec<f64>>> {
        let (src, tgt) = self.encode_ids(pairs);
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let enc = self.encode(&mut g, &b, &src)?;
        let nll = self.nll_given(&mut g, &b, &enc, &tgt)?;
        Ok(split_rows(g.value(nll).data(), &tgt))
    }
}

pub(crate) fn split_rows(values: &[f64], tgt: &PaddedBatch) -> Vec<Vec<f64>> {
    values
        .chunks_exact(tgt.width)
        .zip(&tgt.lens)
        .map(|(row, &l)| row[..l].to_vec())
        .collect()
}

/// Averages per-position losses over the real target tokens.
pub(crate) fn mean_token_loss(g: &mut Graph, nll: Var, tgt: &PaddedBatch) -> Result<Var> {
    let n = tgt.num_tokens() as f64;
    let w: Vec<f64> = tgt.weights().into_iter().map(|x| x / n).collect();
    g.dot_const(nll, &w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn vocab(words: &[&str]) -> Vocabulary {
        let s = Sentence::from_words(words).unwrap();
        Vocabulary::build([&s], 1, crate::corpus::DEFAULT_MARKER)
    }

    fn tiny() -> Model {
        let cfg = ModelConfig {
            embed_dim: 6,
            hidden_dim: 5,
            attention_dim: 4,
            max_len: 10,
            ..ModelConfig::new(0, 0)
        };
        Model::new(cfg, vocab(&["a", "b", "c"]), vocab(&["x", "y", "z", "w"]), 7).unwrap()
    }

    #[test]
    fn groups_are_exactly_the_five() {
        let m = tiny();
        let mut g = m.params.groups();
        g.sort();
        let mut want: Vec<String> = GROUPS.iter().map(|s| s.to_string()).collect();
        want.sort();
        assert_eq!(g, want);
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let m = tiny();
        let pairs = vec![SentencePair::natural("a b c", "x y").unwrap()];
        let loss = m.forward_loss(&pairs).unwrap();
        let ln_v = (m.tgt_vocab.len() as f64).ln();
        assert!((loss - ln_v).abs() < 0.2 * ln_v, "{loss} vs {ln_v}");
    }

    #[test]
    fn batch_of_copies_equals_single() {
        let m = tiny();
        let p = SentencePair::natural("a b", "x y z").unwrap();
        let one = m.forward_loss(std::slice::from_ref(&p)).unwrap();
        let three = m.forward_loss(&[p.clone(), p.clone(), p]).unwrap();
        assert!((one - three).abs() < 1e-12);
    }

    #[test]
    fn padding_does_not_change_per_sentence_scores() {
        let m = tiny();
        let short = SentencePair::natural("a", "x").unwrap();
        let long = SentencePair::natural("a b c a b", "x y z w x y").unwrap();
        let alone = m.token_nlls(&[&short]).unwrap();
        let padded = m.token_nlls(&[&short, &long]).unwrap();
        for (a, b) in alone[0].iter().zip(&padded[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn extension_appends_rows_only() {
        let mut m = tiny();
        let before = m.params.get(m.src_embedding_id()).value.clone();
        let added = m.extend_source_vocab(vec!["x@trg@".into(), "y@trg@".into()], 3).unwrap();
        assert_eq!(added.len(), 2);
        let after = &m.params.get(m.src_embedding_id()).value;
        assert_eq!(after.rows(), before.rows() + 2);
        assert_eq!(&after.data()[..before.len()], before.data());
        assert_eq!(m.config.src_vocab_size, m.src_vocab.len());
    }
}
