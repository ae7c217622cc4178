//! Dual-encoder adversarial training: a pseudo-source encoder G next to the
//! natural encoder E of a translation model, and a discriminator D that
//! tells their encodings apart.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, SentencePair, Vocabulary};
use crate::error::{Error, Result};
use crate::lm::{load_store, save_store};
use crate::nmt::layers::{run_bigru, GruIds, PaddedBatch, SeqMask};
use crate::nmt::{mean_token_loss, score_corpus, EncoderIds, History, Model, TrainSpec, ValidationPoint};
use crate::rng;
use crate::tensor::{AdamConfig, AdamState, Bound, Graph, ParamId, ParamStore, Var};

pub const PSEUDO_ENCODER: &str = "pseudo_encoder";
pub const DISCRIMINATOR: &str = "discriminator";
/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanSpec {
    /// G takes an adversarial step only when D's accuracy exceeds this.
    pub g_gate_accuracy: f64,
    /// D is not updated when its accuracy exceeds this.
    pub d_freeze_accuracy: f64,
    pub pretrain_updates: usize,
    pub disc_hidden: usize,
    pub d_adam: AdamConfig,
    pub g_adam: AdamConfig,
    /// When false, D and the adversarial G step are skipped and only the MT
    /// objective trains both encoders.
    pub adversarial: bool,
    pub seed: u64,
}

impl Default for GanSpec {
    fn default() -> Self {
        GanSpec {
            g_gate_accuracy: 0.75,
            d_freeze_accuracy: 0.99,
            pretrain_updates: 500,
            disc_hidden: 64,
            d_adam: AdamConfig::default(),
            g_adam: AdamConfig::default(),
            adversarial: true,
            seed: 1,
        }
    }
}

impl GanSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.g_gate_accuracy && self.g_gate_accuracy < self.d_freeze_accuracy && self.d_freeze_accuracy <= 1.0) {
            return Err(Error::Config(format!(
                "gate thresholds must satisfy 0 < {} < {} <= 1",
                self.g_gate_accuracy, self.d_freeze_accuracy
            )));
        }
        if self.disc_hidden == 0 {
            return Err(Error::Config("discriminator hidden size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub update_d: bool,
    pub update_g: bool,
}

/// Which adversarial updates fire for discriminator accuracy `a`.
pub fn gate(a: f64, spec: &GanSpec) -> Gate {
    Gate {
        update_d: a <= spec.d_freeze_accuracy,
        update_g: a > spec.g_gate_accuracy,
    }
}

/// Share of correct decisions at threshold 0.5 over both batches; an
/// output of exactly 0.5 is counted wrong.
pub fn discriminator_accuracy(natural: &[f64], pseudo: &[f64]) -> f64 {
    let n = natural.len() + pseudo.len();
    if n == 0 {
        return 0.0;
    }
    let right = natural.iter().filter(|&&p| p > 0.5).count() + pseudo.iter().filter(|&&p| p < 0.5).count();
    right as f64 / n as f64
}

fn clamped_log(g: &mut Graph, p: Var) -> Var {
    let c = g.clamp(p, CLAMP, 1.0 - CLAMP);
    g.log(c)
}

/// `-½·mean log D(E(x)) - ½·mean log(1 - D(G(x')))` from `[N,1]`
/// probabilities.
pub fn d_loss(g: &mut Graph, natural: Var, pseudo: Var) -> Var {
    let ln = clamped_log(g, natural);
    let a = g.mean(ln);
    let one_minus = g.affine(pseudo, -1.0, 1.0);
    let lp = clamped_log(g, one_minus);
    let b = g.mean(lp);
    let s = g.add(a, b).expect("scalars");
    g.affine(s, -0.5, 0.0)
}

/// `-mean log D(G(x'))`.
pub fn g_loss(g: &mut Graph, pseudo: Var) -> Var {
    let l = clamped_log(g, pseudo);
    let m = g.mean(l);
    g.affine(m, -1.0, 0.0)
}

/// Bidirectional GRU over encoder states, masked mean, one linear layer
/// and a sigmoid.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub params: ParamStore,
    fwd: GruIds,
    bwd: GruIds,
    w: ParamId,
    b: ParamId,
}

impl Discriminator {
    pub fn new(input_dim: usize, hidden: usize, scale: f64, seed: u64) -> Self {
        let mut r = rng::rng(seed);
        let mut p = ParamStore::new();
        let fwd = GruIds::new(&mut p, "disc.fwd", DISCRIMINATOR, input_dim, hidden, scale, &mut r);
        let bwd = GruIds::new(&mut p, "disc.bwd", DISCRIMINATOR, input_dim, hidden, scale, &mut r);
        let w = p.add_uniform("disc.out.w", DISCRIMINATOR, &[2 * hidden, 1], scale, &mut r);
        let b = p.add_uniform("disc.out.b", DISCRIMINATOR, &[1], scale, &mut r);
        Discriminator { params: p, fwd, bwd, w, b }
    }

    /// `[B,1]` probabilities that each encoded sentence is natural.
    pub fn forward(&self, g: &mut Graph, b: &Bound, h: Var, mask: &SeqMask) -> Result<Var> {
        let states = run_bigru(g, b, &self.fwd, &self.bwd, h, mask)?;
        let w = g.constant(mask.mean_weights());
        let pooled = g.weighted_sum(w, states)?;
        let z = g.matmul(pooled, b[self.w])?;
        let z = g.add_row(z, b[self.b])?;
        Ok(g.sigmoid(z))
    }
}

/// Translation model with an extra encoder for pseudo-sources and a
/// discriminator. Inference uses `mt` alone.
#[derive(Debug, Clone)]
pub struct GanModel {
    pub mt: Model,
    pub pseudo_vocab: Vocabulary,
    pub pseudo: ParamStore,
    g_enc: EncoderIds,
    pub disc: Discriminator,
}

/// Adam states for every update kind of the schedule.
#[derive(Debug, Clone)]
pub struct GanOptimizers {
    d: AdamState,
    g_adv: AdamState,
    mt: AdamState,
    mt_g: AdamState,
}

impl GanOptimizers {
    pub fn new(model: &GanModel, mt_adam: AdamConfig, spec: &GanSpec) -> Self {
        GanOptimizers {
            d: AdamState::new(spec.d_adam, &model.disc.params),
            g_adv: AdamState::new(spec.g_adam, &model.pseudo),
            mt: AdamState::new(mt_adam, &model.mt.params),
            mt_g: AdamState::new(mt_adam, &model.pseudo),
        }
    }
}

struct Encoded2 {
    natural: (PaddedBatch, PaddedBatch),
    pseudo: (PaddedBatch, PaddedBatch),
}

impl GanModel {
    /// Adds a pseudo-encoder with its own vocabulary (built from the
    /// pseudo-sources) and a discriminator to a translation model.
    pub fn new(mt: Model, pseudo_corpus: &ParallelCorpus, spec: &GanSpec) -> Result<Self> {
        spec.validate()?;
        let pseudo_vocab = Vocabulary::build(pseudo_corpus.iter().map(|p| &p.source), 1, mt.src_vocab.marker());
        Self::with_vocab(mt, pseudo_vocab, spec)
    }

    fn with_vocab(mt: Model, pseudo_vocab: Vocabulary, spec: &GanSpec) -> Result<Self> {
        let c = &mt.config;
        let mut r = rng::rng(rng::derive_named(spec.seed, "pseudo-encoder-init"));
        let mut pseudo = ParamStore::new();
        let g_enc = EncoderIds::new(&mut pseudo, pseudo_vocab.len(), c.embed_dim, c.hidden_dim, c.init_scale, &mut r, (PSEUDO_ENCODER, PSEUDO_ENCODER));
        let disc = Discriminator::new(2 * c.hidden_dim, spec.disc_hidden, c.init_scale, rng::derive_named(spec.seed, "discriminator-init"));
        Ok(GanModel {
            mt,
            pseudo_vocab,
            pseudo,
            g_enc,
            disc,
        })
    }

    fn batches(&self, natural: &[&SentencePair], pseudo: &[&SentencePair]) -> Encoded2 {
        let natural = self.mt.encode_ids(natural);
        let src: Vec<Vec<usize>> = pseudo.iter().map(|p| self.pseudo_vocab.encode(&p.source)).collect();
        let tgt: Vec<Vec<usize>> = pseudo.iter().map(|p| self.mt.tgt_vocab.encode(&p.target)).collect();
        let s: Vec<&[usize]> = src.iter().map(Vec::as_slice).collect();
        let t: Vec<&[usize]> = tgt.iter().map(Vec::as_slice).collect();
        Encoded2 {
            natural,
            pseudo: (PaddedBatch::with_eos(&s), PaddedBatch::with_eos(&t)),
        }
    }

    /// D's outputs on E(natural) and G(pseudo), as plain numbers.
    pub fn discriminate(&self, natural: &[&SentencePair], pseudo: &[&SentencePair]) -> Result<(Vec<f64>, Vec<f64>)> {
        let e = self.batches(natural, pseudo);
        let mut g = Graph::new();
        let mb = self.mt.params.bind_frozen(&mut g);
        let pb = self.pseudo.bind_frozen(&mut g);
        let db = self.disc.params.bind_frozen(&mut g);
        let he = self.mt.enc.encode(&mut g, &mb, &e.natural.0)?;
        let hg = self.g_enc.encode(&mut g, &pb, &e.pseudo.0)?;
        let pn = self.disc.forward(&mut g, &db, he, &e.natural.0.mask())?;
        let pp = self.disc.forward(&mut g, &db, hg, &e.pseudo.0.mask())?;
        Ok((g.value(pn).data().to_vec(), g.value(pp).data().to_vec()))
    }

    /// J^(D); with `accumulate`, gradients are added to D's store.
    pub fn d_objective(&mut self, natural: &[&SentencePair], pseudo: &[&SentencePair], accumulate: bool) -> Result<f64> {
        let e = self.batches(natural, pseudo);
        let mut g = Graph::new();
        let mb = self.mt.params.bind_frozen(&mut g);
        let pb = self.pseudo.bind_frozen(&mut g);
        let db = if accumulate { self.disc.params.bind(&mut g) } else { self.disc.params.bind_frozen(&mut g) };
        let he = self.mt.enc.encode(&mut g, &mb, &e.natural.0)?;
        let hg = self.g_enc.encode(&mut g, &pb, &e.pseudo.0)?;
        let pn = self.disc.forward(&mut g, &db, he, &e.natural.0.mask())?;
        let pp = self.disc.forward(&mut g, &db, hg, &e.pseudo.0.mask())?;
        let loss = d_loss(&mut g, pn, pp);
        if accumulate {
            let mut grads = g.backward(loss)?;
            self.disc.params.accumulate(&db, &mut grads);
        }
        Ok(g.value(loss).item())
    }

    /// J^(G); with `accumulate`, gradients are added to G's store.
    pub fn g_objective(&mut self, pseudo: &[&SentencePair], accumulate: bool) -> Result<f64> {
        let e = self.batches(&[], pseudo);
        let mut g = Graph::new();
        let pb = if accumulate { self.pseudo.bind(&mut g) } else { self.pseudo.bind_frozen(&mut g) };
        let db = self.disc.params.bind_frozen(&mut g);
        let hg = self.g_enc.encode(&mut g, &pb, &e.pseudo.0)?;
        let pp = self.disc.forward(&mut g, &db, hg, &e.pseudo.0.mask())?;
        let loss = g_loss(&mut g, pp);
        if accumulate {
            let mut grads = g.backward(loss)?;
            self.pseudo.accumulate(&pb, &mut grads);
        }
        Ok(g.value(loss).item())
    }

    /// Mean of the per-token MT losses of the natural batch (through E) and
    /// the pseudo batch (through G). Either batch may be empty. With
    /// `accumulate`, gradients reach every trainable parameter of the
    /// translation model and of G.
    pub fn mt_objective(&mut self, natural: &[&SentencePair], pseudo: &[&SentencePair], accumulate: bool) -> Result<f64> {
        let e = self.batches(natural, pseudo);
        let mut g = Graph::new();
        let (mb, pb) = if accumulate {
            (self.mt.params.bind(&mut g), self.pseudo.bind(&mut g))
        } else {
            (self.mt.params.bind_frozen(&mut g), self.pseudo.bind_frozen(&mut g))
        };
        let mut parts = Vec::new();
        if !natural.is_empty() {
            parts.push(self.mt.loss_node(&mut g, &mb, &e.natural.0, &e.natural.1)?);
        }
        if !pseudo.is_empty() {
            let (src, tgt) = &e.pseudo;
            let h = self.g_enc.encode(&mut g, &pb, src)?;
            let enc = self.mt.prepare(&mut g, &mb, h, src.mask())?;
            let nll = self.mt.nll_given(&mut g, &mb, &enc, tgt)?;
            parts.push(mean_token_loss(&mut g, nll, tgt)?);
        }
        if parts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n = parts.len() as f64;
        let sum = g.add_n(&parts)?;
        let loss = g.affine(sum, 1.0 / n, 0.0);
        if accumulate {
            let mut grads = g.backward(loss)?;
            self.mt.params.accumulate(&mb, &mut grads);
            self.pseudo.accumulate(&pb, &mut grads);
        }
        Ok(g.value(loss).item())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.mt.save(&dir.join("mt.bin"))?;
        save_store(&dir.join("pseudo.bin"), &self.pseudo)?;
        save_store(&dir.join("disc.bin"), &self.disc.params)?;
        let side = GanSidecar {
            pseudo_vocab: self.pseudo_vocab.clone(),
            disc_hidden: self.disc.fwd.hidden,
        };
        let p = dir.join("gan.json");
        fs::write(&p, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("gan.json");
        let side: GanSidecar = serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
        let mt = Model::load(&dir.join("mt.bin"))?;
        let spec = GanSpec {
            disc_hidden: side.disc_hidden,
            ..GanSpec::default()
        };
        let mut m = GanModel::with_vocab(mt, side.pseudo_vocab, &spec)?;
        m.pseudo.load_values(&load_store(&dir.join("pseudo.bin"))?)?;
        m.disc.params.load_values(&load_store(&dir.join("disc.bin"))?)?;
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
struct GanSidecar {
    pseudo_vocab: Vocabulary,
    disc_hidden: usize,
}

/// What happened during one update of the joint schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub update: usize,
    pub accuracy: f64,
    pub d_updated: bool,
    pub g_updated: bool,
    pub mt_updated: bool,
    pub d_loss: f64,
    pub g_loss: Option<f64>,
    pub mt_loss: f64,
    pub d_checksum_before: String,
    pub d_checksum_after: String,
    pub g_checksum_before: String,
    /// After the adversarial G step (equal to `before` when it did not fire).
    pub g_checksum_after_adversarial: String,
    pub g_checksum_after_mt: String,
}

fn clip(stores: &mut [&mut ParamStore], max: Option<f64>) {
    if let Some(max) = max {
        let norm = stores.iter().map(|s| s.grad_sq_norm()).sum::<f64>().sqrt();
        if norm > max {
            for s in stores.iter_mut() {
                s.scale_grads(max / norm);
            }
        }
    }
}

fn check_finite(loss: f64, update: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Diverged { update, loss })
    }
}

/// One update: accuracy, gated D step, gated adversarial G step, then the
/// MT step through both encoders (G re-encodes the pseudo batch).
pub fn gan_update_step(
    model: &mut GanModel,
    opt: &mut GanOptimizers,
    natural: &[&SentencePair],
    pseudo: &[&SentencePair],
    spec: &GanSpec,
    clip_norm: Option<f64>,
    update: usize,
) -> Result<StepReport> {
    let d_checksum_before = model.disc.params.checksum(None);
    let g_checksum_before = model.pseudo.checksum(None);
    let (pn, pp) = model.discriminate(natural, pseudo)?;
    let accuracy = discriminator_accuracy(&pn, &pp);
    let gt = if spec.adversarial {
        gate(accuracy, spec)
    } else {
        Gate { update_d: false, update_g: false }
    };

    model.disc.params.zero_grad();
    let d_loss = check_finite(model.d_objective(natural, pseudo, gt.update_d)?, update)?;
    if gt.update_d {
        opt.d.step(&mut model.disc.params)?;
    }
    let d_checksum_after = model.disc.params.checksum(None);

    let mut g_loss = None;
    if gt.update_g {
        model.pseudo.zero_grad();
        g_loss = Some(check_finite(model.g_objective(pseudo, true)?, update)?);
        opt.g_adv.step(&mut model.pseudo)?;
    }
    let g_checksum_after_adversarial = model.pseudo.checksum(None);

    model.mt.params.zero_grad();
    model.pseudo.zero_grad();
    let mt_loss = check_finite(model.mt_objective(natural, pseudo, true)?, update)?;
    clip(&mut [&mut model.mt.params, &mut model.pseudo], clip_norm);
    opt.mt.step(&mut model.mt.params)?;
    opt.mt_g.step(&mut model.pseudo)?;
    model.mt.updates += 1;

    Ok(StepReport {
        update,
        accuracy,
        d_updated: gt.update_d,
        g_updated: gt.update_g,
        mt_updated: true,
        d_loss,
        g_loss,
        mt_loss,
        d_checksum_before,
        d_checksum_after,
        g_checksum_before,
        g_checksum_after_adversarial,
        g_checksum_after_mt: model.pseudo.checksum(None),
    })
}

/// Endless reshuffled passes over `0..n`.
struct Cycler {
    n: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    fn new(n: usize, seed: u64) -> Self {
        Cycler {
            n,
            order: Vec::new(),
            pos: 0,
            rng: rng::rng(seed),
        }
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k.min(self.n) {
            if self.pos == self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn pick<'a>(items: &'a [SentencePair], idx: &[usize]) -> Vec<&'a SentencePair> {
    idx.iter().map(|&i| &items[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub updates: usize,
    pub final_d_loss: f64,
    pub final_mt_loss: f64,
}

/// Trains only G (MT loss on pseudo data, rest of the translation model
/// frozen) and D (J^(D)).
pub fn pretrain(
    model: &mut GanModel,
    opt: &mut GanOptimizers,
    natural: &ParallelCorpus,
    pseudo: &ParallelCorpus,
    batch_size: usize,
    spec: &GanSpec,
) -> Result<PretrainReport> {
    let mut report = PretrainReport {
        updates: 0,
        final_d_loss: f64::NAN,
        final_mt_loss: f64::NAN,
    };
    if spec.pretrain_updates == 0 {
        return Ok(report);
    }
    if natural.is_empty() || pseudo.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut nc = Cycler::new(natural.len(), rng::derive_named(spec.seed, "pretrain-natural"));
    let mut pc = Cycler::new(pseudo.len(), rng::derive_named(spec.seed, "pretrain-pseudo"));
    model.mt.params.set_requires_grad(false);
    let result = (|| {
        for u in 1..=spec.pretrain_updates {
            let nb = pick(&natural.pairs, &nc.take(batch_size));
            let pb = pick(&pseudo.pairs, &pc.take(batch_size));
            model.disc.params.zero_grad();
            if spec.adversarial {
                report.final_d_loss = check_finite(model.d_objective(&nb, &pb, true)?, u)?;
                opt.d.step(&mut model.disc.params)?;
            }
            model.pseudo.zero_grad();
            report.final_mt_loss = check_finite(model.mt_objective(&[], &pb, true)?, u)?;
            opt.mt_g.step(&mut model.pseudo)?;
            report.updates = u;
        }
        Ok(())
    })();
    model.mt.params.set_requires_grad(true);
    result.map(|_| report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanReport {
    pub pretrain: PretrainReport,
    pub steps: Vec<StepReport>,
    pub history: History,
}

impl GanReport {
    /// Step reports as JSON lines.
    pub fn steps_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.steps {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Pretraining followed by the gated joint schedule.
pub fn gan_train(
    model: &mut GanModel,
    natural: &ParallelCorpus,
    pseudo: &ParallelCorpus,
    dev: &ParallelCorpus,
    train: &TrainSpec,
    spec: &GanSpec,
) -> Result<GanReport> {
    spec.validate()?;
    let mut opt = GanOptimizers::new(model, train.adam, spec);
    let pretrain = pretrain(model, &mut opt, natural, pseudo, train.batch_size, spec)?;
    let (steps, history) = gan_joint(model, natural, pseudo, dev, train, spec)?;
    Ok(GanReport { pretrain, steps, history })
}

/// The gated joint schedule with fresh optimizers, early-stopped on the
/// natural dev loss of the translation model.
pub fn gan_joint(
    model: &mut GanModel,
    natural: &ParallelCorpus,
    pseudo: &ParallelCorpus,
    dev: &ParallelCorpus,
    train: &TrainSpec,
    spec: &GanSpec,
) -> Result<(Vec<StepReport>, History)> {
    train.validate(&crate::nmt::GROUPS)?;
    spec.validate()?;
    if natural.is_empty() || pseudo.is_empty() || dev.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut opt = GanOptimizers::new(model, train.adam, spec);
    let mut nc = Cycler::new(natural.len(), rng::derive_named(train.seed, "gan-natural"));
    let mut pc = Cycler::new(pseudo.len(), rng::derive_named(train.seed, "gan-pseudo"));

    let dev0 = score_corpus(&model.mt, &dev.pairs)?.mean_token_xent;
    let mut history = History {
        points: vec![ValidationPoint {
            update: 0,
            dev_loss: dev0,
            train_loss: f64::NAN,
        }],
        updates: 0,
        epochs: 0,
        best_update: 0,
        best_dev_loss: dev0,
        stopped_early: false,
    };
    let mut best = model.clone();
    let mut steps = Vec::new();
    let (mut bad, mut run_loss, mut run_n) = (0usize, 0.0, 0usize);
    while history.updates < train.max_updates {
        let nb = pick(&natural.pairs, &nc.take(train.batch_size));
        let pb = pick(&pseudo.pairs, &pc.take(train.batch_size));
        let r = gan_update_step(model, &mut opt, &nb, &pb, spec, train.clip_norm, history.updates + 1)?;
        history.updates += 1;
        run_loss += r.mt_loss;
        run_n += 1;
        steps.push(r);
        if history.updates % train.validation_interval == 0 {
            let dev_loss = score_corpus(&model.mt, &dev.pairs)?.mean_token_xent;
            history.points.push(ValidationPoint {
                update: history.updates,
                dev_loss,
                train_loss: run_loss / run_n as f64,
            });
            (run_loss, run_n) = (0.0, 0);
            if dev_loss < history.best_dev_loss {
                history.best_dev_loss = dev_loss;
                history.best_update = history.updates;
                best = model.clone();
                bad = 0;
            } else {
                bad += 1;
                if bad >= train.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    history.epochs = history.updates * train.batch_size / natural.len().max(1);
    if train.keep_best {
        let updates = model.mt.updates;
        *model = best;
        model.mt.updates = updates;
    }
    Ok((steps, history))
}
