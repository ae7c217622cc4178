//! Finite-difference checks shared by the gradient tests and the
//! acceptance gate.
#![allow(dead_code)]

use mtmono_core::corpus::{ParallelCorpus, Provenance, Sentence, SentencePair, Vocabulary, DEFAULT_MARKER};
use mtmono_core::gan::{GanModel, GanSpec};
use mtmono_core::lm::{FuseSpec, FusedModel, LmConfig, RnnLm};
use mtmono_core::nmt::{Model, ModelConfig};
use mtmono_core::tensor::gradcheck::{self, GradCheckReport};
use mtmono_core::tensor::{Graph, ParamStore, Tensor, Var};
use mtmono_core::{rng, Result};
use rand::Rng;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
const PROBES: usize = 6;

fn uniform(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut rng::rng(seed))
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    let t = uniform(shape, seed);
    Tensor::new(shape.to_vec(), t.data().iter().map(|x| 0.5 + x.abs()).collect()).unwrap()
}

fn weights(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::rng(seed);
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

/// Checks `op` applied to the given inputs, reduced to a scalar with fixed
/// random weights so that every output coordinate matters.
fn check_op<F>(inputs: Vec<Tensor>, op: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("x{i}"), "inputs", t))
        .collect();
    let mut stores = [store];
    gradcheck::check(&mut stores, EPS, 64, |s, acc| {
        let mut g = Graph::new();
        let b = if acc { s[0].bind(&mut g) } else { s[0].bind_frozen(&mut g) };
        let vars: Vec<Var> = ids.iter().map(|&id| b[id]).collect();
        let out = op(&mut g, &vars)?;
        let w = weights(g.value(out).len(), 99);
        let loss = g.dot_const(out, &w)?;
        if acc {
            let mut grads = g.backward(loss)?;
            s[0].accumulate(&b, &mut grads);
        }
        Ok(g.value(loss).item())
    })
    .unwrap()
}

/// One report per tensor primitive.
pub fn primitive_checks() -> Vec<(&'static str, GradCheckReport)> {
    let u = uniform;
    vec![
        ("matmul", check_op(vec![u(&[2, 3], 1), u(&[3, 4], 2)], |g, v| g.matmul(v[0], v[1]))),
        ("add", check_op(vec![u(&[2, 3], 1), u(&[2, 3], 2)], |g, v| g.add(v[0], v[1]))),
        ("sub", check_op(vec![u(&[2, 3], 1), u(&[2, 3], 2)], |g, v| g.sub(v[0], v[1]))),
        ("mul", check_op(vec![u(&[2, 3], 1), u(&[2, 3], 2)], |g, v| g.mul(v[0], v[1]))),
        ("add_row", check_op(vec![u(&[3, 4], 1), u(&[4], 2)], |g, v| g.add_row(v[0], v[1]))),
        ("mul_col", check_op(vec![u(&[3, 4], 1), u(&[3, 1], 2)], |g, v| g.mul_col(v[0], v[1]))),
        ("affine", check_op(vec![u(&[2, 3], 1)], |g, v| Ok(g.affine(v[0], -1.5, 0.3)))),
        (
            "concat_cols",
            check_op(vec![u(&[2, 3], 1), u(&[2, 2], 2)], |g, v| g.concat_cols(&[v[0], v[1]])),
        ),
        ("slice_cols", check_op(vec![u(&[2, 5], 1)], |g, v| g.slice_cols(v[0], 1, 4))),
        ("tanh", check_op(vec![u(&[2, 3], 1)], |g, v| Ok(g.tanh(v[0])))),
        ("sigmoid", check_op(vec![u(&[2, 3], 1)], |g, v| Ok(g.sigmoid(v[0])))),
        ("log", check_op(vec![positive(&[2, 3], 1)], |g, v| Ok(g.log(v[0])))),
        ("clamp", check_op(vec![u(&[2, 3], 1)], |g, v| Ok(g.clamp(v[0], -2.0, 2.0)))),
        ("softmax_rows", check_op(vec![u(&[3, 4], 1)], |g, v| g.softmax_rows(v[0]))),
        ("gather_rows", check_op(vec![u(&[5, 3], 1)], |g, v| g.gather_rows(v[0], &[4, 0, 4, 2]))),
        (
            "embedding_lookup",
            check_op(vec![u(&[5, 3], 1)], |g, v| g.embedding_lookup(v[0], &[1, 1, 3])),
        ),
        ("reshape", check_op(vec![u(&[2, 6], 1)], |g, v| g.reshape(v[0], &[3, 4]))),
        (
            "stack_time",
            check_op(vec![u(&[2, 3], 1), u(&[2, 3], 2), u(&[2, 3], 3)], |g, v| g.stack_time(&[v[0], v[1], v[2]])),
        ),
        ("time_slice", check_op(vec![u(&[2, 3, 4], 1)], |g, v| g.time_slice(v[0], 1))),
        ("add_mid", check_op(vec![u(&[2, 3, 4], 1), u(&[2, 4], 2)], |g, v| g.add_mid(v[0], v[1]))),
        (
            "weighted_sum",
            check_op(vec![u(&[2, 3], 1), u(&[2, 3, 4], 2)], |g, v| g.weighted_sum(v[0], v[1])),
        ),
        ("sum", check_op(vec![u(&[2, 3], 1)], |g, v| Ok(g.sum(v[0])))),
        ("mean", check_op(vec![u(&[2, 3], 1)], |g, v| Ok(g.mean(v[0])))),
        ("nll_rows", check_op(vec![u(&[3, 5], 1)], |g, v| g.nll_rows(v[0], &[4, 0, 2]))),
        ("cross_entropy", check_op(vec![u(&[3, 5], 1)], |g, v| g.cross_entropy(v[0], &[1, 1, 3]))),
        (
            "add_n",
            check_op(vec![u(&[2, 3], 1), u(&[2, 3], 2), u(&[2, 3], 3)], |g, v| g.add_n(&[v[0], v[1], v[2]])),
        ),
    ]
}

/// Two sentence pairs over small vocabularies.
pub fn micro_batch() -> ParallelCorpus {
    let pair = |s: &str, t: &str| {
        SentencePair::new(Sentence::parse(s).unwrap(), Sentence::parse(t).unwrap(), Provenance::Natural)
    };
    ParallelCorpus::new(vec![pair("a b c d", "x y z"), pair("c a", "z w x y")])
}

fn vocabs(c: &ParallelCorpus) -> (Vocabulary, Vocabulary) {
    (
        Vocabulary::build(c.iter().map(|p| &p.source), 1, DEFAULT_MARKER),
        Vocabulary::build(c.iter().map(|p| &p.target), 1, DEFAULT_MARKER),
    )
}

pub fn micro_model(seed: u64) -> Model {
    let c = micro_batch();
    let (s, t) = vocabs(&c);
    let config = ModelConfig {
        embed_dim: 3,
        hidden_dim: 4,
        attention_dim: 3,
        max_len: 10,
        init_scale: 0.5,
        ..ModelConfig::new(0, 0)
    };
    Model::new(config, s, t, seed).unwrap()
}

pub fn nmt_check(seed: u64) -> GradCheckReport {
    let mut m = micro_model(seed);
    let batch = micro_batch();
    let refs: Vec<&SentencePair> = batch.iter().collect();
    let mut stores = [std::mem::take(&mut m.params)];
    gradcheck::check(&mut stores, EPS, PROBES, |s, acc| {
        std::mem::swap(&mut m.params, &mut s[0]);
        let l = if acc { m.accumulate_loss(&refs) } else { m.forward_loss(&batch.pairs) };
        std::mem::swap(&mut m.params, &mut s[0]);
        l
    })
    .unwrap()
}

fn micro_gan(seed: u64) -> (GanModel, ParallelCorpus, ParallelCorpus) {
    let natural = micro_batch();
    let pseudo = ParallelCorpus::new(vec![
        SentencePair::new(Sentence::parse("@trg@x @trg@y").unwrap(), Sentence::parse("x y").unwrap(), Provenance::CopyMarked),
        SentencePair::new(Sentence::parse("@trg@z").unwrap(), Sentence::parse("z").unwrap(), Provenance::CopyMarked),
    ]);
    let spec = GanSpec {
        disc_hidden: 3,
        seed,
        ..GanSpec::default()
    };
    let gm = GanModel::new(micro_model(seed), &pseudo, &spec).unwrap();
    (gm, natural, pseudo)
}

/// J^(D) with respect to the discriminator.
pub fn gan_d_check(seed: u64) -> GradCheckReport {
    let (mut gm, nat, pse) = micro_gan(seed);
    let (n, p): (Vec<_>, Vec<_>) = (nat.iter().collect(), pse.iter().collect());
    let mut stores = [std::mem::take(&mut gm.disc.params)];
    gradcheck::check(&mut stores, EPS, PROBES, |s, acc| {
        std::mem::swap(&mut gm.disc.params, &mut s[0]);
        let l = gm.d_objective(&n, &p, acc);
        std::mem::swap(&mut gm.disc.params, &mut s[0]);
        l
    })
    .unwrap()
}

/// J^(G) with respect to the pseudo-source encoder.
pub fn gan_g_check(seed: u64) -> GradCheckReport {
    let (mut gm, _, pse) = micro_gan(seed);
    let p: Vec<_> = pse.iter().collect();
    let mut stores = [std::mem::take(&mut gm.pseudo)];
    gradcheck::check(&mut stores, EPS, PROBES, |s, acc| {
        std::mem::swap(&mut gm.pseudo, &mut s[0]);
        let l = gm.g_objective(&p, acc);
        std::mem::swap(&mut gm.pseudo, &mut s[0]);
        l
    })
    .unwrap()
}

/// The joint translation loss with respect to the model and G.
pub fn gan_mt_check(seed: u64) -> GradCheckReport {
    let (mut gm, nat, pse) = micro_gan(seed);
    let (n, p): (Vec<_>, Vec<_>) = (nat.iter().collect(), pse.iter().collect());
    let mut stores = [std::mem::take(&mut gm.mt.params), std::mem::take(&mut gm.pseudo)];
    gradcheck::check(&mut stores, EPS, PROBES, |s, acc| {
        std::mem::swap(&mut gm.mt.params, &mut s[0]);
        std::mem::swap(&mut gm.pseudo, &mut s[1]);
        let l = gm.mt_objective(&n, &p, acc);
        std::mem::swap(&mut gm.mt.params, &mut s[0]);
        std::mem::swap(&mut gm.pseudo, &mut s[1]);
        l
    })
    .unwrap()
}

fn micro_lm(m: &Model, seed: u64) -> RnnLm {
    let config = LmConfig {
        hidden_dim: 3,
        ..LmConfig::matching(m)
    };
    RnnLm::new(config, m.tgt_vocab.clone(), seed).unwrap()
}

pub fn lm_check(seed: u64) -> GradCheckReport {
    let m = micro_model(seed);
    let mut lm = micro_lm(&m, seed + 1);
    let batch = micro_batch();
    let sents: Vec<&Sentence> = batch.iter().map(|p| &p.target).collect();
    let mut stores = [std::mem::take(&mut lm.params)];
    gradcheck::check(&mut stores, EPS, PROBES, |s, acc| {
        std::mem::swap(&mut lm.params, &mut s[0]);
        let l = if acc {
            lm.accumulate_loss(&sents)
        } else {
            lm.token_nlls(&sents).map(|rows| {
                let n: usize = rows.iter().map(Vec::len).sum();
                rows.iter().flatten().sum::<f64>() / n as f64
            })
        };
        std::mem::swap(&mut lm.params, &mut s[0]);
        l
    })
    .unwrap()
}

/// The fused loss with respect to the fusion parameters, which are first
/// moved away from their zero initialisation.
pub fn fusion_check(seed: u64) -> GradCheckReport {
    let m = micro_model(seed);
    let lm = micro_lm(&m, seed + 1);
    let spec = FuseSpec {
        gate: true,
        unfreeze_readout: false,
    };
    let mut f = FusedModel::new(m, lm, spec, seed + 2).unwrap();
    let mut r = rng::rng(seed + 3);
    for p in f.fusion.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|x| *x = r.gen_range(-0.5..0.5));
    }
    let batch = micro_batch();
    let refs: Vec<&SentencePair> = batch.iter().collect();
    let mut stores = [std::mem::take(&mut f.fusion)];
    gradcheck::check(&mut stores, EPS, PROBES, |s, acc| {
        std::mem::swap(&mut f.fusion, &mut s[0]);
        let l = if acc { f.accumulate_loss(&refs) } else { f.score(&batch.pairs) };
        std::mem::swap(&mut f.fusion, &mut s[0]);
        l
    })
    .unwrap()
}

/// Every check of the gradient-integrity criterion, by name.
pub fn all_gradient_checks() -> Vec<(String, GradCheckReport)> {
    let mut out: Vec<(String, GradCheckReport)> = primitive_checks().into_iter().map(|(n, r)| (n.to_string(), r)).collect();
    out.push(("encoder-decoder".into(), nmt_check(1)));
    out.push(("gan J(D)".into(), gan_d_check(2)));
    out.push(("gan J(G)".into(), gan_g_check(3)));
    out.push(("gan J(MT)".into(), gan_mt_check(4)));
    out.push(("language model".into(), lm_check(5)));
    out.push(("deep fusion".into(), fusion_check(6)));
    out
}

/// Largest |ours − sacrebleu| over the committed fixtures, with the worst
/// fixture's seed.
pub fn bleu_fixture_max_diff() -> (f64, u64, usize) {
    use mtmono_core::corpus::Corpus;
    use mtmono_core::eval::{corpus_bleu, Smoothing};
    let text = include_str!("../fixtures/bleu_sacrebleu.json");
    let v: serde_json::Value = serde_json::from_str(text).unwrap();
    let fixtures = v["fixtures"].as_array().unwrap();
    let lines = |x: &serde_json::Value| -> Corpus {
        let l: Vec<&str> = x.as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
        Corpus::from_lines(&l).unwrap()
    };
    let mut worst = (0.0, 0, fixtures.len());
    for f in fixtures {
        let ours = corpus_bleu(&lines(&f["hypotheses"]), &lines(&f["references"]), Smoothing::None).unwrap();
        let d = (ours.score - f["score"].as_f64().unwrap()).abs();
        if d >= worst.0 {
            worst = (d, f["seed"].as_u64().unwrap(), fixtures.len());
        }
    }
    worst
}

/// Outcome of fine-tuning with one freeze mask.
#[derive(Debug)]
pub struct FreezeOutcome {
    pub mask: Vec<String>,
    /// Every frozen group is bit-identical afterwards.
    pub frozen_identical: bool,
    /// Every group left trainable changed.
    pub others_changed: bool,
    pub updates: usize,
}

/// A small toy-world setup: (model, out-of-domain data, in-domain data,
/// in-domain dev).
pub fn finetune_setup(seed: u64) -> (Model, ParallelCorpus, ParallelCorpus, ParallelCorpus) {
    use mtmono_core::toyworld::{make_toy_world, ToyWorldSpec};
    let b = make_toy_world(&ToyWorldSpec {
        seed,
        out_train: 200,
        in_mono: 100,
        dev: 30,
        test: 10,
        ..ToyWorldSpec::default()
    })
    .unwrap();
    let src = Vocabulary::build(b.out_train.iter().chain(b.in_natural.iter()).map(|p| &p.source), 1, DEFAULT_MARKER);
    let tgt = Vocabulary::build(b.out_train.iter().chain(b.in_natural.iter()).map(|p| &p.target), 1, DEFAULT_MARKER);
    let config = ModelConfig {
        embed_dim: 8,
        hidden_dim: 12,
        attention_dim: 8,
        max_len: 40,
        ..ModelConfig::new(0, 0)
    };
    let m = Model::new(config, src, tgt, seed).unwrap();
    (m, b.out_train, b.in_natural, b.in_dev)
}

pub fn freeze_audit(seed: u64) -> Vec<FreezeOutcome> {
    use mtmono_core::nmt::{fine_tune, FineTuneSpec, TrainSpec, ATTENTION, DECODER, ENCODER, GROUPS, SRC_EMBEDDINGS};
    let (base, out, inn, dev) = finetune_setup(seed);
    let mut masks: Vec<Vec<String>> = [SRC_EMBEDDINGS, ENCODER, ATTENTION, DECODER].iter().map(|g| vec![g.to_string()]).collect();
    masks.push(GROUPS.iter().map(|g| g.to_string()).collect());
    masks
        .into_iter()
        .map(|mask| {
            let mut m = base.clone();
            let before: Vec<String> = GROUPS.iter().map(|g| m.params.checksum(Some(g))).collect();
            let spec = TrainSpec {
                batch_size: 16,
                validation_interval: 10,
                patience: 100,
                max_updates: 20,
                keep_best: false,
                freeze_mask: mask.clone(),
                seed,
                ..TrainSpec::default()
            };
            let report = fine_tune(&mut m, &inn, &out, &dev, &spec, &FineTuneSpec::default()).unwrap();
            let after: Vec<String> = GROUPS.iter().map(|g| m.params.checksum(Some(g))).collect();
            let frozen = |g: &str| mask.iter().any(|x| x == g);
            FreezeOutcome {
                frozen_identical: GROUPS.iter().zip(before.iter().zip(&after)).filter(|(g, _)| frozen(g)).all(|(_, (b, a))| b == a),
                others_changed: GROUPS.iter().zip(before.iter().zip(&after)).filter(|(g, _)| !frozen(g)).all(|(_, (b, a))| b != a),
                updates: report.joint.updates,
                mask,
            }
        })
        .collect()
}
