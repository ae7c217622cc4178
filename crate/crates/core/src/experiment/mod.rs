//! End-to-end runs: data → synthesis → selection → baseline → adaptation
//! → translation → evaluation, with every stage cached by content hash.

mod cache;
mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use cache::{cache_dir, sha256_file, Artifact, RunManifest, Runner, StageRecord, StageTiming, CACHE_ENV, DEFAULT_CACHE};
pub(crate) use config::Training;
pub use config::{
    BtQuality, BtSpec, DataFiles, DataSpec, ExperimentConfig, FusionSection, ModelDims, Scheme, Selection, TuneOn, CONFIG_VERSION,
};

use crate::align::{ibm1_train, select_by_monotonicity, select_random};
use crate::corpus::{load_parallel_with_marker, read_corpus, read_hypotheses, save_corpus, save_parallel, Corpus, ParallelCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{corpus_bleu, result_table, BleuResult};
use crate::gan::{gan_joint, pretrain, GanModel, GanOptimizers, GanSpec};
use crate::lm::{deep_fuse, lm_train, perplexity, FusedModel, LmConfig, RnnLm};
use crate::nmt::{self, fine_tune, score_corpus, Model, TrainSpec};
use crate::rng;
use crate::synth::{
    back_translate, forward_translate, make_copy, make_copy_dummies, make_copy_marked, noise_sources, ErrorKind, NoiseSpec,
    RuleTranslator, Translator,
};
use crate::toyworld::make_toy_world;

const OUT_TRAIN: &str = "out.train.tsv";
const OUT_DEV: &str = "out.dev.tsv";
const OUT_TEST: &str = "out.test.tsv";
const IN_MONO: &str = "in.mono.tgt";
const IN_SRC_MONO: &str = "in.mono.src";
const IN_DEV: &str = "in.dev.tsv";
const IN_TEST: &str = "in.test.tsv";
const BT_RULES: &str = "bt.rules.json";
const MODEL: &str = "model.bin";
const PSEUDO: &str = "pseudo.tsv";
const RESULTS: &str = "results.json";

/// Test-set BLEU and dev cross-entropy of the final system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub scheme: String,
    /// Keyed by test set (`in.test`, `out.test`).
    pub bleu: BTreeMap<String, BleuResult>,
    /// Mean per-token cross-entropy, keyed by dev set.
    pub dev_xent: BTreeMap<String, f64>,
}

impl RunResults {
    pub fn table_row(&self) -> (String, Vec<(String, BleuResult)>) {
        (self.scheme.clone(), self.bleu.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub root: PathBuf,
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub timings: Vec<StageTiming>,
    pub results: RunResults,
}

impl RunOutput {
    pub fn stage_path(&self, stage: &str, file: &str) -> Option<PathBuf> {
        self.manifest.stage(stage).map(|s| s.path(&self.root, file))
    }

    /// The final translation model of a run without fusion.
    pub fn final_model(&self) -> Result<Model> {
        let name = ["gan-joint", "finetune", "baseline"]
            .into_iter()
            .find(|n| self.manifest.stage(n).is_some())
            .ok_or_else(|| Error::Config("run has no model stage".into()))?;
        Model::load(&self.manifest.stage(name).expect("checked").path(&self.root, MODEL))
    }
}

/// What the data stage holds.
struct Data {
    out_train: ParallelCorpus,
    out_dev: ParallelCorpus,
    out_test: Option<ParallelCorpus>,
    in_mono: Corpus,
    in_src_mono: Option<Corpus>,
    in_dev: ParallelCorpus,
    in_test: ParallelCorpus,
    bt_rules: Option<RuleTranslator>,
}

impl Data {
    fn load(root: &Path, rec: &StageRecord, marker: &str) -> Result<Self> {
        let par = |f: &str| load_parallel_with_marker(&rec.path(root, f), marker);
        let opt_par = |f: &str| rec.has(f).then(|| par(f)).transpose();
        let mono = |f: &str| read_corpus(&rec.path(root, f), marker);
        Ok(Data {
            out_train: par(OUT_TRAIN)?,
            out_dev: par(OUT_DEV)?,
            out_test: opt_par(OUT_TEST)?,
            in_mono: mono(IN_MONO)?,
            in_src_mono: rec.has(IN_SRC_MONO).then(|| mono(IN_SRC_MONO)).transpose()?,
            in_dev: par(IN_DEV)?,
            in_test: par(IN_TEST)?,
            bt_rules: rec.has(BT_RULES).then(|| RuleTranslator::load(&rec.path(root, BT_RULES))).transpose()?,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_data(spec: &DataSpec, marker: &str, dir: &Path) -> Result<()> {
    match spec {
        DataSpec::Toyworld { spec } => {
            make_toy_world(spec)?.write(dir)?;
        }
        DataSpec::Files(f) => {
            let par = |src: &Path, name: &str| save_parallel(&load_parallel_with_marker(src, marker)?, &dir.join(name));
            par(&f.out_train, OUT_TRAIN)?;
            par(&f.out_dev, OUT_DEV)?;
            par(&f.in_dev, IN_DEV)?;
            par(&f.in_test, IN_TEST)?;
            if let Some(p) = &f.out_test {
                par(p, OUT_TEST)?;
            }
            save_corpus(&read_corpus(&f.in_mono, marker)?, &dir.join(IN_MONO))?;
            if let Some(p) = &f.in_src_mono {
                save_corpus(&read_corpus(p, marker)?, &dir.join(IN_SRC_MONO))?;
            }
            if let Some(p) = &f.bt_rules {
                RuleTranslator::load(p)?.save(&dir.join(BT_RULES))?;
            }
        }
    }
    Ok(())
}

fn data_key(spec: &DataSpec) -> Result<serde_json::Value> {
    match spec {
        DataSpec::Toyworld { .. } => Ok(serde_json::to_value(spec)?),
        DataSpec::Files(f) => {
            let mut hashes = BTreeMap::new();
            let mut f = f.clone();
            let all = [
                Some(&mut f.out_train),
                Some(&mut f.out_dev),
                Some(&mut f.in_mono),
                Some(&mut f.in_dev),
                Some(&mut f.in_test),
                f.out_test.as_mut(),
                f.in_src_mono.as_mut(),
                f.bt_rules.as_mut(),
            ];
            for (i, p) in all.into_iter().enumerate() {
                if let Some(p) = p {
                    hashes.insert(i, sha256_file(p)?);
                }
            }
            // Paths do not matter, contents do.
            Ok(json!({ "files": hashes }))
        }
    }
}

fn with_seed(spec: &TrainSpec, seed: u64) -> TrainSpec {
    TrainSpec { seed, ..spec.clone() }
}

/// Builds the pseudo-parallel corpus of the synthetic part of the scheme.
fn synthesize(scheme: &Scheme, cfg: &ExperimentConfig, data: &Data, src_vocab: &Vocabulary, baseline: Option<&Arc<Model>>, seed: u64) -> Result<(ParallelCorpus, usize)> {
    let backward = || -> Result<(ParallelCorpus, usize)> {
        let rules = data
            .bt_rules
            .clone()
            .ok_or_else(|| Error::Config("back-translation needs a rule translator".into()))?;
        let mut t = Translator::RuleBased(rules);
        if cfg.bt.quality == BtQuality::Bad {
            t = Translator::degraded("bt-bad", t, cfg.bt.error_rate, ErrorKind::Unk, rng::derive_named(seed, "bt-errors"))?;
        }
        let out = back_translate(&data.in_mono, &t);
        Ok((out.corpus, out.dropped))
    };
    let forward = || -> Result<(ParallelCorpus, usize)> {
        let sources = data
            .in_src_mono
            .as_ref()
            .ok_or_else(|| Error::Config("forward translation needs in-domain source text".into()))?;
        let model = baseline.ok_or_else(|| Error::Config("forward translation needs the baseline".into()))?;
        let t = Translator::Neural {
            id: "baseline".into(),
            model: Arc::clone(model),
            beam: cfg.beam,
        };
        let out = forward_translate(sources, &t);
        Ok((out.corpus, out.dropped))
    };
    match scheme {
        Scheme::Backtrans => backward(),
        Scheme::Fwdtrans => forward(),
        Scheme::Backfwdtrans => {
            let (mut a, da) = backward()?;
            let (b, db) = forward()?;
            a.extend(b);
            Ok((a, da + db))
        }
        Scheme::Copy => Ok((make_copy(&data.in_mono, src_vocab), 0)),
        Scheme::CopyMarked => Ok((make_copy_marked(&data.in_mono, &cfg.marker, src_vocab)?.0, 0)),
        Scheme::CopyDummies => Ok((make_copy_dummies(&data.in_mono), 0)),
        Scheme::Noise { base } => {
            let (c, d) = synthesize(base, cfg, data, src_vocab, baseline, seed)?;
            let spec = NoiseSpec {
                seed: rng::derive_named(seed, "noise"),
                ..cfg.noise
            };
            Ok((noise_sources(&c, &spec)?, d))
        }
        other => Err(Error::Config(format!("{other} does not synthesize data"))),
    }
}

enum System {
    Plain(Model),
    Fused(FusedModel),
}

impl System {
    fn translate(&self, c: &Corpus, beam: usize) -> Corpus {
        Corpus::new(
            c.iter()
                .map(|s| match self {
                    System::Plain(m) => m.translate(s, beam),
                    System::Fused(f) => f.translate(s, beam),
                })
                .collect(),
        )
    }

    fn xent(&self, c: &ParallelCorpus) -> Result<f64> {
        match self {
            System::Plain(m) => Ok(score_corpus(m, &c.pairs)?.mean_token_xent),
            System::Fused(f) => f.score(&c.pairs),
        }
    }
}

/// Runs (or reuses) every stage of `config` under `cache`, then writes
/// `runs/<config-hash>/manifest.json` and `timings.json` there.
pub fn run_experiment(config: &ExperimentConfig, cache: &Path) -> Result<RunOutput> {
    config.validate()?;
    let cfg = config;
    let marker = cfg.marker.as_str();
    let mut runner = Runner::new(cache, cfg.seed)?;
    let root = runner.root.clone();

    let data_rec = runner.stage("data", json!({ "data": data_key(&cfg.data)?, "marker": marker }), &[], |dir, _| {
        write_data(&cfg.data, marker, dir)
    })?;
    let data = Data::load(&root, &data_rec, marker)?;

    let vocab_rec = runner.stage("vocab", json!({ "marker": marker }), &[&data_rec], |dir, _| {
        let mut src: Vec<_> = data.out_train.pairs.iter().map(|p| &p.source).collect();
        src.extend(data.in_src_mono.iter().flat_map(|c| c.iter()));
        let mut tgt: Vec<_> = data.out_train.pairs.iter().map(|p| &p.target).collect();
        tgt.extend(data.in_mono.iter());
        Vocabulary::build(src, 1, marker).save(&dir.join("src.vocab.json"))?;
        Vocabulary::build(tgt, 1, marker).save(&dir.join("tgt.vocab.json"))
    })?;
    let src_vocab = Vocabulary::load(&vocab_rec.path(&root, "src.vocab.json"))?;
    let tgt_vocab = Vocabulary::load(&vocab_rec.path(&root, "tgt.vocab.json"))?;

    let synthetic = cfg.scheme.synthetic().cloned();
    let synth_config = |s: &Scheme| json!({ "scheme": s, "bt": cfg.bt, "noise": cfg.noise, "beam": cfg.beam, "marker": marker });
    let mut synth_rec = None;
    let run_synth = |runner: &mut Runner, s: &Scheme, inputs: &[&StageRecord], model: Option<&Arc<Model>>| {
        runner.stage("synthesize", synth_config(s), inputs, |dir, seed| {
            let (pseudo, dropped) = synthesize(s, cfg, &data, &src_vocab, model, seed)?;
            if pseudo.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            save_parallel(&pseudo, &dir.join(PSEUDO))?;
            write_json(&dir.join("synth.json"), &json!({ "pairs": pseudo.len(), "dropped": dropped }))
        })
    };
    if let Some(s) = synthetic.as_ref().filter(|s| !s.uses_forward_model()) {
        synth_rec = Some(run_synth(&mut runner, s, &[&data_rec, &vocab_rec], None)?);
    }

    let select_rec = match &cfg.selection {
        Selection::None => None,
        sel => Some(runner.stage("select", json!(sel), &[&data_rec], |dir, seed| {
            let picked = match sel {
                Selection::Random { budget } => select_random(&data.out_train, *budget, seed)?,
                Selection::Monotonic { budget, ibm1_iterations } => {
                    let table = ibm1_train(&data.out_train, *ibm1_iterations)?.table;
                    select_by_monotonicity(&data.out_train, &table, *budget)?
                }
                Selection::None => unreachable!(),
            };
            save_parallel(&picked, &dir.join(OUT_TRAIN))?;
            write_json(&dir.join("selection.json"), &json!({ "pairs": picked.len(), "source_tokens": picked.source_tokens() }))
        })?),
    };

    let mut base_inputs = vec![&data_rec, &vocab_rec];
    base_inputs.extend(select_rec.as_ref());
    let base_rec = runner.stage("baseline", json!({ "model": cfg.model, "train": cfg.train }), &base_inputs, |dir, seed| {
        let train = match &select_rec {
            Some(r) => load_parallel_with_marker(&r.path(&root, OUT_TRAIN), marker)?,
            None => data.out_train.clone(),
        };
        let mc = cfg.model.config(src_vocab.len(), tgt_vocab.len());
        let mut model = Model::new(mc, src_vocab.clone(), tgt_vocab.clone(), rng::derive_named(seed, "init"))?;
        let history = nmt::train(&mut model, &train, &data.out_dev, &with_seed(&cfg.train, seed))?;
        model.save(&dir.join(MODEL))?;
        write_json(&dir.join("history.json"), &history)
    })?;

    if let Some(s) = synthetic.as_ref().filter(|s| s.uses_forward_model()) {
        let model = Arc::new(Model::load(&base_rec.path(&root, MODEL))?);
        synth_rec = Some(run_synth(&mut runner, s, &[&data_rec, &vocab_rec, &base_rec], Some(&model))?);
    }
    let load_pseudo = |r: &StageRecord| load_parallel_with_marker(&r.path(&root, PSEUDO), marker);

    let model_rec = match cfg.scheme.training() {
        Training::None => base_rec.clone(),
        Training::FineTune => {
            let srec = synth_rec.as_ref().expect("synthetic scheme");
            let conf = json!({ "finetune": cfg.finetune, "options": cfg.finetune_options });
            runner.stage("finetune", conf, &[&data_rec, &base_rec, srec], |dir, seed| {
                let mut model = Model::load(&base_rec.path(&root, MODEL))?;
                let pseudo = load_pseudo(srec)?;
                let report = fine_tune(&mut model, &pseudo, &data.out_train, &data.in_dev, &with_seed(&cfg.finetune, seed), &cfg.finetune_options)?;
                model.save(&dir.join(MODEL))?;
                write_json(&dir.join("report.json"), &report)
            })?
        }
        Training::Gan => {
            let srec = synth_rec.as_ref().expect("synthetic scheme");
            let conf = json!({ "gan": cfg.gan, "batch_size": cfg.finetune.batch_size, "adam": cfg.finetune.adam });
            let pre = runner.stage("gan-pretrain", conf, &[&data_rec, &base_rec, srec], |dir, seed| {
                let base = Model::load(&base_rec.path(&root, MODEL))?;
                let pseudo = load_pseudo(srec)?;
                let spec = GanSpec { seed, ..cfg.gan.clone() };
                let mut gm = GanModel::new(base, &pseudo, &spec)?;
                let mut opt = GanOptimizers::new(&gm, cfg.finetune.adam, &spec);
                let report = pretrain(&mut gm, &mut opt, &data.out_train, &pseudo, cfg.finetune.batch_size, &spec)?;
                gm.save(&dir.join("gan"))?;
                write_json(&dir.join("pretrain.json"), &report)
            })?;
            let conf = json!({ "gan": cfg.gan, "finetune": cfg.finetune });
            runner.stage("gan-joint", conf, &[&data_rec, &pre, srec], |dir, seed| {
                let mut gm = GanModel::load(&pre.path(&root, "gan"))?;
                let pseudo = load_pseudo(srec)?;
                let spec = GanSpec {
                    seed: rng::derive_named(seed, "gan"),
                    ..cfg.gan.clone()
                };
                let (steps, history) = gan_joint(&mut gm, &data.out_train, &pseudo, &data.in_dev, &with_seed(&cfg.finetune, seed), &spec)?;
                gm.save(&dir.join("gan"))?;
                gm.mt.save(&dir.join(MODEL))?;
                let mut lines = String::new();
                for s in &steps {
                    lines.push_str(&serde_json::to_string(s)?);
                    lines.push('\n');
                }
                let p = dir.join("steps.jsonl");
                fs::write(&p, lines).map_err(|e| Error::io(&p, e))?;
                write_json(&dir.join("history.json"), &history)
            })?
        }
    };

    let system_rec = if cfg.scheme.fusion() {
        let lm_conf = json!({ "train": cfg.fusion.lm_train, "model": cfg.model });
        let lm_rec = runner.stage("lm-train", lm_conf, &[&data_rec, &vocab_rec], |dir, seed| {
            let lc = LmConfig {
                vocab_size: tgt_vocab.len(),
                embed_dim: cfg.model.embed_dim,
                hidden_dim: cfg.model.hidden_dim,
                init_scale: cfg.model.init_scale,
            };
            let mut lm = RnnLm::new(lc, tgt_vocab.clone(), rng::derive_named(seed, "init"))?;
            let dev = data.in_dev.targets();
            let history = lm_train(&mut lm, &data.in_mono, &dev, &with_seed(&cfg.fusion.lm_train, seed))?;
            lm.save(&dir.join("lm.bin"))?;
            write_json(&dir.join("history.json"), &history)?;
            write_json(&dir.join("perplexity.json"), &perplexity(&lm, &dev)?)
        })?;
        let mut inputs = vec![&data_rec, &model_rec, &lm_rec];
        let tune_pseudo = cfg.fusion.tune_on == TuneOn::Pseudo;
        if tune_pseudo {
            inputs.push(synth_rec.as_ref().ok_or_else(|| Error::Config("fusion tuning on pseudo data needs a synthetic scheme".into()))?);
        }
        let conf = json!({ "tune": cfg.fusion.tune, "fuse": cfg.fusion.fuse, "tune_on": cfg.fusion.tune_on });
        Some(runner.stage("fuse", conf, &inputs, |dir, seed| {
            let base = Model::load(&model_rec.path(&root, MODEL))?;
            let lm = RnnLm::load(&lm_rec.path(&root, "lm.bin"))?;
            let (tuning, dev) = if tune_pseudo {
                (load_pseudo(synth_rec.as_ref().expect("checked"))?, &data.in_dev)
            } else {
                (data.out_train.clone(), &data.out_dev)
            };
            let (fused, history) = deep_fuse(base, lm, &tuning, dev, &with_seed(&cfg.fusion.tune, seed), &cfg.fusion.fuse)?;
            fused.save(&dir.join("fused"))?;
            write_json(&dir.join("history.json"), &history)
        })?)
    } else {
        None
    };

    let final_rec = system_rec.as_ref().unwrap_or(&model_rec);
    let trans_rec = runner.stage("translate", json!({ "beam": cfg.beam }), &[&data_rec, final_rec], |dir, _| {
        let system = if system_rec.is_some() {
            System::Fused(FusedModel::load(&final_rec.path(&root, "fused"))?)
        } else {
            System::Plain(Model::load(&final_rec.path(&root, MODEL))?)
        };
        save_corpus(&system.translate(&data.in_test.sources(), cfg.beam), &dir.join("in.test.hyp"))?;
        if let Some(t) = &data.out_test {
            save_corpus(&system.translate(&t.sources(), cfg.beam), &dir.join("out.test.hyp"))?;
        }
        let xent = BTreeMap::from([("in.dev", system.xent(&data.in_dev)?), ("out.dev", system.xent(&data.out_dev)?)]);
        write_json(&dir.join("dev.json"), &xent)
    })?;

    let scheme_name = cfg.scheme.to_string();
    let eval_rec = runner.stage("evaluate", json!({ "smoothing": cfg.smoothing, "scheme": scheme_name }), &[&data_rec, &trans_rec], |dir, _| {
        let mut bleu = BTreeMap::new();
        let mut sets = vec![("in.test", &data.in_test)];
        sets.extend(data.out_test.as_ref().map(|t| ("out.test", t)));
        for (name, set) in sets {
            let hyp = read_hypotheses(&trans_rec.path(&root, &format!("{name}.hyp")), marker)?;
            bleu.insert(name.to_string(), corpus_bleu(&hyp, &set.targets(), cfg.smoothing)?);
        }
        let p = trans_rec.path(&root, "dev.json");
        let dev_xent: BTreeMap<String, f64> = serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
        let results = RunResults {
            scheme: scheme_name.clone(),
            bleu,
            dev_xent,
        };
        let table = result_table(&[results.table_row()]);
        let tp = dir.join("results.tsv");
        fs::write(&tp, table.tsv).map_err(|e| Error::io(&tp, e))?;
        write_json(&dir.join(RESULTS), &results)
    })?;
    let rp = eval_rec.path(&root, RESULTS);
    let results: RunResults = serde_json::from_str(&fs::read_to_string(&rp).map_err(|e| Error::io(&rp, e))?)?;

    let hash = cfg.hash()?;
    let manifest = RunManifest {
        version: CONFIG_VERSION,
        config_hash: hash.clone(),
        scheme: scheme_name,
        seed: cfg.seed,
        stages: runner.records.clone(),
    };
    let run_dir = root.join("runs").join(&hash[..16]);
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let manifest_path = run_dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    write_json(&run_dir.join("timings.json"), &runner.timings)?;
    Ok(RunOutput {
        root,
        manifest,
        manifest_path,
        timings: runner.timings,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::ToyWorldSpec;
    use crate::tensor::AdamConfig;

    fn tiny(scheme: &str, seed: u64) -> ExperimentConfig {
        let train = TrainSpec {
            batch_size: 16,
            validation_interval: 10,
            patience: 2,
            max_updates: 20,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            ..TrainSpec::default()
        };
        ExperimentConfig {
            seed,
            scheme: scheme.parse().unwrap(),
            data: DataSpec::Toyworld {
                spec: ToyWorldSpec {
                    out_train: 120,
                    in_mono: 60,
                    dev: 20,
                    test: 20,
                    nouns: 12,
                    adjectives: 6,
                    verbs: 8,
                    names: 4,
                    ..ToyWorldSpec::default()
                },
            },
            model: ModelDims {
                embed_dim: 8,
                hidden_dim: 8,
                attention_dim: 8,
                max_len: 30,
                init_scale: 0.1,
            },
            finetune: train.clone(),
            gan: GanSpec {
                pretrain_updates: 3,
                disc_hidden: 4,
                ..GanSpec::default()
            },
            fusion: FusionSection {
                lm_train: train.clone(),
                tune: train.clone(),
                ..FusionSection::default()
            },
            train,
            beam: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn baseline_has_no_synthesis() {
        let tmp = tempfile::tempdir().unwrap();
        let out = run_experiment(&tiny("baseline", 1), tmp.path()).unwrap();
        assert_eq!(out.manifest.stage_names(), ["data", "vocab", "baseline", "translate", "evaluate"]);
        assert!(out.results.bleu.contains_key("in.test"));
    }

    #[test]
    fn reruns_are_cached_and_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny("copy-marked+noise", 2);
        let a = run_experiment(&cfg, tmp.path()).unwrap();
        let first = fs::read(&a.manifest_path).unwrap();
        let b = run_experiment(&cfg, tmp.path()).unwrap();
        assert_eq!(first, fs::read(&b.manifest_path).unwrap());
        assert!(b.timings.iter().all(|t| t.cached));
        // A fresh cache reproduces the same artifacts.
        let tmp2 = tempfile::tempdir().unwrap();
        let c = run_experiment(&cfg, tmp2.path()).unwrap();
        assert_eq!(first, fs::read(&c.manifest_path).unwrap());
        for s in &c.manifest.stages {
            for art in &s.artifacts {
                assert_eq!(sha256_file(&tmp2.path().join(&art.path)).unwrap(), art.sha256);
            }
        }
    }

    #[test]
    fn gan_runs_pretrain_then_joint() {
        let tmp = tempfile::tempdir().unwrap();
        let out = run_experiment(&tiny("copy-marked+noise+gan", 3), tmp.path()).unwrap();
        let names = out.manifest.stage_names();
        let pre = names.iter().position(|n| *n == "gan-pretrain").unwrap();
        let joint = names.iter().position(|n| *n == "gan-joint").unwrap();
        assert!(pre < joint);
        assert!(names.iter().all(|n| *n != "finetune"));
        assert!(out.stage_path("gan-joint", "steps.jsonl").unwrap().exists());
    }

    #[test]
    fn fusion_and_forward_translation_stages() {
        let tmp = tempfile::tempdir().unwrap();
        let out = run_experiment(&tiny("fwdtrans+deep-fusion", 4), tmp.path()).unwrap();
        let names = out.manifest.stage_names();
        let base = names.iter().position(|n| *n == "baseline").unwrap();
        let synth = names.iter().position(|n| *n == "synthesize").unwrap();
        assert!(base < synth);
        assert!(names.contains(&"lm-train") && names.contains(&"fuse"));
    }

    #[test]
    fn selection_shares_the_data_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny("baseline", 5);
        cfg.selection = Selection::Monotonic {
            budget: 300,
            ibm1_iterations: 3,
        };
        let a = run_experiment(&cfg, tmp.path()).unwrap();
        cfg.selection = Selection::Random { budget: 300 };
        let b = run_experiment(&cfg, tmp.path()).unwrap();
        assert_eq!(a.manifest.stage("data").unwrap().key, b.manifest.stage("data").unwrap().key);
        assert_ne!(a.manifest.stage("select").unwrap().key, b.manifest.stage("select").unwrap().key);
        assert!(b.timings.iter().find(|t| t.name == "data").unwrap().cached);
    }

    #[test]
    fn stage_errors_are_tagged() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny("baseline", 6);
        cfg.selection = Selection::Random { budget: 1_000_000 };
        let err = run_experiment(&cfg, tmp.path()).unwrap_err();
        assert!(matches!(err, Error::Stage { ref stage, .. } if stage == "select"), "{err}");
    }
}
