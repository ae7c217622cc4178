use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use mtmono_core::align::{ibm1_train_with, mean, select_by_monotonicity, select_random, tau_distances};
use mtmono_core::corpus::{
    load_parallel, read_corpus, read_hypotheses, save_parallel, Corpus, ParallelCorpus, Vocabulary,
    DEFAULT_MARKER,
};
use mtmono_core::eval::{corpus_bleu, result_table, Smoothing};
use mtmono_core::experiment::{cache_dir, run_experiment, ExperimentConfig, Scheme};
use mtmono_core::gan::{gan_train as run_gan, GanModel, GanSpec};
use mtmono_core::lm::{deep_fuse, lm_train as run_lm, perplexity, FuseSpec, FusedModel, LmConfig, RnnLm};
use mtmono_core::nmt::{self, score_corpus, FineTuneSpec, Model};
use mtmono_core::stats::{length_ratio_report, token_type_stats, vocab_growth, vocab_growth_shuffled};
use mtmono_core::synth::{
    back_translate, forward_translate, make_copy, make_copy_dummies, make_copy_marked, noise_sources, NoiseSpec,
    RuleTranslator, Translator,
};
use mtmono_core::toyworld::{make_toy_world, ToyWorldSpec};
use serde::Serialize;

use crate::*;

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn is_tsv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "tsv")
}

fn mono(path: &Path) -> Result<Corpus> {
    read_corpus(path, DEFAULT_MARKER).with_context(|| format!("reading {}", path.display()))
}

fn parallel(path: &Path) -> Result<ParallelCorpus> {
    load_parallel(path).with_context(|| format!("reading {}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("loading model {}", path.display()))
}

pub fn toyworld(a: ToyworldArgs) -> Result<()> {
    let spec = ToyWorldSpec {
        seed: a.seed,
        out_train: a.out_train,
        in_mono: a.in_mono,
        dev: a.dev,
        test: a.test,
        reorder_rate: a.reorder_rate,
        ..ToyWorldSpec::default()
    };
    let bundle = make_toy_world(&spec)?;
    for p in bundle.write(&a.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn translator(a: &SynthArgs) -> Result<Translator> {
    match (&a.rules, &a.model) {
        (Some(r), None) => Ok(Translator::RuleBased(RuleTranslator::load(r)?)),
        (None, Some(m)) => Ok(Translator::Neural {
            id: m.display().to_string(),
            model: Arc::new(load_model(m)?),
            beam: a.beam,
        }),
        _ => bail!("scheme {} needs exactly one of --rules or --model", a.scheme),
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let input = read_corpus(&a.input, &a.marker)?;
    let vocab = match &a.src_vocab {
        Some(p) => Vocabulary::load(p)?,
        None => Vocabulary::with_marker(&a.marker),
    };
    let mut dropped = 0;
    let mut corpus = match a.scheme.as_str() {
        "copy" => make_copy(&input, &vocab),
        "copy-marked" => make_copy_marked(&input, &a.marker, &vocab)?.0,
        "copy-dummies" => make_copy_dummies(&input),
        "backtrans" | "fwdtrans" => {
            let t = translator(&a)?;
            let out = if a.scheme == "backtrans" { back_translate(&input, &t) } else { forward_translate(&input, &t) };
            dropped = out.dropped;
            out.corpus
        }
        other => bail!("unknown synthesis scheme {other:?}"),
    };
    if a.noise {
        corpus = noise_sources(&corpus, &NoiseSpec { p_drop: a.p_drop, k: a.k, seed: a.seed })?;
    }
    save_parallel(&corpus, &a.out)?;
    eprintln!("{} pairs written to {} ({dropped} dropped)", corpus.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct AlignReport {
    pairs: usize,
    iterations: usize,
    log_likelihoods: Vec<f64>,
    mean_tau: f64,
}

pub fn align(a: AlignArgs) -> Result<()> {
    let c = parallel(&a.corpus)?;
    let out = ibm1_train_with(&c, a.iterations, !a.no_null)?;
    let taus = tau_distances(&out.table, &c);
    if let Some(p) = &a.table {
        out.table.save(p)?;
    }
    if let Some(p) = &a.taus {
        let text: String = taus.iter().map(|t| format!("{t}\n")).collect();
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    print_json(&AlignReport {
        pairs: c.len(),
        iterations: a.iterations,
        log_likelihoods: out.log_likelihoods,
        mean_tau: mean(&taus),
    })
}

pub fn select(a: SelectArgs) -> Result<()> {
    let c = parallel(&a.corpus)?;
    let chosen = match a.strategy.as_str() {
        "monotonic" => {
            let table = ibm1_train_with(&c, a.iterations, true)?.table;
            select_by_monotonicity(&c, &table, a.budget)?
        }
        "random" => select_random(&c, a.budget, a.seed)?,
        other => bail!("unknown strategy {other:?} (monotonic or random)"),
    };
    save_parallel(&chosen, &a.out)?;
    eprintln!("{} of {} pairs, {} source tokens", chosen.len(), c.len(), chosen.source_tokens());
    Ok(())
}

#[derive(Serialize)]
struct StatsReport {
    sentences: usize,
    tokens: usize,
    types: usize,
    hapax: usize,
    type_token_ratio: f64,
    top_k: usize,
    top_k_mass: f64,
}

pub fn stats(a: StatsArgs) -> Result<()> {
    let pc = if is_tsv(&a.input) { Some(parallel(&a.input)?) } else { None };
    let c = match (&pc, a.side.as_str()) {
        (Some(p), "source") => p.sources(),
        (Some(p), "target") => p.targets(),
        (Some(_), other) => bail!("unknown side {other:?} (source or target)"),
        (None, _) => mono(&a.input)?,
    };
    let s = token_type_stats(&c, a.top_k);
    let report = StatsReport {
        sentences: c.len(),
        tokens: s.tokens,
        types: s.types,
        hapax: s.hapax,
        type_token_ratio: if s.tokens == 0 { 0.0 } else { s.types as f64 / s.tokens as f64 },
        top_k: s.k,
        top_k_mass: s.top_k_mass,
    };
    if let Some(prefix) = &a.out_prefix {
        write_json(&with_suffix(prefix, ".stats.json"), &report)?;
        let growth = if a.shuffle { vocab_growth_shuffled(&c, a.step, a.seed)? } else { vocab_growth(&c, a.step)? };
        fs::write(with_suffix(prefix, ".growth.tsv"), growth.to_tsv())?;
        if let Some(p) = &pc {
            fs::write(with_suffix(prefix, ".lengths.tsv"), length_ratio_report(p)?.to_tsv())?;
        }
    }
    print_json(&report)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let data = parallel(&a.train)?;
    let dev = parallel(&a.dev)?;
    let src = Vocabulary::build(data.iter().map(|p| &p.source), 1, DEFAULT_MARKER);
    let tgt = Vocabulary::build(data.iter().map(|p| &p.target), 1, DEFAULT_MARKER);
    let mut model = Model::new(a.dims.config(), src, tgt, a.seed)?;
    let history = nmt::train(&mut model, &data, &dev, &a.optim.spec(a.seed))?;
    model.save(&a.out)?;
    write_json(&with_suffix(&a.out, ".history.json"), &history)?;
    eprintln!("{} updates, best dev loss {:.4} at update {}", history.updates, history.best_dev_loss, history.best_update);
    Ok(())
}

pub fn finetune(a: FinetuneArgs) -> Result<()> {
    let mut model = load_model(&a.model)?;
    let inn = parallel(&a.in_domain)?;
    let out = parallel(&a.out_domain)?;
    let dev = parallel(&a.dev)?;
    let ft = FineTuneSpec {
        pretrain_epochs: a.pretrain_epochs,
        mix_out_domain: !a.no_mix,
    };
    let report = nmt::fine_tune(&mut model, &inn, &out, &dev, &a.optim.spec(a.seed), &ft)?;
    model.save(&a.out)?;
    write_json(&with_suffix(&a.out, ".history.json"), &report.joint)?;
    eprintln!(
        "{} new source entries, {} updates, best dev loss {:.4}",
        report.added_source_entries, report.joint.updates, report.joint.best_dev_loss
    );
    Ok(())
}

pub fn translate(a: TranslateArgs) -> Result<()> {
    let input = mono(&a.input)?;
    let lines: Vec<String> = match (&a.model, &a.fused) {
        (Some(m), _) => {
            let model = load_model(m)?;
            input.iter().map(|s| model.translate(s, a.beam).to_string()).collect()
        }
        (None, Some(f)) => {
            let model = FusedModel::load(f)?;
            input.iter().map(|s| model.translate(s, a.beam).to_string()).collect()
        }
        (None, None) => bail!("--model or --fused is required"),
    };
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let c = parallel(&a.corpus)?;
    match (&a.model, &a.fused) {
        (Some(m), _) => print_json(&score_corpus(&load_model(m)?, &c.pairs)?),
        (None, Some(f)) => print_json(&serde_json::json!({ "mean_token_xent": FusedModel::load(f)?.score(&c.pairs)? })),
        (None, None) => bail!("--model or --fused is required"),
    }
}

pub fn gan_train(a: GanTrainArgs) -> Result<()> {
    let base = load_model(&a.model)?;
    let natural = parallel(&a.natural)?;
    let pseudo = parallel(&a.pseudo)?;
    let dev = parallel(&a.dev)?;
    let spec = GanSpec {
        pretrain_updates: a.pretrain_updates,
        disc_hidden: a.disc_hidden,
        adversarial: !a.no_adversarial,
        seed: a.seed,
        ..GanSpec::default()
    };
    let mut gm = GanModel::new(base, &pseudo, &spec)?;
    let report = run_gan(&mut gm, &natural, &pseudo, &dev, &a.optim.spec(a.seed), &spec)?;
    gm.save(&a.out)?;
    fs::write(a.out.join("steps.jsonl"), report.steps_jsonl()?)?;
    write_json(&a.out.join("report.json"), &serde_json::json!({ "pretrain": report.pretrain, "history": report.history }))?;
    let d = report.steps.iter().filter(|s| s.d_updated).count();
    let g = report.steps.iter().filter(|s| s.g_updated).count();
    eprintln!("{} joint steps: D updated {d}, G updated {g}", report.steps.len());
    Ok(())
}

pub fn lm_train(a: LmTrainArgs) -> Result<()> {
    let data = mono(&a.train)?;
    let dev = mono(&a.dev)?;
    let (config, vocab) = match &a.model {
        Some(m) => {
            let m = load_model(m)?;
            (LmConfig::matching(&m), m.tgt_vocab.clone())
        }
        None => (
            LmConfig {
                vocab_size: 0,
                embed_dim: a.embed_dim,
                hidden_dim: a.hidden_dim,
                init_scale: 0.08,
            },
            Vocabulary::build(data.iter(), 1, DEFAULT_MARKER),
        ),
    };
    let mut lm = RnnLm::new(config, vocab, a.seed)?;
    let history = run_lm(&mut lm, &data, &dev, &a.optim.spec(a.seed))?;
    lm.save(&a.out)?;
    write_json(&with_suffix(&a.out, ".history.json"), &history)?;
    print_json(&perplexity(&lm, &dev)?)
}

pub fn fuse(a: FuseArgs) -> Result<()> {
    let base = load_model(&a.model)?;
    let lm = RnnLm::load(&a.lm).with_context(|| format!("loading language model {}", a.lm.display()))?;
    let tune = parallel(&a.tune)?;
    let dev = parallel(&a.dev)?;
    let spec = FuseSpec {
        gate: !a.no_gate,
        unfreeze_readout: a.unfreeze_readout,
    };
    let before = score_corpus(&base, &dev.pairs)?.mean_token_xent;
    let (fused, history) = deep_fuse(base, lm, &tune, &dev, &a.optim.spec(a.seed), &spec)?;
    fused.save(&a.out)?;
    write_json(&a.out.join("history.json"), &history)?;
    eprintln!("dev xent {before:.4} -> {:.4}", fused.score(&dev.pairs)?);
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let hyp = read_hypotheses(&a.hyp, DEFAULT_MARKER)?;
    let reference = if is_tsv(&a.reference) { parallel(&a.reference)?.targets() } else { mono(&a.reference)? };
    let smoothing: Smoothing = a.smoothing.parse()?;
    print_json(&corpus_bleu(&hyp, &reference, smoothing)?)
}

pub fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut config = match (&a.config, &a.toy) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(s)) => ExperimentConfig::toy(s.parse::<Scheme>()?, a.seed.unwrap_or(1)),
        (None, None) => bail!("--config or --toy is required"),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if a.print_config {
        println!("{}", config.to_json()?);
        return Ok(());
    }
    let cache = cache_dir(a.cache.as_deref());
    let out = run_experiment(&config, &cache)?;
    for t in &out.timings {
        eprintln!("{:<14} {:>8.1}s{}", t.name, t.seconds, if t.cached { "  (cached)" } else { "" });
    }
    let row = (out.results.scheme.clone(), out.results.bleu.iter().map(|(k, v)| (k.clone(), v.clone())).collect());
    print!("{}", result_table(&[row]).text);
    println!("manifest: {}", out.manifest_path.display());
    Ok(())
}
