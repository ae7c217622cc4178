mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mtmono_core::corpus::DEFAULT_MARKER;
use mtmono_core::nmt::ModelConfig;
use mtmono_core::tensor::AdamConfig;
use mtmono_core::TrainSpec;

#[derive(Parser)]
#[command(name = "mtmono", version, about = "Monolingual data for neural MT at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic toy-world dataset bundle.
    Toyworld(ToyworldArgs),
    /// Build a pseudo-parallel corpus from monolingual text.
    Synth(SynthArgs),
    /// Train IBM-1 and report alignment monotonicity.
    Align(AlignArgs),
    /// Select a token-budgeted subset of a parallel corpus.
    Select(SelectArgs),
    /// Token/type statistics, vocabulary growth and length ratios.
    Stats(StatsArgs),
    /// Train an encoder-decoder from scratch.
    Train(TrainArgs),
    /// Continue training a model on in-domain pseudo-parallel data.
    Finetune(FinetuneArgs),
    /// Translate a monolingual file with beam search.
    Translate(TranslateArgs),
    /// Teacher-forced cross-entropy of a model on a parallel corpus.
    Score(ScoreArgs),
    /// Adversarial training of a pseudo-source encoder.
    GanTrain(GanTrainArgs),
    /// Train a target-side recurrent language model.
    LmTrain(LmTrainArgs),
    /// Deep fusion of a translation model with a language model.
    Fuse(FuseArgs),
    /// Corpus BLEU of a hypothesis file against a reference file.
    Eval(EvalArgs),
    /// Run a full cached experiment pipeline.
    Experiment(ExperimentArgs),
}

#[derive(Args, Clone)]
struct Optim {
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    validation_interval: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 2000)]
    max_updates: usize,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Parameter groups to freeze (comma separated): src_embeddings,
    /// encoder, attention, decoder, tgt_embeddings.
    #[arg(long, value_delimiter = ',')]
    freeze: Vec<String>,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    /// Keep the last parameters instead of the best on dev.
    #[arg(long)]
    keep_last: bool,
}

impl Optim {
    fn spec(&self, seed: u64) -> TrainSpec {
        TrainSpec {
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            validation_interval: self.validation_interval,
            patience: self.patience,
            max_updates: self.max_updates,
            max_epochs: self.max_epochs,
            freeze_mask: self.freeze.clone(),
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            keep_best: !self.keep_last,
            seed,
        }
    }
}

#[derive(Args, Clone)]
struct Dims {
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 64)]
    attention_dim: usize,
    #[arg(long, default_value_t = 50)]
    max_len: usize,
    /// Half-width of the uniform initialisation.
    #[arg(long, default_value_t = 0.25)]
    init_scale: f64,
}

impl Dims {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            attention_dim: self.attention_dim,
            max_len: self.max_len,
            init_scale: self.init_scale,
            ..ModelConfig::new(0, 0)
        }
    }
}

#[derive(Args)]
struct ToyworldArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3000)]
    out_train: usize,
    #[arg(long, default_value_t = 1500)]
    in_mono: usize,
    #[arg(long, default_value_t = 200)]
    dev: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, default_value_t = 0.5)]
    reorder_rate: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// copy, copy-marked, copy-dummies, backtrans or fwdtrans.
    #[arg(long)]
    scheme: String,
    /// Monolingual input: targets, or sources for fwdtrans.
    #[arg(long)]
    input: PathBuf,
    /// Output TSV.
    #[arg(long)]
    out: PathBuf,
    /// Source vocabulary (JSON) used to segment copied words.
    #[arg(long)]
    src_vocab: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_MARKER)]
    marker: String,
    /// Rule translator (JSON) for backtrans/fwdtrans.
    #[arg(long, conflicts_with = "model")]
    rules: Option<PathBuf>,
    /// Neural translator checkpoint for backtrans/fwdtrans.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    /// Apply source noise after synthesis.
    #[arg(long)]
    noise: bool,
    #[arg(long, default_value_t = 0.1)]
    p_drop: f64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    /// Train without the NULL source word.
    #[arg(long)]
    no_null: bool,
    /// Write the translation table here.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Write one Kendall-tau distance per sentence here.
    #[arg(long)]
    taus: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// monotonic or random.
    #[arg(long, default_value = "monotonic")]
    strategy: String,
    /// Source-token budget.
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct StatsArgs {
    /// A monolingual file, or a TSV parallel corpus (see --side).
    #[arg(long)]
    input: PathBuf,
    /// For TSV input: source or target.
    #[arg(long, default_value = "target")]
    side: String,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    /// Sentences between growth-curve points.
    #[arg(long, default_value_t = 100)]
    step: usize,
    /// Shuffle sentences (with --seed) before the growth curve.
    #[arg(long)]
    shuffle: bool,
    /// Write PREFIX.stats.json, PREFIX.growth.tsv and, for TSV input,
    /// PREFIX.lengths.tsv.
    #[arg(long)]
    out_prefix: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Checkpoint path (a JSON sidecar is written next to it).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    dims: Dims,
    #[command(flatten)]
    optim: Optim,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    in_domain: PathBuf,
    #[arg(long)]
    out_domain: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pretrain_epochs: usize,
    /// Train on in-domain data only.
    #[arg(long)]
    no_mix: bool,
    #[command(flatten)]
    optim: Optim,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long, required_unless_present = "fused")]
    model: Option<PathBuf>,
    /// A fused model directory instead of --model.
    #[arg(long, conflicts_with = "model")]
    fused: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    beam: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long, required_unless_present = "fused")]
    model: Option<PathBuf>,
    #[arg(long, conflicts_with = "model")]
    fused: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct GanTrainArgs {
    /// Converged translation model.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    natural: PathBuf,
    #[arg(long)]
    pseudo: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Output directory for the GAN model, steps.jsonl and report.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pretrain_updates: usize,
    #[arg(long, default_value_t = 32)]
    disc_hidden: usize,
    /// Skip D and G adversarial updates (pseudo encoder trained by MT loss only).
    #[arg(long)]
    no_adversarial: bool,
    #[command(flatten)]
    optim: Optim,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct LmTrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Share the target vocabulary and dimensions of this model, as deep
    /// fusion requires.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
    #[command(flatten)]
    optim: Optim,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    #[arg(long)]
    tune: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Feed the LM state without the scalar gate.
    #[arg(long)]
    no_gate: bool,
    /// Also train the decoder output layer.
    #[arg(long)]
    unfreeze_readout: bool,
    #[command(flatten)]
    optim: Optim,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    hyp: PathBuf,
    /// Reference file; for a TSV corpus the target side is used.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// none or add-one.
    #[arg(long, default_value = "none")]
    smoothing: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment configuration (JSON).
    #[arg(long, required_unless_present = "toy")]
    config: Option<PathBuf>,
    /// Use the built-in toy configuration for this scheme instead.
    #[arg(long, conflicts_with = "config")]
    toy: Option<String>,
    #[arg(long, env = "MTMONO_CACHE")]
    cache: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Toyworld(a) => commands::toyworld(a),
        Command::Synth(a) => commands::synth(a),
        Command::Align(a) => commands::align(a),
        Command::Select(a) => commands::select(a),
        Command::Stats(a) => commands::stats(a),
        Command::Train(a) => commands::train(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Translate(a) => commands::translate(a),
        Command::Score(a) => commands::score(a),
        Command::GanTrain(a) => commands::gan_train(a),
        Command::LmTrain(a) => commands::lm_train(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Eval(a) => commands::eval(a),
        Command::Experiment(a) => commands::experiment(a),
    }
}
