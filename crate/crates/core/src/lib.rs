//! Neural machine translation with in-domain monolingual data: synthetic
//! pseudo-parallel corpora, monotonicity-based selection, GAN-style domain
//! adaptation and deep fusion with a target language model, on a small
//! reverse-mode autodiff engine.

pub mod align;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gan;
pub mod lm;
pub mod nmt;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod toyworld;
pub mod train;

pub use corpus::{Corpus, ParallelCorpus, Provenance, Sentence, SentencePair, Token, Vocabulary};
pub use error::{Error, Result};
pub use eval::{corpus_bleu, BleuResult, Smoothing};
pub use experiment::{run_experiment, ExperimentConfig, RunManifest, Scheme};
pub use nmt::{Model, ModelConfig};
pub use train::{History, TrainSpec};
