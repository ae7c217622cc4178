//! Shared fixtures for the benchmarks.

use mtmono_core::corpus::{ParallelCorpus, Vocabulary, DEFAULT_MARKER};
use mtmono_core::nmt::{Model, ModelConfig};
use mtmono_core::toyworld::{make_toy_world, ToyBundle, ToyWorldSpec};

pub fn bundle(out_train: usize) -> ToyBundle {
    make_toy_world(&ToyWorldSpec {
        out_train,
        in_mono: 200,
        dev: 50,
        test: 50,
        ..ToyWorldSpec::default()
    })
    .expect("valid toy spec")
}

/// A model of the toy-experiment size over the vocabularies of `c`.
pub fn model(c: &ParallelCorpus) -> Model {
    let src = Vocabulary::build(c.iter().map(|p| &p.source), 1, DEFAULT_MARKER);
    let tgt = Vocabulary::build(c.iter().map(|p| &p.target), 1, DEFAULT_MARKER);
    let config = ModelConfig {
        embed_dim: 24,
        hidden_dim: 48,
        attention_dim: 32,
        ..ModelConfig::new(0, 0)
    };
    Model::new(config, src, tgt, 1).expect("valid config")
}
