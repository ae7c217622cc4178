use mtmono_core::corpus::{ParallelCorpus, Sentence, SentencePair, Vocabulary, DEFAULT_MARKER};
use mtmono_core::nmt::{self, Model, ModelConfig, TrainSpec};
use mtmono_core::tensor::AdamConfig;
use rand::Rng;

fn identity_corpus(n: usize, types: usize, seed: u64) -> ParallelCorpus {
    let mut r = mtmono_core::rng::rng(seed);
    let pairs = (0..n)
        .map(|_| {
            let len = r.gen_range(3..9);
            let words: Vec<String> = (0..len).map(|_| format!("w{}", r.gen_range(0..types))).collect();
            let s = Sentence::from_words(&words).unwrap();
            SentencePair::new(s.clone(), s, mtmono_core::corpus::Provenance::Natural)
        })
        .collect();
    ParallelCorpus::new(pairs)
}

fn small_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        hidden_dim: 32,
        attention_dim: 32,
        max_len: 20,
        ..ModelConfig::new(0, 0)
    }
}

#[test]
fn identity_task_is_learned() {
    let train = identity_corpus(2000, 50, 1);
    let dev = identity_corpus(100, 50, 2);
    let vocab = Vocabulary::build(train.iter().map(|p| &p.source), 1, DEFAULT_MARKER);
    let mut m = Model::new(small_config(), vocab.clone(), vocab, 3).unwrap();
    let spec = TrainSpec {
        batch_size: 32,
        adam: AdamConfig { lr: 0.01, ..AdamConfig::default() },
        validation_interval: 250,
        patience: 4,
        max_updates: 2000,
        ..TrainSpec::default()
    };
    let t = std::time::Instant::now();
    let h = nmt::train(&mut m, &train, &dev, &spec).unwrap();
    eprintln!("{:?} in {:?}", h.points, t.elapsed());
    let score = nmt::score_corpus(&m, &dev.pairs).unwrap();
    assert!(score.mean_token_xent < 0.2, "{score:?}");
    assert!(h.points.iter().all(|p| h.best_dev_loss <= p.dev_loss));
    let mut correct = 0;
    for p in dev.iter().take(20) {
        if m.translate(&p.source, 3) == p.target {
            correct += 1;
        }
    }
    assert!(correct >= 15, "{correct}/20 exact copies");
}
