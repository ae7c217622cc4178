use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mtmono_bench::{bundle, model};
use mtmono_core::align::{ibm1_train, tau_distances};
use mtmono_core::corpus::SentencePair;
use mtmono_core::eval::{corpus_bleu, Smoothing};
use mtmono_core::rng;
use mtmono_core::tensor::{Graph, ParamStore, Tensor};

fn tensor(c: &mut Criterion) {
    let mut r = rng::rng(1);
    let a = Tensor::uniform(&[32, 48], 1.0, &mut r);
    let mut store = ParamStore::new();
    let w = store.add("w", "bench", Tensor::uniform(&[48, 64], 1.0, &mut r));
    c.bench_function("matmul 32x48x64 forward+backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let x = g.constant(a.clone());
            let z = g.matmul(x, bound[w]).unwrap();
            let t = g.tanh(z);
            let l = g.sum(t);
            black_box(g.backward(l).unwrap());
        })
    });
}

fn nmt(c: &mut Criterion) {
    let b = bundle(200);
    let mut m = model(&b.out_train);
    let batch: Vec<&SentencePair> = b.out_train.iter().take(32).collect();
    c.bench_function("nmt loss+gradients, batch 32", |bench| bench.iter(|| black_box(m.accumulate_loss(&batch).unwrap())));
    let s = &b.in_test.pairs[0].source;
    c.bench_function("beam search, beam 3", |bench| bench.iter(|| black_box(m.translate(s, 3))));
}

fn alignment(c: &mut Criterion) {
    let b = bundle(500);
    c.bench_function("ibm1 10 iterations, 500 pairs", |bench| bench.iter(|| black_box(ibm1_train(&b.out_train, 10).unwrap())));
    let table = ibm1_train(&b.out_train, 10).unwrap().table;
    c.bench_function("viterbi tau, 500 pairs", |bench| bench.iter(|| black_box(tau_distances(&table, &b.out_train))));
}

fn bleu(c: &mut Criterion) {
    let b = bundle(1000);
    let refs = b.out_train.targets();
    let hyps = b.out_train.sources();
    c.bench_function("corpus bleu, 1000 sentences", |bench| bench.iter(|| black_box(corpus_bleu(&hyps, &refs, Smoothing::None).unwrap())));
}

criterion_group!(benches, tensor, nmt, alignment, bleu);
criterion_main!(benches);
