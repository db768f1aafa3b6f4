use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use svf_bench::{currents, spikes};
use svf_core::attention::{hamming_scores_linear, hamming_scores_quadratic};
use svf_core::neuron::lif_sequence;
use svf_core::tensor::signed_binary_matmul;
use svf_core::NeuronConfig;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("signed_binary_matmul");
    for d in [64, 256, 1024] {
        let a = spikes(&[64, d], 0.5, 1);
        let b = spikes(&[d, 64], 0.5, 2);
        g.bench_with_input(BenchmarkId::from_parameter(d), &d, |bench, _| {
            bench.iter(|| signed_binary_matmul(black_box(&a), black_box(&b)).unwrap())
        });
    }
    g.finish();
}

fn score_order(c: &mut Criterion) {
    let mut g = c.benchmark_group("hamming_scores");
    for l in [64, 256, 1024] {
        let (q, k, v) = (
            spikes(&[l, 32], 0.3, 3),
            spikes(&[l, 32], 0.3, 4),
            spikes(&[l, 32], 0.3, 5),
        );
        g.bench_with_input(BenchmarkId::new("linear", l), &l, |bench, _| {
            bench.iter(|| hamming_scores_linear(black_box(&q), &k, &v).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("quadratic", l), &l, |bench, _| {
            bench.iter(|| hamming_scores_quadratic(black_box(&q), &k, &v).unwrap())
        });
    }
    g.finish();
}

fn lif(c: &mut Criterion) {
    let x = currents(&[16, 4096], 6);
    let cfg = NeuronConfig::default();
    c.bench_function("lif_sequence_16x4096", |bench| {
        bench.iter(|| lif_sequence(black_box(&x), &cfg).unwrap())
    });
}

criterion_group!(benches, matmul, score_order, lif);
criterion_main!(benches);
