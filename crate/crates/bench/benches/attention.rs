use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use svf_bench::spikes;
use svf_core::attention::{space_time_attention, AttentionWeights};
use svf_core::cost::OpCounter;
use svf_core::{AttentionSpec, Score, Variant};

fn layouts(c: &mut Criterion) {
    let (t, n, d) = (8, 16, 32);
    let x = spikes(&[1, t, n, d], 0.3, 11);
    let mut g = c.benchmark_group("space_time_attention");
    for variant in Variant::ALL {
        let spec = AttentionSpec::new(variant, Score::Hamming, t, n, d, 2).unwrap();
        let weights = AttentionWeights::random(&spec, 3).unwrap();
        g.bench_with_input(
            BenchmarkId::from_parameter(variant),
            &variant,
            |bench, _| {
                bench.iter(|| {
                    space_time_attention(black_box(&x), &spec, &weights, &mut OpCounter::new())
                        .unwrap()
                })
            },
        );
    }
    g.finish();
}

fn scaling(c: &mut Criterion) {
    let mut g = c.benchmark_group("joint_over_t");
    for t in [4, 16, 64] {
        let spec = AttentionSpec::new(Variant::Joint, Score::Hamming, t, 16, 32, 1).unwrap();
        let weights = AttentionWeights::random(&spec, 5).unwrap();
        let x = spikes(&[1, t, 16, 32], 0.3, 13);
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |bench, _| {
            bench.iter(|| {
                space_time_attention(black_box(&x), &spec, &weights, &mut OpCounter::new()).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, layouts, scaling);
criterion_main!(benches);
