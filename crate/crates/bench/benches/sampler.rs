use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ovmr_core::model::log_joint;
use ovmr_core::*;

fn dataset(overlap: f64) -> MrDataset {
    let cfg = SimConfig::with_levels(ModelSpec::default(), 0.5, 1.0, 0.3);
    let h = simulate_population(&cfg, 1).unwrap();
    partition(&h, &OverlapDesign::new(overlap, 400), 1).unwrap().merged().unwrap()
}

fn bench_sampler(c: &mut Criterion) {
    let spec = ModelSpec::default();
    let priors = PriorSpec::default();
    let data = dataset(0.5);
    let state = init_state(&data, &spec, &priors, 0).unwrap();

    c.bench_function("log_joint/600 rows", |b| {
        b.iter(|| log_joint(black_box(&state), &data, &spec, &priors).unwrap())
    });

    let settings = ChainSettings::default();
    c.bench_function("gibbs sweep/600 rows", |b| {
        let mut s = state.clone();
        let mut rng = RngStream::new(0, 0).rng();
        b.iter(|| update_parameters(&mut s, &data, &spec, &priors, &settings, &mut rng).unwrap())
    });

    let mut group = c.benchmark_group("chain of 100 iterations");
    group.sample_size(10);
    for overlap in [1.0, 0.0] {
        let data = dataset(overlap);
        let settings = ChainSettings {
            n_iterations: 50,
            n_warmup: 50,
            ..ChainSettings::default()
        };
        group.bench_function(format!("overlap {overlap}"), |b| {
            b.iter(|| run_chain(&data, &spec, &priors, &settings).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sampler);
criterion_main!(benches);
