use criterion::{criterion_group, criterion_main, Criterion};
use ovmr_core::classic::stage_regressions;
use ovmr_core::*;

fn bench_classic(c: &mut Criterion) {
    let spec = ModelSpec::default();
    let cfg = SimConfig::with_levels(spec.clone(), 0.5, 1.0, 0.3);
    let h = simulate_population(&cfg, 2).unwrap();
    let one = partition(&h, &OverlapDesign::new(1.0, 400), 2).unwrap();
    let two = partition(&h, &OverlapDesign::new(0.0, 400), 2).unwrap();

    c.bench_function("2sls/400 rows", |b| b.iter(|| two_stage_least_squares(&one.a, &spec).unwrap()));
    c.bench_function("ivw/400+400 rows", |b| {
        b.iter(|| multivariable_ivw(&stage_regressions(&two.b, &two.c, &spec).unwrap()).unwrap())
    });
    c.bench_function("simulate/1000 rows", |b| b.iter(|| simulate_population(&cfg, 3).unwrap()));
}

criterion_group!(benches, bench_classic);
criterion_main!(benches);
