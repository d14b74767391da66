use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use laagrid_core::sampler::density::log_sigma_density;
use laagrid_core::sampler::toy::{run_toy, ToyConfig, ToyTarget};
use laagrid_core::sampler::{run_chain, Algorithm, SamplerConfig};
use laagrid_core::{ktas, ERConfig, IntegratorConfig, Scenario};
use nalgebra::DVector;

fn density(c: &mut Criterion) {
    let sigma = DVector::from_fn(19, |i, _| 0.05 + 0.01 * i as f64);
    c.bench_function("sigma_log_density", |b| b.iter(|| log_sigma_density(black_box(&sigma))));
}

fn toy(c: &mut Criterion) {
    let target = ToyTarget::standard();
    let cfg = ToyConfig { proposals: 10_000, ..ToyConfig::default() };
    c.bench_function("toy_skipping_10k", |b| {
        b.iter(|| run_toy(black_box(&target), &cfg, Algorithm::Skipping))
    });
    c.bench_function("toy_rwm_10k", |b| {
        b.iter(|| run_toy(black_box(&target), &cfg, Algorithm::Rwm))
    });
}

fn chain(c: &mut Criterion) {
    let net = ktas();
    let er = ERConfig::base(&net);
    let mut integ = IntegratorConfig::default_for(&net);
    integ.t_max = 10.0;
    integ.stop_at_first_event = true;
    let cfg = SamplerConfig {
        proposals: 3,
        seed: 5,
        scenario: Some(Scenario::Night),
        ..SamplerConfig::default()
    };
    let mut g = c.benchmark_group("chain");
    g.sample_size(10);
    g.bench_function("ktas_3_proposals_10s_oracle", |b| {
        b.iter(|| run_chain(&net, &er, &integ, black_box(&cfg), 0))
    });
    g.finish();
}

criterion_group!(benches, density, toy, chain);
criterion_main!(benches);
