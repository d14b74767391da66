use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use laagrid_bench::pump_spec;
use laagrid_core::{
    apply_scenario, derivatives, find_equilibrium, ieee39, integrate_with_events, kron_reduce,
    ktas, AttackSpec, ERConfig, IntegratorConfig, Scenario,
};
use nalgebra::DMatrix;

fn rhs_single_eval(c: &mut Criterion) {
    for (name, net) in [("rhs_ktas", ktas()), ("rhs_ieee39", ieee39())] {
        let eq = find_equilibrium(&net, Scenario::Night).unwrap();
        let loads = apply_scenario(&net, Scenario::Night);
        c.bench_function(name, |b| {
            b.iter(|| derivatives(black_box(&eq), black_box(&loads), &net, Scenario::Night))
        });
    }
}

fn equilibrium(c: &mut Criterion) {
    let net = ieee39();
    c.bench_function("equilibrium_ieee39", |b| {
        b.iter(|| find_equilibrium(black_box(&net), Scenario::Evening))
    });
}

fn couple(b: &mut DMatrix<f64>, i: usize, j: usize, w: f64) {
    b[(i, j)] += w;
    b[(j, i)] += w;
    b[(i, i)] -= w;
    b[(j, j)] -= w;
}

fn kron(c: &mut Criterion) {
    // Ring plus chords: connected, so the junction block stays invertible.
    let n = 120;
    let keep: Vec<usize> = (0..30).collect();
    let mut b_full = DMatrix::zeros(n, n);
    for i in 0..n {
        couple(&mut b_full, i, (i + 1) % n, 5.0);
    }
    for i in (0..n).step_by(7) {
        couple(&mut b_full, i, (i + 13) % n, 2.0);
    }
    c.bench_function("kron_reduce_120_to_30", |b| {
        b.iter(|| kron_reduce(black_box(&b_full), &keep))
    });
}

fn simulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);

    let small = ktas();
    let er = ERConfig::base(&small);
    let cfg = IntegratorConfig::default();
    let eq = find_equilibrium(&small, Scenario::Night).unwrap();

    let quiet = AttackSpec::zero(&small, Scenario::Night);
    integrate_with_events(&eq, &quiet, &er, &small, &cfg).unwrap();
    g.bench_function("ktas_quiet_60s", |b| {
        b.iter(|| integrate_with_events(black_box(&eq), &quiet, &er, &small, &cfg))
    });

    let pump = pump_spec(&small, Scenario::Night, 10.0);
    integrate_with_events(&eq, &pump, &er, &small, &cfg).unwrap();
    g.bench_function("ktas_pump_60s", |b| {
        b.iter(|| integrate_with_events(black_box(&eq), &pump, &er, &small, &cfg))
    });

    let big = ieee39();
    let er39 = ERConfig::base(&big);
    let mut cfg39 = IntegratorConfig::default_for(&big);
    cfg39.t_max = 10.0;
    let eq39 = find_equilibrium(&big, Scenario::Evening).unwrap();
    let quiet39 = AttackSpec::zero(&big, Scenario::Evening);
    integrate_with_events(&eq39, &quiet39, &er39, &big, &cfg39).unwrap();
    g.bench_function("ieee39_quiet_10s", |b| {
        b.iter(|| integrate_with_events(black_box(&eq39), &quiet39, &er39, &big, &cfg39))
    });

    g.finish();
}

criterion_group!(benches, rhs_single_eval, equilibrium, kron, simulate);
criterion_main!(benches);
