use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use filmflow_core::{implicit_euler_step, DiscreteState, Scenario, ScenarioKind, Smoothing, StepConfig, StepOperators};

fn step(c: &mut Criterion) {
    for (nx, nz) in [(8, 4), (16, 8)] {
        let mut s = Scenario::defaults(ScenarioKind::Couette);
        s.nx = nx;
        s.nz = nz;
        let pr = s.build().unwrap();
        let ops = StepOperators::new(&pr);
        let prev = DiscreteState::zero(&pr);
        let reg = Smoothing {
            eps: 1e-3,
            eta: 1e-8,
            delta: 1e-4,
        };
        let cfg = StepConfig::new(0.1);
        c.bench_function(&format!("implicit euler step {nx}x{nz}"), |b| {
            b.iter(|| implicit_euler_step(&pr, &ops, black_box(&prev), None, reg, &cfg, None).unwrap())
        });
    }
}

criterion_group!(benches, step);
criterion_main!(benches);
