use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use filmflow_core::discretization::{assemble_friction, assemble_viscous};
use filmflow_core::{Scenario, ScenarioKind};

fn viscous(c: &mut Criterion) {
    for (nx, nz) in [(8, 4), (16, 8)] {
        let mut s = Scenario::defaults(ScenarioKind::Coupled);
        s.nx = nx;
        s.nz = nz;
        let pr = s.build().unwrap();
        let v = pr.space.interpolate(|p| [p[1] * (1.0 - p[1]), 0.1 * p[0]]);
        c.bench_function(&format!("viscous residual+jacobian {nx}x{nz}"), |b| {
            b.iter(|| assemble_viscous(&pr, black_box(&v), Some(&v), 1e-2, 1e-8, 0.5, true).unwrap())
        });
        c.bench_function(&format!("friction residual+jacobian {nx}x{nz}"), |b| {
            b.iter(|| assemble_friction(&pr, black_box(&v), 1e-4, 0.5, true))
        });
    }
}

criterion_group!(benches, viscous);
criterion_main!(benches);
