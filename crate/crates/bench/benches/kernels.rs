use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bsch_bench::model;
use bsch_core::potential::ConvexPart;
use bsch_core::stationary::NewtonConfig;
use bsch_core::velocity::{Envelope, StreamProfile, SurfaceProfile, VelocityPair};
use bsch_core::*;

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assemble");
    for level in [2, 3, 4] {
        let mesh = build_disk_mesh(1.0, level).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(level), &mesh, |b, m| b.iter(|| assemble(m).unwrap()));
    }
    g.finish();
}

fn time_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("step");
    g.sample_size(20);
    for level in [3, 4] {
        let m = model(level);
        let mesh = build_disk_mesh(1.0, level).unwrap();
        let v = VelocityPair::new(&mesh, &m.ops, StreamProfile::Cellular { amplitude: 1.0 }, SurfaceProfile::Rotation { amplitude: 0.5 }, Envelope::Constant);
        let phi = m.random_initial(0.3, 0.9, 1).unwrap();
        let mut st = Stepper::new(&m, SchemeConfig { dt: 1e-3, ..Default::default() }, v).unwrap();
        let s0 = st.initial_state(&phi, 0.0).unwrap();
        g.bench_function(BenchmarkId::from_parameter(level), |b| b.iter(|| st.step(&s0).unwrap()));
    }
    g.finish();
}

fn stationary(c: &mut Criterion) {
    let m = model(3);
    let guess = m.random_initial(1e-3, 0.9, 5).unwrap();
    c.bench_function("newton/3", |b| b.iter(|| newton_solve(&m, &guess, NewtonConfig::default()).unwrap()));
}

fn resolvent(c: &mut Criterion) {
    let log = ConvexPart::LogEntropy { theta: 1.0 };
    let s: Vec<f64> = (0..1000).map(|i| -3.0 + 6e-3 * i as f64).collect();
    c.bench_function("yosida_derivative/1000", |b| b.iter(|| s.iter().map(|&x| log.yosida_derivative(1e-2, x)).sum::<f64>()));
}

criterion_group!(benches, assembly, time_step, stationary, resolvent);
criterion_main!(benches);
