//! Hot-path timings: step exponentials, ensemble propagation, terminal
//! Jacobians, the fidelity QP, and the signed verification simulation.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::prelude::*;

use braggsynth::bragg::{self, BraggConfig};
use braggsynth::propagator::{propagate, propagate_with_jacobian, ControlPulse};
use braggsynth::qp::{solve_fidelity_qp, BoxBounds};
use braggsynth::synth::random_initial_pulse;

fn deterministic_setup(steps: usize) -> (braggsynth::EnsembleModel, BraggConfig, ControlPulse) {
    let cfg = BraggConfig {
        steps,
        ..BraggConfig::deterministic(1)
    };
    let model = bragg::build_design_model(&cfg).unwrap();
    let pulse = random_initial_pulse(
        cfg.grid().unwrap(),
        &Array1::from_elem(1, 0.0),
        &Array1::from_elem(1, cfg.amplitude_bound),
        7,
    )
    .unwrap();
    (model, cfg, pulse)
}

fn robust_setup(steps: usize, degree: usize) -> (braggsynth::EnsembleModel, BraggConfig, ControlPulse) {
    let cfg = BraggConfig {
        steps,
        ..BraggConfig::robust(1, (-0.4, 0.4), (0.6, 1.4), (degree, degree))
    };
    let model = bragg::build_design_model(&cfg).unwrap();
    let pulse = random_initial_pulse(
        cfg.grid().unwrap(),
        &Array1::from_elem(1, 0.0),
        &Array1::from_elem(1, cfg.amplitude_bound),
        7,
    )
    .unwrap();
    (model, cfg, pulse)
}

fn bench_propagation(c: &mut Criterion) {
    let (model, _cfg, pulse) = deterministic_setup(128);
    let psi0 = bragg::initial_state(&model).unwrap();
    c.bench_function("propagate deterministic n0=1 K=128", |b| {
        b.iter(|| propagate(&model, &pulse, &psi0).unwrap())
    });
    let (rmodel, _rcfg, rpulse) = robust_setup(128, 2);
    let rpsi0 = bragg::initial_state(&rmodel).unwrap();
    c.bench_function("propagate robust deg2 n0=1 K=128", |b| {
        b.iter(|| propagate(&rmodel, &rpulse, &rpsi0).unwrap())
    });
}

fn bench_jacobian(c: &mut Criterion) {
    let (model, _cfg, pulse) = deterministic_setup(128);
    let psi0 = bragg::initial_state(&model).unwrap();
    c.bench_function("jacobian deterministic n0=1 K=128", |b| {
        b.iter(|| propagate_with_jacobian(&model, &pulse, &psi0).unwrap())
    });
}

fn bench_qp(c: &mut Criterion) {
    let n = 128;
    let m = 42;
    let j = Array2::from_shape_fn((m, n), |(i, k)| ((i * 31 + k * 17) as f64 * 0.37).sin() * 0.1);
    let r = Array1::from_shape_fn(m, |i| ((i * 13) as f64 * 0.21).cos());
    let bounds = BoxBounds::new(Array1::from_elem(n, -0.5), Array1::from_elem(n, 0.5)).unwrap();
    c.bench_function("fidelity qp n=128", |b| {
        b.iter_batched(
            || (),
            |_| solve_fidelity_qp(&j, &r, 1e-3, &bounds, None).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_signed_sim(c: &mut Criterion) {
    let (_, cfg, pulse) = deterministic_setup(128);
    c.bench_function("signed verification n0=1 K=128", |b| {
        b.iter(|| bragg::simulate_signed(&pulse, 0.2, 1.1, 1, cfg.n_trunc()).unwrap())
    });
}

criterion_group!(
    benches,
    bench_propagation,
    bench_jacobian,
    bench_qp,
    bench_signed_sim
);
criterion_main!(benches);
