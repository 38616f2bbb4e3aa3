use braggsynth::bragg::{self, BraggConfig};
use braggsynth::synth::{self, SolverConfig};
use ndarray::Array1;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n0: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1);
    let cfg = BraggConfig::deterministic(n0);
    let model = bragg::build_design_model(&cfg).unwrap();
    println!("n0={} N={} D={} K={}", n0, cfg.n_trunc(), model.dim_total(), cfg.steps);
    let psi0 = bragg::initial_state(&model).unwrap();
    let psit = bragg::target_state(&cfg, &model).unwrap();
    let grid = cfg.grid().unwrap();
    let pulse0 = synth::random_initial_pulse(
        grid,
        &Array1::from_elem(1, 0.0),
        &Array1::from_elem(1, cfg.amplitude_bound),
        seed,
    )
    .unwrap();
    let sc = SolverConfig {
        error_tolerance: 1e-3,
        max_iterations_stage1: 300,
        max_iterations_stage2: 40,
        seed,
        ..SolverConfig::default()
    };
    let t0 = Instant::now();
    let (p1, tr) = synth::fidelity_stage(&model, &pulse0, &psi0, &psit, &sc).unwrap();
    println!(
        "stage1: iters={} err={:.3e} time={:.1}s trace head {:?}",
        tr.errors.len() - 1,
        tr.errors.last().unwrap(),
        t0.elapsed().as_secs_f64(),
        &tr.errors[..tr.errors.len().min(8)]
    );
    let t1 = Instant::now();
    let (p2, etr) = synth::energy_stage(&model, &p1, &psi0, &psit, &sc).unwrap();
    println!(
        "stage2: iters={} energy {:.4} -> {:.4} drift={:.2e} time={:.1}s",
        etr.energies.len() - 1,
        etr.energies.first().unwrap(),
        etr.energies.last().unwrap(),
        etr.error_drift,
        t1.elapsed().as_secs_f64()
    );
    let maxu = p2.values().iter().fold(0.0f64, |a, v| a.max(*v));
    println!("max u = {:.3}", maxu);
    let err = bragg::simulate_signed(&p2, 0.0, 1.0, n0, cfg.n_trunc()).unwrap();
    println!("signed verification error at nominal: {:.3e}", err);
}
