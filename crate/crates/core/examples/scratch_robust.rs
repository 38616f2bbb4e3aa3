use braggsynth::bragg::{self, BraggConfig};
use braggsynth::synth::{self, SolverConfig};
use ndarray::Array1;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n0: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let deg: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3);
    let iters: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(150);
    let sampling: bool = args.get(4).map(|s| s == "sampling").unwrap_or(false);
    let seed: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1);
    let skip_stage2: bool = args.get(6).map(|s| s == "skip2").unwrap_or(false);
    let mut cfg = BraggConfig::robust(n0, (-0.4, 0.4), (0.6, 1.4), (deg, deg));
    if sampling {
        cfg.mode = braggsynth::DomainMode::Sampling;
    }
    let model = bragg::build_design_model(&cfg).unwrap();
    println!(
        "n0={} deg={} mode={:?} D={}",
        n0,
        deg,
        cfg.mode,
        model.dim_total()
    );
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
        max_iterations_stage1: iters,
        max_iterations_stage2: 30,
        seed,
        ..SolverConfig::default()
    };
    let t0 = Instant::now();
    let (p1, tr) = synth::fidelity_stage(&model, &pulse0, &psi0, &psit, &sc).unwrap();
    println!(
        "stage1: iters={} err={:.4e} time={:.1}s",
        tr.errors.len() - 1,
        tr.errors.last().unwrap(),
        t0.elapsed().as_secs_f64()
    );
    for (i, e) in tr.errors.iter().enumerate() {
        if i % 20 == 0 {
            print!(" [{i}]{e:.3e}");
        }
    }
    println!();
    let t1 = Instant::now();
    let (p2, etr) = if skip_stage2 {
        (p1.clone(), braggsynth::synth::EnergyTrace { energies: vec![p1.energy()], error_drift: 0.0 })
    } else {
        synth::energy_stage(&model, &p1, &psi0, &psit, &sc).unwrap()
    };
    println!(
        "stage2: iters={} energy {:.3} -> {:.3} drift={:.2e} time={:.1}s",
        etr.energies.len() - 1,
        etr.energies.first().unwrap(),
        etr.energies.last().unwrap(),
        etr.error_drift,
        t1.elapsed().as_secs_f64()
    );
    let t2 = Instant::now();
    let rep = bragg::robustness_grid(&p2, &cfg, (9, 9)).unwrap();
    println!(
        "grid 9x9: mean={:.4} max={:.4} min={:.2e} max_u={:.2} mean_u={:.2} max_du={:.2} mean_du={:.3} verif_time={:.1}s total={:.1} min",
        rep.mean_error,
        rep.max_error,
        rep.min_error,
        rep.max_u,
        rep.mean_u,
        rep.max_du,
        rep.mean_du,
        t2.elapsed().as_secs_f64(),
        t0.elapsed().as_secs_f64() / 60.0
    );
}
