use braggsynth::bragg::{self, BraggConfig};
use braggsynth::ensemble::{embed_hamiltonians, DomainMode, HamiltonianTerm, ParameterDomain, ParameterSpec};
use braggsynth::synth::{self, SolverConfig};
use ndarray::Array1;
use num_complex::Complex64 as C64;
use std::time::Instant;

// Robust design with uniform kinetic scaling (gamma1 H1 + gamma2 u H2),
// verified on the true signed (doppler, intensity) grid.
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n0: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let deg: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3);
    let iters: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(250);
    let kin_lo: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.6);
    let kin_hi: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1.4);
    let cfg = BraggConfig::robust(n0, (-0.4, 0.4), (0.6, 1.4), (deg, deg));
    let n_trunc = cfg.n_trunc();
    let mats = bragg::folded_matrices(n_trunc);
    let dom = ParameterDomain::new(
        vec![
            ParameterSpec::new(kin_lo, kin_hi, deg).unwrap(),
            ParameterSpec::new(0.6, 1.4, deg).unwrap(),
        ],
        DomainMode::Legendre,
    )
    .unwrap();
    let terms = vec![
        HamiltonianTerm::from_real(mats.h1.clone(), None, Some(0)).unwrap(),
        HamiltonianTerm::from_real(mats.h2.clone(), Some(0), Some(1)).unwrap(),
    ];
    let model = embed_hamiltonians(&terms, &dom).unwrap();
    println!("kinetic-scaling model n0={} deg={} D={} kin=[{},{}]", n0, deg, model.dim_total(), kin_lo, kin_hi);
    let mut e0 = Array1::<C64>::zeros(n_trunc + 1);
    e0[0] = C64::new(1.0, 0.0);
    let psi0 = model.embed_initial_state(e0.view()).unwrap();
    let mut et = Array1::<C64>::zeros(n_trunc + 1);
    et[n0] = C64::new(1.0, 0.0);
    let psit = model.embed_initial_state(et.view()).unwrap();
    let pulse0 = synth::random_initial_pulse(
        cfg.grid().unwrap(),
        &Array1::from_elem(1, 0.0),
        &Array1::from_elem(1, cfg.amplitude_bound),
        1,
    )
    .unwrap();
    let sc = SolverConfig {
        error_tolerance: 1e-3,
        max_iterations_stage1: iters,
        max_iterations_stage2: 30,
        seed: 1,
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
    let (p2, etr) = synth::energy_stage(&model, &p1, &psi0, &psit, &sc).unwrap();
    println!(
        "stage2: energy {:.2} -> {:.2} drift {:.1e}",
        etr.energies.first().unwrap(),
        etr.energies.last().unwrap(),
        etr.error_drift
    );
    let rep = bragg::robustness_grid(&p2, &cfg, (9, 9)).unwrap();
    println!(
        "signed grid 9x9: mean={:.4} max={:.4} min={:.2e} max_u={:.2} mean_u={:.2} max_du={:.2} mean_du={:.3} total={:.1} min",
        rep.mean_error, rep.max_error, rep.min_error, rep.max_u, rep.mean_u, rep.max_du, rep.mean_du,
        t0.elapsed().as_secs_f64() / 60.0
    );
}
