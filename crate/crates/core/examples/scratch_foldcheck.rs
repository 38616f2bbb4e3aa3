use braggsynth::bragg::{self, BraggConfig, SignedRamanNath};
use braggsynth::ensemble::{embed_hamiltonians, DomainMode, HamiltonianTerm, ParameterDomain, ParameterSpec};
use braggsynth::propagator::propagate;
use braggsynth::synth::{self, SolverConfig};
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

// For a converged deterministic pulse, compare the folded design model's
// predicted target population at (delta, gamma) against the signed truth.
fn main() {
    let n0 = 1usize;
    let cfg = BraggConfig::deterministic(n0);
    let model = bragg::build_design_model(&cfg).unwrap();
    let psi0 = bragg::initial_state(&model).unwrap();
    let psit = bragg::target_state(&cfg, &model).unwrap();
    let pulse0 = synth::random_initial_pulse(
        cfg.grid().unwrap(),
        &Array1::from_elem(1, 0.0),
        &Array1::from_elem(1, cfg.amplitude_bound),
        1,
    )
    .unwrap();
    let sc = SolverConfig { error_tolerance: 1e-4, max_iterations_stage1: 150, ..Default::default() };
    let (p1, tr) = synth::fidelity_stage(&model, &pulse0, &psi0, &psit, &sc).unwrap();
    println!("deterministic pulse err {:.2e}", tr.errors.last().unwrap());

    let n_trunc = cfg.n_trunc();
    let mats = bragg::folded_matrices(n_trunc);
    println!("{:>6} {:>6} | {:>12} {:>12} {:>12}", "delta", "gamma", "folded_pop", "signed_pop", "gap");
    for (delta, gamma) in [
        (0.0, 1.0), (0.1, 1.0), (0.2, 1.0), (0.3, 1.0), (0.4, 1.0),
        (0.0, 0.6), (0.2, 0.8), (0.4, 1.4), (0.3, 0.7),
    ] {
        // folded model at fixed (delta, gamma): drift H1 + delta*H1_dop, control gamma*H2
        let dom = ParameterDomain::new(
            vec![ParameterSpec::new(1.0, 1.0, 0).unwrap()],
            DomainMode::Legendre,
        ).unwrap();
        let drift = &mats.h1 + &mats.h1_doppler.mapv(|x| delta * x);
        let coupling = mats.h2.mapv(|x| gamma * x);
        let terms = vec![
            HamiltonianTerm::from_real(drift, None, None).unwrap(),
            HamiltonianTerm::from_real(coupling, Some(0), None).unwrap(),
        ];
        let m = embed_hamiltonians(&terms, &dom).unwrap();
        let mut e0 = Array1::<C64>::zeros(n_trunc + 1);
        e0[0] = C64::new(1.0, 0.0);
        let s0 = m.embed_initial_state(e0.view()).unwrap();
        let res = propagate(&m, &p1, &s0).unwrap();
        let folded_pop = res.terminal()[n0].norm_sqr();
        let sys = SignedRamanNath::new(n_trunc, delta, gamma).unwrap();
        let term = sys.terminal_amplitudes(&p1).unwrap();
        let signed_pop = term[sys.level_index(n0 as isize)].norm_sqr()
            + term[sys.level_index(-(n0 as isize))].norm_sqr();
        println!(
            "{:>6.2} {:>6.2} | {:>12.6} {:>12.6} {:>12.2e}",
            delta, gamma, folded_pop, signed_pop, (folded_pop - signed_pop).abs()
        );
    }
    let _ = Array2::<f64>::zeros((1, 1));
}
