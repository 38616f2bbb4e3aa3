use braggsynth::bragg::{self, BraggConfig};
use braggsynth::synth::{self, SolverConfig};
use ndarray::Array1;
use std::time::Instant;

// Per-node population/phase analysis of a converged robust pulse.
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let deg: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3);
    let iters: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(250);
    let n0 = 1usize;
    let cfg = BraggConfig::robust(n0, (-0.4, 0.4), (0.6, 1.4), (deg, deg));
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
    let sc = SolverConfig {
        error_tolerance: 1e-3,
        max_iterations_stage1: iters,
        seed: 1,
        ..SolverConfig::default()
    };
    let t0 = Instant::now();
    let (p1, tr) = synth::fidelity_stage(&model, &pulse0, &psi0, &psit, &sc).unwrap();
    println!(
        "stage1 err={:.4e} iters={} {:.0}s",
        tr.errors.last().unwrap(),
        tr.errors.len() - 1,
        t0.elapsed().as_secs_f64()
    );
    // node analysis via per-node single systems
    let nodes = braggsynth::bragg::design_nodes(&model);
    let res = braggsynth::propagator::propagate(&model, &p1, &psi0).unwrap();
    let tilde = braggsynth::bragg::to_node_blocks(&model, res.terminal());
    let p = model.dim_physical();
    let mut wsum = 0.0;
    let mut pop_w = 0.0;
    for (b, (node, w)) in nodes.iter().enumerate() {
        let amp = tilde[b * p + n0];
        let pop = amp.norm_sqr() / w; // normalized by node weight
        let phase = amp.arg();
        println!(
            "node {b:2} (d={:+.3}, g={:.3}) w={:.4} pop={:.4} phase={:+.3}",
            node[0], node[1], w, pop, phase
        );
        wsum += w;
        pop_w += w * pop;
    }
    println!("weight sum {:.4}; weighted population {:.4}", wsum, pop_w);
}
