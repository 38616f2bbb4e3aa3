//! Two-stage iterative pulse synthesis.
//!
//! Stage 1 drives the terminal state to the target: each iteration linearizes
//! the terminal map, solves the ridge-regularized least-squares program over
//! the admissible box, and applies the step. The ridge weight λ starts large
//! (scaled from the dominant singular value of the initial Jacobian), decays
//! geometrically whenever progress stalls, and is raised again with the step
//! rejected whenever a step would increase the error, which keeps the
//! accepted error trace non-increasing.
//!
//! Stage 2 lowers the control energy while pinning the reached terminal
//! state to first order: steps are constrained to the numerical kernel of the
//! projected Jacobian, the Jacobian is re-linearized every iteration, and the
//! exact re-propagated error is checked against a drift budget of ten times
//! the stage-1 tolerance; a violating step rolls back and stops the stage.

use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use thiserror::Error;

use crate::bragg::{self, BraggConfig, BraggError};
use crate::ensemble::MomentState;
use crate::propagator::{
    propagate, propagate_with_jacobian, real_embedding, ControlPulse, PropagatorError, TimeGrid,
};
use crate::qp::{self, ActiveSet, BoxBounds, QpError};
use crate::EnsembleModel;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Bragg(#[from] BraggError),
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("iteration diverged: error {current:.3e} exceeds 10x initial {initial:.3e}")]
    Diverged { initial: f64, current: f64 },
    #[error("random initialization needs finite bounds on every channel")]
    UnboundedInit,
}

/// Schedule and stopping parameters for both stages.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Initial ridge weight; `None` scales it from the initial Jacobian as
    /// 10 x (largest squared singular value).
    pub lambda_init: Option<f64>,
    pub lambda_decay: f64,
    pub lambda_min: f64,
    pub mu_init: f64,
    pub mu_decay: f64,
    pub mu_min: f64,
    /// Relative objective-improvement threshold that triggers decay.
    pub stall_threshold: f64,
    /// Stage-1 stop tolerance on the terminal error 1 - |<ψ_K|ψ_T>|^2.
    pub error_tolerance: f64,
    pub max_iterations_stage1: usize,
    pub max_iterations_stage2: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda_init: None,
            lambda_decay: 0.5,
            lambda_min: 1e-7,
            mu_init: 10.0,
            mu_decay: 0.5,
            mu_min: 1e-2,
            stall_threshold: 5e-2,
            error_tolerance: 1e-3,
            max_iterations_stage1: 400,
            max_iterations_stage2: 60,
            seed: 0,
        }
    }
}

impl SolverConfig {
    /// All configuration violations; an empty list means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut diags = Vec::new();
        if let Some(l) = self.lambda_init {
            if !(l > 0.0) {
                diags.push("lambda_init must be positive".into());
            }
            if self.lambda_min > l {
                diags.push("lambda_min must not exceed lambda_init".into());
            }
        }
        if !(self.lambda_decay > 0.0 && self.lambda_decay < 1.0) {
            diags.push(format!(
                "lambda_decay must lie in (0, 1), got {}",
                self.lambda_decay
            ));
        }
        if !(self.mu_decay > 0.0 && self.mu_decay < 1.0) {
            diags.push(format!("mu_decay must lie in (0, 1), got {}", self.mu_decay));
        }
        for (name, v) in [
            ("lambda_min", self.lambda_min),
            ("mu_init", self.mu_init),
            ("mu_min", self.mu_min),
            ("stall_threshold", self.stall_threshold),
            ("error_tolerance", self.error_tolerance),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                diags.push(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.mu_min > self.mu_init {
            diags.push("mu_min must not exceed mu_init".into());
        }
        if self.max_iterations_stage1 == 0 {
            diags.push("max_iterations_stage1 must be at least 1".into());
        }
        diags
    }

    fn check(&self) -> Result<(), SynthError> {
        let diags = self.validate();
        if diags.is_empty() {
            Ok(())
        } else {
            Err(SynthError::BadConfig(diags.join("; ")))
        }
    }

    /// Drift budget for the energy stage.
    pub fn stage2_drift_bound(&self) -> f64 {
        10.0 * self.error_tolerance
    }
}

/// Per-iteration record of the fidelity stage.
#[derive(Debug, Clone, Default)]
pub struct StageTrace {
    /// Terminal error 1 - |<ψ_K|ψ_T>|^2 after each iteration (index 0 is the
    /// initial pulse).
    pub errors: Vec<f64>,
    /// Phase-aligned moment-space surrogate ||ψ_K - ψ_T||^2.
    pub surrogates: Vec<f64>,
}

/// Combined outcome of one synthesis run.
#[derive(Debug, Clone)]
pub struct SynthesisReport {
    pub error_trace: Vec<f64>,
    pub surrogate_trace: Vec<f64>,
    /// Control energy ||u||^2 dt after each energy-stage iteration (index 0
    /// is the stage-1 output).
    pub energy_trace: Vec<f64>,
    pub final_pulse: ControlPulse,
    pub iterations_stage1: usize,
    pub iterations_stage2: usize,
    /// |exact error after stage 2 - error before| from re-propagation.
    pub stage2_error_drift: f64,
    pub wall_clock_seconds: f64,
    pub final_error: f64,
    /// Whether stage 1 reached the error tolerance.
    pub converged: bool,
}

/// Terminal error 1 - |<ψ_K|ψ_T>|^2.
pub fn terminal_error(psi_k: &Array1<C64>, psi_t: &MomentState) -> f64 {
    let ov: C64 = psi_k
        .iter()
        .zip(psi_t.coeffs.iter())
        .map(|(a, b)| a.conj() * b)
        .sum();
    (1.0 - ov.norm_sqr()).max(0.0)
}

/// Target with its global phase aligned to the current terminal state, so the
/// least-squares residual tracks the phase-insensitive error.
fn aligned_target(psi_k: &Array1<C64>, psi_t: &MomentState) -> Array1<C64> {
    let ov: C64 = psi_t
        .coeffs
        .iter()
        .zip(psi_k.iter())
        .map(|(t, k)| t.conj() * k)
        .sum();
    if ov.norm() < 1e-14 {
        psi_t.coeffs.clone()
    } else {
        let phase = ov / ov.norm();
        psi_t.coeffs.mapv(|z| z * phase)
    }
}

fn surrogate_error(psi_k: &Array1<C64>, aligned: &Array1<C64>) -> f64 {
    psi_k
        .iter()
        .zip(aligned.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum()
}

/// Box on the step so that the updated pulse stays inside its bounds.
fn step_bounds(pulse: &ControlPulse) -> Result<BoxBounds, QpError> {
    let k = pulse.grid().steps();
    let c = pulse.channels();
    let mut lower = Array1::<f64>::zeros(k * c);
    let mut upper = Array1::<f64>::zeros(k * c);
    for kk in 0..k {
        for cc in 0..c {
            let v = pulse.values()[[kk, cc]];
            lower[kk * c + cc] = (pulse.lower()[cc] - v).min(0.0);
            upper[kk * c + cc] = (pulse.upper()[cc] - v).max(0.0);
        }
    }
    BoxBounds::new(lower, upper)
}

/// Largest squared singular value of J, by power iteration on J'J.
fn largest_squared_singular_value(j: &Array2<f64>) -> f64 {
    let n = j.ncols();
    if n == 0 {
        return 1.0;
    }
    let mut v = Array1::<f64>::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut value = 0.0;
    for _ in 0..50 {
        let w = j.t().dot(&j.dot(&v));
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return 1.0;
        }
        value = norm;
        v = w.mapv(|x| x / norm);
    }
    value
}

/// Random admissible initial pulse: every sample uniform on the bottom tenth
/// of the admissible range, deterministic in the seed.
pub fn random_initial_pulse(
    grid: TimeGrid,
    lower: &Array1<f64>,
    upper: &Array1<f64>,
    seed: u64,
) -> Result<ControlPulse, SynthError> {
    if lower
        .iter()
        .chain(upper.iter())
        .any(|v| !v.is_finite())
    {
        return Err(SynthError::UnboundedInit);
    }
    let channels = lower.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array2::<f64>::zeros((grid.steps(), channels));
    for k in 0..grid.steps() {
        for c in 0..channels {
            let width = 0.1 * (upper[c] - lower[c]);
            values[[k, c]] = if width > 0.0 {
                lower[c] + rng.random_range(0.0..width)
            } else {
                lower[c]
            };
        }
    }
    Ok(ControlPulse::new(
        grid,
        values,
        lower.clone(),
        upper.clone(),
    )?)
}

/// Fidelity stage: iterate linearize -> box QP -> update until the terminal
/// error reaches tolerance or the iteration budget is spent. Returns the
/// best-so-far pulse and the per-iteration trace.
pub fn fidelity_stage(
    model: &EnsembleModel,
    pulse0: &ControlPulse,
    psi0: &MomentState,
    psi_t: &MomentState,
    config: &SolverConfig,
) -> Result<(ControlPulse, StageTrace), SynthError> {
    config.check()?;
    let mut pulse = pulse0.clone();
    let mut trace = StageTrace::default();
    let first = propagate(model, &pulse, psi0)?;
    let mut err = terminal_error(first.terminal(), psi_t);
    let initial_err = err;
    {
        let aligned = aligned_target(first.terminal(), psi_t);
        trace.errors.push(err);
        trace.surrogates.push(surrogate_error(first.terminal(), &aligned));
    }
    let mut lambda: Option<f64> = config.lambda_init;
    let lambda_cap_factor = 1e10;
    let mut lambda_ceiling = f64::INFINITY;
    let mut warm: Option<ActiveSet> = None;
    let mut stalled = 0usize;
    // Linearization cache, valid until a step is accepted.
    let mut linearized: Option<(Array2<f64>, Array1<f64>)> = None;
    for _it in 0..config.max_iterations_stage1 {
        if err <= config.error_tolerance {
            break;
        }
        if err > 10.0 * initial_err + 1e-12 {
            return Err(SynthError::Diverged {
                initial: initial_err,
                current: err,
            });
        }
        if linearized.is_none() {
            let (res, jac) = propagate_with_jacobian(model, &pulse, psi0)?;
            let psi_k = res.terminal();
            let aligned = aligned_target(psi_k, psi_t);
            linearized = Some(real_embedding(&jac, &psi_k.view(), &aligned.view()));
        }
        let (j_real, r_real) = linearized.as_ref().expect("linearization just computed");
        let lam = *lambda.get_or_insert_with(|| {
            let l = 10.0 * largest_squared_singular_value(j_real);
            l.max(config.lambda_min)
        });
        if lambda_ceiling.is_infinite() {
            lambda_ceiling = lam * lambda_cap_factor;
        }
        let bounds = step_bounds(&pulse)?;
        let (sol, active) = qp::solve_fidelity_qp(j_real, r_real, lam, &bounds, warm.as_ref())?;
        let trial = pulse.with_flat(&(&pulse.flat() + &sol.delta_u))?;
        let trial_res = propagate(model, &trial, psi0)?;
        let trial_err = terminal_error(trial_res.terminal(), psi_t);
        if std::env::var("BRAGGSYNTH_TRACE").is_ok() {
            let sn: f64 = sol.delta_u.iter().map(|v| v * v).sum::<f64>().sqrt();
            eprintln!(
                "it={} err={:.5e} trial={:.5e} lam={:.3e} step={:.3e} qp_it={} kkt={:.1e}",
                _it, err, trial_err, lam, sn, sol.iterations, sol.kkt_residual
            );
        }
        if trial_err <= err * (1.0 + 1e-12) + 1e-15 {
            // accepted step
            let improvement = (err - trial_err) / err.max(1e-300);
            pulse = trial;
            err = trial_err;
            warm = Some(active);
            let aligned_new = aligned_target(trial_res.terminal(), psi_t);
            trace.errors.push(err);
            trace
                .surrogates
                .push(surrogate_error(trial_res.terminal(), &aligned_new));
            linearized = None;
            if improvement < config.stall_threshold {
                let next = (lam * config.lambda_decay).max(config.lambda_min);
                if next == config.lambda_min && lam == config.lambda_min {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                lambda = Some(next);
            } else {
                stalled = 0;
            }
        } else {
            // rejected: tighten the linearization region and reuse the cached
            // Jacobian at the unchanged iterate; the raise outweighs one decay
            // so alternating accept/reject drifts toward more regularization
            lambda = Some((2.0 * lam / config.lambda_decay).min(lambda_ceiling));
            trace.errors.push(err);
            trace.surrogates.push(*trace.surrogates.last().unwrap());
            if lam >= lambda_ceiling {
                stalled += 1;
            }
        }
        if stalled > 25 {
            break;
        }
    }
    Ok((pulse, trace))
}

/// Per-iteration record of the energy stage.
#[derive(Debug, Clone, Default)]
pub struct EnergyTrace {
    /// Control energy after each iteration (index 0 is the input pulse).
    pub energies: Vec<f64>,
    /// |exact final error - exact input error|, from re-propagation.
    pub error_drift: f64,
}

/// Energy stage: shrink the control norm inside the numerical kernel of the
/// projected Jacobian, rolling back and stopping if the exact re-propagated
/// error drifts beyond ten times the stage-1 tolerance.
pub fn energy_stage(
    model: &EnsembleModel,
    pulse0: &ControlPulse,
    psi0: &MomentState,
    psi_t: &MomentState,
    config: &SolverConfig,
) -> Result<(ControlPulse, EnergyTrace), SynthError> {
    config.check()?;
    let mut pulse = pulse0.clone();
    let mut trace = EnergyTrace {
        energies: vec![pulse.energy()],
        error_drift: 0.0,
    };
    let base = propagate(model, &pulse, psi0)?;
    let err0 = terminal_error(base.terminal(), psi_t);
    let drift_bound = config.stage2_drift_bound();
    let mut mu = config.mu_init;
    let mut warm: Option<ActiveSet> = None;
    let mut err_now = err0;
    for _it in 0..config.max_iterations_stage2 {
        let (_res, jac) = propagate_with_jacobian(model, &pulse, psi0)?;
        let a_eq = qp::project_jacobian(&jac, &psi_t.coeffs.view())?;
        let bounds = step_bounds(&pulse)?;
        let flat = pulse.flat();
        let (sol, active) = qp::solve_energy_qp(&flat, Some(&a_eq), mu, &bounds, warm.as_ref())?;
        let step_size = sol.delta_u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if step_size < 1e-14 * (1.0 + flat.iter().map(|v| v * v).sum::<f64>().sqrt()) {
            // no usable kernel step at this μ; decay or stop
            if mu <= config.mu_min * (1.0 + 1e-12) {
                break;
            }
            mu = (mu * config.mu_decay).max(config.mu_min);
            continue;
        }
        let trial = pulse.with_flat(&(&flat + &sol.delta_u))?;
        let trial_res = propagate(model, &trial, psi0)?;
        let trial_err = terminal_error(trial_res.terminal(), psi_t);
        if (trial_err - err0).abs() > drift_bound {
            // Fidelity drifted beyond the budget: roll back and stop.
            break;
        }
        let before = *trace.energies.last().unwrap();
        let after = trial.energy();
        pulse = trial;
        err_now = trial_err;
        warm = Some(active);
        trace.energies.push(after);
        let rel_improvement = (before - after) / before.max(1e-300);
        if rel_improvement < config.stall_threshold {
            if mu <= config.mu_min * (1.0 + 1e-12) {
                break;
            }
            mu = (mu * config.mu_decay).max(config.mu_min);
        }
    }
    trace.error_drift = (err_now - err0).abs();
    Ok((pulse, trace))
}

/// Full two-stage synthesis from a given initial pulse.
pub fn synthesize(
    model: &EnsembleModel,
    pulse0: &ControlPulse,
    psi0: &MomentState,
    psi_t: &MomentState,
    config: &SolverConfig,
) -> Result<SynthesisReport, SynthError> {
    let start = Instant::now();
    let (p1, trace1) = fidelity_stage(model, pulse0, psi0, psi_t, config)?;
    let converged = trace1
        .errors
        .last()
        .map(|e| *e <= config.error_tolerance)
        .unwrap_or(false);
    let iterations_stage1 = trace1.errors.len().saturating_sub(1);
    let (p2, trace2) = energy_stage(model, &p1, psi0, psi_t, config)?;
    let final_res = propagate(model, &p2, psi0)?;
    let final_error = terminal_error(final_res.terminal(), psi_t);
    Ok(SynthesisReport {
        error_trace: trace1.errors,
        surrogate_trace: trace1.surrogates,
        iterations_stage2: trace2.energies.len().saturating_sub(1),
        energy_trace: trace2.energies,
        final_pulse: p2,
        iterations_stage1,
        stage2_error_drift: trace2.error_drift,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        final_error,
        converged,
    })
}

/// Warm-started ladder of beamsplitter syntheses: rung n0 reuses the final
/// pulse of rung n0 - 1 as its initialization (same time grid), with the
/// truncation order growing as 18 + 2 n0. Stops early if a rung misses the
/// stage-1 tolerance; the failing rung's report is included.
pub fn momentum_ladder(
    bragg_config: &BraggConfig,
    n0_target: usize,
    config: &SolverConfig,
) -> Result<Vec<SynthesisReport>, SynthError> {
    config.check()?;
    if n0_target < 1 {
        return Err(SynthError::BadConfig(
            "ladder target index must be ≥ 1".into(),
        ));
    }
    let grid = bragg_config.grid()?;
    let lower = Array1::from_elem(1, 0.0);
    let upper = Array1::from_elem(1, bragg_config.amplitude_bound);
    let mut pulse = random_initial_pulse(grid, &lower, &upper, config.seed)?;
    let mut reports = Vec::with_capacity(n0_target);
    for n0 in 1..=n0_target {
        let rung = BraggConfig {
            n0,
            truncation: bragg_config.truncation.map(|_| bragg_config.n_trunc().max(18 + 2 * n0)),
            ..bragg_config.clone()
        };
        let model = bragg::build_design_model(&rung)?;
        let psi0 = bragg::initial_state(&model)?;
        let psi_t = bragg::target_state(&rung, &model)?;
        let report = synthesize(&model, &pulse, &psi0, &psi_t, config)?;
        pulse = report.final_pulse.clone();
        let converged = report.converged;
        reports.push(report);
        if !converged {
            break;
        }
    }
    Ok(reports)
}
