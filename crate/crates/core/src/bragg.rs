//! Bragg beamsplitter design model and verification oracles.
//!
//! The design model works in the folded nonnegative-momentum basis: a
//! diagonal kinetic matrix, a diagonal linear Doppler term, and a tridiagonal
//! two-photon coupling whose first element carries the √2 factor from folding
//! the n = ±1 levels onto n = 1. Verification always runs on the signed
//! momentum ladder (2N+1 levels), which keeps the Doppler asymmetry exact;
//! the folded model is never trusted for off-nominal parameters.
//!
//! Units are dimensionless throughout: time in units of 1/ω_r, control
//! amplitude in units of ω_r.

use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use std::time::Instant;
use thiserror::Error;

use crate::ensemble::{
    embed_hamiltonians, DomainMode, EnsembleError, EnsembleModel, HamiltonianTerm, MomentState,
    ParameterDomain, ParameterSpec,
};
use crate::filter::{butterworth_lowpass, FilterError};
use crate::propagator::{ControlPulse, PropagatorError, TimeGrid};
use crate::spectral::{propagate_states, HermMat, LinearHamiltonian};

#[derive(Debug, Error)]
pub enum BraggError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("Doppler detuning must satisfy |k/k0| < 2, got {0}")]
    BadDoppler(f64),
    #[error("intensity factor must be positive, got {0}")]
    BadIntensity(f64),
    #[error("target index {n0} exceeds truncation order {n_trunc}")]
    TargetBeyondTruncation { n0: usize, n_trunc: usize },
    #[error("signed simulation norm drift {0:.3e} exceeds 1e-8")]
    NormDrift(f64),
    #[error("operation requires a single-channel pulse, got {0} channels")]
    SingleChannelRequired(usize),
}

/// Design parameters for one beamsplitter synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct BraggConfig {
    /// Target half-momentum index: the target state is |±2 n0 ħk⟩.
    pub n0: usize,
    /// Momentum-basis truncation order N; `None` selects 18 + 2 n0.
    pub truncation: Option<usize>,
    /// Design interval for the Doppler detuning δ = k/k0.
    pub doppler_interval: (f64, f64),
    /// Design interval for the intensity factor γ.
    pub intensity_interval: (f64, f64),
    /// Expansion degree (or sample count - 1) per parameter (δ, γ).
    pub degrees: (usize, usize),
    pub mode: DomainMode,
    /// Maximum control amplitude u/ω_r.
    pub amplitude_bound: f64,
    /// Dimensionless horizon ω_r T.
    pub horizon: f64,
    /// Number of piecewise-constant steps K.
    pub steps: usize,
}

impl BraggConfig {
    /// Deterministic design at nominal parameters (δ = 0, γ = 1).
    pub fn deterministic(n0: usize) -> Self {
        Self {
            n0,
            truncation: None,
            doppler_interval: (0.0, 0.0),
            intensity_interval: (1.0, 1.0),
            degrees: (0, 0),
            mode: DomainMode::Legendre,
            amplitude_bound: 30.0,
            horizon: 2.0 * std::f64::consts::PI,
            steps: 630,
        }
    }

    /// Robust design over the given parameter intervals.
    pub fn robust(
        n0: usize,
        doppler_interval: (f64, f64),
        intensity_interval: (f64, f64),
        degrees: (usize, usize),
    ) -> Self {
        Self {
            doppler_interval,
            intensity_interval,
            degrees,
            ..Self::deterministic(n0)
        }
    }

    /// Truncation order N (default 18 + 2 n0).
    pub fn n_trunc(&self) -> usize {
        self.truncation.unwrap_or(18 + 2 * self.n0)
    }

    /// Physical dimension of the folded basis, N + 1.
    pub fn dim_physical(&self) -> usize {
        self.n_trunc() + 1
    }

    pub fn grid(&self) -> Result<TimeGrid, BraggError> {
        Ok(TimeGrid::new(self.horizon, self.steps)?)
    }

    /// All configuration violations; an empty list means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut diags = Vec::new();
        if self.n0 < 1 {
            diags.push("target index must be ≥ 1".to_string());
        }
        let n = self.n_trunc();
        if 2 * self.n0 > n {
            diags.push(format!(
                "target momentum 2 n0 = {} exceeds truncation order N = {n}",
                2 * self.n0
            ));
        }
        let (dlo, dhi) = self.doppler_interval;
        if dlo > dhi || dlo > 0.0 || dhi < 0.0 {
            diags.push(format!(
                "doppler interval [{dlo}, {dhi}] must contain the nominal value 0"
            ));
        }
        if dlo.abs() >= 2.0 || dhi.abs() >= 2.0 {
            diags.push("doppler detuning must satisfy |k/k0| < 2".to_string());
        }
        let (glo, ghi) = self.intensity_interval;
        if glo > ghi || glo > 1.0 || ghi < 1.0 {
            diags.push(format!(
                "intensity interval [{glo}, {ghi}] must contain the nominal value 1"
            ));
        }
        if glo <= 0.0 {
            diags.push("intensity factor must be positive".to_string());
        }
        if !(self.amplitude_bound > 0.0) {
            diags.push("amplitude bound must be positive".to_string());
        }
        if !(self.horizon > 0.0) {
            diags.push("horizon must be positive".to_string());
        }
        if self.steps == 0 {
            diags.push("step count must be at least 1".to_string());
        }
        diags
    }
}

/// The three folded-basis design matrices.
#[derive(Debug, Clone)]
pub struct FoldedBraggModel {
    /// Kinetic energy, diag((2j)^2) for j = 0..N.
    pub h1: Array2<f64>,
    /// Linear Doppler term, diag(4 j).
    pub h1_doppler: Array2<f64>,
    /// Two-photon coupling: first off-diagonal √2/2, then 1/2.
    pub h2: Array2<f64>,
}

/// Build the folded matrices at truncation order N.
pub fn folded_matrices(n_trunc: usize) -> FoldedBraggModel {
    let dim = n_trunc + 1;
    let mut h1 = Array2::<f64>::zeros((dim, dim));
    let mut h1_doppler = Array2::<f64>::zeros((dim, dim));
    for j in 0..dim {
        h1[[j, j]] = ((2 * j) as f64).powi(2);
        h1_doppler[[j, j]] = 4.0 * j as f64;
    }
    let mut h2 = Array2::<f64>::zeros((dim, dim));
    if dim > 1 {
        let c0 = 2f64.sqrt() / 2.0;
        h2[[0, 1]] = c0;
        h2[[1, 0]] = c0;
        for j in 1..dim - 1 {
            h2[[j, j + 1]] = 0.5;
            h2[[j + 1, j]] = 0.5;
        }
    }
    FoldedBraggModel {
        h1,
        h1_doppler,
        h2,
    }
}

/// Assemble the ensemble design model: fixed kinetic drift, Doppler drift
/// scaled by δ, and the controlled coupling scaled by γ. Only the coupling
/// channel is an optimization variable.
pub fn build_design_model(cfg: &BraggConfig) -> Result<EnsembleModel, BraggError> {
    let diags = cfg.validate();
    if !diags.is_empty() {
        return Err(BraggError::Config(diags.join("; ")));
    }
    let mats = folded_matrices(cfg.n_trunc());
    let domain = ParameterDomain::new(
        vec![
            ParameterSpec::new(cfg.doppler_interval.0, cfg.doppler_interval.1, cfg.degrees.0)?,
            ParameterSpec::new(
                cfg.intensity_interval.0,
                cfg.intensity_interval.1,
                cfg.degrees.1,
            )?,
        ],
        cfg.mode,
    )?;
    let terms = vec![
        HamiltonianTerm::from_real(mats.h1, None, None)?,
        HamiltonianTerm::from_real(mats.h1_doppler, None, Some(0))?,
        HamiltonianTerm::from_real(mats.h2, Some(0), Some(1))?,
    ];
    Ok(embed_hamiltonians(&terms, &domain)?)
}

/// Moment embedding of the zero-momentum initial state.
pub fn initial_state(model: &EnsembleModel) -> Result<MomentState, BraggError> {
    let mut psi0 = Array1::<C64>::zeros(model.dim_physical());
    psi0[0] = C64::new(1.0, 0.0);
    Ok(model.embed_initial_state(psi0.view())?)
}

/// Moment embedding of the folded target level n0.
pub fn target_state(cfg: &BraggConfig, model: &EnsembleModel) -> Result<MomentState, BraggError> {
    if cfg.n0 > cfg.n_trunc() {
        return Err(BraggError::TargetBeyondTruncation {
            n0: cfg.n0,
            n_trunc: cfg.n_trunc(),
        });
    }
    let mut psi = Array1::<C64>::zeros(model.dim_physical());
    psi[cfg.n0] = C64::new(1.0, 0.0);
    Ok(model.embed_initial_state(psi.view())?)
}

/// Signed momentum-ladder model at fixed parameter values: 2N+1 levels
/// n = -N..N with kinetic energy (2n + δ)^2 and nearest-level coupling
/// γ u(t)/2.
#[derive(Debug, Clone, Copy)]
pub struct SignedRamanNath {
    pub n_trunc: usize,
    pub delta: f64,
    pub gamma: f64,
}

impl SignedRamanNath {
    pub fn new(n_trunc: usize, delta: f64, gamma: f64) -> Result<Self, BraggError> {
        if !(delta.abs() < 2.0) || !delta.is_finite() {
            return Err(BraggError::BadDoppler(delta));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(BraggError::BadIntensity(gamma));
        }
        Ok(Self {
            n_trunc,
            delta,
            gamma,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.n_trunc + 1
    }

    /// Index of momentum level 2n ħk in the state vector.
    pub fn level_index(&self, n: isize) -> usize {
        (n + self.n_trunc as isize) as usize
    }

    fn system(&self) -> LinearHamiltonian {
        let dim = self.dim();
        let big_n = self.n_trunc as isize;
        let mut kinetic = Array2::<f64>::zeros((dim, dim));
        for n in -big_n..=big_n {
            let idx = self.level_index(n);
            kinetic[[idx, idx]] = (2.0 * n as f64 + self.delta).powi(2);
        }
        let mut coupling = Array2::<f64>::zeros((dim, dim));
        for i in 0..dim - 1 {
            coupling[[i, i + 1]] = 0.5 * self.gamma;
            coupling[[i + 1, i]] = 0.5 * self.gamma;
        }
        LinearHamiltonian::new(
            vec![HermMat::Real(kinetic), HermMat::Real(coupling)],
            vec![1.0, 1.0],
            vec![None, Some(0)],
            1,
        )
    }

    /// Terminal amplitudes after applying the pulse from C_0 = 1.
    pub fn terminal_amplitudes(&self, pulse: &ControlPulse) -> Result<Array1<C64>, BraggError> {
        if pulse.channels() != 1 {
            return Err(BraggError::SingleChannelRequired(pulse.channels()));
        }
        let lh = self.system();
        let mut psi0 = Array1::<C64>::zeros(self.dim());
        psi0[self.level_index(0)] = C64::new(1.0, 0.0);
        let dt = pulse.grid().dt();
        let states = propagate_states(&lh, dt, &pulse.values().view(), &psi0.view())
            .map_err(|step| PropagatorError::NonFiniteState { step })?;
        let terminal = states.last().expect("at least one state").clone();
        let norm: f64 = terminal.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(BraggError::NormDrift((norm - 1.0).abs()));
        }
        Ok(terminal)
    }
}

/// Terminal error 1 - |C_{+2n0}|^2 - |C_{-2n0}|^2 of the signed simulation.
pub fn simulate_signed(
    pulse: &ControlPulse,
    delta: f64,
    gamma: f64,
    n0: usize,
    n_trunc: usize,
) -> Result<f64, BraggError> {
    if n0 > n_trunc {
        return Err(BraggError::TargetBeyondTruncation { n0, n_trunc });
    }
    let sys = SignedRamanNath::new(n_trunc, delta, gamma)?;
    let terminal = sys.terminal_amplitudes(pulse)?;
    let plus = terminal[sys.level_index(n0 as isize)].norm_sqr();
    let minus = terminal[sys.level_index(-(n0 as isize))].norm_sqr();
    Ok((1.0 - plus - minus).clamp(0.0, 1.0))
}

/// Robustness evaluation over a parameter grid, plus pulse statistics.
#[derive(Debug, Clone)]
pub struct RobustnessReport {
    /// Evaluated (δ, γ) samples, δ-outer / γ-inner.
    pub grid: Vec<(f64, f64)>,
    pub terminal_errors: Vec<f64>,
    pub max_error: f64,
    pub mean_error: f64,
    pub min_error: f64,
    pub max_u: f64,
    pub mean_u: f64,
    pub max_du: f64,
    pub mean_du: f64,
    pub clock_minutes: f64,
}

fn linspace_inclusive(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 || lo == hi {
        return vec![0.5 * (lo + hi)];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Evaluate the signed verification model on a tensor grid over the design
/// intervals (endpoints included) and aggregate error and pulse statistics.
pub fn robustness_grid(
    pulse: &ControlPulse,
    cfg: &BraggConfig,
    grid_shape: (usize, usize),
) -> Result<RobustnessReport, BraggError> {
    if pulse.channels() != 1 {
        return Err(BraggError::SingleChannelRequired(pulse.channels()));
    }
    let start = Instant::now();
    let deltas = linspace_inclusive(cfg.doppler_interval.0, cfg.doppler_interval.1, grid_shape.0);
    let gammas = linspace_inclusive(
        cfg.intensity_interval.0,
        cfg.intensity_interval.1,
        grid_shape.1,
    );
    let grid: Vec<(f64, f64)> = deltas
        .iter()
        .flat_map(|d| gammas.iter().map(move |g| (*d, *g)))
        .collect();
    let n_trunc = cfg.n_trunc();
    let terminal_errors: Vec<f64> = grid
        .par_iter()
        .map(|(d, g)| simulate_signed(pulse, *d, *g, cfg.n0, n_trunc))
        .collect::<Result<_, _>>()?;
    let mut max_error = f64::MIN;
    let mut min_error = f64::MAX;
    let mut sum = 0.0;
    for e in &terminal_errors {
        max_error = max_error.max(*e);
        min_error = min_error.min(*e);
        sum += *e;
    }
    let mean_error = sum / terminal_errors.len() as f64;
    let u = pulse.values().column(0);
    let max_u = u.iter().fold(f64::MIN, |a, v| a.max(v.abs()));
    let mean_u = u.iter().map(|v| v.abs()).sum::<f64>() / u.len() as f64;
    let (max_du, mean_du) = if u.len() > 1 {
        let mut mx = 0.0f64;
        let mut s = 0.0f64;
        for k in 0..u.len() - 1 {
            let d = (u[k + 1] - u[k]).abs();
            mx = mx.max(d);
            s += d;
        }
        (mx, s / (u.len() - 1) as f64)
    } else {
        (0.0, 0.0)
    };
    Ok(RobustnessReport {
        grid,
        terminal_errors,
        max_error,
        mean_error,
        min_error,
        max_u,
        mean_u,
        max_du,
        mean_du,
        clock_minutes: start.elapsed().as_secs_f64() / 60.0,
    })
}

/// Filtered-pulse bandwidth sweep.
#[derive(Debug, Clone)]
pub struct FilterSweepReport {
    /// Cutoff frequencies as fractions of the sampling frequency,
    /// 0.5 k / 201 for k = 1..200.
    pub cutoff_fractions: Vec<f64>,
    /// Target-population probability of the re-simulated filtered pulse.
    pub probabilities: Vec<f64>,
    /// Sweep indices skipped because the designed filter was unstable.
    pub skipped: Vec<usize>,
    /// Dimensionless sampling rate K / horizon (1/dt).
    pub sampling_rate: f64,
}

/// Apply 200 Butterworth low-pass filters with cutoffs 0.5 f_s k/201 to the
/// pulse, re-simulate the nominal signed system for each, and record the
/// target population. Negative filtered amplitudes are clamped to zero.
pub fn filter_sweep(
    pulse: &ControlPulse,
    n0: usize,
    n_trunc: usize,
    filter_order: usize,
) -> Result<FilterSweepReport, BraggError> {
    if pulse.channels() != 1 {
        return Err(BraggError::SingleChannelRequired(pulse.channels()));
    }
    let samples: Vec<f64> = pulse.values().column(0).to_vec();
    let grid = pulse.grid();
    let indexed: Vec<usize> = (1..=200).collect();
    let results: Vec<Result<Option<f64>, BraggError>> = indexed
        .par_iter()
        .map(|k| {
            let frac = 0.5 * *k as f64 / 201.0;
            let filt = match butterworth_lowpass(filter_order, frac) {
                Ok(f) => f,
                Err(FilterError::Unstable(_)) => return Ok(None),
                Err(e) => return Err(BraggError::Filter(e)),
            };
            if !filt.is_stable() {
                return Ok(None);
            }
            let filtered: Vec<f64> = filt
                .apply_zero_phase_compensated(&samples)
                .into_iter()
                .map(|v| v.max(0.0))
                .collect();
            let fpulse = ControlPulse::new(
                grid,
                Array2::from_shape_vec((grid.steps(), 1), filtered)
                    .expect("shape matches sample count"),
                Array1::from_elem(1, 0.0),
                Array1::from_elem(1, f64::INFINITY),
            )?;
            let err = simulate_signed(&fpulse, 0.0, 1.0, n0, n_trunc)?;
            Ok(Some(1.0 - err))
        })
        .collect();
    let mut cutoff_fractions = Vec::with_capacity(200);
    let mut probabilities = Vec::with_capacity(200);
    let mut skipped = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        let k = i + 1;
        match res? {
            Some(p) => {
                cutoff_fractions.push(0.5 * k as f64 / 201.0);
                probabilities.push(p);
            }
            None => skipped.push(k),
        }
    }
    Ok(FilterSweepReport {
        cutoff_fractions,
        probabilities,
        skipped,
        sampling_rate: grid.steps() as f64 / grid.horizon(),
    })
}

/// Physical sampling frequency in Hz for a given recoil frequency ω_r (s^-1):
/// (steps - 1) ω_r / horizon, the rate implied by the grid's point count.
pub fn physical_frequency(cfg: &BraggConfig, omega_r: f64) -> f64 {
    (cfg.steps.saturating_sub(1)) as f64 * omega_r / cfg.horizon
}


/// Spectral design nodes of an ensemble model: per moment block, the
/// parameter values and the squared first-row weight (quadrature weight).
pub fn design_nodes(model: &EnsembleModel) -> Vec<(Vec<f64>, f64)> {
    let nb = model.dim_moment();
    (0..nb)
        .map(|b| {
            let multi = model.domain().multi_index(b);
            let mut vals = Vec::new();
            let mut w = 1.0;
            for (m, a) in multi.iter().enumerate() {
                vals.push(model.node_value(m, *a));
                w *= model.node_first_row(m, *a).powi(2);
            }
            (vals, w)
        })
        .collect()
}

/// Rotate a joint-space vector into the decoupled node-block basis.
pub fn to_node_blocks(model: &EnsembleModel, psi: &Array1<C64>) -> Array1<C64> {
    model.to_block_basis(&psi.view())
}
