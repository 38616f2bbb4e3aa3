//! Piecewise-constant propagation and the terminal-state Jacobian.
//!
//! A pulse is a K-step sequence of channel values on a uniform time grid.
//! Each step applies the exact unitary exp(-i dt H(u_k)); the Jacobian of the
//! terminal state with respect to every control variable is assembled from
//! exact per-step directional derivatives combined with the backward product
//! of later step unitaries. Ensemble models are propagated in their decoupled
//! block basis; `propagate_dense` runs the same evolution on the dense
//! embedded operators and serves as the reference path.

use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::ensemble::{EnsembleModel, MomentState};
use crate::spectral::{
    propagate_states as block_propagate, propagate_with_jacobian as block_jacobian, HermMat,
    LinearHamiltonian, StepEig,
};

#[derive(Debug, Error)]
pub enum PropagatorError {
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("step count must be at least 1")]
    BadStepCount,
    #[error("control values must be finite")]
    NonFiniteControls,
    #[error("pulse has {got} channels, model expects {expected}")]
    ChannelMismatch { got: usize, expected: usize },
    #[error("controls length {got} does not match term count {expected}")]
    ControlsLength { got: usize, expected: usize },
    #[error("drift multiplier at term {0} must be 1")]
    DriftNotUnity(usize),
    #[error("state length {got} does not match model dimension {expected}")]
    StateDimension { got: usize, expected: usize },
    #[error("state norm {0} is not unit")]
    NotUnitNorm(f64),
    #[error("propagation produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },
    #[error("bound arrays must have one entry per channel")]
    BadBounds,
    #[error("lower bound {lower} exceeds upper bound {upper} on channel {channel}")]
    BoundsOrder {
        channel: usize,
        lower: f64,
        upper: f64,
    },
    #[error("value {value} at step {step}, channel {channel} violates [{lower}, {upper}]")]
    ValueOutOfBounds {
        step: usize,
        channel: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
}

/// Uniform time discretization: K equal steps over [0, T].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, PropagatorError> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(PropagatorError::BadHorizon(horizon));
        }
        if steps == 0 {
            return Err(PropagatorError::BadStepCount);
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// K-step piecewise-constant control sequence with per-channel bounds.
#[derive(Debug, Clone)]
pub struct ControlPulse {
    grid: TimeGrid,
    /// K x C channel values.
    values: Array2<f64>,
    lower: Array1<f64>,
    upper: Array1<f64>,
}

impl ControlPulse {
    pub fn new(
        grid: TimeGrid,
        values: Array2<f64>,
        lower: Array1<f64>,
        upper: Array1<f64>,
    ) -> Result<Self, PropagatorError> {
        let channels = values.ncols();
        if values.nrows() != grid.steps() {
            return Err(PropagatorError::BadStepCount);
        }
        if lower.len() != channels || upper.len() != channels {
            return Err(PropagatorError::BadBounds);
        }
        for c in 0..channels {
            if lower[c] > upper[c] {
                return Err(PropagatorError::BoundsOrder {
                    channel: c,
                    lower: lower[c],
                    upper: upper[c],
                });
            }
        }
        for ((k, c), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(PropagatorError::NonFiniteControls);
            }
            let slack = 1e-12 * (1.0 + lower[c].abs().max(upper[c].abs()));
            if *v < lower[c] - slack || *v > upper[c] + slack {
                return Err(PropagatorError::ValueOutOfBounds {
                    step: k,
                    channel: c,
                    value: *v,
                    lower: lower[c],
                    upper: upper[c],
                });
            }
        }
        Ok(Self {
            grid,
            values,
            lower,
            upper,
        })
    }

    pub fn constant(
        grid: TimeGrid,
        value: f64,
        channels: usize,
        lower: f64,
        upper: f64,
    ) -> Result<Self, PropagatorError> {
        Self::new(
            grid,
            Array2::from_elem((grid.steps(), channels), value),
            Array1::from_elem(channels, lower),
            Array1::from_elem(channels, upper),
        )
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn lower(&self) -> &Array1<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &Array1<f64> {
        &self.upper
    }

    /// Flattened control vector, step-outer / channel-inner.
    pub fn flat(&self) -> Array1<f64> {
        Array1::from_iter(self.values.iter().copied())
    }

    /// Rebuild a pulse from a flattened control vector, clamping roundoff
    /// excursions back onto the box.
    pub fn with_flat(&self, flat: &Array1<f64>) -> Result<Self, PropagatorError> {
        assert_eq!(flat.len(), self.grid.steps() * self.channels());
        let mut values = Array2::zeros((self.grid.steps(), self.channels()));
        for k in 0..self.grid.steps() {
            for c in 0..self.channels() {
                let v = flat[k * self.channels() + c];
                values[[k, c]] = v.clamp(self.lower[c], self.upper[c]);
            }
        }
        Self::new(self.grid, values, self.lower.clone(), self.upper.clone())
    }

    /// Control energy ||u||^2 dt, summed over channels.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.dt()
    }
}

/// States ψ_0 … ψ_K of one propagation.
#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub states: Vec<Array1<C64>>,
    /// Per-step unitaries, populated only by the dense reference path on request.
    pub step_unitaries: Option<Vec<Array2<C64>>>,
}

impl PropagationResult {
    pub fn terminal(&self) -> &Array1<C64> {
        self.states.last().expect("at least the initial state")
    }
}

/// Jacobian of the terminal state; column (k, c) is step-outer / channel-inner.
#[derive(Debug, Clone)]
pub struct TerminalJacobian {
    pub matrix: Array2<C64>,
    pub steps: usize,
    pub channels: usize,
}

fn check_state(model: &EnsembleModel, psi0: &MomentState) -> Result<(), PropagatorError> {
    if psi0.dim_total() != model.dim_total() {
        return Err(PropagatorError::StateDimension {
            got: psi0.dim_total(),
            expected: model.dim_total(),
        });
    }
    let n = psi0.norm();
    if (n - 1.0).abs() > 1e-8 {
        return Err(PropagatorError::NotUnitNorm(n));
    }
    Ok(())
}

fn check_pulse(model: &EnsembleModel, pulse: &ControlPulse) -> Result<(), PropagatorError> {
    if pulse.channels() != model.n_channels() {
        return Err(PropagatorError::ChannelMismatch {
            got: pulse.channels(),
            expected: model.n_channels(),
        });
    }
    Ok(())
}

/// Per-block linear Hamiltonians of the decoupled ensemble.
fn block_systems(model: &EnsembleModel) -> Vec<LinearHamiltonian> {
    let nb = model.dim_moment();
    let n_terms = model.terms().len();
    let channels: Vec<Option<usize>> = model.terms().iter().map(|t| t.control).collect();
    (0..nb)
        .map(|b| {
            let mats: Vec<HermMat> = model.blocks.physical.to_vec();
            let weights: Vec<f64> = (0..n_terms)
                .map(|m| model.blocks.node_weights[[b, m]])
                .collect();
            LinearHamiltonian::new(mats, weights, channels.clone(), model.n_channels())
        })
        .collect()
}

/// exp(-i dt Σ_m u_m H_m) on the dense embedded operators.
///
/// `controls` carries one multiplier per term; drift entries must be 1.
pub fn step_unitary(
    model: &EnsembleModel,
    controls: &[f64],
    dt: f64,
) -> Result<Array2<C64>, PropagatorError> {
    if controls.len() != model.terms().len() {
        return Err(PropagatorError::ControlsLength {
            got: controls.len(),
            expected: model.terms().len(),
        });
    }
    if controls.iter().any(|u| !u.is_finite()) {
        return Err(PropagatorError::NonFiniteControls);
    }
    for (i, t) in model.terms().iter().enumerate() {
        if t.control.is_none() && (controls[i] - 1.0).abs() > 1e-12 {
            return Err(PropagatorError::DriftNotUnity(i));
        }
    }
    let d = model.dim_total();
    let mut h = Array2::<C64>::zeros((d, d));
    for (u, t) in controls.iter().zip(model.terms()) {
        h.scaled_add(C64::new(*u, 0.0), &t.matrix);
    }
    let eig = StepEig::factorize(&HermMat::Cplx(h));
    Ok(eig.unitary(dt))
}

/// Propagate through the decoupled block basis.
pub fn propagate(
    model: &EnsembleModel,
    pulse: &ControlPulse,
    psi0: &MomentState,
) -> Result<PropagationResult, PropagatorError> {
    check_state(model, psi0)?;
    check_pulse(model, pulse)?;
    let dt = pulse.grid().dt();
    let systems = block_systems(model);
    let tilde = model.to_block_basis(&psi0.coeffs.view());
    let p = model.dim_physical();
    let k_steps = pulse.grid().steps();
    let mut block_states: Vec<Vec<Array1<C64>>> = Vec::with_capacity(systems.len());
    for (b, lh) in systems.iter().enumerate() {
        let psi_b = tilde.slice(s![b * p..(b + 1) * p]).to_owned();
        let states = block_propagate(lh, dt, &pulse.values().view(), &psi_b.view())
            .map_err(|step| PropagatorError::NonFiniteState { step })?;
        block_states.push(states);
    }
    let d = model.dim_total();
    let mut states = Vec::with_capacity(k_steps + 1);
    for k in 0..=k_steps {
        let mut joined = Array1::<C64>::zeros(d);
        for (b, bs) in block_states.iter().enumerate() {
            joined.slice_mut(s![b * p..(b + 1) * p]).assign(&bs[k]);
        }
        states.push(model.from_block_basis(&joined.view()));
    }
    Ok(PropagationResult {
        states,
        step_unitaries: None,
    })
}

/// Propagate on the dense embedded operators (reference path).
pub fn propagate_dense(
    model: &EnsembleModel,
    pulse: &ControlPulse,
    psi0: &MomentState,
    cache_unitaries: bool,
) -> Result<PropagationResult, PropagatorError> {
    check_state(model, psi0)?;
    check_pulse(model, pulse)?;
    let dt = pulse.grid().dt();
    let d = model.dim_total();
    let all_real = model
        .terms()
        .iter()
        .all(|t| t.matrix.iter().all(|z| z.im == 0.0));
    let mut states = Vec::with_capacity(pulse.grid().steps() + 1);
    states.push(psi0.coeffs.clone());
    let mut unitaries = cache_unitaries.then(Vec::new);
    for k in 0..pulse.grid().steps() {
        let u_full = model.full_controls(&pulse.values().row(k).to_vec());
        let mut h = Array2::<C64>::zeros((d, d));
        for (u, t) in u_full.iter().zip(model.terms()) {
            h.scaled_add(C64::new(*u, 0.0), &t.matrix);
        }
        let herm = if all_real {
            HermMat::Real(h.mapv(|z| z.re))
        } else {
            HermMat::Cplx(h)
        };
        let eig = StepEig::factorize(&herm);
        let next = eig.apply_exp(dt, &states[k].view());
        if next.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(PropagatorError::NonFiniteState { step: k });
        }
        if let Some(cache) = unitaries.as_mut() {
            cache.push(eig.unitary(dt));
        }
        states.push(next);
    }
    Ok(PropagationResult {
        states,
        step_unitaries: unitaries,
    })
}

/// Forward states plus the terminal Jacobian, sharing one forward pass.
pub fn propagate_with_jacobian(
    model: &EnsembleModel,
    pulse: &ControlPulse,
    psi0: &MomentState,
) -> Result<(PropagationResult, TerminalJacobian), PropagatorError> {
    check_state(model, psi0)?;
    check_pulse(model, pulse)?;
    let dt = pulse.grid().dt();
    let systems = block_systems(model);
    let tilde = model.to_block_basis(&psi0.coeffs.view());
    let p = model.dim_physical();
    let k_steps = pulse.grid().steps();
    let n_ch = model.n_channels();
    let d = model.dim_total();
    let mut block_states: Vec<Vec<Array1<C64>>> = Vec::with_capacity(systems.len());
    let mut jac_blocks = Array2::<C64>::zeros((d, k_steps * n_ch));
    for (b, lh) in systems.iter().enumerate() {
        let psi_b = tilde.slice(s![b * p..(b + 1) * p]).to_owned();
        let (states, jac) = block_jacobian(lh, dt, &pulse.values().view(), &psi_b.view())
            .map_err(|step| PropagatorError::NonFiniteState { step })?;
        jac_blocks.slice_mut(s![b * p..(b + 1) * p, ..]).assign(&jac);
        block_states.push(states);
    }
    let mut states = Vec::with_capacity(k_steps + 1);
    for k in 0..=k_steps {
        let mut joined = Array1::<C64>::zeros(d);
        for (b, bs) in block_states.iter().enumerate() {
            joined.slice_mut(s![b * p..(b + 1) * p]).assign(&bs[k]);
        }
        states.push(model.from_block_basis(&joined.view()));
    }
    let matrix = model.matrix_from_block_basis(&jac_blocks);
    Ok((
        PropagationResult {
            states,
            step_unitaries: None,
        },
        TerminalJacobian {
            matrix,
            steps: k_steps,
            channels: n_ch,
        },
    ))
}

/// Jacobian of the terminal state with respect to every control variable.
pub fn terminal_jacobian(
    model: &EnsembleModel,
    pulse: &ControlPulse,
    psi0: &MomentState,
) -> Result<TerminalJacobian, PropagatorError> {
    propagate_with_jacobian(model, pulse, psi0).map(|(_, j)| j)
}

/// Real least-squares embedding: stacked [Re; Im] forms of the Jacobian and of
/// the terminal residual ψ_K - ψ_T, so real norms equal complex norms.
pub fn real_embedding(
    jacobian: &TerminalJacobian,
    psi_k: &ArrayView1<C64>,
    psi_t: &ArrayView1<C64>,
) -> (Array2<f64>, Array1<f64>) {
    let d = jacobian.matrix.nrows();
    let n = jacobian.matrix.ncols();
    let mut j_real = Array2::<f64>::zeros((2 * d, n));
    for ((i, j), z) in jacobian.matrix.indexed_iter() {
        j_real[[i, j]] = z.re;
        j_real[[d + i, j]] = z.im;
    }
    let mut r = Array1::<f64>::zeros(2 * d);
    for i in 0..d {
        let diff = psi_k[i] - psi_t[i];
        r[i] = diff.re;
        r[d + i] = diff.im;
    }
    (j_real, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{
        embed_hamiltonians, DomainMode, HamiltonianTerm, ParameterDomain, ParameterSpec,
    };
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn pauli_x() -> Array2<C64> {
        array![[c(0., 0.), c(1., 0.)], [c(1., 0.), c(0., 0.)]]
    }

    /// Single two-level system with one control channel driving σx/2.
    fn two_level_model() -> EnsembleModel {
        let dom = ParameterDomain::new(
            vec![ParameterSpec::new(1.0, 1.0, 0).unwrap()],
            DomainMode::Legendre,
        )
        .unwrap();
        let term = HamiltonianTerm::new(pauli_x().mapv(|z| z * 0.5), Some(0), None).unwrap();
        embed_hamiltonians(&[term], &dom).unwrap()
    }

    #[test]
    fn step_unitary_identity_for_zero_controls() {
        let model = two_level_model();
        let u = step_unitary(&model, &[0.0], 0.3).unwrap();
        assert_abs_diff_eq!(u[[0, 0]].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(u[[0, 1]].norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn step_unitary_pauli_x_quarter_turn() {
        // u dt = π/2 on σx gives [[0, -i], [-i, 0]].
        let dom = ParameterDomain::new(
            vec![ParameterSpec::new(1.0, 1.0, 0).unwrap()],
            DomainMode::Legendre,
        )
        .unwrap();
        let term = HamiltonianTerm::new(pauli_x(), Some(0), None).unwrap();
        let model = embed_hamiltonians(&[term], &dom).unwrap();
        let dt = 0.25;
        let u_val = std::f64::consts::FRAC_PI_2 / dt;
        let u = step_unitary(&model, &[u_val], dt).unwrap();
        assert_abs_diff_eq!(u[[0, 0]].norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u[[0, 1]].im, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u[[1, 0]].im, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn step_unitary_is_unitary() {
        let model = two_level_model();
        let u = step_unitary(&model, &[1.7], 0.9).unwrap();
        let uh = u.t().mapv(|z| z.conj());
        let prod = uh.dot(&u);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(prod[[i, j]].re, want, epsilon = 1e-12);
                assert_abs_diff_eq!(prod[[i, j]].im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn step_unitary_rejects_bad_inputs() {
        let model = two_level_model();
        assert!(matches!(
            step_unitary(&model, &[f64::NAN], 0.1),
            Err(PropagatorError::NonFiniteControls)
        ));
        assert!(matches!(
            step_unitary(&model, &[1.0, 1.0], 0.1),
            Err(PropagatorError::ControlsLength { .. })
        ));
    }

    #[test]
    fn propagate_zero_hamiltonian_keeps_state() {
        let model = two_level_model();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let pulse = ControlPulse::constant(grid, 0.0, 1, -1.0, 1.0).unwrap();
        let psi0 = model
            .embed_initial_state(array![c(0.6, 0.0), c(0.0, 0.8)].view())
            .unwrap();
        let res = propagate(&model, &pulse, &psi0).unwrap();
        for st in &res.states {
            assert_abs_diff_eq!(st[0].re, 0.6, epsilon = 1e-13);
            assert_abs_diff_eq!(st[1].im, 0.8, epsilon = 1e-13);
        }
    }

    #[test]
    fn single_step_equals_step_unitary() {
        let model = two_level_model();
        let grid = TimeGrid::new(0.7, 1).unwrap();
        let pulse = ControlPulse::constant(grid, 1.3, 1, 0.0, 2.0).unwrap();
        let psi0 = model
            .embed_initial_state(array![c(1., 0.), c(0., 0.)].view())
            .unwrap();
        let res = propagate(&model, &pulse, &psi0).unwrap();
        let u = step_unitary(&model, &[1.3], 0.7).unwrap();
        let want = u.dot(&psi0.coeffs);
        let err: f64 = (res.terminal() - &want).iter().map(|z| z.norm()).sum();
        assert!(err < 1e-13);
    }

    #[test]
    fn resonant_rabi_transfer_matches_closed_form() {
        // H = u σx/2: transfer population sin^2(u T / 2).
        let model = two_level_model();
        let grid = TimeGrid::new(2.0, 64).unwrap();
        let u_val = 1.1;
        let pulse = ControlPulse::constant(grid, u_val, 1, 0.0, 2.0).unwrap();
        let psi0 = model
            .embed_initial_state(array![c(1., 0.), c(0., 0.)].view())
            .unwrap();
        let res = propagate(&model, &pulse, &psi0).unwrap();
        let transfer = res.terminal()[1].norm_sqr();
        let want = (u_val * 2.0 / 2.0).sin().powi(2);
        assert_abs_diff_eq!(transfer, want, epsilon = 1e-9);
    }

    #[test]
    fn blocked_propagation_matches_dense_reference() {
        // Two-parameter robust model, complex Hermitian physical term included.
        let dom = ParameterDomain::new(
            vec![
                ParameterSpec::new(-0.4, 0.4, 2).unwrap(),
                ParameterSpec::new(0.6, 1.4, 1).unwrap(),
            ],
            DomainMode::Legendre,
        )
        .unwrap();
        let drift = Array2::from_diag(&array![c(0., 0.), c(1., 0.), c(4., 0.)]);
        let dop = Array2::from_diag(&array![c(0., 0.), c(2., 0.), c(4., 0.)]);
        let coup = array![
            [c(0., 0.), c(0.5, 0.2), c(0., 0.)],
            [c(0.5, -0.2), c(0., 0.), c(0.5, 0.0)],
            [c(0., 0.), c(0.5, 0.0), c(0., 0.)]
        ];
        let terms = vec![
            HamiltonianTerm::new(drift, None, None).unwrap(),
            HamiltonianTerm::new(dop, None, Some(0)).unwrap(),
            HamiltonianTerm::new(coup, Some(0), Some(1)).unwrap(),
        ];
        let model = embed_hamiltonians(&terms, &dom).unwrap();
        let grid = TimeGrid::new(1.5, 12).unwrap();
        let values = Array2::from_shape_fn((12, 1), |(k, _)| 0.2 + 0.05 * k as f64);
        let pulse = ControlPulse::new(
            grid,
            values,
            Array1::from_elem(1, 0.0),
            Array1::from_elem(1, 2.0),
        )
        .unwrap();
        let psi0 = model
            .embed_initial_state(array![c(1., 0.), c(0., 0.), c(0., 0.)].view())
            .unwrap();
        let fast = propagate(&model, &pulse, &psi0).unwrap();
        let dense = propagate_dense(&model, &pulse, &psi0, false).unwrap();
        for (a, b) in fast.states.iter().zip(&dense.states) {
            let err: f64 = (a - b).iter().map(|z| z.norm()).sum();
            assert!(err < 1e-12, "blocked vs dense deviation {err:.2e}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_on_ensemble() {
        let dom = ParameterDomain::new(
            vec![ParameterSpec::new(0.8, 1.2, 1).unwrap()],
            DomainMode::Legendre,
        )
        .unwrap();
        let drift = Array2::from_diag(&array![c(0., 0.), c(1., 0.), c(3., 0.)]);
        let coup = array![
            [c(0., 0.), c(1., 0.), c(0., 0.)],
            [c(1., 0.), c(0., 0.), c(1., 0.)],
            [c(0., 0.), c(1., 0.), c(0., 0.)]
        ];
        let terms = vec![
            HamiltonianTerm::new(drift, None, None).unwrap(),
            HamiltonianTerm::new(coup, Some(0), Some(0)).unwrap(),
        ];
        let model = embed_hamiltonians(&terms, &dom).unwrap();
        let grid = TimeGrid::new(2.0, 20).unwrap();
        let values = Array2::from_shape_fn((20, 1), |(k, _)| 0.5 + 0.3 * ((k as f64) * 0.4).sin());
        let pulse = ControlPulse::new(
            grid,
            values.clone(),
            Array1::from_elem(1, -1.0),
            Array1::from_elem(1, 2.0),
        )
        .unwrap();
        let psi0 = model
            .embed_initial_state(array![c(1., 0.), c(0., 0.), c(0., 0.)].view())
            .unwrap();
        let (_, jac) = propagate_with_jacobian(&model, &pulse, &psi0).unwrap();
        let h = 1e-5;
        for k in [0usize, 7, 19] {
            let mut up = values.clone();
            up[[k, 0]] += h;
            let mut dn = values.clone();
            dn[[k, 0]] -= h;
            let pu = pulse.with_flat(&Array1::from_iter(up.iter().copied())).unwrap();
            let pd = pulse.with_flat(&Array1::from_iter(dn.iter().copied())).unwrap();
            let su = propagate(&model, &pu, &psi0).unwrap();
            let sd = propagate(&model, &pd, &psi0).unwrap();
            let fd: Array1<C64> =
                (su.terminal() - sd.terminal()).mapv(|z| z / (2.0 * h));
            let col = jac.matrix.column(k);
            let num: f64 = col.iter().zip(fd.iter()).map(|(a, b)| (a - b).norm()).sum();
            let den: f64 = fd.iter().map(|z| z.norm()).sum();
            assert!(num / den < 1e-6, "column {k} rel err {:.2e}", num / den);
        }
    }

    #[test]
    fn jacobian_empty_without_controls() {
        let dom = ParameterDomain::new(
            vec![ParameterSpec::new(1.0, 1.0, 0).unwrap()],
            DomainMode::Legendre,
        )
        .unwrap();
        let term = HamiltonianTerm::new(pauli_x(), None, None).unwrap();
        let model = embed_hamiltonians(&[term], &dom).unwrap();
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let pulse = ControlPulse::new(
            grid,
            Array2::zeros((5, 0)),
            Array1::zeros(0),
            Array1::zeros(0),
        )
        .unwrap();
        let psi0 = model
            .embed_initial_state(array![c(1., 0.), c(0., 0.)].view())
            .unwrap();
        let jac = terminal_jacobian(&model, &pulse, &psi0).unwrap();
        assert_eq!(jac.matrix.shape(), &[2, 0]);
    }

    #[test]
    fn jacobian_commuting_column_norm() {
        // Drift and control diagonal: column norm is dt ||H_c ψ_K|| exactly.
        let dom = ParameterDomain::new(
            vec![ParameterSpec::new(1.0, 1.0, 0).unwrap()],
            DomainMode::Legendre,
        )
        .unwrap();
        let drift = Array2::from_diag(&array![c(1., 0.), c(2., 0.)]);
        let ctrl = Array2::from_diag(&array![c(0.5, 0.), c(-1.5, 0.)]);
        let terms = vec![
            HamiltonianTerm::new(drift, None, None).unwrap(),
            HamiltonianTerm::new(ctrl.clone(), Some(0), None).unwrap(),
        ];
        let model = embed_hamiltonians(&terms, &dom).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let pulse = ControlPulse::constant(grid, 0.8, 1, -2.0, 2.0).unwrap();
        let psi0 = model
            .embed_initial_state(array![c(0.6, 0.0), c(0.0, 0.8)].view())
            .unwrap();
        let (res, jac) = propagate_with_jacobian(&model, &pulse, &psi0).unwrap();
        let dt = grid.dt();
        let hc_psi = ctrl.dot(res.terminal());
        let want = dt * hc_psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for k in 0..4 {
            let got = jac
                .matrix
                .column(k)
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn real_embedding_is_an_isometry() {
        let jac = TerminalJacobian {
            matrix: array![[c(0.3, -0.2)], [c(0.0, 1.5)]],
            steps: 1,
            channels: 1,
        };
        let psi_k = array![c(0.1, 0.4), c(-0.3, 0.0)];
        let psi_t = array![c(0.0, 0.0), c(0.0, 0.0)];
        let (j_real, r) = real_embedding(&jac, &psi_k.view(), &psi_t.view());
        assert_eq!(j_real.shape(), &[4, 1]);
        let complex_sq: f64 = psi_k.iter().map(|z| z.norm_sqr()).sum();
        let real_sq: f64 = r.iter().map(|x| x * x).sum();
        assert_abs_diff_eq!(complex_sq, real_sq, epsilon = 1e-14);
        // Purely imaginary residual stacks as (0; v).
        let psi_k2 = array![c(0.0, 0.7), c(0.0, -0.2)];
        let (_, r2) = real_embedding(&jac, &psi_k2.view(), &psi_t.view());
        assert_abs_diff_eq!(r2[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r2[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r2[2], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(r2[3], -0.2, epsilon = 1e-15);
    }

    #[test]
    fn refinement_consistency() {
        // (T, K) equals (T, 2K) with each control value repeated twice.
        let model = two_level_model();
        let grid = TimeGrid::new(1.4, 6).unwrap();
        let values = Array2::from_shape_fn((6, 1), |(k, _)| 0.3 + 0.2 * k as f64);
        let pulse = ControlPulse::new(
            grid,
            values.clone(),
            Array1::from_elem(1, 0.0),
            Array1::from_elem(1, 3.0),
        )
        .unwrap();
        let grid2 = TimeGrid::new(1.4, 12).unwrap();
        let mut values2 = Array2::zeros((12, 1));
        for k in 0..6 {
            values2[[2 * k, 0]] = values[[k, 0]];
            values2[[2 * k + 1, 0]] = values[[k, 0]];
        }
        let pulse2 = ControlPulse::new(
            grid2,
            values2,
            Array1::from_elem(1, 0.0),
            Array1::from_elem(1, 3.0),
        )
        .unwrap();
        let psi0 = model
            .embed_initial_state(array![c(1., 0.), c(0., 0.)].view())
            .unwrap();
        let a = propagate(&model, &pulse, &psi0).unwrap();
        let b = propagate(&model, &pulse2, &psi0).unwrap();
        let err: f64 = (a.terminal() - b.terminal()).iter().map(|z| z.norm()).sum();
        assert!(err < 1e-12);
    }

    #[test]
    fn time_reversal_returns_initial_state() {
        let model = two_level_model();
        let grid = TimeGrid::new(2.0, 30).unwrap();
        let values = Array2::from_shape_fn((30, 1), |(k, _)| ((k as f64) * 0.3).sin());
        let pulse = ControlPulse::new(
            grid,
            values.clone(),
            Array1::from_elem(1, -2.0),
            Array1::from_elem(1, 2.0),
        )
        .unwrap();
        let psi0 = model
            .embed_initial_state(array![c(1., 0.), c(0., 0.)].view())
            .unwrap();
        let fwd = propagate(&model, &pulse, &psi0).unwrap();
        // reversed, negated pulse from ψ_K
        let mut rev = Array2::zeros((30, 1));
        for k in 0..30 {
            rev[[k, 0]] = -values[[29 - k, 0]];
        }
        let pulse_rev = ControlPulse::new(
            grid,
            rev,
            Array1::from_elem(1, -2.0),
            Array1::from_elem(1, 2.0),
        )
        .unwrap();
        let back_state = MomentState {
            coeffs: fwd.terminal().clone(),
            dim_moment: 1,
            dim_physical: 2,
        };
        let back = propagate(&model, &pulse_rev, &back_state).unwrap();
        let err: f64 = (back.terminal() - &psi0.coeffs).iter().map(|z| z.norm()).sum();
        assert!(err < 1e-9);
    }

    #[test]
    fn norm_preserved_over_many_steps() {
        let model = two_level_model();
        let grid = TimeGrid::new(2.0 * std::f64::consts::PI, 630).unwrap();
        let values = Array2::from_shape_fn((630, 1), |(k, _)| 1.0 + ((k as f64) * 0.05).cos());
        let pulse = ControlPulse::new(
            grid,
            values,
            Array1::from_elem(1, -2.0),
            Array1::from_elem(1, 3.0),
        )
        .unwrap();
        let psi0 = model
            .embed_initial_state(array![c(1., 0.), c(0., 0.)].view())
            .unwrap();
        let res = propagate(&model, &pulse, &psi0).unwrap();
        for st in &res.states {
            let n: f64 = st.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn jacobian_linearization_remainder_is_second_order() {
        let model = two_level_model();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let values = Array2::from_elem((16, 1), 1.0);
        let pulse = ControlPulse::new(
            grid,
            values,
            Array1::from_elem(1, -4.0),
            Array1::from_elem(1, 4.0),
        )
        .unwrap();
        let psi0 = model
            .embed_initial_state(array![c(1., 0.), c(0., 0.)].view())
            .unwrap();
        let (res, jac) = propagate_with_jacobian(&model, &pulse, &psi0).unwrap();
        let u0 = pulse.flat();
        let norm_u: f64 = u0.iter().map(|x| x * x).sum::<f64>().sqrt();
        // A deterministic small perturbation with ||δu|| <= 1e-4 ||u||.
        let raw: Array1<f64> = Array1::from_shape_fn(16, |k| ((k * k + 1) as f64 * 0.7).sin());
        let raw_norm: f64 = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let delta = raw.mapv(|x| x / raw_norm * 1e-4 * norm_u);
        let pulse2 = pulse.with_flat(&(&u0 + &delta)).unwrap();
        let res2 = propagate(&model, &pulse2, &psi0).unwrap();
        let mut lin = res.terminal().clone();
        for (j, d) in delta.iter().enumerate() {
            lin.scaled_add(C64::new(*d, 0.0), &jac.matrix.column(j));
        }
        let rem: f64 = (res2.terminal() - &lin)
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt();
        let dn: f64 = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(rem <= 10.0 * dn * dn, "remainder {rem:.3e} vs bound {:.3e}", 10.0 * dn * dn);
    }
}
