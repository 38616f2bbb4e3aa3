//! Robust quantum optimal control for parametrized ensembles.
//!
//! This crate synthesizes minimum-energy piecewise-constant control pulses that
//! transfer a quantum system to a target state with fidelity that is uniform
//! over a continuum of Hamiltonian parameter values. Parameter variation is
//! captured either by a Legendre moment expansion or by direct sampling
//! ([`ensemble`]), states are evolved by exact step exponentials
//! ([`propagator`]), and the control is iterated through a two-stage sequence
//! of quadratic programs ([`qp`], [`synth`]): a fidelity stage followed by a
//! fidelity-preserving energy-minimization stage. The [`bragg`] module applies
//! the machinery to Bragg beamsplitter design for atom interferometry and
//! provides the signed momentum-ladder verification model.

extern crate blas_src;

pub mod bragg;
pub mod ensemble;
pub mod expm;
pub mod filter;
pub mod propagator;
pub mod qp;
pub(crate) mod spectral;
pub mod synth;

pub use bragg::{
    BraggConfig, FilterSweepReport, FoldedBraggModel, RobustnessReport, SignedRamanNath,
};
pub use ensemble::{
    DomainMode, EnsembleModel, HamiltonianTerm, MomentState, ParameterDomain, ParameterSpec,
};
pub use propagator::{ControlPulse, PropagationResult, TerminalJacobian, TimeGrid};
pub use qp::{BoxBounds, QpSolution};
pub use synth::{SolverConfig, SynthesisReport};
