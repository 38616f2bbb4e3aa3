//! Finite-dimensional moment-space representation of a Hamiltonian family that
//! depends linearly on interval-valued parameters.
//!
//! Each parameter is represented either by a Legendre moment expansion (a
//! symmetric tridiagonal coupling matrix between neighboring polynomial
//! degrees) or by direct sampling (a diagonal matrix of equispaced samples).
//! Embedding a physical Hamiltonian term into the joint moment space is a
//! chain of Kronecker products with identity factors in the slots of the
//! other parameters and the physical matrix rightmost.
//!
//! Because every moment-space factor is symmetric and acts in its own slot,
//! the whole embedded family is simultaneously block-diagonalized by the
//! orthogonal eigenbases of the per-parameter matrices. The model keeps that
//! factorization alongside the dense embedded operators; propagation uses the
//! decoupled blocks, while the dense form serves as the reference
//! representation.

use ndarray::linalg::kron;
use ndarray::prelude::*;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::spectral::HermMat;

/// Entrywise Hermiticity budget for model inputs.
pub const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid parameter interval: min {0} > max {1}")]
    InvalidInterval(f64, f64),
    #[error("parameter domain must contain at least one parameter")]
    EmptyDomain,
    #[error("term {index} is not Hermitian: max deviation {deviation:.3e}")]
    NonHermitian { index: usize, deviation: f64 },
    #[error("term {index} has physical dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("term {index} references parameter {param}, but the domain has {n_params}")]
    BadParameterIndex {
        index: usize,
        param: usize,
        n_params: usize,
    },
    #[error("control channels must be contiguous starting at 0; missing channel {0}")]
    NonContiguousChannels(usize),
    #[error("no Hamiltonian terms supplied")]
    NoTerms,
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("state length {got} does not match model dimension {expected}")]
    StateDimension { got: usize, expected: usize },
    #[error("parameter value {value} outside design interval [{min}, {max}]")]
    OutsideDomain { value: f64, min: f64, max: f64 },
    #[error("operation requires Legendre mode")]
    SamplingUnsupported,
    #[error("expected {expected} parameter values, got {got}")]
    GammaLength { got: usize, expected: usize },
}

/// Parameter representation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainMode {
    /// Legendre moment expansion of the stated degree.
    Legendre,
    /// Equispaced sampling with degree + 1 samples (endpoints included).
    Sampling,
}

/// Design interval and truncation degree for one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterSpec {
    gamma_min: f64,
    gamma_max: f64,
    degree: usize,
}

impl ParameterSpec {
    pub fn new(gamma_min: f64, gamma_max: f64, degree: usize) -> Result<Self, EnsembleError> {
        if !(gamma_min <= gamma_max) {
            return Err(EnsembleError::InvalidInterval(gamma_min, gamma_max));
        }
        // A degenerate interval carries no variation; force degree 0 so the
        // coupling matrix reduces to the scalar midpoint.
        let degree = if gamma_min == gamma_max { 0 } else { degree };
        Ok(Self {
            gamma_min,
            gamma_max,
            degree,
        })
    }

    pub fn gamma_min(&self) -> f64 {
        self.gamma_min
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma_max
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Interval midpoint γ̄.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.gamma_max + self.gamma_min)
    }

    /// Maximum absolute variation γ̲ (half-width).
    pub fn half_width(&self) -> f64 {
        0.5 * (self.gamma_max - self.gamma_min)
    }

    fn contains(&self, value: f64) -> bool {
        let slack = 1e-12 * (1.0 + self.half_width().abs() + self.midpoint().abs());
        value >= self.gamma_min - slack && value <= self.gamma_max + slack
    }
}

/// Ordered list of parameter specs plus the representation mode.
#[derive(Debug, Clone)]
pub struct ParameterDomain {
    specs: Vec<ParameterSpec>,
    mode: DomainMode,
}

impl ParameterDomain {
    pub fn new(specs: Vec<ParameterSpec>, mode: DomainMode) -> Result<Self, EnsembleError> {
        if specs.is_empty() {
            return Err(EnsembleError::EmptyDomain);
        }
        Ok(Self { specs, mode })
    }

    pub fn specs(&self) -> &[ParameterSpec] {
        &self.specs
    }

    pub fn mode(&self) -> DomainMode {
        self.mode
    }

    pub fn n_params(&self) -> usize {
        self.specs.len()
    }

    /// Total moment count |N| = Π (degree_m + 1).
    pub fn moment_count(&self) -> usize {
        self.specs.iter().map(|s| s.degree + 1).product()
    }

    /// Multi-index of a flat block index under the row-major enumeration
    /// (last parameter fastest).
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.specs.len()];
        for m in (0..self.specs.len()).rev() {
            let size = self.specs[m].degree + 1;
            idx[m] = flat % size;
            flat /= size;
        }
        idx
    }

    pub fn contains(&self, gamma: &[f64]) -> bool {
        gamma.len() == self.specs.len()
            && self
                .specs
                .iter()
                .zip(gamma)
                .all(|(s, g)| s.contains(*g))
    }
}

/// c_n = (n+1) / sqrt((2n+3)(2n+1)), the normalized-Legendre recurrence
/// coefficient driving nearest-degree coupling.
pub fn legendre_recurrence_coeff(n: usize) -> f64 {
    let nf = n as f64;
    (nf + 1.0) / (((2.0 * nf + 3.0) * (2.0 * nf + 1.0)).sqrt())
}

/// Per-parameter moment coupling matrix.
///
/// Legendre mode: symmetric tridiagonal with γ̄ on the diagonal and
/// c_1 γ̲ … c_N γ̲ on the off-diagonals. Sampling mode: diagonal of
/// degree + 1 equispaced samples spanning the interval inclusively
/// (a single sample sits at the midpoint).
pub fn build_gamma_matrix(spec: &ParameterSpec, mode: DomainMode) -> Array2<f64> {
    let n = spec.degree;
    match mode {
        DomainMode::Legendre => {
            let mut g = Array2::<f64>::eye(n + 1) * spec.midpoint();
            let hw = spec.half_width();
            for i in 0..n {
                let c = legendre_recurrence_coeff(i + 1) * hw;
                g[[i, i + 1]] = c;
                g[[i + 1, i]] = c;
            }
            g
        }
        DomainMode::Sampling => {
            let samples: Vec<f64> = if n == 0 {
                vec![spec.midpoint()]
            } else {
                (0..=n)
                    .map(|i| {
                        spec.gamma_min
                            + (spec.gamma_max - spec.gamma_min) * i as f64 / n as f64
                    })
                    .collect()
            };
            Array2::from_diag(&Array1::from_vec(samples))
        }
    }
}

/// One physical Hamiltonian term before embedding.
#[derive(Debug, Clone)]
pub struct HamiltonianTerm {
    matrix: Array2<C64>,
    /// `None` marks a drift term with u ≡ 1; `Some(c)` is the control channel.
    control: Option<usize>,
    /// `None` means fixed coefficient 1; `Some(p)` scales by parameter p.
    parameter_index: Option<usize>,
}

fn hermiticity_deviation(m: &Array2<C64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let d = (m[[i, j]] - m[[j, i]].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

impl HamiltonianTerm {
    pub fn new(
        matrix: Array2<C64>,
        control: Option<usize>,
        parameter_index: Option<usize>,
    ) -> Result<Self, EnsembleError> {
        let dev = hermiticity_deviation(&matrix);
        if dev > HERMITICITY_TOL {
            return Err(EnsembleError::NonHermitian {
                index: 0,
                deviation: dev,
            });
        }
        Ok(Self {
            matrix,
            control,
            parameter_index,
        })
    }

    /// Real-valued drift/control term.
    pub fn from_real(
        matrix: Array2<f64>,
        control: Option<usize>,
        parameter_index: Option<usize>,
    ) -> Result<Self, EnsembleError> {
        Self::new(matrix.mapv(|x| C64::new(x, 0.0)), control, parameter_index)
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn control(&self) -> Option<usize> {
        self.control
    }

    pub fn parameter_index(&self) -> Option<usize> {
        self.parameter_index
    }
}

/// One embedded operator of the joint moment-space model.
#[derive(Debug, Clone)]
pub struct EmbeddedTerm {
    /// Dense embedded operator, dimension |N| (N+1).
    pub matrix: Array2<C64>,
    pub control: Option<usize>,
    pub parameter_index: Option<usize>,
}

/// Exact simultaneous block-diagonalization of the embedded family.
pub(crate) struct BlockStructure {
    /// R = O_1 ⊗ … ⊗ O_M, orthogonal on the moment factor.
    pub rot_moment: Array2<f64>,
    /// Per-block, per-term multiplier (the parameter eigenvalue, or 1).
    pub node_weights: Array2<f64>,
    /// Eigenvalues of each parameter's coupling matrix (spectral nodes).
    pub param_nodes: Vec<Array1<f64>>,
    /// First row of each parameter's eigenvector matrix, O_m[0, :].
    pub param_first_rows: Vec<Array1<f64>>,
    /// Physical matrices shared by all blocks, real-typed when possible.
    pub physical: Vec<HermMat>,
}

/// The embedded control system over the joint (moment ⊗ physical) space.
pub struct EnsembleModel {
    terms: Vec<EmbeddedTerm>,
    dim_physical: usize,
    dim_moment: usize,
    n_channels: usize,
    domain: ParameterDomain,
    pub(crate) blocks: BlockStructure,
}

/// Complex coefficient vector over (moment index) ⊗ (physical basis).
#[derive(Debug, Clone)]
pub struct MomentState {
    pub coeffs: Array1<C64>,
    pub dim_moment: usize,
    pub dim_physical: usize,
}

impl MomentState {
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// ⟨self | other⟩.
    pub fn overlap(&self, other: &MomentState) -> C64 {
        self.coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn dim_total(&self) -> usize {
        self.coeffs.len()
    }
}

/// Embed physical terms into the joint moment space.
///
/// Term m with parameter index p becomes
/// I ⊗ … ⊗ Γ_p ⊗ … ⊗ I ⊗ Ĥ_m (physical factor rightmost, moment blocks in
/// row-major multi-index order); terms without a parameter use the identity
/// in place of Γ.
pub fn embed_hamiltonians(
    terms: &[HamiltonianTerm],
    domain: &ParameterDomain,
) -> Result<EnsembleModel, EnsembleError> {
    if terms.is_empty() {
        return Err(EnsembleError::NoTerms);
    }
    let dim_physical = terms[0].matrix.nrows();
    for (index, t) in terms.iter().enumerate() {
        if t.matrix.nrows() != dim_physical || t.matrix.ncols() != dim_physical {
            return Err(EnsembleError::DimensionMismatch {
                index,
                got: t.matrix.nrows(),
                expected: dim_physical,
            });
        }
        let dev = hermiticity_deviation(&t.matrix);
        if dev > HERMITICITY_TOL {
            return Err(EnsembleError::NonHermitian {
                index,
                deviation: dev,
            });
        }
        if let Some(p) = t.parameter_index {
            if p >= domain.n_params() {
                return Err(EnsembleError::BadParameterIndex {
                    index,
                    param: p,
                    n_params: domain.n_params(),
                });
            }
        }
    }
    // Channels must be 0..C with no gaps.
    let mut channels: Vec<usize> = terms.iter().filter_map(|t| t.control).collect();
    channels.sort_unstable();
    channels.dedup();
    let n_channels = channels.len();
    for (want, got) in channels.iter().enumerate() {
        if *got != want {
            return Err(EnsembleError::NonContiguousChannels(want));
        }
    }

    let gammas: Vec<Array2<f64>> = domain
        .specs()
        .iter()
        .map(|s| build_gamma_matrix(s, domain.mode()))
        .collect();

    // Dense embeddings.
    let dim_moment = domain.moment_count();
    let mut embedded = Vec::with_capacity(terms.len());
    for t in terms {
        let mut factor: Array2<C64> = Array2::eye(1);
        for (p, g) in gammas.iter().enumerate() {
            let slot: Array2<C64> = if t.parameter_index == Some(p) {
                g.mapv(|x| C64::new(x, 0.0))
            } else {
                Array2::eye(g.nrows())
            };
            factor = kron(&factor, &slot);
        }
        let matrix = kron(&factor, &t.matrix);
        embedded.push(EmbeddedTerm {
            matrix,
            control: t.control,
            parameter_index: t.parameter_index,
        });
    }

    // Joint spectral factorization of the moment factors.
    let mut rot_moment: Array2<f64> = Array2::eye(1);
    let mut param_nodes = Vec::with_capacity(gammas.len());
    let mut param_first_rows = Vec::with_capacity(gammas.len());
    for g in &gammas {
        let (nodes, o) = match domain.mode() {
            // Diagonal already; keep the sample order and the identity basis.
            DomainMode::Sampling => (g.diag().to_owned(), Array2::eye(g.nrows())),
            DomainMode::Legendre => g.eigh(UPLO::Lower).expect("coupling matrix eigensolve"),
        };
        param_first_rows.push(o.row(0).to_owned());
        rot_moment = kron(&rot_moment, &o);
        param_nodes.push(nodes);
    }
    let mut node_weights = Array2::<f64>::zeros((dim_moment, terms.len()));
    for b in 0..dim_moment {
        let multi = domain.multi_index(b);
        for (m, t) in terms.iter().enumerate() {
            node_weights[[b, m]] = match t.parameter_index {
                None => 1.0,
                Some(p) => param_nodes[p][multi[p]],
            };
        }
    }
    let all_real = terms
        .iter()
        .all(|t| t.matrix.iter().all(|z| z.im == 0.0));
    let physical: Vec<HermMat> = terms
        .iter()
        .map(|t| {
            if all_real {
                HermMat::Real(t.matrix.mapv(|z| z.re))
            } else {
                HermMat::Cplx(t.matrix.clone())
            }
        })
        .collect();

    Ok(EnsembleModel {
        terms: embedded,
        dim_physical,
        dim_moment,
        n_channels,
        domain: domain.clone(),
        blocks: BlockStructure {
            rot_moment,
            node_weights,
            param_nodes,
            param_first_rows,
            physical,
        },
    })
}

impl EnsembleModel {
    pub fn terms(&self) -> &[EmbeddedTerm] {
        &self.terms
    }

    pub fn domain(&self) -> &ParameterDomain {
        &self.domain
    }

    pub fn dim_physical(&self) -> usize {
        self.dim_physical
    }

    pub fn dim_moment(&self) -> usize {
        self.dim_moment
    }

    pub fn dim_total(&self) -> usize {
        self.dim_moment * self.dim_physical
    }

    /// Number of optimized control channels.
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    /// Per-term multipliers for one step given the optimized channel values:
    /// drift terms get 1, controlled terms their channel value.
    pub fn full_controls(&self, channel_values: &[f64]) -> Vec<f64> {
        assert_eq!(channel_values.len(), self.n_channels);
        self.terms
            .iter()
            .map(|t| match t.control {
                None => 1.0,
                Some(c) => channel_values[c],
            })
            .collect()
    }

    /// Moment-space embedding of a parameter-independent physical state.
    ///
    /// Legendre mode places the state in the degree-zero block; sampling mode
    /// replicates it across all sample blocks. The result is normalized.
    pub fn embed_initial_state(
        &self,
        psi0: ArrayView1<C64>,
    ) -> Result<MomentState, EnsembleError> {
        if psi0.len() != self.dim_physical {
            return Err(EnsembleError::StateDimension {
                got: psi0.len(),
                expected: self.dim_physical,
            });
        }
        let n0: f64 = psi0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n0 < 1e-14 {
            return Err(EnsembleError::ZeroNorm);
        }
        let mut coeffs = Array1::<C64>::zeros(self.dim_total());
        match self.domain.mode() {
            DomainMode::Legendre => {
                for (i, z) in psi0.iter().enumerate() {
                    coeffs[i] = *z;
                }
            }
            DomainMode::Sampling => {
                for b in 0..self.dim_moment {
                    for (i, z) in psi0.iter().enumerate() {
                        coeffs[b * self.dim_physical + i] = *z;
                    }
                }
            }
        }
        let norm: f64 = coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        coeffs.mapv_inplace(|z| z / norm);
        Ok(MomentState {
            coeffs,
            dim_moment: self.dim_moment,
            dim_physical: self.dim_physical,
        })
    }

    /// Evaluate the represented wavefunction at a parameter point.
    ///
    /// The state is expanded in the cardinal basis attached to the spectral
    /// nodes of the per-parameter coupling matrices, so a parameter-constant
    /// state reconstructs exactly and the error for analytic parameter
    /// dependence decreases spectrally with the expansion degree.
    pub fn reconstruct_wavefunction(
        &self,
        state: &MomentState,
        gamma: &[f64],
    ) -> Result<Array1<C64>, EnsembleError> {
        if self.domain.mode() != DomainMode::Legendre {
            return Err(EnsembleError::SamplingUnsupported);
        }
        if gamma.len() != self.domain.n_params() {
            return Err(EnsembleError::GammaLength {
                got: gamma.len(),
                expected: self.domain.n_params(),
            });
        }
        for (s, g) in self.domain.specs().iter().zip(gamma) {
            if !s.contains(*g) {
                return Err(EnsembleError::OutsideDomain {
                    value: *g,
                    min: s.gamma_min(),
                    max: s.gamma_max(),
                });
            }
        }
        if state.dim_total() != self.dim_total() {
            return Err(EnsembleError::StateDimension {
                got: state.dim_total(),
                expected: self.dim_total(),
            });
        }
        // Cardinal (Lagrange) weights per parameter at the query point.
        let mut cardinal: Vec<Vec<f64>> = Vec::with_capacity(self.domain.n_params());
        for (p, nodes) in self.blocks.param_nodes.iter().enumerate() {
            let g = gamma[p];
            let n = nodes.len();
            let mut w = vec![1.0f64; n];
            for j in 0..n {
                for i in 0..n {
                    if i != j {
                        w[j] *= (g - nodes[i]) / (nodes[j] - nodes[i]);
                    }
                }
            }
            let _ = p;
            cardinal.push(w);
        }
        let tilde = self.to_block_basis(&state.coeffs.view());
        let p_dim = self.dim_physical;
        let mut out = Array1::<C64>::zeros(p_dim);
        for b in 0..self.dim_moment {
            let multi = self.domain.multi_index(b);
            let mut weight = 1.0f64;
            for (m, a) in multi.iter().enumerate() {
                let first = self.blocks.param_first_rows[m][*a];
                weight *= cardinal[m][*a] / first;
            }
            let block = tilde.slice(s![b * p_dim..(b + 1) * p_dim]);
            out.scaled_add(C64::new(weight, 0.0), &block);
        }
        Ok(out)
    }


    /// Spectral node value of parameter `param` at node index `idx`.
    pub fn node_value(&self, param: usize, idx: usize) -> f64 {
        self.blocks.param_nodes[param][idx]
    }

    /// First-row eigenvector entry of parameter `param` at node `idx`.
    pub fn node_first_row(&self, param: usize, idx: usize) -> f64 {
        self.blocks.param_first_rows[param][idx]
    }

    /// Rotate a joint-space vector into the decoupled block basis.
    pub(crate) fn to_block_basis(&self, psi: &ArrayView1<C64>) -> Array1<C64> {
        self.rotate_moment(psi, true)
    }

    /// Rotate a block-basis vector back to the original moment basis.
    pub(crate) fn from_block_basis(&self, psi: &ArrayView1<C64>) -> Array1<C64> {
        self.rotate_moment(psi, false)
    }

    fn rotate_moment(&self, psi: &ArrayView1<C64>, transpose: bool) -> Array1<C64> {
        let r = &self.blocks.rot_moment;
        let (nm, np) = (self.dim_moment, self.dim_physical);
        let mat = psi
            .to_shape((nm, np))
            .expect("state length mismatch")
            .to_owned();
        let re = mat.mapv(|z| z.re);
        let im = mat.mapv(|z| z.im);
        let (ore, oim) = if transpose {
            (r.t().dot(&re), r.t().dot(&im))
        } else {
            (r.dot(&re), r.dot(&im))
        };
        let mut out = Array1::<C64>::zeros(nm * np);
        for b in 0..nm {
            for i in 0..np {
                out[b * np + i] = C64::new(ore[[b, i]], oim[[b, i]]);
            }
        }
        out
    }

    /// Rotate a (D x n) matrix of block-basis columns back to the original
    /// moment basis (moment mode contraction with R).
    pub(crate) fn matrix_from_block_basis(&self, m: &Array2<C64>) -> Array2<C64> {
        let (nm, np) = (self.dim_moment, self.dim_physical);
        let ncols = m.ncols();
        let re = m.mapv(|z| z.re);
        let im = m.mapv(|z| z.im);
        let re3 = re.to_shape((nm, np * ncols)).unwrap().to_owned();
        let im3 = im.to_shape((nm, np * ncols)).unwrap().to_owned();
        let r = &self.blocks.rot_moment;
        let ore = r.dot(&re3);
        let oim = r.dot(&im3);
        let mut out = Array2::<C64>::zeros((nm * np, ncols));
        for b in 0..nm {
            for i in 0..np {
                for j in 0..ncols {
                    out[[b * np + i, j]] = C64::new(ore[[b, i * ncols + j]], oim[[b, i * ncols + j]]);
                }
            }
        }
        out
    }
}
