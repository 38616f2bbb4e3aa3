//! Per-step propagation kernels built on Hermitian eigendecompositions.
//!
//! Every Hamiltonian handled by this crate is Hermitian (checked at model
//! construction), so a step unitary exp(-i dt H) and its exact directional
//! derivative are computed from the spectral factorization H = Q Λ Q†. The
//! derivative uses the divided-difference (Daleckii–Krein) formula, which for
//! f(λ) = exp(-i dt λ) has the cancellation-free closed form
//! -i dt sinc(dt Δ/2) exp(-i dt (λi+λj)/2). Real-symmetric inputs take a
//! real-arithmetic fast path.

use ndarray::prelude::*;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;

/// Hermitian matrix with a real-symmetric fast path.
#[derive(Debug, Clone)]
pub(crate) enum HermMat {
    Real(Array2<f64>),
    Cplx(Array2<C64>),
}

impl HermMat {
    pub(crate) fn dim(&self) -> usize {
        match self {
            HermMat::Real(m) => m.nrows(),
            HermMat::Cplx(m) => m.nrows(),
        }
    }

    pub(crate) fn zeros_like(dim: usize, real: bool) -> Self {
        if real {
            HermMat::Real(Array2::zeros((dim, dim)))
        } else {
            HermMat::Cplx(Array2::zeros((dim, dim)))
        }
    }

    pub(crate) fn scaled_add(&mut self, c: f64, other: &HermMat) {
        match (self, other) {
            (HermMat::Real(a), HermMat::Real(b)) => a.scaled_add(c, b),
            (HermMat::Cplx(a), HermMat::Cplx(b)) => a.scaled_add(C64::new(c, 0.0), b),
            _ => panic!("mixed real/complex accumulation"),
        }
    }

    pub(crate) fn to_complex(&self) -> Array2<C64> {
        match self {
            HermMat::Real(m) => m.mapv(|x| C64::new(x, 0.0)),
            HermMat::Cplx(m) => m.clone(),
        }
    }
}

/// Spectral factorization of one Hermitian step Hamiltonian.
pub(crate) enum StepEig {
    Real { q: Array2<f64>, lam: Array1<f64> },
    Cplx { q: Array2<C64>, lam: Array1<f64> },
}

/// y = M^T x for real M and complex x.
fn real_tmat_cvec(m: &Array2<f64>, x: &ArrayView1<C64>) -> Array1<C64> {
    let re: Array1<f64> = x.mapv(|z| z.re);
    let im: Array1<f64> = x.mapv(|z| z.im);
    let yre = m.t().dot(&re);
    let yim = m.t().dot(&im);
    Array1::from_iter(yre.iter().zip(yim.iter()).map(|(a, b)| C64::new(*a, *b)))
}

/// y = M x for real M and complex x.
fn real_mat_cvec(m: &Array2<f64>, x: &ArrayView1<C64>) -> Array1<C64> {
    let re: Array1<f64> = x.mapv(|z| z.re);
    let im: Array1<f64> = x.mapv(|z| z.im);
    let yre = m.dot(&re);
    let yim = m.dot(&im);
    Array1::from_iter(yre.iter().zip(yim.iter()).map(|(a, b)| C64::new(*a, *b)))
}

fn azip_assign(out: &mut Array2<C64>, re: &Array2<f64>, im: &Array2<f64>) {
    ndarray::Zip::from(out).and(re).and(im).for_each(|o, r, i| {
        *o = C64::new(*r, *i);
    });
}

impl StepEig {
    pub(crate) fn factorize(h: &HermMat) -> Self {
        match h {
            HermMat::Real(m) => {
                let (lam, q) = m.eigh(UPLO::Lower).expect("symmetric eigensolve failed");
                StepEig::Real { q, lam }
            }
            HermMat::Cplx(m) => {
                let (lam, q) = m.eigh(UPLO::Lower).expect("Hermitian eigensolve failed");
                StepEig::Cplx { q, lam }
            }
        }
    }

    fn phases(lam: &Array1<f64>, dt: f64) -> Array1<C64> {
        lam.mapv(|l| C64::from_polar(1.0, -dt * l))
    }

    /// exp(-i dt H) ψ without forming the unitary.
    pub(crate) fn apply_exp(&self, dt: f64, psi: &ArrayView1<C64>) -> Array1<C64> {
        match self {
            StepEig::Real { q, lam } => {
                let mut w = real_tmat_cvec(q, psi);
                let ph = Self::phases(lam, dt);
                w.zip_mut_with(&ph, |a, p| *a *= *p);
                real_mat_cvec(q, &w.view())
            }
            StepEig::Cplx { q, lam } => {
                let mut w = q.t().mapv(|z| z.conj()).dot(psi);
                let ph = Self::phases(lam, dt);
                w.zip_mut_with(&ph, |a, p| *a *= *p);
                q.dot(&w)
            }
        }
    }

    /// Dense unitary exp(-i dt H).
    pub(crate) fn unitary(&self, dt: f64) -> Array2<C64> {
        match self {
            StepEig::Real { q, lam } => {
                let ph = Self::phases(lam, dt);
                // Q diag(ph) Q^T, with the diagonal folded into the left factor.
                let n = q.nrows();
                let mut qp = Array2::<C64>::zeros((n, n));
                for (j, p) in ph.iter().enumerate() {
                    let col = q.column(j);
                    for i in 0..n {
                        qp[[i, j]] = p * col[i];
                    }
                }
                // (Q ph) Q^T via two real GEMMs on the split parts.
                let re = qp.mapv(|z| z.re);
                let im = qp.mapv(|z| z.im);
                let ure = re.dot(&q.t());
                let uim = im.dot(&q.t());
                let mut u = Array2::<C64>::zeros((n, n));
                azip_assign(&mut u, &ure, &uim);
                u
            }
            StepEig::Cplx { q, lam } => {
                let ph = Self::phases(lam, dt);
                let n = q.nrows();
                let mut qp = Array2::<C64>::zeros((n, n));
                for (j, p) in ph.iter().enumerate() {
                    for i in 0..n {
                        qp[[i, j]] = p * q[[i, j]];
                    }
                }
                qp.dot(&q.t().mapv(|z| z.conj()))
            }
        }
    }

    /// Divided differences of f(λ) = exp(-i dt λ):
    /// (f(λi) - f(λj)) / (λi - λj) = -i dt sinc(dt Δ/2) exp(-i dt (λi+λj)/2).
    fn divided_difference(dt: f64, li: f64, lj: f64) -> C64 {
        let mean = 0.5 * (li + lj);
        let half = 0.5 * dt * (li - lj);
        let sinc = if half.abs() < 1e-8 {
            1.0 - half * half / 6.0
        } else {
            half.sin() / half
        };
        C64::new(0.0, -dt * sinc) * C64::from_polar(1.0, -dt * mean)
    }

    /// Action of the exact derivative of exp(-i dt H) in the Hermitian
    /// direction B, applied to ψ: Q (F ∘ (Q† B Q)) Q† ψ.
    pub(crate) fn derivative_action(
        &self,
        dt: f64,
        direction: &HermMat,
        psi: &ArrayView1<C64>,
    ) -> Array1<C64> {
        match (self, direction) {
            (StepEig::Real { q, lam }, HermMat::Real(b)) => {
                let bq = b.dot(q);
                let btilde = q.t().dot(&bq);
                let w = real_tmat_cvec(q, psi);
                let n = lam.len();
                let mut g = Array1::<C64>::zeros(n);
                for i in 0..n {
                    let mut acc = C64::new(0.0, 0.0);
                    for j in 0..n {
                        let f = Self::divided_difference(dt, lam[i], lam[j]);
                        acc += f * btilde[[i, j]] * w[j];
                    }
                    g[i] = acc;
                }
                real_mat_cvec(q, &g.view())
            }
            (StepEig::Cplx { q, lam }, dir) => {
                let qh = q.t().mapv(|z| z.conj());
                let b = dir.to_complex();
                let btilde = qh.dot(&b).dot(q);
                let w = qh.dot(psi);
                let n = lam.len();
                let mut g = Array1::<C64>::zeros(n);
                for i in 0..n {
                    let mut acc = C64::new(0.0, 0.0);
                    for j in 0..n {
                        let f = Self::divided_difference(dt, lam[i], lam[j]);
                        acc += f * btilde[[i, j]] * w[j];
                    }
                    g[i] = acc;
                }
                q.dot(&g)
            }
            (StepEig::Real { q, lam }, HermMat::Cplx(b)) => {
                // Promote the basis to complex; rare mixed case.
                let qc = q.mapv(|x| C64::new(x, 0.0));
                let btilde = qc.t().dot(b).dot(&qc);
                let w = real_tmat_cvec(q, psi);
                let n = lam.len();
                let mut g = Array1::<C64>::zeros(n);
                for i in 0..n {
                    let mut acc = C64::new(0.0, 0.0);
                    for j in 0..n {
                        let f = Self::divided_difference(dt, lam[i], lam[j]);
                        acc += f * btilde[[i, j]] * w[j];
                    }
                    g[i] = acc;
                }
                real_mat_cvec(q, &g.view())
            }
        }
    }
}

/// One linearly-controlled Hamiltonian H(u) = Σ_m u_{c(m)} w_m M_m, where
/// terms with `channel = None` enter with multiplier 1 (drift).
pub(crate) struct LinearHamiltonian {
    mats: Vec<HermMat>,
    weights: Vec<f64>,
    channels: Vec<Option<usize>>,
    n_channels: usize,
    dim: usize,
    all_real: bool,
    /// Per channel: Σ_{m : c(m)=c} w_m M_m, the derivative direction.
    directions: Vec<HermMat>,
}

impl LinearHamiltonian {
    pub(crate) fn new(
        mats: Vec<HermMat>,
        weights: Vec<f64>,
        channels: Vec<Option<usize>>,
        n_channels: usize,
    ) -> Self {
        assert_eq!(mats.len(), weights.len());
        assert_eq!(mats.len(), channels.len());
        let dim = mats.first().map(|m| m.dim()).unwrap_or(0);
        let all_real = mats.iter().all(|m| matches!(m, HermMat::Real(_)));
        let mats: Vec<HermMat> = if all_real {
            mats
        } else {
            mats.iter()
                .map(|m| HermMat::Cplx(m.to_complex()))
                .collect()
        };
        let mut directions = Vec::with_capacity(n_channels);
        for c in 0..n_channels {
            let mut dir = HermMat::zeros_like(dim, all_real);
            for (i, ch) in channels.iter().enumerate() {
                if *ch == Some(c) {
                    dir.scaled_add(weights[i], &mats[i]);
                }
            }
            directions.push(dir);
        }
        Self {
            mats,
            weights,
            channels,
            n_channels,
            dim,
            all_real,
            directions,
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.dim
    }

    pub(crate) fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub(crate) fn direction(&self, channel: usize) -> &HermMat {
        &self.directions[channel]
    }

    /// Assemble H(u) for one step; `controls` has one entry per channel.
    pub(crate) fn assemble(&self, controls: &[f64]) -> HermMat {
        assert_eq!(controls.len(), self.n_channels);
        let mut h = HermMat::zeros_like(self.dim, self.all_real);
        for (i, mat) in self.mats.iter().enumerate() {
            let u = match self.channels[i] {
                None => 1.0,
                Some(c) => controls[c],
            };
            h.scaled_add(u * self.weights[i], mat);
        }
        h
    }
}

/// Forward-propagate ψ through K piecewise-constant steps.
/// `controls` is K x C (channel values per step). Returns all K+1 states.
/// Errors with the step index if a non-finite state appears.
pub(crate) fn propagate_states(
    lh: &LinearHamiltonian,
    dt: f64,
    controls: &ArrayView2<f64>,
    psi0: &ArrayView1<C64>,
) -> Result<Vec<Array1<C64>>, usize> {
    let k_steps = controls.nrows();
    let mut states = Vec::with_capacity(k_steps + 1);
    states.push(psi0.to_owned());
    for k in 0..k_steps {
        let u: Vec<f64> = controls.row(k).to_vec();
        let h = lh.assemble(&u);
        let eig = StepEig::factorize(&h);
        let next = eig.apply_exp(dt, &states[k].view());
        if next.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(k);
        }
        states.push(next);
    }
    Ok(states)
}

/// Forward states plus the terminal-state Jacobian block for this system.
///
/// Column (k, c) of the returned matrix is U_{K-1}···U_{k+1} ∂U_k/∂u_c ψ_k,
/// laid out k-outer / channel-inner. Spectral data for every step is cached
/// from the forward pass; the backward pass accumulates the left product one
/// step at a time.
pub(crate) fn propagate_with_jacobian(
    lh: &LinearHamiltonian,
    dt: f64,
    controls: &ArrayView2<f64>,
    psi0: &ArrayView1<C64>,
) -> Result<(Vec<Array1<C64>>, Array2<C64>), usize> {
    let k_steps = controls.nrows();
    let n_ch = lh.n_channels();
    let dim = lh.dim();
    let mut states = Vec::with_capacity(k_steps + 1);
    states.push(psi0.to_owned());
    let mut eigs = Vec::with_capacity(k_steps);
    for k in 0..k_steps {
        let u: Vec<f64> = controls.row(k).to_vec();
        let h = lh.assemble(&u);
        let eig = StepEig::factorize(&h);
        let next = eig.apply_exp(dt, &states[k].view());
        if next.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(k);
        }
        states.push(next);
        eigs.push(eig);
    }
    let mut jac = Array2::<C64>::zeros((dim, k_steps * n_ch));
    // Left product P = U_{K-1} ... U_{k+1}, extended backwards.
    let mut left = Array2::<C64>::eye(dim);
    for k in (0..k_steps).rev() {
        for c in 0..n_ch {
            let v = eigs[k].derivative_action(dt, lh.direction(c), &states[k].view());
            let col = left.dot(&v);
            jac.column_mut(k * n_ch + c).assign(&col);
        }
        if k > 0 {
            let u_k = eigs[k].unitary(dt);
            left = left.dot(&u_k);
        }
    }
    Ok((states, jac))
}
