//! Strictly convex quadratic programs of the synthesis loop.
//!
//! Two problems are solved: ridge-regularized least squares over a box
//! (fidelity stage) and norm minimization over a box intersected with the
//! kernel of a linear map (energy stage). Both reduce to
//!
//! ```text
//!     minimize   x' H x + 2 g' x
//!     subject to lb <= x <= ub,   E x = 0
//! ```
//!
//! with H symmetric positive definite, solved by a primal active-set method
//! on the normal-equations form. Equality constraints are handled by a Schur
//! complement against the free-variable block; ties and drops follow Bland's
//! rule so the iteration cannot cycle. The zero vector is feasible by
//! construction (the box straddles zero and E 0 = 0), which also yields the
//! monotonicity guarantee of the energy stage.

use ndarray::prelude::*;
use ndarray_linalg::{Eigh, FactorizeC, SolveC, SVD, UPLO};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::propagator::TerminalJacobian;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("inputs contain non-finite values")]
    NonFinite,
    #[error("regularization parameter must be positive, got {0}")]
    BadRegularization(f64),
    #[error("bounds must straddle zero: component {index} has [{lower}, {upper}]")]
    InfeasibleBox {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("factorization failed; quadratic form not positive definite")]
    Factorization,
    #[error("active-set iteration limit reached")]
    IterationLimit,
    #[error("target state has zero norm")]
    ZeroTarget,
}

/// Box on the decision variable; zero must be feasible.
#[derive(Debug, Clone)]
pub struct BoxBounds {
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
}

impl BoxBounds {
    pub fn new(lower: Array1<f64>, upper: Array1<f64>) -> Result<Self, QpError> {
        if lower.len() != upper.len() {
            return Err(QpError::Shape(format!(
                "lower has {} entries, upper {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) {
            return Err(QpError::NonFinite);
        }
        for i in 0..lower.len() {
            if !(lower[i] <= 0.0 && upper[i] >= 0.0) {
                return Err(QpError::InfeasibleBox {
                    index: i,
                    lower: lower[i],
                    upper: upper[i],
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }
}

/// Solution record; the box is satisfied exactly.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub delta_u: Array1<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Which bound, if any, each coordinate is pinned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundState {
    Free,
    Lower,
    Upper,
}

/// Warm-start token carrying the final active set of a previous solve.
#[derive(Debug, Clone, Default)]
pub struct ActiveSet(pub Vec<BoundState>);

enum QuadForm {
    Dense(Array2<f64>),
    ScaledIdentity { dim: usize, factor: f64 },
}

impl QuadForm {
    fn dim(&self) -> usize {
        match self {
            QuadForm::Dense(h) => h.nrows(),
            QuadForm::ScaledIdentity { dim, .. } => *dim,
        }
    }

    fn mul_vec(&self, x: &Array1<f64>) -> Array1<f64> {
        match self {
            QuadForm::Dense(h) => h.dot(x),
            QuadForm::ScaledIdentity { factor, .. } => x.mapv(|v| v * factor),
        }
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            QuadForm::Dense(h) => h[[i, j]],
            QuadForm::ScaledIdentity { factor, .. } => {
                if i == j {
                    *factor
                } else {
                    0.0
                }
            }
        }
    }
}

/// Solver for the free-block system H_FF x = b, caching the factorization.
enum FreeSolver {
    Chol(ndarray_linalg::CholeskyFactorized<ndarray::OwnedRepr<f64>>),
    Scaled(f64),
}

impl FreeSolver {
    fn build(h: &QuadForm, free: &[usize]) -> Result<Self, QpError> {
        match h {
            QuadForm::ScaledIdentity { factor, .. } => Ok(FreeSolver::Scaled(*factor)),
            QuadForm::Dense(m) => {
                let sub = m.select(Axis(0), free).select(Axis(1), free);
                let f = sub
                    .factorizec(UPLO::Lower)
                    .map_err(|_| QpError::Factorization)?;
                Ok(FreeSolver::Chol(f))
            }
        }
    }

    fn solve(&self, b: &Array1<f64>) -> Result<Array1<f64>, QpError> {
        match self {
            FreeSolver::Scaled(f) => Ok(b.mapv(|v| v / f)),
            FreeSolver::Chol(fac) => fac.solvec(b).map_err(|_| QpError::Factorization),
        }
    }
}

/// Pseudo-solve of the symmetric PSD Schur system S x = b. Directions below
/// the cutoff are unreachable from the current face and carry no multiplier;
/// the cutoff is kept well above roundoff so near-null modes cannot inject
/// large multiplier noise into the optimality test.
fn psd_pseudo_solve(s: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>, QpError> {
    let (vals, vecs) = s.eigh(UPLO::Lower).map_err(|_| QpError::Factorization)?;
    let vmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let cut = 1e-8 * vmax.max(1e-300);
    let proj = vecs.t().dot(b);
    let scaled = Array1::from_iter(
        proj.iter()
            .zip(vals.iter())
            .map(|(p, v)| if *v > cut { p / v } else { 0.0 }),
    );
    Ok(vecs.dot(&scaled))
}

struct ActiveSetOutcome {
    x: Array1<f64>,
    active: Vec<BoundState>,
    iterations: usize,
    kkt_residual: f64,
}

/// Primal active-set iteration for min x'Hx + 2g'x over the box and E x = 0.
fn active_set_solve(
    h: &QuadForm,
    g: &Array1<f64>,
    bounds: &BoxBounds,
    eq: Option<&Array2<f64>>,
    warm: Option<&ActiveSet>,
) -> Result<ActiveSetOutcome, QpError> {
    let n = h.dim();
    if g.len() != n || bounds.len() != n {
        return Err(QpError::Shape(format!(
            "quadratic dim {n}, gradient {}, bounds {}",
            g.len(),
            bounds.len()
        )));
    }
    if let Some(e) = eq {
        if e.ncols() != n {
            return Err(QpError::Shape(format!(
                "equality matrix has {} columns, expected {n}",
                e.ncols()
            )));
        }
    }
    let mut x = Array1::<f64>::zeros(n);
    let mut active: Vec<BoundState> = vec![BoundState::Free; n];
    if let Some(hint) = warm {
        if hint.0.len() == n {
            for i in 0..n {
                // Only bounds passing through the feasible start x = 0 can be
                // pre-activated.
                match hint.0[i] {
                    BoundState::Lower if bounds.lower[i] == 0.0 => active[i] = BoundState::Lower,
                    BoundState::Upper if bounds.upper[i] == 0.0 => active[i] = BoundState::Upper,
                    _ => {}
                }
            }
        }
    }
    let cap = 60 * (n + 1) + 200;
    let gscale = 1.0 + g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut iterations = 0usize;
    loop {
        iterations += 1;
        if iterations > cap {
            return Err(QpError::IterationLimit);
        }
        let free: Vec<usize> = (0..n).filter(|&i| active[i] == BoundState::Free).collect();
        let pinned: Vec<usize> = (0..n).filter(|&i| active[i] != BoundState::Free).collect();
        // Target point y of the equality-constrained subproblem on this face.
        let mut y = Array1::<f64>::zeros(n);
        for &i in &pinned {
            y[i] = match active[i] {
                BoundState::Lower => bounds.lower[i],
                BoundState::Upper => bounds.upper[i],
                BoundState::Free => unreachable!(),
            };
        }
        let mut nu: Option<Array1<f64>> = None;
        if !free.is_empty() {
            // rhs = -(g_F + H_FP y_P)
            let mut rhs = Array1::<f64>::zeros(free.len());
            for (a, &i) in free.iter().enumerate() {
                let mut v = g[i];
                for &j in &pinned {
                    v += h.entry(i, j) * y[j];
                }
                rhs[a] = -v;
            }
            let solver = FreeSolver::build(h, &free)?;
            let t0 = solver.solve(&rhs)?;
            match eq {
                None => {
                    for (a, &i) in free.iter().enumerate() {
                        y[i] = t0[a];
                    }
                }
                Some(e) => {
                    let e_f = e.select(Axis(1), &free);
                    // Constraint on the face: E_F x_F = -E_P y_P.
                    let mut d = Array1::<f64>::zeros(e.nrows());
                    for &j in &pinned {
                        d.scaled_add(-y[j], &e.column(j));
                    }
                    let r = e.nrows();
                    let mut w1 = Array2::<f64>::zeros((free.len(), r));
                    for k in 0..r {
                        let col = solver.solve(&e_f.row(k).to_owned())?;
                        w1.column_mut(k).assign(&col);
                    }
                    let s_mat = e_f.dot(&w1);
                    let rhs_nu = &e_f.dot(&t0) - &d;
                    let nu_vec = psd_pseudo_solve(&s_mat, &rhs_nu)?;
                    let yf = &t0 - &w1.dot(&nu_vec);
                    for (a, &i) in free.iter().enumerate() {
                        y[i] = yf[a];
                    }
                    nu = Some(nu_vec);
                }
            }
        } else if let Some(e) = eq {
            // Everything pinned; recover multipliers by least squares.
            let resid = -(h.mul_vec(&y) + g);
            let s_mat = e.dot(&e.t());
            let rhs_nu = e.dot(&resid);
            nu = Some(psd_pseudo_solve(&s_mat, &rhs_nu)?);
        }
        let d: Array1<f64> = &y - &x;
        let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let xmax = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if dmax <= 1e-13 * (1.0 + xmax) {
            // Stationary on the current face: test bound multipliers. The
            // tolerance scales with the multiplier magnitude so pseudo-solve
            // noise cannot force spurious drops.
            let mut resid = h.mul_vec(&x) + g;
            let mut nu_scale = 0.0f64;
            if let (Some(e), Some(nu_vec)) = (eq, nu.as_ref()) {
                let etnu = e.t().dot(nu_vec);
                nu_scale = etnu.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                resid = resid + etnu;
            }
            let tol = 1e-10 * (gscale + nu_scale);
            let mut drop_idx: Option<usize> = None;
            for i in 0..n {
                match active[i] {
                    BoundState::Lower if resid[i] < -tol => {
                        drop_idx = Some(i);
                        break;
                    }
                    BoundState::Upper if resid[i] > tol => {
                        drop_idx = Some(i);
                        break;
                    }
                    _ => {}
                }
            }
            match drop_idx {
                Some(i) => {
                    active[i] = BoundState::Free;
                    continue;
                }
                None => {
                    let kkt = kkt_residual(h, g, &x, eq, nu.as_ref(), &active);
                    return Ok(ActiveSetOutcome {
                        x,
                        active,
                        iterations,
                        kkt_residual: kkt,
                    });
                }
            }
        }
        // Step toward y, blocking on the first violated bound (Bland).
        let mut alpha = 1.0f64;
        let mut blocker: Option<(usize, BoundState)> = None;
        let dtiny = 1e-15 * dmax.max(1.0);
        for &i in &free {
            let di = d[i];
            if di > dtiny {
                if bounds.upper[i].is_finite() {
                    let a = (bounds.upper[i] - x[i]) / di;
                    if a < alpha - 1e-15 {
                        alpha = a.max(0.0);
                        blocker = Some((i, BoundState::Upper));
                    }
                }
            } else if di < -dtiny && bounds.lower[i].is_finite() {
                let a = (bounds.lower[i] - x[i]) / di;
                if a < alpha - 1e-15 {
                    alpha = a.max(0.0);
                    blocker = Some((i, BoundState::Lower));
                }
            }
        }
        match blocker {
            Some((i, side)) => {
                x.scaled_add(alpha, &d);
                x[i] = match side {
                    BoundState::Lower => bounds.lower[i],
                    BoundState::Upper => bounds.upper[i],
                    BoundState::Free => unreachable!(),
                };
                active[i] = side;
            }
            None => {
                // Full step; the next pass certifies optimality or drops a bound.
                x = y;
            }
        }
    }
}

fn kkt_residual(
    h: &QuadForm,
    g: &Array1<f64>,
    x: &Array1<f64>,
    eq: Option<&Array2<f64>>,
    nu: Option<&Array1<f64>>,
    active: &[BoundState],
) -> f64 {
    let mut resid = h.mul_vec(x) + g;
    if let (Some(e), Some(nu_vec)) = (eq, nu) {
        resid = resid + e.t().dot(nu_vec);
    }
    let scale = 1.0 + g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let v = match active[i] {
            BoundState::Free => resid[i].abs(),
            BoundState::Lower => (-resid[i]).max(0.0),
            BoundState::Upper => resid[i].max(0.0),
        };
        worst = worst.max(v);
    }
    let mut kkt = worst / scale;
    if let Some(e) = eq {
        let viol = e.dot(x);
        let vn: f64 = viol.iter().map(|v| v * v).sum::<f64>().sqrt();
        let xn: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        kkt = kkt.max(vn / (1.0 + xn));
    }
    kkt
}

fn check_finite1(v: &Array1<f64>) -> Result<(), QpError> {
    if v.iter().any(|x| !x.is_finite()) {
        Err(QpError::NonFinite)
    } else {
        Ok(())
    }
}

fn check_finite2(m: &Array2<f64>) -> Result<(), QpError> {
    if m.iter().any(|x| !x.is_finite()) {
        Err(QpError::NonFinite)
    } else {
        Ok(())
    }
}

/// Fidelity-stage program: minimize ||J δ + r||^2 + λ ||δ||^2 over the box.
pub fn solve_fidelity_qp(
    j_real: &Array2<f64>,
    residual_real: &Array1<f64>,
    lambda: f64,
    bounds: &BoxBounds,
    warm: Option<&ActiveSet>,
) -> Result<(QpSolution, ActiveSet), QpError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(QpError::BadRegularization(lambda));
    }
    check_finite2(j_real)?;
    check_finite1(residual_real)?;
    let n = j_real.ncols();
    if residual_real.len() != j_real.nrows() || bounds.len() != n {
        return Err(QpError::Shape(format!(
            "J is {}x{}, residual {}, bounds {}",
            j_real.nrows(),
            n,
            residual_real.len(),
            bounds.len()
        )));
    }
    let mut h = j_real.t().dot(j_real);
    for i in 0..n {
        h[[i, i]] += lambda;
    }
    let g = j_real.t().dot(residual_real);
    let out = active_set_solve(&QuadForm::Dense(h), &g, bounds, None, warm)?;
    let fit = j_real.dot(&out.x) + residual_real;
    let objective = fit.iter().map(|v| v * v).sum::<f64>()
        + lambda * out.x.iter().map(|v| v * v).sum::<f64>();
    Ok((
        QpSolution {
            delta_u: out.x,
            objective,
            iterations: out.iterations,
            kkt_residual: out.kkt_residual,
        },
        ActiveSet(out.active),
    ))
}

/// Energy-stage program: minimize ||u + δ||^2 + μ ||δ||^2 over the box
/// intersected with ker(A), where `a_eq` is the projected real Jacobian P J.
///
/// The kernel is the numerical one: rows of A are compressed by a singular
/// value decomposition and directions below 1e-9 of the dominant singular
/// value are treated as unconstrained, which keeps the equality violation
/// within the 1e-8 relative budget.
pub fn solve_energy_qp(
    u: &Array1<f64>,
    a_eq: Option<&Array2<f64>>,
    mu: f64,
    bounds: &BoxBounds,
    warm: Option<&ActiveSet>,
) -> Result<(QpSolution, ActiveSet), QpError> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(QpError::BadRegularization(mu));
    }
    check_finite1(u)?;
    let n = u.len();
    if bounds.len() != n {
        return Err(QpError::Shape(format!(
            "u has {n} entries, bounds {}",
            bounds.len()
        )));
    }
    let compressed = match a_eq {
        None => None,
        Some(a) => {
            check_finite2(a)?;
            if a.ncols() != n {
                return Err(QpError::Shape(format!(
                    "equality matrix has {} columns, expected {n}",
                    a.ncols()
                )));
            }
            compress_rows(a)?
        }
    };
    let h = QuadForm::ScaledIdentity {
        dim: n,
        factor: 1.0 + mu,
    };
    let out = active_set_solve(&h, u, bounds, compressed.as_ref(), warm)?;
    let shifted = u + &out.x;
    let objective = shifted.iter().map(|v| v * v).sum::<f64>()
        + mu * out.x.iter().map(|v| v * v).sum::<f64>();
    Ok((
        QpSolution {
            delta_u: out.x,
            objective,
            iterations: out.iterations,
            kkt_residual: out.kkt_residual,
        },
        ActiveSet(out.active),
    ))
}

/// Row compression of the equality matrix: keep the right singular directions
/// with σ > 1e-9 σ_max as orthonormal constraint rows.
fn compress_rows(a: &Array2<f64>) -> Result<Option<Array2<f64>>, QpError> {
    if a.nrows() == 0 {
        return Ok(None);
    }
    let (_, sv, vt) = a.svd(false, true).map_err(|_| QpError::Factorization)?;
    let vt = vt.expect("requested right singular vectors");
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return Ok(None);
    }
    let cut = 1e-9 * smax;
    let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > cut).collect();
    if keep.is_empty() {
        return Ok(None);
    }
    Ok(Some(vt.select(Axis(0), &keep)))
}

/// Rank-one projector onto the orthogonal complement of the target state,
/// P = I - ψ_T ψ_T†.
pub fn build_projection(psi_t: &ArrayView1<C64>) -> Result<Array2<C64>, QpError> {
    let norm_sq: f64 = psi_t.iter().map(|z| z.norm_sqr()).sum();
    if norm_sq < 1e-20 {
        return Err(QpError::ZeroTarget);
    }
    let d = psi_t.len();
    let mut p = Array2::<C64>::eye(d);
    for i in 0..d {
        for j in 0..d {
            p[[i, j]] -= psi_t[i] * psi_t[j].conj() / norm_sq;
        }
    }
    Ok(p)
}

/// Real-stacked form of (I - ψ_T ψ_T†) J, the equality matrix of the energy
/// stage. Uses the rank-one structure rather than a dense projector product.
pub fn project_jacobian(
    jacobian: &TerminalJacobian,
    psi_t: &ArrayView1<C64>,
) -> Result<Array2<f64>, QpError> {
    let norm_sq: f64 = psi_t.iter().map(|z| z.norm_sqr()).sum();
    if norm_sq < 1e-20 {
        return Err(QpError::ZeroTarget);
    }
    let d = jacobian.matrix.nrows();
    let n = jacobian.matrix.ncols();
    if psi_t.len() != d {
        return Err(QpError::Shape(format!(
            "target has {} entries, Jacobian rows {d}",
            psi_t.len()
        )));
    }
    let mut out = Array2::<f64>::zeros((2 * d, n));
    for j in 0..n {
        let col = jacobian.matrix.column(j);
        let mut ov = C64::new(0.0, 0.0);
        for i in 0..d {
            ov += psi_t[i].conj() * col[i];
        }
        ov /= norm_sq;
        for i in 0..d {
            let v = col[i] - psi_t[i] * ov;
            out[[i, j]] = v.re;
            out[[d + i, j]] = v.im;
        }
    }
    Ok(out)
}

/// Brute-force reference solver for small box/equality programs.
///
/// Enumerates every pattern of bound activity, solves the corresponding
/// equality-constrained system, and keeps the best feasible candidate.
/// Exponential in the variable count; intended for cross-checking the
/// active-set solver on problems with at most a dozen variables.
pub mod reference {
    use super::*;
    use ndarray_linalg::Solve;

    /// Minimize x'Hx + 2g'x over the box and (optional) E x = 0.
    pub fn brute_force(
        h: &Array2<f64>,
        g: &Array1<f64>,
        bounds: &BoxBounds,
        eq: Option<&Array2<f64>>,
    ) -> Option<Array1<f64>> {
        let n = g.len();
        assert!(n <= 16, "enumeration is exponential; keep n small");
        let r = eq.map(|e| e.nrows()).unwrap_or(0);
        let mut best: Option<(f64, Array1<f64>)> = None;
        let mut pattern = vec![0u8; n];
        loop {
            if let Some(x) = solve_pattern(h, g, bounds, eq, &pattern, r) {
                let feasible = (0..n)
                    .all(|i| x[i] >= bounds.lower[i] - 1e-9 && x[i] <= bounds.upper[i] + 1e-9);
                let xmax = x.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                let eq_ok = eq
                    .map(|e| e.dot(&x).iter().all(|v| v.abs() <= 1e-7 * (1.0 + xmax)))
                    .unwrap_or(true);
                if feasible && eq_ok {
                    let obj = x.dot(&h.dot(&x)) + 2.0 * g.dot(&x);
                    if best.as_ref().map(|(b, _)| obj < *b).unwrap_or(true) {
                        best = Some((obj, x));
                    }
                }
            }
            // next ternary activity pattern
            let mut carry = true;
            for slot in pattern.iter_mut() {
                if carry {
                    *slot += 1;
                    if *slot == 3 {
                        *slot = 0;
                    } else {
                        carry = false;
                    }
                }
            }
            if carry {
                break;
            }
        }
        best.map(|(_, x)| x)
    }

    fn solve_pattern(
        h: &Array2<f64>,
        g: &Array1<f64>,
        bounds: &BoxBounds,
        eq: Option<&Array2<f64>>,
        pattern: &[u8],
        r: usize,
    ) -> Option<Array1<f64>> {
        let n = g.len();
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 0).collect();
        let mut x = Array1::<f64>::zeros(n);
        for i in 0..n {
            match pattern[i] {
                1 => x[i] = bounds.lower[i],
                2 => x[i] = bounds.upper[i],
                _ => {}
            }
            if !x[i].is_finite() {
                return None; // a bound at infinity cannot be active
            }
        }
        if free.is_empty() {
            return Some(x);
        }
        let nf = free.len();
        let dim = nf + r;
        let mut kkt = Array2::<f64>::zeros((dim, dim));
        let mut rhs = Array1::<f64>::zeros(dim);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                kkt[[a, b]] = h[[i, j]];
            }
            let mut v = g[i];
            for j in 0..n {
                if pattern[j] != 0 {
                    v += h[[i, j]] * x[j];
                }
            }
            rhs[a] = -v;
        }
        if let Some(e) = eq {
            for k in 0..r {
                for (a, &i) in free.iter().enumerate() {
                    kkt[[a, nf + k]] = e[[k, i]];
                    kkt[[nf + k, a]] = e[[k, i]];
                }
                let mut v = 0.0;
                for j in 0..n {
                    if pattern[j] != 0 {
                        v += e[[k, j]] * x[j];
                    }
                }
                rhs[nf + k] = -v;
            }
        }
        let sol = kkt.solve(&rhs).ok()?;
        for (a, &i) in free.iter().enumerate() {
            x[i] = sol[a];
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wide_bounds(n: usize) -> BoxBounds {
        BoxBounds::new(
            Array1::from_elem(n, f64::NEG_INFINITY),
            Array1::from_elem(n, f64::INFINITY),
        )
        .unwrap()
    }

    #[test]
    fn zero_residual_yields_zero_step() {
        let j = array![[1.0, 0.2], [0.0, 1.5]];
        let r = array![0.0, 0.0];
        let b = wide_bounds(2);
        let (sol, _) = solve_fidelity_qp(&j, &r, 0.5, &b, None).unwrap();
        assert!(sol.delta_u.iter().all(|v| v.abs() < 1e-14));
        assert!(sol.kkt_residual < 1e-8);
    }

    #[test]
    fn small_lambda_reaches_interpolation_limit() {
        // J = I, r = -b: δ → b as λ → 0+.
        let j = Array2::<f64>::eye(3);
        let target = array![0.4, -1.1, 2.0];
        let r = target.mapv(|v| -v);
        let b = wide_bounds(3);
        let (sol, _) = solve_fidelity_qp(&j, &r, 1e-12, &b, None).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(sol.delta_u[i], target[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn one_dimensional_clipped_kkt() {
        // J = [2], r = [-2], λ = 1: unconstrained δ = 4/5; the box clips to 0.3.
        let j = array![[2.0]];
        let r = array![-2.0];
        let wide = wide_bounds(1);
        let (sol, _) = solve_fidelity_qp(&j, &r, 1.0, &wide, None).unwrap();
        assert_abs_diff_eq!(sol.delta_u[0], 0.8, epsilon = 1e-12);
        let clipped = BoxBounds::new(array![-0.3], array![0.3]).unwrap();
        let (sol2, _) = solve_fidelity_qp(&j, &r, 1.0, &clipped, None).unwrap();
        assert_abs_diff_eq!(sol2.delta_u[0], 0.3, epsilon = 1e-12);
        assert!(sol2.kkt_residual < 1e-8);
    }

    #[test]
    fn unconstrained_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (m, n) = (12, 7);
        let j = Array2::from_shape_fn((m, n), |_| rng.random_range(-1.0..1.0));
        let r = Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0));
        let lambda = 0.3;
        let b = wide_bounds(n);
        let (sol, _) = solve_fidelity_qp(&j, &r, lambda, &b, None).unwrap();
        let mut h = j.t().dot(&j);
        for i in 0..n {
            h[[i, i]] += lambda;
        }
        let resid = h.dot(&sol.delta_u) + j.t().dot(&r);
        let rn: f64 = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rn < 1e-10, "normal equation residual {rn:.2e}");
    }

    #[test]
    fn energy_zero_control_stays_zero() {
        let u = Array1::<f64>::zeros(4);
        let b = wide_bounds(4);
        let (sol, _) = solve_energy_qp(&u, None, 0.5, &b, None).unwrap();
        assert!(sol.delta_u.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn energy_unconstrained_shrinks_by_mu_factor() {
        let u = array![2.0, -1.0, 0.5];
        let mu = 0.7;
        let b = wide_bounds(3);
        let (sol, _) = solve_energy_qp(&u, None, mu, &b, None).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(sol.delta_u[i], -u[i] / (1.0 + mu), epsilon = 1e-12);
        }
        let shifted = &u + &sol.delta_u;
        let sn: f64 = shifted.iter().map(|v| v * v).sum::<f64>().sqrt();
        let un: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_abs_diff_eq!(sn, mu * un / (1.0 + mu), epsilon = 1e-12);
    }

    #[test]
    fn energy_full_rank_equality_freezes_step() {
        let u = array![1.0, -2.0];
        let a = Array2::<f64>::eye(2);
        let b = wide_bounds(2);
        let (sol, _) = solve_energy_qp(&u, Some(&a), 0.5, &b, None).unwrap();
        assert!(sol.delta_u.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn energy_never_increases_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let n = rng.random_range(2..9);
            let u = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0));
            let lower = Array1::from_shape_fn(n, |_| rng.random_range(-1.5..0.0));
            let upper = Array1::from_shape_fn(n, |_| rng.random_range(0.0..1.5));
            let bounds = BoxBounds::new(lower, upper).unwrap();
            let rows = rng.random_range(0..3);
            let a = if rows == 0 {
                None
            } else {
                Some(Array2::from_shape_fn((rows, n), |_| {
                    rng.random_range(-1.0..1.0)
                }))
            };
            let mu = rng.random_range(0.05..2.0);
            let (sol, _) = solve_energy_qp(&u, a.as_ref(), mu, &bounds, None).unwrap();
            let before: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            let shifted = &u + &sol.delta_u;
            let after: f64 = shifted.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(after <= before + 1e-12, "norm grew {before} -> {after}");
        }
    }

    #[test]
    fn projection_examples() {
        let psi = array![C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let p = build_projection(&psi.view()).unwrap();
        let pv = p.dot(&psi);
        assert!(pv.iter().all(|z| z.norm() < 1e-14));
        // P v = v for v ⊥ ψ
        let v = array![C64::new(0.0, 0.8), C64::new(0.6, 0.0)];
        let ov: C64 = psi.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
        assert!(ov.norm() < 1e-15);
        let pv2 = p.dot(&v);
        for (a, b) in pv2.iter().zip(v.iter()) {
            assert!((a - b).norm() < 1e-14);
        }
        // P^2 = P and P† = P
        let p2 = p.dot(&p);
        let ph = p.t().mapv(|z| z.conj());
        for i in 0..2 {
            for j in 0..2 {
                assert!((p2[[i, j]] - p[[i, j]]).norm() < 1e-12);
                assert!((ph[[i, j]] - p[[i, j]]).norm() < 1e-12);
            }
        }
        let zero = Array1::<C64>::zeros(2);
        assert!(matches!(
            build_projection(&zero.view()),
            Err(QpError::ZeroTarget)
        ));
    }

    #[test]
    fn projected_jacobian_matches_dense_product() {
        let psi = array![C64::new(1.0, 0.0), C64::new(0.0, -1.0)]
            .mapv(|z: C64| z / C64::new(2f64.sqrt(), 0.0));
        let jac = TerminalJacobian {
            matrix: array![
                [C64::new(0.2, 0.1), C64::new(-0.4, 0.0)],
                [C64::new(0.0, 0.9), C64::new(0.3, -0.2)]
            ],
            steps: 2,
            channels: 1,
        };
        let fast = project_jacobian(&jac, &psi.view()).unwrap();
        let p = build_projection(&psi.view()).unwrap();
        let dense = p.dot(&jac.matrix);
        for j in 0..2 {
            for i in 0..2 {
                assert_abs_diff_eq!(fast[[i, j]], dense[[i, j]].re, epsilon = 1e-13);
                assert_abs_diff_eq!(fast[[2 + i, j]], dense[[i, j]].im, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn scaling_invariance_of_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let j = Array2::from_shape_fn((8, 5), |_| rng.random_range(-1.0..1.0));
        let r = Array1::from_shape_fn(8, |_| rng.random_range(-1.0..1.0));
        let bounds =
            BoxBounds::new(Array1::from_elem(5, -0.2), Array1::from_elem(5, 0.45)).unwrap();
        let lambda = 0.17;
        let c = 3.7;
        let (a, _) = solve_fidelity_qp(&j, &r, lambda, &bounds, None).unwrap();
        let (b, _) = solve_fidelity_qp(
            &j.mapv(|v| c * v),
            &r.mapv(|v| c * v),
            lambda * c * c,
            &bounds,
            None,
        )
        .unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(a.delta_u[i], b.delta_u[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn matches_brute_force_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..60 {
            let n = rng.random_range(1..=7);
            let m = rng.random_range(1..=(2 * n));
            let j = Array2::from_shape_fn((m, n), |_| rng.random_range(-1.0..1.0));
            let r = Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0));
            let lambda = rng.random_range(0.01..1.0);
            let lower = Array1::from_shape_fn(n, |_| rng.random_range(-0.8..-0.01));
            let upper = Array1::from_shape_fn(n, |_| rng.random_range(0.01..0.8));
            let bounds = BoxBounds::new(lower, upper).unwrap();
            let (sol, _) = solve_fidelity_qp(&j, &r, lambda, &bounds, None).unwrap();
            let mut h = j.t().dot(&j);
            for i in 0..n {
                h[[i, i]] += lambda;
            }
            let g = j.t().dot(&r);
            let x_ref = reference::brute_force(&h, &g, &bounds, None).unwrap();
            for i in 0..n {
                assert_abs_diff_eq!(sol.delta_u[i], x_ref[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn matches_brute_force_with_equality_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(515);
        for _ in 0..40 {
            let n = rng.random_range(2..=6);
            let u = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
            let lower = Array1::from_shape_fn(n, |_| rng.random_range(-0.9..-0.05));
            let upper = Array1::from_shape_fn(n, |_| rng.random_range(0.05..0.9));
            let bounds = BoxBounds::new(lower, upper).unwrap();
            let rows = rng.random_range(1..=2.min(n - 1));
            let a = Array2::from_shape_fn((rows, n), |_| rng.random_range(-1.0..1.0));
            let mu = rng.random_range(0.05..1.5);
            let (sol, _) = solve_energy_qp(&u, Some(&a), mu, &bounds, None).unwrap();
            let mut h = Array2::<f64>::eye(n);
            h *= 1.0 + mu;
            let x_ref = reference::brute_force(&h, &u, &bounds, Some(&a)).unwrap();
            for i in 0..n {
                assert_abs_diff_eq!(sol.delta_u[i], x_ref[i], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn warm_start_reproduces_cold_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10;
        let j = Array2::from_shape_fn((2 * n, n), |_| rng.random_range(-1.0..1.0));
        let r = Array1::from_shape_fn(2 * n, |_| rng.random_range(-1.0..1.0));
        // Zero lower edge so saturated coordinates can be pre-pinned.
        let bounds = BoxBounds::new(Array1::zeros(n), Array1::from_elem(n, 0.05)).unwrap();
        let (cold, active) = solve_fidelity_qp(&j, &r, 0.02, &bounds, None).unwrap();
        let (warm, _) = solve_fidelity_qp(&j, &r, 0.02, &bounds, Some(&active)).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(cold.delta_u[i], warm.delta_u[i], epsilon = 1e-10);
        }
        assert!(warm.iterations <= cold.iterations);
    }
}
