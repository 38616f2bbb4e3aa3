//! Dense matrix exponential by Padé approximation with scaling and squaring,
//! and its Fréchet derivative via the augmented block exponential.
//!
//! The approximant degree (3, 5, 7, 9 or 13) is selected from the 1-norm of
//! the input following Higham's threshold values, so the backward error stays
//! at the level of unit roundoff. Works for arbitrary complex matrices; the
//! hot propagation paths in this crate use spectral factorizations instead and
//! treat `expm` as the general-purpose primitive and cross-check.

use ndarray::prelude::*;
use ndarray_linalg::{Factorize, Solve};
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpmError {
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("Padé denominator is singular")]
    SingularDenominator,
}

/// 1-norm (maximum absolute column sum).
fn norm_1(a: &Array2<C64>) -> f64 {
    let mut best = 0.0;
    for col in a.columns() {
        let s: f64 = col.iter().map(|z| z.norm()).sum();
        if s > best {
            best = s;
        }
    }
    best
}

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

/// Padé numerator coefficients b_0..b_m for the [m/m] approximant of exp,
/// b_j = (2m - j)! m! / ((2m)! (m - j)! j!).
fn pade_coefficients(m: usize) -> Vec<f64> {
    let mut b = vec![0.0; m + 1];
    for (j, slot) in b.iter_mut().enumerate() {
        let mut v = 1.0;
        // (2m - j)! / (2m)! = 1 / ((2m)(2m-1)...(2m-j+1))
        for i in 0..j {
            v /= (2 * m - i) as f64;
        }
        // m! / (m - j)! = m (m-1) ... (m-j+1)
        for i in 0..j {
            v *= (m - i) as f64;
        }
        // 1 / j!
        for i in 1..=j {
            v /= i as f64;
        }
        *slot = v;
    }
    b
}

fn add_scaled_eye(a: &mut Array2<C64>, c: f64) {
    for i in 0..a.nrows() {
        a[[i, i]] += C64::new(c, 0.0);
    }
}

/// Evaluate the order-m Padé numerator/denominator pair (U, V) at A.
fn pade_uv(a: &Array2<C64>, m: usize) -> (Array2<C64>, Array2<C64>) {
    let n = a.nrows();
    let b = pade_coefficients(m);
    let a2 = a.dot(a);
    match m {
        3 | 5 | 7 | 9 => {
            // U = A (sum_{odd} b_j A^{j-1}), V = sum_{even} b_j A^j
            let mut powers: Vec<Array2<C64>> = vec![Array2::eye(n), a2.clone()];
            for _ in 2..=(m / 2) {
                let next = powers.last().unwrap().dot(&a2);
                powers.push(next);
            }
            let mut u_inner = Array2::<C64>::zeros((n, n));
            let mut v = Array2::<C64>::zeros((n, n));
            for (p, pw) in powers.iter().enumerate() {
                u_inner.scaled_add(C64::new(b[2 * p + 1], 0.0), pw);
                v.scaled_add(C64::new(b[2 * p], 0.0), pw);
            }
            (a.dot(&u_inner), v)
        }
        13 => {
            let a4 = a2.dot(&a2);
            let a6 = a4.dot(&a2);
            // U = A (A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I)
            let mut w1 = Array2::<C64>::zeros((n, n));
            w1.scaled_add(C64::new(b[13], 0.0), &a6);
            w1.scaled_add(C64::new(b[11], 0.0), &a4);
            w1.scaled_add(C64::new(b[9], 0.0), &a2);
            let mut u_inner = a6.dot(&w1);
            u_inner.scaled_add(C64::new(b[7], 0.0), &a6);
            u_inner.scaled_add(C64::new(b[5], 0.0), &a4);
            u_inner.scaled_add(C64::new(b[3], 0.0), &a2);
            add_scaled_eye(&mut u_inner, b[1]);
            let u = a.dot(&u_inner);
            // V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
            let mut w2 = Array2::<C64>::zeros((n, n));
            w2.scaled_add(C64::new(b[12], 0.0), &a6);
            w2.scaled_add(C64::new(b[10], 0.0), &a4);
            w2.scaled_add(C64::new(b[8], 0.0), &a2);
            let mut v = a6.dot(&w2);
            v.scaled_add(C64::new(b[6], 0.0), &a6);
            v.scaled_add(C64::new(b[4], 0.0), &a4);
            v.scaled_add(C64::new(b[2], 0.0), &a2);
            add_scaled_eye(&mut v, b[0]);
            (u, v)
        }
        _ => unreachable!("unsupported Padé order"),
    }
}

/// Matrix exponential of a square complex matrix.
pub fn expm(a: &Array2<C64>) -> Result<Array2<C64>, ExpmError> {
    if a.nrows() != a.ncols() {
        return Err(ExpmError::NotSquare(a.nrows(), a.ncols()));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(ExpmError::NonFinite);
    }
    let nrm = norm_1(a);
    let (m, squarings) = if nrm <= THETA_3 {
        (3, 0)
    } else if nrm <= THETA_5 {
        (5, 0)
    } else if nrm <= THETA_7 {
        (7, 0)
    } else if nrm <= THETA_9 {
        (9, 0)
    } else {
        let s = ((nrm / THETA_13).log2().ceil()).max(0.0) as u32;
        (13, s)
    };
    let scaled = a.mapv(|z| z / C64::new(2f64.powi(squarings as i32), 0.0));
    let (u, v) = pade_uv(&scaled, m);
    let numer = &v + &u;
    let denom = &v - &u;
    let lu = denom.factorize().map_err(|_| ExpmError::SingularDenominator)?;
    let n = a.nrows();
    let mut r = Array2::<C64>::zeros((n, n));
    for (j, col) in numer.columns().into_iter().enumerate() {
        let x = lu
            .solve(&col.to_owned())
            .map_err(|_| ExpmError::SingularDenominator)?;
        r.column_mut(j).assign(&x);
    }
    for _ in 0..squarings {
        r = r.dot(&r);
    }
    Ok(r)
}

/// Fréchet derivative L(A, E) of the matrix exponential, computed from the
/// identity exp([[A, E], [0, A]]) = [[exp(A), L(A, E)], [0, exp(A)]].
///
/// Returns (exp(A), L(A, E)).
pub fn expm_frechet(
    a: &Array2<C64>,
    e: &Array2<C64>,
) -> Result<(Array2<C64>, Array2<C64>), ExpmError> {
    let n = a.nrows();
    if a.ncols() != n || e.nrows() != n || e.ncols() != n {
        return Err(ExpmError::NotSquare(e.nrows(), e.ncols()));
    }
    let mut aug = Array2::<C64>::zeros((2 * n, 2 * n));
    aug.slice_mut(s![..n, ..n]).assign(a);
    aug.slice_mut(s![..n, n..]).assign(e);
    aug.slice_mut(s![n.., n..]).assign(a);
    let big = expm(&aug)?;
    let exp_a = big.slice(s![..n, ..n]).to_owned();
    let deriv = big.slice(s![..n, n..]).to_owned();
    Ok((exp_a, deriv))
}
