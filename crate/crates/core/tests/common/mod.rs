//! Truncated Fock-basis reference calculations, independent of the
//! Gaussian machinery under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub mod gradcheck;

pub const CUTOFF: usize = 80;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `|α⟩` truncated to `dim` levels.
pub fn coherent_ket(alpha: Complex64, dim: usize) -> DVector<Complex64> {
    let mut v = DVector::from_element(dim, c(0.0, 0.0));
    let mut amp = c((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..dim {
        v[n] = amp;
        amp = amp * alpha / ((n + 1) as f64).sqrt();
    }
    v
}

pub fn fock_ket(n: usize, dim: usize) -> DVector<Complex64> {
    let mut v = DVector::from_element(dim, c(0.0, 0.0));
    v[n] = c(1.0, 0.0);
    v
}

pub fn normalized(v: DVector<Complex64>) -> DVector<Complex64> {
    let n = v.norm();
    v / c(n, 0.0)
}

/// `|⟨a|b⟩|²` for normalized kets.
pub fn fidelity(a: &DVector<Complex64>, b: &DVector<Complex64>) -> f64 {
    a.dotc(b).norm_sqr()
}

/// Thermal state with mean photon number `nbar`.
pub fn thermal(nbar: f64, dim: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(dim, dim, |m, n| {
        if m == n {
            c(nbar.powi(m as i32) / (1.0 + nbar).powi(m as i32 + 1), 0.0)
        } else {
            c(0.0, 0.0)
        }
    })
}

pub fn projector(v: &DVector<Complex64>) -> DMatrix<Complex64> {
    v * v.adjoint()
}

/// Wigner function of a single-mode Fock ket at `(x, p)` with `ℏ = 2`,
/// from `W(α) = (2/π) Tr[ρ D(α) Π D(α)†]` rescaled to quadrature variables.
pub fn wigner_of_ket(v: &DVector<Complex64>, x: f64, p: f64) -> f64 {
    let dim = v.len();
    let alpha = c(x / 2.0, p / 2.0);
    // D(−α)|ψ⟩ via the matrix exponential of the truncated generator
    let mut gen = DMatrix::from_element(dim, dim, c(0.0, 0.0));
    for n in 0..dim - 1 {
        let s = ((n + 1) as f64).sqrt();
        gen[(n + 1, n)] += -alpha * s;
        gen[(n, n + 1)] += alpha.conj() * s;
    }
    let shifted = gen.exp() * v;
    let parity: Complex64 = shifted.iter().enumerate().map(|(n, a)| a.norm_sqr() * if n % 2 == 0 { 1.0 } else { -1.0 }).sum::<f64>().into();
    parity.re / (2.0 * std::f64::consts::PI)
}

/// `D(−α)` on the truncated space, `α = (x + ip)/2`.
fn shift(x: f64, p: f64, dim: usize) -> DMatrix<Complex64> {
    let alpha = c(x / 2.0, p / 2.0);
    let mut gen = DMatrix::from_element(dim, dim, c(0.0, 0.0));
    for n in 0..dim - 1 {
        let s = ((n + 1) as f64).sqrt();
        gen[(n + 1, n)] += -alpha * s;
        gen[(n, n + 1)] += alpha.conj() * s;
    }
    gen.exp()
}

/// Wigner function of the operator `|a⟩⟨b|` at `(x, p)`, complex in general.
pub fn wigner_of_outer(a: &DVector<Complex64>, b: &DVector<Complex64>, x: f64, p: f64) -> Complex64 {
    let d = shift(x, p, a.len());
    let (sa, sb) = (&d * a, &d * b);
    let s: Complex64 = (0..a.len()).map(|n| sb[n].conj() * sa[n] * if n % 2 == 0 { 1.0 } else { -1.0 }).sum();
    s / (2.0 * std::f64::consts::PI)
}
