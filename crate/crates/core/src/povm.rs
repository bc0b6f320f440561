//! Single-mode measurement elements written as linear combinations of
//! Gaussians, `W_Π(q) = Σ_n e^{d_n} G_{ν_n, ω_n}(q)`.
//!
//! Click and pseudo-PNRD elements contain a multiple of the identity
//! operator, whose Wigner function is the constant `1/(2πℏ)`. It is kept as a
//! flagged term rather than a covariance limit; post-selection treats it as a
//! partial trace.
//!
//! Photon-number projectors use the coherent-state decomposition: `|n⟩` is
//! approximated by `n + 1` coherent states on a ring of radius `ε`, whose
//! approximation infidelity is `1 − 1/𝒩` with `𝒩` the norm of the
//! unnormalized superposition. Fock-type elements are normalized to unit
//! trace; click and pseudo-PNRD elements keep their exact operator scale.

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::lcog_state::coherent_outer;
use crate::numeric::{ln_binomial, ln_complex, ln_factorial, wrap_phase, ExpSum};
use crate::phase_space::{squeeze_symplectic, HBAR};

/// Infidelity targeted by the default ring radius.
pub const DEFAULT_INFIDELITY: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PovmKind {
    Generaldyne,
    Click { click: bool },
    Ppnrd { clicks: usize, fan_out: usize },
    FockThermal { n: usize, r: f64 },
    FockCoherent { n: usize, eps: f64 },
    FockSuperposition { rank: usize, eps: f64 },
}

/// A single-mode POVM element.
#[derive(Debug, Clone)]
pub struct Povm {
    pub(crate) kind: PovmKind,
    pub(crate) log_weights: Vec<Complex64>,
    pub(crate) means: Vec<[Complex64; 2]>,
    /// Covariance class of each term, `None` for the identity component.
    pub(crate) cov_of: Vec<Option<usize>>,
    pub(crate) covs: Vec<Matrix2<f64>>,
    pub(crate) num_k: usize,
    pub(crate) reduced: bool,
}

const C0: Complex64 = Complex64::new(0.0, 0.0);

impl Povm {
    pub fn kind(&self) -> &PovmKind {
        &self.kind
    }

    pub fn num_terms(&self) -> usize {
        self.log_weights.len()
    }

    pub fn num_k(&self) -> usize {
        self.num_k
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced
    }

    pub fn log_weights(&self) -> &[Complex64] {
        &self.log_weights
    }

    pub fn mean(&self, term: usize) -> [Complex64; 2] {
        self.means[term]
    }

    /// Covariance of a Gaussian term, `None` for the identity component.
    pub fn covariance(&self, term: usize) -> Option<&Matrix2<f64>> {
        self.cov_of[term].map(|c| &self.covs[c])
    }

    pub fn has_identity(&self) -> bool {
        self.cov_of.iter().any(Option::is_none)
    }

    pub(crate) fn multiplicity(&self, term: usize) -> f64 {
        if self.reduced && term >= self.num_k {
            2.0
        } else {
            1.0
        }
    }

    fn gaussian(kind: PovmKind, terms: Vec<(Complex64, [Complex64; 2], Option<Matrix2<f64>>)>, num_k: Option<usize>) -> Self {
        let mut covs: Vec<Matrix2<f64>> = Vec::new();
        let mut cov_of = Vec::with_capacity(terms.len());
        let mut log_weights = Vec::with_capacity(terms.len());
        let mut means = Vec::with_capacity(terms.len());
        for (c, mu, cov) in terms {
            log_weights.push(wrap_phase(c));
            means.push(mu);
            cov_of.push(cov.map(|m| match covs.iter().position(|x| *x == m) {
                Some(i) => i,
                None => {
                    covs.push(m);
                    covs.len() - 1
                }
            }));
        }
        let n = log_weights.len();
        Self { kind, log_weights, means, cov_of, covs, num_k: num_k.unwrap_or(n), reduced: num_k.is_some() }
    }

    /// Full form with conjugate partners listed explicitly.
    pub fn to_full_form(&self) -> Povm {
        if !self.reduced {
            return self.clone();
        }
        let mut out = self.clone();
        for j in self.num_k..self.num_terms() {
            out.log_weights.push(wrap_phase(self.log_weights[j].conj()));
            out.means.push([self.means[j][0].conj(), self.means[j][1].conj()]);
            out.cov_of.push(self.cov_of[j]);
        }
        out.num_k = out.log_weights.len();
        out.reduced = false;
        out
    }

    /// `Tr Π` for elements without an identity component.
    pub fn log_trace(&self) -> Result<f64> {
        if self.has_identity() {
            return Err(Error::InvalidArgument("element with an identity component has infinite trace".into()));
        }
        self.trace_sum()?.ln_re_positive("POVM trace")
    }

    fn trace_sum(&self) -> Result<ExpSum> {
        let terms: Vec<(Complex64, f64)> = (0..self.num_terms())
            .flat_map(|j| {
                let c = self.log_weights[j];
                let conj = (self.reduced && j >= self.num_k).then_some((c.conj(), 1.0));
                std::iter::once((c, 1.0)).chain(conj)
            })
            .collect();
        ExpSum::new(terms)
    }

    fn normalize_trace(mut self) -> Result<Self> {
        let ln = self.trace_sum()?.ln_re_positive("POVM norm")?;
        if ln == f64::NEG_INFINITY {
            return Err(Error::NumericalStability("POVM norm underflowed to zero; increase the ring radius".into()));
        }
        for c in &mut self.log_weights {
            *c -= ln;
        }
        Ok(self)
    }

    /// Wigner function `W_Π(q)` at a single-mode point.
    pub fn wigner(&self, q: [f64; 2]) -> f64 {
        let mut acc = C0;
        for j in 0..self.num_terms() {
            let e = self.log_weights[j].exp() * self.multiplicity(j);
            let g = match self.covariance(j) {
                None => Complex64::new(1.0 / (2.0 * PI * HBAR), 0.0),
                Some(w) => {
                    let inv = w.try_inverse().expect("POVM covariance is positive definite");
                    let d = [q[0] - self.means[j][0], q[1] - self.means[j][1]];
                    let quad = d[0] * (d[0] * inv[(0, 0)] + d[1] * inv[(0, 1)]) + d[1] * (d[0] * inv[(1, 0)] + d[1] * inv[(1, 1)]);
                    (-0.5 * quad).exp() / (2.0 * PI * w.determinant().sqrt())
                }
            };
            acc += e * g;
        }
        acc.re
    }
}

/// Projector onto the displaced squeezed vacuum `D(α)S(z)|0⟩`.
pub fn generaldyne(z: Complex64, alpha: Complex64) -> Result<Povm> {
    let s = squeeze_symplectic(z.norm(), z.arg())?;
    let m = s.matrix();
    let w = Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let omega = w * w.transpose() * (HBAR / 2.0);
    let k = (2.0 * HBAR).sqrt();
    let mu = [Complex64::new(k * alpha.re, 0.0), Complex64::new(k * alpha.im, 0.0)];
    Ok(Povm::gaussian(PovmKind::Generaldyne, vec![(C0, mu, Some(omega))], None))
}

/// Coherent-state projector `|α⟩⟨α|`.
pub fn heterodyne(alpha: Complex64) -> Result<Povm> {
    generaldyne(C0, alpha)
}

fn vacuum_cov() -> Matrix2<f64> {
    Matrix2::identity() * (HBAR / 2.0)
}

/// On/off detector element.
pub fn click_povm(click: bool) -> Povm {
    let zero = [C0, C0];
    let terms = if click {
        vec![(C0, zero, None), (Complex64::new(0.0, PI), zero, Some(vacuum_cov()))]
    } else {
        vec![(C0, zero, Some(vacuum_cov()))]
    };
    Povm::gaussian(PovmKind::Click { click }, terms, None)
}

/// Pseudo-PNRD element for `k` clicks out of a fan-out onto `M` on/off
/// detectors: `C(M,k) Σ_l C(k,l)(−1)^l η_l⁻¹ ρ_th(n̄_l)`, `η_l = (M−k+l)/M`.
pub fn ppnrd_povm(k: usize, m: usize) -> Result<Povm> {
    if m == 0 || k > m {
        return Err(Error::InvalidArgument(format!("pseudo-PNRD needs 0 <= k <= M and M >= 1, got k={k}, M={m}")));
    }
    let zero = [C0, C0];
    let mut terms = Vec::with_capacity(k + 1);
    for l in 0..=k {
        let eta = (m - k + l) as f64 / m as f64;
        let sign = if l % 2 == 1 { PI } else { 0.0 };
        let ln_coeff = ln_binomial(m, k) + ln_binomial(k, l);
        if m - k + l == 0 {
            // η⁻¹ ρ_th(∞) is the identity
            terms.push((Complex64::new(ln_coeff, sign), zero, None));
        } else {
            let cov = Matrix2::identity() * (HBAR / 2.0) * (2.0 / eta - 1.0);
            terms.push((Complex64::new(ln_coeff - eta.ln(), sign), zero, Some(cov)));
        }
    }
    Ok(Povm::gaussian(PovmKind::Ppnrd { clicks: k, fan_out: m }, terms, None))
}

/// Thermal-mixture approximation of `|n⟩⟨n|` from heralded photon addition,
/// normalized to unit trace. Requires `0 < r < n^{-1/2}`.
pub fn fock_thermal_povm(n: usize, r: f64) -> Result<Povm> {
    let bound = if n == 0 { f64::INFINITY } else { 1.0 / (n as f64).sqrt() };
    if !(r > 0.0 && r < bound) {
        return Err(Error::InvalidArgument(format!("thermal Fock approximation needs 0 < r < {bound}, got {r}")));
    }
    let r2 = r * r;
    let zero = [C0, C0];
    let terms = (0..=n)
        .map(|k| {
            let nk = (n - k) as f64;
            let ratio = (1.0 - n as f64 * r2) / (1.0 - nk * r2);
            let sign = if k % 2 == 1 { PI } else { 0.0 };
            let cov = Matrix2::identity() * (HBAR / 2.0) * (1.0 + nk * r2) / (1.0 - nk * r2);
            (Complex64::new(ln_binomial(n, k) + ratio.ln(), sign), zero, Some(cov))
        })
        .collect();
    Povm::gaussian(PovmKind::FockThermal { n, r }, terms, None).normalize_trace()
}

/// `𝒩 = Σ_l |a_l|² Σ_{j≥0} ε^{2j(n+1)} l!/(l + j(n+1))!` for the ring
/// superposition of rank `n`, divided by `Σ|a_l|²`. The infidelity of the
/// approximation is `1 − 1/𝒩`.
pub fn ring_norm(amplitudes: &[f64], eps: f64) -> f64 {
    let n = amplitudes.len() - 1;
    let total: f64 = amplitudes.iter().map(|a| a * a).sum();
    let ln_eps = eps.ln();
    let mut acc = 0.0;
    for (l, a) in amplitudes.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        let mut s = 0.0;
        for j in 0..200 {
            let m = l + j * (n + 1);
            let t = (2.0 * (j * (n + 1)) as f64 * ln_eps + ln_factorial(l) - ln_factorial(m)).exp();
            s += t;
            if j > 0 && t < 1e-18 * s {
                break;
            }
        }
        acc += a * a * s;
    }
    acc / total
}

/// Ring infidelity `1 − 1/𝒩`, computed without cancellation.
pub fn ring_infidelity(amplitudes: &[f64], eps: f64) -> f64 {
    let n = amplitudes.len() - 1;
    let total: f64 = amplitudes.iter().map(|a| a * a).sum();
    let ln_eps = eps.ln();
    let mut tail = 0.0;
    for (l, a) in amplitudes.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        for j in 1..200 {
            let m = l + j * (n + 1);
            let t = (2.0 * (j * (n + 1)) as f64 * ln_eps + ln_factorial(l) - ln_factorial(m)).exp();
            tail += a * a * t / total;
            if t < 1e-18 * tail {
                break;
            }
        }
    }
    tail / (1.0 + tail)
}

/// Ring radius at which the rank-`n` superposition with the given amplitude
/// magnitudes reaches the target infidelity.
pub fn radius_for_infidelity(amplitudes: &[f64], target: f64) -> Result<f64> {
    if amplitudes.is_empty() || !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidArgument("radius search needs amplitudes and a target in (0, 1)".into()));
    }
    let (mut lo, mut hi) = (-40.0f64, 4.0f64);
    if ring_infidelity(amplitudes, hi.exp()) < target {
        return Ok(hi.exp());
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ring_infidelity(amplitudes, mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.exp())
}

/// Default ring radius for `|n⟩`, targeting [`DEFAULT_INFIDELITY`].
pub fn default_radius(n: usize) -> f64 {
    let mut a = vec![0.0; n + 1];
    a[n] = 1.0;
    radius_for_infidelity(&a, DEFAULT_INFIDELITY).expect("valid default target")
}

/// Coefficients `c_k` and amplitudes `α_k = ε ω^k` of the ring superposition
/// approximating `Σ_l a_l |l⟩`, scaled so the `|l⟩` components are exactly `a_l`.
pub fn ring_superposition(amplitudes: &[Complex64], eps: f64) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let n = amplitudes.len().checked_sub(1).ok_or_else(|| Error::InvalidArgument("no amplitudes".into()))?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("ring radius must be positive, got {eps}")));
    }
    if amplitudes.iter().all(|a| a.norm() == 0.0) {
        return Err(Error::DegenerateState("all amplitudes vanish".into()));
    }
    let np1 = (n + 1) as f64;
    let omega = |k: usize, l: usize| Complex64::from_polar(1.0, -2.0 * PI * ((k * l) % (n + 1)) as f64 / np1);
    let mut coeffs = Vec::with_capacity(n + 1);
    let mut alphas = Vec::with_capacity(n + 1);
    for k in 0..=n {
        // log-domain: e^{ε²/2} √l! ε^{-l} / (n+1)
        let mut c = C0;
        for (l, &a) in amplitudes.iter().enumerate() {
            let scale = (0.5 * eps * eps + 0.5 * ln_factorial(l) - l as f64 * eps.ln() - np1.ln()).exp();
            c += a * omega(k, l) * scale;
        }
        coeffs.push(c);
        alphas.push(Complex64::from_polar(eps, 2.0 * PI * k as f64 / np1));
    }
    Ok((coeffs, alphas))
}

fn ring_povm(kind: PovmKind, coeffs: &[Complex64], alphas: &[Complex64], reduced: bool) -> Result<Povm> {
    let k = coeffs.len();
    let ln_c: Vec<Complex64> = coeffs.iter().map(|&c| ln_complex(c)).collect();
    let term = |i: usize, j: usize| {
        let (mu, d) = coherent_outer(alphas[i], alphas[j]);
        let mut c = ln_c[i] + ln_c[j].conj() + d;
        let mut mu = mu;
        if i == j {
            c = Complex64::new(c.re, if wrap_phase(c).im.abs() > PI / 2.0 { PI } else { 0.0 });
            mu = [Complex64::new(mu[0].re, 0.0), Complex64::new(mu[1].re, 0.0)];
        }
        (c, mu, Some(vacuum_cov()))
    };
    let mut terms: Vec<_> = (0..k).map(|i| term(i, i)).collect();
    terms.retain(|t| t.0.re != f64::NEG_INFINITY);
    let num_k = terms.len();
    for i in 0..k {
        for j in i + 1..k {
            terms.push(term(i, j));
            if !reduced {
                terms.push(term(j, i));
            }
        }
    }
    terms.retain(|t| t.0.re != f64::NEG_INFINITY);
    Povm::gaussian(kind, terms, reduced.then_some(num_k)).normalize_trace()
}

/// Coherent-decomposition approximation of `|n⟩⟨n|` on a ring of radius `eps`,
/// normalized to unit trace. Terms: `(n+1)²` in full form, `(n+1)(n+2)/2`
/// reduced.
pub fn fock_coherent_povm(n: usize, eps: f64, reduced: bool) -> Result<Povm> {
    let mut a = vec![C0; n + 1];
    a[n] = Complex64::new(1.0, 0.0);
    let (c, alphas) = ring_superposition(&a, eps)?;
    ring_povm(PovmKind::FockCoherent { n, eps }, &c, &alphas, reduced)
}

/// Projector onto the ring approximation of `Σ_l a_l |l⟩`, unit trace.
pub fn fock_superposition_povm(amplitudes: &[Complex64], eps: f64, reduced: bool) -> Result<Povm> {
    let (c, alphas) = ring_superposition(amplitudes, eps)?;
    ring_povm(PovmKind::FockSuperposition { rank: amplitudes.len() - 1, eps }, &c, &alphas, reduced)
}

/// The same ring approximation as a normalized state.
pub fn fock_superposition_state(amplitudes: &[Complex64], eps: f64, reduced: bool) -> Result<crate::LcogState> {
    let (c, alphas) = ring_superposition(amplitudes, eps)?;
    crate::LcogState::from_coherent_superposition(
        &crate::CoherentSuperposition { coefficients: c, amplitudes: alphas, squeeze: C0 },
        reduced,
    )
}

/// Ring approximation of the Fock state `|n⟩` as a normalized state.
pub fn fock_state(n: usize, eps: f64, reduced: bool) -> Result<crate::LcogState> {
    let mut a = vec![C0; n + 1];
    a[n] = Complex64::new(1.0, 0.0);
    fock_superposition_state(&a, eps, reduced)
}
