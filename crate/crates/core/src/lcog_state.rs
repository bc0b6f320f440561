//! States as linear combinations of Gaussians (LCoG).
//!
//! The Wigner function is `W(q) = Σ_m e^{c_m} G_{μ_m, σ_m}(q)` with complex
//! log-weights `c_m` and complex means `μ_m`. Covariances are real: every
//! construction in this crate (coherent outer products, Gaussian evolution,
//! Gaussian conditioning) keeps them real.
//!
//! Terms that share a covariance are grouped; a state produced by the
//! coherent-decomposition pipeline has a single group, which keeps memory at
//! one `2N × 2N` matrix regardless of the number of terms.
//!
//! # Reduced form
//!
//! In reduced form the first [`num_k`](LcogState::num_k) terms have real
//! weights and means, and every remaining term stands for itself plus its
//! complex conjugate, so `W = Σ_{m<k} e^{c_m} G_m + 2 Re Σ_{m≥k} e^{c_m} G_m`.
//! In full form every term is listed and `num_k` equals the number of terms.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grad::GradientTape;
use crate::numeric::{ln_complex, wrap_phase, ExpSum};
use crate::phase_space::{embed, embed_vector, squeeze_symplectic, GaussianChannel, SymplecticMatrix, HBAR};

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Covariance matrices shared by groups of terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariances {
    pub(crate) mats: Vec<DMatrix<f64>>,
    /// Group of each term; `None` when every term uses `mats[0]`.
    pub(crate) index: Option<Vec<u32>>,
}

impl Covariances {
    pub fn shared(sigma: DMatrix<f64>) -> Self {
        Self { mats: vec![sigma], index: None }
    }

    pub fn grouped(mats: Vec<DMatrix<f64>>, index: Vec<u32>) -> Result<Self> {
        if index.iter().any(|&g| g as usize >= mats.len()) {
            return Err(Error::InvalidArgument("covariance group index out of range".into()));
        }
        Ok(Self { mats, index: Some(index) })
    }

    pub fn is_shared(&self) -> bool {
        self.index.is_none()
    }

    pub fn num_groups(&self) -> usize {
        self.mats.len()
    }

    pub fn group_of(&self, term: usize) -> usize {
        match &self.index {
            None => 0,
            Some(ix) => ix[term] as usize,
        }
    }

    pub fn get(&self, term: usize) -> &DMatrix<f64> {
        &self.mats[self.group_of(term)]
    }

    pub fn groups(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    fn select(&self, terms: &[usize]) -> Self {
        match &self.index {
            None => self.clone(),
            Some(ix) => Self { mats: self.mats.clone(), index: Some(terms.iter().map(|&t| ix[t]).collect()) },
        }
    }
}

/// Recipe for the states `Σ_k a_k S(z)|α_k⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherentSuperposition {
    pub coefficients: Vec<Complex64>,
    pub amplitudes: Vec<Complex64>,
    #[serde(default)]
    pub squeeze: Complex64,
}

/// Wigner mean and log-weight of `|α⟩⟨β|`, so that its Wigner function is
/// `e^{d} G_{μ, I}`. `d = ln⟨β|α⟩`.
pub fn coherent_outer(alpha: Complex64, beta: Complex64) -> ([Complex64; 2], Complex64) {
    let s = alpha + beta;
    let t = alpha - beta;
    let mu = [Complex64::new(s.re, t.im), Complex64::new(s.im, -t.re)];
    let prod = beta.conj() * alpha;
    let d = Complex64::new(-0.5 * t.norm_sqr(), prod.im);
    (mu, d)
}

/// A multimode LCoG state.
#[derive(Debug, Clone)]
pub struct LcogState {
    pub(crate) num_modes: usize,
    pub(crate) log_weights: Vec<Complex64>,
    /// Flattened means, `2N` entries per term.
    pub(crate) means: Vec<Complex64>,
    pub(crate) covs: Covariances,
    pub(crate) num_k: usize,
    pub(crate) reduced: bool,
    pub(crate) tape: Option<GradientTape>,
}

impl LcogState {
    /// `N`-mode vacuum.
    pub fn vacuum(num_modes: usize) -> Result<Self> {
        if num_modes < 1 {
            return Err(Error::InvalidArgument("vacuum needs at least one mode".into()));
        }
        let n2 = 2 * num_modes;
        Ok(Self {
            num_modes,
            log_weights: vec![C0],
            means: vec![C0; n2],
            covs: Covariances::shared(DMatrix::identity(n2, n2) * (HBAR / 2.0)),
            num_k: 1,
            reduced: false,
            tape: None,
        })
    }

    /// Build a state from raw parts. In reduced form the first `num_k` terms
    /// must have real weights and means.
    pub fn from_parts(
        num_modes: usize,
        log_weights: Vec<Complex64>,
        means: Vec<Complex64>,
        covs: Covariances,
        num_k: Option<usize>,
    ) -> Result<Self> {
        let n = log_weights.len();
        let n2 = 2 * num_modes;
        if n == 0 {
            return Err(Error::InvalidArgument("state needs at least one term".into()));
        }
        if means.len() != n * n2 {
            return Err(Error::InvalidArgument(format!(
                "expected {} mean entries, got {}",
                n * n2,
                means.len()
            )));
        }
        if let Some(ix) = &covs.index {
            if ix.len() != n {
                return Err(Error::InvalidArgument("covariance index length mismatch".into()));
            }
        }
        for m in &covs.mats {
            if m.shape() != (n2, n2) {
                return Err(Error::InvalidArgument("covariance has the wrong shape".into()));
            }
            if (m - m.transpose()).amax() > 1e-10 * m.amax() {
                return Err(Error::InvalidArgument("covariance is not symmetric".into()));
            }
            if n2 > 0 {
                let min = m.clone().symmetric_eigenvalues().min();
                if !(min >= 1e-12) {
                    return Err(Error::DegenerateState(format!(
                        "covariance eigenvalue {min:.3e} below 1e-12"
                    )));
                }
            }
        }
        let reduced = num_k.is_some();
        let num_k = num_k.unwrap_or(n);
        if num_k > n {
            return Err(Error::InvalidArgument("num_k exceeds the number of terms".into()));
        }
        if reduced {
            for j in 0..num_k {
                let c = wrap_phase(log_weights[j]);
                let real_weight = c.im.abs() < 1e-12 || (c.im.abs() - std::f64::consts::PI).abs() < 1e-12;
                let real_mean = means[j * n2..(j + 1) * n2].iter().all(|z| z.im.abs() < 1e-12);
                if !(real_weight && real_mean) {
                    return Err(Error::InvalidArgument(format!("real-sector term {j} is not real")));
                }
            }
        }
        Ok(Self {
            num_modes,
            log_weights: log_weights.into_iter().map(wrap_phase).collect(),
            means,
            covs,
            num_k,
            reduced,
            tape: None,
        })
    }

    /// `Σ_k a_k S(z)|α_k⟩`, normalized.
    pub fn from_coherent_superposition(spec: &CoherentSuperposition, reduced: bool) -> Result<Self> {
        let k = spec.coefficients.len();
        if k == 0 || spec.amplitudes.len() != k {
            return Err(Error::InvalidArgument(
                "coherent superposition needs matching, non-empty coefficient and amplitude lists".into(),
            ));
        }
        let ln_a: Vec<Complex64> = spec.coefficients.iter().map(|&a| ln_complex(a)).collect();
        let mut state = Self::from_outer_products(k, reduced, |i, j| {
            let (mu, d) = coherent_outer(spec.amplitudes[i], spec.amplitudes[j]);
            (ln_a[i] + ln_a[j].conj() + d, mu)
        })?;
        if spec.squeeze != C0 {
            let s = squeeze_symplectic(spec.squeeze.norm(), spec.squeeze.arg())?;
            state.apply_symplectic(&s, None, &[0])?;
        }
        state.normalize()?;
        Ok(state)
    }

    /// Single-mode state `Σ_{ij} C_ij |α_i⟩⟨α_j|` from a Hermitian coefficient
    /// pattern; `term(i, j)` returns `(ln C_ij + ln⟨α_j|α_i⟩, μ_ij)`. Only
    /// `i ≤ j` is queried in reduced form. Zero coefficients are dropped.
    pub(crate) fn from_outer_products<F>(k: usize, reduced: bool, term: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> (Complex64, [Complex64; 2]),
    {
        let mut order: Vec<(usize, usize)> = (0..k).map(|i| (i, i)).collect();
        let diag = k;
        for i in 0..k {
            for j in i + 1..k {
                order.push((i, j));
                if !reduced {
                    order.push((j, i));
                }
            }
        }
        let mut log_weights = Vec::with_capacity(order.len());
        let mut means = Vec::with_capacity(2 * order.len());
        let mut num_k = 0;
        for (n, &(i, j)) in order.iter().enumerate() {
            let (c, mu) = term(i, j);
            if c.re == f64::NEG_INFINITY {
                continue;
            }
            if n < diag {
                num_k += 1;
            }
            log_weights.push(if i == j { Complex64::new(c.re, wrap_phase(c).im.round_to_real_sign()) } else { c });
            if i == j {
                means.extend(mu.iter().map(|z| Complex64::new(z.re, 0.0)));
            } else {
                means.extend_from_slice(&mu);
            }
        }
        if log_weights.is_empty() {
            return Err(Error::DegenerateState("all coefficients vanish".into()));
        }
        Self::from_parts(
            1,
            log_weights,
            means,
            Covariances::shared(DMatrix::identity(2, 2) * (HBAR / 2.0)),
            if reduced { Some(num_k) } else { None },
        )
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn num_weights(&self) -> usize {
        self.log_weights.len()
    }

    /// Count of real-sector terms (all terms in full form).
    pub fn num_k(&self) -> usize {
        self.num_k
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced
    }

    /// Number of terms the state has in full form.
    pub fn full_form_count(&self) -> usize {
        2 * self.num_weights() - self.num_k
    }

    pub fn log_weights(&self) -> &[Complex64] {
        &self.log_weights
    }

    pub fn mean(&self, term: usize) -> &[Complex64] {
        let n2 = 2 * self.num_modes;
        &self.means[term * n2..(term + 1) * n2]
    }

    pub fn covariance(&self, term: usize) -> &DMatrix<f64> {
        self.covs.get(term)
    }

    pub fn covariances(&self) -> &Covariances {
        &self.covs
    }

    pub fn tape(&self) -> Option<&GradientTape> {
        self.tape.as_ref()
    }

    pub fn tape_mut(&mut self) -> Option<&mut GradientTape> {
        self.tape.as_mut()
    }

    pub fn take_tape(&mut self) -> Option<GradientTape> {
        self.tape.take()
    }

    pub(crate) fn set_tape(&mut self, tape: Option<GradientTape>) {
        self.tape = tape;
    }

    /// 1 for real-sector terms, 2 for stored members of conjugate pairs.
    pub fn multiplicity(&self, term: usize) -> f64 {
        if self.reduced && term >= self.num_k {
            2.0
        } else {
            1.0
        }
    }

    /// `Σ e^{c}` over the full form, as a shifted exponential sum.
    pub fn norm_sum(&self) -> Result<ExpSum> {
        let k = self.num_k;
        let reduced = self.reduced;
        let lw = &self.log_weights;
        ExpSum::new(lw.iter().enumerate().flat_map(move |(j, &c)| {
            let conj = if reduced && j >= k { Some((c.conj(), 1.0)) } else { None };
            std::iter::once((c, 1.0)).chain(conj)
        }))
    }

    /// `ln Σ e^{c_m}` (with conjugate partners in reduced form).
    pub fn log_norm(&self) -> Result<Complex64> {
        Ok(self.norm_sum()?.ln())
    }

    /// Subtract the real log-norm from every weight; returns it.
    pub fn normalize(&mut self) -> Result<f64> {
        let ln = self.norm_sum()?.ln_re_positive("state norm")?;
        if ln == f64::NEG_INFINITY {
            return Err(Error::DegenerateState("state has zero norm".into()));
        }
        for c in &mut self.log_weights {
            *c -= ln;
        }
        Ok(ln)
    }

    /// Tensor product `self ⊗ other`.
    pub fn tensor(&self, other: &LcogState) -> Result<LcogState> {
        if self.reduced != other.reduced {
            return self.to_full_form()?.tensor(&other.to_full_form()?);
        }
        let (na, nb) = (self.num_modes, other.num_modes);
        let n2 = 2 * (na + nb);
        // pairs (i, j, conj_j) in output order
        let mut pairs: Vec<(usize, usize, bool)> = Vec::new();
        let (nwa, nwb) = (self.num_weights(), other.num_weights());
        let num_k;
        if self.reduced {
            let (ka, kb) = (self.num_k, other.num_k);
            for i in 0..ka {
                for j in 0..kb {
                    pairs.push((i, j, false));
                }
            }
            num_k = pairs.len();
            for i in 0..ka {
                for j in kb..nwb {
                    pairs.push((i, j, false));
                }
            }
            for i in ka..nwa {
                for j in 0..nwb {
                    pairs.push((i, j, false));
                }
                for j in kb..nwb {
                    pairs.push((i, j, true));
                }
            }
        } else {
            for i in 0..nwa {
                for j in 0..nwb {
                    pairs.push((i, j, false));
                }
            }
            num_k = pairs.len();
        }
        let cj = |z: Complex64, c: bool| if c { z.conj() } else { z };
        let log_weights = pairs
            .iter()
            .map(|&(i, j, c)| wrap_phase(self.log_weights[i] + cj(other.log_weights[j], c)))
            .collect();
        let mut means = Vec::with_capacity(pairs.len() * n2);
        for &(i, j, c) in &pairs {
            means.extend_from_slice(self.mean(i));
            means.extend(other.mean(j).iter().map(|&z| cj(z, c)));
        }
        let (covs, group_pairs) = direct_sum_groups(&self.covs, &other.covs, pairs.iter().map(|&(i, j, _)| (i, j)));
        let tape = crate::grad::tensor_tapes(self, other, &pairs, &group_pairs)?;
        Ok(LcogState {
            num_modes: na + nb,
            log_weights,
            means,
            covs,
            num_k: if self.reduced { num_k } else { pairs.len() },
            reduced: self.reduced,
            tape,
        })
    }

    /// `μ ↦ Sμ + d`, `σ ↦ SσSᵀ` on the listed modes.
    pub fn apply_symplectic(&mut self, s: &SymplecticMatrix, d: Option<&DVector<f64>>, modes: &[usize]) -> Result<()> {
        self.apply_symplectic_with_derivatives(s, d, modes, &[])
    }

    /// As [`apply_symplectic`](Self::apply_symplectic) for a gate that depends
    /// on circuit parameters. `derivs` lists `(parameter, ∂S, ∂d)` on the
    /// gate's own modes; the attached tape gets the product-rule update.
    pub fn apply_symplectic_with_derivatives(
        &mut self,
        s: &SymplecticMatrix,
        d: Option<&DVector<f64>>,
        modes: &[usize],
        derivs: &[(usize, DMatrix<f64>, Option<DVector<f64>>)],
    ) -> Result<()> {
        let n = self.num_modes;
        if s.num_modes() != modes.len() {
            return Err(Error::InvalidArgument(format!(
                "{}-mode operation applied to {} modes",
                s.num_modes(),
                modes.len()
            )));
        }
        let full = embed(s.matrix(), modes, n, 1.0)?;
        let dfull = match d {
            Some(v) => Some(embed_vector(v, modes, n)?),
            None => None,
        };
        let mut dfull_derivs = Vec::with_capacity(derivs.len());
        for (p, ds, dd) in derivs {
            let dd = match dd {
                Some(v) => Some(embed_vector(v, modes, n)?),
                None => None,
            };
            dfull_derivs.push((*p, embed(ds, modes, n, 0.0)?, dd));
        }
        if let Some(tape) = &mut self.tape {
            tape.apply_symplectic(&full, &dfull_derivs, &self.means, &self.covs.mats)?;
        } else if !derivs.is_empty() {
            log::debug!("gate derivatives ignored: no gradient tape attached");
        }
        // real vectors add only to real-sector means; displacements are real
        transform_means(&mut self.means, 2 * n, &full, dfull.as_ref());
        for m in &mut self.covs.mats {
            *m = &full * &*m * full.transpose();
            symmetrize(m);
        }
        Ok(())
    }

    /// `μ ↦ Xμ + d`, `σ ↦ XσXᵀ + Y` on the listed modes.
    pub fn apply_channel(&mut self, ch: &GaussianChannel, modes: &[usize]) -> Result<()> {
        let n = self.num_modes;
        if ch.num_modes() != modes.len() {
            return Err(Error::InvalidArgument(format!(
                "{}-mode channel applied to {} modes",
                ch.num_modes(),
                modes.len()
            )));
        }
        let x = embed(ch.x(), modes, n, 1.0)?;
        let y = embed(ch.y(), modes, n, 0.0)?;
        let d = embed_vector(ch.d(), modes, n)?;
        if let Some(tape) = &mut self.tape {
            tape.apply_linear(&x);
        }
        let d = if d.amax() == 0.0 { None } else { Some(d) };
        transform_means(&mut self.means, 2 * n, &x, d.as_ref());
        for m in &mut self.covs.mats {
            *m = &x * &*m * x.transpose() + &y;
            symmetrize(m);
        }
        Ok(())
    }

    /// Expand conjugate partners explicitly.
    pub fn to_full_form(&self) -> Result<LcogState> {
        if !self.reduced {
            return Ok(self.clone());
        }
        let n = self.num_weights();
        let partners: Vec<usize> = (self.num_k..n).collect();
        let mut log_weights = self.log_weights.clone();
        log_weights.extend(partners.iter().map(|&j| wrap_phase(self.log_weights[j].conj())));
        let mut means = self.means.clone();
        for &j in &partners {
            means.extend(self.mean(j).iter().map(|z| z.conj()));
        }
        let covs = match &self.covs.index {
            None => self.covs.clone(),
            Some(ix) => {
                let extra: Vec<u32> = partners.iter().map(|&j| ix[j]).collect();
                let mut ix = ix.clone();
                ix.extend(extra);
                Covariances { mats: self.covs.mats.clone(), index: Some(ix) }
            }
        };
        let tape = self.tape.as_ref().map(|t| t.expand_conjugates(n, &partners));
        Ok(LcogState { num_modes: self.num_modes, log_weights, means, covs, num_k: n + partners.len(), reduced: false, tape })
    }

    /// Keep one member of each conjugate pair. Fails if the full-form state is
    /// not closed under conjugation.
    pub fn to_reduced_form(&self) -> Result<LcogState> {
        if self.reduced {
            return Ok(self.clone());
        }
        let n = self.num_weights();
        let n2 = 2 * self.num_modes;
        let scale = self.means.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let tol = 1e-9 * scale;
        let is_real = |j: usize| {
            let c = self.log_weights[j];
            (c.im.abs() < 1e-9 || (c.im.abs() - std::f64::consts::PI).abs() < 1e-9)
                && self.mean(j).iter().all(|z| z.im.abs() <= tol)
        };
        let mut real = Vec::new();
        let mut complex = Vec::new();
        let mut used = vec![false; n];
        // candidates sorted by Re c so partners are found in a narrow window
        let mut by_re: Vec<usize> = (0..n).filter(|&j| !is_real(j)).collect();
        by_re.sort_by(|&a, &b| self.log_weights[a].re.total_cmp(&self.log_weights[b].re));
        for j in 0..n {
            if is_real(j) {
                real.push(j);
            }
        }
        for (pos, &j) in by_re.iter().enumerate() {
            if used[j] {
                continue;
            }
            let cj = self.log_weights[j];
            let mut found = None;
            for &k in by_re[pos + 1..].iter() {
                if self.log_weights[k].re - cj.re > 1e-9 * cj.re.abs().max(1.0) {
                    break;
                }
                if used[k] || self.covs.group_of(k) != self.covs.group_of(j) {
                    continue;
                }
                let dc = wrap_phase(self.log_weights[k] - cj.conj());
                if dc.norm() > 1e-9 * cj.norm().max(1.0) {
                    continue;
                }
                let mk = self.mean(k);
                if self.mean(j).iter().zip(mk).all(|(a, b)| (a.conj() - b).norm() <= tol) {
                    found = Some(k);
                    break;
                }
            }
            match found {
                Some(k) => {
                    used[j] = true;
                    used[k] = true;
                    complex.push(j);
                }
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "term {j} has no conjugate partner; state is not real"
                    )))
                }
            }
        }
        complex.sort_unstable();
        let order: Vec<usize> = real.iter().chain(complex.iter()).copied().collect();
        let mut means = Vec::with_capacity(order.len() * n2);
        for &j in &order {
            means.extend_from_slice(self.mean(j));
        }
        Ok(LcogState {
            num_modes: self.num_modes,
            log_weights: order.iter().map(|&j| self.log_weights[j]).collect(),
            means,
            covs: self.covs.select(&order),
            num_k: real.len(),
            reduced: true,
            tape: self.tape.as_ref().map(|t| t.select(n, &order)),
        })
    }

    /// Terms `(c, μ, group)` of the full form, conjugate partners included.
    pub(crate) fn expanded_terms(&self) -> Vec<(Complex64, Vec<Complex64>, usize)> {
        let mut out = Vec::with_capacity(self.full_form_count());
        for j in 0..self.num_weights() {
            out.push((self.log_weights[j], self.mean(j).to_vec(), self.covs.group_of(j)));
            if self.reduced && j >= self.num_k {
                out.push((self.log_weights[j].conj(), self.mean(j).iter().map(|z| z.conj()).collect(), self.covs.group_of(j)));
            }
        }
        out
    }

    /// Wigner function at a phase-space point (`2N` coordinates).
    pub fn wigner(&self, q: &[f64]) -> Result<f64> {
        Ok(self.wigner_many(&[q.to_vec()])?[0])
    }

    /// Wigner function at many points, evaluated in parallel.
    ///
    /// The imaginary residue of each value is checked against `1e-9` of the
    /// term magnitude scale and rejected rather than dropped.
    pub fn wigner_many(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n2 = 2 * self.num_modes;
        if let Some(p) = points.iter().find(|p| p.len() != n2) {
            return Err(Error::InvalidArgument(format!("point has {} coordinates, expected {n2}", p.len())));
        }
        let factors = self.covs.mats.iter().map(GaussianFactor::new).collect::<Result<Vec<_>>>()?;
        points
            .par_iter()
            .map(|q| {
                let terms = (0..self.num_weights()).map(|j| {
                    let f = &factors[self.covs.group_of(j)];
                    (self.log_weights[j] + f.log_density(q, self.mean(j)), self.multiplicity(j))
                });
                let s = ExpSum::new(terms.collect::<Vec<_>>())?;
                let value = s.sum * s.shift.exp();
                if !self.reduced && value.im.abs() > 1e-9 * s.magnitude * s.shift.exp() {
                    return Err(Error::NumericalStability(format!(
                        "Wigner function has imaginary residue {:.3e}",
                        value.im
                    )));
                }
                Ok(value.re)
            })
            .collect()
    }

    /// Drop terms whose weight is below `ratio` of the largest.
    ///
    /// Off by default everywhere: small terms can still carry interference.
    pub fn prune(&self, ratio: f64) -> Result<LcogState> {
        if self.tape.is_some() {
            return Err(Error::InvalidArgument("cannot prune a state with a gradient tape".into()));
        }
        let max = self.log_weights.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
        let cut = max + ratio.ln();
        let keep: Vec<usize> = (0..self.num_weights()).filter(|&j| self.log_weights[j].re >= cut).collect();
        let n2 = 2 * self.num_modes;
        let mut means = Vec::with_capacity(keep.len() * n2);
        for &j in &keep {
            means.extend_from_slice(self.mean(j));
        }
        Ok(LcogState {
            num_modes: self.num_modes,
            log_weights: keep.iter().map(|&j| self.log_weights[j]).collect(),
            means,
            covs: self.covs.select(&keep),
            num_k: if self.reduced { keep.iter().filter(|&&j| j < self.num_k).count() } else { keep.len() },
            reduced: self.reduced,
            tape: None,
        })
    }

    /// Versioned JSON document.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&StateDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StateDocument = serde_json::from_str(text)?;
        doc.into_state()
    }
}

trait RoundSign {
    fn round_to_real_sign(self) -> f64;
}

impl RoundSign for f64 {
    /// Snap a phase known to be 0 or π to exactly that value.
    fn round_to_real_sign(self) -> f64 {
        if self.abs() > std::f64::consts::FRAC_PI_2 {
            std::f64::consts::PI
        } else {
            0.0
        }
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// `μ ↦ Mμ + d` for every term, in parallel.
pub(crate) fn transform_means(means: &mut [Complex64], stride: usize, m: &DMatrix<f64>, d: Option<&DVector<f64>>) {
    if stride == 0 {
        return;
    }
    means.par_chunks_mut(stride).for_each(|mu| {
        let old: Vec<Complex64> = mu.to_vec();
        for i in 0..stride {
            let mut acc = C0;
            for k in 0..stride {
                acc += old[k] * m[(i, k)];
            }
            if let Some(d) = d {
                acc += d[i];
            }
            mu[i] = acc;
        }
    });
}

/// Direct sums of covariance groups used by the term pairs; returns the new
/// groups and, for each new group, the `(group_a, group_b)` it came from.
fn direct_sum_groups(
    a: &Covariances,
    b: &Covariances,
    pairs: impl Iterator<Item = (usize, usize)>,
) -> (Covariances, Vec<(usize, usize)>) {
    let block = |ma: &DMatrix<f64>, mb: &DMatrix<f64>| {
        let (ra, rb) = (ma.nrows(), mb.nrows());
        let mut m = DMatrix::zeros(ra + rb, ra + rb);
        m.view_mut((0, 0), (ra, ra)).copy_from(ma);
        m.view_mut((ra, ra), (rb, rb)).copy_from(mb);
        m
    };
    if a.is_shared() && b.is_shared() {
        return (Covariances::shared(block(&a.mats[0], &b.mats[0])), vec![(0, 0)]);
    }
    let mut map: HashMap<(usize, usize), u32> = HashMap::new();
    let mut origin = Vec::new();
    let mut index = Vec::new();
    for (i, j) in pairs {
        let key = (a.group_of(i), b.group_of(j));
        let g = *map.entry(key).or_insert_with(|| {
            origin.push(key);
            (origin.len() - 1) as u32
        });
        index.push(g);
    }
    let mats = origin.iter().map(|&(ga, gb)| block(&a.mats[ga], &b.mats[gb])).collect();
    (Covariances { mats, index: Some(index) }, origin)
}

/// Cached inverse and log-determinant of a covariance.
pub(crate) struct GaussianFactor {
    pub inv: DMatrix<f64>,
    /// `ln det(2π σ)`
    pub log_det_2pi: f64,
}

impl GaussianFactor {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows();
        if n == 0 {
            return Ok(Self { inv: DMatrix::zeros(0, 0), log_det_2pi: 0.0 });
        }
        let chol = Cholesky::new(sigma.clone()).ok_or_else(|| Error::Singular {
            context: "covariance is not positive definite".into(),
        })?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { inv: chol.inverse(), log_det_2pi: log_det + n as f64 * (2.0 * std::f64::consts::PI).ln() })
    }

    /// `ln G_{μ,σ}(q)` continued to complex `μ` (bilinear, no conjugation).
    pub fn log_density(&self, q: &[f64], mu: &[Complex64]) -> Complex64 {
        let n = q.len();
        let mut quad = C0;
        for i in 0..n {
            let di = Complex64::new(q[i], 0.0) - mu[i];
            let mut row = C0;
            for k in 0..n {
                row += (Complex64::new(q[k], 0.0) - mu[k]) * self.inv[(i, k)];
            }
            quad += di * row;
        }
        -0.5 * quad - 0.5 * self.log_det_2pi
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDocument {
    schema: String,
    num_modes: usize,
    reduced: bool,
    num_k: usize,
    log_weights: Vec<[f64; 2]>,
    means: Vec<Vec<[f64; 2]>>,
    covariances: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariance_index: Option<Vec<u32>>,
}

const STATE_SCHEMA: &str = "lcg-state/1";

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

impl From<&LcogState> for StateDocument {
    fn from(s: &LcogState) -> Self {
        StateDocument {
            schema: STATE_SCHEMA.into(),
            num_modes: s.num_modes,
            reduced: s.reduced,
            num_k: s.num_k,
            log_weights: s.log_weights.iter().map(|&z| pair(z)).collect(),
            means: (0..s.num_weights()).map(|j| s.mean(j).iter().map(|&z| pair(z)).collect()).collect(),
            covariances: s
                .covs
                .mats
                .iter()
                .map(|m| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
                .collect(),
            covariance_index: s.covs.index.clone(),
        }
    }
}

impl StateDocument {
    fn into_state(self) -> Result<LcogState> {
        if self.schema != STATE_SCHEMA {
            return Err(Error::Serialization(format!(
                "unsupported state schema {:?}, expected {STATE_SCHEMA:?}",
                self.schema
            )));
        }
        let n2 = 2 * self.num_modes;
        let mut mats = Vec::new();
        for rows in &self.covariances {
            if rows.len() != n2 || rows.iter().any(|r| r.len() != n2) {
                return Err(Error::Serialization("covariance has the wrong shape".into()));
            }
            mats.push(DMatrix::from_fn(n2, n2, |i, j| rows[i][j]));
        }
        let covs = match self.covariance_index {
            None if mats.len() == 1 => Covariances::shared(mats.pop().unwrap()),
            None => return Err(Error::Serialization("several covariances need an index".into())),
            Some(ix) => Covariances::grouped(mats, ix)?,
        };
        let mut means = Vec::with_capacity(self.means.len() * n2);
        for m in &self.means {
            if m.len() != n2 {
                return Err(Error::Serialization("mean has the wrong length".into()));
            }
            means.extend(m.iter().map(|p| Complex64::new(p[0], p[1])));
        }
        let lw = self.log_weights.iter().map(|p| Complex64::new(p[0], p[1])).collect();
        LcogState::from_parts(self.num_modes, lw, means, covs, if self.reduced { Some(self.num_k) } else { None })
    }
}
