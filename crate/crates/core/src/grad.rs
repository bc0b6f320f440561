//! Forward-mode parameter derivatives of LCoG states.
//!
//! A [`GradientTape`] rides along with a state and stores, for every circuit
//! parameter `φ`, the partials `∂c_m/∂φ`, `∂μ_m/∂φ` and `∂σ_g/∂φ` (one per
//! covariance group, mirroring the host). Gates, channels and post-selection
//! update it by the product rule; the functions here contract it into
//! gradients of the success probability, characteristic function, overlap and
//! effective squeezing.
//!
//! All gradients refer to the *normalized* state: normalization constants are
//! differentiated and subtracted, `f_j ↦ f_j − ln p`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::characterize::{self, Quadrature};
use crate::error::{Error, Result};
use crate::lcog_state::{GaussianFactor, LcogState};
use crate::numeric::{neumaier_sum, ExpSum};
use crate::phase_space::omega;

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Per-parameter partials, stored term-major: entry `(j, p)` of the weights
/// is at `j * n_g + p`, and the means of `(j, p)` start at `(j * n_g + p) * 2N`.
/// Covariance partials are per group: `(g, p)` at `g * n_g + p`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub(crate) num_params: usize,
    pub(crate) stride: usize,
    pub(crate) d_log_weights: Vec<Complex64>,
    pub(crate) d_means: Vec<Complex64>,
    pub(crate) d_covs: Vec<DMatrix<f64>>,
    /// `∂ ln p / ∂φ` accumulated over the normalizations applied so far.
    pub(crate) d_log_prob: Vec<f64>,
}

impl GradientTape {
    pub(crate) fn zeros(num_params: usize, num_terms: usize, num_modes: usize, num_groups: usize) -> Self {
        let stride = 2 * num_modes;
        Self {
            num_params,
            stride,
            d_log_weights: vec![C0; num_terms * num_params],
            d_means: vec![C0; num_terms * num_params * stride],
            d_covs: vec![DMatrix::zeros(stride, stride); num_groups * num_params],
            d_log_prob: vec![0.0; num_params],
        }
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn num_terms(&self) -> usize {
        if self.num_params == 0 {
            0
        } else {
            self.d_log_weights.len() / self.num_params
        }
    }

    /// `∂c_j/∂φ_p`
    pub fn d_log_weight(&self, term: usize, param: usize) -> Complex64 {
        self.d_log_weights[term * self.num_params + param]
    }

    /// `∂μ_j/∂φ_p`
    pub fn d_mean(&self, term: usize, param: usize) -> &[Complex64] {
        let o = (term * self.num_params + param) * self.stride;
        &self.d_means[o..o + self.stride]
    }

    /// `∂σ_g/∂φ_p` for covariance group `g`.
    pub fn d_cov(&self, group: usize, param: usize) -> &DMatrix<f64> {
        &self.d_covs[group * self.num_params + param]
    }

    /// Accumulated `∂ ln p/∂φ` from every post-selection so far.
    pub fn d_log_prob(&self) -> &[f64] {
        &self.d_log_prob
    }

    /// Structural check against the host state.
    pub fn matches(&self, state: &LcogState) -> bool {
        let ng = self.num_params;
        self.stride == 2 * state.num_modes()
            && self.d_log_weights.len() == ng * state.num_weights()
            && self.d_means.len() == ng * state.num_weights() * self.stride
            && self.d_covs.len() == ng * state.covariances().num_groups()
    }

    /// Symplectic update. `derivs` holds `(parameter, ∂S, ∂d)` already
    /// embedded in the full space; `means`/`covs` are the pre-gate values.
    pub(crate) fn apply_symplectic(
        &mut self,
        s: &DMatrix<f64>,
        derivs: &[(usize, DMatrix<f64>, Option<nalgebra::DVector<f64>>)],
        means: &[Complex64],
        covs: &[DMatrix<f64>],
    ) -> Result<()> {
        let ng = self.num_params;
        if let Some((p, _, _)) = derivs.iter().find(|(p, _, _)| *p >= ng) {
            return Err(Error::InvalidArgument(format!("parameter {p} exceeds tape size {ng}")));
        }
        let st = self.stride;
        let st_t = s.transpose();
        for (g, sigma) in covs.iter().enumerate() {
            for p in 0..ng {
                let dc = &mut self.d_covs[g * ng + p];
                *dc = s * &*dc * &st_t;
            }
            for (p, ds, _) in derivs {
                let extra = ds * sigma * &st_t;
                let dc = &mut self.d_covs[g * ng + p];
                *dc += &extra + extra.transpose();
            }
        }
        self.d_means.par_chunks_mut(ng * st).zip(means.par_chunks(st)).for_each(|(dm, mu)| {
            for p in 0..ng {
                mat_vec_in_place(s, &mut dm[p * st..(p + 1) * st]);
            }
            for (p, ds, dd) in derivs {
                let block = &mut dm[p * st..(p + 1) * st];
                for i in 0..st {
                    let mut acc = C0;
                    for k in 0..st {
                        acc += mu[k] * ds[(i, k)];
                    }
                    if let Some(dd) = dd {
                        acc += dd[i];
                    }
                    block[i] += acc;
                }
            }
        });
        Ok(())
    }

    /// Parameter-independent linear map `X` (channels).
    pub(crate) fn apply_linear(&mut self, x: &DMatrix<f64>) {
        let xt = x.transpose();
        for dc in &mut self.d_covs {
            *dc = x * &*dc * &xt;
        }
        let st = self.stride;
        self.d_means.par_chunks_mut(st).for_each(|v| mat_vec_in_place(x, v));
    }

    /// Append conjugated partials for the listed partner terms.
    pub(crate) fn expand_conjugates(&self, _n: usize, partners: &[usize]) -> Self {
        let ng = self.num_params;
        let st = self.stride;
        let mut out = self.clone();
        for &j in partners {
            out.d_log_weights.extend(self.d_log_weights[j * ng..(j + 1) * ng].iter().map(|z| z.conj()));
            out.d_means.extend(self.d_means[j * ng * st..(j + 1) * ng * st].iter().map(|z| z.conj()));
        }
        out
    }

    /// Keep the listed terms, in order.
    pub(crate) fn select(&self, _n: usize, order: &[usize]) -> Self {
        let ng = self.num_params;
        let st = self.stride;
        let mut out = Self { d_log_weights: Vec::new(), d_means: Vec::new(), ..self.clone() };
        for &j in order {
            out.d_log_weights.extend_from_slice(&self.d_log_weights[j * ng..(j + 1) * ng]);
            out.d_means.extend_from_slice(&self.d_means[j * ng * st..(j + 1) * ng * st]);
        }
        out
    }
}

fn mat_vec_in_place(m: &DMatrix<f64>, v: &mut [Complex64]) {
    let n = v.len();
    let old: Vec<Complex64> = v.to_vec();
    for i in 0..n {
        let mut acc = C0;
        for k in 0..n {
            acc += old[k] * m[(i, k)];
        }
        v[i] = acc;
    }
}

/// Tape of `a ⊗ b` for the given term pairs `(i, j, conj_j)`.
pub(crate) fn tensor_tapes(
    a: &LcogState,
    b: &LcogState,
    pairs: &[(usize, usize, bool)],
    group_origin: &[(usize, usize)],
) -> Result<Option<GradientTape>> {
    let ng = match (a.tape(), b.tape()) {
        (None, None) => return Ok(None),
        (Some(t), None) | (None, Some(t)) => t.num_params,
        (Some(ta), Some(tb)) => {
            if ta.num_params != tb.num_params {
                return Err(Error::InvalidArgument("tensor of tapes with different parameter counts".into()));
            }
            ta.num_params
        }
    };
    let (sa, sb) = (2 * a.num_modes(), 2 * b.num_modes());
    let st = sa + sb;
    let mut out = GradientTape::zeros(ng, pairs.len(), a.num_modes() + b.num_modes(), group_origin.len());
    let cj = |z: Complex64, c: bool| if c { z.conj() } else { z };
    for (n, &(i, j, c)) in pairs.iter().enumerate() {
        for p in 0..ng {
            let mut dw = C0;
            let o = (n * ng + p) * st;
            if let Some(ta) = a.tape() {
                dw += ta.d_log_weight(i, p);
                out.d_means[o..o + sa].copy_from_slice(ta.d_mean(i, p));
            }
            if let Some(tb) = b.tape() {
                dw += cj(tb.d_log_weight(j, p), c);
                for (k, z) in tb.d_mean(j, p).iter().enumerate() {
                    out.d_means[o + sa + k] = cj(*z, c);
                }
            }
            out.d_log_weights[n * ng + p] = dw;
        }
    }
    for (g, &(ga, gb)) in group_origin.iter().enumerate() {
        for p in 0..ng {
            let m = &mut out.d_covs[g * ng + p];
            if let Some(ta) = a.tape() {
                m.view_mut((0, 0), (sa, sa)).copy_from(ta.d_cov(ga, p));
            }
            if let Some(tb) = b.tape() {
                m.view_mut((sa, sa), (sb, sb)).copy_from(tb.d_cov(gb, p));
            }
        }
    }
    let mut d_log_prob = vec![0.0; ng];
    for t in [a.tape(), b.tape()].into_iter().flatten() {
        for (acc, v) in d_log_prob.iter_mut().zip(&t.d_log_prob) {
            *acc += v;
        }
    }
    out.d_log_prob = d_log_prob;
    Ok(Some(out))
}

/// Attach a zero tape for `num_params` parameters (replacing any existing one).
pub fn attach_gradients(state: &mut LcogState, num_params: usize) {
    let tape = GradientTape::zeros(num_params, state.num_weights(), state.num_modes(), state.covariances().num_groups());
    state.set_tape(Some(tape));
}

fn tape_of(state: &LcogState) -> Result<&GradientTape> {
    state
        .tape()
        .ok_or_else(|| Error::InvalidArgument("state has no gradient tape attached".into()))
}

/// `∂ ln p/∂φ` of the success probability accumulated through post-selection.
pub fn grad_log_prob(state: &LcogState) -> Result<Vec<f64>> {
    Ok(tape_of(state)?.d_log_prob.clone())
}

/// `∂ ln N/∂φ` of the current (possibly unnormalized) state norm.
pub fn grad_log_norm(state: &LcogState) -> Result<Vec<f64>> {
    let tape = tape_of(state)?;
    let ng = tape.num_params;
    let sum = state.norm_sum()?;
    let mut out = vec![0.0; ng];
    for (p, o) in out.iter_mut().enumerate() {
        let parts: Vec<f64> = (0..state.num_weights())
            .map(|j| {
                let e = (state.log_weights()[j] - sum.shift).exp();
                state.multiplicity(j) * (e * tape.d_log_weight(j, p)).re
            })
            .collect();
        *o = neumaier_sum(parts) / sum.sum.re;
    }
    Ok(out)
}

/// Characteristic function of the normalized state and its gradient.
pub fn char_fun_with_grad(state: &LcogState, alpha: &[f64]) -> Result<(Complex64, Vec<Complex64>)> {
    let tape = tape_of(state)?;
    let ng = tape.num_params;
    let n2 = 2 * state.num_modes();
    if alpha.len() != n2 {
        return Err(Error::InvalidArgument("displacement has the wrong dimension".into()));
    }
    let om = omega(state.num_modes());
    let a = nalgebra::DVector::from_column_slice(alpha);
    let oa = &om * &a; // Ωα
    let ota = om.transpose() * &a; // Ωᵀα
    let groups = state.covariances().groups();
    let quad: Vec<f64> = groups.iter().map(|s| (ota.transpose() * s * &ota)[(0, 0)]).collect();
    let dquad: Vec<f64> = (0..groups.len() * ng)
        .map(|k| (ota.transpose() * tape.d_covs[k].clone() * &ota)[(0, 0)])
        .collect();
    let ln_norm = state.log_norm()?;
    let dln_norm = grad_log_norm(state)?;
    // each stored term and (in reduced form) its conjugate partner
    let mut exps = Vec::new();
    let mut dexps: Vec<Vec<Complex64>> = Vec::new();
    for j in 0..state.num_weights() {
        let g = state.covariances().group_of(j);
        let mu = state.mean(j);
        for conj in [false, true] {
            if conj && !(state.is_reduced() && j >= state.num_k()) {
                continue;
            }
            let cj = |z: Complex64| if conj { z.conj() } else { z };
            let lin: Complex64 = (0..n2).map(|i| cj(mu[i]) * oa[i]).sum();
            let f = cj(state.log_weights()[j]) - ln_norm.re + Complex64::i() * lin - 0.5 * quad[g];
            exps.push(f);
            dexps.push(
                (0..ng)
                    .map(|p| {
                        let dlin: Complex64 = tape.d_mean(j, p).iter().zip(oa.iter()).map(|(d, o)| cj(*d) * *o).sum();
                        cj(tape.d_log_weight(j, p)) - dln_norm[p] + Complex64::i() * dlin - 0.5 * dquad[g * ng + p]
                    })
                    .collect(),
            );
        }
    }
    let sum = ExpSum::new(exps.iter().map(|&f| (f, 1.0)).collect::<Vec<_>>())?;
    let scale = sum.shift.exp();
    let chi = sum.sum * scale;
    let mut grad = vec![C0; ng];
    for (p, gp) in grad.iter_mut().enumerate() {
        let (mut re, mut im) = (crate::numeric::Neumaier::default(), crate::numeric::Neumaier::default());
        for (f, d) in exps.iter().zip(&dexps) {
            let z = (f - sum.shift).exp() * d[p];
            re.add(z.re);
            im.add(z.im);
        }
        *gp = Complex64::new(re.value(), im.value()) * scale;
    }
    Ok((chi, grad))
}

/// `∂χ(α)/∂φ` for the normalized state.
pub fn grad_char_fun(state: &LcogState, alpha: &[f64]) -> Result<Vec<Complex64>> {
    Ok(char_fun_with_grad(state, alpha)?.1)
}

/// Effective squeezing `Δ_q` and its gradient.
///
/// From `Δ² = −(2/|α|²) ln|χ|`, `∂Δ = −Re(χ̄ ∂χ) / (|α|² |χ|² Δ)`.
pub fn effective_squeezing_with_grad(
    state: &LcogState,
    quadrature: Quadrature,
    amplitude: f64,
) -> Result<(f64, Vec<f64>)> {
    let alpha = characterize::stabilizer_displacement(quadrature, amplitude);
    let (chi, dchi) = char_fun_with_grad(state, &alpha)?;
    let delta = characterize::delta_from_chi(chi, amplitude)?;
    let a2 = amplitude * amplitude;
    let grad = dchi
        .iter()
        .map(|d| -(chi.conj() * d).re / (a2 * chi.norm_sqr() * delta))
        .collect();
    Ok((delta, grad))
}

/// `∂Δ_q/∂φ`.
pub fn grad_effective_squeezing(state: &LcogState, quadrature: Quadrature, amplitude: f64) -> Result<Vec<f64>> {
    Ok(effective_squeezing_with_grad(state, quadrature, amplitude)?.1)
}

/// Overlap `Tr[ρ τ]` of the normalized taped state with a fixed target, and
/// its gradient.
///
/// Per pair `(k, l)` with `A = σ_k + ω_l`, `Δ = μ_k − ν_l`:
/// `∂γ = −∂μᵀA⁻¹Δ + ½ΔᵀA⁻¹∂σA⁻¹Δ` and `∂δ = −½ Tr(A⁻¹∂σ)`.
pub fn overlap_with_grad(state: &LcogState, target: &LcogState) -> Result<(f64, Vec<f64>)> {
    let tape = tape_of(state)?;
    let ng = tape.num_params;
    if state.num_modes() != target.num_modes() {
        return Err(Error::InvalidArgument("overlap of states with different mode counts".into()));
    }
    let n2 = 2 * state.num_modes();
    let ln_na = state.log_norm()?.re;
    let ln_nb = target.log_norm()?.re;
    let dln_na = grad_log_norm(state)?;
    let tgt = target.expanded_terms();
    let ga = state.covariances().groups();
    let gb = target.covariances().groups();
    // per (group_a, group_b): A⁻¹, ln det(2πA) and the trace terms
    let mut factors = Vec::with_capacity(ga.len() * gb.len());
    for (ia, sa) in ga.iter().enumerate() {
        for sb in gb {
            let f = GaussianFactor::new(&(sa + sb))?;
            let tr: Vec<f64> = (0..ng).map(|p| (&f.inv * tape.d_cov(ia, p)).trace()).collect();
            let m: Vec<DMatrix<f64>> = (0..ng).map(|p| &f.inv * tape.d_cov(ia, p) * &f.inv).collect();
            factors.push((f, tr, m));
        }
    }
    let ln_hbar = n2 as f64 / 2.0 * (2.0 * std::f64::consts::PI * crate::phase_space::HBAR).ln();
    let rows: Vec<(Vec<(Complex64, f64)>, Vec<Vec<Complex64>>)> = (0..state.num_weights())
        .into_par_iter()
        .map(|k| {
            let g = state.covariances().group_of(k);
            let mu = state.mean(k);
            let mut terms = Vec::with_capacity(tgt.len());
            let mut grads = Vec::with_capacity(tgt.len());
            for (cl, nu, gl) in &tgt {
                let (f, tr, m) = &factors[g * gb.len() + gl];
                let delta: Vec<Complex64> = (0..n2).map(|i| mu[i] - nu[i]).collect();
                let ad: Vec<Complex64> = (0..n2).map(|i| (0..n2).map(|j| delta[j] * f.inv[(i, j)]).sum()).collect();
                let quad: Complex64 = delta.iter().zip(&ad).map(|(a, b)| a * b).sum();
                let e = state.log_weights()[k] - ln_na + cl - ln_nb - 0.5 * quad - 0.5 * f.log_det_2pi + ln_hbar;
                terms.push((e, state.multiplicity(k)));
                grads.push(
                    (0..ng)
                        .map(|p| {
                            let dmu = tape.d_mean(k, p);
                            let lin: Complex64 = dmu.iter().zip(&ad).map(|(a, b)| a * b).sum();
                            let mq: Complex64 = (0..n2)
                                .map(|i| delta[i] * (0..n2).map(|j| delta[j] * m[p][(i, j)]).sum::<Complex64>())
                                .sum();
                            tape.d_log_weight(k, p) - dln_na[p] - lin + 0.5 * mq - 0.5 * tr[p]
                        })
                        .collect(),
                );
            }
            (terms, grads)
        })
        .collect();
    let all: Vec<(Complex64, f64)> = rows.iter().flat_map(|(t, _)| t.iter().copied()).collect();
    let sum = ExpSum::new(all.clone())?;
    let value = sum.sum.re * sum.shift.exp();
    let mut grad = vec![0.0; ng];
    for (p, gp) in grad.iter_mut().enumerate() {
        let parts = rows.iter().flat_map(|(t, g)| {
            t.iter().zip(g).map(move |((e, mult), d)| mult * ((e - sum.shift).exp() * d[p]).re)
        });
        *gp = neumaier_sum(parts) * sum.shift.exp();
    }
    Ok((value, grad))
}

/// `∂ Tr[ρτ]/∂φ` for the normalized taped state.
pub fn grad_overlap(state: &LcogState, target: &LcogState) -> Result<Vec<f64>> {
    Ok(overlap_with_grad(state, target)?.1)
}
