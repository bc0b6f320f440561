//! Rank reduction of single-mode states and the Fock-basis bridge.
//!
//! A single-mode state built from vacuum-covariance Gaussians is a sum of
//! coherent outer products `|α⟩⟨β|`. After stripping the Gaussian unitary
//! found by the Williamson decomposition of the shared covariance, the core
//! of a heralded state has bounded photon number, so it can be rewritten on a
//! single coherent-state ring with the minimal number of terms.
//!
//! Displacements are not stripped: the core is expanded in the Fock basis as
//! is, which assumes an undisplaced core (true for the phase-free GBS
//! circuits in this crate). [`ReduceOutcome::captured_weight`] reports how
//! much of the core the truncated expansion holds.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characterize::photon_moments;
use crate::error::{Error, Result};
use crate::lcog_state::{coherent_outer, Covariances, LcogState};
use crate::numeric::{ln_complex, ln_factorial, ExpSum};
use crate::phase_space::{williamson, SymplecticMatrix, HBAR};
use crate::povm::{radius_for_infidelity, ring_superposition};

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Ring infidelity targeted when rebuilding a reduced state.
pub const REBUILD_INFIDELITY: f64 = 1e-10;

/// Invert the coherent outer-product map: `e^{d} G_{μ,I}` is the Wigner
/// function of `|α⟩⟨β|`. Conjugating `μ` swaps `α` and `β` and conjugates `d`.
pub fn gaussian_to_coherent_outer(mu: [Complex64; 2]) -> (Complex64, Complex64, Complex64) {
    let (nx, wx) = (mu[0].re, mu[0].im);
    let (np, wp) = (mu[1].re, mu[1].im);
    let alpha = Complex64::new(0.5 * (nx - wp), 0.5 * (np + wx));
    let beta = Complex64::new(0.5 * (nx + wp), 0.5 * (np - wx));
    let d = Complex64::new(-0.5 * (wx * wx + wp * wp), 0.5 * (np * wp + nx * wx));
    (alpha, beta, d)
}

/// Fock matrix elements of `Σ_j e^{w_j} |α_j⟩⟨β_j|` up to `cutoff` photons.
pub fn coherent_to_fock(terms: &[(Complex64, Complex64, Complex64)], cutoff: usize) -> Result<DMatrix<Complex64>> {
    let dim = cutoff + 1;
    let cells: Vec<(usize, usize)> = (0..dim).flat_map(|m| (0..dim).map(move |n| (m, n))).collect();
    let values = cells
        .par_iter()
        .map(|&(m, n)| fock_cell(terms, m, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(dim, dim, |m, n| values[m * dim + n]))
}

/// Hermitian variant: computes `m ≤ n` and mirrors.
fn coherent_to_fock_hermitian(terms: &[(Complex64, Complex64, Complex64)], cutoff: usize) -> Result<DMatrix<Complex64>> {
    let dim = cutoff + 1;
    let cells: Vec<(usize, usize)> = (0..dim).flat_map(|m| (m..dim).map(move |n| (m, n))).collect();
    let values = cells
        .par_iter()
        .map(|&(m, n)| fock_cell(terms, m, n))
        .collect::<Result<Vec<_>>>()?;
    let mut rho = DMatrix::from_element(dim, dim, C0);
    for (&(m, n), v) in cells.iter().zip(values) {
        if m == n {
            rho[(m, m)] = Complex64::new(v.re, 0.0);
        } else {
            rho[(m, n)] = v;
            rho[(n, m)] = v.conj();
        }
    }
    Ok(rho)
}

fn fock_cell(terms: &[(Complex64, Complex64, Complex64)], m: usize, n: usize) -> Result<Complex64> {
    let lf = -0.5 * (ln_factorial(m) + ln_factorial(n));
    let exps: Vec<(Complex64, f64)> = terms
        .iter()
        .filter_map(|&(w, a, b)| {
            if (m > 0 && a.norm() == 0.0) || (n > 0 && b.norm() == 0.0) {
                return None;
            }
            let pa = if m == 0 { C0 } else { ln_complex(a) * m as f64 };
            let pb = if n == 0 { C0 } else { ln_complex(b.conj()) * n as f64 };
            Some((w - 0.5 * a.norm_sqr() - 0.5 * b.norm_sqr() + pa + pb + lf, 1.0))
        })
        .collect();
    if exps.is_empty() {
        return Ok(C0);
    }
    let s = ExpSum::new(exps)?;
    Ok(s.sum * s.shift.exp())
}

/// Options for [`rank_reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReduceOptions {
    /// Output ring radius; `None` solves for [`REBUILD_INFIDELITY`].
    pub eps_out: Option<f64>,
    /// Standard deviations in the Chebyshev cutoff of the mixed path.
    pub k_std: f64,
    /// Stellar rank of a pure core, usually the total heralded photon number.
    /// `None` estimates it from the Fock diagonal.
    pub rank: Option<usize>,
    /// Thermal excess below which the state is treated as pure.
    pub pure_tolerance: f64,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        Self { eps_out: None, k_std: 6.0, rank: None, pure_tolerance: 1e-8 }
    }
}

/// Result of [`rank_reduce`].
#[derive(Debug, Clone)]
pub struct ReduceOutcome {
    pub state: LcogState,
    /// Stellar rank (pure path) or Chebyshev cutoff `r'` (mixed path).
    pub rank: usize,
    pub mixed: bool,
    /// Thermal excess per quadrature of the shared covariance.
    pub nu: f64,
    pub k_std: f64,
    pub eps_out: f64,
    /// Fraction of the core captured by the truncated Fock expansion.
    pub captured_weight: f64,
}

/// Core decomposition of a single-mode state.
struct Core {
    s: SymplecticMatrix,
    nu: f64,
    /// `(ln coefficient, α, β)` of the full-form core.
    terms: Vec<(Complex64, Complex64, Complex64)>,
}

fn core_of(state: &LcogState) -> Result<Core> {
    if state.num_modes() != 1 {
        return Err(Error::InvalidArgument("rank reduction needs a single-mode state".into()));
    }
    if !state.covariances().is_shared() && state.covariances().num_groups() != 1 {
        return Err(Error::InvalidArgument("rank reduction needs a shared covariance".into()));
    }
    if state.tape().is_some() {
        return Err(Error::InvalidArgument("rank reduction does not propagate gradients".into()));
    }
    let sigma = state.covariance(0);
    let w = williamson(sigma)?;
    let nu = w.nu[0];
    let terms = core_terms(state, &w.s.inverse())?;
    Ok(Core { s: w.s, nu, terms })
}

/// Coherent outer-product terms of the normalized state after `S⁻¹`.
fn core_terms(state: &LcogState, sinv: &SymplecticMatrix) -> Result<Vec<(Complex64, Complex64, Complex64)>> {
    let si = sinv.matrix();
    let ln_norm = state.log_norm()?.re;
    Ok(state
        .expanded_terms()
        .into_iter()
        .map(|(c, mu, _)| {
            let core_mu = [mu[0] * si[(0, 0)] + mu[1] * si[(0, 1)], mu[0] * si[(1, 0)] + mu[1] * si[(1, 1)]];
            let (a, b, d) = gaussian_to_coherent_outer(core_mu);
            (c - ln_norm - d, a, b)
        })
        .collect())
}

/// Overlap `Tr[ρ_a ρ_b]` of two single-mode states sharing one pure
/// Gaussian covariance, such as a state and its [`rank_reduce`] output.
///
/// Both cores are taken through the same `S⁻¹` and compared in the Fock
/// basis, where each matrix element carries only its own state's
/// cancellation; the pairwise Gaussian sum of
/// [`overlap`](crate::characterize::overlap) squares it instead. The cutoff
/// defaults to twelve standard deviations of the wider core photon
/// distribution plus ten.
pub fn core_overlap(a: &LcogState, b: &LcogState, cutoff: Option<usize>) -> Result<f64> {
    let ca = core_of(a)?;
    let cb = core_of(b)?;
    let (sa, sb) = (a.covariance(0), b.covariance(0));
    if (sa - sb).amax() > 1e-9 * sa.amax() {
        return Err(Error::InvalidArgument("core overlap needs a common covariance".into()));
    }
    if ca.nu > 1e-8 {
        return Err(Error::InvalidArgument(format!("core overlap needs a pure covariance, thermal excess {:.3e}", ca.nu)));
    }
    let sinv = ca.s.inverse();
    let tb = core_terms(b, &sinv)?;
    let cb = Core { s: ca.s.clone(), nu: cb.nu, terms: tb };
    let cutoff = match cutoff {
        Some(c) => c,
        None => chebyshev_cutoff(&ca, 12.0)?.max(chebyshev_cutoff(&cb, 12.0)?) + 10,
    };
    let ra = coherent_to_fock_hermitian(&ca.terms, cutoff)?;
    let rb = coherent_to_fock_hermitian(&cb.terms, cutoff)?;
    // Tr[AB] = Σ A_mn B_nm = Σ A_mn conj(B_mn) for Hermitian B
    Ok(ra.iter().zip(rb.iter()).map(|(x, y)| (x * y.conj()).re).sum())
}

/// Minimal-size coherent-ring representation of a single-mode state.
///
/// Pure cores (`ν ≤ pure_tolerance`) are rebuilt from the Fock amplitudes of
/// the column with the largest diagonal element, giving `(r+1)²` full-form
/// terms. Mixed cores have `ν` removed, are truncated at
/// `r' = ⌈μ_n + k σ_n⌉`, converted to the Fock basis and back onto a ring
/// of `r'+1` points, and get `ν` and the Gaussian unitary restored.
pub fn rank_reduce(state: &LcogState, opts: &ReduceOptions) -> Result<ReduceOutcome> {
    if let Some(e) = opts.eps_out {
        if !(e > 0.0) {
            return Err(Error::InvalidArgument(format!("eps_out must be positive, got {e}")));
        }
    }
    if !(opts.k_std >= 1.0) {
        return Err(Error::InvalidArgument(format!("k_std must be >= 1, got {}", opts.k_std)));
    }
    let core = core_of(state)?;
    if core.nu <= opts.pure_tolerance {
        reduce_pure(state, &core, opts)
    } else {
        reduce_mixed(state, &core, opts)
    }
}

fn reduce_pure(state: &LcogState, core: &Core, opts: &ReduceOptions) -> Result<ReduceOutcome> {
    let rank = match opts.rank {
        Some(r) => r,
        None => estimate_rank(core)?,
    };
    let diag: Vec<f64> = (0..=rank)
        .into_par_iter()
        .map(|n| fock_cell(&core.terms, n, n).map(|v| v.re))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..=rank).collect();
    order.sort_by(|&a, &b| diag[b].total_cmp(&diag[a]));
    let total: f64 = diag.iter().map(|d| d.max(0.0)).sum();
    let mut amps = None;
    for &p in order.iter().take(2) {
        let rpp = diag[p];
        if !(rpp > 1e-14 * total.max(1e-300)) {
            continue;
        }
        let col: Vec<Complex64> = (0..=rank)
            .into_par_iter()
            .map(|n| fock_cell(&core.terms, n, p))
            .collect::<Result<_>>()?;
        let c: Vec<Complex64> = col.iter().map(|v| v / rpp.sqrt()).collect();
        if c.iter().all(|z| z.is_finite()) {
            amps = Some(c);
            break;
        }
    }
    let mut amps = amps.ok_or_else(|| Error::ReductionFailed("no usable pivot in the Fock diagonal".into()))?;
    let captured: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
    let scale = captured.sqrt();
    for a in &mut amps {
        *a /= scale;
    }
    if captured < 1.0 - 1e-4 {
        log::warn!("truncated core holds only {captured:.6} of the state; the core may be displaced");
    }
    let mags: Vec<f64> = amps.iter().map(|z| z.norm()).collect();
    let eps = match opts.eps_out {
        Some(e) => e,
        None => radius_for_infidelity(&mags, REBUILD_INFIDELITY)?,
    };
    let (coeffs, alphas) = ring_superposition(&amps, eps)?;
    let ln_c: Vec<Complex64> = coeffs.iter().map(|&c| ln_complex(c)).collect();
    let out = LcogState::from_outer_products(rank + 1, state.is_reduced(), |i, j| {
        let (mu, d) = coherent_outer(alphas[i], alphas[j]);
        (ln_c[i] + ln_c[j].conj() + d, mu)
    })?;
    let out = finish(out, core, 0.0)?;
    Ok(ReduceOutcome { state: out, rank, mixed: false, nu: core.nu, k_std: opts.k_std, eps_out: eps, captured_weight: captured })
}

fn estimate_rank(core: &Core) -> Result<usize> {
    let cutoff = chebyshev_cutoff(core, 6.0)?;
    let diag: Vec<f64> = (0..=cutoff)
        .into_par_iter()
        .map(|n| fock_cell(&core.terms, n, n).map(|v| v.re))
        .collect::<Result<_>>()?;
    let max = diag.iter().cloned().fold(0.0, f64::max);
    Ok(diag.iter().rposition(|&d| d > 1e-6 * max).unwrap_or(0))
}

/// `⌈μ_n + k σ_n⌉` for the core with unit covariance; the variance used is
/// the larger of the exact and the weighted estimate.
fn chebyshev_cutoff(core: &Core, k_std: f64) -> Result<usize> {
    let n = core.terms.len();
    let mut lw = Vec::with_capacity(n);
    let mut means = Vec::with_capacity(2 * n);
    for &(w, a, b) in &core.terms {
        let (mu, d) = coherent_outer(a, b);
        lw.push(w + d);
        means.extend_from_slice(&mu);
    }
    let st = LcogState::from_parts(1, lw, means, Covariances::shared(DMatrix::identity(2, 2) * (HBAR / 2.0)), None)?;
    let m = photon_moments(&st)?;
    let var = m.variance.max(m.weighted_variance).max(0.0);
    Ok((m.mean.max(0.0) + k_std * var.sqrt()).ceil() as usize)
}

fn reduce_mixed(state: &LcogState, core: &Core, opts: &ReduceOptions) -> Result<ReduceOutcome> {
    let cutoff = chebyshev_cutoff(core, opts.k_std)?;
    let rho = coherent_to_fock_hermitian(&core.terms, cutoff)?;
    let trace: f64 = (0..=cutoff).map(|m| rho[(m, m)].re).sum();
    let mags: Vec<f64> = (0..=cutoff).map(|m| rho[(m, m)].re.abs().sqrt()).collect();
    let eps = match opts.eps_out {
        Some(e) => e,
        None => radius_for_infidelity(&mags, REBUILD_INFIDELITY)?,
    };
    // ring coefficients of each |m⟩: column m of `ring`
    let dim = cutoff + 1;
    let mut ring = DMatrix::from_element(dim, dim, C0);
    let mut alphas = Vec::new();
    for m in 0..dim {
        let mut a = vec![C0; dim];
        a[m] = Complex64::new(1.0, 0.0);
        let (c, al) = ring_superposition(&a, eps)?;
        for k in 0..dim {
            ring[(k, m)] = c[k];
        }
        alphas = al;
    }
    let coeffs = &ring * &rho * ring.adjoint();
    let out = LcogState::from_outer_products(dim, state.is_reduced(), |i, j| {
        let (mu, d) = coherent_outer(alphas[i], alphas[j]);
        let c = coeffs[(i, j)];
        let c = if i == j { Complex64::new(c.re, 0.0) } else { c };
        (ln_complex(c) + d, mu)
    })?;
    let out = finish(out, core, core.nu)?;
    Ok(ReduceOutcome {
        state: out,
        rank: cutoff,
        mixed: true,
        nu: core.nu,
        k_std: opts.k_std,
        eps_out: eps,
        captured_weight: trace,
    })
}

/// Restore thermal excess and the Gaussian unitary, then normalize.
fn finish(mut out: LcogState, core: &Core, nu: f64) -> Result<LcogState> {
    if nu > 0.0 {
        let ch = crate::phase_space::GaussianChannel::random_displacement(nu, 1)?;
        out.apply_channel(&ch, &[0])?;
    }
    out.apply_symplectic(&core.s, None, &[0])?;
    out.normalize()?;
    Ok(out)
}
