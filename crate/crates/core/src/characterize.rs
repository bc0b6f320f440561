//! Figures of merit: overlap, characteristic function, effective squeezing,
//! GKP nonlinear squeezing, Wigner grids and photon-number moments.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::lcog_state::{GaussianFactor, LcogState};
use crate::numeric::{neumaier_sum, ExpSum};
use crate::phase_space::{omega, HBAR};

/// Stabilizer amplitude of the qunaught lattice, `|α_q| = √π`.
///
/// The corresponding displacement moves a quadrature by `2√π = √(2πℏ)`,
/// the qunaught grid spacing.
pub const QUNAUGHT_AMPLITUDE: f64 = 1.772_453_850_905_516;

/// `-10 log10(Δ²)`
pub fn delta_to_db(delta: f64) -> f64 {
    -10.0 * (delta * delta).log10()
}

pub fn db_to_delta(db: f64) -> f64 {
    10f64.powf(-db / 20.0)
}

/// Symmetric effective squeezing `Δ_s = √(½(Δ_x² + Δ_p²))`.
pub fn symmetric_delta(dx: f64, dp: f64) -> f64 {
    (0.5 * (dx * dx + dp * dp)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    X,
    P,
}

/// Overlap `Tr[ρ_a ρ_b] = (2πℏ)^N ∫ W_a W_b` of two states.
///
/// Both states are normalized internally. Values above `1 + 1e-9` signal lost
/// precision and raise a stability error.
pub fn overlap(a: &LcogState, b: &LcogState) -> Result<f64> {
    let v = overlap_unchecked(a, b)?;
    if v > 1.0 + 1e-9 {
        return Err(Error::NumericalStability(format!("overlap {v} exceeds one")));
    }
    Ok(v)
}

/// Purity `Tr[ρ²]`.
pub fn purity(state: &LcogState) -> Result<f64> {
    overlap(state, state)
}

/// Overlap normalized by the purities, `Tr[ρσ]/√(Tr ρ² Tr σ²)`, which is one
/// exactly when the two density operators coincide.
pub fn normalized_overlap(a: &LcogState, b: &LcogState) -> Result<f64> {
    let ab = overlap_unchecked(a, b)?;
    let aa = overlap_unchecked(a, a)?;
    let bb = overlap_unchecked(b, b)?;
    Ok(ab / (aa * bb).sqrt())
}

/// Single-mode overlap `Tr[ρ_a ρ_b]` by quadrature of `W_a W_b` on a grid.
///
/// [`overlap`] sums over pairs of terms, so its condition number is roughly
/// the product of the two states' own; large heralded states overflow the
/// stability budget there. Here each Wigner value carries only its own
/// state's cancellation. The grid is aligned with the eigenvectors of the
/// first term's covariance, spaced at half its width along each axis (the
/// trapezoid rule on Gaussians is then accurate far below 1e-9) and spans ten
/// standard deviations of either state's second moments. Both Wigner
/// functions are renormalized by their grid integrals.
pub fn overlap_by_quadrature(a: &LcogState, b: &LcogState) -> Result<f64> {
    const MAX_POINTS: usize = 4_000_000;
    if a.num_modes() != 1 || b.num_modes() != 1 {
        return Err(Error::InvalidArgument("quadrature overlap needs single-mode states".into()));
    }
    let eig = a.covariance(0).clone().symmetric_eigen();
    let axes = eig.eigenvectors;
    let mut half = [0.0f64; 2];
    let mut step = [f64::INFINITY; 2];
    for s in [a, b] {
        let m = second_moments(s)?;
        for i in 0..2 {
            let v = axes.column(i);
            half[i] = half[i].max(10.0 * (v.dot(&(&m * v))).max(0.0).sqrt());
            for j in 0..s.num_weights() {
                step[i] = step[i].min(0.5 * v.dot(&(s.covariance(j) * v)).sqrt());
            }
        }
    }
    let n: Vec<usize> = (0..2).map(|i| (2.0 * half[i] / step[i]).ceil() as usize + 1).collect();
    if n[0] * n[1] > MAX_POINTS {
        return Err(Error::InvalidArgument(format!("quadrature grid would need {}×{} points", n[0], n[1])));
    }
    let h: Vec<f64> = (0..2).map(|i| 2.0 * half[i] / (n[i] - 1) as f64).collect();
    let points: Vec<Vec<f64>> = (0..n[0])
        .flat_map(|i| (0..n[1]).map(move |j| (i, j)))
        .map(|(i, j)| {
            let u = -half[0] + i as f64 * h[0];
            let w = -half[1] + j as f64 * h[1];
            let q = axes.column(0) * u + axes.column(1) * w;
            vec![q[0], q[1]]
        })
        .collect();
    let wa = a.wigner_many(&points)?;
    let wb = b.wigner_many(&points)?;
    let da = h[0] * h[1];
    let za = neumaier_sum(wa.iter().map(|w| w * da));
    let zb = neumaier_sum(wb.iter().map(|w| w * da));
    let ab = neumaier_sum(wa.iter().zip(&wb).map(|(x, y)| x * y * da));
    Ok(2.0 * std::f64::consts::PI * HBAR * ab / (za * zb))
}

/// `⟨q qᵀ⟩` of a single-mode state about the origin.
fn second_moments(state: &LcogState) -> Result<DMatrix<f64>> {
    let norm = state.norm_sum()?;
    let mut acc = [Vec::new(), Vec::new(), Vec::new()];
    for j in 0..state.num_weights() {
        let e = (state.log_weights()[j] - norm.shift).exp() * state.multiplicity(j);
        let (s, mu) = (state.covariance(j), state.mean(j));
        acc[0].push((e * (s[(0, 0)] + mu[0] * mu[0])).re);
        acc[1].push((e * (s[(0, 1)] + mu[0] * mu[1])).re);
        acc[2].push((e * (s[(1, 1)] + mu[1] * mu[1])).re);
    }
    let z = norm.sum.re;
    let [xx, xp, pp] = acc.map(|v| neumaier_sum(v) / z);
    Ok(DMatrix::from_row_slice(2, 2, &[xx, xp, xp, pp]))
}

fn overlap_unchecked(a: &LcogState, b: &LcogState) -> Result<f64> {
    if a.num_modes() != b.num_modes() {
        return Err(Error::InvalidArgument("overlap of states with different mode counts".into()));
    }
    let n2 = 2 * a.num_modes();
    let ln_na = a.log_norm()?.re;
    let ln_nb = b.log_norm()?.re;
    let tgt = b.expanded_terms();
    let gb = b.covariances().groups();
    let factors = a
        .covariances()
        .groups()
        .iter()
        .flat_map(|sa| gb.iter().map(move |sb| sa + sb))
        .map(|m| {
            GaussianFactor::new(&m).map_err(|_| Error::Singular { context: "overlap covariance sum".into() })
        })
        .collect::<Result<Vec<_>>>()?;
    let ln_hbar = a.num_modes() as f64 * (2.0 * std::f64::consts::PI * HBAR).ln();
    let terms: Vec<(Complex64, f64)> = (0..a.num_weights())
        .into_par_iter()
        .flat_map_iter(|k| {
            let g = a.covariances().group_of(k);
            let mu = a.mean(k);
            let ck = a.log_weights()[k] - ln_na;
            let m = a.multiplicity(k);
            tgt.iter()
                .map(|(cl, nu, gl)| {
                    let f = &factors[g * gb.len() + gl];
                    let delta: Vec<Complex64> = (0..n2).map(|i| mu[i] - nu[i]).collect();
                    let zero = vec![0.0; n2];
                    // log_density(0, Δ) = -½ΔᵀA⁻¹Δ - ½ ln det 2πA
                    let lg = f.log_density(&zero, &delta);
                    (ck + cl - ln_nb + lg + ln_hbar, m)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let sum = ExpSum::new(terms)?;
    let value = sum.sum * sum.shift.exp();
    if !a.is_reduced() && value.im.abs() > 1e-9 * (sum.magnitude * sum.shift.exp()).max(1.0) {
        return Err(Error::NumericalStability(format!("overlap has imaginary residue {:.3e}", value.im)));
    }
    if sum.condition_re() > crate::numeric::MAX_CONDITION {
        return Err(Error::NumericalStability(format!(
            "overlap lost to cancellation (condition number {:.3e})",
            sum.condition_re()
        )));
    }
    Ok(value.re)
}

/// Characteristic function `χ(α) = Tr[ρ D(α)]` of the normalized state, with
/// `α` the vectorized displacement `(Re α₁, Im α₁, …)`.
pub fn char_fun(state: &LcogState, alpha: &[f64]) -> Result<Complex64> {
    let n2 = 2 * state.num_modes();
    if alpha.len() != n2 {
        return Err(Error::InvalidArgument(format!("displacement needs {n2} entries")));
    }
    let om = omega(state.num_modes());
    let a = DVector::from_column_slice(alpha);
    let oa = &om * &a;
    let ota = om.transpose() * &a;
    let quad: Vec<f64> = state.covariances().groups().iter().map(|s| (ota.transpose() * s * &ota)[(0, 0)]).collect();
    let ln_norm = state.log_norm()?.re;
    let mut exps = Vec::with_capacity(state.full_form_count());
    for j in 0..state.num_weights() {
        let mu = state.mean(j);
        let lin: Complex64 = (0..n2).map(|i| mu[i] * oa[i]).sum();
        let g = state.covariances().group_of(j);
        let c = state.log_weights()[j];
        exps.push((c - ln_norm + Complex64::i() * lin - 0.5 * quad[g], 1.0));
        if state.is_reduced() && j >= state.num_k() {
            let lin_c: Complex64 = (0..n2).map(|i| mu[i].conj() * oa[i]).sum();
            exps.push((c.conj() - ln_norm + Complex64::i() * lin_c - 0.5 * quad[g], 1.0));
        }
    }
    let sum = ExpSum::new(exps)?;
    Ok(sum.sum * sum.shift.exp())
}

/// Displacement vector of the stabilizer used for `Δ_q`: a `p` displacement
/// for `Δ_x` and an `x` displacement for `Δ_p`.
pub fn stabilizer_displacement(quadrature: Quadrature, amplitude: f64) -> Vec<f64> {
    match quadrature {
        Quadrature::X => vec![0.0, amplitude],
        Quadrature::P => vec![amplitude, 0.0],
    }
}

pub(crate) fn delta_from_chi(chi: Complex64, amplitude: f64) -> Result<f64> {
    let m = chi.norm();
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::DegenerateState("stabilizer expectation vanishes; effective squeezing undefined".into()));
    }
    let d2 = -2.0 / (amplitude * amplitude) * m.ln();
    if d2 <= 0.0 {
        return Err(Error::NumericalStability(format!("|χ| = {m} exceeds one")));
    }
    Ok(d2.sqrt())
}

/// Effective squeezing `(Δ_q, Δ_q in dB)` of a single-mode state at the
/// given stabilizer amplitude (use [`QUNAUGHT_AMPLITUDE`] for the qunaught grid).
pub fn effective_squeezing(state: &LcogState, quadrature: Quadrature, amplitude: f64) -> Result<(f64, f64)> {
    if state.num_modes() != 1 {
        return Err(Error::InvalidArgument("effective squeezing needs a single-mode state".into()));
    }
    let chi = char_fun(state, &stabilizer_displacement(quadrature, amplitude))?;
    let d = delta_from_chi(chi, amplitude)?;
    Ok((d, delta_to_db(d)))
}

/// `Δ_x`, `Δ_p` and `Δ_s` in dB on the qunaught lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingSummary {
    pub delta_x_db: f64,
    pub delta_p_db: f64,
    pub delta_s_db: f64,
}

pub fn squeezing_summary(state: &LcogState) -> Result<SqueezingSummary> {
    let (dx, dx_db) = effective_squeezing(state, Quadrature::X, QUNAUGHT_AMPLITUDE)?;
    let (dp, dp_db) = effective_squeezing(state, Quadrature::P, QUNAUGHT_AMPLITUDE)?;
    Ok(SqueezingSummary { delta_x_db: dx_db, delta_p_db: dp_db, delta_s_db: delta_to_db(symmetric_delta(dx, dp)) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GkpLattice {
    /// Square lattice, logical qubit in the computational basis.
    SquareLogical,
    /// Symmetric lattice with a one-dimensional code space.
    Qunaught,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GkpOperatorSpec {
    pub lattice: GkpLattice,
    /// Logical index `j ∈ {0, 1}`.
    pub logical: u8,
}

impl GkpOperatorSpec {
    /// The displacements `(±a, ±ib)` of `Q̂` as `(full-grid, half-grid)` vectors.
    pub fn displacements(&self) -> ([f64; 2], [f64; 2]) {
        let alpha = (2.0 * std::f64::consts::PI).sqrt();
        match self.lattice {
            GkpLattice::SquareLogical => ([alpha, 0.0], [0.0, alpha / 2.0]),
            GkpLattice::Qunaught => {
                let s = alpha / std::f64::consts::SQRT_2;
                ([s, 0.0], [0.0, s])
            }
        }
    }
}

/// GKP nonlinear squeezing `ξ = ½⟨Q̂⟩` with
/// `Q̂ = 4 − D(a) − D(−a) − (−1)^j (D(ib) + D(−ib))`; returns `(ξ, −10 log10 ξ)`.
pub fn gkp_nonlinear_squeezing(state: &LcogState, spec: &GkpOperatorSpec) -> Result<(f64, f64)> {
    if state.num_modes() != 1 {
        return Err(Error::InvalidArgument("nonlinear squeezing needs a single-mode state".into()));
    }
    if spec.logical > 1 {
        return Err(Error::InvalidArgument("logical index must be 0 or 1".into()));
    }
    let (full, half) = spec.displacements();
    let sign = if spec.logical == 0 { 1.0 } else { -1.0 };
    let mut q = 4.0;
    for (v, s) in [(full, 1.0), (half, sign)] {
        let plus = char_fun(state, &v)?;
        let minus = char_fun(state, &[-v[0], -v[1]])?;
        q -= s * (plus + minus).re;
    }
    let xi = 0.5 * q;
    Ok((xi, -10.0 * xi.log10()))
}

/// Wigner function at each point.
pub fn wigner_grid(state: &LcogState, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    state.wigner_many(points)
}

/// Rectangular single-mode grid description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub np: usize,
}

impl Grid {
    pub fn points(&self) -> Vec<Vec<f64>> {
        let axis = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            if n == 1 {
                vec![lo]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        };
        let xs = axis(self.x_min, self.x_max, self.nx);
        let ps = axis(self.p_min, self.p_max, self.np);
        xs.iter().flat_map(|&x| ps.iter().map(move |&p| vec![x, p])).collect()
    }

    pub fn cell_area(&self) -> f64 {
        let dx = if self.nx > 1 { (self.x_max - self.x_min) / (self.nx - 1) as f64 } else { 1.0 };
        let dp = if self.np > 1 { (self.p_max - self.p_min) / (self.np - 1) as f64 } else { 1.0 };
        dx * dp
    }
}

/// Write `x,p,W` rows at 17 significant digits.
pub fn write_wigner_csv<W: Write>(mut out: W, points: &[Vec<f64>], values: &[f64]) -> std::io::Result<()> {
    writeln!(out, "x,p,W")?;
    for (q, w) in points.iter().zip(values) {
        writeln!(out, "{:.16e},{:.16e},{:.16e}", q[0], q[1], w)?;
    }
    Ok(())
}

/// Photon-number statistics of a single-mode state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonMoments {
    pub mean: f64,
    /// Exact variance `⟨n²⟩ − ⟨n⟩²`.
    pub variance: f64,
    /// Weighted sum of per-Gaussian variances. For coherent-decomposition
    /// Fock states this reports `≈ n` instead of zero, so it is only an
    /// estimate of the spread.
    pub weighted_variance: f64,
}

fn gaussian_moments(sigma: &DMatrix<f64>, mu: &[Complex64]) -> (Complex64, Complex64) {
    let tr = sigma.trace();
    let det = sigma.determinant();
    let mm = mu[0] * mu[0] + mu[1] * mu[1];
    let msm = mu[0] * (mu[0] * sigma[(0, 0)] + mu[1] * sigma[(0, 1)]) + mu[1] * (mu[0] * sigma[(1, 0)] + mu[1] * sigma[(1, 1)]);
    let h = HBAR;
    let mean = (mm + tr) / (2.0 * h) - 0.5;
    let var = (tr * tr - 2.0 * det + 2.0 * msm) / (2.0 * h * h) - 0.25;
    (mean, var)
}

/// Photon-number mean and variance.
pub fn photon_moments(state: &LcogState) -> Result<PhotonMoments> {
    if state.num_modes() != 1 {
        return Err(Error::InvalidArgument("photon moments need a single-mode state".into()));
    }
    let norm = state.norm_sum()?;
    let mut m1 = Vec::new();
    let mut m2 = Vec::new();
    let mut vw = Vec::new();
    for j in 0..state.num_weights() {
        let e = (state.log_weights()[j] - norm.shift).exp() * state.multiplicity(j);
        let (mean, var) = gaussian_moments(state.covariance(j), state.mean(j));
        m1.push((e * mean).re);
        m2.push((e * (var + mean * mean)).re);
        vw.push((e * var).re);
    }
    let z = norm.sum.re;
    let mean = neumaier_sum(m1) / z;
    let second = neumaier_sum(m2) / z;
    Ok(PhotonMoments { mean, variance: second - mean * mean, weighted_variance: neumaier_sum(vw) / z })
}
