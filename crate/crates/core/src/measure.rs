//! Partial measurements: LCoG-POVM post-selection, homodyne conditioning and
//! sequential heralding.
//!
//! Measuring mode `B` of a term `e^{c} G_{μ,σ}` with a POVM term
//! `e^{d} G_{ν,ω}` leaves the remaining modes `A` in
//!
//! ```text
//! A  = σ_B + ω          K  = σ_AB A⁻¹
//! σ' = σ_A − K σ_ABᵀ     μ' = μ_A + K (ν − μ_B)
//! c' = c + d − ½ ΔᵀA⁻¹Δ − ½ ln det(2πA) + ln(2πℏ),   Δ = ν − μ_B
//! ```
//!
//! (bilinear forms, no conjugation). An identity component of the POVM is a
//! partial trace: the term keeps `μ_A`, `σ_A` and `c + d`.
//!
//! Outcome probabilities are `Tr[ρ Π]`. For generaldyne projectors this is a
//! density per `d²α`·π; divide by `2πℏ` (see [`generaldyne_log_density`]) for
//! the density per `d²m` of the outcome mean `m`.

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grad::GradientTape;
use crate::lcog_state::{symmetrize, Covariances, LcogState};
use crate::numeric::{neumaier_sum, ExpSum};
use crate::phase_space::{rotation_symplectic, HBAR};
use crate::povm::{self, Povm};

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Result of a post-selection: the normalized conditional state and `ln p`.
#[derive(Debug, Clone)]
pub struct Selection {
    pub state: LcogState,
    pub log_prob: f64,
}

struct Partition {
    a: Vec<usize>,
    b: [usize; 2],
}

impl Partition {
    fn new(num_modes: usize, mode: usize) -> Result<Self> {
        if mode >= num_modes {
            return Err(Error::ModeOutOfRange { index: mode, modes: num_modes });
        }
        let a = (0..2 * num_modes).filter(|&i| i / 2 != mode).collect();
        Ok(Self { a, b: [2 * mode, 2 * mode + 1] })
    }
}

/// Cached conditioning data for one (state group, POVM covariance class).
struct PairFactor {
    identity: bool,
    ainv: Matrix2<f64>,
    k: DMatrix<f64>,
    log_det_2pi: f64,
    out_group: usize,
    /// Per parameter: `∂K`, `A⁻¹∂σ_B A⁻¹`, `Tr(A⁻¹∂σ_B)`.
    dk: Vec<DMatrix<f64>>,
    m: Vec<Matrix2<f64>>,
    tr: Vec<f64>,
}

fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn to2(m: &DMatrix<f64>) -> Matrix2<f64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

fn from2(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}

/// Output term `(state term, POVM term, conjugate POVM term)`.
type Pair = (u32, u32, bool);

fn pair_list(state: &LcogState, povm: &Povm) -> (Vec<Pair>, usize) {
    let (nw, np) = (state.num_weights() as u32, povm.num_terms() as u32);
    let mut pairs = Vec::new();
    if !state.is_reduced() {
        for a in 0..nw {
            for b in 0..np {
                pairs.push((a, b, false));
            }
        }
        let n = pairs.len();
        return (pairs, n);
    }
    let (k1, k2) = (state.num_k() as u32, povm.num_k() as u32);
    for a in 0..k1 {
        for b in 0..k2 {
            pairs.push((a, b, false));
        }
    }
    let num_k = pairs.len();
    for a in 0..k1 {
        for b in k2..np {
            pairs.push((a, b, false));
        }
    }
    for a in k1..nw {
        for b in 0..np {
            pairs.push((a, b, false));
        }
        for b in k2..np {
            pairs.push((a, b, true));
        }
    }
    (pairs, num_k)
}

/// Post-select `mode` of `state` on `povm`; returns the normalized conditional
/// state over the remaining modes and `ln Tr[ρΠ]`.
///
/// Fails with a degenerate-state error when the outcome has zero probability
/// and with a stability error when cancellation or an out-of-range
/// probability shows that precision was lost.
pub fn post_select(state: &LcogState, mode: usize, povm: &Povm) -> Result<Selection> {
    let (state, log_prob) = post_select_raw(state, mode, povm)?;
    if log_prob == f64::NEG_INFINITY {
        return Err(Error::DegenerateState("outcome has zero probability".into()));
    }
    Ok(Selection { state, log_prob })
}

/// `Tr[ρΠ]` on `mode`, which may be the last remaining mode. Zero
/// probabilities (within rounding) are returned as `0`.
pub fn outcome_probability(state: &LcogState, mode: usize, povm: &Povm) -> Result<f64> {
    Ok(post_select_raw(state, mode, povm)?.1.exp())
}

fn post_select_raw(state: &LcogState, mode: usize, povm: &Povm) -> Result<(LcogState, f64)> {
    let part = Partition::new(state.num_modes(), mode)?;
    let full_state;
    let full_povm;
    let (state, povm) = match (state.is_reduced(), povm.is_reduced()) {
        (true, false) => {
            full_state = state.to_full_form()?;
            (&full_state, povm)
        }
        (false, true) => {
            full_povm = povm.to_full_form();
            (state, &full_povm)
        }
        _ => (state, povm),
    };
    if let Some(t) = state.tape() {
        if !t.matches(state) {
            return Err(Error::InvalidArgument("gradient tape does not match its state".into()));
        }
    }
    let tape = state.tape();
    let ng = tape.map_or(0, |t| t.num_params());
    let sa = part.a.len();
    let (pairs, num_k) = pair_list(state, povm);

    // conditioning factors per (state group, POVM class)
    let mut factor_ix: HashMap<(usize, Option<usize>), usize> = HashMap::new();
    let mut factors: Vec<PairFactor> = Vec::new();
    let mut out_covs: Vec<DMatrix<f64>> = Vec::new();
    let mut out_dcovs: Vec<Vec<DMatrix<f64>>> = Vec::new();
    let mut group_ix: Vec<u32> = Vec::with_capacity(pairs.len());
    for &(a, b, _) in &pairs {
        let key = (state.covariances().group_of(a as usize), povm.cov_of[b as usize]);
        let f = match factor_ix.get(&key) {
            Some(&f) => f,
            None => {
                let (factor, cov, dcov) = build_factor(state, tape, &part, key.0, key.1.map(|c| &povm.covs[c]), ng)?;
                out_covs.push(cov);
                out_dcovs.push(dcov);
                factors.push(PairFactor { out_group: out_covs.len() - 1, ..factor });
                factor_ix.insert(key, factors.len() - 1);
                factors.len() - 1
            }
        };
        group_ix.push(factors[f].out_group as u32);
    }
    let factor_of: Vec<usize> = pairs
        .iter()
        .map(|&(a, b, _)| factor_ix[&(state.covariances().group_of(a as usize), povm.cov_of[b as usize])])
        .collect();

    let ln_hbar = (2.0 * PI * HBAR).ln();
    let n_out = pairs.len();
    let mut weights = vec![C0; n_out];
    // one placeholder slot per term when no mode is left keeps the zips aligned
    let mut means = vec![C0; n_out * sa.max(1)];
    let pair_data = |i: usize| {
        let (a, b, conj) = pairs[i];
        let f = &factors[factor_of[i]];
        let mu = state.mean(a as usize);
        let nu = povm.mean(b as usize);
        let nu = if conj { [nu[0].conj(), nu[1].conj()] } else { nu };
        let d = povm.log_weights()[b as usize];
        let d = if conj { d.conj() } else { d };
        let delta = [nu[0] - mu[part.b[0]], nu[1] - mu[part.b[1]]];
        (a as usize, f, mu, d, delta)
    };
    weights
        .par_iter_mut()
        .zip(means.par_chunks_mut(sa.max(1)))
        .enumerate()
        .for_each(|(i, (w, m))| {
            let (a, f, mu, d, delta) = pair_data(i);
            let c = state.log_weights()[a] + d;
            if f.identity {
                *w = c;
                for (j, &ia) in part.a.iter().enumerate() {
                    m[j] = mu[ia];
                }
                return;
            }
            let ad = [
                f.ainv[(0, 0)] * delta[0] + f.ainv[(0, 1)] * delta[1],
                f.ainv[(1, 0)] * delta[0] + f.ainv[(1, 1)] * delta[1],
            ];
            let quad = delta[0] * ad[0] + delta[1] * ad[1];
            *w = c - 0.5 * quad - 0.5 * f.log_det_2pi + ln_hbar;
            for (j, &ia) in part.a.iter().enumerate() {
                m[j] = mu[ia] + f.k[(j, 0)] * delta[0] + f.k[(j, 1)] * delta[1];
            }
        });
    if sa == 0 {
        means.clear();
    }

    // ln p over the full form
    let terms: Vec<(Complex64, f64)> = weights
        .iter()
        .enumerate()
        .flat_map(|(i, &w)| {
            let conj = (state.is_reduced() && i >= num_k).then_some((w.conj(), 1.0));
            std::iter::once((w, 1.0)).chain(conj)
        })
        .collect();
    let sum = ExpSum::new(terms)?;
    let log_prob = sum.ln_re_positive("outcome probability")?;
    if log_prob > 1e-9 {
        return Err(Error::NumericalStability(format!("outcome probability {} exceeds one", log_prob.exp())));
    }

    let mut out_tape = None;
    if let Some(t) = tape {
        let mut nt = GradientTape::zeros(ng, n_out, state.num_modes() - 1, out_covs.len());
        nt.d_log_prob = t.d_log_prob.clone();
        let mut d_means = vec![C0; n_out * (ng * sa).max(1)];
        nt.d_log_weights
            .par_chunks_mut(ng.max(1))
            .zip(d_means.par_chunks_mut((ng * sa).max(1)))
            .enumerate()
            .for_each(|(i, (dw, dm))| {
                let (a, f, _, _, delta) = pair_data(i);
                for p in 0..ng {
                    let dmu = t.d_mean(a, p);
                    let block = &mut dm[p * sa..(p + 1) * sa];
                    if f.identity {
                        dw[p] = t.d_log_weight(a, p);
                        for (j, &ia) in part.a.iter().enumerate() {
                            block[j] = dmu[ia];
                        }
                        continue;
                    }
                    let dmb = [dmu[part.b[0]], dmu[part.b[1]]];
                    let ad = [
                        f.ainv[(0, 0)] * delta[0] + f.ainv[(0, 1)] * delta[1],
                        f.ainv[(1, 0)] * delta[0] + f.ainv[(1, 1)] * delta[1],
                    ];
                    let mm = &f.m[p];
                    let quad_m = delta[0] * (mm[(0, 0)] * delta[0] + mm[(0, 1)] * delta[1])
                        + delta[1] * (mm[(1, 0)] * delta[0] + mm[(1, 1)] * delta[1]);
                    let dgamma = dmb[0] * ad[0] + dmb[1] * ad[1] + 0.5 * quad_m - 0.5 * f.tr[p];
                    dw[p] = t.d_log_weight(a, p) + dgamma;
                    let dk = &f.dk[p];
                    for (j, &ia) in part.a.iter().enumerate() {
                        block[j] = dmu[ia] + dk[(j, 0)] * delta[0] + dk[(j, 1)] * delta[1]
                            - (f.k[(j, 0)] * dmb[0] + f.k[(j, 1)] * dmb[1]);
                    }
                }
            });
        if sa > 0 {
            nt.d_means = d_means;
        }
        for (g, dc) in out_dcovs.into_iter().enumerate() {
            for (p, m) in dc.into_iter().enumerate() {
                nt.d_covs[g * ng + p] = m;
            }
        }
        // ∂ ln p = Re Σ e^{w} ∂w / Σ e^{w}
        let mut dlp = vec![0.0; ng];
        for (p, v) in dlp.iter_mut().enumerate() {
            let parts = (0..n_out).map(|i| {
                let mult = if state.is_reduced() && i >= num_k { 2.0 } else { 1.0 };
                mult * ((weights[i] - sum.shift).exp() * nt.d_log_weights[i * ng + p]).re
            });
            *v = neumaier_sum(parts.collect::<Vec<_>>()) / sum.sum.re;
        }
        for i in 0..n_out {
            for p in 0..ng {
                nt.d_log_weights[i * ng + p] -= dlp[p];
            }
        }
        for p in 0..ng {
            nt.d_log_prob[p] += dlp[p];
        }
        out_tape = Some(nt);
    }

    if log_prob != f64::NEG_INFINITY {
        for w in &mut weights {
            *w = crate::numeric::wrap_phase(*w - log_prob);
        }
    }
    let covs = if out_covs.len() == 1 {
        Covariances::shared(out_covs.pop().unwrap())
    } else {
        Covariances::grouped(out_covs, group_ix)?
    };
    let mut out = LcogState {
        num_modes: state.num_modes() - 1,
        log_weights: weights,
        means,
        covs,
        num_k: if state.is_reduced() { num_k } else { n_out },
        reduced: state.is_reduced(),
        tape: None,
    };
    out.set_tape(out_tape);
    Ok((out, log_prob))
}

fn build_factor(
    state: &LcogState,
    tape: Option<&GradientTape>,
    part: &Partition,
    group: usize,
    omega: Option<&Matrix2<f64>>,
    ng: usize,
) -> Result<(PairFactor, DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let sigma = &state.covariances().groups()[group];
    let b = part.b.to_vec();
    let sig_a = sub(sigma, &part.a, &part.a);
    let dsig = |p: usize| tape.map(|t| t.d_cov(group, p));
    let Some(omega) = omega else {
        let dcov = (0..ng).map(|p| sub(dsig(p).unwrap(), &part.a, &part.a)).collect();
        let f = PairFactor {
            identity: true,
            ainv: Matrix2::zeros(),
            k: DMatrix::zeros(0, 0),
            log_det_2pi: 0.0,
            out_group: 0,
            dk: Vec::new(),
            m: Vec::new(),
            tr: Vec::new(),
        };
        return Ok((f, sig_a, dcov));
    };
    let sig_b = to2(&sub(sigma, &b, &b));
    let sig_ab = sub(sigma, &part.a, &b);
    let amat = sig_b + omega;
    let det = amat.determinant();
    let ainv = amat.try_inverse().filter(|_| det > 0.0).ok_or_else(|| Error::Singular {
        context: format!("sigma_B + omega for covariance group {group} (det {det:.3e})"),
    })?;
    let ainv_d = from2(&ainv);
    let k = &sig_ab * &ainv_d;
    let mut cov = &sig_a - &k * sig_ab.transpose();
    symmetrize(&mut cov);
    let log_det_2pi = (4.0 * PI * PI * det).ln();
    let (mut dk, mut m, mut tr, mut dcov) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for p in 0..ng {
        let ds = dsig(p).unwrap();
        let dsb = to2(&sub(ds, &b, &b));
        let dsab = sub(ds, &part.a, &b);
        let dkp = (&dsab - &k * from2(&dsb)) * &ainv_d;
        let mut dc = sub(ds, &part.a, &part.a) - &dkp * sig_ab.transpose() - &k * dsab.transpose();
        symmetrize(&mut dc);
        m.push(ainv * dsb * ainv);
        tr.push((ainv * dsb).trace());
        dk.push(dkp);
        dcov.push(dc);
    }
    Ok((PairFactor { identity: false, ainv, k, log_det_2pi, out_group: 0, dk, m, tr }, cov, dcov))
}

/// Convert `ln Tr[ρΠ]` of a generaldyne projector with outcome mean `m` into
/// the log-density per `d²m`.
pub fn generaldyne_log_density(log_prob: f64) -> f64 {
    log_prob - (2.0 * PI * HBAR).ln()
}

/// Quadrature measured by a homodyne detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomodyneQuadrature {
    X,
    P,
    /// `x cos φ + p sin φ`
    Angle(f64),
}

/// Homodyne measurement with outcome `value`; returns the conditional state
/// and the log probability density of the outcome.
pub fn post_select_homodyne(
    state: &LcogState,
    mode: usize,
    quadrature: HomodyneQuadrature,
    value: f64,
) -> Result<Selection> {
    if state.tape().is_some() {
        return Err(Error::InvalidArgument("homodyne conditioning does not propagate gradients".into()));
    }
    let part = Partition::new(state.num_modes(), mode)?;
    let rotated;
    let (state, idx) = match quadrature {
        HomodyneQuadrature::X => (state, 0),
        HomodyneQuadrature::P => (state, 1),
        HomodyneQuadrature::Angle(phi) => {
            let mut s = state.clone();
            s.apply_symplectic(&rotation_symplectic(-phi)?, None, &[mode])?;
            rotated = s;
            (&rotated, 0)
        }
    };
    let bi = part.b[idx];
    let sa = part.a.len();
    struct HFactor {
        s: f64,
        k: Vec<f64>,
    }
    let mut factors = Vec::new();
    let mut out_covs = Vec::new();
    for sigma in state.covariances().groups() {
        let s = sigma[(bi, bi)];
        if !(s > 1e-300) {
            return Err(Error::DegenerateState("zero conditional variance in homodyne measurement".into()));
        }
        let col: Vec<f64> = part.a.iter().map(|&i| sigma[(i, bi)]).collect();
        let k: Vec<f64> = col.iter().map(|c| c / s).collect();
        let mut cov = DMatrix::from_fn(sa, sa, |i, j| sigma[(part.a[i], part.a[j])] - k[i] * col[j]);
        symmetrize(&mut cov);
        out_covs.push(cov);
        factors.push(HFactor { s, k });
    }
    let n = state.num_weights();
    let mut weights = vec![C0; n];
    let mut means = vec![C0; n * sa.max(1)];
    weights.par_iter_mut().zip(means.par_chunks_mut(sa.max(1))).enumerate().for_each(|(j, (w, m))| {
        let f = &factors[state.covariances().group_of(j)];
        let mu = state.mean(j);
        let delta = value - mu[bi];
        *w = state.log_weights()[j] - 0.5 * delta * delta / f.s - 0.5 * (2.0 * PI * f.s).ln();
        for (i, &ia) in part.a.iter().enumerate() {
            m[i] = mu[ia] + f.k[i] * delta;
        }
    });
    if sa == 0 {
        means.clear();
    }
    let terms: Vec<(Complex64, f64)> = (0..n)
        .flat_map(|j| {
            let conj = (state.is_reduced() && j >= state.num_k()).then_some((weights[j].conj(), 1.0));
            std::iter::once((weights[j], 1.0)).chain(conj)
        })
        .collect();
    let log_density = ExpSum::new(terms)?.ln_re_positive("homodyne density")?;
    if log_density == f64::NEG_INFINITY {
        return Err(Error::DegenerateState("homodyne outcome has zero density".into()));
    }
    for w in &mut weights {
        *w = crate::numeric::wrap_phase(*w - log_density);
    }
    let covs = match &state.covariances().index {
        None => Covariances::shared(out_covs.pop().unwrap()),
        Some(ix) => Covariances::grouped(out_covs, ix.clone())?,
    };
    let out = LcogState {
        num_modes: state.num_modes() - 1,
        log_weights: weights,
        means,
        covs,
        num_k: state.num_k(),
        reduced: state.is_reduced(),
        tape: None,
    };
    Ok(Selection { state: out, log_prob: log_density })
}

/// Detector model used for heralding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Detector {
    /// Photon-number resolving, via the coherent-state decomposition. `eps`
    /// fixes the ring radius for every outcome; otherwise each outcome gets
    /// the radius reaching `infidelity` (default
    /// [`DEFAULT_INFIDELITY`](povm::DEFAULT_INFIDELITY)).
    PnrdCoherent {
        #[serde(default)]
        eps: Option<f64>,
        #[serde(default)]
        infidelity: Option<f64>,
    },
    /// Fan-out onto `fan_out` on/off detectors; outcomes count clicks.
    Ppnrd { fan_out: usize },
    /// On/off detector; outcome 0 is no click, 1 is a click.
    Click,
}

impl Detector {
    /// The POVM element for outcome `n`.
    pub fn povm(&self, n: usize, reduced: bool) -> Result<Povm> {
        match *self {
            Detector::PnrdCoherent { eps, infidelity } => {
                let eps = match (eps, infidelity) {
                    (Some(e), _) => e,
                    (None, None) => povm::default_radius(n),
                    (None, Some(t)) => {
                        let mut a = vec![0.0; n + 1];
                        a[n] = 1.0;
                        povm::radius_for_infidelity(&a, t)?
                    }
                };
                povm::fock_coherent_povm(n, eps, reduced)
            }
            Detector::Ppnrd { fan_out } => povm::ppnrd_povm(n, fan_out),
            Detector::Click => match n {
                0 => Ok(povm::click_povm(false)),
                1 => Ok(povm::click_povm(true)),
                _ => Err(Error::InvalidArgument(format!("click detector outcome must be 0 or 1, got {n}"))),
            },
        }
    }
}

/// Measure mode 0 repeatedly with the given outcomes until one mode is left.
pub fn herald_sequence(state: &LcogState, pattern: &[usize], detector: &Detector, reduced: bool) -> Result<Selection> {
    if pattern.len() + 1 != state.num_modes() {
        return Err(Error::InvalidArgument(format!(
            "pattern of length {} does not leave one of {} modes",
            pattern.len(),
            state.num_modes()
        )));
    }
    let mut current = if reduced { state.to_reduced_form()? } else { state.to_full_form()? };
    let mut log_prob = 0.0;
    for &n in pattern {
        let povm = detector.povm(n, reduced)?;
        let sel = post_select(&current, 0, &povm)?;
        log_prob += sel.log_prob;
        current = sel.state;
    }
    Ok(Selection { state: current, log_prob })
}
