//! Heralded GBS circuits: topology builders, heralding with optional
//! gradients, cost functions and optimizer wrappers.
//!
//! Parameters are ordered as all squeezings `r_j` followed by all beamsplitter
//! angles `θ_k` in application order. Phases are fixed at zero. Beamsplitters
//! act on neighbouring modes:
//!
//! * `clements`: `N` columns, column `c` holding `(i, i+1)` for
//!   `i ≡ c (mod 2)`, numbered column by column, top to bottom;
//! * `inverse_cascade`: `(0,1), (1,2), …, (N−2,N−1)`;
//! * `cascade`: the same pairs in reverse order.
//!
//! Modes `0..N−1` are measured in order with the pattern; the last mode is
//! the output.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::characterize::{
    delta_to_db, gkp_nonlinear_squeezing, squeezing_summary, symmetric_delta, GkpLattice, GkpOperatorSpec, Quadrature,
    QUNAUGHT_AMPLITUDE,
};
use crate::error::{Error, Result};
use crate::grad::{attach_gradients, effective_squeezing_with_grad, grad_log_prob, overlap_with_grad};
use crate::lcog_state::LcogState;
use crate::measure::{herald_sequence, post_select, Detector};
use crate::optimize::{self, Budget, HopSettings, Minimum, Termination, TraceRow};
use crate::phase_space::{
    beamsplitter_symplectic, d_symplectic, embed, squeeze_symplectic, GateKind, GaussianChannel, SymplecticMatrix,
};
use crate::stellar::{rank_reduce, ReduceOptions};

/// Largest squeezing magnitude (15 dB).
pub const R_MAX: f64 = 1.73;
pub const THETA_MIN: f64 = 0.1;
pub const THETA_MAX: f64 = FRAC_PI_2 - 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Clements,
    Cascade,
    InverseCascade,
}

impl Topology {
    pub fn num_beamsplitters(self, modes: usize) -> usize {
        match self {
            Topology::Clements => modes * (modes - 1) / 2,
            _ => modes - 1,
        }
    }

    /// Mode pairs in application order.
    pub fn beamsplitters(self, modes: usize) -> Vec<(usize, usize)> {
        match self {
            Topology::Clements => (0..modes)
                .flat_map(|c| (c % 2..modes.saturating_sub(1)).step_by(2).map(|i| (i, i + 1)))
                .collect(),
            Topology::InverseCascade => (0..modes.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
            Topology::Cascade => (0..modes.saturating_sub(1)).rev().map(|i| (i, i + 1)).collect(),
        }
    }
}

fn default_detector() -> Detector {
    Detector::PnrdCoherent { eps: None, infidelity: None }
}

fn yes() -> bool {
    true
}

/// A heralded state-preparation circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitSpec {
    pub modes: usize,
    pub topology: Topology,
    pub squeezing: Vec<f64>,
    pub thetas: Vec<f64>,
    /// Transmissivity per mode, applied after the interferometer. Empty means
    /// lossless.
    #[serde(default)]
    pub losses: Vec<f64>,
    pub pattern: Vec<usize>,
    #[serde(default = "default_detector")]
    pub detector: Detector,
    /// Simulate in reduced form.
    #[serde(default = "yes")]
    pub reduced: bool,
}

impl CircuitSpec {
    /// Lossless PNRD circuit.
    pub fn new(topology: Topology, squeezing: Vec<f64>, thetas: Vec<f64>, pattern: Vec<usize>) -> Self {
        Self {
            modes: squeezing.len(),
            topology,
            squeezing,
            thetas,
            losses: Vec::new(),
            pattern,
            detector: default_detector(),
            reduced: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.modes;
        if n < 1 {
            return Err(Error::InvalidArgument("a circuit needs at least one mode".into()));
        }
        if self.squeezing.len() != n {
            return Err(Error::InvalidArgument(format!("expected {n} squeezing values, got {}", self.squeezing.len())));
        }
        let nb = self.topology.num_beamsplitters(n);
        if self.thetas.len() != nb {
            return Err(Error::InvalidArgument(format!("expected {nb} beamsplitter angles, got {}", self.thetas.len())));
        }
        if self.pattern.len() + 1 != n {
            return Err(Error::InvalidArgument(format!("expected {} pattern entries, got {}", n - 1, self.pattern.len())));
        }
        if !self.losses.is_empty() {
            if self.losses.len() != n {
                return Err(Error::InvalidArgument(format!("expected {n} loss values, got {}", self.losses.len())));
            }
            if let Some(e) = self.losses.iter().find(|e| !(**e >= 0.0 && **e <= 1.0)) {
                return Err(Error::InvalidArgument(format!("transmissivity {e} outside [0, 1]")));
            }
        }
        if self.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("circuit parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.modes + self.topology.num_beamsplitters(self.modes)
    }

    pub fn params(&self) -> Vec<f64> {
        self.squeezing.iter().chain(&self.thetas).copied().collect()
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.num_params() {
            return Err(Error::InvalidArgument(format!("expected {} parameters, got {}", self.num_params(), params.len())));
        }
        let mut out = self.clone();
        out.squeezing = params[..self.modes].to_vec();
        out.thetas = params[self.modes..].to_vec();
        Ok(out)
    }

    pub fn with_uniform_loss(&self, eta: f64) -> Self {
        let mut out = self.clone();
        out.losses = if eta == 1.0 { Vec::new() } else { vec![eta; self.modes] };
        out
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let nb = self.topology.num_beamsplitters(self.modes);
        let lo = std::iter::repeat_n(-R_MAX, self.modes).chain(std::iter::repeat_n(THETA_MIN, nb)).collect();
        let hi = std::iter::repeat_n(R_MAX, self.modes).chain(std::iter::repeat_n(THETA_MAX, nb)).collect();
        (lo, hi)
    }
}

/// Circuit symplectic matrix and its derivatives with respect to every
/// parameter.
pub fn build_symplectic(spec: &CircuitSpec) -> Result<(SymplecticMatrix, Vec<DMatrix<f64>>)> {
    spec.validate()?;
    let n = spec.modes;
    let dim = 2 * n;
    let mut q = DMatrix::identity(dim, dim);
    let mut dq = Vec::with_capacity(n);
    for (j, &r) in spec.squeezing.iter().enumerate() {
        let s = squeeze_symplectic(r, 0.0)?;
        q.view_mut((2 * j, 2 * j), (2, 2)).copy_from(s.matrix());
        dq.push(d_symplectic(GateKind::Squeeze, &[r, 0.0], 0)?);
    }
    let pairs = spec.topology.beamsplitters(n);
    let mut bs = Vec::with_capacity(pairs.len());
    let mut dbs = Vec::with_capacity(pairs.len());
    for (&(a, b), &t) in pairs.iter().zip(&spec.thetas) {
        bs.push(embed(beamsplitter_symplectic(t, 0.0)?.matrix(), &[a, b], n, 1.0)?);
        dbs.push(embed(&d_symplectic(GateKind::Beamsplitter, &[t, 0.0], 0)?, &[a, b], n, 0.0)?);
    }
    // prefix[k] = B_k ⋯ B_1 Q ; suffix[k] = B_K ⋯ B_{k+1}
    let mut prefix = Vec::with_capacity(bs.len() + 1);
    prefix.push(q.clone());
    for b in &bs {
        let next = b * prefix.last().unwrap();
        prefix.push(next);
    }
    let mut suffix = vec![DMatrix::identity(dim, dim); bs.len() + 1];
    for k in (0..bs.len()).rev() {
        suffix[k] = &suffix[k + 1] * &bs[k];
    }
    let interferometer = &suffix[0];
    let mut derivs = Vec::with_capacity(spec.num_params());
    for (j, d) in dq.iter().enumerate() {
        let mut local = DMatrix::zeros(dim, dim);
        local.view_mut((2 * j, 2 * j), (2, 2)).copy_from(d);
        derivs.push(interferometer * local);
    }
    for k in 0..bs.len() {
        derivs.push(&suffix[k + 1] * &dbs[k] * &prefix[k]);
    }
    Ok((SymplecticMatrix::new_unchecked(prefix.pop().unwrap()), derivs))
}

/// Output of [`herald`].
#[derive(Debug, Clone)]
pub struct Herald {
    /// Normalized output state; carries the gradient tape when requested.
    pub state: LcogState,
    pub log_prob: f64,
    pub grad_log_prob: Option<Vec<f64>>,
}

fn prepare(spec: &CircuitSpec, with_grad: bool) -> Result<LcogState> {
    let (s, derivs) = build_symplectic(spec)?;
    let n = spec.modes;
    let mut state = LcogState::vacuum(n)?;
    let modes: Vec<usize> = (0..n).collect();
    if with_grad {
        attach_gradients(&mut state, spec.num_params());
        let derivs: Vec<_> = derivs.into_iter().enumerate().map(|(p, d)| (p, d, None)).collect();
        state.apply_symplectic_with_derivatives(&s, None, &modes, &derivs)?;
    } else {
        state.apply_symplectic(&s, None, &modes)?;
    }
    for (j, &eta) in spec.losses.iter().enumerate() {
        if eta < 1.0 {
            state.apply_channel(&GaussianChannel::loss(eta, 0.0, 1)?, &[j])?;
        }
    }
    Ok(state)
}

/// Vacuum, circuit, losses, then post-selection of modes `0..N−1`.
pub fn herald(spec: &CircuitSpec, with_grad: bool) -> Result<Herald> {
    let state = prepare(spec, with_grad)?;
    let sel = herald_sequence(&state, &spec.pattern, &spec.detector, spec.reduced)?;
    let grad_log_prob = if with_grad { Some(grad_log_prob(&sel.state)?) } else { None };
    Ok(Herald { state: sel.state, log_prob: sel.log_prob, grad_log_prob })
}

/// Inverse-cascade heralding one stage at a time, with [`rank_reduce`]
/// applied to the carried mode after every stage but the last. Only
/// inverse-cascade circuits factor this way. Gradients are not available.
pub fn herald_staged(spec: &CircuitSpec, opts: &ReduceOptions) -> Result<Herald> {
    spec.validate()?;
    if spec.topology != Topology::InverseCascade {
        return Err(Error::InvalidArgument("staged heralding needs the inverse-cascade topology".into()));
    }
    let eta = |j: usize| spec.losses.get(j).copied().unwrap_or(1.0);
    let mut state = if spec.reduced { LcogState::vacuum(1)?.to_reduced_form()? } else { LcogState::vacuum(1)? };
    state.apply_symplectic(&squeeze_symplectic(spec.squeezing[0], 0.0)?, None, &[0])?;
    let mut log_prob = 0.0;
    let mut photons = 0;
    let stages = spec.modes - 1;
    for k in 0..stages {
        let mut fresh = LcogState::vacuum(1)?;
        fresh.apply_symplectic(&squeeze_symplectic(spec.squeezing[k + 1], 0.0)?, None, &[0])?;
        if spec.reduced {
            fresh = fresh.to_reduced_form()?;
        }
        let mut joint = state.tensor(&fresh)?;
        joint.apply_symplectic(&beamsplitter_symplectic(spec.thetas[k], 0.0)?, None, &[0, 1])?;
        if eta(k) < 1.0 {
            joint.apply_channel(&GaussianChannel::loss(eta(k), 0.0, 1)?, &[0])?;
        }
        let n = spec.pattern[k];
        let sel = post_select(&joint, 0, &spec.detector.povm(n, spec.reduced)?)?;
        log_prob += sel.log_prob;
        photons += n;
        state = sel.state;
        if k + 1 < stages {
            let mut o = *opts;
            if o.rank.is_none() {
                o.rank = Some(photons);
            }
            state = rank_reduce(&state, &o)?.state;
        }
    }
    if eta(stages) < 1.0 {
        state.apply_channel(&GaussianChannel::loss(eta(stages), 0.0, 1)?, &[0])?;
    }
    Ok(Herald { state, log_prob, grad_log_prob: None })
}

/// Optimization objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Cost {
    /// `Δ_x + Δ_p` on the qunaught lattice.
    SumDelta,
    /// `½(Δ_x + Δ_p) − c·p`.
    SumDeltaMinusProb { c: f64 },
    /// `1 − Tr[ρ τ]` for a fixed normalized target `τ`.
    #[serde(skip)]
    Infidelity(Box<LcogState>),
}

/// Cost value and gradient with respect to [`CircuitSpec::params`].
pub fn cost_eval(spec: &CircuitSpec, cost: &Cost) -> Result<(f64, Vec<f64>)> {
    let h = herald(spec, true)?;
    match cost {
        Cost::SumDelta | Cost::SumDeltaMinusProb { .. } => {
            let (dx, gx) = effective_squeezing_with_grad(&h.state, Quadrature::X, QUNAUGHT_AMPLITUDE)?;
            let (dp, gp) = effective_squeezing_with_grad(&h.state, Quadrature::P, QUNAUGHT_AMPLITUDE)?;
            match cost {
                Cost::SumDelta => Ok((dx + dp, gx.iter().zip(&gp).map(|(a, b)| a + b).collect())),
                Cost::SumDeltaMinusProb { c } => {
                    let p = h.log_prob.exp();
                    let glp = h.grad_log_prob.unwrap_or_default();
                    let g = gx.iter().zip(&gp).zip(&glp).map(|((a, b), l)| 0.5 * (a + b) - c * p * l).collect();
                    Ok((0.5 * (dx + dp) - c * p, g))
                }
                Cost::Infidelity(_) => unreachable!(),
            }
        }
        Cost::Infidelity(target) => {
            let (f, g) = overlap_with_grad(&h.state, target)?;
            Ok((1.0 - f, g.iter().map(|v| -v).collect()))
        }
    }
}

/// Figures of merit of a heralded state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub delta_x_db: f64,
    pub delta_p_db: f64,
    pub delta_s_db: f64,
    /// GKP nonlinear squeezing on the qunaught lattice.
    pub xi_db: f64,
    pub log_prob: f64,
}

pub fn evaluate_state(state: &LcogState, log_prob: f64) -> Result<Evaluation> {
    let s = squeezing_summary(state)?;
    let (_, xi_db) = gkp_nonlinear_squeezing(state, &GkpOperatorSpec { lattice: GkpLattice::Qunaught, logical: 0 })?;
    Ok(Evaluation { delta_x_db: s.delta_x_db, delta_p_db: s.delta_p_db, delta_s_db: s.delta_s_db, xi_db, log_prob })
}

pub fn evaluate(spec: &CircuitSpec) -> Result<Evaluation> {
    let h = herald(spec, false)?;
    evaluate_state(&h.state, h.log_prob)
}

/// Result of an optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub params: Vec<f64>,
    pub cost: f64,
    /// Figures of merit at `params`; absent when the run failed.
    pub evaluation: Option<Evaluation>,
    pub trace: Vec<TraceRow>,
    pub seed: Option<u64>,
    pub evaluations: usize,
    pub termination: Termination,
    pub failure: Option<String>,
}

impl OptimizationReport {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::CostChange)
    }
}

fn report(spec: &CircuitSpec, m: Minimum, seed: Option<u64>) -> Result<OptimizationReport> {
    let evaluation = if m.cost.is_finite() { Some(evaluate(&spec.with_params(&m.x)?)?) } else { None };
    Ok(OptimizationReport {
        params: m.x,
        cost: m.cost,
        evaluation,
        trace: m.trace,
        seed,
        evaluations: m.evaluations,
        termination: m.termination,
        failure: m.failure,
    })
}

fn objective<'a>(spec: &'a CircuitSpec, cost: &'a Cost) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a {
    move |x| cost_eval(&spec.with_params(x)?, cost)
}

/// Bounded quasi-Newton descent from the parameters in `spec`.
pub fn local_minimize(spec: &CircuitSpec, cost: &Cost, budget: &Budget) -> Result<OptimizationReport> {
    spec.validate()?;
    let (lo, hi) = spec.bounds();
    let m = optimize::minimize_bounded(objective(spec, cost), &spec.params(), &lo, &hi, budget)?;
    report(spec, m, None)
}

/// Seeded basin hopping around [`local_minimize`].
pub fn basin_hop(spec: &CircuitSpec, cost: &Cost, budget: &Budget, hop: &HopSettings) -> Result<OptimizationReport> {
    spec.validate()?;
    let (lo, hi) = spec.bounds();
    let m = optimize::basin_hop(objective(spec, cost), &spec.params(), &lo, &hi, budget, hop)?;
    report(spec, m, Some(hop.seed))
}

/// One transmissivity of a loss sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub eta: f64,
    /// The lossless optimum evaluated with loss.
    pub original: Evaluation,
    pub reoptimized: OptimizationReport,
}

/// Evaluate the lossless optimum under uniform loss and re-optimize locally.
pub fn reoptimize_with_loss(spec: &CircuitSpec, cost: &Cost, etas: &[f64], budget: &Budget) -> Result<Vec<LossRow>> {
    etas.iter()
        .map(|&eta| {
            let lossy = spec.with_uniform_loss(eta);
            let original = evaluate(&lossy)?;
            let reoptimized = local_minimize(&lossy, cost, budget)?;
            Ok(LossRow { eta, original, reoptimized })
        })
        .collect()
}

/// `Δ_s` in dB from the two quadrature widths.
pub fn symmetric_db(dx: f64, dp: f64) -> f64 {
    delta_to_db(symmetric_delta(dx, dp))
}
