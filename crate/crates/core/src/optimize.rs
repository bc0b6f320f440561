//! Bounded limited-memory quasi-Newton minimization and basin hopping.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stopping rules for a local minimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    pub max_iterations: usize,
    pub max_evaluations: usize,
    /// Wall-clock limit in seconds; `None` for unlimited.
    pub max_seconds: Option<f64>,
    /// Projected-gradient infinity norm at which to stop.
    pub gradient_tolerance: f64,
    /// Relative cost change below which to stop.
    pub cost_tolerance: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Self { max_iterations: 200, max_evaluations: 2000, max_seconds: None, gradient_tolerance: 1e-7, cost_tolerance: 1e-13 }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub cost: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    CostChange,
    LineSearch,
    Iterations,
    Evaluations,
    Time,
    /// The cost could not be evaluated at the starting point.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub cost: f64,
    pub gradient: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub evaluations: usize,
    pub termination: Termination,
    /// Message of the last evaluation failure, if any.
    pub failure: Option<String>,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::CostChange)
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) { 0.0 } else { gi })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimize `f` over the box `[lower, upper]`.
///
/// Search directions come from the L-BFGS two-loop recursion on the free
/// variables; steps are projected onto the box and accepted by a backtracking
/// Armijo test. Failed evaluations count as infinite cost during the line
/// search, so a stability error shrinks the step instead of aborting.
pub fn minimize_bounded<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], budget: &Budget) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::InvalidArgument("bounds do not match the parameter count".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::InvalidArgument("lower bound above upper bound".into()));
    }
    let start = Instant::now();
    let deadline = budget.max_seconds.map(|s| start + Duration::from_secs_f64(s.max(0.0)));
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut evaluations = 1;
    let mut failure = None;
    let (mut fx, mut g) = match f(&x) {
        Ok((v, g)) if v.is_finite() && g.iter().all(|d| d.is_finite()) => (v, g),
        Ok(_) => {
            return Ok(failed(x, evaluations, "non-finite cost at the starting point".into()));
        }
        Err(e) => return Ok(failed(x, evaluations, e.to_string())),
    };
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    const MEMORY: usize = 10;
    let mut trace = vec![TraceRow { iteration: 0, cost: fx, gradient_norm: inf_norm(&projected_gradient(&x, &g, lower, upper)) }];
    let termination;
    let mut iteration = 0;
    loop {
        let pg = projected_gradient(&x, &g, lower, upper);
        if inf_norm(&pg) < budget.gradient_tolerance {
            termination = Termination::Gradient;
            break;
        }
        if iteration >= budget.max_iterations {
            termination = Termination::Iterations;
            break;
        }
        if evaluations >= budget.max_evaluations {
            termination = Termination::Evaluations;
            break;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            termination = Termination::Time;
            break;
        }
        iteration += 1;
        let free: Vec<bool> = pg.iter().map(|v| *v != 0.0).collect();
        let mut dir = two_loop(&pg, &memory);
        for (d, &fr) in dir.iter_mut().zip(&free) {
            if !fr {
                *d = 0.0;
            }
        }
        if dot(&dir, &pg) >= 0.0 {
            memory.clear();
            dir = pg.iter().map(|v| -v).collect();
        }
        let mut step = if memory.is_empty() { (1.0 / inf_norm(&dir)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        let mut tries = 0;
        while tries < 40 && evaluations < budget.max_evaluations {
            tries += 1;
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            project(&mut trial, lower, upper);
            let decrease: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gi, (t, a))| gi * (t - a)).sum();
            if trial == x {
                break;
            }
            evaluations += 1;
            match f(&trial) {
                Ok((v, gt)) if v.is_finite() && gt.iter().all(|d| d.is_finite()) => {
                    if v <= fx + 1e-4 * decrease {
                        accepted = Some((trial, v, gt));
                        break;
                    }
                }
                Ok(_) => failure = Some("non-finite cost".to_string()),
                Err(e) => failure = Some(e.to_string()),
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if memory.is_empty() {
                termination = Termination::LineSearch;
                break;
            }
            memory.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if memory.len() == MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let change = (fx - fnew).abs();
        x = xn;
        fx = fnew;
        g = gn;
        trace.push(TraceRow { iteration, cost: fx, gradient_norm: inf_norm(&projected_gradient(&x, &g, lower, upper)) });
        if change <= budget.cost_tolerance * fx.abs().max(1.0) {
            termination = Termination::CostChange;
            break;
        }
    }
    Ok(Minimum { x, cost: fx, gradient: g, trace, evaluations, termination, failure })
}

fn failed(x: Vec<f64>, evaluations: usize, msg: String) -> Minimum {
    let n = x.len();
    Minimum {
        x,
        cost: f64::INFINITY,
        gradient: vec![f64::NAN; n],
        trace: Vec::new(),
        evaluations,
        termination: Termination::Failed,
        failure: Some(msg),
    }
}

fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for v in &mut q {
            *v *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Basin-hopping settings. Hops perturb every parameter uniformly within
/// `±step/2` and are accepted with the Metropolis rule at `temperature`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HopSettings {
    pub hops: usize,
    pub step: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for HopSettings {
    fn default() -> Self {
        Self { hops: 20, step: 0.5, temperature: 1.0, seed: 0 }
    }
}

/// Best result over a seeded basin-hopping run. With `hops = 0` this is the
/// plain local minimization from `x0`.
pub fn basin_hop<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], budget: &Budget, hop: &HopSettings) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(hop.seed);
    let first = minimize_bounded(&mut f, x0, lower, upper, budget)?;
    let mut current = first.clone();
    let mut best = first;
    let mut evaluations = best.evaluations;
    for _ in 0..hop.hops {
        let mut trial: Vec<f64> = current.x.iter().map(|v| v + hop.step * (rng.random::<f64>() - 0.5)).collect();
        project(&mut trial, lower, upper);
        let local = minimize_bounded(&mut f, &trial, lower, upper, budget)?;
        evaluations += local.evaluations;
        let u: f64 = rng.random();
        let accept = local.cost.is_finite()
            && (local.cost < current.cost || u < (-(local.cost - current.cost) / hop.temperature).exp());
        if local.cost < best.cost {
            best = local.clone();
        }
        if accept {
            current = local;
        }
    }
    best.evaluations = evaluations;
    Ok(best)
}
