//! Seeded random circuits and central-difference checks of the analytic gradients.

use lcg_core::characterize::{char_fun, effective_squeezing, overlap, Quadrature, QUNAUGHT_AMPLITUDE};
use lcg_core::gbs::{herald, CircuitSpec, Topology};
use lcg_core::grad::*;
use lcg_core::measure::Detector;
use lcg_core::{CoherentSuperposition, LcogState};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-6;
pub const ALPHA: [f64; 2] = [0.35, -0.2];

/// Up to four modes, up to two photons per detector, lossy on odd seeds.
pub fn random_circuit(seed: u64) -> CircuitSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = rng.random_range(2..=4);
    let topology = [Topology::Clements, Topology::Cascade, Topology::InverseCascade][rng.random_range(0..3)];
    let squeezing = (0..modes).map(|_| rng.random_range(-0.9..0.9)).collect();
    let thetas = (0..topology.num_beamsplitters(modes)).map(|_| rng.random_range(0.2..1.3)).collect();
    let pattern = (0..modes - 1).map(|_| rng.random_range(0..=2)).collect();
    let mut spec = CircuitSpec::new(topology, squeezing, thetas, pattern);
    // a moderate ring radius keeps ln p well conditioned, so step-1e-6 differences resolve it
    spec.detector = Detector::PnrdCoherent { eps: Some(2.0), infidelity: None };
    if seed % 2 == 1 {
        spec.losses = (0..modes).map(|_| rng.random_range(0.85..1.0)).collect();
    }
    spec
}

/// A fixed cat-like target for the fidelity gradient.
pub fn target() -> LcogState {
    let sup = CoherentSuperposition {
        coefficients: vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.6)],
        amplitudes: vec![Complex64::new(0.4, 0.1), Complex64::new(-0.3, 0.2)],
        squeeze: Complex64::new(0.0, 0.0),
    };
    LcogState::from_coherent_superposition(&sup, true).unwrap()
}

/// Central difference of a scalar observable of the heralded state.
pub fn central<F: Fn(&LcogState, f64) -> f64>(spec: &CircuitSpec, f: F) -> Vec<f64> {
    let x = spec.params();
    (0..x.len())
        .map(|i| {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += H;
            dn[i] -= H;
            let a = herald(&spec.with_params(&up).unwrap(), false).unwrap();
            let b = herald(&spec.with_params(&dn).unwrap(), false).unwrap();
            (f(&a.state, a.log_prob) - f(&b.state, b.log_prob)) / (2.0 * H)
        })
        .collect()
}

/// Worst `|analytic − fd| / max(|fd|∞, 1e-3)` over the components.
pub fn relative_gap(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
    analytic.iter().zip(fd).fold(0.0, |m, (a, f)| m.max((a - f).abs() / scale))
}

/// Relative gaps of every checked quantity for one seeded circuit.
pub fn check_circuit(seed: u64) -> Vec<(String, f64)> {
    let spec = random_circuit(seed);
    let h = herald(&spec, true).unwrap();
    let st = &h.state;
    let tau = target();
    let mut out = Vec::new();
    out.push(("log p".to_string(), relative_gap(&grad_log_prob(st).unwrap(), &central(&spec, |_, lp| lp))));
    let dchi = grad_char_fun(st, &ALPHA).unwrap();
    let re: Vec<f64> = dchi.iter().map(|c| c.re).collect();
    let im: Vec<f64> = dchi.iter().map(|c| c.im).collect();
    out.push(("Re χ".to_string(), relative_gap(&re, &central(&spec, |s, _| char_fun(s, &ALPHA).unwrap().re))));
    out.push(("Im χ".to_string(), relative_gap(&im, &central(&spec, |s, _| char_fun(s, &ALPHA).unwrap().im))));
    out.push((
        "fidelity".to_string(),
        relative_gap(&grad_overlap(st, &tau).unwrap(), &central(&spec, |s, _| overlap(s, &tau).unwrap())),
    ));
    for q in [Quadrature::X, Quadrature::P] {
        out.push((
            format!("Δ_{q:?}"),
            relative_gap(
                &grad_effective_squeezing(st, q, QUNAUGHT_AMPLITUDE).unwrap(),
                &central(&spec, |s, _| effective_squeezing(s, q, QUNAUGHT_AMPLITUDE).unwrap().0),
            ),
        ));
    }
    out
}
