mod common;

use common::gradcheck::{central, check_circuit};
use lcg_core::gbs::{herald, CircuitSpec, Topology};
use lcg_core::grad::*;
use lcg_core::measure::Detector;
use lcg_core::phase_space::{beamsplitter_symplectic, squeeze_symplectic, GaussianChannel};
use lcg_core::povm::fock_state;
use lcg_core::LcogState;
use num_complex::Complex64;

#[test]
fn random_circuits_match_finite_differences() {
    for seed in 0..20 {
        for (what, gap) in check_circuit(seed) {
            assert!(gap <= 1e-5, "seed {seed} {what}: relative gap {gap:.3e}");
        }
    }
}

#[test]
fn two_mode_herald_probability_gradient() {
    let mut spec = CircuitSpec::new(Topology::InverseCascade, vec![0.6, 0.0], vec![0.7], vec![1]);
    spec.detector = Detector::PnrdCoherent { eps: Some(2.0), infidelity: None };
    let h = herald(&spec, true).unwrap();
    let fd = central(&spec, |_, lp| lp);
    let g = h.grad_log_prob.unwrap();
    for (a, f) in g.iter().zip(&fd) {
        assert!((a - f).abs() < 1e-6, "{a} vs {f}");
    }
}

#[test]
fn trace_preserving_evolution_has_zero_norm_gradient() {
    let mut st = fock_state(2, 0.6, true).unwrap().tensor(&LcogState::vacuum(1).unwrap()).unwrap();
    attach_gradients(&mut st, 2);
    let dsq = lcg_core::phase_space::d_symplectic(lcg_core::phase_space::GateKind::Squeeze, &[0.4, 0.0], 0).unwrap();
    st.apply_symplectic_with_derivatives(&squeeze_symplectic(0.4, 0.0).unwrap(), None, &[1], &[(0, dsq, None)]).unwrap();
    let dbs = lcg_core::phase_space::d_symplectic(lcg_core::phase_space::GateKind::Beamsplitter, &[0.5, 0.0], 0).unwrap();
    st.apply_symplectic_with_derivatives(&beamsplitter_symplectic(0.5, 0.0).unwrap(), None, &[0, 1], &[(1, dbs, None)]).unwrap();
    st.apply_channel(&GaussianChannel::loss(0.8, 0.0, 1).unwrap(), &[0]).unwrap();
    let tape = st.tape().unwrap();
    assert!(tape.matches(&st));
    assert!(grad_log_norm(&st).unwrap().iter().all(|g| g.abs() < 1e-12));
}

#[test]
fn vacuum_tape_is_zero() {
    let mut st = LcogState::vacuum(2).unwrap();
    attach_gradients(&mut st, 3);
    let tape = st.tape().unwrap();
    assert_eq!(tape.num_params(), 3);
    assert!(tape.d_log_prob().iter().all(|v| *v == 0.0));
    for j in 0..tape.num_terms() {
        for p in 0..3 {
            assert_eq!(tape.d_log_weight(j, p), Complex64::new(0.0, 0.0));
            assert!(tape.d_mean(j, p).iter().all(|v| v.norm() == 0.0));
        }
    }
}

#[test]
fn mirror_symmetric_circuit_has_equal_components() {
    // the measured port of a 50:50 splitter sees both equal squeezers with equal weight
    let spec = CircuitSpec::new(Topology::InverseCascade, vec![0.5, 0.5], vec![std::f64::consts::FRAC_PI_4], vec![2]);
    let h = herald(&spec, true).unwrap();
    let g = h.grad_log_prob.unwrap();
    assert!((g[0] - g[1]).abs() < 1e-9, "{g:?}");
}
