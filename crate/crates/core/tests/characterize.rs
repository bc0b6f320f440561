mod common;

use std::f64::consts::PI;

use common::*;
use lcg_core::characterize::*;
use lcg_core::phase_space::{squeeze_symplectic, GaussianChannel};
use lcg_core::povm::{default_radius, fock_state};
use lcg_core::{CoherentSuperposition, Covariances, LcogState};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn coherent(alpha: Complex64) -> LcogState {
    LcogState::from_coherent_superposition(&CoherentSuperposition { coefficients: vec![c(1.0, 0.0)], amplitudes: vec![alpha], squeeze: c(0.0, 0.0) }, false).unwrap()
}

fn squeezed(r: f64) -> LcogState {
    let mut st = LcogState::vacuum(1).unwrap();
    st.apply_symplectic(&squeeze_symplectic(r, 0.0).unwrap(), None, &[0]).unwrap();
    st
}

fn thermal(nbar: f64) -> LcogState {
    LcogState::from_parts(1, vec![c(0.0, 0.0)], vec![c(0.0, 0.0); 2], Covariances::shared(DMatrix::identity(2, 2) * (2.0 * nbar + 1.0)), None).unwrap()
}

#[test]
fn coherent_overlaps() {
    let v = LcogState::vacuum(1).unwrap();
    assert!((overlap(&v, &v).unwrap() - 1.0).abs() < 1e-15);
    assert!((overlap(&coherent(c(1.0, 0.0)), &v).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    let (a, b) = (c(0.3, -0.7), c(-0.4, 0.2));
    assert!((overlap(&coherent(a), &coherent(b)).unwrap() - (-(a - b).norm_sqr()).exp()).abs() < 1e-14);
}

#[test]
fn cat_overlap_with_coherent_state() {
    let alpha = 1.2;
    let cat = LcogState::from_coherent_superposition(
        &CoherentSuperposition { coefficients: vec![c(1.0, 0.0), c(1.0, 0.0)], amplitudes: vec![c(alpha, 0.0), c(-alpha, 0.0)], squeeze: c(0.0, 0.0) },
        true,
    )
    .unwrap();
    let beta = c(0.5, 0.3);
    let ket = normalized(coherent_ket(c(alpha, 0.0), 50) + coherent_ket(c(-alpha, 0.0), 50));
    let expect = fidelity(&coherent_ket(beta, 50), &ket);
    assert!((overlap(&cat, &coherent(beta)).unwrap() - expect).abs() < 1e-13);
}

#[test]
fn thermal_purity_is_inverse_of_two_nbar_plus_one() {
    assert!((purity(&thermal(1.0)).unwrap() - 1.0 / 3.0).abs() < 1e-14);
}

#[test]
fn normalized_overlap_of_equal_mixed_states_is_one() {
    let t = thermal(0.7);
    assert!((normalized_overlap(&t, &t).unwrap() - 1.0).abs() < 1e-14);
    assert!(overlap(&t, &t).unwrap() < 1.0);
}

#[test]
fn characteristic_function_values() {
    let v = LcogState::vacuum(1).unwrap();
    assert!((char_fun(&v, &[1.0, 0.0]).unwrap() - c((-0.5f64).exp(), 0.0)).norm() < 1e-15);
    let cat = fock_state(3, default_radius(3), true).unwrap();
    assert!((char_fun(&cat, &[0.0, 0.0]).unwrap() - c(1.0, 0.0)).norm() < 1e-12);
    let r = 0.6;
    let a = 1.3;
    let chi = char_fun(&squeezed(r), &[0.0, a]).unwrap();
    assert!((chi.norm() - (-0.5 * a * a * (-2.0 * r).exp()).exp()).abs() < 1e-14);
}

#[test]
fn characteristic_function_of_coherent_state_is_a_phase_times_vacuum() {
    let alpha = c(0.4, -0.3);
    let st = coherent(alpha);
    let q = [0.7, 0.2];
    let chi = char_fun(&st, &q).unwrap();
    let vac = char_fun(&LcogState::vacuum(1).unwrap(), &q).unwrap();
    assert!((chi.norm() - vac.norm()).abs() < 1e-15);
    // exponent i μᵀΩα with μ = 2(Re α, Im α)
    let mu = [2.0 * alpha.re, 2.0 * alpha.im];
    let phase = mu[0] * q[1] - mu[1] * q[0];
    assert!((chi.arg() - phase).abs() < 1e-14);
}

#[test]
fn effective_squeezing_examples() {
    let v = LcogState::vacuum(1).unwrap();
    for q in [Quadrature::X, Quadrature::P] {
        let (d, db) = effective_squeezing(&v, q, QUNAUGHT_AMPLITUDE).unwrap();
        assert!((d - 1.0).abs() < 1e-14 && db.abs() < 1e-12);
    }
    let (dx, db) = effective_squeezing(&squeezed(0.5), Quadrature::X, QUNAUGHT_AMPLITUDE).unwrap();
    assert!((dx * dx - (-1.0f64).exp()).abs() < 1e-14);
    assert!((db - 4.342944819032518).abs() < 1e-10);
    let s = squeezing_summary(&squeezed(0.5)).unwrap();
    let dp = db_to_delta(s.delta_p_db);
    assert!((s.delta_s_db - delta_to_db(symmetric_delta(dx, dp))).abs() < 1e-12);
}

#[test]
fn gkp_squeezing_of_vacuum() {
    let v = LcogState::vacuum(1).unwrap();
    let (xi, db) = gkp_nonlinear_squeezing(&v, &GkpOperatorSpec { lattice: GkpLattice::SquareLogical, logical: 0 }).unwrap();
    let expect = 2.0 - (-PI).exp() - (-PI / 4.0).exp();
    assert!((xi - expect).abs() < 1e-14);
    assert!((db + 10.0 * expect.log10()).abs() < 1e-12);
    let (xi1, _) = gkp_nonlinear_squeezing(&v, &GkpOperatorSpec { lattice: GkpLattice::SquareLogical, logical: 1 }).unwrap();
    assert!((xi1 - (2.0 - (-PI).exp() + (-PI / 4.0).exp())).abs() < 1e-14);
    let (xq, _) = gkp_nonlinear_squeezing(&v, &GkpOperatorSpec { lattice: GkpLattice::Qunaught, logical: 0 }).unwrap();
    assert!((xq - (2.0 - 2.0 * (-PI / 2.0).exp())).abs() < 1e-14);
    assert!(gkp_nonlinear_squeezing(&v, &GkpOperatorSpec { lattice: GkpLattice::Qunaught, logical: 2 }).is_err());
}

#[test]
fn wigner_grid_normalization_and_fock_one() {
    let v = LcogState::vacuum(1).unwrap();
    let grid = Grid { x_min: -6.0, x_max: 6.0, nx: 121, p_min: -6.0, p_max: 6.0, np: 121 };
    let pts = grid.points();
    let w = wigner_grid(&v, &pts).unwrap();
    let total: f64 = w.iter().sum::<f64>() * grid.cell_area();
    assert!((total - 1.0).abs() < 1e-3);
    let f1 = fock_state(1, default_radius(1), true).unwrap();
    assert!((f1.wigner(&[0.0, 0.0]).unwrap() + 1.0 / (2.0 * PI)).abs() < 1e-4);
}

#[test]
fn csv_has_seventeen_digits() {
    let mut buf = Vec::new();
    write_wigner_csv(&mut buf, &[vec![0.1, 0.2]], &[1.0 / 3.0]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let last = text.lines().nth(1).unwrap().split(',').nth(2).unwrap();
    assert_eq!(last.parse::<f64>().unwrap(), 1.0 / 3.0);
}

#[test]
fn photon_moment_examples() {
    let m = photon_moments(&LcogState::vacuum(1).unwrap()).unwrap();
    assert!(m.mean.abs() < 1e-15 && m.variance.abs() < 1e-15);
    let m = photon_moments(&thermal(1.5)).unwrap();
    assert!((m.mean - 1.5).abs() < 1e-13 && (m.variance - 3.75).abs() < 1e-12);
    let m = photon_moments(&coherent(c(2.0, 0.0))).unwrap();
    assert!((m.mean - 4.0).abs() < 1e-13 && (m.variance - 4.0).abs() < 1e-12);
    // a Fock state has no spread, while the per-Gaussian estimate reports about n
    let m = photon_moments(&fock_state(3, default_radius(3), true).unwrap()).unwrap();
    assert!((m.mean - 3.0).abs() < 1e-4 && m.variance.abs() < 1e-3);
    assert!(m.weighted_variance > 1.0);
}

#[test]
fn lossy_fock_state_photon_moments() {
    // binomial thinning of |2⟩: mean 2η, variance 2η(1−η)
    let eta = 0.7;
    let mut f = fock_state(2, default_radius(2), true).unwrap();
    f.apply_channel(&GaussianChannel::loss(eta, 0.0, 1).unwrap(), &[0]).unwrap();
    let m = photon_moments(&f).unwrap();
    assert!((m.mean - 2.0 * eta).abs() < 1e-5);
    assert!((m.variance - 2.0 * eta * (1.0 - eta)).abs() < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn overlap_is_symmetric_and_unitarily_invariant(a in -1.0f64..1.0, b in -1.0f64..1.0, r in -0.8f64..0.8, phi in 0.0f64..3.0) {
        let x = LcogState::from_coherent_superposition(&CoherentSuperposition { coefficients: vec![c(1.0, 0.0), c(0.5, 0.2)], amplitudes: vec![c(a, b), c(-b, a)], squeeze: c(0.0, 0.0) }, true).unwrap();
        let y = coherent(c(b, -a));
        let xy = overlap(&x, &y).unwrap();
        prop_assert!((xy - overlap(&y, &x).unwrap()).abs() < 1e-12);
        let s = squeeze_symplectic(r, phi).unwrap();
        let (mut xs, mut ys) = (x.clone(), y.clone());
        xs.apply_symplectic(&s, None, &[0]).unwrap();
        ys.apply_symplectic(&s, None, &[0]).unwrap();
        prop_assert!((overlap(&xs, &ys).unwrap() - xy).abs() < 1e-10);
    }

    #[test]
    fn characteristic_function_is_bounded(a in -1.5f64..1.5, b in -1.5f64..1.5, qx in -3.0f64..3.0, qp in -3.0f64..3.0) {
        let x = LcogState::from_coherent_superposition(&CoherentSuperposition { coefficients: vec![c(1.0, 0.0), c(-1.0, 0.0)], amplitudes: vec![c(a, b), c(-a, -b)], squeeze: c(0.0, 0.0) }, true).unwrap();
        prop_assert!(char_fun(&x, &[qx, qp]).unwrap().norm() <= 1.0 + 1e-12);
    }
}
