use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use oqs::algebra::{c, hermitian_part, max_abs, Operator, SuperOperator};
use oqs::bath::BathModel;
use oqs::positivity::magnus_propagator;
use oqs::spectral::{decoherence_rate, off_frequency_shift, pauli_system};
use oqs::tcl2::{build_generator, propagate, Mode, PropagateOptions, SystemModel};

fn matrix(d: usize, v: &[f64]) -> Operator {
    Operator::from_fn(d, d, |i, j| c(v[2 * (i * d + j)], v[2 * (i * d + j) + 1]))
}

fn hermitian(d: usize, v: &[f64]) -> Operator {
    hermitian_part(&matrix(d, v))
}

fn entries(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 2 * d * d)
}

fn thermal_model(d: usize, h: &[f64], l: &[f64], gamma0: f64, cutoff: f64, t: f64) -> SystemModel {
    let bath = BathModel::thermal(vec![gamma0], cutoff, t).unwrap();
    SystemModel::new(hermitian(d, h) * c(2.0, 0.0), vec![hermitian(d, l)], bath).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sandwich_matches_matrix_product(a in entries(3), b in entries(3), r in entries(3)) {
        let (a, b, r) = (matrix(3, &a), matrix(3, &b), matrix(3, &r));
        let s = SuperOperator::sandwich(&a, &b);
        prop_assert!(max_abs(&(s.apply(&r) - &a * &r * &b)) < 1e-12);
    }

    #[test]
    fn generator_preserves_trace_and_hermiticity(
        h in entries(3), l in entries(3), t in 0.0f64..5.0, temp in 0.05f64..3.0, cutoff in 0.5f64..10.0,
    ) {
        let m = thermal_model(3, &h, &l, 0.1, cutoff, temp);
        for g in [build_generator(&m, Mode::FullTime, Some(t)).unwrap(), build_generator(&m, Mode::Stationary, None).unwrap()] {
            prop_assert!(g.trace_residual() < 1e-10);
            prop_assert!(g.hermiticity_residual() < 1e-10);
        }
    }

    #[test]
    fn kms_holds_for_thermal_baths(cutoff in 0.2f64..50.0, temp in 0.01f64..20.0) {
        let b = BathModel::thermal(vec![0.3], cutoff, temp).unwrap();
        let grid: Vec<f64> = (0..401).map(|k| -10.0 * cutoff + 20.0 * cutoff * k as f64 / 400.0).collect();
        prop_assert!(b.kms_residual(&grid).unwrap() < 1e-9);
        prop_assert!(b.fdi_check(&grid).unwrap().min_eigenvalue >= -1e-12);
    }

    #[test]
    fn fdi_holds_for_ou_baths(a in entries(2), lambda in 0.1f64..5.0) {
        let a = matrix(2, &a);
        let c0 = &a * a.adjoint();
        let b = BathModel::ou(c0, lambda).unwrap();
        let grid: Vec<f64> = (0..401).map(|k| -10.0 * lambda + 20.0 * lambda * k as f64 / 400.0).collect();
        prop_assert!(b.fdi_check(&grid).unwrap().min_eigenvalue >= -1e-12);
    }

    #[test]
    fn pauli_rates_are_conservative_and_thermal(h in entries(3), l in entries(3), temp in 0.1f64..3.0) {
        let m = thermal_model(3, &h, &l, 0.1, 6.0, temp);
        let p = pauli_system(&m).unwrap();
        prop_assert!(p.column_sum_residual() < 1e-12);
        let g = DVector::from_vec(m.basis().gibbs(temp));
        prop_assert!((&p.w * g).amax() <= 1e-8 * p.w.amax());
        for z in &p.eigenvalues {
            prop_assert!(z.re <= 1e-12);
        }
    }

    #[test]
    fn decoherence_identity(h in entries(4), l in entries(4), temp in 0.1f64..3.0) {
        let m = thermal_model(4, &h, &l, 0.05, 8.0, temp);
        let w = pauli_system(&m).unwrap().w;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let closed = off_frequency_shift(&m, i, j).unwrap().re;
                    prop_assert!((closed - decoherence_rate(&m, &w, i, j).unwrap()).abs() < 1e-10);
                    prop_assert!(closed <= 0.5 * (w[(i, i)] + w[(j, j)]) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn magnus_propagator_is_cp_and_trace_preserving(h in entries(2), l in entries(2), t in 0.1f64..8.0) {
        let m = thermal_model(2, &h, &l, 0.1, 5.0, 0.7);
        let g = magnus_propagator(&m, t).unwrap();
        prop_assert!(g.min_choi_eigenvalue() >= -1e-10);
        prop_assert!(g.trace_map_residual() < 1e-10);
    }

    #[test]
    fn propagation_keeps_trace(h in entries(2), l in entries(2), r in entries(2)) {
        let m = thermal_model(2, &h, &l, 0.05, 5.0, 0.5);
        let a = matrix(2, &r);
        let rho = &a * a.adjoint();
        let tr = rho.trace();
        let rho = rho / tr;
        let out = propagate(&m, &rho, &[0.0, 1.0, 3.0], &PropagateOptions::default()).unwrap();
        for s in &out.states {
            prop_assert!((s.trace() - c(1.0, 0.0)).norm() < 1e-10);
            prop_assert!(max_abs(&(s - s.adjoint())) < 1e-10);
        }
    }
}

#[test]
fn zero_temperature_pauli_has_no_upward_rates() {
    let h = Operator::from_diagonal(&DVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0), c(2.5, 0.0)]));
    let l = DMatrix::from_fn(3, 3, |i, j| c(1.0 / (1.0 + i as f64 + j as f64), 0.0));
    let m = SystemModel::new(h, vec![l], BathModel::thermal(vec![0.1], 5.0, 0.0).unwrap()).unwrap();
    let w = pauli_system(&m).unwrap().w;
    for i in 0..3 {
        for j in 0..i {
            assert_eq!(w[(i, j)], 0.0);
        }
    }
}
