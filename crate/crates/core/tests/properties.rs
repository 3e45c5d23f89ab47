//! Algebraic invariants over random small models.

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use zeno_core::histories::{candidate_probability, decoherence_functional, make_history_pair, HistoryEvaluator};
use zeno_core::linalg::{max_abs, CMatrix, CVector};
use zeno_core::model::{ModelSystem, Projector, StateVector};
use zeno_core::propagators::{projected_commutator, restricted_propagator_closed, Method, RestrictedDynamics};

#[derive(Debug, Clone)]
struct Case {
    h: CMatrix,
    support: Vec<usize>,
    psi: CVector,
}

fn hermitian(dim: usize) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), dim * dim).prop_map(move |entries| {
        let mut m = DMatrix::from_fn(dim, dim, |i, j| {
            let (re, im) = entries[i * dim + j];
            Complex64::new(re, im)
        });
        for i in 0..dim {
            m[(i, i)].im = 0.0;
            for j in 0..i {
                m[(i, j)] = m[(j, i)].conj();
            }
        }
        m
    })
}

fn case() -> impl Strategy<Value = Case> {
    (1usize..=16).prop_flat_map(|dim| {
        (
            hermitian(dim),
            prop::collection::vec(any::<bool>(), dim),
            prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), dim),
        )
            .prop_map(|(h, mask, amps)| Case {
                h,
                support: mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect(),
                psi: CVector::from_iterator(amps.len(), amps.into_iter().map(|(r, i)| Complex64::new(r, i))),
            })
            .prop_filter("state needs weight", |c| c.psi.norm() > 1e-3)
    })
}

fn build(c: &Case) -> (ModelSystem, Projector, StateVector) {
    let dim = c.h.nrows();
    (
        ModelSystem::custom(c.h.clone()).unwrap(),
        Projector::new(dim, c.support.clone()).unwrap(),
        StateVector::new(c.psi.clone()).unwrap(),
    )
}

fn dt_choice() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.1), Just(1.0), Just(10.0), 0.0..20.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn closed_form_satisfies_zeno_identity(c in case(), dt in dt_choice()) {
        let (model, p, _) = build(&c);
        let g = restricted_propagator_closed(&model, &p, dt).unwrap().operator.into_matrix();
        let defect = max_abs(&(g.adjoint() * &g - p.to_matrix()));
        prop_assert!(defect <= 1e-9, "defect {defect:e}");
    }

    #[test]
    fn candidate_probability_is_subspace_weight(c in case(), dt in dt_choice()) {
        let (model, p, psi) = build(&c);
        let g = restricted_propagator_closed(&model, &p, dt).unwrap().operator;
        let prob = candidate_probability(&g, &psi).unwrap();
        prop_assert!((prob - p.expectation(&psi)).abs() <= 1e-9);
    }

    #[test]
    fn row_sum_is_one(c in case(), dt in dt_choice()) {
        let (model, p, psi) = build(&c);
        let r = HistoryEvaluator::new(&model, &p, &psi, 1e-8).unwrap().report(dt);
        prop_assert!((r.row_sum() - 1.0).abs() <= 1e-9, "row sum {}", r.row_sum());
        prop_assert!(r.d_normalized >= 0.0 && r.d_normalized <= 1.0 + 1e-9);
    }

    #[test]
    fn row_sum_holds_for_product_pairs(c in case(), dt in 0.0..5.0f64, k in 0u32..6) {
        let (model, p, psi) = build(&c);
        let pair = make_history_pair(&model, &p, dt, Method::Product(1 << k)).unwrap();
        let r = decoherence_functional(&pair, &psi, 1e-8).unwrap();
        prop_assert!((r.row_sum() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn restricted_evolution_is_a_semigroup(c in case(), t1 in 0.0..5.0f64, t2 in 0.0..5.0f64) {
        let (model, p, _) = build(&c);
        let dynamics = RestrictedDynamics::new(&model, &p).unwrap();
        let lhs = dynamics.restricted(t1) * dynamics.restricted(t2);
        let rhs = dynamics.restricted(t1 + t2);
        prop_assert!(max_abs(&(lhs - rhs)) <= 1e-9);
    }

    #[test]
    fn projected_commutator_vanishes(c in case()) {
        let (model, p, _) = build(&c);
        prop_assert!(max_abs(&projected_commutator(&model, &p)) <= 1e-14);
    }

    #[test]
    fn verdict_follows_normalized_measure(c in case(), dt in dt_choice(), tol_exp in -12i32..-1) {
        let (model, p, psi) = build(&c);
        let tol = 10f64.powi(tol_exp);
        let r = HistoryEvaluator::new(&model, &p, &psi, tol).unwrap().report(dt);
        prop_assert_eq!(r.is_decoherent(), r.d_normalized <= tol);
        // the gap to the subspace weight is |D| itself once g_r^dagger g_r = P
        prop_assert!((r.lhs_rhs_gap - r.d_alpha_beta.norm()).abs() <= 1e-9);
    }

    #[test]
    fn scan_preserves_input_order(c in case(), mut dts in prop::collection::vec(0.0..10.0f64, 1..12)) {
        let (model, p, psi) = build(&c);
        dts.sort_by(f64::total_cmp);
        let evaluator = HistoryEvaluator::new(&model, &p, &psi, 1e-8).unwrap();
        let scan = evaluator.scan(&dts);
        for (r, &dt) in scan.iter().zip(&dts) {
            prop_assert_eq!(r.dt, dt);
            prop_assert_eq!(r.d_normalized, evaluator.report(dt).d_normalized);
        }
    }
}
