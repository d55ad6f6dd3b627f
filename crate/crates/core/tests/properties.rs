use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use wassoed_core::bayes::{reweight, GaussianNoiseModel, LinearGaussianModel};
use wassoed_core::linalg;
use wassoed_core::measures::{EmpiricalMeasure, GaussianMeasure, Measure};
use wassoed_core::models::MatrixModel;
use wassoed_core::utilities::{
    eig_gaussian, u2_gaussian_closed_form, u2_gaussian_via_generalized_eigen, u2_nested, InnerMethod, OuterRule,
};
use wassoed_core::wasserstein::{moment_bound_check, wp_discrete_cost};

fn atoms(dim: usize, max_len: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    (1..=max_len).prop_flat_map(move |n| {
        (
            prop::collection::vec(-3.0..3.0f64, n * dim),
            prop::collection::vec(0.05..1.0f64, n),
        )
            .prop_map(move |(pts, w)| EmpiricalMeasure::from_masses(dim, pts, &w).unwrap())
    })
}

fn wp(a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: f64) -> f64 {
    wp_discrete_cost(a, b, p).unwrap().0.powf(1.0 / p)
}

fn spd(entries: Vec<f64>, n: usize, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_vec(n, n, entries);
    &a * a.transpose() + DMatrix::identity(n, n) * ridge
}

fn linear_instance() -> impl Strategy<Value = LinearGaussianModel> {
    (1..=4usize, 1..=4usize).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(-1.0..1.0f64, n * n),
            prop::collection::vec(-2.0..2.0f64, d * n),
            prop::collection::vec(-1.0..1.0f64, d * d),
            prop::collection::vec(-1.0..1.0f64, n),
        )
            .prop_map(move |(c, g, gam, m)| {
                LinearGaussianModel::new(
                    DMatrix::from_vec(d, n, g),
                    spd(gam, d, 0.2),
                    GaussianMeasure::new(DVector::from_vec(m), spd(c, n, 0.1)).unwrap(),
                )
                .unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metric_axioms(a in atoms(2, 12), b in atoms(2, 12), c in atoms(2, 12), p in prop::sample::select(vec![1.0, 2.0, 3.0])) {
        let ab = wp(&a, &b, p);
        let ba = wp(&b, &a, p);
        let ac = wp(&a, &c, p);
        let cb = wp(&c, &b, p);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab));
        prop_assert!(ab <= ac + cb + 1e-9);
        prop_assert!(wp(&a, &a, p) <= 1e-12);
    }

    #[test]
    fn monotone_in_p(a in atoms(1, 16), b in atoms(1, 16)) {
        let w1 = wp(&a, &b, 1.0);
        let w2 = wp(&a, &b, 2.0);
        let w3 = wp(&a, &b, 3.0);
        prop_assert!(w1 <= w2 + 1e-9);
        prop_assert!(w2 <= w3 + 1e-9);
    }

    #[test]
    fn moment_bound(a in atoms(3, 10), b in atoms(3, 10), p in 1.0..4.0f64) {
        let (a, b): (Measure, Measure) = (a.into(), b.into());
        prop_assert!(moment_bound_check(&a, &b, p).unwrap());
    }

    #[test]
    fn lyapunov(a in atoms(2, 20), p in 1.0..3.0f64, dq in 0.0..3.0f64) {
        let q = p + dq;
        let m: Measure = a.into();
        prop_assert!(m.moment(p).unwrap().powf(1.0 / p) <= m.moment(q).unwrap().powf(1.0 / q) * (1.0 + 1e-12));
    }

    #[test]
    fn reweighting_normalizes(prior in prop::collection::vec(0.0..1.0f64, 1..50), energies in prop::collection::vec(0.0..2000.0f64, 50)) {
        prop_assume!(prior.iter().any(|w| *w > 0.0));
        let (w, _) = reweight(&prior, &energies[..prior.len()]).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn posterior_shrinks(model in linear_instance()) {
        let diff = model.prior().cov() - model.posterior_cov().unwrap();
        let eig = linalg::symmetric_eigenvalues(&linalg::symmetrize(&diff));
        prop_assert!(eig.iter().all(|l| *l >= -1e-10));
    }

    #[test]
    fn gaussian_u2_routes_agree(model in linear_instance()) {
        let a = u2_gaussian_closed_form(&model).unwrap().value;
        let b = u2_gaussian_via_generalized_eigen(&model).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1e-12), "{} vs {}", a, b);
        let prior: Measure = model.prior().clone().into();
        let bound = 4.0 * prior.moment(2.0).unwrap();
        prop_assert!(a <= bound * (1.0 + 1e-6));
        let noise = GaussianNoiseModel::new(Arc::new(MatrixModel::new(model.g().clone())), model.gamma().clone()).unwrap();
        let outer = OuterRule::evidence(model.g().nrows(), 33).unwrap();
        let c = u2_nested(&prior, &noise, &[], &outer, &InnerMethod::GaussianClosedForm).unwrap().value;
        prop_assert!((a - c).abs() <= 1e-8 * a.max(1e-12), "{} vs {}", a, c);
    }

    #[test]
    fn eig_grows_as_noise_shrinks(g in 0.1..3.0f64, gamma in 0.01..2.0f64, c0 in 0.1..3.0f64, factor in 0.1..0.9f64) {
        let make = |gamma: f64| LinearGaussianModel::new(
            DMatrix::from_element(1, 1, g),
            DMatrix::from_element(1, 1, gamma),
            GaussianMeasure::univariate(0.0, c0).unwrap(),
        ).unwrap();
        let loose = eig_gaussian(&make(gamma)).unwrap().value;
        let tight = eig_gaussian(&make(gamma * factor)).unwrap().value;
        prop_assert!(tight > loose);
    }
}
