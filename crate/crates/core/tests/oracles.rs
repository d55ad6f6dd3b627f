use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use wassoed_core::bayes::GaussianNoiseModel;
use wassoed_core::measures::{EmpiricalMeasure, GaussianMeasure, Measure, Univariate};
use wassoed_core::models::{linear_1d_model, LINEAR_1D_NOISE_VARIANCE};
use wassoed_core::quadrature::gauss_hermite;
use wassoed_core::rng;
use wassoed_core::transport::{transport_cost, transport_map_1d};
use wassoed_core::utilities::{u1_empirical, u1_nested, EmpiricalOuter, OuterRule};
use wassoed_core::wasserstein::{w1_1d, w1_cdf_route, w1_quantile_route, w2_gaussian, w2_gaussian_squared, wp_discrete};

fn random_gaussian_2d(r: &mut impl Rng) -> GaussianMeasure {
    let a = DMatrix::from_fn(2, 2, |_, _| r.sample::<f64, _>(StandardNormal));
    let cov = &a * a.transpose() + DMatrix::identity(2, 2) * 0.2;
    let mean = DVector::from_fn(2, |_, _| r.sample::<f64, _>(StandardNormal));
    GaussianMeasure::new(mean, cov).unwrap()
}

#[test]
fn sampled_w2_brackets_closed_form() {
    let mut r = rng::rng_from_seed(2024);
    for pair in 0..4 {
        let (a, b) = (random_gaussian_2d(&mut r), random_gaussian_2d(&mut r));
        let exact = w2_gaussian(&a, &b).unwrap();
        let est: Vec<f64> = (0..3)
            .map(|s| {
                let xa = a.sample(1024, rng::derive_seed(7, &[pair, s, 0])).unwrap();
                let xb = b.sample(1024, rng::derive_seed(7, &[pair, s, 1])).unwrap();
                wp_discrete(&xa, &xb, 2.0).unwrap().0
            })
            .collect();
        let lo = est.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = est.iter().cloned().fold(0.0, f64::max);
        assert!(exact >= 0.9 * lo && exact <= 1.1 * hi, "{exact} outside [{lo}, {hi}]");
    }
}

#[test]
fn w1_routes_agree_on_gaussians() {
    let mut r = rng::rng_from_seed(31);
    for _ in 0..20 {
        let a = Univariate::gaussian(r.random_range(-2.0..2.0), r.random_range(0.2..3.0)).unwrap();
        let b = Univariate::gaussian(r.random_range(-2.0..2.0), r.random_range(0.2..3.0)).unwrap();
        let c = w1_cdf_route(&a, &b, 1024).unwrap();
        let q = w1_quantile_route(&a, &b, 1024).unwrap();
        assert!((c - q).abs() < 1e-6, "{c} vs {q}");
    }
}

#[test]
fn empirical_w1_matches_discrete_solver() {
    let mut r = rng::rng_from_seed(4);
    for _ in 0..10 {
        let n = r.random_range(2..40);
        let a = EmpiricalMeasure::uniform(1, (0..n).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap();
        let masses: Vec<f64> = (0..n + 3).map(|_| r.random_range(0.1..1.0)).collect();
        let b = EmpiricalMeasure::from_masses(1, (0..n + 3).map(|_| r.random_range(-3.0..3.0)).collect(), &masses).unwrap();
        let lp = wp_discrete(&a, &b, 1.0).unwrap().0;
        let cdf = w1_1d(&a.into(), &b.into(), 64).unwrap();
        assert!((lp - cdf).abs() < 1e-10, "{lp} vs {cdf}");
    }
}

#[test]
fn gaussian_transport_cost_is_w2_squared() {
    let mut r = rng::rng_from_seed(12);
    let rule = gauss_hermite(40).unwrap();
    for _ in 0..10 {
        let (m1, s1) = (r.random_range(-2.0..2.0), r.random_range(0.2..2.0));
        let (m2, s2) = (r.random_range(-2.0..2.0), r.random_range(0.2..2.0));
        let a = GaussianMeasure::univariate(m1, s1 * s1).unwrap();
        let b = GaussianMeasure::univariate(m2, s2 * s2).unwrap();
        let t = transport_map_1d(&a.clone().into(), &b.clone().into()).unwrap();
        let cost = transport_cost(&t, &rule.affine(&[m1], &[s1])).unwrap();
        let exact = w2_gaussian_squared(&a, &b).unwrap();
        assert!((cost - exact).abs() < 1e-6, "{cost} vs {exact}");
    }
}

#[test]
fn empirical_prior_converges_to_continuous_utility() {
    // U₁^M approaches U₁ as the atom count grows.
    let model = GaussianNoiseModel::isotropic(Arc::new(linear_1d_model()), LINEAR_1D_NOISE_VARIANCE).unwrap();
    let prior: Measure = GaussianMeasure::standard(1).into();
    let theta = [0.8];
    let exact = u1_nested(&prior, &model, &theta, &OuterRule::evidence(1, 80).unwrap(), 1024).unwrap().value;
    let err = |m: usize| -> f64 {
        (0..8)
            .map(|k| {
                let atoms = prior.sample(m, rng::derive_seed(5, &[m as u64, k])).unwrap();
                (u1_empirical(&atoms, &model, &theta, &EmpiricalOuter::default()).unwrap().value - exact).abs()
            })
            .sum::<f64>()
            / 8.0
    };
    let (small, large) = (err(30), err(3000));
    assert!(large < small / 3.0, "{small} -> {large}");
}
