//! Likelihood energies, conjugate Gaussian posteriors and reweighted
//! empirical posteriors.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::{EmpiricalMeasure, GaussianMeasure};
use crate::models::ForwardModel;

/// Forward model with additive noise `ε ~ N(0, Γ)`.
#[derive(Clone)]
pub struct GaussianNoiseModel {
    forward: Arc<dyn ForwardModel>,
    noise_cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `L⁻¹` with `Γ = L Lᵀ`, so `‖r‖²_Γ = ‖L⁻¹ r‖²`.
    whitener: DMatrix<f64>,
    log_det: f64,
}

impl std::fmt::Debug for GaussianNoiseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianNoiseModel")
            .field("forward", &self.forward.name())
            .field("noise_cov", &self.noise_cov)
            .finish()
    }
}

impl GaussianNoiseModel {
    pub fn new(forward: Arc<dyn ForwardModel>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let d = forward.output_dim();
        if noise_cov.nrows() != d || noise_cov.ncols() != d {
            return Err(Error::arg(format!(
                "noise covariance must be {d}x{d}, got {}x{}",
                noise_cov.nrows(),
                noise_cov.ncols()
            )));
        }
        linalg::check_covariance(&noise_cov, "noise covariance")?;
        let chol = linalg::cholesky_strict(&noise_cov, "noise covariance")?;
        let whitener = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| Error::arg("noise covariance is singular"))?;
        let log_det = linalg::log_det(&chol);
        Ok(Self { forward, noise_cov, chol, whitener, log_det })
    }

    /// Isotropic noise `Γ = σ² I`.
    pub fn isotropic(forward: Arc<dyn ForwardModel>, variance: f64) -> Result<Self> {
        let d = forward.output_dim();
        Self::new(forward, DMatrix::identity(d, d) * variance)
    }

    pub fn forward(&self) -> &Arc<dyn ForwardModel> {
        &self.forward
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn noise_cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn whitener(&self) -> &DMatrix<f64> {
        &self.whitener
    }

    pub fn noise_log_det(&self) -> f64 {
        self.log_det
    }

    pub fn output_dim(&self) -> usize {
        self.forward.output_dim()
    }

    /// Whether `Γ` is diagonal, which lets callers whiten componentwise.
    pub fn is_diagonal(&self) -> bool {
        let d = self.output_dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.noise_cov[(i, j)] == 0.0))
    }

    /// `G(x; θ)` with a finiteness check.
    pub fn predict(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.forward.evaluate_into(x, theta, &mut out)?;
        if let Some(v) = out.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "forward model {} returned {v} at x = {x:?}, theta = {theta:?}",
                self.forward.name()
            )));
        }
        Ok(out)
    }

    /// `½‖G(x;θ) − y‖²_Γ` for a precomputed prediction.
    pub fn energy_of_prediction(&self, prediction: &[f64], y: &[f64]) -> f64 {
        let d = prediction.len();
        let mut total = 0.0;
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.whitener[(i, j)] * (prediction[j] - y[j]);
            }
            total += acc * acc;
        }
        0.5 * total
    }

    /// Likelihood energy `Φ(x, y; θ) = ½‖G(x;θ) − y‖²_Γ`.
    pub fn likelihood_energy(&self, x: &[f64], y: &[f64], theta: &[f64]) -> Result<f64> {
        if y.len() != self.output_dim() {
            return Err(Error::arg(format!(
                "observation has length {}, expected {}",
                y.len(),
                self.output_dim()
            )));
        }
        Ok(self.energy_of_prediction(&self.predict(x, theta)?, y))
    }

    /// Draws `y = G(x;θ) + ε`.
    pub fn sample_observation<R: Rng + ?Sized>(&self, x: &[f64], theta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mean = self.predict(x, theta)?;
        let z = DVector::from_fn(self.output_dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let e = self.chol.l() * z;
        Ok(mean.iter().zip(e.iter()).map(|(m, e)| m + e).collect())
    }

    /// Linear-Gaussian view at `θ` when the forward map is linear in `x`.
    pub fn linearize(&self, prior: &GaussianMeasure, theta: &[f64]) -> Option<Result<LinearGaussianModel>> {
        self.forward
            .linear_operator(theta)
            .map(|g| LinearGaussianModel::new(g, self.noise_cov.clone(), prior.clone()))
    }
}

/// `y = G x + ε`, `ε ~ N(0, Γ)`, prior `N(m₀, C₀)`.
#[derive(Clone, Debug)]
pub struct LinearGaussianModel {
    g: DMatrix<f64>,
    gamma: DMatrix<f64>,
    prior: GaussianMeasure,
}

impl LinearGaussianModel {
    pub fn new(g: DMatrix<f64>, gamma: DMatrix<f64>, prior: GaussianMeasure) -> Result<Self> {
        let (d, n) = g.shape();
        if n != prior.dim() {
            return Err(Error::arg(format!("G has {n} columns but the prior has dimension {}", prior.dim())));
        }
        if gamma.shape() != (d, d) {
            return Err(Error::arg(format!("Γ must be {d}x{d}")));
        }
        linalg::check_covariance(&gamma, "noise covariance")?;
        linalg::cholesky_strict(&gamma, "noise covariance")?;
        Ok(Self { g, gamma, prior })
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn prior(&self) -> &GaussianMeasure {
        &self.prior
    }

    /// `S = Γ + G C₀ Gᵀ`, the evidence covariance.
    pub fn evidence_cov(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.gamma + &self.g * self.prior.cov() * self.g.transpose()))
    }

    /// `C_post = C₀ − (C₀Gᵀ) S⁻¹ (G C₀)`, symmetrized. Independent of `y`.
    pub fn posterior_cov(&self) -> Result<DMatrix<f64>> {
        let c0 = self.prior.cov();
        let s = linalg::cholesky_strict(&self.evidence_cov(), "evidence covariance")
            .map_err(|_| Error::numeric("evidence covariance factorization failed"))?;
        let gc0 = &self.g * c0;
        let k = s.solve(&gc0);
        Ok(linalg::symmetrize(&(c0 - gc0.transpose() * k)))
    }

    /// Gaussian posterior `N(x_post(y), C_post)`.
    pub fn conjugate_posterior(&self, y: &[f64]) -> Result<GaussianMeasure> {
        let d = self.g.nrows();
        if y.len() != d {
            return Err(Error::arg(format!("observation has length {}, expected {d}", y.len())));
        }
        let c0 = self.prior.cov();
        let m0 = self.prior.mean();
        let s = linalg::cholesky_strict(&self.evidence_cov(), "evidence covariance")
            .map_err(|_| Error::numeric("evidence covariance factorization failed"))?;
        let residual = DVector::from_column_slice(y) - &self.g * m0;
        let mean = m0 + c0 * self.g.transpose() * s.solve(&residual);
        GaussianMeasure::from_computed(mean, self.posterior_cov()?)
    }

    /// Log-density of `y` under `N(G m₀, Γ + G C₀ Gᵀ)`.
    pub fn evidence_logpdf(&self, y: &[f64]) -> Result<f64> {
        let mean = &self.g * self.prior.mean();
        GaussianMeasure::from_computed(mean, self.evidence_cov())?.log_density(y)
    }
}

/// Reweighted empirical measure with its normalizing constant.
#[derive(Clone, Debug)]
pub struct EmpiricalPosterior {
    pub measure: EmpiricalMeasure,
    /// `log Z_M(y) = log Σ_m w_m exp(−Φ(x^m, y))`.
    pub log_evidence: f64,
}

/// Normalized `w_m ∝ prior_m · exp(−Φ_m)` via log-sum-exp, and the log
/// normalizer.
pub fn reweight(prior_weights: &[f64], energies: &[f64]) -> Result<(Vec<f64>, f64)> {
    let shift = prior_weights
        .iter()
        .zip(energies)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, e)| -e)
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::DegenerateEvidence);
    }
    let mut weights: Vec<f64> = prior_weights
        .iter()
        .zip(energies)
        .map(|(w, e)| if *w > 0.0 { w * (-e - shift).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateEvidence);
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok((weights, shift + total.ln()))
}

/// Posterior on the prior atoms: weights `∝ prior weight · exp(−Φ(x^m, y))`.
pub fn empirical_posterior(
    prior_atoms: &EmpiricalMeasure,
    model: &GaussianNoiseModel,
    y: &[f64],
    theta: &[f64],
) -> Result<EmpiricalPosterior> {
    if prior_atoms.is_empty() {
        return Err(Error::arg("prior has no atoms"));
    }
    let energies = prior_atoms
        .atoms()
        .map(|x| model.likelihood_energy(x, y, theta))
        .collect::<Result<Vec<f64>>>()?;
    let (weights, log_evidence) = reweight(prior_atoms.weights(), &energies)?;
    Ok(EmpiricalPosterior { measure: prior_atoms.reweighted(weights)?, log_evidence })
}

/// Log-density of `y` under `N(G m₀, Γ + G C₀ Gᵀ)`.
pub fn evidence_logpdf(model: &LinearGaussianModel, y: &[f64]) -> Result<f64> {
    model.evidence_logpdf(y)
}

/// Gaussian posterior for a linear model.
pub fn conjugate_posterior(model: &LinearGaussianModel, y: &[f64]) -> Result<GaussianMeasure> {
    model.conjugate_posterior(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{linear_1d_model, MatrixModel};
    use crate::quadrature::gauss_hermite;

    fn scalar_model(g: f64, gamma: f64, c0: f64) -> LinearGaussianModel {
        LinearGaussianModel::new(
            DMatrix::from_element(1, 1, g),
            DMatrix::from_element(1, 1, gamma),
            GaussianMeasure::univariate(0.0, c0).unwrap(),
        )
        .unwrap()
    }

    fn identity_noise(gamma: f64) -> GaussianNoiseModel {
        let fwd: Arc<dyn ForwardModel> = Arc::new(MatrixModel::new(DMatrix::identity(1, 1)));
        GaussianNoiseModel::isotropic(fwd, gamma).unwrap()
    }

    #[test]
    fn energy_examples() {
        let m = identity_noise(1.0);
        assert_eq!(m.likelihood_energy(&[0.7], &[0.7], &[]).unwrap(), 0.0);
        assert_eq!(m.likelihood_energy(&[0.0], &[2.0], &[]).unwrap(), 2.0);
        let lin = GaussianNoiseModel::isotropic(Arc::new(linear_1d_model()), 0.05 * 0.05).unwrap();
        let e = lin.likelihood_energy(&[1.0], &[0.0], &[1.0]).unwrap();
        assert!((e - 5000.0).abs() < 1e-9);
    }

    #[test]
    fn conjugate_examples() {
        let post = scalar_model(0.0, 1.0, 1.0).conjugate_posterior(&[3.0]).unwrap();
        assert_eq!(post.mean()[0], 0.0);
        assert_eq!(post.cov()[(0, 0)], 1.0);
        let post = scalar_model(1.0, 1.0, 1.0).conjugate_posterior(&[2.0]).unwrap();
        assert!((post.cov()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((post.mean()[0] - 1.0).abs() < 1e-15);
        let post = scalar_model(1.0, 1e12, 1.0).conjugate_posterior(&[0.0]).unwrap();
        assert!((post.cov()[(0, 0)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn evidence_examples() {
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let v = scalar_model(0.0, 1.0, 1.0).evidence_logpdf(&[0.0]).unwrap();
        assert!((v + half_log_2pi).abs() < 1e-14);
        let v = scalar_model(1.0, 1.0, 1.0).evidence_logpdf(&[0.0]).unwrap();
        assert!((v + 0.5 * (4.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        // Normalization: ∫π(y)dy with y = √2·z under z ~ N(0,1).
        let s = 2f64.sqrt();
        let r = gauss_hermite(40).unwrap();
        let model = scalar_model(1.0, 1.0, 1.0);
        let total: f64 = r
            .iter()
            .map(|(z, w)| {
                let y = s * z[0];
                w * (model.evidence_logpdf(&[y]).unwrap() - crate::special::normal_logpdf(z[0])).exp() * s
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-8, "{total}");
    }

    #[test]
    fn reweighting_examples() {
        let (w, _) = reweight(&[0.5, 0.5], &[0.0, 3f64.ln()]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        let (w, _) = reweight(&[0.2, 0.3, 0.5], &[4.0, 4.0, 4.0]).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-15 && (w[2] - 0.5).abs() < 1e-15);
        // Extreme energies stay finite through the shift.
        let (w, log_z) = reweight(&[0.5, 0.5], &[1e5, 1e5 + 800.0]).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((log_z - (0.5f64.ln() - 1e5)).abs() < 1e-9);
        assert!(matches!(reweight(&[0.0, 1.0], &[0.0, f64::INFINITY]), Err(Error::DegenerateEvidence)));
    }

    #[test]
    fn tiny_noise_concentrates_on_nearest_atom() {
        let atoms = EmpiricalMeasure::uniform(1, vec![-1.0, 0.3, 0.35, 2.0]).unwrap();
        let post = empirical_posterior(&atoms, &identity_noise(1e-4), &[0.31], &[]).unwrap();
        assert!(post.measure.weights()[1] >= 0.99);
    }

    #[test]
    fn log_evidence_matches_direct_sum() {
        let atoms = EmpiricalMeasure::uniform(1, vec![-0.4, 0.1, 0.9]).unwrap();
        let model = identity_noise(0.3);
        let y = [0.2];
        let post = empirical_posterior(&atoms, &model, &y, &[]).unwrap();
        let direct: f64 = atoms
            .atoms()
            .map(|x| (-model.likelihood_energy(x, &y, &[]).unwrap()).exp())
            .sum::<f64>()
            / 3.0;
        assert!((post.log_evidence.exp() - direct).abs() < 1e-12);
    }
}
