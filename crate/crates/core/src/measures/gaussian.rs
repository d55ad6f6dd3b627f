use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature;
use crate::rng;
use crate::special;

/// Multivariate normal distribution `N(mean, cov)` with a PSD covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::arg(format!(
                "mean has dimension {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("mean has non-finite entries"));
        }
        linalg::check_covariance(&cov, "covariance")?;
        Ok(Self { mean, cov })
    }

    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, variance),
        )
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    /// Builds from a covariance that is symmetric only up to rounding,
    /// symmetrizing it first.
    pub(crate) fn from_computed(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(mean, linalg::symmetrize(&cov))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Standard deviation of a one-dimensional measure.
    pub fn sd_1d(&self) -> Result<f64> {
        self.require_1d()?;
        Ok(self.cov[(0, 0)].max(0.0).sqrt())
    }

    pub(crate) fn require_1d(&self) -> Result<()> {
        if self.dim() != 1 {
            return Err(Error::UnsupportedDimension {
                expected: 1,
                got: self.dim(),
            });
        }
        Ok(())
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<EmpiricalMeasure> {
        if count == 0 {
            return Err(Error::arg("sample count must be positive"));
        }
        let chol = linalg::cholesky_with_jitter(&self.cov)
            .map_err(|_| Error::arg("covariance is singular; cannot factor for sampling"))?;
        let l = chol.l();
        let n = self.dim();
        let mut rng = rng::rng_from_seed(seed);
        let mut points = Vec::with_capacity(count * n);
        let mut z = DVector::zeros(n);
        for _ in 0..count {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            let x = &self.mean + &l * &z;
            points.extend(x.iter());
        }
        EmpiricalMeasure::uniform(n, points)
    }

    /// `E‖X‖^p`.
    pub fn moment(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::arg("moment order must be at least 1"));
        }
        if p == 2.0 {
            return Ok(self.mean.norm_squared() + self.cov.trace());
        }
        if self.dim() == 1 {
            let m = self.mean[0];
            let s = self.cov[(0, 0)].max(0.0).sqrt();
            if s == 0.0 {
                return Ok(m.abs().powf(p));
            }
            if p == 1.0 {
                let r = m / s;
                return Ok(s * 2.0 * special::normal_pdf(r) + m * (1.0 - 2.0 * special::normal_cdf(-r)));
            }
            return Ok(abs_moment_1d(m, s, p));
        }
        // Tensor Gauss–Hermite for low dimension, sparse grid beyond.
        let chol = linalg::cholesky_with_jitter(&self.cov)?;
        let l = chol.l();
        let rule = if self.dim() <= 3 {
            quadrature::tensor_product(&vec![quadrature::gauss_hermite(48)?; self.dim()])
        } else {
            quadrature::smolyak(self.dim(), 6, quadrature::RuleFamily::GaussHermite)?
        };
        let mut total = 0.0;
        for (node, w) in rule.iter() {
            let z = DVector::from_column_slice(node);
            let x = &self.mean + &l * z;
            total += w * x.norm().powf(p);
        }
        Ok(total)
    }

    /// Log-density; requires a positive definite covariance.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let chol = linalg::cholesky_strict(&self.cov, "covariance")?;
        let diff = DVector::from_column_slice(x) - &self.mean;
        let white = chol.l().solve_lower_triangular(&diff).ok_or_else(|| Error::numeric("triangular solve failed"))?;
        let n = self.dim() as f64;
        Ok(-0.5 * white.norm_squared() - 0.5 * linalg::log_det(&chol) - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
    }
}

/// `E|m + sZ|^p` by Clenshaw–Curtis panels split at the kink `z = −m/s`.
fn abs_moment_1d(m: f64, s: f64, p: f64) -> f64 {
    let kink = (-m / s).clamp(-14.0, 14.0);
    let f = |z: f64| (m + s * z).abs().powf(p) * special::normal_pdf(z);
    let mut total = 0.0;
    for (a, b) in [(-14.0, kink), (kink, 14.0)] {
        if b - a <= 0.0 {
            continue;
        }
        let panels = 16;
        let h = (b - a) / panels as f64;
        let rule = quadrature::clenshaw_curtis(33, 0.0, 1.0).expect("valid rule");
        for k in 0..panels {
            let lo = a + k as f64 * h;
            for (node, w) in rule.iter() {
                total += w * h * f(lo + h * node[0]);
            }
        }
    }
    total
}

#[cfg(test)]
pub(super) mod tests_support {
    pub fn abs_moment(m: f64, s: f64, p: f64) -> f64 {
        super::abs_moment_1d(m, s, p)
    }
}
