//! Probability measures: Gaussian, weighted empirical and uniform-on-box.
//!
//! All values are immutable after construction. Sampling takes an explicit
//! seed; there is no hidden global generator.

mod empirical;
mod gaussian;
mod uniform;
pub mod univariate;

pub use empirical::EmpiricalMeasure;
pub use gaussian::GaussianMeasure;
pub use uniform::UniformBoxMeasure;
pub use univariate::{DiscreteCdf, TabulatedCdf, Univariate};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Measure {
    Gaussian(GaussianMeasure),
    Empirical(EmpiricalMeasure),
    Uniform(UniformBoxMeasure),
}

impl From<GaussianMeasure> for Measure {
    fn from(m: GaussianMeasure) -> Self {
        Measure::Gaussian(m)
    }
}

impl From<EmpiricalMeasure> for Measure {
    fn from(m: EmpiricalMeasure) -> Self {
        Measure::Empirical(m)
    }
}

impl From<UniformBoxMeasure> for Measure {
    fn from(m: UniformBoxMeasure) -> Self {
        Measure::Uniform(m)
    }
}

impl Measure {
    pub fn dim(&self) -> usize {
        match self {
            Measure::Gaussian(g) => g.dim(),
            Measure::Empirical(e) => e.dim(),
            Measure::Uniform(u) => u.dim(),
        }
    }

    /// `count` i.i.d. draws as an equal-weight empirical measure.
    pub fn sample(&self, count: usize, seed: u64) -> Result<EmpiricalMeasure> {
        match self {
            Measure::Gaussian(g) => g.sample(count, seed),
            Measure::Uniform(u) => u.sample(count, seed),
            Measure::Empirical(e) => {
                if count == 0 {
                    return Err(Error::arg("sample count must be positive"));
                }
                use rand::distr::{weighted::WeightedIndex, Distribution};
                let dist = WeightedIndex::new(e.weights()).map_err(|err| Error::arg(err.to_string()))?;
                let mut rng = crate::rng::rng_from_seed(seed);
                let mut points = Vec::with_capacity(count * e.dim());
                for _ in 0..count {
                    points.extend_from_slice(e.atom(dist.sample(&mut rng)));
                }
                EmpiricalMeasure::uniform(e.dim(), points)
            }
        }
    }

    /// `M_p(μ) = ∫ ‖x‖^p μ(dx)`.
    pub fn moment(&self, p: f64) -> Result<f64> {
        match self {
            Measure::Gaussian(g) => g.moment(p),
            Measure::Empirical(e) => e.moment(p),
            Measure::Uniform(u) => u.moment(p),
        }
    }

    /// One-dimensional view; fails for `dim ≠ 1`.
    pub fn univariate(&self) -> Result<Univariate> {
        if self.dim() != 1 {
            return Err(Error::UnsupportedDimension {
                expected: 1,
                got: self.dim(),
            });
        }
        Ok(match self {
            Measure::Gaussian(g) => {
                let sd = g.sd_1d()?;
                if sd == 0.0 {
                    Univariate::Discrete(DiscreteCdf::new(&[g.mean()[0]], &[1.0])?)
                } else {
                    Univariate::Gaussian { mean: g.mean()[0], sd }
                }
            }
            Measure::Uniform(u) => Univariate::Uniform {
                lower: u.lower()[0],
                upper: u.upper()[0],
            },
            Measure::Empirical(e) => Univariate::Discrete(DiscreteCdf::new(e.points(), e.weights())?),
        })
    }

    pub fn cdf_1d(&self, x: f64) -> Result<f64> {
        Ok(self.univariate()?.cdf(x))
    }

    pub fn quantile_1d(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::arg(format!("quantile level {u} is outside (0, 1)")));
        }
        Ok(self.univariate()?.quantile(u))
    }
}

pub fn sample(measure: &Measure, count: usize, seed: u64) -> Result<EmpiricalMeasure> {
    measure.sample(count, seed)
}

pub fn moment_p(measure: &Measure, p: f64) -> Result<f64> {
    measure.moment(p)
}

pub fn cdf_1d(measure: &Measure, x: f64) -> Result<f64> {
    measure.cdf_1d(x)
}

pub fn quantile_1d(measure: &Measure, u: f64) -> Result<f64> {
    measure.quantile_1d(u)
}
