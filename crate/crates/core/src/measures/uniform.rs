use rand::Rng;

use super::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::quadrature;
use crate::rng;

/// Uniform distribution on an axis-aligned box.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformBoxMeasure {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl UniformBoxMeasure {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::arg("box bounds must have equal, positive length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::arg("box requires finite lower < upper componentwise"));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<EmpiricalMeasure> {
        if count == 0 {
            return Err(Error::arg("sample count must be positive"));
        }
        let mut rng = rng::rng_from_seed(seed);
        let mut points = Vec::with_capacity(count * self.dim());
        for _ in 0..count {
            for (l, u) in self.lower.iter().zip(&self.upper) {
                let r: f64 = rng.random();
                points.push(l + (u - l) * r);
            }
        }
        EmpiricalMeasure::uniform(self.dim(), points)
    }

    pub fn moment(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::arg("moment order must be at least 1"));
        }
        if p == 2.0 {
            return Ok(self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| (l * l + l * u + u * u) / 3.0)
                .sum());
        }
        if self.dim() == 1 {
            let (l, u) = (self.lower[0], self.upper[0]);
            let prim = |x: f64| x.signum() * x.abs().powf(p + 1.0) / (p + 1.0);
            return Ok((prim(u) - prim(l)) / (u - l));
        }
        let rule = if self.dim() <= 3 {
            let rules: Vec<_> = self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| quadrature::clenshaw_curtis(65, *l, *u))
                .collect::<Result<_>>()?;
            quadrature::tensor_product(&rules)
        } else {
            quadrature::smolyak_on_box(&self.lower, &self.upper, 6)?
        };
        let vol = self.volume();
        Ok(rule
            .iter()
            .map(|(x, w)| w * x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
            .sum::<f64>()
            / vol)
    }
}
