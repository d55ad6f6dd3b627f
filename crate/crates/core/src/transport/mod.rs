//! Transport maps: monotone rearrangements on the line and Brenier maps in
//! the plane from a Monge–Ampère solve.

use crate::error::{Error, Result};
use crate::measures::{Measure, Univariate};
use crate::quadrature::QuadratureRule;
use crate::special;

mod monge_ampere;

pub use monge_ampere::{
    solve_monge_ampere, BoxDomain, Density2d, FnDensity, GaussianDensity, InitialGuess, MongeAmpereOptions, MongeAmperePotential,
    MongeAmpereReport, UniformDensity,
};

/// A map `ℝⁿ → ℝⁿ` that can be pushed through a quadrature rule.
pub trait PointMap {
    fn dim(&self) -> usize;
    fn map_into(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
}

/// Monotone map `T = F_target⁻¹ ∘ F_source` on the line.
#[derive(Clone, Debug)]
pub struct TransportMap1D {
    source: Univariate,
    target: Univariate,
}

/// Builds the increasing map pushing `source` to `target`.
pub fn transport_map_1d(source: &Measure, target: &Measure) -> Result<TransportMap1D> {
    TransportMap1D::new(source.univariate()?, target.univariate()?)
}

impl TransportMap1D {
    pub fn new(source: Univariate, target: Univariate) -> Result<Self> {
        if !source.is_atomless() {
            return Err(Error::Unsupported(
                "transport map from a discrete source does not exist; use the discrete solver".into(),
            ));
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &Univariate {
        &self.source
    }

    pub fn target(&self) -> &Univariate {
        &self.target
    }

    /// The map in the opposite direction; needs an atomless target.
    pub fn reversed(&self) -> Result<Self> {
        Self::new(self.target.clone(), self.source.clone())
    }

    pub fn apply(&self, x: f64) -> f64 {
        match (&self.source, &self.target) {
            (Univariate::Gaussian { mean: m1, sd: s1 }, Univariate::Gaussian { mean: m2, sd: s2 }) => {
                m2 + s2 / s1 * (x - m1)
            }
            (Univariate::Gaussian { mean, sd }, _) => {
                // Work in the nearer tail so the CDF keeps full precision.
                let z = (x - mean) / sd;
                if z > 0.0 {
                    self.target.quantile(1.0 - special::normal_sf(z))
                } else {
                    self.target.quantile(special::normal_cdf(z))
                }
            }
            (_, Univariate::Gaussian { mean, sd }) => {
                let u = self.source.cdf(x);
                if u > 0.5 {
                    mean - sd * special::normal_quantile(1.0 - u)
                } else {
                    mean + sd * special::normal_quantile(u)
                }
            }
            _ => self.target.quantile(self.source.cdf(x)),
        }
    }
}

impl PointMap for TransportMap1D {
    fn dim(&self) -> usize {
        1
    }
    fn map_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != 1 {
            return Err(Error::UnsupportedDimension { expected: 1, got: x.len() });
        }
        out[0] = self.apply(x[0]);
        Ok(())
    }
}

/// `∫ ‖x − T(x)‖² dμ(x)` with `rule` a quadrature for `μ`.
pub fn transport_cost<M: PointMap + ?Sized>(map: &M, rule: &QuadratureRule) -> Result<f64> {
    if rule.dim() != map.dim() {
        return Err(Error::UnsupportedDimension { expected: map.dim(), got: rule.dim() });
    }
    let mut out = vec![0.0; map.dim()];
    let mut total = 0.0;
    for (x, w) in rule.iter() {
        map.map_into(x, &mut out)?;
        let d2: f64 = x.iter().zip(&out).map(|(a, b)| (a - b) * (a - b)).sum();
        if !d2.is_finite() {
            return Err(Error::numeric("transport map produced a non-finite value"));
        }
        total += w * d2;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{GaussianMeasure, UniformBoxMeasure};
    use crate::quadrature::gauss_hermite;
    use crate::rng;
    use rand::Rng;

    fn normal_rule(mean: f64, sd: f64, n: usize) -> QuadratureRule {
        gauss_hermite(n).unwrap().affine(&[mean], &[sd])
    }

    #[test]
    fn gaussian_maps_are_affine() {
        let id = transport_map_1d(&GaussianMeasure::standard(1).into(), &GaussianMeasure::standard(1).into()).unwrap();
        assert_eq!(id.apply(0.7), 0.7);
        let t = transport_map_1d(
            &GaussianMeasure::standard(1).into(),
            &GaussianMeasure::univariate(1.0, 4.0).unwrap().into(),
        )
        .unwrap();
        for &x in &[-2.0, 0.0, 0.3, 5.0] {
            assert!((t.apply(x) - (1.0 + 2.0 * x)).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_to_normal_is_probit() {
        let t = transport_map_1d(&UniformBoxMeasure::unit(1).into(), &GaussianMeasure::standard(1).into()).unwrap();
        for &u in &[0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((t.apply(u) - special::normal_quantile(u)).abs() < 1e-12);
        }
        // and back
        let s = t.reversed().unwrap();
        for &u in &[0.01, 0.3, 0.9] {
            assert!((s.apply(t.apply(u)) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn discrete_source_is_rejected() {
        let e = crate::measures::EmpiricalMeasure::uniform(1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            transport_map_1d(&e.into(), &GaussianMeasure::standard(1).into()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn monotone_on_probe_grid() {
        let t = transport_map_1d(
            &GaussianMeasure::univariate(0.5, 2.0).unwrap().into(),
            &UniformBoxMeasure::new(vec![-1.0], vec![3.0]).unwrap().into(),
        )
        .unwrap();
        let vals: Vec<f64> = (0..1000).map(|i| t.apply(-8.0 + 16.0 * i as f64 / 999.0)).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn pushforward_passes_ks() {
        // Map uniform draws to N(1, 4) and compare with its CDF.
        let t = transport_map_1d(
            &UniformBoxMeasure::unit(1).into(),
            &GaussianMeasure::univariate(1.0, 4.0).unwrap().into(),
        )
        .unwrap();
        let mut r = rng::rng_from_seed(17);
        let n = 10_000;
        let mut ys: Vec<f64> = (0..n).map(|_| t.apply(r.random::<f64>())).collect();
        ys.sort_by(f64::total_cmp);
        let d = ys
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let f = special::normal_cdf((y - 1.0) / 2.0);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic.
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn cost_examples() {
        let rule = normal_rule(0.0, 1.0, 40);
        let id = transport_map_1d(&GaussianMeasure::standard(1).into(), &GaussianMeasure::standard(1).into()).unwrap();
        assert!(transport_cost(&id, &rule).unwrap().abs() < 1e-15);
        let shift = transport_map_1d(
            &GaussianMeasure::standard(1).into(),
            &GaussianMeasure::univariate(1.0, 1.0).unwrap().into(),
        )
        .unwrap();
        assert!((transport_cost(&shift, &rule).unwrap() - 1.0).abs() < 1e-13);
        let t = transport_map_1d(
            &GaussianMeasure::standard(1).into(),
            &GaussianMeasure::univariate(1.0, 4.0).unwrap().into(),
        )
        .unwrap();
        assert!((transport_cost(&t, &rule).unwrap() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn nonaffine_cost_matches_quantile_route() {
        // Uniform source, Gaussian target: W₂² from the quantile integral.
        let src = Univariate::Uniform { lower: 0.0, upper: 2.0 };
        let tgt = Univariate::gaussian(0.5, 0.7).unwrap();
        let t = TransportMap1D::new(src.clone(), tgt.clone()).unwrap();
        // Midpoint rule: the map is infinite at both ends of the support.
        let n = 200_000;
        let nodes = (0..n).map(|i| 2.0 * (i as f64 + 0.5) / n as f64).collect();
        let rule = QuadratureRule::custom(1, nodes, vec![1.0 / n as f64; n]).unwrap();
        let cost = transport_cost(&t, &rule).unwrap();
        let w22 = crate::wasserstein::wpp_quantile_route(&src, &tgt, 2.0, 64).unwrap();
        assert!((cost - w22).abs() < 1e-4 * w22, "{cost} vs {w22}");
    }
}
