use std::f64::consts::PI;

use super::{QuadratureRule, RuleKind};
use crate::error::{Error, Result};

/// Chebyshev-extrema node `j` of an `n`-point rule on `[−1, 1]`.
///
/// The angle is formed from the reduced fraction `j/(n−1)` so that nested
/// rules reproduce bit-identical nodes.
fn node(j: usize, n: usize) -> f64 {
    let t = j as f64 / (n - 1) as f64;
    let x = -(PI * t).cos();
    if 2 * j + 1 == n {
        0.0
    } else {
        x
    }
}

/// `n`-point Clenshaw–Curtis rule on `[lower, upper]`; weights sum to the
/// interval length.
pub fn clenshaw_curtis(n: usize, lower: f64, upper: f64) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::arg("Clenshaw–Curtis needs at least one node"));
    }
    if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
        return Err(Error::arg("Clenshaw–Curtis interval needs finite lower < upper"));
    }
    let half = 0.5 * (upper - lower);
    let mid = 0.5 * (upper + lower);
    if n == 1 {
        return Ok(QuadratureRule::from_parts(
            1,
            vec![mid],
            vec![upper - lower],
            RuleKind::ClenshawCurtis,
            None,
        ));
    }
    let big_n = n - 1;
    let mut weights = Vec::with_capacity(n);
    for j in 0..n {
        let mut s = 0.0;
        for k in 1..=big_n / 2 {
            let b = if 2 * k == big_n { 1.0 } else { 2.0 };
            s += b / (4.0 * (k * k) as f64 - 1.0) * (2.0 * PI * (k * j) as f64 / big_n as f64).cos();
        }
        let c = if j == 0 || j == big_n { 1.0 } else { 2.0 };
        weights.push(c / big_n as f64 * (1.0 - s) * half);
    }
    for j in 0..n / 2 {
        let w = 0.5 * (weights[j] + weights[n - 1 - j]);
        weights[j] = w;
        weights[n - 1 - j] = w;
    }
    let nodes = (0..n).map(|j| mid + half * node(j, n)).collect();
    Ok(QuadratureRule::from_parts(1, nodes, weights, RuleKind::ClenshawCurtis, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_rule() {
        let r = clenshaw_curtis(1, 0.0, 1.0).unwrap();
        assert_eq!(r.nodes(), &[0.5]);
        assert_eq!(r.weights(), &[1.0]);
    }

    #[test]
    fn analytic_integrals() {
        let r = clenshaw_curtis(33, 0.0, 1.0).unwrap();
        let sq: f64 = r.iter().map(|(x, w)| w * x[0] * x[0]).sum();
        assert!((sq - 1.0 / 3.0).abs() < 1e-12);
        let ex: f64 = r.iter().map(|(x, w)| w * x[0].exp()).sum();
        assert!((ex - (std::f64::consts::E - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn exact_to_degree_n_minus_1() {
        for n in [2usize, 3, 5, 9, 17] {
            let r = clenshaw_curtis(n, -2.0, 3.0).unwrap();
            for k in 0..n as i32 {
                let q: f64 = r.iter().map(|(x, w)| w * x[0].powi(k)).sum();
                let exact = (3.0_f64.powi(k + 1) - (-2.0_f64).powi(k + 1)) / (k + 1) as f64;
                assert!((q - exact).abs() < 1e-11 * exact.abs().max(1.0), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn weights_sum_to_length_and_are_nonnegative() {
        for n in [1usize, 2, 7, 33, 129] {
            let r = clenshaw_curtis(n, -1.0, 2.5).unwrap();
            assert!((r.weights().iter().sum::<f64>() - 3.5).abs() < 1e-12);
            assert!(r.weights().iter().all(|w| *w >= -1e-14));
        }
        assert!(clenshaw_curtis(5, 1.0, 1.0).is_err());
    }

    #[test]
    fn discontinuous_integrand_sanity_band() {
        let r = clenshaw_curtis(9, 0.0, 1.0).unwrap();
        let v: f64 = r.iter().map(|(x, w)| if x[0] < 0.5 { w } else { 0.0 }).sum();
        assert!((0.4..=0.6).contains(&v), "{v}");
    }
}
