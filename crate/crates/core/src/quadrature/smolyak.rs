use std::collections::BTreeMap;

use super::{clenshaw_curtis, gauss_hermite, QuadratureRule, RuleKind};
use crate::error::{Error, Result};

pub const MAX_DIM: usize = 8;
pub const MAX_LEVEL: usize = 8;

/// Nested-level families of one-dimensional rules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RuleFamily {
    /// `2l + 1` Gauss–Hermite nodes at level `l` (standard normal weight).
    GaussHermite,
    /// `1, 3, 5, 9, 17, …` Clenshaw–Curtis nodes on `[lower, upper]`.
    ClenshawCurtis { lower: f64, upper: f64 },
}

impl RuleFamily {
    pub fn size_at_level(&self, level: usize) -> usize {
        match self {
            RuleFamily::GaussHermite => 2 * level + 1,
            RuleFamily::ClenshawCurtis { .. } => {
                if level == 0 {
                    1
                } else {
                    (1 << level) + 1
                }
            }
        }
    }

    pub fn rule_at_level(&self, level: usize) -> Result<QuadratureRule> {
        let n = self.size_at_level(level);
        match *self {
            RuleFamily::GaussHermite => gauss_hermite(n),
            RuleFamily::ClenshawCurtis { lower, upper } => clenshaw_curtis(n, lower, upper),
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All multi-indices of length `dim` with entries summing to exactly `total`.
fn compositions(dim: usize, total: usize, out: &mut Vec<Vec<usize>>) {
    fn rec(prefix: &mut Vec<usize>, dim: usize, remaining: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() + 1 == dim {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for v in 0..=remaining {
            prefix.push(v);
            rec(prefix, dim, remaining - v, out);
            prefix.pop();
        }
    }
    rec(&mut Vec::with_capacity(dim), dim, total, out);
}

/// Combination-technique Smolyak rule where dimension `i` uses family
/// `families[i]`.
pub fn smolyak_mixed(families: &[RuleFamily], level: usize) -> Result<QuadratureRule> {
    let dim = families.len();
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::arg(format!("Smolyak dimension {dim} outside 1..={MAX_DIM}")));
    }
    if level > MAX_LEVEL {
        return Err(Error::arg(format!("Smolyak level {level} exceeds {MAX_LEVEL}")));
    }
    // Cache of one-dimensional rules per (dimension, level).
    let mut cache: Vec<Vec<QuadratureRule>> = Vec::with_capacity(dim);
    for fam in families {
        cache.push((0..=level).map(|l| fam.rule_at_level(l)).collect::<Result<_>>()?);
    }

    let mut merged: BTreeMap<Vec<i64>, (Vec<f64>, f64)> = BTreeMap::new();
    let low = (level + 1).saturating_sub(dim);
    for total in low..=level {
        let coef = if (level - total) % 2 == 0 { 1.0 } else { -1.0 }
            * binomial(dim - 1, level - total);
        if coef == 0.0 {
            continue;
        }
        let mut indices = Vec::new();
        compositions(dim, total, &mut indices);
        for idx in indices {
            let factors: Vec<&QuadratureRule> =
                idx.iter().enumerate().map(|(d, &l)| &cache[d][l]).collect();
            let tensor = super::tensor_product_refs(&factors);
            for (x, w) in tensor.iter() {
                let key: Vec<i64> = x.iter().map(|v| (v * 1e12).round() as i64).collect();
                let entry = merged.entry(key).or_insert_with(|| (x.to_vec(), 0.0));
                entry.1 += coef * w;
            }
        }
    }

    let mut nodes = Vec::with_capacity(merged.len() * dim);
    let mut weights = Vec::with_capacity(merged.len());
    for (_, (x, w)) in merged {
        if w == 0.0 {
            continue;
        }
        nodes.extend_from_slice(&x);
        weights.push(w);
    }
    Ok(QuadratureRule::from_parts(
        dim,
        nodes,
        weights,
        RuleKind::SmolyakCombination,
        Some(level),
    ))
}

/// Smolyak rule with the same family in every dimension.
pub fn smolyak(dim: usize, level: usize, family: RuleFamily) -> Result<QuadratureRule> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::arg(format!("Smolyak dimension {dim} outside 1..={MAX_DIM}")));
    }
    smolyak_mixed(&vec![family; dim], level)
}

/// Clenshaw–Curtis Smolyak rule on an axis-aligned box; weights sum to the
/// box volume.
pub fn smolyak_on_box(lower: &[f64], upper: &[f64], level: usize) -> Result<QuadratureRule> {
    if lower.len() != upper.len() {
        return Err(Error::arg("box bounds differ in length"));
    }
    let families: Vec<RuleFamily> = lower
        .iter()
        .zip(upper)
        .map(|(&l, &u)| RuleFamily::ClenshawCurtis { lower: l, upper: u })
        .collect();
    smolyak_mixed(&families, level)
}

/// Smallest level whose assembled grid has at least `target` nodes (capped
/// at the maximum level).
pub fn smolyak_with_target(families: &[RuleFamily], target: usize) -> Result<QuadratureRule> {
    let mut last = None;
    for level in 0..=MAX_LEVEL {
        let rule = smolyak_mixed(families, level)?;
        if rule.len() >= target {
            return Ok(rule);
        }
        last = Some(rule);
    }
    Ok(last.expect("at least one level"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_level_is_single_node() {
        let r = smolyak(2, 0, RuleFamily::GaussHermite).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.node(0), &[0.0, 0.0]);
        assert!((r.weights()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn second_moments_at_level_two() {
        let r = smolyak(2, 2, RuleFamily::GaussHermite).unwrap();
        let v: f64 = r.iter().map(|(x, w)| w * (x[0] * x[0] + x[1] * x[1])).sum();
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn one_dimensional_collapse() {
        for level in 0..5 {
            let s = smolyak(1, level, RuleFamily::GaussHermite).unwrap();
            let g = gauss_hermite(2 * level + 1).unwrap();
            assert_eq!(s.len(), g.len());
            for i in 0..s.len() {
                assert!((s.node(i)[0] - g.node(i)[0]).abs() < 1e-15);
                assert!((s.weights()[i] - g.weights()[i]).abs() < 1e-15);
            }
            let fam = RuleFamily::ClenshawCurtis { lower: 0.0, upper: 2.0 };
            let s = smolyak(1, level, fam).unwrap();
            let c = fam.rule_at_level(level).unwrap();
            assert_eq!(s.nodes(), c.nodes());
        }
    }

    #[test]
    fn nested_clenshaw_curtis_merges_nodes() {
        let fam = RuleFamily::ClenshawCurtis { lower: 0.0, upper: 1.0 };
        // Classic sparse-grid sizes for the 1, 3, 5, 9 sequence in 2D.
        let sizes: Vec<usize> = (0..4).map(|l| smolyak(2, l, fam).unwrap().len()).collect();
        assert_eq!(sizes, vec![1, 5, 13, 29]);
        let r = smolyak(2, 3, fam).unwrap();
        assert!((r.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_arguments() {
        assert!(smolyak(9, 1, RuleFamily::GaussHermite).is_err());
        assert!(smolyak(2, 9, RuleFamily::GaussHermite).is_err());
        assert!(smolyak(0, 1, RuleFamily::GaussHermite).is_err());
    }
}
