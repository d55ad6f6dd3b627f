//! Quadrature rules: Gauss–Hermite, Clenshaw–Curtis, tensor products and
//! Smolyak sparse grids.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};

mod clenshaw_curtis;
mod gauss_hermite;
mod smolyak;

pub use clenshaw_curtis::clenshaw_curtis;
pub use gauss_hermite::{gauss_hermite, MAX_NODES as MAX_GAUSS_HERMITE_NODES};
pub use smolyak::{smolyak, smolyak_mixed, smolyak_on_box, smolyak_with_target, RuleFamily};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RuleKind {
    GaussHermiteProbabilist,
    ClenshawCurtis,
    SmolyakCombination,
    TensorProduct,
}

/// Nodes and weights in `dim` dimensions. Nodes are stored row-major.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    kind: RuleKind,
    level: Option<usize>,
}

impl QuadratureRule {
    pub fn from_parts(
        dim: usize,
        nodes: Vec<f64>,
        weights: Vec<f64>,
        kind: RuleKind,
        level: Option<usize>,
    ) -> Self {
        assert_eq!(nodes.len(), dim * weights.len(), "node/weight length mismatch");
        QuadratureRule { dim, nodes, weights, kind, level }
    }

    /// Builds a rule from caller-supplied nodes and weights.
    pub fn custom(dim: usize, nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || nodes.len() != dim * weights.len() {
            return Err(Error::arg("node array does not match weights and dimension"));
        }
        if weights.is_empty() {
            return Err(Error::arg("empty quadrature rule"));
        }
        Ok(Self::from_parts(dim, nodes, weights, RuleKind::TensorProduct, None))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.nodes.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn level(&self) -> Option<usize> {
        self.level
    }

    /// Affine map `x -> shift + scale * x` applied per coordinate; weights
    /// are unchanged, so a probability rule stays a probability rule.
    pub fn affine(&self, shift: &[f64], scale: &[f64]) -> Self {
        let mut nodes = self.nodes.clone();
        for chunk in nodes.chunks_exact_mut(self.dim) {
            for k in 0..self.dim {
                chunk[k] = shift[k] + scale[k] * chunk[k];
            }
        }
        Self { nodes, ..self.clone() }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("w");
        for k in 1..=self.dim {
            header.push_str(&format!(",x{k}"));
        }
        writeln!(out, "{header}")?;
        for (x, w) in self.iter() {
            let mut line = format!("{w:e}");
            for v in x {
                line.push_str(&format!(",{v:e}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

pub(crate) fn tensor_product_refs(rules: &[&QuadratureRule]) -> QuadratureRule {
    let dim: usize = rules.iter().map(|r| r.dim).sum();
    let count: usize = rules.iter().map(|r| r.len()).product();
    let mut nodes = Vec::with_capacity(count * dim);
    let mut weights = Vec::with_capacity(count);
    let mut idx = vec![0usize; rules.len()];
    for _ in 0..count {
        let mut w = 1.0;
        for (r, &i) in rules.iter().zip(&idx) {
            nodes.extend_from_slice(r.node(i));
            w *= r.weights[i];
        }
        weights.push(w);
        // Last factor varies fastest.
        for k in (0..rules.len()).rev() {
            idx[k] += 1;
            if idx[k] < rules[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    QuadratureRule::from_parts(dim, nodes, weights, RuleKind::TensorProduct, None)
}

/// Full tensor product of the given rules.
pub fn tensor_product(rules: &[QuadratureRule]) -> QuadratureRule {
    let refs: Vec<&QuadratureRule> = rules.iter().collect();
    tensor_product_refs(&refs)
}

/// `Σ w_i f(x_i)`; a non-finite evaluation is reported with its node index.
pub fn integrate<F>(rule: &QuadratureRule, mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut acc = 0.0;
    for (i, (x, w)) in rule.iter().enumerate() {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::numeric(format!("integrand is {v} at node {i}")));
        }
        acc += w * v;
    }
    Ok(acc)
}

/// Parallel variant of [`integrate`]; `f` must be pure. The summation order
/// is fixed so the result does not depend on scheduling.
pub fn integrate_par<F>(rule: &QuadratureRule, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let values: Vec<f64> = (0..rule.len()).into_par_iter().map(|i| f(rule.node(i))).collect();
    let mut acc = 0.0;
    for (i, (v, w)) in values.iter().zip(&rule.weights).enumerate() {
        if !v.is_finite() {
            return Err(Error::numeric(format!("integrand is {v} at node {i}")));
        }
        acc += w * v;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_integrand() {
        let r = clenshaw_curtis(7, -1.0, 2.0).unwrap();
        let v = integrate(&r, |_| 2.5).unwrap();
        assert!((v - 2.5 * r.weight_sum()).abs() < 1e-13);
    }

    #[test]
    fn variance_under_gauss_hermite() {
        let r = gauss_hermite(5).unwrap();
        assert!((integrate(&r, |x| x[0] * x[0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((integrate_par(&r, |x| x[0] * x[0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_function_within_band() {
        let r = clenshaw_curtis(9, 0.0, 1.0).unwrap();
        let v = integrate(&r, |x| if x[0] < 0.5 { 1.0 } else { 0.0 }).unwrap();
        assert!((0.4..=0.6).contains(&v), "{v}");
    }

    #[test]
    fn non_finite_reports_index() {
        let r = clenshaw_curtis(3, 0.0, 1.0).unwrap();
        let err = integrate(&r, |x| if x[0] > 0.9 { f64::NAN } else { 0.0 }).unwrap_err();
        assert!(err.to_string().contains("node 2"), "{err}");
    }

    #[test]
    fn smolyak_matches_tensor_for_smooth_integrand() {
        let fam = RuleFamily::ClenshawCurtis { lower: 0.0, upper: 1.0 };
        let s = smolyak(2, 3, fam).unwrap();
        let t = tensor_product(&[fam.rule_at_level(3).unwrap(), fam.rule_at_level(3).unwrap()]);
        let f = |x: &[f64]| 1.0 + x[0].powi(3) * x[1] + (x[0] * x[1]).powi(2) + x[1].powi(6);
        let a = integrate(&s, f).unwrap();
        let b = integrate(&t, f).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        let g = |x: &[f64]| (x[0] + 0.5 * x[1]).exp();
        assert!((integrate(&s, g).unwrap() - integrate(&t, g).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn tensor_product_layout() {
        let a = clenshaw_curtis(3, 0.0, 1.0).unwrap();
        let b = gauss_hermite(2).unwrap();
        let t = tensor_product(&[a, b]);
        assert_eq!(t.len(), 6);
        assert_eq!(t.node(1), &[0.0, 1.0]);
        assert!((t.weight_sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn csv_export_header() {
        let r = gauss_hermite(2).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("w,x1\n"));
        assert_eq!(s.lines().count(), 3);
    }
}
