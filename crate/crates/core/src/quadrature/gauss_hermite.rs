use nalgebra::{DMatrix, SymmetricEigen};

use super::{QuadratureRule, RuleKind};
use crate::error::{Error, Result};

pub const MAX_NODES: usize = 512;

const RESCALE: f64 = 1e150;

/// Orthonormal probabilists' Hermite recurrence at `x` up to degree `n`.
///
/// Returns `(p_n, p_n', ln Σ_{k<n} p_k²)` where `p_n` and `p_n'` carry a
/// common (unknown) scale factor; only their ratio is meaningful.
fn recurrence(n: usize, x: f64) -> (f64, f64, f64) {
    let (mut p_prev, mut p) = (0.0_f64, 1.0_f64);
    let (mut d_prev, mut d) = (0.0_f64, 0.0_f64);
    let mut sum = 1.0_f64;
    let mut log_scale = 0.0_f64;
    for k in 0..n {
        let sk = (k as f64).sqrt();
        let sk1 = ((k + 1) as f64).sqrt();
        let p_next = (x * p - sk * p_prev) / sk1;
        let d_next = (p + x * d - sk * d_prev) / sk1;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
        if k + 1 < n {
            sum += p * p;
        }
        if p.abs() > RESCALE || d.abs() > RESCALE {
            p /= RESCALE;
            p_prev /= RESCALE;
            d /= RESCALE;
            d_prev /= RESCALE;
            sum /= RESCALE * RESCALE;
            log_scale += RESCALE.ln();
        }
    }
    (p, d, sum.ln() + 2.0 * log_scale)
}

/// `n`-point Gauss–Hermite rule for the standard normal weight.
///
/// Initial nodes are the eigenvalues of the symmetric tridiagonal Jacobi
/// matrix (Golub–Welsch). They are polished by Newton steps on the
/// orthonormal recurrence and weights are taken from the Christoffel
/// function `1 / Σ p_k(x)²`, which stays accurate for the tiny tail weights.
pub fn gauss_hermite(n: usize) -> Result<QuadratureRule> {
    if n == 0 || n > MAX_NODES {
        return Err(Error::arg(format!(
            "Gauss–Hermite node count {n} outside 1..={MAX_NODES}"
        )));
    }
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);

    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, d, _) = recurrence(n, *x);
            if d == 0.0 {
                break;
            }
            *x -= p / d;
        }
    }
    // Exact symmetry about the origin.
    for i in 0..n / 2 {
        let v = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -v;
        nodes[n - 1 - i] = v;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let (_, _, log_sum) = recurrence(n, x);
            (-log_sum).exp()
        })
        .collect();
    for i in 0..n / 2 {
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(QuadratureRule::from_parts(1, nodes, weights, RuleKind::GaussHermiteProbabilist, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `E Z^k` for the standard normal.
    fn normal_moment(k: u32) -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            (1..k).step_by(2).map(|v| v as f64).product()
        }
    }

    #[test]
    fn small_rules_by_hand() {
        let r = gauss_hermite(1).unwrap();
        assert_eq!(r.nodes(), &[0.0]);
        assert_eq!(r.weights(), &[1.0]);
        let r = gauss_hermite(2).unwrap();
        assert!((r.nodes()[0] + 1.0).abs() < 1e-15 && (r.nodes()[1] - 1.0).abs() < 1e-15);
        assert!((r.weights()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_to_degree_2n_minus_1() {
        for n in [2usize, 5, 10, 33] {
            let r = gauss_hermite(n).unwrap();
            for k in 0..(2 * n as u32).min(24) {
                let q: f64 = r.iter().map(|(x, w)| w * x[0].powi(k as i32)).sum();
                let exact = normal_moment(k);
                let scale: f64 = r.iter().map(|(x, w)| (w * x[0].powi(k as i32)).abs()).sum();
                assert!((q - exact).abs() <= 1e-12 * scale.max(1.0), "n={n} k={k}: {q} vs {exact}");
            }
        }
        let r = gauss_hermite(33).unwrap();
        let fourth: f64 = r.iter().map(|(x, w)| w * x[0].powi(4)).sum();
        assert!((fourth - 3.0).abs() < 1e-10);
    }

    #[test]
    fn weights_positive_and_normalized() {
        for n in [1usize, 7, 33, 117, 143, 300] {
            let r = gauss_hermite(n).unwrap();
            assert!(r.weights().iter().all(|w| *w > 0.0), "n={n}");
            assert!((r.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(gauss_hermite(MAX_NODES).is_ok());
        assert!(gauss_hermite(0).is_err());
        assert!(gauss_hermite(MAX_NODES + 1).is_err());
    }
}
