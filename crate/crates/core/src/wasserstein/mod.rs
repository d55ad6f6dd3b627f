//! Wasserstein distances: one-dimensional identities, exact discrete
//! transport and the Gaussian closed form.

use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::{EmpiricalMeasure, GaussianMeasure, Measure, Univariate};
use crate::quadrature::clenshaw_curtis;

pub mod simplex;

/// Largest total atom count accepted by [`wp_discrete`].
pub const EXACT_SOLVER_LIMIT: usize = 4096;

/// Sparse coupling between two discrete measures.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingPlan {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CouplingPlan {
    pub fn new(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if entries.iter().any(|&(i, j, g)| i >= rows || j >= cols || !(g >= 0.0)) {
            return Err(Error::arg("coupling entry out of range or negative"));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Nonzero entries `(row, col, mass)`.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for &(i, _, g) in &self.entries {
            s[i] += g;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for &(_, j, g) in &self.entries {
            s[j] += g;
        }
        s
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for &(i, j, g) in &self.entries {
            d[i][j] += g;
        }
        d
    }

    /// Whether the marginals match `a` and `b` within `tol`.
    pub fn is_feasible(&self, a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == self.rows
            && b.len() == self.cols
            && self.row_sums().iter().zip(a).all(|(s, w)| (s - w).abs() <= tol)
            && self.col_sums().iter().zip(b).all(|(s, w)| (s - w).abs() <= tol)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,j,mass")?;
        for &(i, j, g) in &self.entries {
            writeln!(out, "{i},{j},{g:e}")?;
        }
        Ok(())
    }
}

fn euclidean_pow(x: &[f64], y: &[f64], p: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if p == 2.0 {
        d2
    } else if p == 1.0 {
        d2.sqrt()
    } else {
        d2.sqrt().powf(p)
    }
}

/// Exact `W_p` between two discrete measures with an optimal plan.
pub fn wp_discrete(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, p: f64) -> Result<(f64, CouplingPlan)> {
    let (cost, plan) = wp_discrete_cost(mu1, mu2, p)?;
    Ok((cost.powf(1.0 / p), plan))
}

/// Optimal cost `W_p^p` and plan.
pub fn wp_discrete_cost(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, p: f64) -> Result<(f64, CouplingPlan)> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::arg(format!("p must be a finite real ≥ 1, got {p}")));
    }
    if mu1.dim() != mu2.dim() {
        return Err(Error::arg(format!("atom dimensions differ: {} vs {}", mu1.dim(), mu2.dim())));
    }
    let (m, n) = (mu1.len(), mu2.len());
    if m + n > EXACT_SOLVER_LIMIT {
        return Err(Error::Capacity { size: m + n, limit: EXACT_SOLVER_LIMIT });
    }
    let (wa, wb) = (mu1.weights(), mu2.weights());

    if mu1.dim() == 1 && m == n && equal_weights(wa) && equal_weights(wb) {
        return Ok(sorted_matching(mu1.points(), mu2.points(), p));
    }

    // Zero-weight atoms play no role; the solver sees only the support.
    let rows: Vec<usize> = (0..m).filter(|&i| wa[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| wb[j] > 0.0).collect();
    let a: Vec<f64> = rows.iter().map(|&i| wa[i]).collect();
    let b: Vec<f64> = cols.iter().map(|&j| wb[j]).collect();
    let mut cost = Vec::with_capacity(rows.len() * cols.len());
    for &i in &rows {
        let x = mu1.atom(i);
        for &j in &cols {
            cost.push(euclidean_pow(x, mu2.atom(j), p));
        }
    }
    let sol = simplex::solve(&a, &b, &cost)?;
    let entries = sol.flows.iter().map(|&(i, j, g)| (rows[i], cols[j], g)).collect();
    Ok((sol.cost.max(0.0), CouplingPlan { rows: m, cols: n, entries }))
}

fn equal_weights(w: &[f64]) -> bool {
    w.iter().all(|&x| x == w[0])
}

fn sorted_matching(x: &[f64], y: &[f64], p: f64) -> (f64, CouplingPlan) {
    let n = x.len();
    let mut ix: Vec<usize> = (0..n).collect();
    let mut iy: Vec<usize> = (0..n).collect();
    ix.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    iy.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let w = 1.0 / n as f64;
    let cost: f64 = ix.iter().zip(&iy).map(|(&i, &j)| (x[i] - y[j]).abs().powf(p)).sum::<f64>() * w;
    let mut entries: Vec<(usize, usize, f64)> = ix.iter().zip(&iy).map(|(&i, &j)| (i, j, w)).collect();
    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    (cost, CouplingPlan { rows: n, cols: n, entries })
}

/// `W₁` between one-dimensional measures. Two discrete inputs are handled
/// exactly; two atomless inputs use the quantile identity; mixed inputs use
/// the CDF identity.
pub fn w1_1d(mu1: &Measure, mu2: &Measure, resolution: usize) -> Result<f64> {
    if mu1.dim() != mu2.dim() {
        return Err(Error::arg("measures have different dimensions"));
    }
    w1_univariate(&mu1.univariate()?, &mu2.univariate()?, resolution)
}

pub fn w1_univariate(a: &Univariate, b: &Univariate, resolution: usize) -> Result<f64> {
    match (a, b) {
        (Univariate::Discrete(_), Univariate::Discrete(_)) => Ok(w1_exact_discrete(a, b)),
        _ if a.is_atomless() && b.is_atomless() => w1_quantile_route(a, b, resolution),
        _ => w1_cdf_route(a, b, resolution),
    }
}

/// `∫|F₁ − F₂|` over the merged sorted support of two discrete measures.
fn w1_exact_discrete(a: &Univariate, b: &Univariate) -> f64 {
    let mut pts = a.breakpoints();
    pts.extend(b.breakpoints());
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.windows(2).map(|w| (a.cdf(w[0]) - b.cdf(w[0])).abs() * (w[1] - w[0])).sum()
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sorted cut points of `[lo, hi]` containing `extra`, `samples` equispaced
/// probes and every detected sign change of `f` between probes.
fn sign_partition(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, extra: &[f64], samples: usize) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..=samples).map(|k| lo + (hi - lo) * k as f64 / samples as f64).collect();
    pts.extend(extra.iter().copied().filter(|x| *x > lo && *x < hi));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut cuts = Vec::with_capacity(pts.len() + 8);
    cuts.push(pts[0]);
    for w in pts.windows(2) {
        let (fa, fb) = (f(w[0]), f(w[1]));
        if fa * fb < 0.0 {
            cuts.push(bisect(f, w[0], w[1]));
        }
        cuts.push(w[1]);
    }
    cuts
}

/// `W₁ = ∫|F₁ − F₂| dx`, integrated exactly piece by piece with the CDF
/// antiderivatives between sign changes of `F₁ − F₂`.
pub fn w1_cdf_route(a: &Univariate, b: &Univariate, resolution: usize) -> Result<f64> {
    if resolution == 0 {
        return Err(Error::arg("resolution must be positive"));
    }
    let (la, ha) = a.effective_support(1e-17);
    let (lb, hb) = b.effective_support(1e-17);
    let (lo, hi) = (la.min(lb), ha.max(hb));
    if hi <= lo {
        return Ok(0.0);
    }
    let mut extra = a.breakpoints();
    extra.extend(b.breakpoints());
    let diff = |x: f64| a.cdf(x) - b.cdf(x);
    let cuts = sign_partition(&diff, lo, hi, &extra, resolution);
    let mut total = (a.lower_partial(lo) - b.lower_partial(lo)).abs()
        + (a.upper_partial(hi) - b.upper_partial(hi)).abs();
    for w in cuts.windows(2) {
        let da = a.lower_partial(w[1]) - a.lower_partial(w[0]);
        let db = b.lower_partial(w[1]) - b.lower_partial(w[0]);
        total += (da - db).abs();
    }
    Ok(total)
}

const U_CLIP: f64 = 1e-9;

fn logistic(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// `W₁ = ∫₀¹|F₁⁻¹ − F₂⁻¹| du` on `u ∈ [1e-9, 1 − 1e-9]`.
pub fn w1_quantile_route(a: &Univariate, b: &Univariate, resolution: usize) -> Result<f64> {
    wpp_quantile_route(a, b, 1.0, resolution)
}

/// `∫₀¹|F₁⁻¹ − F₂⁻¹|^p du` with the clipped endpoints. The integral is taken
/// in the logistic variable `u = 1/(1+e^{−s})`, which spreads nodes into both
/// tails, and split at crossings and quantile kinks into Clenshaw–Curtis
/// panels.
pub fn wpp_quantile_route(a: &Univariate, b: &Univariate, p: f64, resolution: usize) -> Result<f64> {
    if resolution == 0 {
        return Err(Error::arg("resolution must be positive"));
    }
    let s_max = ((1.0 - U_CLIP) / U_CLIP).ln();
    let diff = |s: f64| a.quantile(logistic(s)) - b.quantile(logistic(s));
    let to_s = |u: f64| (u / (1.0 - u)).ln();
    let extra: Vec<f64> = a
        .quantile_breakpoints()
        .into_iter()
        .chain(b.quantile_breakpoints())
        .filter(|u| *u > U_CLIP && *u < 1.0 - U_CLIP)
        .map(to_s)
        .collect();
    let probes = resolution.clamp(16, 4096);
    let cuts = sign_partition(&diff, -s_max, s_max, &extra, probes);
    let panels = cuts.len() - 1;
    let per_panel = ((resolution / panels.max(1)) | 1).clamp(5, resolution.max(5));
    let base = clenshaw_curtis(per_panel, -1.0, 1.0)?;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
        for (x, wt) in base.iter() {
            let s = mid + half * x[0];
            let jac = logistic(s) * logistic(-s);
            let d = diff(s).abs();
            total += wt * half * jac * if p == 1.0 { d } else { d.powf(p) };
        }
    }
    Ok(total)
}

/// `W_p` between one-dimensional measures via the quantile identity, exact
/// for two discrete inputs.
pub fn wp_1d(a: &Univariate, b: &Univariate, p: f64, resolution: usize) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::arg("p must be ≥ 1"));
    }
    if let (Univariate::Discrete(da), Univariate::Discrete(db)) = (a, b) {
        // Piecewise constant quantiles: integrate exactly between merged
        // cumulative-weight breakpoints.
        let mut us: Vec<f64> = da.cumulative().iter().chain(db.cumulative()).copied().collect();
        us.push(0.0);
        us.sort_by(f64::total_cmp);
        us.dedup();
        let mut total = 0.0;
        for w in us.windows(2) {
            if w[1] > w[0] {
                let u = 0.5 * (w[0] + w[1]);
                total += (w[1] - w[0]) * (a.quantile(u) - b.quantile(u)).abs().powf(p);
            }
        }
        return Ok(total.powf(1.0 / p));
    }
    Ok(wpp_quantile_route(a, b, p, resolution)?.powf(1.0 / p))
}

/// Closed-form `W₂` between Gaussians.
pub fn w2_gaussian(mu1: &GaussianMeasure, mu2: &GaussianMeasure) -> Result<f64> {
    Ok(w2_gaussian_squared(mu1, mu2)?.sqrt())
}

pub fn w2_gaussian_squared(mu1: &GaussianMeasure, mu2: &GaussianMeasure) -> Result<f64> {
    if mu1.dim() != mu2.dim() {
        return Err(Error::arg("Gaussian dimensions differ"));
    }
    let (c1, c2) = (mu1.cov(), mu2.cov());
    linalg::check_covariance(c1, "first covariance")?;
    linalg::check_covariance(c2, "second covariance")?;
    let mean_term = (mu1.mean() - mu2.mean()).norm_squared();
    let r1 = linalg::sqrt_psd(c1)?;
    let cross = linalg::trace_sqrt_psd(&(&r1 * c2 * &r1))?;
    Ok((mean_term + c1.trace() + c2.trace() - 2.0 * cross).max(0.0))
}

/// `W_p^p` for the measure pairs with an exact or quadrature route.
pub fn wpp(mu1: &Measure, mu2: &Measure, p: f64) -> Result<f64> {
    if mu1.dim() != mu2.dim() {
        return Err(Error::arg("measures have different dimensions"));
    }
    match (mu1, mu2) {
        (Measure::Empirical(a), Measure::Empirical(b)) => Ok(wp_discrete_cost(a, b, p)?.0),
        (Measure::Gaussian(a), Measure::Gaussian(b)) if p == 2.0 => w2_gaussian_squared(a, b),
        _ if mu1.dim() == 1 => Ok(wp_1d(&mu1.univariate()?, &mu2.univariate()?, p, 2049)?.powf(p)),
        _ => Err(Error::Unsupported(format!(
            "no W_p route for this pair in dimension {} with p = {p}",
            mu1.dim()
        ))),
    }
}

/// Checks `W_p^p(μ₁, μ₂) ≤ 2^{p−1}(M_p(μ₁) + M_p(μ₂))` with slack `1e-9`.
pub fn moment_bound_check(mu1: &Measure, mu2: &Measure, p: f64) -> Result<bool> {
    let lhs = wpp(mu1, mu2, p)?;
    let rhs = 2f64.powf(p - 1.0) * (mu1.moment(p)? + mu2.moment(p)?);
    Ok(lhs <= rhs + 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::DiscreteCdf;
    use nalgebra::{DMatrix, DVector};

    fn emp1(points: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(1, points.to_vec()).unwrap()
    }

    fn dirac(x: f64) -> Measure {
        Measure::Empirical(emp1(&[x]))
    }

    fn gauss(m: f64, s: f64) -> Univariate {
        Univariate::gaussian(m, s).unwrap()
    }

    #[test]
    fn unit_translation_of_diracs() {
        assert_eq!(w1_1d(&dirac(0.0), &dirac(1.0), 10).unwrap(), 1.0);
    }

    #[test]
    fn sorted_sample_matching() {
        let a = Measure::Empirical(emp1(&[0.0, 1.0]));
        let b = Measure::Empirical(emp1(&[1.0, 2.0]));
        assert!((w1_1d(&a, &b, 1).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_scale_change() {
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        let (a, b) = (gauss(0.0, 1.0), gauss(0.0, 2.0));
        for v in [
            w1_quantile_route(&a, &b, 257).unwrap(),
            w1_cdf_route(&a, &b, 257).unwrap(),
        ] {
            // Clipping u to [1e-9, 1 − 1e-9] drops about 1.3e-8 of tail mass.
            assert!((v - expected).abs() < 5e-8, "{v} vs {expected}");
        }
    }

    #[test]
    fn gaussian_scale_change_against_samples() {
        let g1 = GaussianMeasure::univariate(0.0, 1.0).unwrap().sample(1_000_000, 3).unwrap();
        let g2 = GaussianMeasure::univariate(0.0, 4.0).unwrap().sample(1_000_000, 4).unwrap();
        let (a, b) = (
            Univariate::Discrete(DiscreteCdf::new(g1.points(), g1.weights()).unwrap()),
            Univariate::Discrete(DiscreteCdf::new(g2.points(), g2.weights()).unwrap()),
        );
        let v = w1_univariate(&a, &b, 1).unwrap();
        assert!((v - 0.79788).abs() < 5e-3, "{v}");
    }

    #[test]
    fn routes_agree_on_shifted_pairs() {
        let pairs = [(0.3, 1.2, -0.4, 0.7), (1.0, 0.5, 1.0, 0.5), (0.0, 1.0, 5.0, 3.0)];
        for &(m1, s1, m2, s2) in &pairs {
            let (a, b) = (gauss(m1, s1), gauss(m2, s2));
            let q = w1_quantile_route(&a, &b, 513).unwrap();
            let c = w1_cdf_route(&a, &b, 513).unwrap();
            assert!((q - c).abs() < 1e-7, "{q} vs {c}");
        }
        let (a, b) = (gauss(0.2, 1.0), gauss(0.2, 1.0));
        assert!(w1_quantile_route(&a, &b, 33).unwrap().abs() < 1e-15);
    }

    #[test]
    fn mixed_route_against_exact_uniform() {
        // W₁(U(0,1), δ_{1/2}) = ∫|u − 1/2| du = 1/4.
        let u = Measure::Uniform(crate::measures::UniformBoxMeasure::unit(1));
        assert!((w1_1d(&u, &dirac(0.5), 64).unwrap() - 0.25).abs() < 1e-12);
        // Uniform against a Gaussian: CDF and quantile routes agree.
        let (a, b) = (Univariate::Uniform { lower: 0.0, upper: 1.0 }, gauss(0.3, 0.2));
        let q = w1_quantile_route(&a, &b, 1025).unwrap();
        let c = w1_cdf_route(&a, &b, 1025).unwrap();
        assert!((q - c).abs() < 1e-7, "{q} vs {c}");
    }

    #[test]
    fn discrete_identity_and_euclidean() {
        let a = EmpiricalMeasure::from_atoms(&[vec![0.0, 0.0], vec![1.0, 2.0]], vec![0.5, 0.5]).unwrap();
        let (d, plan) = wp_discrete(&a, &a, 2.0).unwrap();
        assert!(d.abs() < 1e-15);
        assert!(plan.entries().iter().all(|&(i, j, _)| i == j));
        let x = EmpiricalMeasure::from_atoms(&[vec![0.0, 0.0]], vec![1.0]).unwrap();
        let y = EmpiricalMeasure::from_atoms(&[vec![3.0, 4.0]], vec![1.0]).unwrap();
        assert!((wp_discrete(&x, &y, 2.0).unwrap().0 - 5.0).abs() < 1e-14);
    }

    #[test]
    fn split_mass() {
        let (d, plan) = wp_discrete(&emp1(&[0.0, 1.0]), &emp1(&[0.5]), 1.0).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        assert!(plan.is_feasible(&[0.5, 0.5], &[1.0], 1e-12));
    }

    #[test]
    fn capacity_limit() {
        let big = emp1(&vec![0.0; 3000]);
        let other = EmpiricalMeasure::new(1, vec![0.0; 1200], vec![1.0 / 1200.0; 1200]).unwrap();
        assert!(matches!(wp_discrete(&big, &other, 1.0), Err(Error::Capacity { .. })));
    }

    #[test]
    fn discrete_matches_exact_w1() {
        let a = EmpiricalMeasure::new(1, vec![0.1, 0.9, 0.4, 2.0], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let b = EmpiricalMeasure::new(1, vec![-0.5, 0.6, 1.5], vec![0.5, 0.25, 0.25]).unwrap();
        let lp = wp_discrete(&a, &b, 1.0).unwrap().0;
        let exact = w1_1d(&Measure::Empirical(a.clone()), &Measure::Empirical(b.clone()), 1).unwrap();
        assert!((lp - exact).abs() < 1e-12, "{lp} vs {exact}");
        let q = wp_1d(&Measure::Empirical(a).univariate().unwrap(), &Measure::Empirical(b).univariate().unwrap(), 1.0, 1)
            .unwrap();
        assert!((q - exact).abs() < 1e-12);
    }

    #[test]
    fn gaussian_closed_forms() {
        let a = GaussianMeasure::univariate(0.0, 1.0).unwrap();
        let b = GaussianMeasure::univariate(1.0, 4.0).unwrap();
        assert!((w2_gaussian(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(w2_gaussian(&a, &a).unwrap(), 0.0);
        let c = GaussianMeasure::standard(2);
        let d = GaussianMeasure::new(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0])))
            .unwrap();
        assert!((w2_gaussian(&c, &d).unwrap() - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_symmetry_on_full_covariances() {
        let a = GaussianMeasure::new(
            DVector::from_vec(vec![0.2, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 0.5]),
        )
        .unwrap();
        let b = GaussianMeasure::new(
            DVector::from_vec(vec![1.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.3, -0.1, -0.1, 1.4]),
        )
        .unwrap();
        let (x, y) = (w2_gaussian(&a, &b).unwrap(), w2_gaussian(&b, &a).unwrap());
        assert!((x - y).abs() <= 1e-9 * x);
    }

    #[test]
    fn moment_bounds() {
        let d0 = dirac(0.0);
        assert!(moment_bound_check(&d0, &d0, 2.0).unwrap());
        assert!(moment_bound_check(&d0, &dirac(1.0), 2.0).unwrap());
        let g0 = Measure::Gaussian(GaussianMeasure::univariate(0.0, 1.0).unwrap());
        let g3 = Measure::Gaussian(GaussianMeasure::univariate(3.0, 1.0).unwrap());
        assert!((wpp(&g0, &g3, 2.0).unwrap() - 9.0).abs() < 1e-12);
        assert!(moment_bound_check(&g0, &g3, 2.0).unwrap());
        // p = 3 goes through the quantile route: W₃³ = 27 for a unit-free shift.
        assert!((wpp(&g0, &g3, 3.0).unwrap() - 27.0).abs() < 1e-6);
    }
}
