//! Expected-utility estimators: Gaussian closed forms, nested quadrature and
//! Monte Carlo for `U₁`/`U₂`, the empirical-prior `U₁^M`, and the EIG
//! baseline. Utilities are gains, so larger values mean better designs.

use nalgebra::{DMatrix, DVector};

use crate::bayes::{reweight, GaussianNoiseModel, LinearGaussianModel};
use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::{DiscreteCdf, EmpiricalMeasure, Measure, TabulatedCdf, Univariate};
use crate::quadrature::{clenshaw_curtis, gauss_hermite, smolyak_with_target, QuadratureRule, RuleFamily};
use crate::rng;
use crate::transport::{self, BoxDomain, Density2d, MongeAmpereOptions, PointMap, TransportMap1D, UniformDensity};
use crate::wasserstein;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    ClosedFormGaussian,
    NestedQuadrature,
    NestedMonteCarlo,
    EmpiricalPrior,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::ClosedFormGaussian => "closed-form-gaussian",
            Estimator::NestedQuadrature => "nested-quadrature",
            Estimator::NestedMonteCarlo => "nested-monte-carlo",
            Estimator::EmpiricalPrior => "empirical-prior",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtilityEstimate {
    pub value: f64,
    pub estimator: Estimator,
    /// Standard error of the outer average; present only for Monte Carlo.
    pub stderr: Option<f64>,
    pub outer_count: usize,
    pub inner_count: usize,
    pub theta: Vec<f64>,
    /// `value` is an infinite sentinel.
    pub diverged: bool,
}

impl UtilityEstimate {
    fn closed_form(value: f64) -> Self {
        Self {
            value,
            estimator: Estimator::ClosedFormGaussian,
            stderr: None,
            outer_count: 1,
            inner_count: 1,
            theta: Vec::new(),
            diverged: false,
        }
    }

    pub fn with_theta(mut self, theta: &[f64]) -> Self {
        self.theta = theta.to_vec();
        self
    }

    pub fn stderr_or_zero(&self) -> f64 {
        self.stderr.unwrap_or(0.0)
    }

    /// `value ≤ 2^p M_p(μ)(1 + 1e-6) + 3·stderr`.
    pub fn within_moment_bound(&self, prior: &Measure, p: f64) -> Result<bool> {
        Ok(self.value <= moment_bound(prior, p)? * (1.0 + 1e-6) + 3.0 * self.stderr_or_zero())
    }
}

/// Upper bound `2^p M_p(μ)` on `U_p` for any likelihood.
pub fn moment_bound(prior: &Measure, p: f64) -> Result<f64> {
    Ok(2f64.powf(p) * prior.moment(p)?)
}

// ---------------------------------------------------------------------------
// Gaussian closed forms

/// `2Tr(C₀) − 2Tr((C₀^{1/2} C C₀^{1/2})^{1/2})`.
fn bures_gap(c0: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    let r = linalg::sqrt_psd(c0)?;
    let inner = linalg::symmetrize(&(&r * c * &r));
    Ok((2.0 * c0.trace() - 2.0 * linalg::trace_sqrt_psd(&inner)?).max(0.0))
}

/// `U₂ = 2Tr(C₀) − 2Tr((C₀^{1/2} C_post C₀^{1/2})^{1/2})`.
pub fn u2_gaussian_closed_form(model: &LinearGaussianModel) -> Result<UtilityEstimate> {
    let c0 = model.prior().cov();
    Ok(UtilityEstimate::closed_form(bures_gap(c0, &model.posterior_cov()?)?))
}

/// `U₂ = 2Tr(C₀) − 2Σ√λ_j` with `C_post w = λ C₀⁻¹ w`.
pub fn u2_gaussian_via_generalized_eigen(model: &LinearGaussianModel) -> Result<UtilityEstimate> {
    let c0 = model.prior().cov();
    let lambdas = generalized_eigenvalues(model)?;
    let value = 2.0 * c0.trace() - 2.0 * lambdas.iter().map(|l| l.max(0.0).sqrt()).sum::<f64>();
    Ok(UtilityEstimate::closed_form(value.max(0.0)))
}

/// Eigenvalues of `C_post w = λ C₀⁻¹ w`. With `C₀ = LLᵀ` these are the
/// eigenvalues of `Lᵀ C_post L`.
pub fn generalized_eigenvalues(model: &LinearGaussianModel) -> Result<Vec<f64>> {
    let c0 = model.prior().cov();
    let chol = linalg::cholesky_strict(c0, "prior covariance")?;
    let l = chol.l();
    let m = linalg::symmetrize(&(l.transpose() * model.posterior_cov()? * &l));
    Ok(linalg::symmetric_eigenvalues(&m))
}

fn check_weight(b: &DMatrix<f64>, n: usize) -> Result<()> {
    if b.shape() != (n, n) {
        return Err(Error::arg(format!("weight matrix must be {n}x{n}, got {}x{}", b.nrows(), b.ncols())));
    }
    let sv = b.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max.is_finite() && min > 1e-12 * max) {
        return Err(Error::arg("weight matrix is singular"));
    }
    Ok(())
}

/// Weighted A-optimality `−Tr(B C_post Bᵀ)`.
pub fn weighted_a_optimality(model: &LinearGaussianModel, b: &DMatrix<f64>) -> Result<f64> {
    check_weight(b, model.prior().dim())?;
    Ok(-(b * model.posterior_cov()? * b.transpose()).trace())
}

/// `U₂` under the transport cost `‖B(x − x')‖²`.
pub fn weighted_u2(model: &LinearGaussianModel, b: &DMatrix<f64>) -> Result<f64> {
    check_weight(b, model.prior().dim())?;
    let c0 = linalg::symmetrize(&(b * model.prior().cov() * b.transpose()));
    let cp = linalg::symmetrize(&(b * model.posterior_cov()? * b.transpose()));
    bures_gap(&c0, &cp)
}

/// Gaussian EIG `½(log det C₀ − log det C_post)`, evaluated as
/// `½ log det(I + L⁻¹ G C₀ Gᵀ L⁻ᵀ)` with `Γ = LLᵀ`.
pub fn eig_gaussian(model: &LinearGaussianModel) -> Result<UtilityEstimate> {
    let chol = linalg::cholesky_strict(model.gamma(), "noise covariance")?;
    let w = chol
        .l()
        .solve_lower_triangular(model.g())
        .ok_or_else(|| Error::numeric("noise covariance is singular"))?;
    let d = w.nrows();
    let m = linalg::symmetrize(&(DMatrix::identity(d, d) + &w * model.prior().cov() * w.transpose()));
    let value = match nalgebra::Cholesky::new(m) {
        Some(c) => 0.5 * linalg::log_det(&c),
        None => f64::INFINITY,
    };
    let mut est = UtilityEstimate::closed_form(if value.is_finite() { value.max(0.0) } else { f64::INFINITY });
    est.diverged = !value.is_finite();
    Ok(est)
}

// ---------------------------------------------------------------------------
// Outer rules

/// Integration rule for the outer expectation over `(x, y)`.
#[derive(Clone, Debug)]
pub enum OuterRule {
    /// Prior nodes times standard-normal noise nodes: the evidence as a
    /// Gaussian mixture with one component per prior node.
    Joint { prior: QuadratureRule, noise: QuadratureRule },
    /// Standard-normal rule mapped onto the Gaussian evidence of a linear
    /// model. Carries no `x`.
    Evidence(QuadratureRule),
    /// `samples` joint draws `x ~ μ`, `y ~ N(G(x), Γ)`.
    MonteCarlo { samples: usize, seed: u64 },
}

impl OuterRule {
    pub fn joint(prior: &Measure, prior_nodes: usize, noise_dim: usize, noise_nodes: usize) -> Result<Self> {
        Ok(OuterRule::Joint {
            prior: measure_rule(prior, prior_nodes)?,
            noise: standard_normal_rule(noise_dim, noise_nodes)?,
        })
    }

    pub fn evidence(dim: usize, nodes: usize) -> Result<Self> {
        Ok(OuterRule::Evidence(standard_normal_rule(dim, nodes)?))
    }

    pub fn estimator(&self) -> Estimator {
        match self {
            OuterRule::MonteCarlo { .. } => Estimator::NestedMonteCarlo,
            _ => Estimator::NestedQuadrature,
        }
    }
}

/// Gauss–Hermite rule for `N(0, I_dim)`: exactly `nodes` nodes in one
/// dimension, otherwise the smallest Smolyak grid with at least `nodes`.
pub fn standard_normal_rule(dim: usize, nodes: usize) -> Result<QuadratureRule> {
    if dim == 1 {
        gauss_hermite(nodes)
    } else {
        smolyak_with_target(&vec![RuleFamily::GaussHermite; dim], nodes)
    }
}

/// Quadrature for a prior measure with weights summing to one.
pub fn measure_rule(measure: &Measure, nodes: usize) -> Result<QuadratureRule> {
    match measure {
        Measure::Gaussian(g) => {
            let n = g.dim();
            let base = standard_normal_rule(n, nodes)?;
            let l = linalg::cholesky_with_jitter(g.cov())?.l();
            let mut pts = Vec::with_capacity(base.nodes().len());
            for (z, _) in base.iter() {
                let x = g.mean() + &l * DVector::from_column_slice(z);
                pts.extend(x.iter());
            }
            QuadratureRule::custom(n, pts, base.weights().to_vec())
        }
        Measure::Uniform(u) => {
            let rule = if u.dim() == 1 {
                clenshaw_curtis(nodes, u.lower()[0], u.upper()[0])?
            } else {
                let fams: Vec<RuleFamily> = u
                    .lower()
                    .iter()
                    .zip(u.upper())
                    .map(|(&lower, &upper)| RuleFamily::ClenshawCurtis { lower, upper })
                    .collect();
                smolyak_with_target(&fams, nodes)?
            };
            let vol = u.volume();
            QuadratureRule::custom(u.dim(), rule.nodes().to_vec(), rule.weights().iter().map(|w| w / vol).collect())
        }
        Measure::Empirical(e) => QuadratureRule::custom(e.dim(), e.points().to_vec(), e.weights().to_vec()),
    }
}

struct OuterPoint {
    x: Vec<f64>,
    y: Vec<f64>,
    weight: f64,
}

fn linear_view(prior: &Measure, model: &GaussianNoiseModel, theta: &[f64]) -> Result<Option<LinearGaussianModel>> {
    match prior {
        Measure::Gaussian(g) => model.linearize(g, theta).transpose(),
        _ => Ok(None),
    }
}

fn outer_points(prior: &Measure, model: &GaussianNoiseModel, theta: &[f64], outer: &OuterRule) -> Result<Vec<OuterPoint>> {
    let d = model.output_dim();
    if prior.dim() != model.forward().input_dim() {
        return Err(Error::arg(format!(
            "prior has dimension {} but the model expects {}",
            prior.dim(),
            model.forward().input_dim()
        )));
    }
    let l = model.noise_cholesky().l();
    let mut out = Vec::new();
    match outer {
        OuterRule::Joint { prior: rule, noise } => {
            if rule.dim() != prior.dim() || noise.dim() != d {
                return Err(Error::arg("outer rule dimensions do not match the prior and the observations"));
            }
            for (x, w) in rule.iter() {
                if w == 0.0 {
                    continue;
                }
                let g = DVector::from_vec(model.predict(x, theta)?);
                for (z, v) in noise.iter() {
                    let y = &g + &l * DVector::from_column_slice(z);
                    out.push(OuterPoint { x: x.to_vec(), y: y.as_slice().to_vec(), weight: w * v });
                }
            }
        }
        OuterRule::Evidence(rule) => {
            let lin = linear_view(prior, model, theta)?
                .ok_or_else(|| Error::arg("an evidence rule needs a Gaussian prior and a linear forward model"))?;
            if rule.dim() != d {
                return Err(Error::arg("evidence rule dimension does not match the observations"));
            }
            let mean = lin.g() * lin.prior().mean();
            let s = linalg::cholesky_with_jitter(&lin.evidence_cov())?.l();
            for (z, v) in rule.iter() {
                let y = &mean + &s * DVector::from_column_slice(z);
                out.push(OuterPoint { x: Vec::new(), y: y.as_slice().to_vec(), weight: v });
            }
        }
        OuterRule::MonteCarlo { samples, seed } => {
            if *samples < 2 {
                return Err(Error::arg("Monte Carlo needs at least two samples"));
            }
            let xs = prior.sample(*samples, rng::derive_seed(*seed, &[0]))?;
            let mut r = rng::stream(*seed, &[1]);
            let w = 1.0 / *samples as f64;
            for x in xs.atoms() {
                let y = model.sample_observation(x, theta, &mut r)?;
                out.push(OuterPoint { x: x.to_vec(), y, weight: w });
            }
        }
    }
    Ok(out)
}

fn aggregate(points: &[OuterPoint], values: &[f64], monte_carlo: bool) -> (f64, Option<f64>) {
    let value: f64 = points.iter().zip(values).map(|(p, v)| p.weight * v).sum();
    if !monte_carlo {
        return (value, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (value, Some((var / n).sqrt()))
}

fn require_x(p: &OuterPoint, what: &str) -> Result<()> {
    if p.x.is_empty() {
        return Err(Error::arg(format!("{what} needs joint (x, y) outer nodes, not an evidence rule")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// One-dimensional posteriors

const ZOOM_CELLS: usize = 64;
/// Log-density drop below the peak that counts as negligible.
const LOG_NEGLIGIBLE: f64 = 36.0;

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Posterior of an atomless 1D prior, tabulated on a grid. When the
/// likelihood is sharp the grid is rebuilt around the bulk.
struct PosteriorGrid<'a> {
    prior: Univariate,
    model: &'a GaussianNoiseModel,
    theta: &'a [f64],
    nodes: Vec<f64>,
    log_prior: Vec<f64>,
    predictions: Vec<Vec<f64>>,
}

fn log_prior_density(prior: &Univariate, x: f64) -> f64 {
    match prior {
        Univariate::Gaussian { mean, sd } => -0.5 * ((x - mean) / sd).powi(2),
        _ => prior.density(x).map_or(f64::NEG_INFINITY, f64::ln),
    }
}

impl<'a> PosteriorGrid<'a> {
    fn new(prior: Univariate, model: &'a GaussianNoiseModel, theta: &'a [f64], resolution: usize) -> Result<Self> {
        if resolution < 16 {
            return Err(Error::arg("inner resolution must be at least 16"));
        }
        if !prior.is_atomless() {
            return Err(Error::arg("tabulated posteriors need an atomless prior"));
        }
        let (lo, hi) = prior.effective_support(1e-15);
        let nodes = linspace(lo, hi, resolution);
        let log_prior = nodes.iter().map(|&x| log_prior_density(&prior, x)).collect();
        let predictions = nodes.iter().map(|&x| model.predict(&[x], theta)).collect::<Result<_>>()?;
        Ok(Self { prior, model, theta, nodes, log_prior, predictions })
    }

    fn posterior(&self, y: &[f64]) -> Result<Univariate> {
        let logs: Vec<f64> = self
            .log_prior
            .iter()
            .zip(&self.predictions)
            .map(|(lp, g)| lp - self.model.energy_of_prediction(g, y))
            .collect();
        let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::DegenerateEvidence);
        }
        // A flat likelihood leaves the prior unchanged.
        let e0 = self.model.energy_of_prediction(&self.predictions[0], y);
        if self.predictions.iter().all(|g| self.model.energy_of_prediction(g, y) == e0) {
            return Ok(self.prior.clone());
        }
        let first = logs.iter().position(|l| *l > peak - LOG_NEGLIGIBLE).unwrap();
        let last = logs.iter().rposition(|l| *l > peak - LOG_NEGLIGIBLE).unwrap();
        if last - first >= ZOOM_CELLS {
            return tabulate(self.nodes.clone(), &logs);
        }
        let n = self.nodes.len();
        let zoomed = linspace(self.nodes[first.saturating_sub(1)], self.nodes[(last + 1).min(n - 1)], n);
        let logs = zoomed
            .iter()
            .map(|&x| Ok(log_prior_density(&self.prior, x) - self.model.energy_of_prediction(&self.model.predict(&[x], self.theta)?, y)))
            .collect::<Result<Vec<f64>>>()?;
        tabulate(zoomed, &logs)
    }
}

fn tabulate(nodes: Vec<f64>, logs: &[f64]) -> Result<Univariate> {
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::DegenerateEvidence);
    }
    let dens: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    Ok(Univariate::Tabulated(TabulatedCdf::from_density_values(nodes, &dens)?))
}

/// Prior atoms with their predictions, for reweighted posteriors.
struct AtomPosterior {
    atoms: EmpiricalMeasure,
    predictions: Vec<Vec<f64>>,
}

impl AtomPosterior {
    fn new(atoms: &EmpiricalMeasure, model: &GaussianNoiseModel, theta: &[f64]) -> Result<Self> {
        let predictions = atoms.atoms().map(|x| model.predict(x, theta)).collect::<Result<_>>()?;
        Ok(Self { atoms: atoms.clone(), predictions })
    }

    fn weights(&self, model: &GaussianNoiseModel, y: &[f64]) -> Result<Vec<f64>> {
        let energies: Vec<f64> = self.predictions.iter().map(|g| model.energy_of_prediction(g, y)).collect();
        Ok(reweight(self.atoms.weights(), &energies)?.0)
    }
}

enum Posterior1d<'a> {
    Conjugate(LinearGaussianModel),
    Atoms(AtomPosterior),
    Grid(PosteriorGrid<'a>),
}

impl<'a> Posterior1d<'a> {
    fn new(prior: &Measure, model: &'a GaussianNoiseModel, theta: &'a [f64], resolution: usize) -> Result<Self> {
        if let Measure::Empirical(e) = prior {
            return Ok(Posterior1d::Atoms(AtomPosterior::new(e, model, theta)?));
        }
        if let Some(lin) = linear_view(prior, model, theta)? {
            return Ok(Posterior1d::Conjugate(lin));
        }
        Ok(Posterior1d::Grid(PosteriorGrid::new(prior.univariate()?, model, theta, resolution)?))
    }

    fn inner_count(&self) -> usize {
        match self {
            Posterior1d::Conjugate(_) => 1,
            Posterior1d::Atoms(a) => a.atoms.len(),
            Posterior1d::Grid(g) => g.nodes.len(),
        }
    }

    fn at(&self, model: &GaussianNoiseModel, y: &[f64]) -> Result<Univariate> {
        match self {
            Posterior1d::Conjugate(lin) => {
                let post = lin.conjugate_posterior(y)?;
                Univariate::gaussian(post.mean()[0], post.sd_1d()?)
            }
            Posterior1d::Atoms(a) => {
                let w = a.weights(model, y)?;
                Ok(Univariate::Discrete(DiscreteCdf::new(a.atoms.points(), &w)?))
            }
            Posterior1d::Grid(g) => g.posterior(y),
        }
    }
}

// ---------------------------------------------------------------------------
// Nested estimators

/// `U₁(θ) = E_y W₁(μ, μ^y)` for a one-dimensional prior. Inner posteriors
/// are conjugate for a Gaussian prior with a linear model, reweighted atoms
/// for an empirical prior, and tabulated on `inner_resolution` nodes
/// otherwise.
pub fn u1_nested(
    prior: &Measure,
    model: &GaussianNoiseModel,
    theta: &[f64],
    outer: &OuterRule,
    inner_resolution: usize,
) -> Result<UtilityEstimate> {
    let prior_u = prior.univariate()?;
    let points = outer_points(prior, model, theta, outer)?;
    let post = Posterior1d::new(prior, model, theta, inner_resolution)?;
    let values = points
        .iter()
        .map(|p| wasserstein::w1_univariate(&prior_u, &post.at(model, &p.y)?, inner_resolution))
        .collect::<Result<Vec<f64>>>()?;
    let monte_carlo = matches!(outer, OuterRule::MonteCarlo { .. });
    let (value, stderr) = aggregate(&points, &values, monte_carlo);
    Ok(UtilityEstimate {
        value,
        estimator: outer.estimator(),
        stderr,
        outer_count: points.len(),
        inner_count: post.inner_count(),
        theta: theta.to_vec(),
        diverged: false,
    })
}

/// Outer integration for the empirical-prior estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EmpiricalOuter {
    /// Gauss–Hermite with `nodes` nodes on each mixture component.
    PerAtom { nodes: usize },
    /// One composite Clenshaw–Curtis rule on the observation line shared by
    /// all components, with `panels_per_sd` panels per noise standard
    /// deviation. Needs scalar observations.
    SharedGrid { panels_per_sd: usize },
}

impl Default for EmpiricalOuter {
    fn default() -> Self {
        EmpiricalOuter::SharedGrid { panels_per_sd: 2 }
    }
}

/// Sorted 1D atoms with cumulative prior weights.
struct SortedAtoms {
    x: Vec<f64>,
    w: Vec<f64>,
    g: Vec<Vec<f64>>,
    cum: Vec<f64>,
}

impl SortedAtoms {
    /// `W₁(μ_M, μ_M^y) = Σ_k |C_k − C_k^y| (x_{k+1} − x_k)` and the
    /// unnormalized evidence `Σ w_m exp(−Φ_m)`.
    fn w1_and_mass(&self, model: &GaussianNoiseModel, y: &[f64], scratch: &mut Vec<f64>) -> (f64, f64) {
        scratch.clear();
        scratch.extend(self.w.iter().zip(&self.g).map(|(w, g)| w * (-model.energy_of_prediction(g, y)).exp()));
        let z: f64 = scratch.iter().sum();
        if !(z > 0.0) {
            return (f64::NAN, 0.0);
        }
        let mut acc = 0.0;
        let mut w1 = 0.0;
        for k in 0..self.x.len() - 1 {
            acc += scratch[k] / z;
            w1 += (self.cum[k] - acc).abs() * (self.x[k + 1] - self.x[k]);
        }
        (w1, z)
    }
}

/// `U₁^M = Σ_m w_m E_{y ~ N(G(xᵐ), Γ)} W₁(μ_M, μ_M^y)` with exact discrete
/// inner `W₁`.
pub fn u1_empirical(
    atoms: &EmpiricalMeasure,
    model: &GaussianNoiseModel,
    theta: &[f64],
    outer: &EmpiricalOuter,
) -> Result<UtilityEstimate> {
    if atoms.dim() != 1 {
        return Err(Error::UnsupportedDimension { expected: 1, got: atoms.dim() });
    }
    if atoms.is_empty() {
        return Err(Error::arg("prior has no atoms"));
    }
    let mut order: Vec<usize> = (0..atoms.len()).collect();
    order.sort_by(|&a, &b| atoms.points()[a].total_cmp(&atoms.points()[b]));
    let x: Vec<f64> = order.iter().map(|&i| atoms.points()[i]).collect();
    let w: Vec<f64> = order.iter().map(|&i| atoms.weights()[i]).collect();
    let g = x.iter().map(|&xi| model.predict(&[xi], theta)).collect::<Result<Vec<_>>>()?;
    let mut cum = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for wi in &w {
        acc += wi;
        cum.push(acc);
    }
    let sorted = SortedAtoms { x, w, g, cum };
    let mut scratch = Vec::with_capacity(atoms.len());

    let (value, outer_count) = match *outer {
        EmpiricalOuter::PerAtom { nodes } => {
            let rule = standard_normal_rule(model.output_dim(), nodes)?;
            let l = model.noise_cholesky().l();
            let mut total = 0.0;
            for (gm, wm) in sorted.g.iter().zip(&sorted.w) {
                if *wm == 0.0 {
                    continue;
                }
                let gm = DVector::from_column_slice(gm);
                let mut inner = 0.0;
                for (z, v) in rule.iter() {
                    let y = &gm + &l * DVector::from_column_slice(z);
                    let (w1, mass) = sorted.w1_and_mass(model, y.as_slice(), &mut scratch);
                    if !(mass > 0.0) {
                        return Err(Error::DegenerateEvidence);
                    }
                    inner += v * w1;
                }
                total += wm * inner;
            }
            (total, sorted.x.len() * rule.len())
        }
        EmpiricalOuter::SharedGrid { panels_per_sd } => {
            if model.output_dim() != 1 {
                return Err(Error::UnsupportedDimension { expected: 1, got: model.output_dim() });
            }
            if panels_per_sd == 0 {
                return Err(Error::arg("panels_per_sd must be positive"));
            }
            let sd = model.noise_cov()[(0, 0)].sqrt();
            let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sd);
            let grid = shared_grid(&sorted, sd, panels_per_sd)?;
            let mut total = 0.0;
            for &(y, v) in &grid {
                let (w1, mass) = sorted.w1_and_mass(model, &[y], &mut scratch);
                if mass > 0.0 {
                    total += v * w1 * mass * norm;
                }
            }
            (total, grid.len())
        }
    };
    Ok(UtilityEstimate {
        value,
        estimator: Estimator::EmpiricalPrior,
        stderr: None,
        outer_count,
        inner_count: atoms.len(),
        theta: theta.to_vec(),
        diverged: false,
    })
}

/// Composite 5-node Clenshaw–Curtis panels of width `sd / panels_per_sd`
/// covering every mixture component out to 9 standard deviations.
fn shared_grid(atoms: &SortedAtoms, sd: f64, panels_per_sd: usize) -> Result<Vec<(f64, f64)>> {
    let reach = 9.0 * sd;
    let mut centers: Vec<f64> = atoms.g.iter().map(|g| g[0]).collect();
    centers.sort_by(f64::total_cmp);
    // Merge overlapping component intervals.
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for c in centers {
        let (a, b) = (c - reach, c + reach);
        match intervals.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => intervals.push((a, b)),
        }
    }
    let template = clenshaw_curtis(5, 0.0, 1.0)?;
    let width = sd / panels_per_sd as f64;
    let mut out = Vec::new();
    for (a, b) in intervals {
        let panels = ((b - a) / width).ceil().max(1.0) as usize;
        let h = (b - a) / panels as f64;
        for k in 0..panels {
            let lo = a + k as f64 * h;
            for (t, w) in template.iter() {
                out.push((lo + h * t[0], h * w));
            }
        }
    }
    Ok(out)
}

/// Inner computation of `W₂²(μ, μ^y)` inside `u2_nested`.
#[derive(Clone, Debug)]
pub enum InnerMethod {
    /// Conjugate posterior and the Gaussian `W₂` formula.
    GaussianClosedForm,
    /// Squared displacement `‖x − S(x)‖²` under the optimal map from the
    /// posterior to the prior: a monotone rearrangement of a tabulated
    /// posterior in 1D, a Monge–Ampère solve on the prior box in 2D.
    TransportMap { resolution: usize, monge_ampere: MongeAmpereOptions },
    /// Exact discrete OT between the prior atoms and the reweighted atoms.
    DiscreteOt,
}

impl InnerMethod {
    pub fn transport_map(resolution: usize) -> Self {
        InnerMethod::TransportMap { resolution, monge_ampere: MongeAmpereOptions::default() }
    }
}

/// Posterior weights below this fraction of the largest are dropped before
/// discrete OT.
const PRUNE_RELATIVE: f64 = 1e-14;

/// Unnormalized posterior log-density `−Φ(x, y)` for a uniform prior.
struct PosteriorLogDensity<'a> {
    model: &'a GaussianNoiseModel,
    theta: &'a [f64],
    y: &'a [f64],
}

impl Density2d for PosteriorLogDensity<'_> {
    fn log_density(&self, x: [f64; 2]) -> f64 {
        match self.model.likelihood_energy(&x, self.y, self.theta) {
            Ok(e) => -e,
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

/// `U₂(θ) = E_ν ‖x − S^y(x)‖²` with `S^y` the optimal map from the
/// posterior to the prior, or equivalently `E_y W₂²(μ, μ^y)`.
pub fn u2_nested(
    prior: &Measure,
    model: &GaussianNoiseModel,
    theta: &[f64],
    outer: &OuterRule,
    inner: &InnerMethod,
) -> Result<UtilityEstimate> {
    let points = outer_points(prior, model, theta, outer)?;
    let (values, inner_count) = match inner {
        InnerMethod::GaussianClosedForm => {
            let (Measure::Gaussian(g), Some(lin)) = (prior, linear_view(prior, model, theta)?) else {
                return Err(Error::arg("gaussian_closed_form needs a Gaussian prior and a linear forward model"));
            };
            let v = points
                .iter()
                .map(|p| wasserstein::w2_gaussian_squared(g, &lin.conjugate_posterior(&p.y)?))
                .collect::<Result<Vec<f64>>>()?;
            (v, 1)
        }
        InnerMethod::DiscreteOt => {
            let Measure::Empirical(atoms) = prior else {
                return Err(Error::arg("discrete_ot needs an empirical prior"));
            };
            let post = AtomPosterior::new(atoms, model, theta)?;
            let v = points
                .iter()
                .map(|p| {
                    let mut w = post.weights(model, &p.y)?;
                    let cut = PRUNE_RELATIVE * w.iter().cloned().fold(0.0, f64::max);
                    w.iter_mut().filter(|v| **v < cut).for_each(|v| *v = 0.0);
                    let total: f64 = w.iter().sum();
                    w.iter_mut().for_each(|v| *v /= total);
                    let target = atoms.reweighted(w)?;
                    Ok(wasserstein::wp_discrete_cost(atoms, &target, 2.0)?.0)
                })
                .collect::<Result<Vec<f64>>>()?;
            (v, atoms.len())
        }
        InnerMethod::TransportMap { resolution, monge_ampere } => match prior.dim() {
            1 => {
                if matches!(prior, Measure::Empirical(_)) {
                    return Err(Error::arg("transport_map needs a prior with a density"));
                }
                let prior_u = prior.univariate()?;
                let post = Posterior1d::new(prior, model, theta, *resolution)?;
                let v = points
                    .iter()
                    .map(|p| {
                        require_x(p, "transport_map")?;
                        let s = TransportMap1D::new(post.at(model, &p.y)?, prior_u.clone())?;
                        Ok((p.x[0] - s.apply(p.x[0])).powi(2))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                (v, post.inner_count())
            }
            2 => {
                let Measure::Uniform(u) = prior else {
                    return Err(Error::Unsupported("2D transport_map is implemented for uniform priors on a box".into()));
                };
                let domain = BoxDomain::new([u.lower()[0], u.lower()[1]], [u.upper()[0], u.upper()[1]])?;
                let target = UniformDensity(domain);
                let mut out = vec![0.0; 2];
                let v = points
                    .iter()
                    .map(|p| {
                        require_x(p, "transport_map")?;
                        let rho = PosteriorLogDensity { model, theta, y: &p.y };
                        let phi = transport::solve_monge_ampere(&rho, domain, &target, domain, monge_ampere)?;
                        phi.map_into(&p.x, &mut out)?;
                        Ok((p.x[0] - out[0]).powi(2) + (p.x[1] - out[1]).powi(2))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                (v, monge_ampere.interior_count + monge_ampere.boundary_count)
            }
            n => return Err(Error::UnsupportedDimension { expected: 2, got: n }),
        },
    };
    let monte_carlo = matches!(outer, OuterRule::MonteCarlo { .. });
    let (value, stderr) = aggregate(&points, &values, monte_carlo);
    Ok(UtilityEstimate {
        value,
        estimator: outer.estimator(),
        stderr,
        outer_count: points.len(),
        inner_count,
        theta: theta.to_vec(),
        diverged: false,
    })
}

/// EIG estimator choice.
#[derive(Clone, Debug)]
pub enum EigEstimator {
    GaussianClosedForm,
    /// `E_ν[log p(y|x) − log p(y)]` with the evidence from `inner`.
    NestedQuadrature { outer: OuterRule, inner: QuadratureRule },
}

/// Expected information gain, the classical baseline.
pub fn eig_baseline(
    prior: &Measure,
    model: &GaussianNoiseModel,
    theta: &[f64],
    estimator: &EigEstimator,
) -> Result<UtilityEstimate> {
    match estimator {
        EigEstimator::GaussianClosedForm => {
            let lin = linear_view(prior, model, theta)?
                .ok_or_else(|| Error::arg("closed-form EIG needs a Gaussian prior and a linear forward model"))?;
            Ok(eig_gaussian(&lin)?.with_theta(theta))
        }
        EigEstimator::NestedQuadrature { outer, inner } => {
            if inner.dim() != prior.dim() {
                return Err(Error::arg("inner rule dimension does not match the prior"));
            }
            let points = outer_points(prior, model, theta, outer)?;
            let inner_pred = inner.iter().map(|(x, _)| model.predict(x, theta)).collect::<Result<Vec<_>>>()?;
            let mut logs = vec![0.0; inner.len()];
            let values = points
                .iter()
                .map(|p| {
                    require_x(p, "nested EIG")?;
                    let own = model.likelihood_energy(&p.x, &p.y, theta)?;
                    for (l, g) in logs.iter_mut().zip(&inner_pred) {
                        *l = -model.energy_of_prediction(g, &p.y);
                    }
                    Ok(-own - weighted_log_sum_exp(inner.weights(), &logs)?)
                })
                .collect::<Result<Vec<f64>>>()?;
            let monte_carlo = matches!(outer, OuterRule::MonteCarlo { .. });
            let (value, stderr) = aggregate(&points, &values, monte_carlo);
            Ok(UtilityEstimate {
                value: if value.is_finite() { value } else { f64::INFINITY },
                estimator: outer.estimator(),
                stderr,
                outer_count: points.len(),
                inner_count: inner.len(),
                theta: theta.to_vec(),
                diverged: !value.is_finite(),
            })
        }
    }
}

/// `log Σ w_k e^{a_k}`; weights may be negative (sparse grids) as long as
/// the sum stays positive.
fn weighted_log_sum_exp(weights: &[f64], a: &[f64]) -> Result<f64> {
    let peak = a.iter().zip(weights).filter(|(_, w)| **w != 0.0).map(|(a, _)| *a).fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::DegenerateEvidence);
    }
    let s: f64 = a.iter().zip(weights).map(|(a, w)| w * (a - peak).exp()).sum();
    if !(s > 0.0) {
        return Err(Error::DegenerateEvidence);
    }
    Ok(peak + s.ln())
}
