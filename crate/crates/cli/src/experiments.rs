//! Experiment runners behind the `grid` and `converge` subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use wassoed_core::bayes::{GaussianNoiseModel, LinearGaussianModel};
use wassoed_core::measures::{EmpiricalMeasure, GaussianMeasure, Measure, UniformBoxMeasure};
use wassoed_core::models::{self, HeatSolverConfig, PceTrainingConfig};
use wassoed_core::quadrature::{smolyak, smolyak_on_box, QuadratureRule, RuleFamily};
use wassoed_core::rng::derive_seed;
use wassoed_core::utilities::{
    self, eig_baseline, measure_rule, moment_bound, standard_normal_rule, u1_empirical, u1_nested, u2_nested,
    EigEstimator, EmpiricalOuter, Estimator, InnerMethod, OuterRule, UtilityEstimate,
};

use crate::config::{Config, Criterion, EstimatorSpec, Experiment};
use crate::error::{CliError, CliResult};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub code_version: String,
    pub wall_seconds: f64,
}

/// One `value ≤ 2^p M_p(μ) + 3·stderr` check.
#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub label: String,
    pub value: f64,
    pub bound: f64,
    pub stderr: f64,
}

impl BoundCheck {
    pub fn new(label: impl Into<String>, est: &UtilityEstimate, prior: &Measure, p: f64) -> CliResult<Self> {
        Ok(Self { label: label.into(), value: est.value, bound: moment_bound(prior, p)?, stderr: est.stderr_or_zero() })
    }

    pub fn holds(&self) -> bool {
        self.value <= self.bound * (1.0 + 1e-6) + 3.0 * self.stderr
    }
}

/// Utility values on a tensor design grid, stored with the first axis
/// slowest.
#[derive(Clone, Debug)]
pub struct UtilityGrid {
    pub axes: Vec<Vec<f64>>,
    pub criterion: Criterion,
    pub cells: Vec<UtilityEstimate>,
    /// Cells whose estimator failed; they hold a `−∞` sentinel.
    pub failed: usize,
    pub provenance: Provenance,
}

impl UtilityGrid {
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.value).collect()
    }

    /// Value at a multi-index.
    pub fn at(&self, idx: &[usize]) -> &UtilityEstimate {
        let mut flat = 0;
        for (k, &i) in idx.iter().enumerate() {
            flat = flat * self.axes[k].len() + i;
        }
        &self.cells[flat]
    }

    pub fn max_stderr(&self) -> f64 {
        self.cells.iter().map(UtilityEstimate::stderr_or_zero).fold(0.0, f64::max)
    }

    /// First cell with the largest finite value.
    pub fn argmax(&self) -> Option<&UtilityEstimate> {
        self.cells
            .iter()
            .filter(|c| c.value.is_finite())
            .fold(None, |best: Option<&UtilityEstimate>, c| match best {
                Some(b) if b.value >= c.value => Some(b),
                _ => Some(c),
            })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta1,theta2,value,stderr\n");
        for c in &self.cells {
            s.push_str(&csv_row(c));
        }
        s
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.12e}")
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

fn csv_row(c: &UtilityEstimate) -> String {
    let t2 = c.theta.get(1).map(|v| fmt_num(*v)).unwrap_or_default();
    let se = c.stderr.map(fmt_num).unwrap_or_default();
    format!("{},{},{},{}\n", fmt_num(c.theta[0]), t2, fmt_num(c.value), se)
}

/// Output of `run_utility_grid`.
#[derive(Debug)]
pub struct GridRun {
    pub grids: Vec<UtilityGrid>,
    pub bounds: Vec<BoundCheck>,
    /// Relative RMS training residual of the surrogate, when one is used.
    pub surrogate_residual: Option<f64>,
    pub surrogate_limit: Option<f64>,
}

impl GridRun {
    pub fn grid(&self, c: Criterion) -> Option<&UtilityGrid> {
        self.grids.iter().find(|g| g.criterion == c)
    }

    /// Error when more than 1% of the cells of any grid failed.
    pub fn check_failures(&self) -> CliResult<()> {
        for g in &self.grids {
            if g.failed * 100 > g.cells.len() {
                return Err(CliError::Numeric(format!(
                    "{} of {} cells failed for {}",
                    g.failed,
                    g.cells.len(),
                    g.criterion.tag()
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Problems

/// Prior, likelihood and per-criterion estimator choices for one grid
/// experiment.
pub struct Problem {
    prior: Measure,
    model: GaussianNoiseModel,
    kind: Kind,
    pub surrogate_residual: Option<f64>,
    pub surrogate_limit: Option<f64>,
}

enum Kind {
    Linear1d { noise_nodes: usize, resolution: usize, weight: DMatrix<f64> },
    Example1 { outer: OuterRule, resolution: usize, eig_inner: QuadratureRule },
    Example2 { atoms: Measure, outer: OuterRule, eig_inner: QuadratureRule },
}

fn prior_rule(prior: &Measure, e: &EstimatorSpec) -> CliResult<QuadratureRule> {
    match (prior, e.prior_level) {
        (Measure::Uniform(u), Some(level)) => {
            let r = smolyak_on_box(u.lower(), u.upper(), level)?;
            let vol = u.volume();
            Ok(QuadratureRule::custom(u.dim(), r.nodes().to_vec(), r.weights().iter().map(|w| w / vol).collect())?)
        }
        (_, Some(_)) => Err(CliError::Usage("prior_level applies to uniform priors only".into())),
        (_, None) => Ok(measure_rule(prior, e.prior_nodes.unwrap_or(33))?),
    }
}

fn noise_rule(dim: usize, e: &EstimatorSpec) -> CliResult<QuadratureRule> {
    Ok(match e.noise_level {
        Some(level) => smolyak(dim, level, RuleFamily::GaussHermite)?,
        None => standard_normal_rule(dim, e.noise_nodes.unwrap_or(33))?,
    })
}

/// Midpoints of a `k × … × k` grid on the unit cube, equally weighted.
pub fn midpoint_atoms(dim: usize, k: usize) -> CliResult<EmpiricalMeasure> {
    let n = k.pow(dim as u32);
    let mut pts = Vec::with_capacity(n * dim);
    for flat in 0..n {
        let mut rest = flat;
        let mut atom = vec![0.0; dim];
        for d in (0..dim).rev() {
            atom[d] = ((rest % k) as f64 + 0.5) / k as f64;
            rest /= k;
        }
        pts.extend(atom);
    }
    Ok(EmpiricalMeasure::uniform(dim, pts)?)
}

fn outer_for(prior: &Measure, model: &GaussianNoiseModel, e: &EstimatorSpec, seed: u64) -> CliResult<OuterRule> {
    Ok(match e.monte_carlo_samples {
        Some(samples) => OuterRule::MonteCarlo { samples, seed },
        None => OuterRule::Joint { prior: prior_rule(prior, e)?, noise: noise_rule(model.output_dim(), e)? },
    })
}

/// Surrogate settings of a resolved Example 2 configuration.
pub fn pce_config(config: &Config) -> PceTrainingConfig {
    let mut pce = PceTrainingConfig::default();
    let s = &config.surrogate;
    pce.degree = s.degree.unwrap_or(pce.degree);
    pce.points_per_dim = s.points_per_dim.unwrap_or(pce.points_per_dim);
    pce.heat = HeatSolverConfig { grid: s.heat_grid.unwrap_or(pce.heat.grid), ..pce.heat };
    pce
}

pub fn cache_dir(config: &Config) -> PathBuf {
    config.surrogate.cache_dir.clone().unwrap_or_else(models::default_cache_dir)
}

impl Problem {
    /// Builds the problem for a resolved grid configuration. The outer rule
    /// uses `seed` when it is Monte Carlo.
    pub fn new(config: &Config) -> CliResult<Self> {
        let e = &config.estimator;
        let nv = config.noise_variance.expect("resolved");
        match config.experiment {
            Experiment::Linear1dUtility => {
                let model = GaussianNoiseModel::isotropic(Arc::new(models::linear_1d_model()), nv)?;
                let weight = match &config.weight {
                    Some(rows) => matrix_from_rows(rows)?,
                    None => DMatrix::identity(1, 1),
                };
                Ok(Self {
                    prior: GaussianMeasure::standard(1).into(),
                    model,
                    kind: Kind::Linear1d {
                        noise_nodes: e.noise_nodes.unwrap_or(33),
                        resolution: e.inner_resolution.unwrap_or(1024),
                        weight,
                    },
                    surrogate_residual: None,
                    surrogate_limit: None,
                })
            }
            Experiment::Example1Grid => {
                let prior: Measure = UniformBoxMeasure::unit(1).into();
                let model = GaussianNoiseModel::isotropic(Arc::new(models::example1_model()), nv)?;
                let outer = outer_for(&prior, &model, e, config.seed)?;
                let eig_inner = measure_rule(&prior, e.eig_inner_nodes.unwrap_or(1025))?;
                Ok(Self {
                    prior,
                    model,
                    kind: Kind::Example1 { outer, resolution: e.inner_resolution.unwrap_or(2049), eig_inner },
                    surrogate_residual: None,
                    surrogate_limit: None,
                })
            }
            Experiment::Example2Grid => {
                let pce = pce_config(config);
                let surrogate = models::load_or_fit(&pce, &cache_dir(config))?;
                let residual = surrogate.training_residual();
                let model = GaussianNoiseModel::isotropic(Arc::new(surrogate), nv)?;
                let prior: Measure = UniformBoxMeasure::unit(2).into();
                let outer = outer_for(&prior, &model, e, config.seed)?;
                let atoms: Measure = midpoint_atoms(2, e.ot_atoms_per_dim.unwrap_or(20))?.into();
                let Measure::Empirical(inner) = midpoint_atoms(2, e.eig_inner_nodes.unwrap_or(40))?.into() else {
                    unreachable!()
                };
                let eig_inner = QuadratureRule::custom(2, inner.points().to_vec(), inner.weights().to_vec())?;
                Ok(Self {
                    prior,
                    model,
                    kind: Kind::Example2 { atoms, outer, eig_inner },
                    surrogate_residual: Some(residual),
                    surrogate_limit: Some(pce.max_training_residual),
                })
            }
            other => Err(CliError::Usage(format!("{other:?} is not a grid experiment"))),
        }
    }

    /// Prior against which `W_p` utilities are measured.
    pub fn reference_prior(&self) -> &Measure {
        match &self.kind {
            Kind::Example2 { atoms, .. } => atoms,
            _ => &self.prior,
        }
    }

    fn linear(&self, theta: &[f64]) -> CliResult<LinearGaussianModel> {
        let Measure::Gaussian(g) = &self.prior else { unreachable!() };
        Ok(self.model.linearize(g, theta).expect("linear model")?)
    }

    /// Replaces a Monte Carlo outer seed by one derived for this cell.
    fn cell_outer(outer: &OuterRule, cell: u64) -> OuterRule {
        match outer {
            OuterRule::MonteCarlo { samples, seed } => {
                OuterRule::MonteCarlo { samples: *samples, seed: derive_seed(*seed, &[cell]) }
            }
            o => o.clone(),
        }
    }

    pub fn evaluate(&self, criterion: Criterion, theta: &[f64], cell: u64) -> CliResult<UtilityEstimate> {
        let unsupported = || CliError::Usage(format!("criterion {} is not available for this experiment", criterion.tag()));
        let closed = |value: f64| UtilityEstimate {
            value,
            estimator: Estimator::ClosedFormGaussian,
            stderr: None,
            outer_count: 1,
            inner_count: 1,
            theta: theta.to_vec(),
            diverged: false,
        };
        let est = match &self.kind {
            Kind::Linear1d { noise_nodes, resolution, weight } => match criterion {
                Criterion::W1 => {
                    let outer = OuterRule::evidence(1, *noise_nodes)?;
                    u1_nested(&self.prior, &self.model, theta, &outer, *resolution)?
                }
                Criterion::W2 => utilities::u2_gaussian_closed_form(&self.linear(theta)?)?,
                Criterion::EIG => utilities::eig_gaussian(&self.linear(theta)?)?,
                Criterion::WeightedA => closed(utilities::weighted_a_optimality(&self.linear(theta)?, weight)?),
                Criterion::WeightedW2 => closed(utilities::weighted_u2(&self.linear(theta)?, weight)?),
            },
            Kind::Example1 { outer, resolution, eig_inner } => {
                let outer = Self::cell_outer(outer, cell);
                match criterion {
                    Criterion::W1 => u1_nested(&self.prior, &self.model, theta, &outer, *resolution)?,
                    Criterion::W2 => {
                        u2_nested(&self.prior, &self.model, theta, &outer, &InnerMethod::transport_map(*resolution))?
                    }
                    Criterion::EIG => eig_baseline(
                        &self.prior,
                        &self.model,
                        theta,
                        &EigEstimator::NestedQuadrature { outer, inner: eig_inner.clone() },
                    )?,
                    _ => return Err(unsupported()),
                }
            }
            Kind::Example2 { atoms, outer, eig_inner } => {
                let outer = Self::cell_outer(outer, cell);
                match criterion {
                    Criterion::W2 => u2_nested(atoms, &self.model, theta, &outer, &InnerMethod::DiscreteOt)?,
                    Criterion::EIG => eig_baseline(
                        atoms,
                        &self.model,
                        theta,
                        &EigEstimator::NestedQuadrature { outer, inner: eig_inner.clone() },
                    )?,
                    _ => return Err(unsupported()),
                }
            }
        };
        Ok(est.with_theta(theta))
    }

    pub fn model(&self) -> &GaussianNoiseModel {
        &self.model
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> CliResult<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(CliError::Usage("matrix rows must be non-empty and of equal length".into()));
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

/// Cartesian product of the axes, first axis slowest.
pub fn grid_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out.into_iter().flat_map(|p| axis.iter().map(move |&v| [p.clone(), vec![v]].concat())).collect();
    }
    out
}

/// Evaluates every requested criterion on the design grid of a resolved
/// configuration.
pub fn run_utility_grid(config: &Config) -> CliResult<GridRun> {
    let problem = Problem::new(config)?;
    let axes = config.grid.as_ref().expect("resolved").axes();
    if axes.len() != problem.model.forward().design_dim() {
        return Err(CliError::Usage("grid dimension does not match the model".into()));
    }
    let points = grid_points(&axes);
    let hash = config.hash();
    let mut grids = Vec::new();
    let mut bounds = Vec::new();
    for &criterion in &config.criteria {
        let start = Instant::now();
        let results: Vec<CliResult<UtilityEstimate>> = points
            .par_iter()
            .enumerate()
            .map(|(k, theta)| problem.evaluate(criterion, theta, k as u64))
            .collect();
        let mut cells = Vec::with_capacity(points.len());
        let mut failed = 0;
        for (r, theta) in results.into_iter().zip(&points) {
            match r {
                Ok(est) => cells.push(est),
                Err(e @ CliError::Usage(_)) => return Err(e),
                Err(_) => {
                    failed += 1;
                    cells.push(UtilityEstimate {
                        value: f64::NEG_INFINITY,
                        estimator: Estimator::NestedQuadrature,
                        stderr: None,
                        outer_count: 0,
                        inner_count: 0,
                        theta: theta.clone(),
                        diverged: true,
                    });
                }
            }
        }
        if let Some(p) = criterion.order() {
            for c in cells.iter().filter(|c| c.value.is_finite()) {
                bounds.push(BoundCheck::new(format!("{} θ={:?}", criterion.tag(), c.theta), c, problem.reference_prior(), p)?);
            }
        }
        grids.push(UtilityGrid {
            axes: axes.clone(),
            criterion,
            cells,
            failed,
            provenance: Provenance {
                config_hash: hash.clone(),
                code_version: CODE_VERSION.into(),
                wall_seconds: start.elapsed().as_secs_f64(),
            },
        });
    }
    Ok(GridRun { grids, bounds, surrogate_residual: problem.surrogate_residual, surrogate_limit: problem.surrogate_limit })
}

// ---------------------------------------------------------------------------
// Convergence study

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub theta: f64,
    pub m: usize,
    pub mean_abs_err: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// `(θ, U₁(θ))` reference values.
    pub references: Vec<(f64, f64)>,
    /// `(θ, fitted log-log slope)`.
    pub slopes: Vec<(f64, f64)>,
    pub bounds: Vec<BoundCheck>,
    pub provenance: Provenance,
}

/// Least-squares slope of `ln err` against `ln M`.
pub fn fit_slope(ms: &[f64], errs: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        ms.iter().zip(errs).filter(|(m, e)| **m > 0.0 && **e > 0.0).map(|(m, e)| (m.ln(), e.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Ensemble errors `|U₁(θ) − U₁^M(θ)|` of the empirical-prior estimator on
/// the linear model with a standard normal prior. Member `k` at the `j`-th
/// atom count draws its atoms from `derive_seed(seed, [j, k])`, so every θ
/// sees the same atoms.
pub fn run_convergence_study(config: &Config) -> CliResult<ConvergenceStudy> {
    let start = Instant::now();
    let e = &config.estimator;
    let nv = config.noise_variance.expect("resolved");
    let model = GaussianNoiseModel::isotropic(Arc::new(models::linear_1d_model()), nv)?;
    let prior: Measure = GaussianMeasure::standard(1).into();
    let thetas = e.thetas.clone().expect("resolved");
    let ms = e.m_values.clone().expect("resolved");
    let ensemble = e.ensemble.expect("resolved");
    let outer = EmpiricalOuter::SharedGrid { panels_per_sd: e.panels_per_sd.unwrap_or(2) };
    let reference_rule = OuterRule::evidence(1, e.reference_nodes.unwrap_or(101))?;
    let resolution = e.inner_resolution.unwrap_or(1024);

    let references = thetas
        .par_iter()
        .map(|&t| Ok((t, u1_nested(&prior, &model, &[t], &reference_rule, resolution)?.value)))
        .collect::<CliResult<Vec<(f64, f64)>>>()?;

    let jobs: Vec<(usize, usize, usize)> = (0..thetas.len())
        .flat_map(|i| (0..ms.len()).flat_map(move |j| (0..ensemble).map(move |k| (i, j, k))))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, j, k)| {
            let atoms = prior.sample(ms[j], derive_seed(config.seed, &[j as u64, k as u64]))?;
            let est = u1_empirical(&atoms, &model, &[thetas[i]], &outer)?;
            let bound = BoundCheck::new(format!("U1^M θ={} M={} k={k}", thetas[i], ms[j]), &est, &atoms.into(), 1.0)?;
            Ok((est.value, bound))
        })
        .collect::<CliResult<Vec<(f64, BoundCheck)>>>()?;

    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let mut bounds = Vec::with_capacity(runs.len());
    for (i, &theta) in thetas.iter().enumerate() {
        let exact = references[i].1;
        for (j, &m) in ms.iter().enumerate() {
            let base = (i * ms.len() + j) * ensemble;
            let errs: Vec<f64> = runs[base..base + ensemble].iter().map(|(v, _)| (v - exact).abs()).collect();
            let mean = errs.iter().sum::<f64>() / ensemble as f64;
            let var = if ensemble > 1 {
                errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (ensemble - 1) as f64
            } else {
                0.0
            };
            rows.push(ConvergenceRow { theta, m, mean_abs_err: mean, stderr: (var / ensemble as f64).sqrt() });
        }
        let r = &rows[i * ms.len()..];
        let slope = fit_slope(
            &r.iter().map(|r| r.m as f64).collect::<Vec<_>>(),
            &r.iter().map(|r| r.mean_abs_err).collect::<Vec<_>>(),
        );
        slopes.push((theta, slope));
    }
    bounds.extend(runs.into_iter().map(|(_, b)| b));
    Ok(ConvergenceStudy {
        rows,
        references,
        slopes,
        bounds,
        provenance: Provenance {
            config_hash: config.hash(),
            code_version: CODE_VERSION.into(),
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

impl ConvergenceStudy {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,M,mean_abs_err,stderr\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", fmt_num(r.theta), r.m, fmt_num(r.mean_abs_err), fmt_num(r.stderr)));
        }
        s
    }

    pub fn slopes_csv(&self) -> String {
        let mut s = String::from("theta,reference_u1,slope\n");
        for ((t, slope), (_, u)) in self.slopes.iter().zip(&self.references) {
            s.push_str(&format!("{},{},{}\n", fmt_num(*t), fmt_num(*u), fmt_num(*slope)));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Output files

pub fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

/// Writes `config.resolved.json`.
pub fn write_config_echo(dir: &Path, config: &Config) -> CliResult<()> {
    write_file(dir, "config.resolved.json", &(config.to_json() + "\n"))?;
    Ok(())
}

fn index_of(grid: &UtilityGrid, est: &UtilityEstimate) -> Vec<usize> {
    grid.axes
        .iter()
        .zip(&est.theta)
        .map(|(axis, v)| axis.iter().position(|a| a == v).unwrap_or(0))
        .collect()
}

/// Grid CSVs and SVGs, `summary.csv` with one argmax row per criterion, and
/// `provenance.json`.
pub fn write_grid_outputs(dir: &Path, config: &Config, run: &GridRun) -> CliResult<()> {
    write_config_echo(dir, config)?;
    let mut summary = String::from("criterion,theta1,theta2,value,stderr,estimator,outer_count,inner_count,failed_cells\n");
    for g in &run.grids {
        let tag = g.criterion.tag();
        write_file(dir, &format!("grid_{tag}.csv"), &g.to_csv())?;
        let title = format!("{tag} utility");
        let svg = match g.axes.len() {
            1 => {
                let pts: Vec<(f64, f64)> = g.cells.iter().map(|c| (c.theta[0], c.value)).collect();
                crate::svg::line_chart(&title, "θ", tag, &[crate::svg::Series { label: tag.into(), points: &pts }], false)
            }
            _ => {
                let mark = g.argmax().map(|a| {
                    let idx = index_of(g, a);
                    (idx[0], idx[1])
                });
                crate::svg::heatmap(&title, &g.axes[0], &g.axes[1], &g.values(), mark)
            }
        };
        write_file(dir, &format!("grid_{tag}.svg"), &svg)?;
        if let Some(best) = g.argmax() {
            let row = csv_row(best);
            summary.push_str(&format!(
                "{tag},{},{},{},{},{}\n",
                row.trim_end(),
                best.estimator.name(),
                best.outer_count,
                best.inner_count,
                g.failed
            ));
        }
    }
    write_file(dir, "summary.csv", &summary)?;
    let prov = serde_json::json!({
        "grids": run.grids.iter().map(|g| serde_json::json!({
            "criterion": g.criterion.tag(),
            "shape": g.shape(),
            "failed_cells": g.failed,
            "provenance": g.provenance,
        })).collect::<Vec<_>>(),
        "surrogate_training_residual": run.surrogate_residual,
        "surrogate_residual_limit": run.surrogate_limit,
        "bound_violations": run.bounds.iter().filter(|b| !b.holds()).count(),
    });
    write_file(dir, "provenance.json", &(serde_json::to_string_pretty(&prov).unwrap() + "\n"))?;
    Ok(())
}

pub fn write_convergence_outputs(dir: &Path, config: &Config, study: &ConvergenceStudy) -> CliResult<()> {
    write_config_echo(dir, config)?;
    write_file(dir, "convergence.csv", &study.to_csv())?;
    write_file(dir, "convergence_fit.csv", &study.slopes_csv())?;
    let series: Vec<(String, Vec<(f64, f64)>)> = study
        .slopes
        .iter()
        .map(|(t, s)| {
            let pts = study.rows.iter().filter(|r| r.theta == *t).map(|r| (r.m as f64, r.mean_abs_err)).collect();
            (format!("θ={t} slope {s:.3}"), pts)
        })
        .collect();
    let series: Vec<crate::svg::Series> =
        series.iter().map(|(l, p)| crate::svg::Series { label: l.clone(), points: p }).collect();
    write_file(
        dir,
        "convergence.svg",
        &crate::svg::line_chart("Empirical-prior error", "M", "mean |U1 - U1^M|", &series, true),
    )?;
    let prov = serde_json::json!({ "provenance": study.provenance, "references": study.references });
    write_file(dir, "provenance.json", &(serde_json::to_string_pretty(&prov).unwrap() + "\n"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> Config {
        Config::from_json(text).unwrap().resolved().unwrap()
    }

    #[test]
    fn slope_of_exact_power_law() {
        let ms: Vec<f64> = (0..7).map(|k| 10f64.powf(1.0 + 0.5 * k as f64)).collect();
        let errs: Vec<f64> = ms.iter().map(|m| 0.7 / m.sqrt()).collect();
        assert!((fit_slope(&ms, &errs) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_design_is_uninformative() {
        let run = run_utility_grid(&config(
            r#"{"experiment": "linear1d-utility", "grid": {"nodes": [1], "lower": [0], "upper": [0]}}"#,
        ))
        .unwrap();
        for g in &run.grids {
            let v = g.cells[0].value;
            let expected = if g.criterion == Criterion::WeightedA { -1.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12, "{:?}: {v}", g.criterion);
        }
        assert!(run.bounds.iter().all(BoundCheck::holds));
    }

    #[test]
    fn linear_grid_is_even_in_theta() {
        let run = run_utility_grid(&config(r#"{"experiment": "linear1d-utility", "grid": {"nodes": [5]}}"#)).unwrap();
        for g in &run.grids {
            for i in 0..5 {
                let (a, b) = (g.cells[i].value, g.cells[4 - i].value);
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{:?}", g.criterion);
            }
            assert_eq!(g.argmax().unwrap().theta, vec![-1.0]);
        }
    }

    #[test]
    fn single_atom_gives_full_error() {
        let c = config(r#"{"experiment": "linear1d-convergence", "estimator": {"thetas": [0.8], "m_values": [1], "ensemble": 3}}"#);
        let s = run_convergence_study(&c).unwrap();
        assert!((s.rows[0].mean_abs_err - s.references[0].1).abs() < 1e-15);
        assert_eq!(s.rows[0].stderr, 0.0);
    }

    #[test]
    fn grid_points_are_row_major() {
        let p = grid_points(&[vec![0.0, 1.0], vec![2.0, 3.0, 4.0]]);
        assert_eq!(p.len(), 6);
        assert_eq!(p[1], vec![0.0, 3.0]);
        assert_eq!(p[3], vec![1.0, 2.0]);
    }

    #[test]
    fn midpoint_atoms_cover_the_square() {
        let a = midpoint_atoms(2, 4).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a.atom(1), &[0.125, 0.375]);
        let m = a.mean();
        assert!((m[0] - 0.5).abs() < 1e-15 && (m[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_grid_is_reproducible() {
        let c = config(
            r#"{"experiment": "example1-grid", "seed": 9, "criteria": ["W2"], "grid": {"nodes": [2, 1]},
                "estimator": {"monte_carlo_samples": 64, "inner_resolution": 257}}"#,
        );
        let a = run_utility_grid(&c).unwrap();
        let b = run_utility_grid(&c).unwrap();
        assert_eq!(a.grids[0].to_csv(), b.grids[0].to_csv());
        assert!(a.grids[0].cells.iter().all(|c| c.stderr.is_some()));
    }
}
