//! The `distance` and `transport` subcommands.

use std::io::BufReader;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use wassoed_core::measures::{EmpiricalMeasure, GaussianMeasure, Measure, UniformBoxMeasure};
use wassoed_core::transport::{
    solve_monge_ampere, transport_cost, transport_map_1d, BoxDomain, Density2d, GaussianDensity,
    MongeAmpereOptions, PointMap, UniformDensity,
};
use wassoed_core::utilities::measure_rule;
use wassoed_core::wasserstein::{self, CouplingPlan};

use crate::config::{Config, MeasureSpec};
use crate::error::{CliError, CliResult};
use crate::experiments::{write_config_echo, write_file};

/// Builds a measure; relative CSV paths resolve against `base`.
pub fn build_measure(spec: &MeasureSpec, base: &Path) -> CliResult<Measure> {
    Ok(match spec {
        MeasureSpec::Gaussian { mean, cov } => {
            let n = mean.len();
            if cov.len() != n || cov.iter().any(|r| r.len() != n) {
                return Err(CliError::Usage(format!("covariance must be {n}×{n}")));
            }
            GaussianMeasure::new(DVector::from_vec(mean.clone()), DMatrix::from_fn(n, n, |i, j| cov[i][j]))?.into()
        }
        MeasureSpec::Uniform { lower, upper } => UniformBoxMeasure::new(lower.clone(), upper.clone())?.into(),
        MeasureSpec::Empirical { points, weights } => {
            let w = weights.clone().unwrap_or_else(|| vec![1.0; points.len()]);
            let dim = points.first().map(Vec::len).unwrap_or(0);
            if points.iter().any(|p| p.len() != dim) {
                return Err(CliError::Usage("empirical points must share one dimension".into()));
            }
            EmpiricalMeasure::from_masses(dim, points.concat(), &w)?.into()
        }
        MeasureSpec::Csv { path } => {
            let full = if path.is_absolute() { path.clone() } else { base.join(path) };
            let file = std::fs::File::open(&full).map_err(|e| CliError::Usage(format!("{}: {e}", full.display())))?;
            EmpiricalMeasure::read_csv(BufReader::new(file))
                .map_err(|e| CliError::Usage(format!("{}: {e}", full.display())))?
                .into()
        }
    })
}

#[derive(Debug)]
pub struct DistanceResult {
    pub p: f64,
    pub distance: f64,
    pub plan: Option<CouplingPlan>,
}

pub fn run_distance(config: &Config, base: &Path) -> CliResult<DistanceResult> {
    let spec = config.distance.as_ref().ok_or_else(|| CliError::Usage("missing `distance` section".into()))?;
    if !(spec.p >= 1.0 && spec.p.is_finite()) {
        return Err(CliError::Usage(format!("p must be at least 1, got {}", spec.p)));
    }
    let a = build_measure(&spec.a, base)?;
    let b = build_measure(&spec.b, base)?;
    if a.dim() != b.dim() {
        return Err(CliError::Usage("measures have different dimensions".into()));
    }
    let resolution = config.estimator.inner_resolution.unwrap_or(2049);
    let (distance, plan) = match (&a, &b) {
        (Measure::Empirical(x), Measure::Empirical(y)) => {
            let (cost, plan) = wasserstein::wp_discrete_cost(x, y, spec.p)?;
            (cost.powf(1.0 / spec.p), Some(plan))
        }
        (Measure::Gaussian(x), Measure::Gaussian(y)) if spec.p == 2.0 => (wasserstein::w2_gaussian(x, y)?, None),
        _ if a.dim() == 1 => (wasserstein::wp_1d(&a.univariate()?, &b.univariate()?, spec.p, resolution)?, None),
        _ => (wasserstein::wpp(&a, &b, spec.p)?.powf(1.0 / spec.p), None),
    };
    Ok(DistanceResult { p: spec.p, distance, plan })
}

pub fn write_distance_outputs(dir: &Path, config: &Config, r: &DistanceResult) -> CliResult<()> {
    write_config_echo(dir, config)?;
    write_file(dir, "distance.csv", &format!("p,distance\n{:e},{:.15e}\n", r.p, r.distance))?;
    if let Some(plan) = &r.plan {
        let mut buf = Vec::new();
        plan.write_csv(&mut buf)?;
        write_file(dir, "plan.csv", &String::from_utf8(buf).expect("utf-8"))?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct TransportResult {
    /// `(x, T(x))` at every probe.
    pub mapped: Vec<(Vec<f64>, Vec<f64>)>,
    /// `∫‖x − T(x)‖² dμ_source` for 1D maps.
    pub cost: Option<f64>,
    /// Coefficient table of a 2D potential.
    pub potential_csv: Option<String>,
    pub summary: String,
}

fn solve_box(m: &Measure, sds: f64) -> CliResult<(BoxDomain, Box<dyn Density2d>)> {
    match m {
        Measure::Gaussian(g) => {
            let c = g.cov();
            let (m0, m1) = (g.mean()[0], g.mean()[1]);
            let (s0, s1) = (c[(0, 0)].sqrt(), c[(1, 1)].sqrt());
            let b = BoxDomain::new([m0 - sds * s0, m1 - sds * s1], [m0 + sds * s0, m1 + sds * s1])?;
            Ok((b, Box::new(GaussianDensity::new(g)?)))
        }
        Measure::Uniform(u) => {
            let b = BoxDomain::new([u.lower()[0], u.lower()[1]], [u.upper()[0], u.upper()[1]])?;
            Ok((b, Box::new(UniformDensity(b))))
        }
        Measure::Empirical(_) => Err(CliError::Usage("2D transport needs Gaussian or uniform measures".into())),
    }
}

pub fn run_transport(config: &Config, base: &Path) -> CliResult<TransportResult> {
    let spec = config.transport.as_ref().ok_or_else(|| CliError::Usage("missing `transport` section".into()))?;
    let source = build_measure(&spec.source, base)?;
    let target = build_measure(&spec.target, base)?;
    let dim = source.dim();
    if target.dim() != dim || spec.probes.iter().any(|p| p.len() != dim) {
        return Err(CliError::Usage("source, target and probes must share one dimension".into()));
    }
    match dim {
        1 => {
            let map = transport_map_1d(&source, &target)?;
            let mapped = spec.probes.iter().map(|x| (x.clone(), vec![map.apply(x[0])])).collect();
            let cost = transport_cost(&map, &measure_rule(&source, 64)?)?;
            Ok(TransportResult { mapped, cost: Some(cost), potential_csv: None, summary: format!("cost {cost:.12e}") })
        }
        2 => {
            let (b1, rho1) = solve_box(&source, spec.box_sds)?;
            let (b2, rho2) = solve_box(&target, spec.box_sds)?;
            let pot = solve_monge_ampere(rho1.as_ref(), b1, rho2.as_ref(), b2, &MongeAmpereOptions::default())?;
            let mut mapped = Vec::with_capacity(spec.probes.len());
            for x in &spec.probes {
                let mut t = vec![0.0; 2];
                pot.map_into(x, &mut t)?;
                mapped.push((x.clone(), t));
            }
            let mut buf = Vec::new();
            pot.write_csv(&mut buf)?;
            let r = pot.report();
            let summary = format!(
                "iterations {} interior_rms {:.3e} boundary_rms {:.3e} min_hessian_eigenvalue {:.3e}",
                r.iterations, r.interior_rms, r.boundary_rms, r.min_interior_eigenvalue
            );
            Ok(TransportResult { mapped, cost: None, potential_csv: Some(String::from_utf8(buf).expect("utf-8")), summary })
        }
        d => Err(CliError::Usage(format!("transport supports dimensions 1 and 2, got {d}"))),
    }
}

pub fn write_transport_outputs(dir: &Path, config: &Config, r: &TransportResult) -> CliResult<()> {
    write_config_echo(dir, config)?;
    let dim = r.mapped.first().map(|(x, _)| x.len()).unwrap_or(1);
    let mut s = String::new();
    let xs: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    let ts: Vec<String> = (1..=dim).map(|i| format!("t{i}")).collect();
    s.push_str(&format!("{},{}\n", xs.join(","), ts.join(",")));
    for (x, t) in &r.mapped {
        let row: Vec<String> = x.iter().chain(t).map(|v| format!("{v:.12e}")).collect();
        s.push_str(&(row.join(",") + "\n"));
    }
    write_file(dir, "map.csv", &s)?;
    if let Some(p) = &r.potential_csv {
        write_file(dir, "potential.csv", p)?;
    }
    if let Some(c) = r.cost {
        write_file(dir, "cost.csv", &format!("cost\n{c:.15e}\n"))?;
    }
    Ok(())
}
