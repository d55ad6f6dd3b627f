//! Run configuration: one flat JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Linear1dUtility,
    Linear1dConvergence,
    Example1Grid,
    Example2Grid,
    Distance,
    Transport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    W1,
    W2,
    EIG,
    #[serde(rename = "weightedA")]
    WeightedA,
    #[serde(rename = "weightedW2")]
    WeightedW2,
}

impl Criterion {
    pub fn tag(&self) -> &'static str {
        match self {
            Criterion::W1 => "W1",
            Criterion::W2 => "W2",
            Criterion::EIG => "EIG",
            Criterion::WeightedA => "weightedA",
            Criterion::WeightedW2 => "weightedW2",
        }
    }

    /// Order `p` of the Wasserstein utility, if any.
    pub fn order(&self) -> Option<f64> {
        match self {
            Criterion::W1 => Some(1.0),
            Criterion::W2 => Some(2.0),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Nodes per design axis.
    pub nodes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

/// Estimator settings. Unset fields take experiment defaults when the
/// configuration is resolved.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    /// Target node count of the outer prior rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_nodes: Option<usize>,
    /// Explicit Smolyak level for the prior rule; overrides `prior_nodes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_level: Option<usize>,
    /// Target node count of the standard-normal noise rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_level: Option<usize>,
    /// Grid size for tabulated posteriors and 1D `W₁` integrals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_resolution: Option<usize>,
    /// Prior nodes used for the EIG evidence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eig_inner_nodes: Option<usize>,
    /// Midpoint atoms per axis for discrete-OT priors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ot_atoms_per_dim: Option<usize>,
    /// Replaces the outer quadrature by this many joint Monte Carlo draws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo_samples: Option<usize>,
    /// Design values of the convergence study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<f64>>,
    /// Atom counts of the convergence study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_values: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<usize>,
    /// Gauss–Hermite nodes of the reference `U₁`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_nodes: Option<usize>,
    /// Panels per noise standard deviation of the shared observation grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panels_per_sd: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_per_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat_grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum MeasureSpec {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
    Empirical {
        points: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    /// Atom file in the `w,x1,...,xn` format.
    Csv { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSpec {
    pub a: MeasureSpec,
    pub b: MeasureSpec,
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_p() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSpec {
    pub source: MeasureSpec,
    pub target: MeasureSpec,
    /// Points at which the map is tabulated.
    pub probes: Vec<Vec<f64>>,
    /// Half-width of the 2D solve boxes in standard deviations.
    #[serde(default = "default_box_sds")]
    pub box_sds: f64,
}

fn default_box_sds() -> f64 {
    5.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub criteria: Vec<Criterion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    /// Weight matrix `B` of the weighted criteria, by rows; identity if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub surrogate: SurrogateSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<DistanceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportSpec>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Config {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Short digest of the resolved configuration.
    pub fn hash(&self) -> String {
        hex::encode(&Sha256::digest(self.to_json().as_bytes())[..8])
    }

    /// A copy with every experiment default filled in.
    pub fn resolved(&self) -> CliResult<Self> {
        let mut c = self.clone();
        let e = &mut c.estimator;
        match c.experiment {
            Experiment::Linear1dUtility => {
                if c.criteria.is_empty() {
                    c.criteria = vec![Criterion::W1, Criterion::W2, Criterion::EIG, Criterion::WeightedA, Criterion::WeightedW2];
                }
                c.grid.get_or_insert(GridSpec { nodes: vec![41], lower: None, upper: None });
                fill_bounds(c.grid.as_mut().unwrap(), &[-1.0], &[1.0])?;
                c.noise_variance.get_or_insert(wassoed_core::models::LINEAR_1D_NOISE_VARIANCE);
                e.noise_nodes.get_or_insert(33);
                e.inner_resolution.get_or_insert(1024);
            }
            Experiment::Linear1dConvergence => {
                c.noise_variance.get_or_insert(wassoed_core::models::LINEAR_1D_NOISE_VARIANCE);
                e.thetas.get_or_insert_with(|| vec![0.3, 0.6, 1.0]);
                e.m_values.get_or_insert_with(|| (0..7).map(|k| 10f64.powf(1.0 + 0.5 * k as f64).round() as usize).collect());
                e.ensemble.get_or_insert(50);
                e.reference_nodes.get_or_insert(101);
                e.inner_resolution.get_or_insert(1024);
                e.panels_per_sd.get_or_insert(2);
            }
            Experiment::Example1Grid => {
                if c.criteria.is_empty() {
                    c.criteria = vec![Criterion::W2, Criterion::EIG];
                }
                c.grid.get_or_insert(GridSpec { nodes: vec![11, 11], lower: None, upper: None });
                fill_bounds(c.grid.as_mut().unwrap(), &[0.0, 0.0], &[1.0, 1.0])?;
                c.noise_variance.get_or_insert(wassoed_core::models::EXAMPLE1_NOISE_VARIANCE);
                e.prior_nodes.get_or_insert(33);
                e.noise_nodes.get_or_insert(143);
                e.inner_resolution.get_or_insert(2049);
                e.eig_inner_nodes.get_or_insert(1025);
            }
            Experiment::Example2Grid => {
                if c.criteria.is_empty() {
                    c.criteria = vec![Criterion::W2, Criterion::EIG];
                }
                c.grid.get_or_insert(GridSpec { nodes: vec![9, 9], lower: None, upper: None });
                fill_bounds(c.grid.as_mut().unwrap(), &[0.0, 0.0], &[1.0, 1.0])?;
                c.noise_variance.get_or_insert(1e-4);
                e.prior_nodes.get_or_insert(13);
                e.noise_nodes.get_or_insert(11);
                e.ot_atoms_per_dim.get_or_insert(20);
                e.eig_inner_nodes.get_or_insert(40);
                let defaults = wassoed_core::models::PceTrainingConfig::default();
                c.surrogate.degree.get_or_insert(defaults.degree);
                c.surrogate.points_per_dim.get_or_insert(defaults.points_per_dim);
                c.surrogate.heat_grid.get_or_insert(defaults.heat.grid);
            }
            Experiment::Distance => {
                if c.distance.is_none() {
                    return Err(CliError::Usage("distance experiment needs a `distance` section".into()));
                }
                e.inner_resolution.get_or_insert(2049);
            }
            Experiment::Transport => {
                if c.transport.is_none() {
                    return Err(CliError::Usage("transport experiment needs a `transport` section".into()));
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> CliResult<()> {
        if let Some(v) = self.noise_variance {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Usage(format!("noise_variance must be positive, got {v}")));
            }
        }
        if let Some(g) = &self.grid {
            if g.nodes.iter().any(|&n| n == 0) {
                return Err(CliError::Usage("grid node counts must be positive".into()));
            }
        }
        if let Some(0) = self.threads {
            return Err(CliError::Usage("threads must be positive".into()));
        }
        let e = &self.estimator;
        if e.ensemble == Some(0) || e.m_values.as_ref().is_some_and(|m| m.iter().any(|&v| v == 0)) {
            return Err(CliError::Usage("ensemble size and atom counts must be positive".into()));
        }
        Ok(())
    }
}

fn fill_bounds(grid: &mut GridSpec, lower: &[f64], upper: &[f64]) -> CliResult<()> {
    if grid.nodes.len() != lower.len() {
        return Err(CliError::Usage(format!("grid needs {} axes, got {}", lower.len(), grid.nodes.len())));
    }
    let lo = grid.lower.get_or_insert_with(|| lower.to_vec());
    let hi = grid.upper.get_or_insert_with(|| upper.to_vec());
    if lo.len() != lower.len() || hi.len() != lower.len() || lo.iter().zip(hi.iter()).any(|(a, b)| !(a <= b)) {
        return Err(CliError::Usage("grid bounds must match the axes and satisfy lower ≤ upper".into()));
    }
    Ok(())
}

impl GridSpec {
    /// Node coordinates per axis.
    pub fn axes(&self) -> Vec<Vec<f64>> {
        let lo = self.lower.as_deref().unwrap_or(&[]);
        let hi = self.upper.as_deref().unwrap_or(&[]);
        self.nodes
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let (a, b) = (lo.get(k).copied().unwrap_or(0.0), hi.get(k).copied().unwrap_or(1.0));
                if n == 1 {
                    vec![0.5 * (a + b)]
                } else {
                    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let err = Config::from_json(r#"{"experiment": "example1-grid", "sede": 3}"#).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        let err = Config::from_json(r#"{"experiment": "example1-grid", "estimator": {"prior_node": 3}}"#).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn resolution_fills_defaults_and_round_trips() {
        let c = Config::from_json(r#"{"experiment": "example1-grid", "seed": 4}"#).unwrap().resolved().unwrap();
        assert_eq!(c.grid.as_ref().unwrap().nodes, vec![11, 11]);
        assert_eq!(c.estimator.prior_nodes, Some(33));
        let back = Config::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.resolved().unwrap(), c);
    }

    #[test]
    fn convergence_defaults_use_half_decades() {
        let c = Config::from_json(r#"{"experiment": "linear1d-convergence"}"#).unwrap().resolved().unwrap();
        assert_eq!(c.estimator.m_values.unwrap(), vec![10, 32, 100, 316, 1000, 3162, 10000]);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        for text in [
            r#"{"experiment": "example1-grid", "noise_variance": -1}"#,
            r#"{"experiment": "example1-grid", "grid": {"nodes": [3]}}"#,
            r#"{"experiment": "distance"}"#,
        ] {
            let c = Config::from_json(text).unwrap();
            assert!(matches!(c.resolved(), Err(CliError::Usage(_))), "{text}");
        }
    }

    #[test]
    fn grid_axes_are_uniform() {
        let g = GridSpec { nodes: vec![3, 1], lower: Some(vec![0.0, 0.0]), upper: Some(vec![1.0, 2.0]) };
        assert_eq!(g.axes(), vec![vec![0.0, 0.5, 1.0], vec![1.0]]);
    }
}
