//! Python bindings: measures, Wasserstein distances, 1D transport maps and
//! the utility estimators of the core crate.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use wassoed_core::bayes::{GaussianNoiseModel, LinearGaussianModel as CoreLinear};
use wassoed_core::measures::{self, EmpiricalMeasure, GaussianMeasure, UniformBoxMeasure};
use wassoed_core::models::{linear_1d_model, LINEAR_1D_NOISE_VARIANCE};
use wassoed_core::transport::{self, TransportMap1D};
use wassoed_core::utilities::{self, measure_rule, EmpiricalOuter, OuterRule};
use wassoed_core::{wasserstein, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Argument(_) | Error::UnsupportedDimension { .. } | Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("matrix rows must be non-empty and of equal length"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// A probability measure: Gaussian, uniform on a box, or weighted atoms.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Measure {
    inner: measures::Measure,
}

#[pymethods]
impl Measure {
    #[staticmethod]
    fn gaussian(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> PyResult<Self> {
        let g = GaussianMeasure::new(DVector::from_vec(mean), matrix(&cov)?).map_err(to_py)?;
        Ok(Self { inner: g.into() })
    }

    #[staticmethod]
    fn uniform(lower: Vec<f64>, upper: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: UniformBoxMeasure::new(lower, upper).map_err(to_py)?.into() })
    }

    /// Atoms as a list of points; weights default to uniform and are
    /// normalized.
    #[staticmethod]
    #[pyo3(signature = (points, weights=None))]
    fn empirical(points: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(PyValueError::new_err("points must share one dimension"));
        }
        let w = weights.unwrap_or_else(|| vec![1.0; points.len()]);
        let e = EmpiricalMeasure::from_masses(dim, points.concat(), &w).map_err(to_py)?;
        Ok(Self { inner: e.into() })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// `M_p = E‖x‖^p`.
    fn moment(&self, p: f64) -> PyResult<f64> {
        self.inner.moment(p).map_err(to_py)
    }

    fn sample(&self, count: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.sample(count, seed).map_err(to_py)?.into() })
    }

    /// Atoms and weights of an empirical measure.
    fn atoms(&self) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        match &self.inner {
            measures::Measure::Empirical(e) => Ok((e.atoms().map(<[f64]>::to_vec).collect(), e.weights().to_vec())),
            _ => Err(PyValueError::new_err("not an empirical measure")),
        }
    }

    fn __repr__(&self) -> String {
        let kind = match &self.inner {
            measures::Measure::Gaussian(_) => "gaussian",
            measures::Measure::Uniform(_) => "uniform",
            measures::Measure::Empirical(_) => "empirical",
        };
        format!("Measure({kind}, dim={})", self.inner.dim())
    }
}

/// `W_p(a, b)`.
#[pyfunction]
#[pyo3(signature = (a, b, p=2.0))]
fn wasserstein_distance(a: &Measure, b: &Measure, p: f64) -> PyResult<f64> {
    Ok(wasserstein::wpp(&a.inner, &b.inner, p).map_err(to_py)?.powf(1.0 / p))
}

/// Exact discrete `W_p` and the optimal plan as `(i, j, mass)` triples.
#[pyfunction]
#[pyo3(signature = (a, b, p=2.0))]
fn discrete_plan(a: &Measure, b: &Measure, p: f64) -> PyResult<(f64, Vec<(usize, usize, f64)>)> {
    let (measures::Measure::Empirical(x), measures::Measure::Empirical(y)) = (&a.inner, &b.inner) else {
        return Err(PyValueError::new_err("discrete_plan needs two empirical measures"));
    };
    let (w, plan) = wasserstein::wp_discrete(x, y, p).map_err(to_py)?;
    Ok((w, plan.entries().to_vec()))
}

/// `W₁` between one-dimensional measures.
#[pyfunction]
#[pyo3(signature = (a, b, resolution=1024))]
fn w1_1d(a: &Measure, b: &Measure, resolution: usize) -> PyResult<f64> {
    wasserstein::w1_1d(&a.inner, &b.inner, resolution).map_err(to_py)
}

/// Monotone transport map between one-dimensional measures.
#[pyclass(frozen, name = "TransportMap1D")]
struct PyTransportMap1D {
    inner: TransportMap1D,
    source: measures::Measure,
}

#[pymethods]
impl PyTransportMap1D {
    #[new]
    fn new(source: &Measure, target: &Measure) -> PyResult<Self> {
        let inner = transport::transport_map_1d(&source.inner, &target.inner).map_err(to_py)?;
        Ok(Self { inner, source: source.inner.clone() })
    }

    fn __call__(&self, x: f64) -> f64 {
        self.inner.apply(x)
    }

    /// `∫ |x − T(x)|² dμ_source` by quadrature with `nodes` nodes.
    #[pyo3(signature = (nodes=64))]
    fn cost(&self, nodes: usize) -> PyResult<f64> {
        let rule = measure_rule(&self.source, nodes).map_err(to_py)?;
        transport::transport_cost(&self.inner, &rule).map_err(to_py)
    }
}

/// Result of a utility estimator.
#[pyclass(frozen, get_all)]
struct UtilityEstimate {
    value: f64,
    estimator: String,
    stderr: Option<f64>,
    outer_count: usize,
    inner_count: usize,
    theta: Vec<f64>,
    diverged: bool,
}

impl From<utilities::UtilityEstimate> for UtilityEstimate {
    fn from(e: utilities::UtilityEstimate) -> Self {
        Self {
            value: e.value,
            estimator: e.estimator.name().to_string(),
            stderr: e.stderr,
            outer_count: e.outer_count,
            inner_count: e.inner_count,
            theta: e.theta,
            diverged: e.diverged,
        }
    }
}

#[pymethods]
impl UtilityEstimate {
    fn __repr__(&self) -> String {
        format!("UtilityEstimate(value={:.6e}, estimator={})", self.value, self.estimator)
    }
}

/// `y = G x + η`, `η ~ N(0, Γ)`, with a Gaussian prior on `x`.
#[pyclass(frozen)]
struct LinearGaussianModel {
    inner: CoreLinear,
}

#[pymethods]
impl LinearGaussianModel {
    #[new]
    fn new(g: Vec<Vec<f64>>, gamma: Vec<Vec<f64>>, prior_mean: Vec<f64>, prior_cov: Vec<Vec<f64>>) -> PyResult<Self> {
        let prior = GaussianMeasure::new(DVector::from_vec(prior_mean), matrix(&prior_cov)?).map_err(to_py)?;
        Ok(Self { inner: CoreLinear::new(matrix(&g)?, matrix(&gamma)?, prior).map_err(to_py)? })
    }

    fn posterior_cov(&self) -> PyResult<Vec<Vec<f64>>> {
        let c = self.inner.posterior_cov().map_err(to_py)?;
        Ok(c.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// Closed-form expected `W₂²` utility.
    fn u2(&self) -> PyResult<UtilityEstimate> {
        Ok(utilities::u2_gaussian_closed_form(&self.inner).map_err(to_py)?.into())
    }

    /// The same utility through generalized eigenvalues.
    fn u2_eigen(&self) -> PyResult<UtilityEstimate> {
        Ok(utilities::u2_gaussian_via_generalized_eigen(&self.inner).map_err(to_py)?.into())
    }

    fn eig(&self) -> PyResult<UtilityEstimate> {
        Ok(utilities::eig_gaussian(&self.inner).map_err(to_py)?.into())
    }

    fn weighted_a(&self, b: Vec<Vec<f64>>) -> PyResult<f64> {
        utilities::weighted_a_optimality(&self.inner, &matrix(&b)?).map_err(to_py)
    }

    fn weighted_u2(&self, b: Vec<Vec<f64>>) -> PyResult<f64> {
        utilities::weighted_u2(&self.inner, &matrix(&b)?).map_err(to_py)
    }
}

fn linear_1d(noise_variance: Option<f64>) -> PyResult<GaussianNoiseModel> {
    GaussianNoiseModel::isotropic(Arc::new(linear_1d_model()), noise_variance.unwrap_or(LINEAR_1D_NOISE_VARIANCE))
        .map_err(to_py)
}

/// `U₁(θ)` of the scalar model `y = 5θ⁶x + η` with prior `N(0, 1)`.
#[pyfunction]
#[pyo3(signature = (theta, noise_variance=None, nodes=101, resolution=1024))]
fn linear1d_u1(theta: f64, noise_variance: Option<f64>, nodes: usize, resolution: usize) -> PyResult<UtilityEstimate> {
    let model = linear_1d(noise_variance)?;
    let prior = GaussianMeasure::standard(1).into();
    let outer = OuterRule::evidence(1, nodes).map_err(to_py)?;
    Ok(utilities::u1_nested(&prior, &model, &[theta], &outer, resolution).map_err(to_py)?.into())
}

/// `U₁^M(θ)` of the same model with the prior replaced by `atoms`.
#[pyfunction]
#[pyo3(signature = (atoms, theta, noise_variance=None))]
fn linear1d_u1_empirical(atoms: &Measure, theta: f64, noise_variance: Option<f64>) -> PyResult<UtilityEstimate> {
    let measures::Measure::Empirical(e) = &atoms.inner else {
        return Err(PyValueError::new_err("atoms must be an empirical measure"));
    };
    let model = linear_1d(noise_variance)?;
    Ok(utilities::u1_empirical(e, &model, &[theta], &EmpiricalOuter::default()).map_err(to_py)?.into())
}

#[pymodule]
fn wassoed_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Measure>()?;
    m.add_class::<PyTransportMap1D>()?;
    m.add_class::<UtilityEstimate>()?;
    m.add_class::<LinearGaussianModel>()?;
    m.add_function(wrap_pyfunction!(wasserstein_distance, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_plan, m)?)?;
    m.add_function(wrap_pyfunction!(w1_1d, m)?)?;
    m.add_function(wrap_pyfunction!(linear1d_u1, m)?)?;
    m.add_function(wrap_pyfunction!(linear1d_u1_empirical, m)?)?;
    Ok(())
}
