//! Forward models `G(x; θ)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub mod heat;
pub mod pce;

pub use heat::{solve_heat, HeatField, HeatModel, HeatSolverConfig};
pub use pce::{build_pce_surrogate, default_cache_dir, fit_pce_surrogate, load_or_build, load_or_fit, PceSurrogate, PceTrainingConfig};

/// Observation map `x ↦ G(x; θ)`. Implementations must be pure: repeated
/// evaluation returns bitwise-identical output, and concurrent calls are
/// allowed.
pub trait ForwardModel: Send + Sync {
    fn name(&self) -> &str;
    /// Dimension `n` of the unknown `x`.
    fn input_dim(&self) -> usize;
    /// Dimension `d` of the observation.
    fn output_dim(&self) -> usize;
    fn design_dim(&self) -> usize;

    fn evaluate_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()>;

    fn evaluate(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.evaluate_into(x, theta, &mut out)?;
        Ok(out)
    }

    /// The matrix `A(θ)` when `G(x; θ) = A(θ) x`.
    fn linear_operator(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::arg(format!("{what} has length {got}, expected {expected}")));
    }
    Ok(())
}

/// `G(x; θ) = 5 θ⁶ x` on `x ∈ ℝ`, `θ ∈ [−1, 1]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Linear1d {
    pub gain: f64,
    pub power: i32,
}

pub fn linear_1d_model() -> Linear1d {
    Linear1d { gain: 5.0, power: 6 }
}

/// Noise variance used with [`linear_1d_model`].
pub const LINEAR_1D_NOISE_VARIANCE: f64 = 0.05 * 0.05;

impl Linear1d {
    pub fn factor(&self, theta: f64) -> f64 {
        self.gain * theta.powi(self.power)
    }
}

impl ForwardModel for Linear1d {
    fn name(&self) -> &str {
        "linear1d"
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn design_dim(&self) -> usize {
        1
    }
    fn evaluate_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("x", x.len(), 1)?;
        check_len("theta", theta.len(), 1)?;
        out[0] = self.factor(theta[0]) * x[0];
        Ok(())
    }
    fn linear_operator(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, self.factor(*theta.first()?)))
    }
}

/// Two-sensor nonlinear map on `x ∈ [0, 1]`, `θ ∈ [0, 1]²`:
/// `G_i = x³ θ_i² + x exp(−|0.2 − θ_i|)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Example1;

pub fn example1_model() -> Example1 {
    Example1
}

/// Noise variance per component used with [`example1_model`].
pub const EXAMPLE1_NOISE_VARIANCE: f64 = 1e-4;

impl ForwardModel for Example1 {
    fn name(&self) -> &str {
        "example1"
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn design_dim(&self) -> usize {
        2
    }
    fn evaluate_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("x", x.len(), 1)?;
        check_len("theta", theta.len(), 2)?;
        let x = x[0];
        for i in 0..2 {
            let t = theta[i];
            out[i] = x * x * x * t * t + x * (-(0.2 - t).abs()).exp();
        }
        Ok(())
    }
}

/// Design-independent linear map `G(x) = A x`.
#[derive(Clone, Debug)]
pub struct MatrixModel {
    a: DMatrix<f64>,
}

impl MatrixModel {
    pub fn new(a: DMatrix<f64>) -> Self {
        Self { a }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl ForwardModel for MatrixModel {
    fn name(&self) -> &str {
        "matrix"
    }
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }
    fn output_dim(&self) -> usize {
        self.a.nrows()
    }
    fn design_dim(&self) -> usize {
        0
    }
    fn evaluate_into(&self, x: &[f64], _theta: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("x", x.len(), self.a.ncols())?;
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..x.len()).map(|j| self.a[(i, j)] * x[j]).sum();
        }
        Ok(())
    }
    fn linear_operator(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }
}

/// Model that ignores `x`; every posterior equals the prior.
#[derive(Clone, Debug)]
pub struct ConstantModel {
    pub input_dim: usize,
    pub value: Vec<f64>,
}

impl ForwardModel for ConstantModel {
    fn name(&self) -> &str {
        "constant"
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.value.len()
    }
    fn design_dim(&self) -> usize {
        0
    }
    fn evaluate_into(&self, _x: &[f64], _theta: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.value);
        Ok(())
    }
    fn linear_operator(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        if self.value.iter().all(|v| *v == 0.0) {
            Some(DMatrix::zeros(self.value.len(), self.input_dim))
        } else {
            None
        }
    }
}
