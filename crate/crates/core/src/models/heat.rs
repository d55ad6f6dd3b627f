//! Heat diffusion on the unit square with a Gaussian source switched off at
//! `τ`, homogeneous Neumann boundary and zero initial state.
//!
//! Space: vertex-centred second-order Laplacian with ghost-point Neumann
//! closure. Time: Crank–Nicolson. The discrete Laplacian is diagonalized by
//! the cosine modes `cos(kπ j/(N−1))`, so each mode advances by a scalar
//! recursion that is algebraically the Crank–Nicolson step.

use std::f64::consts::PI;

use super::ForwardModel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct HeatSolverConfig {
    /// Nodes per axis (`N_z`).
    pub grid: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Source width `h`.
    pub source_width: f64,
    /// Source switch-off time `τ`.
    pub cutoff: f64,
    pub obs_times: Vec<f64>,
    /// Multiplies the source; zero gives the trivial solution.
    pub source_scale: f64,
    /// Backward-Euler half steps replacing the first Crank–Nicolson step
    /// after each source switch (0 disables the smoothing).
    pub smoothing_steps: usize,
}

impl Default for HeatSolverConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            dt: 0.004,
            horizon: 0.4,
            source_width: 0.05,
            cutoff: 0.3,
            obs_times: vec![0.08, 0.16, 0.24, 0.32, 0.40],
            source_scale: 1.0,
            smoothing_steps: 2,
        }
    }
}

fn on_grid(t: f64, dt: f64) -> Option<usize> {
    let k = (t / dt).round();
    ((t / dt - k).abs() < 1e-9 && k >= 0.0).then_some(k as usize)
}

impl HeatSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 3 {
            return Err(Error::arg("heat grid needs at least 3 nodes per axis"));
        }
        if !(self.dt > 0.0 && self.dt <= 0.01) {
            return Err(Error::arg(format!("time step {} outside (0, 0.01]", self.dt)));
        }
        if !(self.source_width > 0.0) {
            return Err(Error::arg("source width must be positive"));
        }
        if on_grid(self.horizon, self.dt).is_none() || on_grid(self.cutoff, self.dt).is_none() {
            return Err(Error::arg("horizon and cutoff must be multiples of the time step"));
        }
        for &t in &self.obs_times {
            if on_grid(t, self.dt).is_none() || t > self.horizon + 1e-12 || t <= 0.0 {
                return Err(Error::arg(format!("observation time {t} is not on the time grid")));
            }
        }
        if self.obs_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg("observation times must increase"));
        }
        Ok(())
    }

    /// Stable textual form used for cache keys.
    pub fn fingerprint(&self) -> String {
        format!(
            "grid={};dt={:e};T={:e};h={:e};tau={:e};obs={:?};scale={:e};smooth={}",
            self.grid,
            self.dt,
            self.horizon,
            self.source_width,
            self.cutoff,
            self.obs_times,
            self.source_scale,
            self.smoothing_steps
        )
    }
}

/// One-dimensional modal data shared by all solves on a grid.
struct Modes {
    n: usize,
    /// `phi[k * n + j] = cos(kπ j/(N−1))`
    phi: Vec<f64>,
    eig: Vec<f64>,
    /// Trapezoid weights of the vertex grid.
    quad: Vec<f64>,
    norms: Vec<f64>,
}

impl Modes {
    fn new(n: usize) -> Self {
        let h = 1.0 / (n - 1) as f64;
        let mut phi = vec![0.0; n * n];
        for k in 0..n {
            for j in 0..n {
                // Reduce kj mod 2(N−1) so the angle stays small and exact.
                let r = (k * j) % (2 * (n - 1));
                phi[k * n + j] = (PI * r as f64 / (n - 1) as f64).cos();
            }
        }
        let eig = (0..n)
            .map(|k| {
                let s = (0.5 * PI * k as f64 / (n - 1) as f64).sin();
                -4.0 * s * s / (h * h)
            })
            .collect();
        let quad: Vec<f64> = (0..n).map(|j| if j == 0 || j == n - 1 { 0.5 * h } else { h }).collect();
        let norms = (0..n)
            .map(|k| (0..n).map(|j| quad[j] * phi[k * n + j] * phi[k * n + j]).sum())
            .collect();
        Self { n, phi, eig, quad, norms }
    }

    fn project(&self, values: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|k| {
                let row = &self.phi[k * self.n..(k + 1) * self.n];
                row.iter().zip(values).zip(&self.quad).map(|((p, v), q)| p * v * q).sum::<f64>() / self.norms[k]
            })
            .collect()
    }

    /// Field `F_ij = Σ_kl C_kl φ_k(i) φ_l(j)` from row-major coefficients.
    fn synthesize(&self, coef: &[f64]) -> Vec<f64> {
        let n = self.n;
        // T_kj = Σ_l C_kl φ_l(j)
        let mut t = vec![0.0; n * n];
        for k in 0..n {
            let row = &mut t[k * n..(k + 1) * n];
            for l in 0..n {
                let c = coef[k * n + l];
                if c == 0.0 {
                    continue;
                }
                let p = &self.phi[l * n..(l + 1) * n];
                for j in 0..n {
                    row[j] += c * p[j];
                }
            }
        }
        let mut f = vec![0.0; n * n];
        for k in 0..n {
            let p = &self.phi[k * n..(k + 1) * n];
            let trow = &t[k * n..(k + 1) * n];
            for i in 0..n {
                let pi = p[i];
                if pi == 0.0 {
                    continue;
                }
                let frow = &mut f[i * n..(i + 1) * n];
                for j in 0..n {
                    frow[j] += pi * trow[j];
                }
            }
        }
        f
    }
}

/// Grid snapshots of `v(·, t)` at the observation times.
#[derive(Clone, Debug)]
pub struct HeatField {
    pub grid: usize,
    pub times: Vec<f64>,
    /// `snapshots[t][i * grid + j] = v(z = (i, j)/(N−1), t)`
    pub snapshots: Vec<Vec<f64>>,
}

impl HeatField {
    /// Bilinear interpolation of snapshot `t_idx` at `theta ∈ [0, 1]²`.
    pub fn value_at(&self, t_idx: usize, theta: &[f64]) -> f64 {
        let n = self.grid;
        let m = (n - 1) as f64;
        let locate = |s: f64| {
            let u = s.clamp(0.0, 1.0) * m;
            let i = (u.floor() as usize).min(n - 2);
            (i, u - i as f64)
        };
        let (i, a) = locate(theta[0]);
        let (j, b) = locate(theta[1]);
        let f = &self.snapshots[t_idx];
        let v00 = f[i * n + j];
        let v10 = f[(i + 1) * n + j];
        let v01 = f[i * n + j + 1];
        let v11 = f[(i + 1) * n + j + 1];
        (1.0 - a) * ((1.0 - b) * v00 + b * v01) + a * ((1.0 - b) * v10 + b * v11)
    }

    pub fn readings(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.times.len()).map(|t| self.value_at(t, theta)).collect()
    }

    /// Trapezoid integral of snapshot `t_idx` over the square.
    pub fn mass(&self, t_idx: usize) -> f64 {
        let n = self.grid;
        let h = 1.0 / (n - 1) as f64;
        let w = |i: usize| if i == 0 || i == n - 1 { 0.5 * h } else { h };
        let f = &self.snapshots[t_idx];
        (0..n).map(|i| (0..n).map(|j| w(i) * w(j) * f[i * n + j]).sum::<f64>()).sum()
    }

    pub fn min_value(&self) -> f64 {
        self.snapshots.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Reusable solver holding the modal basis for one configuration.
pub struct HeatSolver {
    config: HeatSolverConfig,
    modes: Modes,
}

impl HeatSolver {
    pub fn new(config: HeatSolverConfig) -> Result<Self> {
        config.validate()?;
        let modes = Modes::new(config.grid);
        Ok(Self { config, modes })
    }

    pub fn config(&self) -> &HeatSolverConfig {
        &self.config
    }

    /// Source profile `exp(−(z − c)²/(2h²))` at the grid nodes of one axis.
    fn source_axis(&self, c: f64) -> Vec<f64> {
        let n = self.config.grid;
        let h = self.config.source_width;
        (0..n)
            .map(|j| {
                let z = j as f64 / (n - 1) as f64;
                (-(z - c) * (z - c) / (2.0 * h * h)).exp()
            })
            .collect()
    }

    /// Source `S(z, x)` at the grid nodes.
    pub fn source_field(&self, x: &[f64]) -> Vec<f64> {
        let h = self.config.source_width;
        let amp = self.config.source_scale / (PI * h * h);
        let (g1, g2) = (self.source_axis(x[0]), self.source_axis(x[1]));
        let n = self.config.grid;
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                s[i * n + j] = amp * g1[i] * g2[j];
            }
        }
        s
    }

    pub fn solve(&self, x: &[f64]) -> Result<HeatField> {
        if x.len() != 2 {
            return Err(Error::arg("source location must be two-dimensional"));
        }
        let cfg = &self.config;
        let n = cfg.grid;
        let h = cfg.source_width;
        let amp = cfg.source_scale / (PI * h * h);
        let (c1, c2) = (self.modes.project(&self.source_axis(x[0])), self.modes.project(&self.source_axis(x[1])));
        let steps = on_grid(cfg.horizon, cfg.dt).expect("validated");
        let cut = on_grid(cfg.cutoff, cfg.dt).expect("validated");
        let obs: Vec<usize> = cfg.obs_times.iter().map(|&t| on_grid(t, cfg.dt).expect("validated")).collect();

        let mut coef = vec![0.0; n * n];
        let mut src = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                src[k * n + l] = amp * c1[k] * c2[l];
            }
        }
        let dt = cfg.dt;
        let mut snapshots = Vec::with_capacity(obs.len());
        let mut next_obs = 0;
        let mut step = 0;
        while step < steps {
            let with_source = step < cut;
            // Smoothed restart after each switch of the source.
            let smooth = cfg.smoothing_steps > 0 && (step == 0 || step == cut);
            for k in 0..n {
                for l in 0..n {
                    let mu = self.modes.eig[k] + self.modes.eig[l];
                    let s = if with_source { src[k * n + l] } else { 0.0 };
                    let c = &mut coef[k * n + l];
                    if smooth {
                        let sub = dt / cfg.smoothing_steps as f64;
                        for _ in 0..cfg.smoothing_steps {
                            *c = (*c + sub * s) / (1.0 - sub * mu);
                        }
                    } else {
                        let den = 1.0 - 0.5 * dt * mu;
                        *c = ((1.0 + 0.5 * dt * mu) * *c + dt * s) / den;
                    }
                }
            }
            step += 1;
            while next_obs < obs.len() && obs[next_obs] == step {
                let field = self.modes.synthesize(&coef);
                if field.iter().any(|v| !v.is_finite() || v.abs() > 1e10) {
                    return Err(Error::numeric(format!("heat solve unstable at step {step}")));
                }
                snapshots.push(field);
                next_obs += 1;
            }
        }
        Ok(HeatField { grid: n, times: cfg.obs_times.clone(), snapshots })
    }
}

/// One solve for source location `x`.
pub fn solve_heat(config: &HeatSolverConfig, x: &[f64]) -> Result<HeatField> {
    HeatSolver::new(config.clone())?.solve(x)
}

/// Direct forward model `G(x; θ) = [v(θ, t₁), …, v(θ, t₅)]` (one PDE solve
/// per evaluation).
pub struct HeatModel {
    solver: HeatSolver,
}

impl HeatModel {
    pub fn new(config: HeatSolverConfig) -> Result<Self> {
        Ok(Self { solver: HeatSolver::new(config)? })
    }

    pub fn solver(&self) -> &HeatSolver {
        &self.solver
    }
}

impl ForwardModel for HeatModel {
    fn name(&self) -> &str {
        "heat"
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        self.solver.config.obs_times.len()
    }
    fn design_dim(&self) -> usize {
        2
    }
    fn evaluate_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()> {
        if theta.len() != 2 {
            return Err(Error::arg("sensor location must be two-dimensional"));
        }
        let field = self.solver.solve(x)?;
        out.copy_from_slice(&field.readings(theta));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_source_gives_zero_field() {
        let cfg = HeatSolverConfig { source_scale: 0.0, ..Default::default() };
        let f = solve_heat(&cfg, &[0.3, 0.4]).unwrap();
        assert!(f.snapshots.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn mass_balance() {
        let cfg = HeatSolverConfig::default();
        let solver = HeatSolver::new(cfg.clone()).unwrap();
        let x = [0.37, 0.61];
        let f = solver.solve(&x).unwrap();
        let s = solver.source_field(&x);
        let src = HeatField { grid: cfg.grid, times: vec![0.0], snapshots: vec![s] };
        let expected = cfg.cutoff * src.mass(0);
        let got = f.mass(4);
        assert!((got - expected).abs() < 0.01 * expected, "{got} vs {expected}");
    }

    #[test]
    fn modal_step_matches_matrix_crank_nicolson() {
        // One step of the assembled scheme on a 5x5 grid, solved densely.
        let cfg = HeatSolverConfig {
            grid: 5,
            dt: 0.01,
            horizon: 0.01,
            cutoff: 0.01,
            obs_times: vec![0.01],
            smoothing_steps: 0,
            ..Default::default()
        };
        let solver = HeatSolver::new(cfg.clone()).unwrap();
        let x = [0.3, 0.55];
        let got = &solver.solve(&x).unwrap().snapshots[0];
        let n = 5;
        let h2 = 0.25f64 * 0.25;
        let mut a = nalgebra::DMatrix::<f64>::zeros(n * n, n * n);
        let idx = |i: usize, j: usize| i * n + j;
        for i in 0..n {
            for j in 0..n {
                let r = idx(i, j);
                a[(r, r)] = -4.0 / h2;
                let nb = |k: usize, d: isize| -> usize {
                    let m = k as isize + d;
                    // Ghost-point reflection.
                    if m < 0 { 1 } else if m >= n as isize { n - 2 } else { m as usize }
                };
                for (di, dj) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let c = idx(if di != 0 { nb(i, di) } else { i }, if dj != 0 { nb(j, dj) } else { j });
                    a[(r, c)] += 1.0 / h2;
                }
            }
        }
        let s = nalgebra::DVector::from_vec(solver.source_field(&x));
        let eye = nalgebra::DMatrix::<f64>::identity(n * n, n * n);
        let lhs = &eye - &a * (0.5 * cfg.dt);
        let v = lhs.lu().solve(&(s * cfg.dt)).unwrap();
        for k in 0..n * n {
            assert!((v[k] - got[k]).abs() < 1e-12 * v.amax(), "{k}: {} vs {}", v[k], got[k]);
        }
    }

    #[test]
    fn self_convergence_is_second_order() {
        let x = [0.42, 0.3];
        let probes = [[0.125, 0.875], [0.5, 0.5], [0.75, 0.25], [0.25, 0.625]];
        let run = |grid: usize, dt: f64| {
            let f = solve_heat(&HeatSolverConfig { grid, dt, ..Default::default() }, &x).unwrap();
            probes.iter().flat_map(|p| f.readings(p)).collect::<Vec<f64>>()
        };
        // Probes sit on all three grids, so interpolation adds no error.
        let coarse = run(33, 0.01);
        let mid = run(65, 0.005);
        let fine = run(129, 0.0025);
        let d1: f64 = coarse.iter().zip(&mid).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let d2: f64 = mid.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d1 / d2 >= 3.0, "{d1} / {d2}");
    }

    #[test]
    fn field_is_nonnegative() {
        let cfg = HeatSolverConfig::default();
        let solver = HeatSolver::new(cfg).unwrap();
        for x in [[0.5, 0.5], [0.02, 0.03], [0.97, 0.5], [0.0, 1.0]] {
            let f = solver.solve(&x).unwrap();
            assert!(f.min_value() >= -1e-10, "{x:?}: {}", f.min_value());
        }
    }

    #[test]
    fn early_readings_are_positive() {
        let cfg = HeatSolverConfig { obs_times: vec![0.04], ..Default::default() };
        let solver = HeatSolver::new(cfg).unwrap();
        for x in [[0.05, 0.05], [0.5, 0.5], [0.9, 0.2]] {
            let f = solver.solve(&x).unwrap();
            for theta in [[0.95, 0.95], [0.01, 0.99], [0.5, 0.02]] {
                assert!(f.value_at(0, &theta) > 0.0, "{x:?} {theta:?}");
            }
        }
    }

    #[test]
    fn square_symmetries() {
        let solver = HeatSolver::new(HeatSolverConfig::default()).unwrap();
        let f = solver.solve(&[0.5, 0.5]).unwrap();
        for a in [0.1, 0.33, 0.8] {
            for t in 0..5 {
                assert!((f.value_at(t, &[0.5, a]) - f.value_at(t, &[a, 0.5])).abs() < 1e-6);
            }
        }
        let x = [0.3, 0.8];
        let theta = [0.15, 0.6];
        let g = solver.solve(&x).unwrap().readings(&theta);
        let reflected = solver.solve(&[1.0 - x[0], x[1]]).unwrap().readings(&[1.0 - theta[0], theta[1]]);
        let swapped = solver.solve(&[x[1], x[0]]).unwrap().readings(&[theta[1], theta[0]]);
        for t in 0..5 {
            assert!((g[t] - reflected[t]).abs() < 1e-6);
            assert!((g[t] - swapped[t]).abs() < 1e-6);
        }
    }
}
