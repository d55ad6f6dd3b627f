//! Second boundary value problem for Monge–Ampère on a rectangle, solved by
//! Kansa collocation with `r⁴ log r` thin-plate splines plus a quadratic
//! tail.
//!
//! Unknowns are the spline weights `λ` and the six polynomial coefficients
//! `α`. Residual rows, each group RMS-normalized:
//! - interior: `log det D²φ − log ρ₁(x) + log ρ₂(∇φ(x))`;
//! - boundary: `∂φ/∂n` equals the matching face coordinate of the target box
//!   (this is `∇φ·n = x·n` when both boxes coincide);
//! - the moment conditions `Σ λ_k p_j(x^k) = 0` and `∫ φ = 0`;
//! - hinge penalties for a non-convex Hessian at boundary points and for
//!   `∇φ` leaving the target box at interior points.
//!
//! The system is minimized by Levenberg–Marquardt with QR-solved steps.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use super::PointMap;
use crate::error::{Error, Result};
use crate::measures::GaussianMeasure;
use crate::quadrature::{clenshaw_curtis, tensor_product};

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxDomain {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl BoxDomain {
    pub fn new(lower: [f64; 2], upper: [f64; 2]) -> Result<Self> {
        if !(0..2).all(|k| lower[k].is_finite() && upper[k].is_finite() && lower[k] < upper[k]) {
            return Err(Error::arg("box needs finite bounds with lower < upper"));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit() -> Self {
        Self { lower: [0.0; 2], upper: [1.0; 2] }
    }

    pub fn area(&self) -> f64 {
        (self.upper[0] - self.lower[0]) * (self.upper[1] - self.lower[1])
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.lower[0] + self.upper[0]), 0.5 * (self.lower[1] + self.upper[1])]
    }

    /// Half of the longer side.
    pub fn half_size(&self) -> f64 {
        0.5 * (self.upper[0] - self.lower[0]).max(self.upper[1] - self.lower[1])
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        (0..2).all(|k| x[k] >= self.lower[k] && x[k] <= self.upper[k])
    }

    pub fn clamp(&self, x: [f64; 2]) -> [f64; 2] {
        [x[0].clamp(self.lower[0], self.upper[0]), x[1].clamp(self.lower[1], self.upper[1])]
    }

    /// Per-axis distance outside the box (zero inside).
    fn overshoot(&self, x: [f64; 2]) -> [f64; 2] {
        let mut o = [0.0; 2];
        for k in 0..2 {
            o[k] = (self.lower[k] - x[k]).max(x[k] - self.upper[k]).max(0.0);
        }
        o
    }
}

/// A density on the plane, given through its logarithm. Normalization is
/// not required; the solver normalizes over the relevant box.
pub trait Density2d: Send + Sync {
    /// `log ρ(x)`, `−∞` outside the support.
    fn log_density(&self, x: [f64; 2]) -> f64;

    fn grad_log_density(&self, x: [f64; 2]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for k in 0..2 {
            let h = 1e-6 * x[k].abs().max(1.0);
            let (mut a, mut b) = (x, x);
            a[k] += h;
            b[k] -= h;
            let (fa, fb) = (self.log_density(a), self.log_density(b));
            g[k] = if fa.is_finite() && fb.is_finite() { (fa - fb) / (2.0 * h) } else { 0.0 };
        }
        g
    }
}

/// Constant density on a box.
#[derive(Clone, Copy, Debug)]
pub struct UniformDensity(pub BoxDomain);

impl Density2d for UniformDensity {
    fn log_density(&self, x: [f64; 2]) -> f64 {
        if self.0.contains(x) {
            -self.0.area().ln()
        } else {
            f64::NEG_INFINITY
        }
    }
    fn grad_log_density(&self, _x: [f64; 2]) -> [f64; 2] {
        [0.0; 2]
    }
}

/// Bivariate normal density.
#[derive(Clone, Debug)]
pub struct GaussianDensity {
    mean: [f64; 2],
    precision: [[f64; 2]; 2],
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(measure: &GaussianMeasure) -> Result<Self> {
        if measure.dim() != 2 {
            return Err(Error::UnsupportedDimension { expected: 2, got: measure.dim() });
        }
        let c = measure.cov();
        let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
        if !(det > 0.0) {
            return Err(Error::arg("Gaussian density needs a positive definite covariance"));
        }
        let precision = [[c[(1, 1)] / det, -c[(0, 1)] / det], [-c[(1, 0)] / det, c[(0, 0)] / det]];
        let m = measure.mean();
        Ok(Self {
            mean: [m[0], m[1]],
            precision,
            log_norm: -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln(),
        })
    }
}

impl Density2d for GaussianDensity {
    fn log_density(&self, x: [f64; 2]) -> f64 {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        let p = &self.precision;
        self.log_norm - 0.5 * (d[0] * (p[0][0] * d[0] + p[0][1] * d[1]) + d[1] * (p[1][0] * d[0] + p[1][1] * d[1]))
    }
    fn grad_log_density(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        let p = &self.precision;
        [-(p[0][0] * d[0] + p[0][1] * d[1]), -(p[1][0] * d[0] + p[1][1] * d[1])]
    }
}

/// Density from a closure returning `ρ(x)` (not its logarithm).
pub struct FnDensity<F>(pub F);

impl<F: Fn([f64; 2]) -> f64 + Send + Sync> Density2d for FnDensity<F> {
    fn log_density(&self, x: [f64; 2]) -> f64 {
        (self.0)(x).ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialGuess {
    /// `φ₀ = ‖x‖²/2`.
    Identity,
    /// Quadratic whose gradient is the diagonal affine map between the boxes.
    BoxAffine,
}

#[derive(Clone, Debug)]
pub struct MongeAmpereOptions {
    /// Interior collocation points on a uniform square layout; must be a
    /// perfect square.
    pub interior_count: usize,
    /// Boundary collocation points, spread evenly over the four sides
    /// (corners excluded); must be divisible by four.
    pub boundary_count: usize,
    pub max_iterations: usize,
    /// Stop once every residual group has RMS below this value.
    pub tolerance: f64,
    pub penalty_weight: f64,
    /// Value of `ρ₂` where it vanishes; outside its box `ρ₂` takes its
    /// value at the nearest box point.
    pub density_floor: f64,
    /// Clenshaw–Curtis nodes per axis for normalizing the densities and the
    /// zero-average row.
    pub quadrature_nodes: usize,
    pub initial: InitialGuess,
}

impl Default for MongeAmpereOptions {
    fn default() -> Self {
        Self {
            interior_count: 144,
            boundary_count: 192,
            max_iterations: 200,
            tolerance: 1e-8,
            penalty_weight: 1e3,
            density_floor: 1e-12,
            quadrature_nodes: 129,
            initial: InitialGuess::Identity,
        }
    }
}

/// Residual diagnostics of a solved potential.
#[derive(Clone, Debug, Default)]
pub struct MongeAmpereReport {
    pub iterations: usize,
    /// `√(2·merit)` after each accepted step.
    pub residual_history: Vec<f64>,
    /// RMS of `ρ₁ − det D²φ · ρ₂(∇φ)` over interior points, relative to the
    /// RMS of `ρ₁`.
    pub interior_rms: f64,
    /// RMS of `∂φ/∂n − target face` over boundary points, in units of the
    /// target box half-size.
    pub boundary_rms: f64,
    /// `|∫φ| / |Ω|`.
    pub mean_value: f64,
    /// Smallest Hessian eigenvalue over interior collocation points.
    pub min_interior_eigenvalue: f64,
}

const POLY: usize = 6;

#[derive(Clone, Copy)]
struct Derivs {
    val: f64,
    g: [f64; 2],
    h: [f64; 3],
}

fn spline(d: [f64; 2]) -> Derivs {
    let r2 = d[0] * d[0] + d[1] * d[1];
    if r2 == 0.0 {
        return Derivs { val: 0.0, g: [0.0; 2], h: [0.0; 3] };
    }
    let l = r2.ln();
    let a = r2 * (2.0 * l + 1.0);
    let b = 4.0 * l + 6.0;
    Derivs {
        val: 0.5 * r2 * r2 * l,
        g: [d[0] * a, d[1] * a],
        h: [a + b * d[0] * d[0], b * d[0] * d[1], a + b * d[1] * d[1]],
    }
}

fn poly(u: [f64; 2]) -> [Derivs; POLY] {
    let z = Derivs { val: 0.0, g: [0.0; 2], h: [0.0; 3] };
    [
        Derivs { val: 1.0, ..z },
        Derivs { val: u[0], g: [1.0, 0.0], ..z },
        Derivs { val: u[1], g: [0.0, 1.0], ..z },
        Derivs { val: u[0] * u[0], g: [2.0 * u[0], 0.0], h: [2.0, 0.0, 0.0] },
        Derivs { val: u[0] * u[1], g: [u[1], u[0]], h: [0.0, 1.0, 0.0] },
        Derivs { val: u[1] * u[1], g: [0.0, 2.0 * u[1]], h: [0.0, 0.0, 2.0] },
    ]
}

/// Gradient `∇φ̂` of a fitted potential, with the spline centres and
/// coefficients needed to evaluate it anywhere.
#[derive(Clone, Debug)]
pub struct MongeAmperePotential {
    source: BoxDomain,
    target: BoxDomain,
    /// Scaled coordinates `u = (x − origin) / scale`.
    origin: [f64; 2],
    scale: f64,
    centers: Vec<[f64; 2]>,
    interior_count: usize,
    lambda: Vec<f64>,
    alpha: [f64; POLY],
    report: MongeAmpereReport,
}

impl MongeAmperePotential {
    fn to_unit(&self, x: [f64; 2]) -> [f64; 2] {
        [(x[0] - self.origin[0]) / self.scale, (x[1] - self.origin[1]) / self.scale]
    }

    fn derivs(&self, x: [f64; 2]) -> Derivs {
        let u = self.to_unit(x);
        let mut acc = Derivs { val: 0.0, g: [0.0; 2], h: [0.0; 3] };
        let mut add = |d: Derivs, c: f64| {
            acc.val += c * d.val;
            acc.g[0] += c * d.g[0];
            acc.g[1] += c * d.g[1];
            for k in 0..3 {
                acc.h[k] += c * d.h[k];
            }
        };
        for (xc, l) in self.centers.iter().zip(&self.lambda) {
            add(spline([u[0] - xc[0], u[1] - xc[1]]), *l);
        }
        for (p, a) in poly(u).into_iter().zip(&self.alpha) {
            add(p, *a);
        }
        let s = self.scale;
        Derivs {
            val: acc.val,
            g: [acc.g[0] / s, acc.g[1] / s],
            h: [acc.h[0] / (s * s), acc.h[1] / (s * s), acc.h[2] / (s * s)],
        }
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.derivs(x).val
    }

    /// The transport map `∇φ̂(x)`.
    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        self.derivs(x).g
    }

    pub fn hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let h = self.derivs(x).h;
        [[h[0], h[1]], [h[1], h[2]]]
    }

    pub fn source(&self) -> &BoxDomain {
        &self.source
    }

    pub fn target(&self) -> &BoxDomain {
        &self.target
    }

    pub fn report(&self) -> &MongeAmpereReport {
        &self.report
    }

    /// Collocation points in physical coordinates; the first
    /// `interior_count` are interior.
    pub fn collocation_points(&self) -> Vec<[f64; 2]> {
        self.centers
            .iter()
            .map(|u| [self.origin[0] + self.scale * u[0], self.origin[1] + self.scale * u[1]])
            .collect()
    }

    pub fn interior_count(&self) -> usize {
        self.interior_count
    }

    /// Largest distance by which `∇φ̂` leaves the target box on an
    /// `n × n` probe grid of the source box, relative to the target size.
    pub fn max_overshoot(&self, n: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let t = |k: usize, v: usize| {
                    self.source.lower[k] + (self.source.upper[k] - self.source.lower[k]) * v as f64 / (n - 1) as f64
                };
                let o = self.target.overshoot(self.gradient([t(0, i), t(1, j)]));
                worst = worst.max(o[0].max(o[1]));
            }
        }
        worst / (2.0 * self.target.half_size())
    }

    /// Writes `kind,index,x1,x2,coef` rows: spline centres (`interior`,
    /// `boundary`) with their weights, then `poly` rows in the scaled
    /// coordinates, then `origin` and `scale`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "kind,index,x1,x2,coef")?;
        for (k, (x, l)) in self.collocation_points().iter().zip(&self.lambda).enumerate() {
            let kind = if k < self.interior_count { "interior" } else { "boundary" };
            writeln!(out, "{kind},{k},{:e},{:e},{l:e}", x[0], x[1])?;
        }
        for (j, a) in self.alpha.iter().enumerate() {
            writeln!(out, "poly,{j},,,{a:e}")?;
        }
        writeln!(out, "origin,0,{:e},{:e},", self.origin[0], self.origin[1])?;
        writeln!(out, "scale,0,,,{:e}", self.scale)?;
        Ok(())
    }
}

impl PointMap for MongeAmperePotential {
    fn dim(&self) -> usize {
        2
    }
    fn map_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != 2 {
            return Err(Error::UnsupportedDimension { expected: 2, got: x.len() });
        }
        let g = self.gradient([x[0], x[1]]);
        out[..2].copy_from_slice(&g);
        Ok(())
    }
}

/// Smallest eigenvalue of `[[a, b], [b, c]]` and its unit eigenvector.
fn min_eigen(h: [f64; 3]) -> (f64, [f64; 2]) {
    let (a, b, c) = (h[0], h[1], h[2]);
    let m = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let lam = m - r;
    let v1 = [b, lam - a];
    let v2 = [lam - c, b];
    let n1 = v1[0].hypot(v1[1]);
    let n2 = v2[0].hypot(v2[1]);
    let v = if n1 == 0.0 && n2 == 0.0 {
        if a <= c {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        }
    } else if n1 >= n2 {
        [v1[0] / n1, v1[1] / n1]
    } else {
        [v2[0] / n2, v2[1] / n2]
    };
    (lam, v)
}

/// Face of the source box carrying a boundary point: axis and side.
#[derive(Clone, Copy)]
struct Face {
    axis: usize,
    upper: bool,
}

/// Precomputed per-point rows of basis derivatives (physical units).
struct Rows {
    g: [DMatrix<f64>; 2],
    h: [DMatrix<f64>; 3],
}

struct Problem<'a> {
    source: BoxDomain,
    target: BoxDomain,
    origin: [f64; 2],
    scale: f64,
    centers: Vec<[f64; 2]>,
    physical: Vec<[f64; 2]>,
    interior: usize,
    faces: Vec<Face>,
    rows: Rows,
    /// Row of `(1/|Ω|) ∫ b_j` for every basis function.
    average: DVector<f64>,
    /// `p_j(x^k)` for the moment conditions.
    moments: DMatrix<f64>,
    log_rho1: Vec<f64>,
    rho2: &'a dyn Density2d,
    log_z2: f64,
    log_floor: f64,
    det_floor: f64,
    penalty: f64,
}

struct Assembly {
    f: DVector<f64>,
    j: DMatrix<f64>,
    active_penalties: usize,
}

impl Problem<'_> {
    fn unknowns(&self) -> usize {
        self.centers.len() + POLY
    }

    /// `log ρ₂` continued outside the target box by its value at the nearest
    /// box point, and floored where the density vanishes.
    fn log_rho2(&self, y: [f64; 2]) -> (f64, [f64; 2]) {
        let inside = self.target.contains(y);
        let p = self.target.clamp(y);
        let l = self.rho2.log_density(p) - self.log_z2;
        if !l.is_finite() {
            return (self.log_floor, [0.0; 2]);
        }
        if inside {
            (l, self.rho2.grad_log_density(p))
        } else {
            (l, [0.0; 2])
        }
    }

    fn assemble(&self, c: &DVector<f64>) -> Assembly {
        let n = self.unknowns();
        let nb = self.centers.len() - self.interior;
        let gx = &self.rows.g[0] * c;
        let gy = &self.rows.g[1] * c;
        let hxx = &self.rows.h[0] * c;
        let hxy = &self.rows.h[1] * c;
        let hyy = &self.rows.h[2] * c;

        let mut f = Vec::new();
        let mut jrows: Vec<DVector<f64>> = Vec::new();
        let wi = 1.0 / (self.interior as f64).sqrt();
        for i in 0..self.interior {
            let (a, b, cc) = (hxx[i], hxy[i], hyy[i]);
            let det = a * cc - b * b;
            let (lr2, glr2) = self.log_rho2([gx[i], gy[i]]);
            let (val, inv) = if det > self.det_floor {
                (det.ln(), 1.0 / det)
            } else {
                (self.det_floor.ln() + (det - self.det_floor) / self.det_floor, 1.0 / self.det_floor)
            };
            f.push(wi * (val - self.log_rho1[i] + lr2));
            let row = (self.rows.h[0].row(i) * cc + self.rows.h[2].row(i) * a - self.rows.h[1].row(i) * (2.0 * b)) * inv
                + self.rows.g[0].row(i) * glr2[0]
                + self.rows.g[1].row(i) * glr2[1];
            jrows.push(row.transpose() * wi);
        }
        let wb = 1.0 / (nb as f64).sqrt();
        let ts = self.target.half_size();
        for (k, face) in self.faces.iter().enumerate() {
            let i = self.interior + k;
            let g = if face.axis == 0 { gx[i] } else { gy[i] };
            let want = if face.upper { self.target.upper[face.axis] } else { self.target.lower[face.axis] };
            f.push(wb * (g - want) / ts);
            jrows.push(self.rows.g[face.axis].row(i).transpose() * (wb / ts));
        }
        let wm = 1.0 / (POLY as f64).sqrt();
        for j in 0..POLY {
            let mut row = DVector::zeros(n);
            let mut v = 0.0;
            for k in 0..self.centers.len() {
                row[k] = self.moments[(k, j)] * wm;
                v += self.moments[(k, j)] * c[k];
            }
            f.push(v * wm);
            jrows.push(row);
        }
        let phi_scale = ts * self.source.half_size();
        f.push(self.average.dot(c) / phi_scale);
        jrows.push(&self.average / phi_scale);

        let sw = self.penalty.sqrt();
        let mut active = 0;
        let hscale = ts / self.source.half_size();
        for i in self.interior..self.centers.len() {
            let (lam, v) = min_eigen([hxx[i], hxy[i], hyy[i]]);
            let eps = 1e-6 * hscale;
            if lam < eps {
                active += 1;
                f.push(sw * wb * (eps - lam) / hscale);
                let d = self.rows.h[0].row(i) * (v[0] * v[0])
                    + self.rows.h[1].row(i) * (2.0 * v[0] * v[1])
                    + self.rows.h[2].row(i) * (v[1] * v[1]);
                jrows.push(d.transpose() * (-sw * wb / hscale));
            }
        }
        for i in 0..self.interior {
            let o = self.target.overshoot([gx[i], gy[i]]);
            for axis in 0..2 {
                if o[axis] > 0.0 {
                    active += 1;
                    let g = if axis == 0 { gx[i] } else { gy[i] };
                    let sign = if g > self.target.upper[axis] { 1.0 } else { -1.0 };
                    f.push(sw * wi * o[axis] / ts);
                    jrows.push(self.rows.g[axis].row(i).transpose() * (sign * sw * wi / ts));
                }
            }
        }
        let mut j = DMatrix::zeros(f.len(), n);
        for (r, row) in jrows.iter().enumerate() {
            j.set_row(r, &row.transpose());
        }
        Assembly { f: DVector::from_vec(f), j, active_penalties: active }
    }

    fn potential(&self, c: &DVector<f64>, report: MongeAmpereReport) -> MongeAmperePotential {
        let m = self.centers.len();
        let mut alpha = [0.0; POLY];
        for j in 0..POLY {
            alpha[j] = c[m + j];
        }
        MongeAmperePotential {
            source: self.source,
            target: self.target,
            origin: self.origin,
            scale: self.scale,
            centers: self.centers.clone(),
            interior_count: self.interior,
            lambda: c.rows(0, m).iter().copied().collect(),
            alpha,
            report,
        }
    }
}

fn layout(source: &BoxDomain, interior: usize, boundary: usize) -> Result<(Vec<[f64; 2]>, Vec<Face>)> {
    let side = (interior as f64).sqrt().round() as usize;
    if side * side != interior || side < 2 {
        return Err(Error::arg("interior collocation count must be a perfect square of at least 4"));
    }
    if boundary % 4 != 0 || boundary < 8 {
        return Err(Error::arg("boundary collocation count must be a multiple of 4, at least 8"));
    }
    let (lo, hi) = (source.lower, source.upper);
    let at = |k: usize, t: f64| lo[k] + (hi[k] - lo[k]) * t;
    let mut pts = Vec::with_capacity(interior + boundary);
    for i in 0..side {
        for j in 0..side {
            pts.push([at(0, (i as f64 + 0.5) / side as f64), at(1, (j as f64 + 0.5) / side as f64)]);
        }
    }
    let per = boundary / 4;
    let mut faces = Vec::with_capacity(boundary);
    for q in 0..per {
        let t = (q as f64 + 0.5) / per as f64;
        pts.push([lo[0], at(1, t)]);
        faces.push(Face { axis: 0, upper: false });
        pts.push([hi[0], at(1, t)]);
        faces.push(Face { axis: 0, upper: true });
        pts.push([at(0, t), lo[1]]);
        faces.push(Face { axis: 1, upper: false });
        pts.push([at(0, t), hi[1]]);
        faces.push(Face { axis: 1, upper: true });
    }
    Ok((pts, faces))
}

/// Log of `∫_box exp(log ρ)` by tensor Clenshaw–Curtis.
fn log_mass(rho: &dyn Density2d, b: &BoxDomain, nodes: usize) -> Result<f64> {
    let rule = tensor_product(&[
        clenshaw_curtis(nodes, b.lower[0], b.upper[0])?,
        clenshaw_curtis(nodes, b.lower[1], b.upper[1])?,
    ]);
    let logs: Vec<f64> = rule.iter().map(|(x, w)| rho.log_density([x[0], x[1]]) + w.ln()).collect();
    let l = crate::special::log_sum_exp(&logs);
    if !l.is_finite() {
        return Err(Error::arg("density has no mass on its box"));
    }
    Ok(l)
}

/// Solves for the Brenier potential pushing `rho1` on `source` to `rho2` on
/// `target`.
pub fn solve_monge_ampere(
    rho1: &dyn Density2d,
    source: BoxDomain,
    rho2: &dyn Density2d,
    target: BoxDomain,
    options: &MongeAmpereOptions,
) -> Result<MongeAmperePotential> {
    let (physical, faces) = layout(&source, options.interior_count, options.boundary_count)?;
    let origin = source.center();
    let scale = source.half_size();
    let centers: Vec<[f64; 2]> =
        physical.iter().map(|x| [(x[0] - origin[0]) / scale, (x[1] - origin[1]) / scale]).collect();
    let m = centers.len();
    let n = m + POLY;
    let interior = options.interior_count;

    let mut rows = Rows {
        g: [DMatrix::zeros(m, n), DMatrix::zeros(m, n)],
        h: [DMatrix::zeros(m, n), DMatrix::zeros(m, n), DMatrix::zeros(m, n)],
    };
    let mut moments = DMatrix::zeros(m, POLY);
    for (i, u) in centers.iter().enumerate() {
        let mut put = |col: usize, d: Derivs| {
            rows.g[0][(i, col)] = d.g[0] / scale;
            rows.g[1][(i, col)] = d.g[1] / scale;
            for k in 0..3 {
                rows.h[k][(i, col)] = d.h[k] / (scale * scale);
            }
        };
        for (k, xc) in centers.iter().enumerate() {
            put(k, spline([u[0] - xc[0], u[1] - xc[1]]));
        }
        let p = poly(*u);
        for j in 0..POLY {
            put(m + j, p[j]);
            moments[(i, j)] = p[j].val;
        }
    }

    let qn = options.quadrature_nodes;
    let rule = tensor_product(&[
        clenshaw_curtis(qn, source.lower[0], source.upper[0])?,
        clenshaw_curtis(qn, source.lower[1], source.upper[1])?,
    ]);
    let mut average = DVector::zeros(n);
    for (x, w) in rule.iter() {
        let u = [(x[0] - origin[0]) / scale, (x[1] - origin[1]) / scale];
        for (k, xc) in centers.iter().enumerate() {
            average[k] += w * spline([u[0] - xc[0], u[1] - xc[1]]).val;
        }
        for (j, p) in poly(u).iter().enumerate() {
            average[m + j] += w * p.val;
        }
    }
    average /= rule.weight_sum();

    let log_z1 = log_mass(rho1, &source, qn)?;
    let log_z2 = log_mass(rho2, &target, qn)?;
    let log_rho1: Vec<f64> = physical[..interior]
        .iter()
        .map(|x| {
            let l = rho1.log_density(*x) - log_z1;
            if l.is_finite() {
                Ok(l)
            } else {
                Err(Error::arg("source density must be positive on its box"))
            }
        })
        .collect::<Result<_>>()?;

    let mut problem = Problem {
        source,
        target,
        origin,
        scale,
        centers,
        physical,
        interior,
        faces,
        rows,
        average,
        moments,
        log_rho1,
        rho2,
        log_z2,
        log_floor: options.density_floor.ln(),
        det_floor: 1e-8 * target.area() / source.area(),
        penalty: options.penalty_weight,
    };

    // Initial quadratic in scaled coordinates: x = origin + s u.
    let mut c = DVector::zeros(n);
    let slopes = match options.initial {
        InitialGuess::Identity => [1.0, 1.0],
        InitialGuess::BoxAffine => [
            (target.upper[0] - target.lower[0]) / (source.upper[0] - source.lower[0]),
            (target.upper[1] - target.lower[1]) / (source.upper[1] - source.lower[1]),
        ],
    };
    let shift = match options.initial {
        InitialGuess::Identity => [0.0, 0.0],
        InitialGuess::BoxAffine => [
            target.lower[0] - slopes[0] * source.lower[0],
            target.lower[1] - slopes[1] * source.lower[1],
        ],
    };
    // φ₀ = Σ_k ½ a_k x_k² + b_k x_k
    for k in 0..2 {
        let (a, b, o) = (slopes[k], shift[k], origin[k]);
        c[m] += 0.5 * a * o * o + b * o;
        c[m + 1 + k] += (a * o + b) * scale;
    }
    c[m + 3] = 0.5 * slopes[0] * scale * scale;
    c[m + 5] = 0.5 * slopes[1] * scale * scale;
    c[m] -= problem.average.dot(&c);

    let mut asm = problem.assemble(&c);
    let mut merit = asm.f.norm_squared();
    let mut history = vec![merit.sqrt()];
    let mut mu: f64 = 1e-3;
    let mut iterations = 0;
    let group_rms = |a: &Assembly| a.f.iter().take(interior + (m - interior) + POLY + 1).map(|v| v * v).sum::<f64>();
    // Levenberg–Marquardt phases at fixed penalty weight; the weight doubles
    // between phases while a hinge is still active.
    'outer: loop {
        loop {
            if asm.active_penalties == 0 && group_rms(&asm).sqrt() <= options.tolerance {
                break 'outer;
            }
            if iterations >= options.max_iterations {
                break 'outer;
            }
            iterations += 1;
            let mut progress = false;
            while mu < 1e16 {
                let rows_j = asm.j.nrows();
                let mut aug = DMatrix::zeros(rows_j + n, n);
                aug.view_mut((0, 0), (rows_j, n)).copy_from(&asm.j);
                for k in 0..n {
                    aug[(rows_j + k, k)] = mu.sqrt() * asm.j.column(k).norm().max(1e-300);
                }
                let mut rhs = DVector::zeros(rows_j + n);
                rhs.rows_mut(0, rows_j).copy_from(&(-&asm.f));
                let qr = aug.qr();
                let qtb = qr.q().transpose() * rhs;
                let Some(step) = qr.r().solve_upper_triangular(&qtb) else {
                    mu *= 4.0;
                    continue;
                };
                let trial = &c + &step;
                let next = problem.assemble(&trial);
                let next_merit = next.f.norm_squared();
                if next_merit.is_finite() && next_merit < merit {
                    progress = (merit - next_merit) > 1e-14 * merit;
                    c = trial;
                    asm = next;
                    merit = next_merit;
                    mu = (mu / 3.0).max(1e-12);
                    break;
                }
                mu *= 4.0;
            }
            history.push(merit.sqrt());
            if !progress {
                break;
            }
        }
        if asm.active_penalties == 0 || problem.penalty >= 1e12 {
            break;
        }
        problem.penalty *= 2.0;
        asm = problem.assemble(&c);
        merit = asm.f.norm_squared();
        mu = 1e-3;
    }

    let mut report = MongeAmpereReport { iterations, residual_history: history, ..Default::default() };
    let pot = problem.potential(&c, report.clone());
    // Postconditions measured on the collocation points.
    let (mut num, mut den, mut min_eig) = (0.0, 0.0, f64::INFINITY);
    for i in 0..interior {
        let x = problem.physical[i];
        let d = pot.derivs(x);
        let det = d.h[0] * d.h[2] - d.h[1] * d.h[1];
        let r1 = problem.log_rho1[i].exp();
        let y = d.g;
        let r2 = problem.log_rho2(y).0.exp();
        num += (r1 - det * r2).powi(2);
        den += r1 * r1;
        min_eig = min_eig.min(min_eigen(d.h).0);
    }
    let mut bsum = 0.0;
    for (k, face) in problem.faces.iter().enumerate() {
        let g = pot.gradient(problem.physical[interior + k]);
        let want = if face.upper { target.upper[face.axis] } else { target.lower[face.axis] };
        bsum += ((g[face.axis] - want) / target.half_size()).powi(2);
    }
    report.interior_rms = (num / den).sqrt();
    report.boundary_rms = (bsum / problem.faces.len() as f64).sqrt();
    report.mean_value = problem.average.dot(&c).abs();
    report.min_interior_eigenvalue = min_eig;
    let ok = report.interior_rms <= 1e-4
        && report.boundary_rms <= 1e-4
        && report.mean_value <= 1e-6
        && report.min_interior_eigenvalue >= -1e-8;
    if !ok {
        return Err(Error::Convergence {
            message: format!(
                "Monge–Ampère residuals not met: interior {:.2e}, boundary {:.2e}, mean {:.2e}, min eigenvalue {:.2e}",
                report.interior_rms, report.boundary_rms, report.mean_value, report.min_interior_eigenvalue
            ),
            iterations,
            residual_history: report.residual_history,
        });
    }
    Ok(MongeAmperePotential { report, ..pot })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn check_spline_derivatives(d: [f64; 2]) {
        let h = 1e-5;
        let base = spline(d);
        for k in 0..2 {
            let (mut a, mut b) = (d, d);
            a[k] += h;
            b[k] -= h;
            let fd = (spline(a).val - spline(b).val) / (2.0 * h);
            assert!((fd - base.g[k]).abs() < 1e-8, "gradient {k}");
            let gd = [(spline(a).g[0] - spline(b).g[0]) / (2.0 * h), (spline(a).g[1] - spline(b).g[1]) / (2.0 * h)];
            let hk = if k == 0 { [base.h[0], base.h[1]] } else { [base.h[1], base.h[2]] };
            assert!((gd[0] - hk[0]).abs() < 1e-7 && (gd[1] - hk[1]).abs() < 1e-7, "hessian {k}");
        }
    }

    #[test]
    fn spline_derivatives() {
        for d in [[0.3, -0.2], [1.1, 0.7], [-0.05, 0.02]] {
            check_spline_derivatives(d);
        }
        let z = spline([0.0, 0.0]);
        assert_eq!((z.val, z.g, z.h), (0.0, [0.0; 2], [0.0; 3]));
    }

    #[test]
    fn min_eigen_matches_closed_form() {
        for h in [[2.0, 0.5, 1.0], [1.0, 0.0, 3.0], [3.0, 0.0, 1.0], [1.0, 1.0, 1.0]] {
            let (lam, v) = min_eigen(h);
            let av = [h[0] * v[0] + h[1] * v[1], h[1] * v[0] + h[2] * v[1]];
            assert!((av[0] - lam * v[0]).abs() < 1e-12 && (av[1] - lam * v[1]).abs() < 1e-12);
        }
    }

    fn small_options() -> MongeAmpereOptions {
        MongeAmpereOptions { interior_count: 64, boundary_count: 64, quadrature_nodes: 65, ..Default::default() }
    }

    #[test]
    fn same_density_gives_identity() {
        let b = BoxDomain::unit();
        let u = UniformDensity(b);
        let pot = solve_monge_ampere(&u, b, &u, b, &small_options()).unwrap();
        for x in [[0.2, 0.3], [0.5, 0.5], [0.9, 0.1]] {
            let g = pot.gradient(x);
            assert!((g[0] - x[0]).abs() < 1e-4 && (g[1] - x[1]).abs() < 1e-4);
        }
    }

    #[test]
    fn squeeze_between_uniform_boxes() {
        let b1 = BoxDomain::unit();
        let b2 = BoxDomain::new([0.0, 0.0], [2.0, 0.5]).unwrap();
        let pot = solve_monge_ampere(&UniformDensity(b1), b1, &UniformDensity(b2), b2, &small_options()).unwrap();
        let mut worst: f64 = 0.0;
        for i in 1..10 {
            for j in 1..10 {
                let x = [i as f64 / 10.0, j as f64 / 10.0];
                let g = pot.gradient(x);
                worst = worst.max((g[0] - 2.0 * x[0]).abs()).max((g[1] - 0.5 * x[1]).abs());
            }
        }
        assert!(worst < 1e-3, "sup error {worst}");
        assert!(pot.max_overshoot(21) <= 1e-3);
    }

    #[test]
    fn gaussian_pair_matches_affine_map() {
        let m1 = GaussianMeasure::new(DVector::from_vec(vec![0.2, -0.1]), dmatrix![0.5, 0.0; 0.0, 1.2]).unwrap();
        let m2 = GaussianMeasure::new(DVector::from_vec(vec![1.0, 0.5]), dmatrix![1.5, 0.0; 0.0, 0.3]).unwrap();
        let s1: [f64; 2] = [0.5f64.sqrt(), 1.2f64.sqrt()];
        let s2: [f64; 2] = [1.5f64.sqrt(), 0.3f64.sqrt()];
        let l: f64 = 5.5;
        let b1 = BoxDomain::new([0.2 - l * s1[0], -0.1 - l * s1[1]], [0.2 + l * s1[0], -0.1 + l * s1[1]]).unwrap();
        let b2 = BoxDomain::new([1.0 - l * s2[0], 0.5 - l * s2[1]], [1.0 + l * s2[0], 0.5 + l * s2[1]]).unwrap();
        let pot = solve_monge_ampere(
            &GaussianDensity::new(&m1).unwrap(),
            b1,
            &GaussianDensity::new(&m2).unwrap(),
            b2,
            &MongeAmpereOptions::default(),
        )
        .unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..21 {
            for j in 0..21 {
                let z = [-2.0 + 0.2 * i as f64, -2.0 + 0.2 * j as f64];
                let x = [0.2 + s1[0] * z[0], -0.1 + s1[1] * z[1]];
                let g = pot.gradient(x);
                let t = [1.0 + s2[0] * z[0], 0.5 + s2[1] * z[1]];
                worst = worst.max((g[0] - t[0]).abs()).max((g[1] - t[1]).abs());
            }
        }
        assert!(worst < 5e-3, "sup error {worst}");
    }

    /// Increasing `q` with `∫₀^q ρ = u` for a density on `[0, 1]`.
    fn quantile_1d(rho: impl Fn(f64) -> f64, u: f64) -> f64 {
        let n = 4000;
        let h = 1.0 / n as f64;
        let cells: Vec<f64> = (0..n).map(|i| rho((i as f64 + 0.5) * h) * h).collect();
        let total: f64 = cells.iter().sum();
        let mut acc = 0.0;
        for (i, c) in cells.iter().enumerate() {
            if acc + c / total >= u {
                return (i as f64 + (u - acc) * total / c) * h;
            }
            acc += c / total;
        }
        1.0
    }

    #[test]
    fn product_density_gives_separable_map() {
        // For product measures the Brenier map acts coordinatewise.
        let f1 = |t: f64| 1.0 + 0.5 * (std::f64::consts::PI * t).cos();
        let f2 = |t: f64| 1.0 + 0.6 * t;
        let b = BoxDomain::unit();
        let rho2 = FnDensity(move |y: [f64; 2]| f1(y[0]) * f2(y[1]));
        let pot = solve_monge_ampere(&UniformDensity(b), b, &rho2, b, &MongeAmpereOptions::default()).unwrap();
        let mut worst: f64 = 0.0;
        for i in 1..10 {
            for j in 1..10 {
                let x = [i as f64 / 10.0, j as f64 / 10.0];
                let g = pot.gradient(x);
                worst = worst.max((g[0] - quantile_1d(f1, x[0])).abs()).max((g[1] - quantile_1d(f2, x[1])).abs());
            }
        }
        // Collocation error at 144 interior points, not a solver residual.
        assert!(worst < 5e-3, "sup error {worst}");
        assert!(pot.report().min_interior_eigenvalue > 0.0);
    }

    #[test]
    fn csv_lists_every_coefficient() {
        let b = BoxDomain::unit();
        let u = UniformDensity(b);
        let pot = solve_monge_ampere(&u, b, &u, b, &small_options()).unwrap();
        let mut buf = Vec::new();
        pot.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 128 + POLY + 2);
    }

    #[test]
    fn rejects_bad_layout() {
        let b = BoxDomain::unit();
        let u = UniformDensity(b);
        let o = MongeAmpereOptions { interior_count: 50, ..small_options() };
        assert!(solve_monge_ampere(&u, b, &u, b, &o).is_err());
    }
}
