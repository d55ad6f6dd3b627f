use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Weighted atom set `Σ w_m δ(x − x_m)` in `ℝⁿ`.
///
/// Atoms are stored row-major in one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("atoms must have positive dimension"));
        }
        if weights.is_empty() {
            return Err(Error::arg("empirical measure needs at least one atom"));
        }
        if points.len() != dim * weights.len() {
            return Err(Error::arg(format!(
                "{} coordinates do not form {} atoms of dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("atoms must be finite"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::arg("weights must be nonnegative"));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::arg(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { dim, points, weights })
    }

    /// Equal-weight measure on the given atoms.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::arg("atom buffer does not match the dimension"));
        }
        let m = points.len() / dim;
        Self::new(dim, points, vec![1.0 / m as f64; m])
    }

    pub fn from_atoms(atoms: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let dim = atoms.first().map(Vec::len).unwrap_or(0);
        if atoms.iter().any(|a| a.len() != dim) {
            return Err(Error::arg("atoms have inconsistent dimensions"));
        }
        Self::new(dim, atoms.concat(), weights)
    }

    /// Normalizes nonnegative masses into a probability measure.
    pub fn from_masses(dim: usize, points: Vec<f64>, masses: &[f64]) -> Result<Self> {
        let total = compensated_sum(masses.iter().copied());
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateEvidence);
        }
        let weights = masses.iter().map(|m| m / total).collect();
        Self::new(dim, points, weights)
    }

    /// Same atoms, new weights.
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.dim, self.points.clone(), weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (a, w) in self.atoms().zip(&self.weights) {
            for (mi, ai) in m.iter_mut().zip(a) {
                *mi += w * ai;
            }
        }
        m
    }

    pub fn moment(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::arg("moment order must be at least 1"));
        }
        Ok(self
            .atoms()
            .zip(&self.weights)
            .map(|(a, w)| w * a.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
            .sum())
    }

    /// Writes `w,x1,...,xn` CSV, one atom per row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("w".to_string())
            .chain((1..=self.dim).map(|i| format!("x{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (a, w) in self.atoms().zip(&self.weights) {
            write!(out, "{w:e}")?;
            for v in a {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Parses the `w,x1,...,xn` CSV format. Weights are renormalized when
    /// their sum is within `1e-6` of one (decimal rounding in files).
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
        let header = header?;
        let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        let dim = cols.len().saturating_sub(1);
        let expected: Vec<String> = std::iter::once("w".to_string())
            .chain((1..=dim).map(|i| format!("x{i}")))
            .collect();
        if dim == 0 || cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `w,x1,...,xn`, found `{}`", header.trim()),
            });
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {} fields, found {}", dim + 1, fields.len()),
                });
            }
            let mut values = Vec::with_capacity(dim + 1);
            for f in &fields {
                let v: f64 = f.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("`{f}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("`{f}` is not finite"),
                    });
                }
                values.push(v);
            }
            if values[0] < 0.0 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "negative weight".into(),
                });
            }
            weights.push(values[0]);
            points.extend_from_slice(&values[1..]);
        }
        if weights.is_empty() {
            return Err(Error::Parse {
                line: 2,
                message: "no atoms".into(),
            });
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Parse {
                line: 0,
                message: format!("weights sum to {total}, not 1"),
            });
        }
        Self::from_masses(dim, points, &weights)
    }
}
