//! Tensor Legendre chaos surrogate of the heat readings over
//! `(x₁, x₂, θ₁, θ₂) ∈ [0, 1]⁴`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::heat::{HeatSolver, HeatSolverConfig};
use super::ForwardModel;
use crate::error::{Error, Result};
use crate::quadrature::clenshaw_curtis;
use crate::rng;

const INPUTS: usize = 4;
const FORMAT_VERSION: &str = "wassoed-pce-v2";
const MAX_DEGREE: usize = 15;
/// Environment variable naming the surrogate cache directory.
pub const CACHE_DIR_ENV: &str = "WASSOED_CACHE_DIR";

#[derive(Clone, Debug, PartialEq)]
pub struct PceTrainingConfig {
    pub heat: HeatSolverConfig,
    pub degree: usize,
    /// Clenshaw–Curtis points per input dimension of the tensor training grid.
    pub points_per_dim: usize,
    pub ridge: f64,
    /// Largest accepted relative RMS training residual.
    pub max_training_residual: f64,
}

impl Default for PceTrainingConfig {
    fn default() -> Self {
        Self {
            heat: HeatSolverConfig::default(),
            degree: 8,
            points_per_dim: 13,
            ridge: 1e-10,
            max_training_residual: 1e-2,
        }
    }
}

impl PceTrainingConfig {
    pub fn hash(&self) -> String {
        let key = format!(
            "{FORMAT_VERSION}|{}|degree={}|ppd={}|ridge={:e}",
            self.heat.fingerprint(),
            self.degree,
            self.points_per_dim,
            self.ridge
        );
        hex::encode(&Sha256::digest(key.as_bytes())[..8])
    }
}

/// Orthonormal Legendre values `√(2k+1) P_k(2u − 1)` for `k ≤ degree`.
fn legendre_row(u: f64, degree: usize, out: &mut [f64]) {
    let s = 2.0 * u - 1.0;
    let (mut p0, mut p1) = (1.0, s);
    out[0] = 1.0;
    if degree >= 1 {
        out[1] = 3f64.sqrt() * s;
    }
    for k in 2..=degree {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * s * p1 - (kf - 1.0) * p0) / kf;
        out[k] = (2.0 * kf + 1.0).sqrt() * p2;
        p0 = p1;
        p1 = p2;
    }
}

/// Applies `mat` (`rows × dims[axis]`) along one axis of a row-major
/// four-way array.
fn mode_product(data: &[f64], dims: [usize; INPUTS], axis: usize, mat: &DMatrix<f64>) -> (Vec<f64>, [usize; INPUTS]) {
    let mut nd = dims;
    nd[axis] = mat.nrows();
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out = vec![0.0; nd.iter().product()];
    for o in 0..outer {
        for k in 0..mat.nrows() {
            let dst = (o * nd[axis] + k) * inner;
            for i in 0..dims[axis] {
                let c = mat[(k, i)];
                let src = (o * dims[axis] + i) * inner;
                for s in 0..inner {
                    out[dst + s] += c * data[src + s];
                }
            }
        }
    }
    (out, nd)
}

#[derive(Clone, Debug)]
pub struct PceSurrogate {
    degree: usize,
    /// `coefs[t]` is the row-major `(degree+1)⁴` coefficient array of
    /// observation `t`, axes ordered `x₁, x₂, θ₁, θ₂`.
    coefs: Vec<Vec<f64>>,
    training_residual: f64,
    hash: String,
}

impl PceSurrogate {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn terms(&self) -> usize {
        (self.degree + 1).pow(INPUTS as u32)
    }

    pub fn outputs(&self) -> usize {
        self.coefs.len()
    }

    /// Relative RMS residual on the training grid.
    pub fn training_residual(&self) -> f64 {
        self.training_residual
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Fails with [`Error::SurrogateQuality`] when the training residual
    /// exceeds `limit`.
    pub fn check_quality(&self, limit: f64) -> Result<()> {
        if self.training_residual <= limit {
            Ok(())
        } else {
            Err(Error::SurrogateQuality { residual: self.training_residual, limit })
        }
    }

    pub fn predict_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        let m = self.degree + 1;
        let mut rows = [[0.0; MAX_DEGREE + 1]; INPUTS];
        for (row, u) in rows.iter_mut().zip([x[0], x[1], theta[0], theta[1]]) {
            legendre_row(u, self.degree, row);
        }
        let mut a = vec![0.0; m * m * m];
        let mut b = vec![0.0; m * m];
        for (o, c) in out.iter_mut().zip(&self.coefs) {
            for (dst, chunk) in a.iter_mut().zip(c.chunks_exact(m)) {
                *dst = chunk.iter().zip(&rows[3]).map(|(p, q)| p * q).sum();
            }
            for (dst, chunk) in b.iter_mut().zip(a.chunks_exact(m)) {
                *dst = chunk.iter().zip(&rows[2]).map(|(p, q)| p * q).sum();
            }
            *o = b
                .chunks_exact(m)
                .zip(&rows[0])
                .map(|(chunk, r0)| r0 * chunk.iter().zip(&rows[1]).map(|(p, q)| p * q).sum::<f64>())
                .sum();
        }
    }

    pub fn predict(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.outputs()];
        self.predict_into(x, theta, &mut out);
        out
    }

    /// Relative RMS error against direct solves at `count` uniform random
    /// `(x, θ)` points.
    pub fn validate(&self, heat: &HeatSolverConfig, count: usize, seed: u64) -> Result<f64> {
        let solver = HeatSolver::new(heat.clone())?;
        let mut r = rng::rng_from_seed(seed);
        let pts: Vec<[f64; 4]> = (0..count).map(|_| [r.random(), r.random(), r.random(), r.random()]).collect();
        let pairs = pts
            .par_iter()
            .map(|p| {
                let truth = solver.solve(&p[..2])?.readings(&p[2..]);
                Ok((truth, self.predict(&p[..2], &p[2..])))
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut num, mut den) = (0.0, 0.0);
        for (t, q) in pairs {
            for (a, b) in t.iter().zip(&q) {
                num += (a - b) * (a - b);
                den += a * a;
            }
        }
        Ok((num / den).sqrt())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let m = self.degree + 1;
        writeln!(out, "out_idx,t_idx,m1,m2,m3,m4,coef")?;
        for (t, c) in self.coefs.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                let idx = [i / (m * m * m), (i / (m * m)) % m, (i / m) % m, i % m];
                writeln!(out, "0,{t},{},{},{},{},{v:e}", idx[0], idx[1], idx[2], idx[3])?;
            }
        }
        Ok(())
    }

    fn read_csv(path: &Path, degree: usize, outputs: usize, hash: &str, training_residual: f64) -> Result<Self> {
        let m = degree + 1;
        let mut coefs = vec![vec![f64::NAN; m.pow(INPUTS as u32)]; outputs];
        let reader = BufReader::new(fs::File::open(path)?);
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if n == 0 {
                if line.trim() != "out_idx,t_idx,m1,m2,m3,m4,coef" {
                    return Err(Error::Parse { line: 1, message: "unexpected surrogate header".into() });
                }
                continue;
            }
            let bad = |msg: &str| Error::Parse { line: n + 1, message: msg.to_string() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad("expected 7 fields"));
            }
            let t: usize = f[1].trim().parse().map_err(|_| bad("bad t_idx"))?;
            let mut i = 0;
            for k in 0..INPUTS {
                let a: usize = f[2 + k].trim().parse().map_err(|_| bad("bad multi-index"))?;
                if a > degree {
                    return Err(bad("multi-index outside the basis"));
                }
                i = i * m + a;
            }
            let v: f64 = f[6].trim().parse().map_err(|_| bad("bad coefficient"))?;
            if t >= outputs {
                return Err(bad("t_idx out of range"));
            }
            coefs[t][i] = v;
        }
        if coefs.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Parse { line: 0, message: "surrogate file is incomplete".into() });
        }
        Ok(Self { degree, coefs, training_residual, hash: hash.to_string() })
    }
}

impl ForwardModel for PceSurrogate {
    fn name(&self) -> &str {
        "heat-pce"
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        self.outputs()
    }
    fn design_dim(&self) -> usize {
        2
    }
    fn evaluate_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != 2 || theta.len() != 2 {
            return Err(Error::arg("surrogate expects two-dimensional x and theta"));
        }
        self.predict_into(x, theta, out);
        Ok(())
    }
}

/// Least-squares fit on the tensor Clenshaw–Curtis grid without the quality
/// gate. Sources vary over the `x` nodes (one PDE solve each) and sensors are
/// read off the fields. Basis and grid are both tensor products, so the
/// ridge-regularized problem separates into one small solve per axis.
pub fn fit_pce_surrogate(config: &PceTrainingConfig) -> Result<PceSurrogate> {
    if config.degree > MAX_DEGREE {
        return Err(Error::arg(format!("surrogate degree above {MAX_DEGREE} is not supported")));
    }
    if config.points_per_dim <= config.degree {
        return Err(Error::arg("training grid needs more points per axis than the degree"));
    }
    let solver = HeatSolver::new(config.heat.clone())?;
    let nodes = clenshaw_curtis(config.points_per_dim, 0.0, 1.0)?.nodes().to_vec();
    let n = nodes.len();
    let m = config.degree + 1;
    let sources: Vec<[f64; 2]> = nodes.iter().flat_map(|&a| nodes.iter().map(move |&b| [a, b])).collect();
    let fields = sources.par_iter().map(|x| solver.solve(x)).collect::<Result<Vec<_>>>()?;
    let outputs = config.heat.obs_times.len();

    // data[t] is indexed (x₁, x₂, θ₁, θ₂) over the grid nodes.
    let mut data = vec![vec![0.0; n.pow(INPUTS as u32)]; outputs];
    for (s, field) in fields.iter().enumerate() {
        for j1 in 0..n {
            for j2 in 0..n {
                let r = field.readings(&[nodes[j1], nodes[j2]]);
                for (t, v) in r.into_iter().enumerate() {
                    data[t][(s * n + j1) * n + j2] = v;
                }
            }
        }
    }

    let mut row = vec![0.0; m];
    let vander = DMatrix::from_fn(n, m, |i, k| {
        legendre_row(nodes[i], config.degree, &mut row);
        row[k]
    });
    let mut gram = vander.tr_mul(&vander) / n as f64;
    for k in 0..m {
        gram[(k, k)] += config.ridge;
    }
    let pinv = gram
        .cholesky()
        .ok_or_else(|| Error::numeric("surrogate normal equations are not positive definite"))?
        .solve(&(vander.transpose() / n as f64));

    let (mut num, mut den) = (0.0, 0.0);
    let mut coefs = Vec::with_capacity(outputs);
    for y in &data {
        let (mut c, mut dims) = (y.clone(), [n; INPUTS]);
        for axis in 0..INPUTS {
            (c, dims) = mode_product(&c, dims, axis, &pinv);
        }
        let mut fit = c.clone();
        for axis in 0..INPUTS {
            (fit, dims) = mode_product(&fit, dims, axis, &vander);
        }
        for (a, b) in fit.iter().zip(y) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        coefs.push(c);
    }
    Ok(PceSurrogate { degree: config.degree, coefs, training_residual: (num / den).sqrt(), hash: config.hash() })
}

/// [`fit_pce_surrogate`] followed by the training-residual gate
/// `config.max_training_residual`.
pub fn build_pce_surrogate(config: &PceTrainingConfig) -> Result<PceSurrogate> {
    let s = fit_pce_surrogate(config)?;
    s.check_quality(config.max_training_residual)?;
    Ok(s)
}

/// Cache directory from the environment, or a folder under the system
/// temporary directory.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("wassoed-cache"))
}

/// Loads `pce_<hash>.csv` from `dir` when present, otherwise fits and
/// stores it. No quality gate; see [`load_or_build`].
pub fn load_or_fit(config: &PceTrainingConfig, dir: &Path) -> Result<PceSurrogate> {
    let hash = config.hash();
    let path = dir.join(format!("pce_{hash}.csv"));
    let meta = dir.join(format!("pce_{hash}.meta"));
    if path.exists() && meta.exists() {
        let residual = fs::read_to_string(&meta)?
            .lines()
            .find_map(|l| l.strip_prefix("training_residual=").and_then(|v| v.trim().parse().ok()));
        if let Some(res) = residual {
            if let Ok(s) = PceSurrogate::read_csv(&path, config.degree, config.heat.obs_times.len(), &hash, res) {
                return Ok(s);
            }
        }
    }
    let s = fit_pce_surrogate(config)?;
    fs::create_dir_all(dir)?;
    // Write to a temporary name first so concurrent readers never see a
    // partial file.
    let tmp = dir.join(format!("pce_{hash}.csv.tmp{}", std::process::id()));
    s.write_csv(std::io::BufWriter::new(fs::File::create(&tmp)?))?;
    fs::rename(&tmp, &path)?;
    fs::write(&meta, format!("version={FORMAT_VERSION}\ntraining_residual={:e}\n", s.training_residual))?;
    Ok(s)
}

/// [`load_or_fit`] followed by the quality gate. A rejected fit stays cached.
pub fn load_or_build(config: &PceTrainingConfig, dir: &Path) -> Result<PceSurrogate> {
    let s = load_or_fit(config, dir)?;
    s.check_quality(config.max_training_residual)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rows_are_orthonormal() {
        let rule = clenshaw_curtis(17, 0.0, 1.0).unwrap();
        let mut row = [0.0; 9];
        let mut gram = [[0.0; 9]; 9];
        for (u, w) in rule.iter() {
            legendre_row(u[0], 8, &mut row);
            for a in 0..9 {
                for b in 0..9 {
                    gram[a][b] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..9 {
            for b in 0..9 {
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a][b] - e).abs() < 1e-12);
            }
        }
    }

    fn naive_predict(s: &PceSurrogate, p: [f64; 4]) -> Vec<f64> {
        let m = s.degree + 1;
        let rows: Vec<Vec<f64>> = p
            .iter()
            .map(|u| {
                let mut r = vec![0.0; m];
                legendre_row(*u, s.degree, &mut r);
                r
            })
            .collect();
        s.coefs
            .iter()
            .map(|c| {
                let mut v = 0.0;
                for (i, ci) in c.iter().enumerate() {
                    let idx = [i / (m * m * m), (i / (m * m)) % m, (i / m) % m, i % m];
                    v += ci * (0..4).map(|k| rows[k][idx[k]]).product::<f64>();
                }
                v
            })
            .collect()
    }

    #[test]
    fn contraction_matches_full_sum() {
        let mut r = rng::rng_from_seed(3);
        let s = PceSurrogate {
            degree: 3,
            coefs: (0..2).map(|_| (0..256).map(|_| r.random::<f64>() - 0.5).collect()).collect(),
            training_residual: 0.0,
            hash: String::new(),
        };
        for _ in 0..20 {
            let p = [r.random(), r.random(), r.random(), r.random()];
            let a = s.predict(&p[..2], &p[2..]);
            let b = naive_predict(&s, p);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mode_products_invert_on_square_grid() {
        // With as many nodes as basis functions and no ridge, fitting then
        // evaluating on the grid reproduces the data.
        let nodes = clenshaw_curtis(4, 0.0, 1.0).unwrap().nodes().to_vec();
        let mut row = vec![0.0; 4];
        let v = DMatrix::from_fn(4, 4, |i, k| {
            legendre_row(nodes[i], 3, &mut row);
            row[k]
        });
        let inv = v.clone().try_inverse().unwrap();
        let mut r = rng::rng_from_seed(5);
        let y: Vec<f64> = (0..256).map(|_| r.random()).collect();
        let (mut c, mut d) = (y.clone(), [4; 4]);
        for ax in 0..4 {
            (c, d) = mode_product(&c, d, ax, &inv);
        }
        for ax in 0..4 {
            (c, d) = mode_product(&c, d, ax, &v);
        }
        for (a, b) in c.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut r = rng::rng_from_seed(9);
        let s = PceSurrogate {
            degree: 2,
            coefs: (0..3).map(|_| (0..81).map(|_| r.random::<f64>()).collect()).collect(),
            training_residual: 0.5,
            hash: "abc".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        s.write_csv(fs::File::create(&path).unwrap()).unwrap();
        let t = PceSurrogate::read_csv(&path, 2, 3, "abc", 0.5).unwrap();
        assert_eq!(s.coefs, t.coefs);
        assert!(matches!(t.check_quality(0.1), Err(Error::SurrogateQuality { .. })));
    }

    #[test]
    fn rejects_underdetermined_grid() {
        let cfg = PceTrainingConfig { degree: 8, points_per_dim: 7, ..Default::default() };
        assert!(fit_pce_surrogate(&cfg).is_err());
    }
}
