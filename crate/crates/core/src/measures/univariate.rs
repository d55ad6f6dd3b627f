//! One-dimensional view of a measure: CDF, generalized quantile and the
//! partial integrals of the CDF that make the `W₁` identities exact.

use crate::error::{Error, Result};
use crate::special;

/// A probability measure on the real line.
#[derive(Clone, Debug)]
pub enum Univariate {
    Gaussian { mean: f64, sd: f64 },
    Uniform { lower: f64, upper: f64 },
    /// Sorted atoms with cumulative weights and cumulative first moments.
    Discrete(DiscreteCdf),
    /// Piecewise-linear CDF on a node grid (piecewise-constant density).
    Tabulated(TabulatedCdf),
}

#[derive(Clone, Debug)]
pub struct DiscreteCdf {
    atoms: Vec<f64>,
    /// `cum[k] = Σ_{i ≤ k} w_i`
    cum: Vec<f64>,
    /// `cum_first[k] = Σ_{i ≤ k} w_i a_i`
    cum_first: Vec<f64>,
}

impl DiscreteCdf {
    /// Atoms need not be sorted; duplicates are merged.
    pub fn new(atoms: &[f64], weights: &[f64]) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::arg("atoms and weights must be nonempty and equal length"));
        }
        let mut order: Vec<usize> = (0..atoms.len()).collect();
        order.sort_by(|&a, &b| atoms[a].total_cmp(&atoms[b]));
        Ok(Self::from_sorted(order.iter().map(|&i| (atoms[i], weights[i]))))
    }

    /// Builds from atoms already sorted in increasing order.
    pub fn from_sorted(pairs: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut out = Self {
            atoms: Vec::new(),
            cum: Vec::new(),
            cum_first: Vec::new(),
        };
        let (mut c, mut cf) = (0.0, 0.0);
        for (a, w) in pairs {
            c += w;
            cf += w * a;
            if out.atoms.last() == Some(&a) {
                *out.cum.last_mut().unwrap() = c;
                *out.cum_first.last_mut().unwrap() = cf;
            } else {
                out.atoms.push(a);
                out.cum.push(c);
                out.cum_first.push(cf);
            }
        }
        // Pin the total mass to exactly one.
        let total = c;
        for v in out.cum.iter_mut() {
            *v /= total;
        }
        for v in out.cum_first.iter_mut() {
            *v /= total;
        }
        out
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Cumulative weights at each atom.
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    /// Number of atoms `≤ x`.
    fn count_le(&self, x: f64) -> usize {
        self.atoms.partition_point(|a| *a <= x)
    }

    fn cdf(&self, x: f64) -> f64 {
        match self.count_le(x) {
            0 => 0.0,
            k => self.cum[k - 1],
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        let k = self.cum.partition_point(|c| *c < u).min(self.atoms.len() - 1);
        self.atoms[k]
    }

    fn lower_partial(&self, x: f64) -> f64 {
        match self.count_le(x) {
            0 => 0.0,
            k => (self.cum[k - 1] * x - self.cum_first[k - 1]).max(0.0),
        }
    }

    fn upper_partial(&self, x: f64) -> f64 {
        let total_first = *self.cum_first.last().unwrap();
        let (c, cf) = match self.count_le(x) {
            0 => (0.0, 0.0),
            k => (self.cum[k - 1], self.cum_first[k - 1]),
        };
        ((total_first - cf) - (1.0 - c) * x).max(0.0)
    }

    fn mean(&self) -> f64 {
        *self.cum_first.last().unwrap()
    }
}

#[derive(Clone, Debug)]
pub struct TabulatedCdf {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    /// `partial[k] = ∫_{nodes[0]}^{nodes[k]} F`
    partial: Vec<f64>,
}

impl TabulatedCdf {
    /// Builds from nonnegative cell masses between consecutive nodes.
    pub fn from_cell_masses(nodes: Vec<f64>, masses: &[f64]) -> Result<Self> {
        if nodes.len() < 2 || masses.len() + 1 != nodes.len() {
            return Err(Error::arg("need one mass per grid cell"));
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("grid nodes must be strictly increasing"));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateEvidence);
        }
        let mut cdf = Vec::with_capacity(nodes.len());
        cdf.push(0.0);
        let mut acc = 0.0;
        for m in masses {
            acc += m / total;
            cdf.push(acc.min(1.0));
        }
        *cdf.last_mut().unwrap() = 1.0;
        let mut partial = Vec::with_capacity(nodes.len());
        partial.push(0.0);
        for k in 0..masses.len() {
            let h = nodes[k + 1] - nodes[k];
            partial.push(partial[k] + 0.5 * h * (cdf[k] + cdf[k + 1]));
        }
        Ok(Self { nodes, cdf, partial })
    }

    /// Density values at the nodes, integrated cellwise by the trapezoid rule.
    pub fn from_density_values(nodes: Vec<f64>, density: &[f64]) -> Result<Self> {
        if density.len() != nodes.len() {
            return Err(Error::arg("one density value per node required"));
        }
        let masses: Vec<f64> = nodes
            .windows(2)
            .zip(density.windows(2))
            .map(|(x, f)| 0.5 * (x[1] - x[0]) * (f[0] + f[1]))
            .collect();
        Self::from_cell_masses(nodes, &masses)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    fn cell(&self, x: f64) -> usize {
        (self.nodes.partition_point(|n| *n <= x).max(1) - 1).min(self.nodes.len() - 2)
    }

    fn cdf(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if x <= self.nodes[0] {
            return 0.0;
        }
        if x >= self.nodes[n - 1] {
            return 1.0;
        }
        let k = self.cell(x);
        let t = (x - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        self.cdf[k] + t * (self.cdf[k + 1] - self.cdf[k])
    }

    fn quantile(&self, u: f64) -> f64 {
        // First node whose CDF reaches u, then invert linearly inside the cell.
        let j = self.cdf.partition_point(|c| *c < u);
        if j == 0 {
            return self.nodes[0];
        }
        let j = j.min(self.nodes.len() - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 1.0 };
        self.nodes[j - 1] + t * (self.nodes[j] - self.nodes[j - 1])
    }

    fn lower_partial(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if x <= self.nodes[0] {
            return 0.0;
        }
        if x >= self.nodes[n - 1] {
            return self.partial[n - 1] + (x - self.nodes[n - 1]);
        }
        let k = self.cell(x);
        let h = self.nodes[k + 1] - self.nodes[k];
        let s = x - self.nodes[k];
        let slope = (self.cdf[k + 1] - self.cdf[k]) / h;
        self.partial[k] + self.cdf[k] * s + 0.5 * slope * s * s
    }

    fn mean(&self) -> f64 {
        // E X = x_max − ∫ F over the support.
        let n = self.nodes.len();
        self.nodes[n - 1] - self.partial[n - 1]
    }

    fn upper_partial(&self, x: f64) -> f64 {
        (self.mean() - x + self.lower_partial(x)).max(0.0)
    }

    fn density(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if x < self.nodes[0] || x > self.nodes[n - 1] {
            return 0.0;
        }
        let k = self.cell(x);
        (self.cdf[k + 1] - self.cdf[k]) / (self.nodes[k + 1] - self.nodes[k])
    }
}

impl Univariate {
    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) || !mean.is_finite() || !sd.is_finite() {
            return Err(Error::arg("Gaussian needs finite mean and positive standard deviation"));
        }
        Ok(Univariate::Gaussian { mean, sd })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Univariate::Gaussian { mean, sd } => special::normal_cdf((x - mean) / sd),
            Univariate::Uniform { lower, upper } => ((x - lower) / (upper - lower)).clamp(0.0, 1.0),
            Univariate::Discrete(d) => d.cdf(x),
            Univariate::Tabulated(t) => t.cdf(x),
        }
    }

    /// Generalized inverse `inf{x : F(x) ≥ u}` for `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Univariate::Gaussian { mean, sd } => mean + sd * special::normal_quantile(u),
            Univariate::Uniform { lower, upper } => lower + u * (upper - lower),
            Univariate::Discrete(d) => d.quantile(u),
            Univariate::Tabulated(t) => t.quantile(u),
        }
    }

    /// `∫_{−∞}^x F(t) dt`.
    pub fn lower_partial(&self, x: f64) -> f64 {
        match self {
            Univariate::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                sd * (z * special::normal_cdf(z) + special::normal_pdf(z))
            }
            Univariate::Uniform { lower, upper } => {
                if x <= *lower {
                    0.0
                } else if x >= *upper {
                    x - 0.5 * (lower + upper)
                } else {
                    (x - lower).powi(2) / (2.0 * (upper - lower))
                }
            }
            Univariate::Discrete(d) => d.lower_partial(x),
            Univariate::Tabulated(t) => t.lower_partial(x),
        }
    }

    /// `∫_x^{∞} (1 − F(t)) dt`.
    pub fn upper_partial(&self, x: f64) -> f64 {
        match self {
            Univariate::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                sd * (special::normal_pdf(z) - z * special::normal_sf(z))
            }
            Univariate::Uniform { lower, upper } => {
                if x >= *upper {
                    0.0
                } else if x <= *lower {
                    0.5 * (lower + upper) - x
                } else {
                    (upper - x).powi(2) / (2.0 * (upper - lower))
                }
            }
            Univariate::Discrete(d) => d.upper_partial(x),
            Univariate::Tabulated(t) => t.upper_partial(x),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Univariate::Gaussian { mean, .. } => *mean,
            Univariate::Uniform { lower, upper } => 0.5 * (lower + upper),
            Univariate::Discrete(d) => d.mean(),
            Univariate::Tabulated(t) => t.mean(),
        }
    }

    pub fn is_atomless(&self) -> bool {
        !matches!(self, Univariate::Discrete(_))
    }

    /// Density for atomless measures.
    pub fn density(&self, x: f64) -> Option<f64> {
        match self {
            Univariate::Gaussian { mean, sd } => Some(special::normal_pdf((x - mean) / sd) / sd),
            Univariate::Uniform { lower, upper } => {
                Some(if x >= *lower && x <= *upper { 1.0 / (upper - lower) } else { 0.0 })
            }
            Univariate::Discrete(_) => None,
            Univariate::Tabulated(t) => Some(t.density(x)),
        }
    }

    /// Interval outside which at most `tail` mass lies on each side.
    pub fn effective_support(&self, tail: f64) -> (f64, f64) {
        match self {
            Univariate::Gaussian { mean, sd } => {
                let z = -special::normal_quantile(tail);
                (mean - z * sd, mean + z * sd)
            }
            Univariate::Uniform { lower, upper } => (*lower, *upper),
            Univariate::Discrete(d) => (d.atoms[0], *d.atoms.last().unwrap()),
            Univariate::Tabulated(t) => (t.nodes[0], *t.nodes.last().unwrap()),
        }
    }

    /// Points where the CDF is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Univariate::Gaussian { .. } => Vec::new(),
            Univariate::Uniform { lower, upper } => vec![*lower, *upper],
            Univariate::Discrete(d) => d.atoms.clone(),
            Univariate::Tabulated(t) => t.nodes.clone(),
        }
    }

    /// CDF values at which the quantile function is not smooth.
    pub fn quantile_breakpoints(&self) -> Vec<f64> {
        match self {
            Univariate::Gaussian { .. } | Univariate::Uniform { .. } => Vec::new(),
            Univariate::Discrete(d) => d.cum.clone(),
            Univariate::Tabulated(t) => t.cdf.clone(),
        }
    }
}
