//! Compactly supported kernels and the boundary-normalized smoothing weights
//! `k_{i,j}` used by every smoother in the crate.
//!
//! Rows are indexed from 0 in code; row `i` corresponds to rescaled time
//! `(i + 1) / n`. The weight of observation `j` in row `i` is
//!
//! ```text
//! k_{i,j} = K((i - j) / (n b)) / sum_l K((i - l) / (n b))
//! ```
//!
//! so every row sums to one, including rows near the ends of the sample
//! where the kernel window is truncated.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel family. All three are probability densities supported on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    #[default]
    Epanechnikov,
    Triangular,
    Quartic,
}

impl KernelSpec {
    pub fn eval(self, u: f64) -> f64 {
        eval_kernel(self, u)
    }

    /// Upper bound on `|K(u) - K(v)| / |u - v|`.
    pub fn lipschitz_constant(self) -> f64 {
        match self {
            KernelSpec::Epanechnikov => 1.5,
            KernelSpec::Triangular => 1.0,
            // max of 15/4 u (1 - u^2) on [0, 1] is 5 / (2 sqrt 3) ~ 1.4434
            KernelSpec::Quartic => 1.45,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelSpec::Epanechnikov => "epanechnikov",
            KernelSpec::Triangular => "triangular",
            KernelSpec::Quartic => "quartic",
        }
    }
}

impl std::str::FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => Ok(KernelSpec::Epanechnikov),
            "triangular" | "tri" => Ok(KernelSpec::Triangular),
            "quartic" | "biweight" => Ok(KernelSpec::Quartic),
            other => Err(Error::InvalidInput(format!("unknown kernel '{other}'"))),
        }
    }
}

pub fn eval_kernel(spec: KernelSpec, u: f64) -> f64 {
    let a = u.abs();
    if a > 1.0 {
        return 0.0;
    }
    match spec {
        KernelSpec::Epanechnikov => 0.75 * (1.0 - u * u),
        KernelSpec::Triangular => 1.0 - a,
        KernelSpec::Quartic => {
            let t = 1.0 - u * u;
            0.9375 * t * t
        }
    }
}

/// Bandwidth, either fixed or given by the rate rule `b = c n^(-exponent)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthSpec {
    Explicit(f64),
    Rule { c: f64, exponent: f64 },
}

impl Default for BandwidthSpec {
    fn default() -> Self {
        BandwidthSpec::Rule {
            c: 1.0,
            exponent: 1.0 / 3.0,
        }
    }
}

impl BandwidthSpec {
    /// Checks the bandwidth parameters alone, independent of `n`.
    pub fn validate(&self) -> Result<()> {
        match *self {
            BandwidthSpec::Explicit(b) => {
                if !(b > 0.0 && b <= 0.5) {
                    return Err(Error::InvalidBandwidth(format!(
                        "explicit bandwidth must lie in (0, 0.5], got {b}"
                    )));
                }
            }
            BandwidthSpec::Rule { c, exponent } => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::InvalidBandwidth(format!(
                        "rule constant must be positive, got {c}"
                    )));
                }
                if !(exponent > 0.25 && exponent < 0.5) {
                    return Err(Error::InvalidBandwidth(format!(
                        "rule exponent must lie in (1/4, 1/2), got {exponent}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Resolves to a numeric bandwidth for sample size `n`, enforcing
    /// `0 < b <= 0.5` and `n b >= 2`.
    pub fn resolve(&self, n: usize) -> Result<f64> {
        self.validate()?;
        let b = match *self {
            BandwidthSpec::Explicit(b) => b,
            BandwidthSpec::Rule { c, exponent } => c * (n as f64).powf(-exponent),
        };
        check_bandwidth(b, n)?;
        Ok(b)
    }
}

impl std::str::FromStr for BandwidthSpec {
    type Err = Error;

    /// Accepts a plain number (`0.15`) or `rule:C:EXPONENT`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidBandwidth(format!("cannot parse bandwidth '{s}'"));
        let spec = if let Some(rest) = s.strip_prefix("rule:") {
            let mut it = rest.split(':');
            let c = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let exponent = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            if it.next().is_some() {
                return Err(bad());
            }
            BandwidthSpec::Rule { c, exponent }
        } else {
            BandwidthSpec::Explicit(s.parse().map_err(|_| bad())?)
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn check_bandwidth(b: f64, n: usize) -> Result<()> {
    if !(b > 0.0 && b <= 0.5) {
        return Err(Error::InvalidBandwidth(format!(
            "bandwidth must lie in (0, 0.5], got {b}"
        )));
    }
    if (n as f64) * b < 2.0 {
        return Err(Error::InvalidBandwidth(format!(
            "n * b = {} < 2 (n = {n}, b = {b})",
            n as f64 * b
        )));
    }
    Ok(())
}

/// Nonzero stretch of one weight row: `weights[k]` is `k_{i, start + k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBand {
    pub start: usize,
    pub weights: Vec<f64>,
}

impl WeightBand {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .map(move |(k, &w)| (self.start + k, w))
    }
}

/// Geometry of the weight rows for a given `(n, b, kernel)`. Rows are
/// computed on demand, never materialized as an `n x n` matrix.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    n: usize,
    nb: f64,
    half: usize,
    spec: KernelSpec,
}

impl KernelWeights {
    pub fn new(n: usize, b: f64, spec: KernelSpec) -> Result<Self> {
        if n == 0 {
            return Err(Error::InsufficientData { n, needed: 1 });
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidBandwidth(format!("bandwidth must be positive, got {b}")));
        }
        let nb = n as f64 * b;
        let half = nb.floor() as usize;
        Ok(Self { n, nb, half, spec })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nb(&self) -> f64 {
        self.nb
    }

    pub fn kernel(&self) -> KernelSpec {
        self.spec
    }

    /// Scaled distance `(j - i) / (n b)`.
    pub fn offset(&self, i: usize, j: usize) -> f64 {
        (j as f64 - i as f64) / self.nb
    }

    /// Weight band of row `i` (0-based).
    pub fn band(&self, i: usize) -> Result<WeightBand> {
        assert!(i < self.n, "row {i} out of range for n = {}", self.n);
        let start = i.saturating_sub(self.half);
        let end = (i + self.half).min(self.n - 1);
        let mut weights: Vec<f64> = (start..=end)
            .map(|j| self.spec.eval((i as f64 - j as f64) / self.nb))
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateWeights { row: i });
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(WeightBand { start, weights })
    }
}

/// Full weight row `(k_{i,1}, ..., k_{i,n})` for row `i` (0-based).
pub fn weights_row(i: usize, n: usize, b: f64, spec: KernelSpec) -> Result<Vec<f64>> {
    let kw = KernelWeights::new(n, b, spec)?;
    let band = kw.band(i)?;
    let mut row = vec![0.0; n];
    for (j, w) in band.iter() {
        row[j] = w;
    }
    Ok(row)
}

/// Local-linear moment blocks `S_l = sum_j k_{i,j} x2_j x2_j' ((j - i)/(n b))^l`
/// for `l = 0, 1, 2`.
pub fn local_linear_blocks(
    i: usize,
    n: usize,
    b: f64,
    spec: KernelSpec,
    x2: &DMatrix<f64>,
) -> Result<[DMatrix<f64>; 3]> {
    if x2.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "x2 has {} rows, expected {n}",
            x2.nrows()
        )));
    }
    let kw = KernelWeights::new(n, b, spec)?;
    let band = kw.band(i)?;
    let p2 = x2.ncols();
    let mut blocks = [
        DMatrix::zeros(p2, p2),
        DMatrix::zeros(p2, p2),
        DMatrix::zeros(p2, p2),
    ];
    for (j, w) in band.iter() {
        let d = kw.offset(i, j);
        let factors = [w, w * d, w * d * d];
        for a in 0..p2 {
            for c in 0..p2 {
                let xx = x2[(j, a)] * x2[(j, c)];
                for (blk, f) in blocks.iter_mut().zip(factors) {
                    blk[(a, c)] += f * xx;
                }
            }
        }
    }
    Ok(blocks)
}
