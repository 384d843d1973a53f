//! Local moment smoothers, the partial-regression coefficients built from
//! them, and residualization of the response and the stable regressors.
//!
//! For each row `i` the smoothers accumulate
//!
//! ```text
//! s1_i = sum_j k_ij w_j x2_j y_j      (p2)
//! s2_i = sum_j k_ij w_j x2_j x1_j'    (p2 x p1)
//! s3_i = sum_j k_ij w_j x2_j x2_j'    (p2 x p2)
//! ```
//!
//! with `w_j = 1` unless observation weights are supplied. The partial
//! coefficients are the ridge-regularized ratios `q1_i = (s3_i + mu I)^-1 s1_i`
//! and `q2_i = (s3_i + mu I)^-1 s2_i` (Nadaraya-Watson), or the leading block
//! of the corresponding local-linear system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, KernelWeights};
use crate::linalg::spd_solve_cond;

/// Observations of a regression with stable regressors `x1` and
/// time-varying regressors `x2`, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x1: DMatrix<f64>, x2: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InsufficientData { n, needed: 1 });
        }
        if x1.nrows() != n || x2.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {n} rows, x1 has {}, x2 has {}",
                x1.nrows(),
                x2.nrows()
            )));
        }
        if x1.ncols() == 0 {
            return Err(Error::InvalidInput("at least one stable regressor required".into()));
        }
        let all_finite = y.iter().chain(x1.iter()).chain(x2.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(Self { y, x1, x2 })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p1(&self) -> usize {
        self.x1.ncols()
    }

    pub fn p2(&self) -> usize {
        self.x2.ncols()
    }

    pub fn p(&self) -> usize {
        self.p1() + self.p2()
    }

    /// Full regressor matrix `[x1 x2]`.
    pub fn x_full(&self) -> DMatrix<f64> {
        let n = self.n();
        let p1 = self.p1();
        DMatrix::from_fn(n, self.p(), |r, c| {
            if c < p1 {
                self.x1[(r, c)]
            } else {
                self.x2[(r, c - p1)]
            }
        })
    }

    /// Multiplies every row (response and both regressor blocks) by `p_i`.
    pub fn scaled_rows(&self, p: &[f64]) -> Result<Dataset> {
        if p.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} row weights for {} observations",
                p.len(),
                self.n()
            )));
        }
        let y = DVector::from_fn(self.n(), |r, _| p[r] * self.y[r]);
        let x1 = DMatrix::from_fn(self.n(), self.p1(), |r, c| p[r] * self.x1[(r, c)]);
        let x2 = DMatrix::from_fn(self.n(), self.p2(), |r, c| p[r] * self.x2[(r, c)]);
        Ok(Dataset { y, x1, x2 })
    }
}

/// Ridge added to the smoother matrices.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// `mu_n = 1 / n`.
    #[default]
    InverseN,
    Fixed(f64),
}

impl Ridge {
    pub fn resolve(self, n: usize) -> f64 {
        match self {
            Ridge::InverseN => 1.0 / n as f64,
            Ridge::Fixed(mu) => mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmootherMethod {
    NadarayaWatson,
    LocalLinear,
}

/// Local moments of one row.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub s1: DVector<f64>,
    pub s2: DMatrix<f64>,
    pub s3: DMatrix<f64>,
}

/// Partial-regression coefficients for every row.
#[derive(Debug, Clone)]
pub struct PartialCoeffs {
    /// Row `i` holds `q1_i'` (n x p2).
    pub q1: DMatrix<f64>,
    /// `q2[i]` is `p2 x p1`.
    pub q2: Vec<DMatrix<f64>>,
    pub method: SmootherMethod,
    /// Largest condition number met among the regularized smoother matrices.
    pub max_condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residualized {
    pub y_hat: DVector<f64>,
    pub x1_hat: DMatrix<f64>,
}

fn check_weights(weights: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} observation weights for {n} observations",
                w.len()
            )));
        }
        if let Some((index, &value)) = w
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::NonPositiveWeight { index, value });
        }
    }
    Ok(())
}

/// Kernel moments `(s1_i, s2_i, s3_i)` of row `i` (0-based), optionally
/// with observation weights.
pub fn moment_smooth(
    d: &Dataset,
    b: f64,
    spec: KernelSpec,
    i: usize,
    weights: Option<&[f64]>,
) -> Result<Moments> {
    check_weights(weights, d.n())?;
    let kw = KernelWeights::new(d.n(), b, spec)?;
    moments_at(d, &kw, i, weights)
}

pub(crate) fn moments_at(
    d: &Dataset,
    kw: &KernelWeights,
    i: usize,
    weights: Option<&[f64]>,
) -> Result<Moments> {
    let (p1, p2) = (d.p1(), d.p2());
    let mut s1 = DVector::zeros(p2);
    let mut s2 = DMatrix::zeros(p2, p1);
    let mut s3 = DMatrix::zeros(p2, p2);
    for (j, k) in kw.band(i)?.iter() {
        let w = weights.map_or(k, |w| k * w[j]);
        for a in 0..p2 {
            let xa = w * d.x2[(j, a)];
            s1[a] += xa * d.y[j];
            for c in 0..p1 {
                s2[(a, c)] += xa * d.x1[(j, c)];
            }
            for c in 0..p2 {
                s3[(a, c)] += xa * d.x2[(j, c)];
            }
        }
    }
    Ok(Moments { s1, s2, s3 })
}

/// Solves the row-`i` system for `[q1_i | q2_i]` (p2 x (1 + p1)).
fn solve_row(
    d: &Dataset,
    kw: &KernelWeights,
    i: usize,
    method: SmootherMethod,
    weights: Option<&[f64]>,
    mu: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let (p1, p2) = (d.p1(), d.p2());
    let band = kw.band(i)?;
    let (lhs, rhs) = match method {
        SmootherMethod::NadarayaWatson => {
            let mut lhs = DMatrix::zeros(p2, p2);
            let mut rhs = DMatrix::zeros(p2, 1 + p1);
            for (j, k) in band.iter() {
                let w = weights.map_or(k, |w| k * w[j]);
                for a in 0..p2 {
                    let xa = w * d.x2[(j, a)];
                    rhs[(a, 0)] += xa * d.y[j];
                    for c in 0..p1 {
                        rhs[(a, 1 + c)] += xa * d.x1[(j, c)];
                    }
                    for c in 0..p2 {
                        lhs[(a, c)] += xa * d.x2[(j, c)];
                    }
                }
            }
            (lhs, rhs)
        }
        SmootherMethod::LocalLinear => {
            let m = 2 * p2;
            let mut lhs = DMatrix::zeros(m, m);
            let mut rhs = DMatrix::zeros(m, 1 + p1);
            let mut z = vec![0.0; m];
            for (j, k) in band.iter() {
                let w = weights.map_or(k, |w| k * w[j]);
                let off = kw.offset(i, j);
                for a in 0..p2 {
                    z[a] = d.x2[(j, a)];
                    z[p2 + a] = d.x2[(j, a)] * off;
                }
                for a in 0..m {
                    let za = w * z[a];
                    rhs[(a, 0)] += za * d.y[j];
                    for c in 0..p1 {
                        rhs[(a, 1 + c)] += za * d.x1[(j, c)];
                    }
                    for c in 0..m {
                        lhs[(a, c)] += za * z[c];
                    }
                }
            }
            (lhs, rhs)
        }
    };
    let mut lhs = lhs;
    for a in 0..lhs.nrows() {
        lhs[(a, a)] += mu;
    }
    let (sol, cond) =
        spd_solve_cond(&lhs, &rhs).map_err(|s| Error::SingularSmoother { row: i, cond: s.cond })?;
    Ok((sol.rows(0, p2).into_owned(), cond))
}

/// Partial-regression coefficients `q1_i`, `q2_i` for every row.
///
/// `weights`, when given, must be positive; they enter every moment as
/// `k_ij w_j`.
pub fn partial_coeffs(
    d: &Dataset,
    b: f64,
    spec: KernelSpec,
    method: SmootherMethod,
    weights: Option<&[f64]>,
    ridge: Ridge,
) -> Result<PartialCoeffs> {
    check_weights(weights, d.n())?;
    let (n, p1, p2) = (d.n(), d.p1(), d.p2());
    if p2 == 0 {
        return Ok(PartialCoeffs {
            q1: DMatrix::zeros(n, 0),
            q2: vec![DMatrix::zeros(0, p1); n],
            method,
            max_condition: 1.0,
        });
    }
    let kw = KernelWeights::new(n, b, spec)?;
    let mu = ridge.resolve(n);
    let mut q1 = DMatrix::zeros(n, p2);
    let mut q2 = Vec::with_capacity(n);
    let mut max_condition: f64 = 1.0;
    for i in 0..n {
        let (sol, cond) = solve_row(d, &kw, i, method, weights, mu)?;
        max_condition = max_condition.max(cond);
        for a in 0..p2 {
            q1[(i, a)] = sol[(a, 0)];
        }
        q2.push(sol.columns(1, p1).into_owned());
    }
    Ok(PartialCoeffs {
        q1,
        q2,
        method,
        max_condition,
    })
}

/// `y_hat_i = y_i - x2_i' q1_i` and `x1_hat_i = x1_i - q2_i' x2_i`.
pub fn residualize(d: &Dataset, pc: &PartialCoeffs) -> Result<Residualized> {
    let (n, p1, p2) = (d.n(), d.p1(), d.p2());
    if pc.q1.nrows() != n || pc.q1.ncols() != p2 || pc.q2.len() != n {
        return Err(Error::DimensionMismatch(
            "partial coefficients do not match the dataset".into(),
        ));
    }
    let mut y_hat = d.y.clone();
    let mut x1_hat = d.x1.clone();
    for i in 0..n {
        for a in 0..p2 {
            let x = d.x2[(i, a)];
            y_hat[i] -= x * pc.q1[(i, a)];
            for c in 0..p1 {
                x1_hat[(i, c)] -= pc.q2[i][(a, c)] * x;
            }
        }
    }
    Ok(Residualized { y_hat, x1_hat })
}
