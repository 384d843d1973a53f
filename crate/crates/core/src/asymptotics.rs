//! Covariance estimators, confidence intervals, Loewner-order checks and
//! Monte Carlo evaluation of the population matrices
//!
//! ```text
//! Sigma1 = int E[x1~ x1~'] du,    Sigma2 = int sum_l cov(x1~_0 e_0, x1~_l e_l) du,
//! Sigma* = int E[x1~ x1~'] / sigma(u)^2 du,    S_zw = int A S1^-1 S2 S1^-1 A' du.
//! ```

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, operator_norm, spd_inverse, symmetrize};
use crate::simulate::{stationary_paths, subseed, validate_stability, DgpSpec};
use crate::smoother::Residualized;

/// Bartlett lag used for the population long-run sums.
pub const THEORETICAL_LAG: usize = 50;
/// Length of each Monte Carlo path after burn-in.
pub const THEORETICAL_PATH_LEN: usize = 512;
pub const DEFAULT_GRID_SIZE: usize = 51;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `floor(n^(1/3))` unless a lag is given.
pub fn resolve_hac_lag(n: usize, lag: Option<usize>) -> usize {
    lag.unwrap_or_else(|| {
        let mut l = (n as f64).cbrt().floor() as usize;
        while (l + 1).pow(3) <= n {
            l += 1;
        }
        while l > 0 && l.pow(3) > n {
            l -= 1;
        }
        l
    })
}

/// `(1/n) sum_i x1_hat_i x1_hat_i'`.
pub fn estimate_sigma1(res: &Residualized) -> DMatrix<f64> {
    let n = res.x1_hat.nrows().max(1);
    let mut s = res.x1_hat.transpose() * &res.x1_hat / n as f64;
    symmetrize(&mut s);
    s
}

/// Bartlett lag-window estimate of the long-run covariance of the rows of
/// `u_hat` (not demeaned).
pub fn estimate_sigma2_hac(u_hat: &DMatrix<f64>, lag: Option<usize>) -> Result<DMatrix<f64>> {
    let n = u_hat.nrows();
    let p = u_hat.ncols();
    let lag = resolve_hac_lag(n, lag);
    if 2 * lag >= n {
        return Err(Error::LagTooLarge { lag, n });
    }
    let mut s = u_hat.transpose() * u_hat;
    for l in 1..=lag {
        let w = 1.0 - l as f64 / (lag + 1) as f64;
        let head = u_hat.rows(0, n - l);
        let tail = u_hat.rows(l, n - l);
        let g = head.transpose() * tail;
        s += (&g + g.transpose()) * w;
    }
    let mut s = s / n as f64;
    debug_assert_eq!(s.nrows(), p);
    symmetrize(&mut s);
    Ok(s)
}

/// `Sigma1^-1 Sigma2 Sigma1^-1`.
pub fn sandwich_cov(sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma1.shape() != sigma2.shape() || !sigma1.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "sigma1 is {:?}, sigma2 is {:?}",
            sigma1.shape(),
            sigma2.shape()
        )));
    }
    let inv = spd_inverse(sigma1).map_err(|s| Error::SingularDesign { cond: s.cond })?;
    let mut c = &inv * sigma2 * &inv;
    symmetrize(&mut c);
    Ok(c)
}

fn normal_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf((1.0 + level) / 2.0)
}

/// Per-coordinate normal intervals `beta_k +- z sqrt(cov_kk)`.
pub fn ci_from_cov(beta: &DVector<f64>, cov: &DMatrix<f64>, level: f64) -> Vec<Interval> {
    let z = normal_quantile(level);
    beta.iter()
        .enumerate()
        .map(|(k, &b)| {
            let h = z * cov[(k, k)].max(0.0).sqrt();
            Interval { lo: b - h, hi: b + h }
        })
        .collect()
}

/// Intervals from the sandwich `Sigma1^-1 Sigma2 Sigma1^-1 / n`.
pub fn sandwich_ci(
    sigma1: &DMatrix<f64>,
    sigma2: &DMatrix<f64>,
    beta1: &DVector<f64>,
    n: usize,
    level: f64,
) -> Result<Vec<Interval>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} outside (0, 1)")));
    }
    if beta1.len() != sigma1.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "beta1 has {} entries, sigma1 is {}x{}",
            beta1.len(),
            sigma1.nrows(),
            sigma1.ncols()
        )));
    }
    let cov = sandwich_cov(sigma1, sigma2)? / n as f64;
    Ok(ci_from_cov(beta1, &cov, level))
}

/// `(1/n) sum_i x1_hat_i x1_hat_i' / sigma2_i` where `sigma2` is the variance path.
pub fn estimate_sigma_star(res: &Residualized, sigma2: &[f64]) -> Result<DMatrix<f64>> {
    let n = res.x1_hat.nrows();
    if sigma2.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "variance path has {} entries, expected {n}",
            sigma2.len()
        )));
    }
    if let Some((index, &value)) = sigma2.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::NonPositiveVariance { index, value });
    }
    let mut scaled = res.x1_hat.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row /= sigma2[i].sqrt();
    }
    let mut s = scaled.transpose() * scaled / n.max(1) as f64;
    symmetrize(&mut s);
    Ok(s)
}

/// `A <= B` in the Loewner order, up to `tol` on the smallest eigenvalue of `B - A`.
pub fn loewner_leq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<bool> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "cannot compare {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut d = b - a;
    symmetrize(&mut d);
    Ok(min_eigenvalue(&d) >= -tol)
}

fn trapezoid(values: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m = values.len();
    let h = 1.0 / (m - 1) as f64;
    let mut acc = DMatrix::zeros(values[0].nrows(), values[0].ncols());
    for (k, v) in values.iter().enumerate() {
        let w = if k == 0 || k == m - 1 { 0.5 } else { 1.0 };
        acc += v * (w * h);
    }
    acc
}

/// Compares `(int Sigma)^-1` with `int Sigma^-1` for a path sampled on a
/// uniform grid of `[0, 1]`. Returns whether the order holds and the smallest
/// eigenvalue of the difference.
pub fn check_integral_inverse_inequality(path: &[DMatrix<f64>]) -> Result<(bool, f64)> {
    if path.len() < 2 {
        return Err(Error::InvalidInput("need at least two grid points".into()));
    }
    let dim = path[0].nrows();
    let mut inverses = Vec::with_capacity(path.len());
    for (index, s) in path.iter().enumerate() {
        if s.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch(format!(
                "grid point {index} is {:?}, expected {dim}x{dim}",
                s.shape()
            )));
        }
        let asym = (s - s.transpose()).abs().max();
        if asym > 1e-10 * (1.0 + s.abs().max()) || !(min_eigenvalue(s) > 0.0) {
            return Err(Error::NonPdInput { index });
        }
        inverses.push(spd_inverse(s).map_err(|_| Error::NonPdInput { index })?);
    }
    let lhs = spd_inverse(&trapezoid(path)).map_err(|_| Error::NonPdInput { index: 0 })?;
    let mut rhs = trapezoid(&inverses);
    symmetrize(&mut rhs);
    let mut diff = &rhs - &lhs;
    symmetrize(&mut diff);
    let gap = min_eigenvalue(&diff);
    let tol = 1e-10 * operator_norm(&rhs).max(1.0);
    Ok((loewner_leq(&lhs, &rhs, tol)?, gap))
}

/// Population matrices of a data-generating process.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticMatrices {
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
    pub sigma_star: DMatrix<f64>,
    pub s_zw: DMatrix<f64>,
    pub hac_lag: usize,
    pub grid_size: usize,
    pub mc_paths: usize,
}

impl AsymptoticMatrices {
    /// Limit covariance of the partial-regression estimator.
    pub fn partial_variance(&self) -> Result<DMatrix<f64>> {
        sandwich_cov(&self.sigma1, &self.sigma2)
    }

    /// Limit covariance of the two-stage weighted estimator, `(Sigma*)^-1`.
    pub fn optimal_variance(&self) -> Result<DMatrix<f64>> {
        let mut v = spd_inverse(&self.sigma_star).map_err(|s| Error::SingularDesign { cond: s.cond })?;
        symmetrize(&mut v);
        Ok(v)
    }
}

/// Moment sums at one grid point, accumulated over paths.
#[derive(Clone)]
struct GridAcc {
    /// `sum x x'` (p x p).
    xx: DMatrix<f64>,
    /// `sum_t v_t v_{t+l}'` for `v = x e`, `l = 0..=THEORETICAL_LAG`.
    lags: Vec<DMatrix<f64>>,
}

impl GridAcc {
    fn zeros(p: usize) -> Self {
        Self {
            xx: DMatrix::zeros(p, p),
            lags: vec![DMatrix::zeros(p, p); THEORETICAL_LAG + 1],
        }
    }

    fn add(&mut self, other: &GridAcc) {
        self.xx += &other.xx;
        for (a, b) in self.lags.iter_mut().zip(&other.lags) {
            *a += b;
        }
    }
}

const PATHS_PER_CHUNK: usize = 8;

fn accumulate_chunk(spec: &DgpSpec, grid: &[f64], seed: u64, paths: std::ops::Range<usize>) -> Vec<GridAcc> {
    let p = spec.p();
    let len = THEORETICAL_PATH_LEN;
    let mut acc = vec![GridAcc::zeros(p); grid.len()];
    let mut v = vec![0.0; len * p];
    for path in paths {
        let samples = stationary_paths(spec, grid, len, subseed(seed, path as u64));
        for (g, s) in samples.iter().enumerate() {
            let a = &mut acc[g];
            for t in 0..len {
                let row = &s.x[t * p..(t + 1) * p];
                for r in 0..p {
                    v[t * p + r] = row[r] * s.e[t];
                    for c in 0..p {
                        a.xx[(r, c)] += row[r] * row[c];
                    }
                }
            }
            for (l, m) in a.lags.iter_mut().enumerate() {
                for t in 0..len - l {
                    let (vt, vs) = (&v[t * p..(t + 1) * p], &v[(t + l) * p..(t + l + 1) * p]);
                    for r in 0..p {
                        for c in 0..p {
                            m[(r, c)] += vt[r] * vs[c];
                        }
                    }
                }
            }
        }
    }
    acc
}

/// Monte Carlo evaluation of the population matrices. Each grid point uses
/// `mc_paths` stationary paths of length 512 after a 512-step burn-in; the
/// same innovations drive every grid point, and long-run sums use a Bartlett
/// taper at lag 50. Integrals over `u` use the trapezoid rule.
pub fn theoretical_matrices(
    spec: &DgpSpec,
    mc_paths: usize,
    grid_size: usize,
    seed: u64,
) -> Result<AsymptoticMatrices> {
    spec.validate()?;
    if mc_paths == 0 {
        return Err(Error::InvalidInput("mc_paths must be positive".into()));
    }
    if grid_size < 2 {
        return Err(Error::InvalidInput("grid_size must be at least 2".into()));
    }
    let grid: Vec<f64> = (0..grid_size).map(|k| k as f64 / (grid_size - 1) as f64).collect();
    for (index, &u) in grid.iter().enumerate() {
        let s = spec.sigma.eval(u);
        if !(s > 0.0) {
            return Err(Error::NonPositiveVariance { index, value: s });
        }
    }
    let report = validate_stability(spec, grid_size.max(21))?;
    if !report.ok {
        return Err(Error::StabilityViolation {
            u: report.worst_u,
            radius: report.worst_radius,
        });
    }

    let p = spec.p();
    let chunks: Vec<std::ops::Range<usize>> = (0..mc_paths)
        .step_by(PATHS_PER_CHUNK)
        .map(|s| s..(s + PATHS_PER_CHUNK).min(mc_paths))
        .collect();
    let partial: Vec<Vec<GridAcc>> = chunks
        .into_par_iter()
        .map(|r| accumulate_chunk(spec, &grid, seed, r))
        .collect();
    // reduce in chunk order so the result does not depend on scheduling
    let mut total = vec![GridAcc::zeros(p); grid_size];
    for part in &partial {
        for (t, a) in total.iter_mut().zip(part) {
            t.add(a);
        }
    }

    let stable = spec.stable_indices();
    let varying = spec.varying_indices();
    let (p1, p2) = (stable.len(), varying.len());
    let len = THEORETICAL_PATH_LEN as f64;
    let mut s1_path = Vec::with_capacity(grid_size);
    let mut s2_path = Vec::with_capacity(grid_size);
    let mut star_path = Vec::with_capacity(grid_size);
    let mut zw_path = Vec::with_capacity(grid_size);
    for (g, acc) in total.iter().enumerate() {
        let mut m = &acc.xx / (mc_paths as f64 * len);
        symmetrize(&mut m);
        let mut long_run = &acc.lags[0] / (mc_paths as f64 * len);
        for l in 1..=THEORETICAL_LAG {
            let w = 1.0 - l as f64 / (THEORETICAL_LAG + 1) as f64;
            let gamma = &acc.lags[l] / (mc_paths as f64 * (len - l as f64));
            long_run += (&gamma + gamma.transpose()) * w;
        }
        symmetrize(&mut long_run);

        let m11 = DMatrix::from_fn(p1, p1, |r, c| m[(stable[r], stable[c])]);
        let m22 = DMatrix::from_fn(p2, p2, |r, c| m[(varying[r], varying[c])]);
        let m21 = DMatrix::from_fn(p2, p1, |r, c| m[(varying[r], stable[c])]);
        // q2(u) = M22^-1 M21, x1~ = A_q x with A_q = [I, -q2'] in stable/varying coordinates
        let q2 = if p2 > 0 {
            let inv22 = spd_inverse(&m22).map_err(|s| Error::SingularDesign { cond: s.cond })?;
            inv22 * &m21
        } else {
            DMatrix::zeros(0, p1)
        };
        let mut aq = DMatrix::zeros(p1, p);
        for (r, &k) in stable.iter().enumerate() {
            aq[(r, k)] = 1.0;
        }
        for (c, &k) in varying.iter().enumerate() {
            for r in 0..p1 {
                aq[(r, k)] = -q2[(c, r)];
            }
        }
        let mut h = &aq * &m * aq.transpose();
        symmetrize(&mut h);
        debug_assert!((&h - (&m11 - m21.transpose() * &q2)).abs().max() < 1e-8 * (1.0 + m11.abs().max()));
        let mut s2 = &aq * &long_run * aq.transpose();
        symmetrize(&mut s2);

        let minv = spd_inverse(&m).map_err(|s| Error::SingularDesign { cond: s.cond })?;
        let full = &minv * &long_run * &minv;
        let mut zw = DMatrix::from_fn(p1, p1, |r, c| full[(stable[r], stable[c])]);
        symmetrize(&mut zw);

        let sigma = spec.sigma.eval(grid[g]);
        star_path.push(&h / (sigma * sigma));
        s1_path.push(h);
        s2_path.push(s2);
        zw_path.push(zw);
    }

    let finish = |path: &[DMatrix<f64>]| {
        let mut m = trapezoid(path);
        symmetrize(&mut m);
        m
    };
    Ok(AsymptoticMatrices {
        sigma1: finish(&s1_path),
        sigma2: finish(&s2_path),
        sigma_star: finish(&star_path),
        s_zw: finish(&zw_path),
        hac_lag: THEORETICAL_LAG,
        grid_size,
        mc_paths,
    })
}
