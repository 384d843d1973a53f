//! Estimators of the stable coefficients `beta1`, the varying path `beta2(u)`,
//! the fully nonparametric fit `beta(u)` and the local noise variance.
//!
//! * [`fit_beta1`]: partial regression, Nadaraya-Watson or local-linear first stage.
//! * [`fit_beta1_weighted`]: the same on the row-rescaled model `p_i y_i = p_i x_i' beta + p_i e_i`.
//! * [`fit_beta1_optimal`]: two-stage variance-weighted estimator.
//! * [`fit_beta1_average`]: average over time of the stable block of the local fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    ci_from_cov, estimate_sigma1, estimate_sigma2_hac, estimate_sigma_star, resolve_hac_lag,
    sandwich_cov, Interval,
};
use crate::error::{Error, Result};
use crate::kernel::{check_bandwidth, KernelSpec, KernelWeights};
use crate::linalg::{spd_inverse, spd_solve, spd_solve_cond, sym_condition, symmetrize};
use crate::smoother::{partial_coeffs, residualize, Dataset, PartialCoeffs, Residualized, Ridge, SmootherMethod};

/// Relative floor applied to the variance path: `SIGMA_FLOOR_REL * median`.
pub const SIGMA_FLOOR_REL: f64 = 1e-6;
/// Absolute floor used when the median variance is itself zero.
pub const SIGMA_FLOOR_ABS: f64 = 1e-150;

/// Smoothing and inference settings shared by all estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub kernel: KernelSpec,
    pub bandwidth: f64,
    pub ridge: Ridge,
    /// Confidence level of the reported intervals.
    pub level: f64,
    /// Bartlett lag of the long-run covariance; `None` means `floor(n^(1/3))`.
    pub hac_lag: Option<usize>,
}

impl FitOptions {
    pub fn new(bandwidth: f64) -> Self {
        Self {
            kernel: KernelSpec::default(),
            bandwidth,
            ridge: Ridge::default(),
            level: 0.95,
            hac_lag: None,
        }
    }

    pub fn with_kernel(mut self, kernel: KernelSpec) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_ridge(mut self, ridge: Ridge) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn with_level(mut self, level: f64) -> Self {
        self.level = level;
        self
    }

    pub fn with_hac_lag(mut self, lag: Option<usize>) -> Self {
        self.hac_lag = lag;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    PartialNw,
    PartialLl,
    Weighted,
    Optimal,
    Average,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::PartialNw => "partial_nw",
            EstimatorKind::PartialLl => "partial_ll",
            EstimatorKind::Weighted => "weighted",
            EstimatorKind::Optimal => "optimal",
            EstimatorKind::Average => "average",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "partial_nw" | "nw" => Ok(EstimatorKind::PartialNw),
            "partial_ll" | "ll" => Ok(EstimatorKind::PartialLl),
            "weighted" => Ok(EstimatorKind::Weighted),
            "optimal" => Ok(EstimatorKind::Optimal),
            "average" => Ok(EstimatorKind::Average),
            other => Err(Error::InvalidInput(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Condition number of the final normal-equation matrix.
    pub design_condition: f64,
    /// Worst condition number among the local smoother systems.
    pub smoother_condition: f64,
    pub n: usize,
    pub hac_lag: Option<usize>,
    /// Floor applied to the variance path (two-stage estimator only).
    pub sigma_floor: Option<f64>,
}

/// Point estimate of `beta1` with its estimated covariance.
#[derive(Debug, Clone)]
pub struct Beta1Fit {
    pub beta1: DVector<f64>,
    /// Estimated covariance of `beta1_hat`, i.e. the asymptotic covariance of
    /// `sqrt(n) (beta1_hat - beta1)` divided by `n`.
    pub cov: DMatrix<f64>,
    pub ci: Vec<Interval>,
    pub level: f64,
    pub method: EstimatorKind,
    pub b_used: f64,
    pub diagnostics: Diagnostics,
}

impl Beta1Fit {
    /// Asymptotic covariance of `sqrt(n) (beta1_hat - beta1)`.
    pub fn asymptotic_cov(&self) -> DMatrix<f64> {
        &self.cov * self.diagnostics.n as f64
    }

    pub fn covers(&self, truth: &[f64]) -> Vec<bool> {
        self.ci.iter().zip(truth).map(|(ci, &t)| ci.contains(t)).collect()
    }
}

/// `beta2_hat(i/n)` for every row (n x p2).
#[derive(Debug, Clone, PartialEq)]
pub struct Beta2Path {
    pub values: DMatrix<f64>,
}

/// Local variance estimates `sigma2_hat(i/n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaPath {
    pub values: Vec<f64>,
    /// Floor that was applied, if the path was estimated.
    pub floor: Option<f64>,
}

impl SigmaPath {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::NonPositiveVariance { index, value });
        }
        Ok(Self { values, floor: None })
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }
}

/// Local least-squares fits of `y` on the full regressor `[x1 x2]`.
#[derive(Debug, Clone)]
pub struct FullNpFit {
    /// Row `i` is `beta_hat(i/n)'` (n x p).
    pub beta: DMatrix<f64>,
    pub max_condition: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beta2Method {
    /// `q1_i - q2_i beta1`.
    #[default]
    PlugIn,
    /// Local least squares of `y - x1' beta1` on `x2`.
    LocalRefit,
}

fn check_common(d: &Dataset, opts: &FitOptions) -> Result<()> {
    let needed = 4 * d.p();
    if d.n() < needed {
        return Err(Error::InsufficientData { n: d.n(), needed });
    }
    check_bandwidth(opts.bandwidth, d.n())?;
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must lie in (0, 1), got {}",
            opts.level
        )));
    }
    Ok(())
}

/// Weighted least squares of `y_hat` on `x1_hat` with optional row weights.
fn final_regression(res: &Residualized, weights: Option<&[f64]>) -> Result<(DVector<f64>, f64)> {
    let (n, p1) = (res.x1_hat.nrows(), res.x1_hat.ncols());
    let mut xtx = DMatrix::zeros(p1, p1);
    let mut xty = DMatrix::zeros(p1, 1);
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        for a in 0..p1 {
            let xa = w * res.x1_hat[(i, a)];
            xty[(a, 0)] += xa * res.y_hat[i];
            for c in 0..p1 {
                xtx[(a, c)] += xa * res.x1_hat[(i, c)];
            }
        }
    }
    let (sol, cond) = spd_solve_cond(&xtx, &xty).map_err(|s| Error::SingularDesign { cond: s.cond })?;
    Ok((sol.column(0).into_owned(), cond))
}

/// Rows `x1_hat_i * e_hat_i` whose long-run covariance is the middle of the sandwich.
fn scores(res: &Residualized, beta1: &DVector<f64>) -> DMatrix<f64> {
    let e = &res.y_hat - &res.x1_hat * beta1;
    let mut u = res.x1_hat.clone();
    for (i, mut row) in u.row_iter_mut().enumerate() {
        row *= e[i];
    }
    u
}

struct PartialStage {
    beta1: DVector<f64>,
    pc: PartialCoeffs,
    res: Residualized,
    design_condition: f64,
}

fn partial_stage(
    d: &Dataset,
    opts: &FitOptions,
    method: SmootherMethod,
    weights: Option<&[f64]>,
) -> Result<PartialStage> {
    let pc = partial_coeffs(d, opts.bandwidth, opts.kernel, method, weights, opts.ridge)?;
    let res = residualize(d, &pc)?;
    let (beta1, design_condition) = final_regression(&res, weights)?;
    Ok(PartialStage {
        beta1,
        pc,
        res,
        design_condition,
    })
}

/// Partial-regression estimator of `beta1` with a Nadaraya-Watson or
/// local-linear first stage and a sandwich covariance whose middle matrix
/// is a Bartlett long-run estimate.
///
/// With no time-varying regressors this is ordinary least squares of `y`
/// on `x1`.
pub fn fit_beta1(d: &Dataset, opts: &FitOptions, method: SmootherMethod) -> Result<Beta1Fit> {
    check_common(d, opts)?;
    let stage = partial_stage(d, opts, method, None)?;
    let n = d.n();
    let lag = resolve_hac_lag(n, opts.hac_lag);
    let sigma1 = estimate_sigma1(&stage.res);
    let sigma2 = estimate_sigma2_hac(&scores(&stage.res, &stage.beta1), Some(lag))?;
    let mut cov = sandwich_cov(&sigma1, &sigma2)? / n as f64;
    symmetrize(&mut cov);
    let ci = ci_from_cov(&stage.beta1, &cov, opts.level);
    Ok(Beta1Fit {
        beta1: stage.beta1,
        cov,
        ci,
        level: opts.level,
        method: match method {
            SmootherMethod::NadarayaWatson => EstimatorKind::PartialNw,
            SmootherMethod::LocalLinear => EstimatorKind::PartialLl,
        },
        b_used: opts.bandwidth,
        diagnostics: Diagnostics {
            design_condition: stage.design_condition,
            smoother_condition: stage.pc.max_condition,
            n,
            hac_lag: Some(lag),
            sigma_floor: None,
        },
    })
}

/// `beta2_hat(i/n)` given a value of `beta1`.
pub fn fit_beta2_path(
    d: &Dataset,
    opts: &FitOptions,
    beta1: &DVector<f64>,
    method: SmootherMethod,
    how: Beta2Method,
) -> Result<Beta2Path> {
    if beta1.len() != d.p1() {
        return Err(Error::DimensionMismatch(format!(
            "beta1 has {} entries, dataset has p1 = {}",
            beta1.len(),
            d.p1()
        )));
    }
    check_bandwidth(opts.bandwidth, d.n())?;
    let (n, p2) = (d.n(), d.p2());
    match how {
        Beta2Method::PlugIn => {
            let pc = partial_coeffs(d, opts.bandwidth, opts.kernel, method, None, opts.ridge)?;
            let mut values = pc.q1.clone();
            for i in 0..n {
                let shift = &pc.q2[i] * beta1;
                for a in 0..p2 {
                    values[(i, a)] -= shift[a];
                }
            }
            Ok(Beta2Path { values })
        }
        Beta2Method::LocalRefit => {
            let partial_y = &d.y - &d.x1 * beta1;
            let reduced = Dataset {
                y: partial_y,
                x1: DMatrix::zeros(n, 1),
                x2: d.x2.clone(),
            };
            let pc = partial_coeffs(&reduced, opts.bandwidth, opts.kernel, method, None, opts.ridge)?;
            Ok(Beta2Path { values: pc.q1 })
        }
    }
}

/// Local least-squares matrices and solutions for the full regression.
struct LocalFits {
    beta: DMatrix<f64>,
    lhs: Vec<DMatrix<f64>>,
    max_condition: f64,
}

fn local_fits(d: &Dataset, opts: &FitOptions) -> Result<LocalFits> {
    let (n, p) = (d.n(), d.p());
    let x = d.x_full();
    let kw = KernelWeights::new(n, opts.bandwidth, opts.kernel)?;
    let mu = opts.ridge.resolve(n);
    let mut beta = DMatrix::zeros(n, p);
    let mut lhs_all = Vec::with_capacity(n);
    let mut max_condition: f64 = 1.0;
    for i in 0..n {
        let mut lhs = DMatrix::zeros(p, p);
        let mut rhs = DMatrix::zeros(p, 1);
        for (j, k) in kw.band(i)?.iter() {
            for a in 0..p {
                let xa = k * x[(j, a)];
                rhs[(a, 0)] += xa * d.y[j];
                for c in 0..p {
                    lhs[(a, c)] += xa * x[(j, c)];
                }
            }
        }
        for a in 0..p {
            lhs[(a, a)] += mu;
        }
        let (sol, cond) =
            spd_solve_cond(&lhs, &rhs).map_err(|s| Error::SingularSmoother { row: i, cond: s.cond })?;
        max_condition = max_condition.max(cond);
        for a in 0..p {
            beta[(i, a)] = sol[(a, 0)];
        }
        lhs_all.push(lhs);
    }
    Ok(LocalFits {
        beta,
        lhs: lhs_all,
        max_condition,
    })
}

/// Nadaraya-Watson estimate of the full coefficient path:
/// `beta_hat(i/n) = (sum_j k_ij x_j x_j' + mu I)^-1 sum_j k_ij x_j y_j`.
pub fn fit_full_np(d: &Dataset, opts: &FitOptions) -> Result<FullNpFit> {
    check_bandwidth(opts.bandwidth, d.n())?;
    let fits = local_fits(d, opts)?;
    Ok(FullNpFit {
        beta: fits.beta,
        max_condition: fits.max_condition,
    })
}

fn sigma_path_from_fit(d: &Dataset, opts: &FitOptions, np: &FullNpFit) -> Result<SigmaPath> {
    let (n, p) = (d.n(), d.p());
    let x = d.x_full();
    let kw = KernelWeights::new(n, opts.bandwidth, opts.kernel)?;
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = 0.0;
        for (j, k) in kw.band(i)?.iter() {
            let mut r = d.y[j];
            for a in 0..p {
                r -= x[(j, a)] * np.beta[(i, a)];
            }
            s += k * r * r;
        }
        values.push(s);
    }
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let floor = (SIGMA_FLOOR_REL * median).max(SIGMA_FLOOR_ABS);
    for v in &mut values {
        *v = v.max(floor);
    }
    Ok(SigmaPath {
        values,
        floor: Some(floor),
    })
}

/// `sigma2_hat(i/n) = sum_j k_ij (y_j - x_j' beta_hat(i/n))^2`, floored at
/// `1e-6 * median`.
pub fn estimate_sigma2_path(d: &Dataset, opts: &FitOptions) -> Result<SigmaPath> {
    let np = fit_full_np(d, opts)?;
    sigma_path_from_fit(d, opts, &np)
}

/// Two-stage variance-weighted estimator. Returns the fit and the variance
/// path that was used for the weights.
pub fn fit_beta1_optimal_with_path(
    d: &Dataset,
    opts: &FitOptions,
    sigma_override: Option<&SigmaPath>,
) -> Result<(Beta1Fit, SigmaPath)> {
    check_common(d, opts)?;
    let n = d.n();
    let sigma = match sigma_override {
        Some(s) => {
            if s.values.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "variance path has {} entries, dataset has {n} rows",
                    s.values.len()
                )));
            }
            SigmaPath::new(s.values.clone())?
        }
        None => estimate_sigma2_path(d, opts)?,
    };
    // Inverse-variance weights rescaled to mean one; the point estimate does
    // not depend on the scale, the ridge does.
    let inv: Vec<f64> = sigma.values.iter().map(|s| 1.0 / s).collect();
    let mean_inv = inv.iter().sum::<f64>() / n as f64;
    let weights: Vec<f64> = inv.iter().map(|w| w / mean_inv).collect();

    let stage = partial_stage(d, opts, SmootherMethod::NadarayaWatson, Some(&weights))?;
    let sigma_star = estimate_sigma_star(&stage.res, &sigma.values)?;
    let mut cov = spd_inverse(&sigma_star)
        .map_err(|s| Error::SingularDesign { cond: s.cond })?
        / n as f64;
    symmetrize(&mut cov);
    let ci = ci_from_cov(&stage.beta1, &cov, opts.level);
    let fit = Beta1Fit {
        beta1: stage.beta1,
        cov,
        ci,
        level: opts.level,
        method: EstimatorKind::Optimal,
        b_used: opts.bandwidth,
        diagnostics: Diagnostics {
            design_condition: stage.design_condition,
            smoother_condition: stage.pc.max_condition,
            n,
            hac_lag: None,
            sigma_floor: sigma.floor,
        },
    };
    Ok((fit, sigma))
}

/// Two-stage variance-weighted estimator of `beta1`.
pub fn fit_beta1_optimal(
    d: &Dataset,
    opts: &FitOptions,
    sigma_override: Option<&SigmaPath>,
) -> Result<Beta1Fit> {
    fit_beta1_optimal_with_path(d, opts, sigma_override).map(|(fit, _)| fit)
}

/// Partial-regression estimator applied to the rows rescaled by `p_weights`.
pub fn fit_beta1_weighted(d: &Dataset, opts: &FitOptions, p_weights: &[f64]) -> Result<Beta1Fit> {
    if p_weights.len() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} observations",
            p_weights.len(),
            d.n()
        )));
    }
    if let Some((index, &value)) = p_weights
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v > 0.0))
    {
        return Err(Error::NonPositiveWeight { index, value });
    }
    let scaled = d.scaled_rows(p_weights)?;
    let mut fit = fit_beta1(&scaled, opts, SmootherMethod::NadarayaWatson)?;
    fit.method = EstimatorKind::Weighted;
    Ok(fit)
}

/// Time average of the stable block of the local fits, with a long-run
/// covariance built from the influence terms `A S_hat(j/n)^-1 x_j e_hat_j`.
pub fn fit_beta1_average(d: &Dataset, opts: &FitOptions) -> Result<Beta1Fit> {
    check_common(d, opts)?;
    let (n, p1, p) = (d.n(), d.p1(), d.p());
    let fits = local_fits(d, opts)?;
    let beta1 = DVector::from_fn(p1, |a, _| fits.beta.column(a).sum() / n as f64);

    let x = d.x_full();
    let mut psi = DMatrix::zeros(n, p1);
    for j in 0..n {
        let xj = DMatrix::from_fn(p, 1, |a, _| x[(j, a)]);
        let e = d.y[j] - (0..p).map(|a| x[(j, a)] * fits.beta[(j, a)]).sum::<f64>();
        let z = spd_solve(&fits.lhs[j], &xj)
            .map_err(|s| Error::SingularSmoother { row: j, cond: s.cond })?;
        for a in 0..p1 {
            psi[(j, a)] = z[(a, 0)] * e;
        }
    }
    let lag = resolve_hac_lag(n, opts.hac_lag);
    let mut cov = estimate_sigma2_hac(&psi, Some(lag))? / n as f64;
    symmetrize(&mut cov);
    let ci = ci_from_cov(&beta1, &cov, opts.level);
    let design_condition = {
        let xtx = x.transpose() * &x;
        sym_condition(&xtx)
    };
    Ok(Beta1Fit {
        beta1,
        cov,
        ci,
        level: opts.level,
        method: EstimatorKind::Average,
        b_used: opts.bandwidth,
        diagnostics: Diagnostics {
            design_condition,
            smoother_condition: fits.max_condition,
            n,
            hac_lag: Some(lag),
            sigma_floor: None,
        },
    })
}

/// Dispatches on [`EstimatorKind`]. `Weighted` uses `p_weights` when given
/// and unit weights otherwise.
pub fn fit_by_kind(
    d: &Dataset,
    opts: &FitOptions,
    kind: EstimatorKind,
    p_weights: Option<&[f64]>,
) -> Result<Beta1Fit> {
    match kind {
        EstimatorKind::PartialNw => fit_beta1(d, opts, SmootherMethod::NadarayaWatson),
        EstimatorKind::PartialLl => fit_beta1(d, opts, SmootherMethod::LocalLinear),
        EstimatorKind::Optimal => fit_beta1_optimal(d, opts, None),
        EstimatorKind::Average => fit_beta1_average(d, opts),
        EstimatorKind::Weighted => {
            let ones;
            let w = match p_weights {
                Some(w) => w,
                None => {
                    ones = vec![1.0; d.n()];
                    &ones
                }
            };
            fit_beta1_weighted(d, opts, w)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic pseudo-random numbers for fixtures.
    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        }
    }

    fn noiseless(n: usize, beta1: [f64; 2], beta2: impl Fn(f64) -> [f64; 2]) -> Dataset {
        let mut r = lcg(7);
        let x1 = DMatrix::from_fn(n, 2, |_, _| 2.0 * r());
        let x2 = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { 1.0 + r() });
        let y = DVector::from_fn(n, |i, _| {
            let u = (i + 1) as f64 / n as f64;
            let b2 = beta2(u);
            x1[(i, 0)] * beta1[0] + x1[(i, 1)] * beta1[1] + x2[(i, 0)] * b2[0] + x2[(i, 1)] * b2[1]
        });
        Dataset::new(y, x1, x2).unwrap()
    }

    fn exact_opts() -> FitOptions {
        FitOptions::new(0.15).with_ridge(Ridge::Fixed(0.0))
    }

    #[test]
    fn noiseless_constant_beta2_is_exact() {
        let d = noiseless(200, [1.0, -2.0], |_| [0.5, 0.5]);
        let opts = exact_opts();
        for method in [SmootherMethod::NadarayaWatson, SmootherMethod::LocalLinear] {
            let fit = fit_beta1(&d, &opts, method).unwrap();
            assert!((fit.beta1[0] - 1.0).abs() < 1e-8);
            assert!((fit.beta1[1] + 2.0).abs() < 1e-8);
        }
        let path = fit_beta2_path(
            &d,
            &opts,
            &DVector::from_vec(vec![1.0, -2.0]),
            SmootherMethod::NadarayaWatson,
            Beta2Method::PlugIn,
        )
        .unwrap();
        assert!(path.values.iter().all(|v| (v - 0.5).abs() < 1e-9));
    }

    #[test]
    fn without_varying_regressors_fit_is_ols() {
        let n = 50;
        let mut r = lcg(3);
        let x1 = DMatrix::from_fn(n, 2, |_, _| r());
        let y = DVector::from_fn(n, |_, _| r());
        let d = Dataset::new(y.clone(), x1.clone(), DMatrix::zeros(n, 0)).unwrap();
        let fit = fit_beta1(&d, &FitOptions::new(0.2), SmootherMethod::NadarayaWatson).unwrap();
        let ols = x1.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        assert!((fit.beta1 - ols).amax() < 1e-10);
    }

    #[test]
    fn shift_and_scale_equivariance() {
        let n = 120;
        let mut r = lcg(11);
        let x1 = DMatrix::from_fn(n, 1, |_, _| r());
        let x2 = DMatrix::from_fn(n, 1, |_, _| 1.0 + r());
        let y = DVector::from_fn(n, |_, _| r());
        let d = Dataset::new(y.clone(), x1.clone(), x2.clone()).unwrap();
        let opts = FitOptions::new(0.2);
        let base = fit_beta1(&d, &opts, SmootherMethod::NadarayaWatson).unwrap();
        let shifted = Dataset::new(&y + &x1 * 0.7, x1.clone(), x2.clone()).unwrap();
        let fit = fit_beta1(&shifted, &opts, SmootherMethod::NadarayaWatson).unwrap();
        assert!((fit.beta1[0] - base.beta1[0] - 0.7).abs() < 1e-12);
        let scaled = Dataset::new(&y * 3.0, x1, x2).unwrap();
        let fit = fit_beta1(&scaled, &opts, SmootherMethod::NadarayaWatson).unwrap();
        assert!((fit.beta1[0] - 3.0 * base.beta1[0]).abs() < 1e-12);
    }

    #[test]
    fn refit_equals_plug_in() {
        let n = 80;
        let mut r = lcg(5);
        let x1 = DMatrix::from_fn(n, 1, |_, _| r());
        let x2 = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { r() });
        let y = DVector::from_fn(n, |_, _| r());
        let d = Dataset::new(y, x1, x2).unwrap();
        let opts = FitOptions::new(0.25);
        let b1 = DVector::from_vec(vec![0.3]);
        for m in [SmootherMethod::NadarayaWatson, SmootherMethod::LocalLinear] {
            let a = fit_beta2_path(&d, &opts, &b1, m, Beta2Method::PlugIn).unwrap();
            let b = fit_beta2_path(&d, &opts, &b1, m, Beta2Method::LocalRefit).unwrap();
            assert!((a.values - b.values).amax() < 1e-12);
        }
    }

    #[test]
    fn sigma_override_constant_matches_partial_nw() {
        let n = 100;
        let mut r = lcg(9);
        let x1 = DMatrix::from_fn(n, 1, |_, _| r());
        let x2 = DMatrix::from_fn(n, 1, |_, _| 1.0 + r());
        let y = DVector::from_fn(n, |_, _| r());
        let d = Dataset::new(y, x1, x2).unwrap();
        let opts = FitOptions::new(0.2).with_ridge(Ridge::Fixed(0.0));
        let nw = fit_beta1(&d, &opts, SmootherMethod::NadarayaWatson).unwrap();
        let s = SigmaPath::constant(n, 2.7).unwrap();
        let opt = fit_beta1_optimal(&d, &opts, Some(&s)).unwrap();
        assert!((opt.beta1[0] - nw.beta1[0]).abs() < 1e-12);
        let bad = SigmaPath { values: vec![0.0; n], floor: None };
        assert!(matches!(
            fit_beta1_optimal(&d, &opts, Some(&bad)),
            Err(Error::NonPositiveVariance { .. })
        ));
    }

    #[test]
    fn weighted_fit_scale_invariance() {
        let n = 100;
        let mut r = lcg(21);
        let x1 = DMatrix::from_fn(n, 1, |_, _| r());
        let x2 = DMatrix::from_fn(n, 1, |_, _| 1.0 + r());
        let y = DVector::from_fn(n, |_, _| r());
        let d = Dataset::new(y, x1, x2).unwrap();
        let opts = FitOptions::new(0.2).with_ridge(Ridge::Fixed(0.0));
        let base = fit_beta1(&d, &opts, SmootherMethod::NadarayaWatson).unwrap();
        let ones = fit_beta1_weighted(&d, &opts, &vec![1.0; n]).unwrap();
        assert_eq!(ones.beta1, base.beta1);
        let p: Vec<f64> = (0..n).map(|i| 0.5 + (i % 7) as f64 / 7.0).collect();
        let a = fit_beta1_weighted(&d, &opts, &p).unwrap();
        let p3: Vec<f64> = p.iter().map(|v| 3.3 * v).collect();
        let b = fit_beta1_weighted(&d, &opts, &p3).unwrap();
        assert!((a.beta1[0] - b.beta1[0]).abs() < 1e-12);
        let mut bad = p.clone();
        bad[4] = -1.0;
        assert!(matches!(
            fit_beta1_weighted(&d, &opts, &bad),
            Err(Error::NonPositiveWeight { index: 4, .. })
        ));
    }

    #[test]
    fn full_np_running_mean_and_constant_beta() {
        let n = 50;
        let mut r = lcg(1);
        let y = DVector::from_fn(n, |_, _| r());
        let d = Dataset::new(y.clone(), DMatrix::from_element(n, 1, 1.0), DMatrix::zeros(n, 0)).unwrap();
        let opts = FitOptions::new(0.2).with_ridge(Ridge::Fixed(0.0));
        let np = fit_full_np(&d, &opts).unwrap();
        for i in 0..n {
            let row = crate::kernel::weights_row(i, n, 0.2, KernelSpec::Epanechnikov).unwrap();
            let m: f64 = row.iter().zip(y.iter()).map(|(w, y)| w * y).sum();
            assert!((np.beta[(i, 0)] - m).abs() < 1e-13);
        }
        let d = noiseless(100, [0.4, 1.1], |_| [-0.3, 2.0]);
        let np = fit_full_np(&d, &opts).unwrap();
        for i in 0..100 {
            let expected = [0.4, 1.1, -0.3, 2.0];
            for (a, e) in expected.iter().enumerate() {
                assert!((np.beta[(i, a)] - e).abs() < 1e-9);
            }
        }
        let avg = fit_beta1_average(&d, &opts).unwrap();
        assert!((avg.beta1[0] - 0.4).abs() < 1e-9 && (avg.beta1[1] - 1.1).abs() < 1e-9);
    }

    #[test]
    fn full_np_interior_error_is_first_order_in_b() {
        // smooth beta(u) = sin(2 pi u), x deterministic, no noise
        let n = 2000;
        let mut r = lcg(17);
        let x = DMatrix::from_fn(n, 1, |_, _| 1.0 + r());
        let y = DVector::from_fn(n, |i, _| {
            let u = (i + 1) as f64 / n as f64;
            x[(i, 0)] * (2.0 * std::f64::consts::PI * u).sin()
        });
        let d = Dataset::new(y, x, DMatrix::zeros(n, 0)).unwrap();
        let err = |b: f64| {
            let np = fit_full_np(&d, &FitOptions::new(b).with_ridge(Ridge::Fixed(0.0))).unwrap();
            // errors near the ends of the interior window, where beta' is largest
            (0..n)
                .filter(|&i| {
                    let u = (i + 1) as f64 / n as f64;
                    u > 0.25 && u < 0.75
                })
                .map(|i| {
                    let u = (i + 1) as f64 / n as f64;
                    (np.beta[(i, 0)] - (2.0 * std::f64::consts::PI * u).sin()).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.1), err(0.05));
        assert!(e2 < e1, "{e1} {e2}");
        assert!(e1 < 0.2);
    }

    #[test]
    fn insufficient_data_and_bad_bandwidth() {
        let d = noiseless(10, [1.0, 1.0], |_| [0.0, 0.0]);
        assert!(matches!(
            fit_beta1(&d, &FitOptions::new(0.3), SmootherMethod::NadarayaWatson),
            Err(Error::InsufficientData { n: 10, needed: 16 })
        ));
        let d = noiseless(100, [1.0, 1.0], |_| [0.0, 0.0]);
        assert!(matches!(
            fit_beta1(&d, &FitOptions::new(0.9), SmootherMethod::NadarayaWatson),
            Err(Error::InvalidBandwidth(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn weighted_estimate_ignores_weight_scale(
                seed in 0u64..1000,
                scale in 1e-3f64..1e3,
                raw in proptest::collection::vec(0.2f64..5.0, 80),
            ) {
                let n = raw.len();
                let mut r = lcg(seed);
                let x1 = DMatrix::from_fn(n, 1, |_, _| r());
                let x2 = DMatrix::from_fn(n, 1, |_, _| 1.0 + r());
                let y = DVector::from_fn(n, |_, _| r());
                let d = Dataset::new(y, x1, x2).unwrap();
                let opts = FitOptions::new(0.2).with_ridge(Ridge::Fixed(0.0));
                let scaled: Vec<f64> = raw.iter().map(|w| w * scale).collect();
                let a = fit_beta1_weighted(&d, &opts, &raw).unwrap();
                let b = fit_beta1_weighted(&d, &opts, &scaled).unwrap();
                prop_assert!((a.beta1[0] - b.beta1[0]).abs() <= 1e-9 * (1.0 + a.beta1[0].abs()));
            }
        }
    }
}
