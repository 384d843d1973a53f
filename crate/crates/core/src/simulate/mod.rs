//! Time-varying autoregressions with exogenous covariates,
//!
//! ```text
//! y_i = sum_{j=1}^q a_j(i/n) y_{i-j} + z_i' gamma(i/n) + sigma(i/n) f(xi_i),
//! ```
//!
//! their frozen-coefficient stationary approximations `y_i(u)`, and the
//! companion-matrix stability check.
//!
//! Innovations are drawn from keyed streams (see [`rng`]) indexed by
//! absolute time, so `simulate_tvar` and `simulate_stationary_approx` with
//! the same seed share their noise and covariate innovations.

pub mod rng;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smoother::Dataset;
pub use rng::{subseed, NoiseDist, NoiseField};

/// Burn-in steps before the first recorded value of any path.
pub const BURN_IN: usize = 512;
/// Moving-average truncation lag for covariates.
pub const MA_TRUNCATION: usize = 100;
/// Required gap between the companion spectral radius and one.
pub const STABILITY_MARGIN: f64 = 1e-3;

/// Coefficient function of rescaled time, given as a named preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coef {
    Constant(f64),
    /// `a + b u`
    Linear { a: f64, b: f64 },
    /// `a + b sin(2 pi freq u)`
    Sine { a: f64, b: f64, freq: f64 },
}

impl Coef {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Coef::Constant(c) => c,
            Coef::Linear { a, b } => a + b * u,
            Coef::Sine { a, b, freq } => a + b * (2.0 * std::f64::consts::PI * freq * u).sin(),
        }
    }

    /// The value of the function when it does not depend on `u`.
    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Coef::Constant(c) => Some(c),
            Coef::Linear { a, b } if b == 0.0 => Some(a),
            Coef::Sine { a, b, freq } if b == 0.0 || freq == 0.0 => Some(a),
            _ => None,
        }
    }
}

/// One covariate component `z_{i,c}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    /// `z = 1`.
    Intercept,
    /// `z_i = scale(i/n) sum_{k=0}^{100} decay^k eta_{i-k}`.
    Geometric { scale: Coef, decay: f64 },
    /// `z_i = sum_k weights[k](i/n) eta_{i-k}`.
    Ma { weights: Vec<Coef> },
}

/// Data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    /// `a_1, ..., a_q`.
    #[serde(default)]
    pub ar: Vec<Coef>,
    /// `gamma_1, ..., gamma_d`, one per covariate.
    #[serde(default)]
    pub gamma: Vec<Coef>,
    #[serde(default)]
    pub covariates: Vec<Covariate>,
    /// Noise scale `sigma(u)`.
    pub sigma: Coef,
    #[serde(default)]
    pub noise: NoiseDist,
    /// Marks constant coordinates of `(a_1..a_q, gamma_1..gamma_d)`; these
    /// form `x1`, the rest form `x2`.
    pub stable_mask: Vec<bool>,
}

impl DgpSpec {
    pub fn q(&self) -> usize {
        self.ar.len()
    }

    pub fn d(&self) -> usize {
        self.covariates.len()
    }

    pub fn p(&self) -> usize {
        self.q() + self.d()
    }

    /// Coefficient functions in regressor order `(a_1..a_q, gamma_1..gamma_d)`.
    pub fn coefficients(&self) -> impl Iterator<Item = &Coef> {
        self.ar.iter().chain(self.gamma.iter())
    }

    pub fn stable_indices(&self) -> Vec<usize> {
        (0..self.p()).filter(|&k| self.stable_mask[k]).collect()
    }

    pub fn varying_indices(&self) -> Vec<usize> {
        (0..self.p()).filter(|&k| !self.stable_mask[k]).collect()
    }

    pub fn beta1(&self) -> Vec<f64> {
        let coefs: Vec<&Coef> = self.coefficients().collect();
        self.stable_indices()
            .iter()
            .map(|&k| coefs[k].constant_value().expect("validated"))
            .collect()
    }

    /// Structural checks that do not involve the stability sweep.
    pub fn validate_shape(&self) -> Result<()> {
        if self.gamma.len() != self.covariates.len() {
            return Err(Error::Config(format!(
                "{} gamma coefficients for {} covariates",
                self.gamma.len(),
                self.covariates.len()
            )));
        }
        if self.stable_mask.len() != self.p() {
            return Err(Error::Config(format!(
                "stable_mask has {} entries, expected q + d = {}",
                self.stable_mask.len(),
                self.p()
            )));
        }
        if !self.stable_mask.iter().any(|&s| s) {
            return Err(Error::Config("at least one stable coefficient required".into()));
        }
        let coefs: Vec<&Coef> = self.coefficients().collect();
        for k in self.stable_indices() {
            if coefs[k].constant_value().is_none() {
                return Err(Error::Config(format!(
                    "coefficient {k} is marked stable but is not constant"
                )));
            }
        }
        self.noise.validate()?;
        for (c, cov) in self.covariates.iter().enumerate() {
            match cov {
                Covariate::Geometric { decay, .. } if !(decay.abs() < 1.0) => {
                    return Err(Error::Config(format!(
                        "covariate {c}: geometric decay must satisfy |decay| < 1"
                    )));
                }
                Covariate::Ma { weights } if weights.is_empty() || weights.len() > MA_TRUNCATION + 1 => {
                    return Err(Error::Config(format!(
                        "covariate {c}: between 1 and {} MA weights required",
                        MA_TRUNCATION + 1
                    )));
                }
                _ => {}
            }
        }
        for k in 0..=100 {
            let u = k as f64 / 100.0;
            let s = self.sigma.eval(u);
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("sigma({u}) = {s} is negative")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        let report = validate_stability(self, 101)?;
        if !report.ok {
            return Err(Error::StabilityViolation {
                u: report.worst_u,
                radius: report.worst_radius,
            });
        }
        Ok(())
    }

    /// Parses and validates a TOML description.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: DgpSpec = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn ar_at(&self, u: f64) -> Vec<f64> {
        self.ar.iter().map(|a| a.eval(u)).collect()
    }
}

/// Companion matrix of `1 - sum_j a_j z^j`.
pub fn companion_matrix(a: &[f64]) -> DMatrix<f64> {
    let q = a.len();
    DMatrix::from_fn(q, q, |r, c| {
        if r == 0 {
            a[c]
        } else if c + 1 == r {
            1.0
        } else {
            0.0
        }
    })
}

pub fn spectral_radius(a: &[f64]) -> f64 {
    match a.len() {
        0 => 0.0,
        1 => a[0].abs(),
        _ => companion_matrix(a)
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub ok: bool,
    pub worst_u: f64,
    pub worst_radius: f64,
    /// `(u, radius)` for every grid point above `1 - STABILITY_MARGIN`.
    pub violations: Vec<(f64, f64)>,
}

/// Sweeps `u` over a uniform grid and checks the companion spectral radius.
pub fn validate_stability(spec: &DgpSpec, grid_size: usize) -> Result<StabilityReport> {
    if grid_size < 21 {
        return Err(Error::InvalidInput(format!(
            "stability grid needs at least 21 points, got {grid_size}"
        )));
    }
    let mut report = StabilityReport {
        ok: true,
        worst_u: 0.0,
        worst_radius: 0.0,
        violations: Vec::new(),
    };
    for k in 0..grid_size {
        let u = k as f64 / (grid_size - 1) as f64;
        let r = spectral_radius(&spec.ar_at(u));
        if r > report.worst_radius {
            report.worst_radius = r;
            report.worst_u = u;
        }
        if !(r <= 1.0 - STABILITY_MARGIN) {
            report.ok = false;
            report.violations.push((u, r));
        }
    }
    Ok(report)
}

/// Result of one simulated path.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub dataset: Dataset,
    pub beta1: Vec<f64>,
    /// `beta2(i/n)` (n x p2).
    pub beta2: DMatrix<f64>,
    /// Regression errors `e_i`.
    pub errors: DVector<f64>,
    pub seed: u64,
}

/// Covariate innovations over a time window, with the geometric components
/// pre-filtered.
struct CovariateState {
    t_lo: i64,
    /// Raw innovations starting at `t_lo - MA_TRUNCATION - 1`.
    eta: Vec<Vec<f64>>,
    /// Truncated geometric filters starting at `t_lo` (empty for other kinds).
    filtered: Vec<Vec<f64>>,
}

impl CovariateState {
    fn new(spec: &DgpSpec, seed: u64, t_lo: i64, t_hi: i64) -> Self {
        let lead = MA_TRUNCATION as i64 + 1;
        let len = (t_hi - t_lo + 1) as usize;
        let mut eta = Vec::with_capacity(spec.d());
        let mut filtered = Vec::with_capacity(spec.d());
        for (c, cov) in spec.covariates.iter().enumerate() {
            let field = NoiseField::new(seed, rng::STREAM_COVARIATE + c as u64, NoiseDist::Gaussian);
            let raw = field.window(t_lo - lead, len + lead as usize);
            let mut f = Vec::new();
            if let Covariate::Geometric { decay, .. } = *cov {
                f.reserve(len);
                let at = |t: i64| raw[(t - t_lo + lead) as usize];
                let mut m: f64 = (0..=MA_TRUNCATION as i64)
                    .map(|k| decay.powi(k as i32) * at(t_lo - k))
                    .sum();
                f.push(m);
                let tail = decay.powi(MA_TRUNCATION as i32 + 1);
                for t in (t_lo + 1)..=t_hi {
                    m = decay * m + at(t) - tail * at(t - lead);
                    f.push(m);
                }
            }
            eta.push(raw);
            filtered.push(f);
        }
        Self { t_lo, eta, filtered }
    }

    fn value(&self, spec: &DgpSpec, c: usize, t: i64, u: f64) -> f64 {
        match &spec.covariates[c] {
            Covariate::Intercept => 1.0,
            Covariate::Geometric { scale, .. } => scale.eval(u) * self.filtered[c][(t - self.t_lo) as usize],
            Covariate::Ma { weights } => {
                let lead = MA_TRUNCATION as i64 + 1;
                weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w.eval(u) * self.eta[c][(t - k as i64 - self.t_lo + lead) as usize])
                    .sum()
            }
        }
    }
}

/// Shared innovations of one seed over `[t_lo, t_hi]`.
struct Innovations {
    t_lo: i64,
    xi: Vec<f64>,
    cov: CovariateState,
}

impl Innovations {
    fn new(spec: &DgpSpec, seed: u64, t_lo: i64, t_hi: i64) -> Self {
        let len = (t_hi - t_lo + 1) as usize;
        let xi = NoiseField::new(seed, rng::STREAM_NOISE, spec.noise).window(t_lo, len);
        Self {
            t_lo,
            xi,
            cov: CovariateState::new(spec, seed, t_lo, t_hi),
        }
    }

    fn xi(&self, t: i64) -> f64 {
        self.xi[(t - self.t_lo) as usize]
    }
}

/// Coefficients frozen at one value of `u`.
struct Frozen {
    u: f64,
    a: Vec<f64>,
    gamma: Vec<f64>,
    sigma: f64,
}

impl Frozen {
    fn at(spec: &DgpSpec, u: f64) -> Self {
        Self {
            u,
            a: spec.ar_at(u),
            gamma: spec.gamma.iter().map(|g| g.eval(u)).collect(),
            sigma: spec.sigma.eval(u),
        }
    }
}

/// Runs the frozen recursion over `[t_start, t_end]` from zero initial values;
/// returns `y` over `[t_start - q, t_end]`.
fn frozen_path(spec: &DgpSpec, inn: &Innovations, fz: &Frozen, t_start: i64, t_end: i64) -> Vec<f64> {
    let q = spec.q();
    let len = (t_end - t_start + 1) as usize;
    let mut y = vec![0.0; q + len];
    for s in 0..len {
        let t = t_start + s as i64;
        let mut v = 0.0;
        for j in 0..q {
            v += fz.a[j] * y[q + s - 1 - j];
        }
        for c in 0..spec.d() {
            v += inn.cov.value(spec, c, t, fz.u) * fz.gamma[c];
        }
        v += fz.sigma * inn.xi(t);
        y[q + s] = v;
    }
    y
}

/// Splits the full regressor rows into the dataset and the truth.
fn assemble(
    spec: &DgpSpec,
    n: usize,
    x: DMatrix<f64>,
    y: DVector<f64>,
    errors: DVector<f64>,
    beta_at: impl Fn(usize) -> Vec<f64>,
    seed: u64,
) -> Result<SimOutput> {
    let stable = spec.stable_indices();
    let varying = spec.varying_indices();
    let x1 = DMatrix::from_fn(n, stable.len(), |r, c| x[(r, stable[c])]);
    let x2 = DMatrix::from_fn(n, varying.len(), |r, c| x[(r, varying[c])]);
    let mut beta2 = DMatrix::zeros(n, varying.len());
    for i in 0..n {
        let b = beta_at(i);
        for (c, &k) in varying.iter().enumerate() {
            beta2[(i, c)] = b[k];
        }
    }
    Ok(SimOutput {
        dataset: Dataset::new(y, x1, x2)?,
        beta1: spec.beta1(),
        beta2,
        errors,
        seed,
    })
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InsufficientData { n, needed: 1 });
    }
    Ok(())
}

/// Simulates `y_1..y_n` from the time-varying recursion. Pre-sample values
/// `y_t, t <= 0` are the stationary approximation at `u = 0`, obtained by a
/// [`BURN_IN`]-step run of the frozen recursion.
pub fn simulate_tvar(spec: &DgpSpec, n: usize, seed: u64) -> Result<SimOutput> {
    spec.validate()?;
    check_n(n)?;
    let q = spec.q();
    let burn = BURN_IN as i64;
    let inn = Innovations::new(spec, seed, 1 - burn, n as i64);
    let pre = frozen_path(spec, &inn, &Frozen::at(spec, 0.0), 1 - burn, 0);
    // y over [1 - q, n]; index t maps to t + q - 1
    let mut y = vec![0.0; q + n];
    y[..q].copy_from_slice(&pre[pre.len() - q..]);
    let mut x = DMatrix::zeros(n, spec.p());
    let mut errors = DVector::zeros(n);
    for i in 1..=n {
        let u = i as f64 / n as f64;
        let fz = Frozen::at(spec, u);
        let row = i - 1;
        let mut v = 0.0;
        for j in 0..q {
            let lag = y[q + i - 2 - j];
            x[(row, j)] = lag;
            v += fz.a[j] * lag;
        }
        for c in 0..spec.d() {
            let z = inn.cov.value(spec, c, i as i64, u);
            x[(row, q + c)] = z;
            v += z * fz.gamma[c];
        }
        let e = fz.sigma * inn.xi(i as i64);
        errors[row] = e;
        y[q + i - 1] = v + e;
    }
    let yv = DVector::from_vec(y[q..].to_vec());
    assemble(
        spec,
        n,
        x,
        yv,
        errors,
        |i| {
            let u = (i + 1) as f64 / n as f64;
            spec.coefficients().map(|c| c.eval(u)).collect()
        },
        seed,
    )
}

/// Stationary approximation `y_1(u), ..., y_n(u)` sharing the innovations of
/// `simulate_tvar(spec, n, seed)`.
pub fn simulate_stationary_approx(spec: &DgpSpec, u: f64, n: usize, seed: u64) -> Result<SimOutput> {
    spec.validate_shape()?;
    check_n(n)?;
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidInput(format!("u = {u} outside [0, 1]")));
    }
    let radius = spectral_radius(&spec.ar_at(u));
    if !(radius <= 1.0 - STABILITY_MARGIN) {
        return Err(Error::StabilityViolation { u, radius });
    }
    let q = spec.q();
    let burn = BURN_IN as i64;
    let inn = Innovations::new(spec, seed, 1 - burn, n as i64);
    let fz = Frozen::at(spec, u);
    let path = frozen_path(spec, &inn, &fz, 1 - burn, n as i64);
    // path index of time t is t - (1 - burn) + q
    let idx = |t: i64| (t - (1 - burn)) as usize + q;
    let mut x = DMatrix::zeros(n, spec.p());
    let mut errors = DVector::zeros(n);
    let mut yv = DVector::zeros(n);
    for i in 1..=n as i64 {
        let row = (i - 1) as usize;
        for j in 0..q {
            x[(row, j)] = path[idx(i) - 1 - j];
        }
        for c in 0..spec.d() {
            x[(row, q + c)] = inn.cov.value(spec, c, i, u);
        }
        errors[row] = fz.sigma * inn.xi(i);
        yv[row] = path[idx(i)];
    }
    let beta: Vec<f64> = spec.coefficients().map(|c| c.eval(u)).collect();
    assemble(spec, n, x, yv, errors, |_| beta.clone(), seed)
}

/// Covariates `z_1..z_n` (n x d). With `time_varying = false` the MA weights
/// are frozen at `u = 0`.
pub fn simulate_covariates(spec: &DgpSpec, n: usize, seed: u64, time_varying: bool) -> Result<DMatrix<f64>> {
    spec.validate_shape()?;
    check_n(n)?;
    let state = CovariateState::new(spec, seed, 1, n as i64);
    Ok(DMatrix::from_fn(n, spec.d(), |r, c| {
        let t = r as i64 + 1;
        let u = if time_varying { t as f64 / n as f64 } else { 0.0 };
        state.value(spec, c, t, u)
    }))
}

/// `max_{i <= n} |y_i - y_i(i/n)|` for the coupled pair of paths.
pub fn coupling_gap(spec: &DgpSpec, n: usize, seed: u64) -> Result<f64> {
    let tv = simulate_tvar(spec, n, seed)?;
    let burn = BURN_IN as i64;
    let inn = Innovations::new(spec, seed, 1 - burn, n as i64);
    let mut worst: f64 = 0.0;
    for i in 1..=n as i64 {
        let fz = Frozen::at(spec, i as f64 / n as f64);
        let path = frozen_path(spec, &inn, &fz, i - burn + 1, i);
        let yi_u = *path.last().expect("non-empty path");
        worst = worst.max((tv.dataset.y[(i - 1) as usize] - yi_u).abs());
    }
    Ok(worst)
}

/// Per-path output of [`stationary_paths`]: full regressor rows and errors.
pub(crate) struct FrozenSample {
    /// Row-major `len x p` regressors in `(a-lags, covariates)` order.
    pub x: Vec<f64>,
    pub e: Vec<f64>,
}

/// Stationary paths of length `len` at every `u` in `grid`, all driven by the
/// innovations of `seed` (common random numbers across `u`).
pub(crate) fn stationary_paths(spec: &DgpSpec, grid: &[f64], len: usize, seed: u64) -> Vec<FrozenSample> {
    let q = spec.q();
    let p = spec.p();
    let burn = BURN_IN as i64;
    let inn = Innovations::new(spec, seed, 1 - burn, len as i64);
    grid.iter()
        .map(|&u| {
            let fz = Frozen::at(spec, u);
            let path = frozen_path(spec, &inn, &fz, 1 - burn, len as i64);
            let idx = |t: i64| (t - (1 - burn)) as usize + q;
            let mut x = vec![0.0; len * p];
            let mut e = vec![0.0; len];
            for i in 1..=len as i64 {
                let row = (i - 1) as usize;
                for j in 0..q {
                    x[row * p + j] = path[idx(i) - 1 - j];
                }
                for c in 0..spec.d() {
                    x[row * p + q + c] = inn.cov.value(spec, c, i, u);
                }
                e[row] = fz.sigma * inn.xi(i);
            }
            FrozenSample { x, e }
        })
        .collect()
}
