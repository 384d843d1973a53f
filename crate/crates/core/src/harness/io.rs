//! CSV datasets, truth sidecars and JSON result documents.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{AsymptoticMatrices, Interval};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_beta1_optimal_with_path, fit_beta2_path, fit_by_kind, Beta1Fit, Beta2Method, Beta2Path,
    Diagnostics, EstimatorKind, FitOptions, SigmaPath,
};
use crate::kernel::{BandwidthSpec, KernelSpec};
use crate::linalg::to_rows;
use crate::simulate::{DgpSpec, SimOutput};
use crate::smoother::{Dataset, Ridge, SmootherMethod};

#[derive(Debug, PartialEq, Eq, Clone, Copy)]
enum Column {
    Y,
    X1(usize),
    X2(usize),
}

fn classify(name: &str) -> Option<Column> {
    let name = name.trim();
    if name == "y" {
        return Some(Column::Y);
    }
    let idx = |rest: &str| rest.parse::<usize>().ok().filter(|&k| k >= 1);
    if let Some(rest) = name.strip_prefix("x1_") {
        return idx(rest).map(Column::X1);
    }
    if let Some(rest) = name.strip_prefix("x2_") {
        return idx(rest).map(Column::X2);
    }
    None
}

fn column_count(cols: &[Column], pick: impl Fn(Column) -> Option<usize>, label: &str) -> Result<usize> {
    let mut ks: Vec<usize> = cols.iter().filter_map(|&c| pick(c)).collect();
    ks.sort_unstable();
    for (pos, &k) in ks.iter().enumerate() {
        if k != pos + 1 {
            return Err(Error::Schema(format!(
                "{label} columns must be numbered 1..{} without gaps or repeats",
                ks.len()
            )));
        }
    }
    Ok(ks.len())
}

/// Reads a dataset from CSV text with header `y, x1_1.., x2_1..` in any
/// column order. Rows are kept in file (time) order.
pub fn read_csv(reader: impl Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let mut cols = Vec::with_capacity(headers.len());
    for h in headers.iter() {
        cols.push(classify(h).ok_or_else(|| Error::Schema(format!("unrecognized column '{h}'")))?);
    }
    if cols.iter().filter(|&&c| c == Column::Y).count() != 1 {
        return Err(Error::Schema("exactly one 'y' column required".into()));
    }
    let p1 = column_count(&cols, |c| if let Column::X1(k) = c { Some(k) } else { None }, "x1")?;
    let p2 = column_count(&cols, |c| if let Column::X2(k) = c { Some(k) } else { None }, "x2")?;
    if p1 == 0 {
        return Err(Error::Schema("no x1 columns".into()));
    }

    let mut y = Vec::new();
    let mut x1 = Vec::new();
    let mut x2 = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut row1 = vec![0.0; p1];
        let mut row2 = vec![0.0; p2];
        for (field, col) in rec.iter().zip(&cols) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("malformed number '{field}'"),
            })?;
            match *col {
                Column::Y => y.push(v),
                Column::X1(k) => row1[k - 1] = v,
                Column::X2(k) => row2[k - 1] = v,
            }
        }
        x1.extend(row1);
        x2.extend(row2);
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::InsufficientData { n: 0, needed: 1 });
    }
    Dataset::new(
        DVector::from_vec(y),
        DMatrix::from_row_slice(n, p1, &x1),
        DMatrix::from_row_slice(n, p2, &x2),
    )
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?)
}

/// Writes `y, x1_1.., x2_1..` with shortest round-trip float formatting.
pub fn write_csv(d: &Dataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["y".to_string()];
    header.extend((1..=d.p1()).map(|k| format!("x1_{k}")));
    header.extend((1..=d.p2()).map(|k| format!("x2_{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..d.n() {
        let mut row = vec![d.y[i].to_string()];
        row.extend((0..d.p1()).map(|c| d.x1[(i, c)].to_string()));
        row.extend((0..d.p2()).map(|c| d.x2[(i, c)].to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv(d, std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// True coefficients of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub n: usize,
    pub beta1: Vec<f64>,
    /// Row `i` is `beta2(i/n)'`.
    pub beta2: Vec<Vec<f64>>,
    pub dgp: DgpSpec,
}

impl Truth {
    pub fn from_sim(sim: &SimOutput, dgp: &DgpSpec) -> Self {
        Self {
            seed: sim.seed,
            n: sim.dataset.n(),
            beta1: sim.beta1.clone(),
            beta2: to_rows(&sim.beta2),
            dgp: dgp.clone(),
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let s = std::fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Settings of a single fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub estimator: EstimatorKind,
    pub bandwidth: BandwidthSpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub ridge: Ridge,
    pub level: f64,
    #[serde(default)]
    pub hac_lag: Option<usize>,
    #[serde(default)]
    pub beta2_method: Beta2Method,
    /// Row weights for the weighted estimator.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Recorded in the result document; the fit itself is deterministic.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl FitConfig {
    pub fn new(estimator: EstimatorKind, bandwidth: BandwidthSpec) -> Self {
        Self {
            estimator,
            bandwidth,
            kernel: KernelSpec::default(),
            ridge: Ridge::default(),
            level: 0.95,
            hac_lag: None,
            beta2_method: Beta2Method::default(),
            weights: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub fit: Beta1Fit,
    pub beta2: Beta2Path,
    pub sigma: Option<SigmaPath>,
}

/// Fits `beta1`, then the `beta2` path by plug-in (or refit), and for the
/// two-stage estimator also reports the variance path.
pub fn run_fit(d: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::InvalidInput(format!("level {} outside (0, 1)", cfg.level)));
    }
    let b = cfg.bandwidth.resolve(d.n())?;
    let opts = FitOptions::new(b)
        .with_kernel(cfg.kernel)
        .with_ridge(cfg.ridge)
        .with_level(cfg.level)
        .with_hac_lag(cfg.hac_lag);
    let (fit, sigma) = match cfg.estimator {
        EstimatorKind::Optimal => {
            let (fit, sigma) = fit_beta1_optimal_with_path(d, &opts, None)?;
            (fit, Some(sigma))
        }
        kind => (fit_by_kind(d, &opts, kind, cfg.weights.as_deref())?, None),
    };
    let method = match cfg.estimator {
        EstimatorKind::PartialLl => SmootherMethod::LocalLinear,
        _ => SmootherMethod::NadarayaWatson,
    };
    let beta2 = fit_beta2_path(d, &opts, &fit.beta1, method, cfg.beta2_method)?;
    Ok(FitResult { fit, beta2, sigma })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub status: String,
    pub estimator: EstimatorKind,
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    pub beta1: Vec<f64>,
    /// Estimated covariance of `beta1_hat`.
    pub cov: Vec<Vec<f64>>,
    pub ci: Vec<Interval>,
    pub level: f64,
    pub b_used: f64,
    pub kernel: KernelSpec,
    pub seed: Option<u64>,
    pub diagnostics: Diagnostics,
    /// `i/n` for each row of `beta2`.
    pub u: Vec<f64>,
    pub beta2: Vec<Vec<f64>>,
    pub sigma2: Option<Vec<f64>>,
}

impl FitDocument {
    pub fn new(d: &Dataset, cfg: &FitConfig, r: &FitResult) -> Self {
        let n = d.n();
        Self {
            status: "ok".into(),
            estimator: cfg.estimator,
            n,
            p1: d.p1(),
            p2: d.p2(),
            beta1: r.fit.beta1.iter().copied().collect(),
            cov: to_rows(&r.fit.cov),
            ci: r.fit.ci.clone(),
            level: r.fit.level,
            b_used: r.fit.b_used,
            kernel: cfg.kernel,
            seed: cfg.seed,
            diagnostics: r.fit.diagnostics.clone(),
            u: (1..=n).map(|i| i as f64 / n as f64).collect(),
            beta2: to_rows(&r.beta2.values),
            sigma2: r.sigma.as_ref().map(|s| s.values.clone()),
        }
    }
}

/// Machine-readable failure report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDocument {
    pub status: String,
    pub code: String,
    pub message: String,
}

impl From<&Error> for ErrorDocument {
    fn from(e: &Error) -> Self {
        Self {
            status: "error".into(),
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsDocument {
    pub sigma1: Vec<Vec<f64>>,
    pub sigma2: Vec<Vec<f64>>,
    pub sigma_star: Vec<Vec<f64>>,
    pub s_zw: Vec<Vec<f64>>,
    /// `Sigma1^-1 Sigma2 Sigma1^-1`.
    pub partial_variance: Vec<Vec<f64>>,
    /// `(Sigma*)^-1`.
    pub optimal_variance: Vec<Vec<f64>>,
    pub hac_lag: usize,
    pub grid_size: usize,
    pub mc_paths: usize,
    pub seed: u64,
}

impl AsymptoticsDocument {
    pub fn new(m: &AsymptoticMatrices, seed: u64) -> Result<Self> {
        Ok(Self {
            sigma1: to_rows(&m.sigma1),
            sigma2: to_rows(&m.sigma2),
            sigma_star: to_rows(&m.sigma_star),
            s_zw: to_rows(&m.s_zw),
            partial_variance: to_rows(&m.partial_variance()?),
            optimal_variance: to_rows(&m.optimal_variance()?),
            hac_lag: m.hac_lag,
            grid_size: m.grid_size,
            mc_paths: m.mc_paths,
            seed,
        })
    }
}
