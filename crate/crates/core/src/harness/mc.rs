//! Monte Carlo drivers.
//!
//! Replication `r` simulates from `subseed(seed, r)` and fits every selected
//! estimator on the same path. Results are collected in replication order and
//! aggregated sequentially, so reports do not depend on the worker count.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimators::{fit_by_kind, EstimatorKind};
use crate::linalg::to_rows;
use crate::simulate::{simulate_tvar, subseed};

/// Summary of one estimator at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub bias: Vec<f64>,
    pub rmse: Vec<f64>,
    /// Empirical covariance of `sqrt(n) (beta1_hat - beta1)`.
    pub emp_cov: Vec<Vec<f64>>,
    pub trace: f64,
    pub coverage: Vec<f64>,
    pub mean_ci_width: Vec<f64>,
    pub config_hash: String,
}

/// `RMSE(n_small) / RMSE(n_large)` per coordinate and for the whole vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub estimator: EstimatorKind,
    pub n_small: usize,
    pub n_large: usize,
    pub ratio: Vec<f64>,
    pub ratio_total: f64,
    /// `sqrt(n_large / n_small)`, the ratio expected at the root-n rate.
    pub expected: f64,
}

/// `trace(upper) - trace(lower)` with a batch standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingGap {
    pub lower: EstimatorKind,
    pub upper: EstimatorKind,
    pub trace_lower: f64,
    pub trace_upper: f64,
    pub gap: f64,
    pub se: f64,
    /// `gap > -3 se`: the ordering is not contradicted.
    pub within_margin: bool,
    /// `gap > 3 se`: the ordering is resolved.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyVerdict {
    pub n: usize,
    /// Replications where every compared estimator succeeded.
    pub paired: usize,
    pub batches: usize,
    pub gaps: Vec<OrderingGap>,
    pub holds: bool,
    pub holds_strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub replication: usize,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub mean_runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub level: f64,
    pub rows: Vec<McRow>,
    pub rates: Vec<RateRow>,
    pub verdicts: Vec<EfficiencyVerdict>,
    pub failures: Vec<FailureRecord>,
    /// Wall-clock timings; kept out of the serialized report so that reruns
    /// compare byte for byte.
    #[serde(skip)]
    pub timing: Vec<TimingRow>,
}

impl McReport {
    pub fn row(&self, estimator: EstimatorKind, n: usize) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.n == n)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn timing_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.timing).expect("timing serializes");
        s.push('\n');
        s
    }

    /// One line per (estimator, n, coordinate).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "config_hash,experiment,estimator,n,replications,failures,coord,bias,rmse,emp_var,trace,coverage,mean_ci_width\n",
        );
        for r in &self.rows {
            for k in 0..r.bias.len() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.config_hash,
                    self.experiment,
                    r.estimator.name(),
                    r.n,
                    r.replications,
                    r.failures,
                    k + 1,
                    r.bias[k],
                    r.rmse[k],
                    r.emp_cov[k][k],
                    r.trace,
                    r.coverage[k],
                    r.mean_ci_width[k],
                );
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
struct Draw {
    estimate: Vec<f64>,
    covered: Vec<bool>,
    widths: Vec<f64>,
}

struct Replication {
    outcomes: Vec<std::result::Result<Draw, (String, String)>>,
    secs: Vec<f64>,
}

fn replicate(cfg: &ExperimentConfig, n: usize, r: usize) -> Replication {
    let k = cfg.estimators.len();
    let sim = cfg
        .fit_options(n)
        .and_then(|opts| simulate_tvar(&cfg.dgp, n, subseed(cfg.seed, r as u64)).map(|s| (opts, s)));
    let (opts, sim) = match sim {
        Ok(v) => v,
        Err(e) => {
            let fail = (e.code().to_string(), e.to_string());
            return Replication {
                outcomes: vec![Err(fail); k],
                secs: vec![0.0; k],
            };
        }
    };
    let mut outcomes = Vec::with_capacity(k);
    let mut secs = Vec::with_capacity(k);
    for &kind in &cfg.estimators {
        let start = Instant::now();
        let res = fit_by_kind(&sim.dataset, &opts, kind, None);
        secs.push(start.elapsed().as_secs_f64());
        outcomes.push(match res {
            Ok(fit) => Ok(Draw {
                estimate: fit.beta1.iter().copied().collect(),
                covered: fit.covers(&sim.beta1),
                widths: fit.ci.iter().map(|c| c.width()).collect(),
            }),
            Err(e) => Err((e.code().to_string(), e.to_string())),
        });
    }
    Replication { outcomes, secs }
}

/// Empirical covariance of `sqrt(n) (estimate - truth)` (divisor `m - 1`,
/// zero for a single draw).
fn scaled_cov(draws: &[&Draw], n: usize, p1: usize) -> DMatrix<f64> {
    let m = draws.len();
    if m < 2 {
        return DMatrix::zeros(p1, p1);
    }
    let mean: Vec<f64> = (0..p1)
        .map(|a| draws.iter().map(|d| d.estimate[a]).sum::<f64>() / m as f64)
        .collect();
    let mut c = DMatrix::zeros(p1, p1);
    for d in draws {
        for a in 0..p1 {
            for b in 0..p1 {
                c[(a, b)] += (d.estimate[a] - mean[a]) * (d.estimate[b] - mean[b]);
            }
        }
    }
    c * (n as f64 / (m - 1) as f64)
}

fn summarize(
    cfg: &ExperimentConfig,
    hash: &str,
    n: usize,
    kind: EstimatorKind,
    draws: &[&Draw],
    failures: usize,
) -> McRow {
    let truth = cfg.dgp.beta1();
    let p1 = truth.len();
    let m = draws.len();
    let denom = m.max(1) as f64;
    let bias: Vec<f64> = (0..p1)
        .map(|a| draws.iter().map(|d| d.estimate[a] - truth[a]).sum::<f64>() / denom)
        .collect();
    let rmse: Vec<f64> = (0..p1)
        .map(|a| (draws.iter().map(|d| (d.estimate[a] - truth[a]).powi(2)).sum::<f64>() / denom).sqrt())
        .collect();
    let coverage: Vec<f64> = (0..p1)
        .map(|a| draws.iter().filter(|d| d.covered[a]).count() as f64 / denom)
        .collect();
    let mean_ci_width: Vec<f64> = (0..p1)
        .map(|a| draws.iter().map(|d| d.widths[a]).sum::<f64>() / denom)
        .collect();
    let cov = scaled_cov(draws, n, p1);
    McRow {
        estimator: kind,
        n,
        replications: cfg.replications,
        failures,
        bias,
        rmse,
        trace: cov.trace(),
        emp_cov: to_rows(&cov),
        coverage,
        mean_ci_width,
        config_hash: hash.to_string(),
    }
}

fn ordering_gap(
    n: usize,
    lower: EstimatorKind,
    upper: EstimatorKind,
    lo: &[&Draw],
    up: &[&Draw],
    batches: usize,
    p1: usize,
) -> OrderingGap {
    let trace_lower = scaled_cov(lo, n, p1).trace();
    let trace_upper = scaled_cov(up, n, p1).trace();
    let m = lo.len();
    let mut diffs = Vec::with_capacity(batches);
    for b in 0..batches {
        let (s, e) = (b * m / batches, (b + 1) * m / batches);
        if e - s < 2 {
            continue;
        }
        diffs.push(scaled_cov(&up[s..e], n, p1).trace() - scaled_cov(&lo[s..e], n, p1).trace());
    }
    let k = diffs.len();
    let se = if k >= 2 {
        let mean = diffs.iter().sum::<f64>() / k as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    } else {
        f64::INFINITY
    };
    let gap = trace_upper - trace_lower;
    OrderingGap {
        lower,
        upper,
        trace_lower,
        trace_upper,
        gap,
        se,
        within_margin: gap > -3.0 * se,
        strict: gap > 3.0 * se,
    }
}

struct RunData {
    report: McReport,
    /// `draws[n_index][estimator_index][replication]`
    draws: Vec<Vec<Vec<Option<Draw>>>>,
}

fn run(cfg: &ExperimentConfig, experiment: &str) -> Result<RunData> {
    cfg.validate()?;
    let pool = cfg.thread_pool()?;
    let hash = cfg.hash();
    let mut report = McReport {
        experiment: experiment.into(),
        config_hash: hash.clone(),
        seed: cfg.seed,
        level: cfg.level,
        rows: Vec::new(),
        rates: Vec::new(),
        verdicts: Vec::new(),
        failures: Vec::new(),
        timing: Vec::new(),
    };
    let mut all = Vec::with_capacity(cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let reps: Vec<Replication> =
            pool.install(|| (0..cfg.replications).into_par_iter().map(|r| replicate(cfg, n, r)).collect());
        let mut per_kind = Vec::with_capacity(cfg.estimators.len());
        for (k, &kind) in cfg.estimators.iter().enumerate() {
            let mut draws = Vec::with_capacity(reps.len());
            let mut failed = 0;
            let mut secs = 0.0;
            for (r, rep) in reps.iter().enumerate() {
                secs += rep.secs[k];
                match &rep.outcomes[k] {
                    Ok(d) => draws.push(Some(d.clone())),
                    Err((code, message)) => {
                        failed += 1;
                        report.failures.push(FailureRecord {
                            estimator: kind,
                            n,
                            replication: r,
                            code: code.clone(),
                            message: message.clone(),
                        });
                        draws.push(None);
                    }
                }
            }
            if failed * 100 > cfg.replications {
                let first = report
                    .failures
                    .iter()
                    .find(|f| f.estimator == kind && f.n == n)
                    .map(|f| format!("replication {}: {}", f.replication, f.message))
                    .unwrap_or_default();
                return Err(Error::ReplicationBudget {
                    failed,
                    total: cfg.replications,
                    first,
                });
            }
            let ok: Vec<&Draw> = draws.iter().flatten().collect();
            report.rows.push(summarize(cfg, &hash, n, kind, &ok, failed));
            report.timing.push(TimingRow {
                estimator: kind,
                n,
                mean_runtime_secs: secs / cfg.replications as f64,
            });
            per_kind.push(draws);
        }
        all.push(per_kind);
    }
    Ok(RunData { report, draws: all })
}

/// Bias, RMSE and empirical covariance per sample size, with RMSE ratios
/// between consecutive sample sizes.
pub fn run_mc_consistency(cfg: &ExperimentConfig) -> Result<McReport> {
    if cfg.n_grid.len() < 2 {
        return Err(Error::Config("consistency runs need at least two sample sizes".into()));
    }
    let mut report = run(cfg, "consistency")?.report;
    for &kind in &cfg.estimators {
        for w in cfg.n_grid.windows(2) {
            let (a, b) = (report.row(kind, w[0]).unwrap(), report.row(kind, w[1]).unwrap());
            let ratio = a.rmse.iter().zip(&b.rmse).map(|(x, y)| x / y).collect();
            let total = |r: &McRow| r.rmse.iter().map(|v| v * v).sum::<f64>().sqrt();
            report.rates.push(RateRow {
                estimator: kind,
                n_small: w[0],
                n_large: w[1],
                ratio,
                ratio_total: total(a) / total(b),
                expected: (w[1] as f64 / w[0] as f64).sqrt(),
            });
        }
    }
    Ok(report)
}

/// Compares traces of the empirical covariances along
/// `Optimal <= PartialNw <= Average`.
pub fn run_mc_efficiency(cfg: &ExperimentConfig) -> Result<McReport> {
    let chain = [EstimatorKind::Optimal, EstimatorKind::PartialNw, EstimatorKind::Average];
    let idx: Vec<usize> = chain
        .iter()
        .map(|k| {
            cfg.estimators.iter().position(|e| e == k).ok_or_else(|| {
                Error::Config("efficiency runs need the optimal, partial_nw and average estimators".into())
            })
        })
        .collect::<Result<_>>()?;
    if cfg.batches < 2 {
        return Err(Error::Config("efficiency runs need at least two batches".into()));
    }
    let RunData { mut report, draws } = run(cfg, "efficiency")?;
    let p1 = cfg.dgp.beta1().len();
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        let paired: Vec<usize> = (0..cfg.replications)
            .filter(|&r| idx.iter().all(|&k| draws[ni][k][r].is_some()))
            .collect();
        let pick = |k: usize| -> Vec<&Draw> {
            paired.iter().map(|&r| draws[ni][k][r].as_ref().unwrap()).collect()
        };
        let sets: Vec<Vec<&Draw>> = idx.iter().map(|&k| pick(k)).collect();
        let gaps: Vec<OrderingGap> = (0..2)
            .map(|j| ordering_gap(n, chain[j], chain[j + 1], &sets[j], &sets[j + 1], cfg.batches, p1))
            .collect();
        report.verdicts.push(EfficiencyVerdict {
            n,
            paired: paired.len(),
            batches: cfg.batches,
            holds: gaps.iter().all(|g| g.within_margin),
            holds_strict: gaps.iter().all(|g| g.strict),
            gaps,
        });
    }
    Ok(report)
}

/// Coverage of the per-coordinate confidence intervals.
pub fn run_mc_coverage(cfg: &ExperimentConfig) -> Result<McReport> {
    if !(cfg.level > 0.5 && cfg.level < 1.0) {
        return Err(Error::Config(format!("coverage level {} outside (0.5, 1)", cfg.level)));
    }
    Ok(run(cfg, "coverage")?.report)
}
