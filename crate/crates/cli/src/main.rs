use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tvstable::asymptotics::{theoretical_matrices, DEFAULT_GRID_SIZE};
use tvstable::estimators::{Beta2Method, EstimatorKind};
use tvstable::harness::io::{read_json, write_json};
use tvstable::harness::{
    load_csv, run_fit, run_mc_consistency, run_mc_coverage, run_mc_efficiency, save_csv,
    AsymptoticsDocument, ErrorDocument, ExperimentConfig, FitConfig, FitDocument, McReport, Truth,
};
use tvstable::simulate::{simulate_tvar, DgpSpec};
use tvstable::{BandwidthSpec, Error, KernelSpec};

const BANDWIDTH_HELP: &str = "Bandwidth: a number in (0, 0.5] or rule:C:EXPONENT for b = C n^-EXPONENT \
(default rule:1:0.3333). For the optimal two-stage estimator set this explicitly: the variance \
pilot and the weighted stage share it, and the default rate is tuned for the partial-regression \
estimators.";

#[derive(Parser)]
#[command(name = "tvstable", version, about = "Root-n estimation of constant coefficients in time-varying regressions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a DGP config; writes CSV and a truth sidecar.
    Simulate(SimulateArgs),
    /// Fit a dataset read from CSV; writes a JSON result document.
    Fit(FitArgs),
    /// Monte Carlo RMSE and rate check over a grid of sample sizes.
    McConsistency(McArgs),
    /// Monte Carlo comparison of the optimal, partial and averaging estimators.
    McEfficiency(McArgs),
    /// Monte Carlo coverage of the confidence intervals.
    McCoverage(McArgs),
    /// Population matrices of a DGP by Monte Carlo integration.
    Asymptotics(AsymptoticsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// DGP config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Sample size.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Truth sidecar path (default: <out>.truth.json).
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV with columns y, x1_1.., x2_1...
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "partial_nw")]
    estimator: EstimatorKind,
    #[arg(long, help = BANDWIDTH_HELP)]
    bandwidth: Option<BandwidthSpec>,
    #[arg(long, default_value = "epanechnikov")]
    kernel: KernelSpec,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Bartlett lag of the long-run covariance (default floor(n^(1/3))).
    #[arg(long)]
    hac_lag: Option<usize>,
    /// Estimate the beta2 path by a local refit instead of plug-in.
    #[arg(long)]
    refit_beta2: bool,
    /// JSON array of row weights for the weighted estimator.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Recorded in the result document.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, help = BANDWIDTH_HELP)]
    bandwidth: Option<BandwidthSpec>,
    #[arg(long)]
    kernel: Option<KernelSpec>,
    /// Replace the configured estimator list with a single estimator.
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores); never changes the report.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    /// Report path; `.csv` selects the tabular summary, anything else JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional path for per-estimator mean runtimes (JSON).
    #[arg(long)]
    timing: Option<PathBuf>,
}

#[derive(Args)]
struct AsymptoticsArgs {
    /// DGP config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 500)]
    mc_paths: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    grid_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("document serializes");
    s.push('\n');
    s
}

fn simulate(a: SimulateArgs) -> Result<(), Error> {
    let spec = DgpSpec::load(&a.config)?;
    let sim = simulate_tvar(&spec, a.n, a.seed)?;
    save_csv(&sim.dataset, &a.out)?;
    let truth = a.truth.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".truth.json");
        PathBuf::from(p)
    });
    write_json(&Truth::from_sim(&sim, &spec), truth)
}

fn fit(a: FitArgs) -> Result<(), Error> {
    let d = load_csv(&a.data)?;
    let mut cfg = FitConfig::new(a.estimator, a.bandwidth.unwrap_or_default());
    cfg.kernel = a.kernel;
    cfg.level = a.level;
    cfg.hac_lag = a.hac_lag;
    cfg.seed = a.seed;
    if a.refit_beta2 {
        cfg.beta2_method = Beta2Method::LocalRefit;
    }
    if let Some(p) = &a.weights {
        cfg.weights = Some(read_json(p)?);
    }
    let result = run_fit(&d, &cfg)?;
    emit(&to_json(&FitDocument::new(&d, &cfg, &result)), a.out.as_deref())
}

fn mc(a: McArgs, driver: fn(&ExperimentConfig) -> tvstable::Result<McReport>) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(b) = a.bandwidth {
        cfg.bandwidth = b;
    }
    if let Some(k) = a.kernel {
        cfg.kernel = k;
    }
    if let Some(e) = a.estimator {
        cfg.estimators = vec![e];
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    if let Some(l) = a.level {
        cfg.level = l;
    }
    cfg.validate()?;
    let report = driver(&cfg)?;
    let csv = a.out.as_deref().is_some_and(|p| p.extension().is_some_and(|e| e == "csv"));
    let text = if csv { report.to_csv() } else { report.to_json() };
    emit(&text, a.out.as_deref())?;
    if let Some(t) = &a.timing {
        std::fs::write(t, report.timing_json())?;
    }
    Ok(())
}

fn asymptotics(a: AsymptoticsArgs) -> Result<(), Error> {
    let spec = DgpSpec::load(&a.config)?;
    if a.workers == Some(0) {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let m = pool.install(|| theoretical_matrices(&spec, a.mc_paths, a.grid_size, a.seed))?;
    emit(&to_json(&AsymptoticsDocument::new(&m, a.seed)?), a.out.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::McConsistency(a) => mc(a, run_mc_consistency),
        Command::McEfficiency(a) => mc(a, run_mc_efficiency),
        Command::McCoverage(a) => mc(a, run_mc_coverage),
        Command::Asymptotics(a) => asymptotics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprint!("{}", to_json(&ErrorDocument::from(&e)));
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
