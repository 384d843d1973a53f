//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits non-zero on failure only when
//! ACCEPTANCE_STRICT=1. Positional arguments select criteria, e.g. `3 6b`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use tvstable::asymptotics::{
    check_integral_inverse_inequality, estimate_sigma2_hac, loewner_leq, theoretical_matrices,
    AsymptoticMatrices, DEFAULT_GRID_SIZE,
};
use tvstable::estimators::{
    fit_beta1, fit_beta1_average, fit_beta1_optimal, fit_beta1_weighted, fit_beta2_path, Beta2Method,
    EstimatorKind, FitOptions,
};
use tvstable::harness::{run_mc_consistency, run_mc_coverage, run_mc_efficiency, ExperimentConfig};
use tvstable::linalg::{min_eigenvalue, operator_norm, symmetrize};
use tvstable::simulate::{coupling_gap, NoiseField};
use tvstable::{BandwidthSpec, Coef, Covariate, Dataset, DgpSpec, KernelSpec, NoiseDist, Ridge, SmootherMethod};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// tvAR(1) with a1(u) = 0.3 + 0.2 sin(2 pi u), one geometric covariate with
/// constant coefficient 1.5, iid Gaussian noise.
fn reference_dgp() -> DgpSpec {
    DgpSpec {
        ar: vec![Coef::Sine { a: 0.3, b: 0.2, freq: 1.0 }],
        gamma: vec![Coef::Constant(1.5)],
        covariates: vec![Covariate::Geometric { scale: Coef::Constant(1.0), decay: 0.5 }],
        sigma: Coef::Constant(1.0),
        noise: NoiseDist::Gaussian,
        stable_mask: vec![false, true],
    }
}

/// Same dynamics with sigma(u) = 0.5 + u and a covariate whose scale falls
/// as the noise rises.
fn heteroscedastic_dgp() -> DgpSpec {
    DgpSpec {
        covariates: vec![Covariate::Geometric { scale: Coef::Linear { a: 1.5, b: -1.0 }, decay: 0.0 }],
        sigma: Coef::Linear { a: 0.5, b: 1.0 },
        ..reference_dgp()
    }
}

fn experiment(dgp: DgpSpec, n_grid: Vec<usize>, replications: usize, estimators: Vec<EstimatorKind>) -> ExperimentConfig {
    ExperimentConfig {
        dgp,
        n_grid,
        replications,
        bandwidth: BandwidthSpec::default(),
        estimators,
        level: 0.95,
        seed: 20240917,
        workers: None,
        kernel: KernelSpec::Epanechnikov,
        ridge: Ridge::InverseN,
        batches: 20,
    }
}

/// Deterministic uniform(-0.5, 0.5) stream for fixtures.
fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed;
    move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    }
}

fn criterion_1() -> Outcome {
    let n = 200;
    let mut r = lcg(11);
    let x1 = DMatrix::from_fn(n, 2, |_, _| 2.0 * r());
    let x2 = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { 1.0 + r() });
    let (b1, b2) = ([0.7, -1.3], [0.4, 2.0]);
    let y = DVector::from_fn(n, |i, _| {
        x1[(i, 0)] * b1[0] + x1[(i, 1)] * b1[1] + x2[(i, 0)] * b2[0] + x2[(i, 1)] * b2[1]
    });
    let d = Dataset::new(y, x1, x2).unwrap();
    let opts = FitOptions::new(0.2).with_ridge(Ridge::Fixed(0.0));
    let start = Instant::now();
    let fits = [
        ("partial_nw", fit_beta1(&d, &opts, SmootherMethod::NadarayaWatson)),
        ("partial_ll", fit_beta1(&d, &opts, SmootherMethod::LocalLinear)),
        ("optimal", fit_beta1_optimal(&d, &opts, None)),
        ("weighted", fit_beta1_weighted(&d, &opts, &vec![1.0 + 0.5 * r(); n])),
        ("average", fit_beta1_average(&d, &opts)),
    ];
    let secs = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (name, fit) in fits {
        match fit {
            Ok(f) => {
                let e = (f.beta1[0] - b1[0]).abs().max((f.beta1[1] - b1[1]).abs());
                worst = worst.max(e);
                detail.push(format!("{name} {e:.1e}"));
            }
            Err(e) => {
                worst = f64::INFINITY;
                detail.push(format!("{name} error {e}"));
            }
        }
    }
    outcome(
        worst <= 1e-8 && secs < 1.0,
        format!("max error {worst:.2e} (tol 1e-8), {secs:.3}s (< 1s); {}", detail.join(", ")),
    )
}

fn criterion_2() -> Outcome {
    let cfg = experiment(reference_dgp(), vec![400, 1600], 500, vec![EstimatorKind::PartialNw]);
    let start = Instant::now();
    let report = match run_mc_consistency(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let rate = &report.rates[0];
    let ratio = rate.ratio_total;
    outcome(
        (1.6..=2.5).contains(&ratio) && secs < 300.0,
        format!(
            "RMSE(400) = {:.4}, RMSE(1600) = {:.4}, ratio {ratio:.3} (target [1.6, 2.5]), {secs:.1}s",
            report.rows[0].rmse[0], report.rows[1].rmse[0]
        ),
    )
}

fn criteria_3_and_4() -> (Outcome, Outcome) {
    let dgp = heteroscedastic_dgp();
    let cfg = experiment(
        dgp.clone(),
        vec![2000],
        1000,
        vec![EstimatorKind::Optimal, EstimatorKind::PartialNw, EstimatorKind::Average],
    );
    let start = Instant::now();
    let report = match run_mc_efficiency(&cfg) {
        Ok(r) => r,
        Err(e) => {
            let o = || outcome(false, format!("run failed: {e}"));
            return (o(), o());
        }
    };
    let secs = start.elapsed().as_secs_f64();
    let v = &report.verdicts[0];
    let gaps: Vec<String> = v
        .gaps
        .iter()
        .map(|g| {
            format!(
                "{} {:.4} < {} {:.4}: gap {:.4}, se {:.4}",
                g.lower.name(),
                g.trace_lower,
                g.upper.name(),
                g.trace_upper,
                g.gap,
                g.se
            )
        })
        .collect();
    let c3 = outcome(
        v.holds_strict && secs < 900.0,
        format!("{}; {secs:.1}s", gaps.join("; ")),
    );

    let start = Instant::now();
    let c4 = match theoretical_matrices(&dgp, 2000, DEFAULT_GRID_SIZE, 7).and_then(|m| m.optimal_variance()) {
        Ok(theory) => {
            let emp = report.row(EstimatorKind::Optimal, 2000).unwrap().trace;
            let rel = (emp - theory.trace()).abs() / theory.trace();
            outcome(
                rel <= 0.25,
                format!(
                    "empirical trace {emp:.4}, theoretical {:.4}, relative difference {rel:.3} (tol 0.25); {:.1}s",
                    theory.trace(),
                    start.elapsed().as_secs_f64()
                ),
            )
        }
        Err(e) => outcome(false, format!("theoretical matrices failed: {e}")),
    };
    (c3, c4)
}

fn criterion_5() -> Outcome {
    let cfg = experiment(reference_dgp(), vec![1000], 1000, vec![EstimatorKind::PartialNw]);
    match run_mc_coverage(&cfg) {
        Ok(report) => {
            let cov = &report.rows[0].coverage;
            outcome(
                cov.iter().all(|c| (0.92..=0.97).contains(c)),
                format!("coverage {cov:?} (target [0.92, 0.97])"),
            )
        }
        Err(e) => outcome(false, format!("run failed: {e}")),
    }
}

fn criterion_6a() -> Outcome {
    let base = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
    let constant = vec![base; 101];
    let linear: Vec<DMatrix<f64>> = (0..101)
        .map(|k| DMatrix::identity(2, 2) * (1.0 + k as f64 / 100.0))
        .collect();
    match (
        check_integral_inverse_inequality(&constant),
        check_integral_inverse_inequality(&linear),
    ) {
        (Ok((h0, g0)), Ok((h1, g1))) => {
            let target = 2f64.ln() - 2.0 / 3.0;
            outcome(
                h0 && h1 && g0.abs() <= 1e-10 && (g1 - target).abs() <= 1e-3,
                format!("constant gap {g0:.2e}; (1+u)I gap {g1:.5} vs ln 2 - 2/3 = {target:.5}"),
            )
        }
        (a, b) => outcome(false, format!("errors: {:?} {:?}", a.err(), b.err())),
    }
}

struct BatteryEntry {
    name: &'static str,
    dgp: DgpSpec,
    homoscedastic: bool,
}

fn battery() -> Vec<BatteryEntry> {
    let reference = reference_dgp();
    vec![
        BatteryEntry { name: "reference", dgp: reference.clone(), homoscedastic: true },
        BatteryEntry {
            name: "constant-dynamics",
            dgp: DgpSpec {
                ar: vec![Coef::Constant(0.5)],
                gamma: vec![Coef::Linear { a: 1.0, b: 1.0 }],
                covariates: vec![Covariate::Geometric { scale: Coef::Constant(1.0), decay: 0.3 }],
                sigma: Coef::Constant(1.0),
                noise: NoiseDist::Gaussian,
                stable_mask: vec![true, false],
            },
            homoscedastic: true,
        },
        BatteryEntry { name: "heteroscedastic", dgp: heteroscedastic_dgp(), homoscedastic: false },
        BatteryEntry {
            name: "strongly-heteroscedastic",
            dgp: DgpSpec {
                sigma: Coef::Linear { a: 0.2, b: 2.0 },
                covariates: vec![Covariate::Geometric { scale: Coef::Linear { a: 2.0, b: -1.5 }, decay: 0.3 }],
                ..reference.clone()
            },
            homoscedastic: false,
        },
        BatteryEntry {
            name: "ar2-intercept",
            dgp: DgpSpec {
                ar: vec![Coef::Sine { a: 0.4, b: 0.2, freq: 1.0 }, Coef::Constant(-0.2)],
                gamma: vec![Coef::Constant(1.0), Coef::Constant(0.8)],
                covariates: vec![
                    Covariate::Intercept,
                    Covariate::Ma { weights: vec![Coef::Constant(1.0), Coef::Linear { a: 0.2, b: 0.5 }] },
                ],
                sigma: Coef::Sine { a: 1.0, b: 0.6, freq: 1.0 },
                noise: NoiseDist::StudentT { df: 6.0 },
                stable_mask: vec![false, true, true, true],
            },
            homoscedastic: false,
        },
        BatteryEntry {
            name: "uniform-noise",
            dgp: DgpSpec {
                sigma: Coef::Linear { a: 1.5, b: -1.2 },
                noise: NoiseDist::Uniform,
                ..reference
            },
            homoscedastic: false,
        },
    ]
}

fn criterion_6b() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, entry) in battery().into_iter().enumerate() {
        let m: AsymptoticMatrices = match theoretical_matrices(&entry.dgp, 500, DEFAULT_GRID_SIZE, 100 + k as u64) {
            Ok(m) => m,
            Err(e) => {
                ok = false;
                detail.push(format!("{}: error {e}", entry.name));
                continue;
            }
        };
        let opt = m.optimal_variance().unwrap();
        let partial = m.partial_variance().unwrap();
        let mut zw = m.s_zw.clone();
        symmetrize(&mut zw);
        let first = if entry.homoscedastic {
            // equal in the limit; compare within Monte Carlo error
            let rel = operator_norm(&(&partial - &opt)) / operator_norm(&opt);
            let pass = rel <= 0.05;
            detail.push(format!(
                "{}: opt tr {:.4}, partial tr {:.4}, |partial - opt|/|opt| = {rel:.3}",
                entry.name,
                opt.trace(),
                partial.trace()
            ));
            pass
        } else {
            let pass = loewner_leq(&opt, &partial, 1e-6 * operator_norm(&partial)).unwrap();
            detail.push(format!(
                "{}: opt tr {:.4} <= partial tr {:.4} {}",
                entry.name,
                opt.trace(),
                partial.trace(),
                pass
            ));
            pass
        };
        // homoscedastic entries sit at (or next to) equality, so the
        // comparison allows the same Monte Carlo slack
        let tol = if entry.homoscedastic { 0.05 } else { 1e-6 } * operator_norm(&zw);
        let second = loewner_leq(&opt, &zw, tol).unwrap();
        let slack = min_eigenvalue(&(&zw - &opt)) / operator_norm(&zw);
        detail.push(format!("opt <= s_zw (tr {:.4}, min eig of difference / norm {slack:.4}) {second}", zw.trace()));
        ok &= first && second;
    }
    outcome(ok, detail.join("; "))
}

fn criterion_7() -> Outcome {
    let dgp = reference_dgp();
    let median = |n: usize| -> Result<f64, String> {
        let mut gaps: Vec<f64> = (0..100u64)
            .map(|s| coupling_gap(&dgp, n, s).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        gaps.sort_by(|a, b| a.total_cmp(b));
        Ok(0.5 * (gaps[49] + gaps[50]))
    };
    match (median(500), median(2000)) {
        (Ok(a), Ok(b)) => outcome(b < a, format!("median gap n=500 {a:.5}, n=2000 {b:.5}")),
        (a, b) => outcome(false, format!("errors: {a:?} {b:?}")),
    }
}

fn criterion_8() -> Outcome {
    let n = 1000;
    let b = 0.15;
    let x = NoiseField::new(8, 3, NoiseDist::Gaussian).window(0, 2 * n);
    let x1 = DMatrix::from_fn(n, 1, |i, _| x[2 * i]);
    let x2 = DMatrix::from_fn(n, 1, |i, _| x[2 * i + 1]);
    let beta2: Vec<f64> = (1..=n).map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin()).collect();
    let y = DVector::from_fn(n, |i, _| x1[(i, 0)] + x2[(i, 0)] * beta2[i]);
    let d = Dataset::new(y, x1, x2).unwrap();
    let opts = FitOptions::new(b);
    let errors = |method: SmootherMethod| -> Result<(f64, f64), String> {
        let fit = fit_beta1(&d, &opts, method).map_err(|e| e.to_string())?;
        let path = fit_beta2_path(&d, &opts, &fit.beta1, method, Beta2Method::PlugIn).map_err(|e| e.to_string())?;
        let (mut interior, mut all, mut m) = (0.0, 0.0, 0);
        for i in 0..n {
            let u = (i + 1) as f64 / n as f64;
            let e = (path.values[(i, 0)] - beta2[i]).abs();
            all += e;
            if u >= b && u <= 1.0 - b {
                interior += e;
                m += 1;
            }
        }
        Ok((interior / m as f64, all / n as f64))
    };
    match (errors(SmootherMethod::LocalLinear), errors(SmootherMethod::NadarayaWatson)) {
        (Ok((ll, ll_all)), Ok((nw, nw_all))) => outcome(
            ll <= 0.5 * nw,
            format!(
                "interior mean abs error LL {ll:.4}, NW {nw:.4}, ratio {:.3} (target <= 0.5); whole path LL {ll_all:.4}, NW {nw_all:.4}, ratio {:.3}",
                ll / nw,
                ll_all / nw_all
            ),
        ),
        (a, c) => outcome(false, format!("errors: {a:?} {c:?}")),
    }
}

fn criterion_9() -> Outcome {
    // p2 = 0 against least squares via SVD
    let n = 150;
    let mut r = lcg(9);
    let x1 = DMatrix::from_fn(n, 3, |_, c| if c == 0 { 1.0 } else { r() * 3.0 });
    let y = DVector::from_fn(n, |i, _| 0.5 - x1[(i, 1)] + 2.0 * x1[(i, 2)] + r());
    let ols = x1.clone().svd(true, true).solve(&y, 1e-14).unwrap();
    let d = Dataset::new(y, x1, DMatrix::zeros(n, 0)).unwrap();
    let fit = fit_beta1(&d, &FitOptions::new(0.2), SmootherMethod::NadarayaWatson).unwrap();
    let ols_err = (&fit.beta1 - &ols).abs().max();

    // Bartlett long-run variance of an MA(1) with theta = 0.5; a single series
    // of this length has about 4% relative sd, so 20 series are averaged
    let m = 20_000;
    let hac: Vec<f64> = (0..20u64)
        .map(|s| {
            let xi = NoiseField::new(s, 5, NoiseDist::Gaussian).window(0, m + 1);
            let u = DMatrix::from_fn(m, 1, |i, _| xi[i + 1] + 0.5 * xi[i]);
            estimate_sigma2_hac(&u, None).unwrap()[(0, 0)]
        })
        .collect();
    let hac_mean = hac.iter().sum::<f64>() / hac.len() as f64;
    let hac_rel = (hac_mean / 2.25 - 1.0).abs();
    let within = hac.iter().filter(|v| (*v / 2.25 - 1.0).abs() <= 0.05).count();

    // constant weights against the unweighted fit, no ridge
    let n = 300;
    let mut r = lcg(99);
    let x1 = DMatrix::from_fn(n, 2, |_, _| r());
    let x2 = DMatrix::from_fn(n, 1, |_, _| 1.0 + r());
    let y = DVector::from_fn(n, |i, _| x1[(i, 0)] - x1[(i, 1)] + x2[(i, 0)] * (i as f64 / n as f64) + 0.1 * r());
    let d = Dataset::new(y, x1, x2).unwrap();
    let opts = FitOptions::new(0.15).with_ridge(Ridge::Fixed(0.0));
    let plain = fit_beta1(&d, &opts, SmootherMethod::NadarayaWatson).unwrap();
    let identical = [1.0, 2.0, 0.5].iter().all(|&c| {
        let w = fit_beta1_weighted(&d, &opts, &vec![c; n]).unwrap();
        w.beta1.iter().zip(plain.beta1.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
    });

    outcome(
        ols_err <= 1e-10 && hac_rel <= 0.05 && identical,
        format!(
            "OLS max diff {ols_err:.1e}; HAC mean {hac_mean:.4} vs 2.25 ({:.1}%, {within}/20 single series within 5%); constant weights bit-identical {identical}",
            100.0 * hac_rel
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut cfg = experiment(
        heteroscedastic_dgp(),
        vec![200, 400],
        60,
        vec![EstimatorKind::Optimal, EstimatorKind::PartialNw, EstimatorKind::Average],
    );
    cfg.batches = 5;
    let mut docs = Vec::new();
    for workers in [1, 8] {
        cfg.workers = Some(workers);
        match run_mc_efficiency(&cfg) {
            Ok(r) => docs.push((r.to_json(), r.to_csv())),
            Err(e) => return outcome(false, format!("run failed: {e}")),
        }
    }
    let same = docs[0] == docs[1];
    outcome(same, format!("JSON {} bytes, CSV {} bytes, identical {same}", docs[0].0.len(), docs[0].1.len()))
}

fn main() {
    // optional positional arguments select criteria by number, e.g. `-- 3 7`
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| only.is_empty() || only.iter().any(|o| o == id || (o.len() == 1 && id.starts_with(o.as_str()) && id.len() == 2));
    let start = Instant::now();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |label: &'static str, o: Outcome| {
        println!("[{}] criterion {label}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((label, o));
    };
    if wanted("1") {
        report("1 (exactness)", criterion_1());
    }
    if wanted("2") {
        report("2 (root-n consistency)", criterion_2());
    }
    if wanted("3") || wanted("4") {
        let (c3, c4) = criteria_3_and_4();
        report("3 (efficiency ordering)", c3);
        report("4 (two-stage variance)", c4);
    }
    if wanted("5") {
        report("5 (coverage)", criterion_5());
    }
    if wanted("6a") {
        report("6a (integral-inverse inequality)", criterion_6a());
    }
    if wanted("6b") {
        report("6b (Loewner chain battery)", criterion_6b());
    }
    if wanted("7") {
        report("7 (coupling)", criterion_7());
    }
    if wanted("8") {
        report("8 (local-linear bias)", criterion_8());
    }
    if wanted("9") {
        report("9 (oracle equivalences)", criterion_9());
    }
    if wanted("10") {
        report("10 (determinism)", criterion_10());
    }
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(l, _)| *l).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        // report-only by default; ACCEPTANCE_STRICT=1 turns failures into a nonzero exit
        if std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
