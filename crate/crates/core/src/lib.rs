//! Estimation of constant coefficients in linear regressions whose other
//! coefficients vary smoothly over rescaled time `u = i/n`.
//!
//! The model is `y_i = x1_i' beta1 + x2_i' beta2(i/n) + e_i`. Kernel partial
//! regression removes the varying part and estimates `beta1` at rate
//! `sqrt(n)`; a variance-weighted two-stage version attains the smaller
//! limit covariance `(Sigma*)^-1` under heteroscedasticity.

pub mod asymptotics;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod simulate;
pub mod smoother;

pub use error::{Error, Result};
pub use estimators::{
    fit_beta1, fit_beta1_average, fit_beta1_optimal, fit_beta1_weighted, fit_beta2_path, Beta1Fit,
    EstimatorKind, FitOptions,
};
pub use kernel::{BandwidthSpec, KernelSpec};
pub use simulate::{simulate_tvar, Coef, Covariate, DgpSpec, NoiseDist};
pub use smoother::{Dataset, Ridge, SmootherMethod};
