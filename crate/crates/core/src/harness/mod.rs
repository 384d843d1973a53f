//! Configuration, data I/O and Monte Carlo experiment drivers.

pub mod config;
pub mod io;
pub mod mc;

pub use config::ExperimentConfig;
pub use io::{
    load_csv, read_csv, run_fit, save_csv, write_csv, AsymptoticsDocument, ErrorDocument, FitConfig,
    FitDocument, FitResult, Truth,
};
pub use mc::{
    run_mc_consistency, run_mc_coverage, run_mc_efficiency, EfficiencyVerdict, McReport, McRow,
    OrderingGap, RateRow,
};
