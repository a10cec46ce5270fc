//! Experiment drivers, rolling forecasts, CSV and configuration IO, fit
//! reports and model files.

pub mod config;
pub mod experiment;
pub mod io;
pub mod report;
pub mod rolling;

pub use config::{Estimator, FitConfig, KeyValues, LambdaChoice, RankSpec};
pub use experiment::{
    gamma_sample_size, linear_fit, paired_t_test, run_experiment, run_replication, ExperimentKind, ExperimentResult, ExperimentSpec, LinearFit,
    PairedT,
};
pub use io::{read_csv, standardize, write_csv, write_series, Standardization, Table};
pub use report::{fit_design, fit_estimator, load_model, model_report, save_model, FitReport};
pub use rolling::{rolling_forecast, RollingResult, RollingSpec};
