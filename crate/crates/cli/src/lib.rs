//! Batch front-end for the surrogate-based justifiability analysis: reads a
//! TOML analysis file and writes surrogates, BaPC traces, model-selection
//! reports, confusion matrices and RMSE tables.

pub mod config;
pub mod pipeline;

pub use config::{load, Analysis, AnalysisConfig, ConfigError, CACHE_DIR_ENV};
pub use pipeline::{export_plots, run, run_pipeline, PipelineError, RunSummary, Stage};
