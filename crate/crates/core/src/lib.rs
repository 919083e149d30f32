//! Arbitrary polynomial chaos surrogates for expensive simulators, with
//! surrogate-corrected Bayesian model selection and justifiability analysis.
//!
//! The pipeline, bottom up:
//!
//! * [`param_space`]: independent priors with moments, densities and sampling.
//! * [`basis`]: orthonormal polynomial families built from raw moments, the
//!   total-degree multivariate basis and collocation points.
//! * [`surrogate`]: coefficient solves, evaluation and LOOCV errors.
//! * [`runner`]: built-in toy models and external commands behind one cached,
//!   parallel interface; measurement data.
//! * [`bayes`]: likelihoods, Monte Carlo evidence and its surrogate correction.
//! * [`bapc`]: Bayesian refinement of the collocation set.
//! * [`justifiability`]: model confusion matrices and the RMSE table.

pub mod bapc;
pub mod basis;
pub mod bayes;
pub mod error;
pub mod justifiability;
pub mod param_space;
pub mod runner;
pub mod stats;
pub mod surrogate;

pub use bapc::{bapc_update, initial_surrogate, BapcSettings, UpdateRecord, UpdateTrace};
pub use basis::{
    basis_size, build_family, initial_collocation, total_degree_indices, CollocationSet, MultivariateBasis, Provenance,
    UnivariateFamily,
};
pub use bayes::{
    approximation_covariance, bme_monte_carlo, gaussian_likelihood, gaussian_log_likelihood, posterior_model_weights,
    weight_sm, BmeEstimate, BmeReport, LikelihoodSpec, WeightSm,
};
pub use error::{Error, Result};
pub use justifiability::{
    confusion_matrix, cross_correction, rmse_table, CandidateModel, ConfusionMatrix, ConfusionSettings, CrossWeights,
    RmseTable,
};
pub use param_space::{ParameterSpace, Prior1D, PriorKind};
pub use runner::{
    read_observations, EvaluationCache, EvaluationRecord, EvaluationSource, ExternalCommand, ModelKind, ModelSpec,
    ObservationSet, Runner, ToyModel,
};
pub use surrogate::{
    loocv_error, solve_coefficients, DataSubset, LoocvReport, OutputCoordinate, OutputGrid, Surrogate,
};
