//! Exact and approximately-exact Bayesian posterior simulation on large
//! datasets via delayed-acceptance Metropolis-Hastings and (block)
//! pseudo-marginal MCMC with subsampled, control-variate-corrected
//! log-likelihood estimators.
//!
//! The crate is organized around the life cycle of an experiment:
//!
//! * [`data`] — dataset representation, synthetic generation, clustering of
//!   the covariate space and the per-cluster moment statistics that make the
//!   control-variate sum cheap to evaluate.
//! * [`model`] — log-densities as functions of a scalar linear predictor
//!   (logistic regression plus a Gaussian-response test model) and the
//!   Gaussian prior.
//! * [`estimators`] — the difference estimator of the log-likelihood, its
//!   variance estimator, the "bias-corrected" likelihood estimate and the
//!   difference-of-log-likelihoods estimator used for diagnostics.
//! * [`samplers`] — MH, DA-MH, PMMH, block PMMH and their delayed-acceptance
//!   variants, with training-period proposal adaptation.
//! * [`surrogate`] — regression models (linear, noise-free GP) for the
//!   discrepancy between sparse and dense control-variate sums.
//! * [`diagnostics`] — inefficiency factors, effective draws, the two cost
//!   models, and normality / posterior-agreement checks.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod ledger;
pub mod model;

pub mod surrogate;

pub use data::{ClusterModel, CovariateLaw, Dataset, SyntheticSpec};
pub mod samplers;
pub use error::{Error, Result};
pub use estimators::{CvConfig, CvMode, Estimator, LogLikEstimate, SubsampleIndices};
pub use ledger::CostLedger;
pub use model::{GaussianResponseModel, LogisticModel, PredictorModel, Prior, Theta};
