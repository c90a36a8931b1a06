//! The sampler family: baseline MH, delayed-acceptance MH, (block)
//! pseudo-marginal MH and their delayed-acceptance variants, plus the
//! random-walk proposal with training-period scale adaptation.
//!
//! All acceptance arithmetic is in log space; `q_2` mixtures are never
//! evaluated explicitly because the two-stage mechanism realizes the spike
//! implicitly and the second-stage ratio uses the simplified form in which
//! the proposal and prior factors cancel.

mod da_mh;
mod mh;
mod pmmh;
mod runner;
mod setup;

pub use da_mh::{da_mh_init, da_mh_step};
pub use mh::{mh_init, mh_step};
pub use pmmh::{da_pmmh_init, da_pmmh_step, pmmh_init, pmmh_step, DaPmmhPhase};
pub use runner::{run_experiment, RunConfig, RunOutput, RunTiming};
pub use setup::{calibrate_subsample_size, fit_mode};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::SubsampleIndices;
use crate::ledger::CostLedger;
use crate::model::{PredictorModel, Prior, Theta};

/// Random-walk proposal configuration with Robbins-Monro scale adaptation.
#[derive(Debug, Clone)]
pub struct ProposalConfig {
    step_scale: f64,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
    pub target_alpha1: f64,
    /// Iterations during which the scale adapts (frozen afterwards).
    pub adapt_until: u64,
    /// Robbins-Monro decay exponent.
    pub adapt_rate: f64,
}

impl ProposalConfig {
    pub fn new(
        step_scale: f64,
        covariance: DMatrix<f64>,
        target_alpha1: f64,
        adapt_until: u64,
        adapt_rate: f64,
    ) -> Result<Self> {
        if !(step_scale > 0.0) {
            return Err(Error::invalid("step_scale must be positive"));
        }
        if !(0.0 < target_alpha1 && target_alpha1 < 1.0) {
            return Err(Error::invalid("target_alpha1 must lie in (0, 1)"));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("proposal covariance must be SPD"))?
            .l();
        Ok(ProposalConfig {
            step_scale,
            covariance,
            chol,
            target_alpha1,
            adapt_until,
            adapt_rate,
        })
    }

    /// Identity covariance, default training window (5000) and decay (0.6).
    pub fn identity(p: usize, step_scale: f64, target_alpha1: f64) -> Self {
        Self::new(step_scale, DMatrix::identity(p, p), target_alpha1, 5000, 0.6).unwrap()
    }

    pub fn step_scale(&self) -> f64 {
        self.step_scale
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
}

/// Symmetric random-walk proposal `theta' = theta + step_scale * L z`.
pub fn rw_propose<R: Rng>(theta: &Theta, cfg: &ProposalConfig, rng: &mut R) -> Theta {
    let p = theta.dim();
    let z = DVector::from_fn(p, |_, _| rng.sample(rand_distr::StandardNormal));
    Theta {
        beta: &theta.beta + cfg.step_scale * (&cfg.chol * z),
    }
}

/// Robbins-Monro update of the log proposal scale towards the target
/// first-stage acceptance; no-op once `iteration` exceeds the window.
pub fn adapt_scale(cfg: &mut ProposalConfig, alpha1: f64, iteration: u64) {
    if iteration == 0 || iteration > cfg.adapt_until {
        return;
    }
    let gain = (iteration as f64).powf(-cfg.adapt_rate);
    cfg.step_scale = (cfg.step_scale.ln() + gain * (alpha1 - cfg.target_alpha1)).exp();
}

/// Redraw one uniformly chosen block of `u`; `G = 1` recovers the full,
/// uncorrelated redraw.
pub fn block_refresh<R: Rng>(u: &SubsampleIndices, rng: &mut R) -> SubsampleIndices {
    u.refresh_block(rng)
}

/// Outcome of one sampler step.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    /// First-stage acceptance probability (the only stage for MH / PMMH).
    pub alpha1: f64,
    /// Second-stage acceptance probability, present only when stage 2 ran.
    pub alpha2: Option<f64>,
    pub stage2_entered: bool,
    pub accepted: bool,
    pub u_refreshed: bool,
    /// Estimated sd of the log acceptance ratio at (theta_c, theta'), from
    /// the shared-u pointwise residuals (DA-MH family).
    pub sigma_r: Option<f64>,
    /// The surrogate prediction extrapolated beyond its training hull.
    pub surrogate_extrapolated: bool,
}

impl StepRecord {
    fn rejected_at_stage1(alpha1: f64) -> Self {
        StepRecord {
            alpha1,
            alpha2: None,
            stage2_entered: false,
            accepted: false,
            u_refreshed: false,
            sigma_r: None,
            surrogate_extrapolated: false,
        }
    }
}

/// Accept/reject on a log acceptance ratio. Uphill moves consume no
/// randomness, so chains with identical decisions consume identical streams.
/// Returns (accepted, min(1, exp(log_ratio))).
pub(crate) fn accept_log<R: Rng>(log_ratio: f64, rng: &mut R) -> (bool, f64) {
    if log_ratio >= 0.0 {
        (true, 1.0)
    } else {
        let alpha = log_ratio.exp();
        (rng.random::<f64>() < alpha, alpha)
    }
}

/// Cached per-component pieces of a pseudo-marginal state's estimate.
#[derive(Debug, Clone)]
pub struct EstimateParts {
    /// Dense control-variate sum q(theta); present once stage 2 evaluated it
    /// (always during training, on acceptance otherwise).
    pub q_dense: f64,
    /// Sparse control-variate sum (delayed variants only).
    pub q_sparse: Option<f64>,
    /// Discrepancy value used in the first stage: true `q - q1` during
    /// training, the surrogate prediction afterwards.
    pub e_used: Option<f64>,
    pub d_hat: f64,
    pub sigma2_hat: f64,
    pub positive: f64,
    pub residuals: Vec<f64>,
}

impl EstimateParts {
    /// Log of the "bias-corrected" likelihood estimate (the second-stage
    /// quantity).
    pub fn corrected_loglik(&self) -> f64 {
        self.q_dense + self.d_hat + self.positive - self.sigma2_hat / 2.0
    }

    /// Log of the first-stage approximation `s_hat`.
    pub fn stage1_loglik(&self) -> f64 {
        self.q_sparse.expect("stage-1 cache needs q_sparse")
            + self.e_used.expect("stage-1 cache needs a discrepancy value")
            + self.d_hat
            + self.positive
            - self.sigma2_hat / 2.0
    }
}

/// Algorithm-specific cached quantities of the current state.
#[derive(Debug, Clone)]
pub enum StateKind {
    /// Exact MH: the full-data log-likelihood.
    Mh { full_loglik: f64 },
    /// DA-MH: the first-stage estimate actually used (corrected or not),
    /// its pointwise residuals, and the exact full-data log-likelihood.
    DaMh {
        est_loglik: f64,
        full_loglik: f64,
        residuals: Vec<f64>,
    },
    /// PMMH family: the component cache of the current estimate.
    Pmmh { parts: EstimateParts },
}

/// Current state of the (augmented) chain with its cached log quantities.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub theta: Theta,
    pub u: Option<SubsampleIndices>,
    pub log_prior: f64,
    /// Cached second-stage log numerator: `l + log p(theta)` for MH / DA-MH,
    /// corrected estimate plus log prior for the PMMH family.
    pub log_second_stage: f64,
    /// Cached first-stage log numerator (delayed algorithms).
    pub log_first_stage: Option<f64>,
    pub iteration: u64,
    pub kind: StateKind,
}

/// Borrowed context shared by every step function.
pub struct SamplerCtx<'a, M: PredictorModel> {
    pub model: &'a M,
    pub data: &'a Dataset,
    pub prior: &'a Prior,
    pub ledger: &'a CostLedger,
}

impl<'a, M: PredictorModel> SamplerCtx<'a, M> {
    pub fn new(
        model: &'a M,
        data: &'a Dataset,
        prior: &'a Prior,
        ledger: &'a CostLedger,
    ) -> Self {
        SamplerCtx {
            model,
            data,
            prior,
            ledger,
        }
    }
}

pub(crate) fn check_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numerical(format!("{what} is not finite: {value}")))
    }
}
