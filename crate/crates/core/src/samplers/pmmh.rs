//! Pseudo-marginal MH on the augmented space (theta, u), with optional
//! G-block correlated refresh of `u` and delayed-acceptance variants whose
//! first stage swaps the dense control-variate sum for a sparse sum plus a
//! learned discrepancy.
//!
//! The "bias-corrected" estimator is mandatory here; `theta` and `u` are
//! proposed and accepted jointly.

use std::time::Instant;

use rand::Rng;

use crate::error::Result;
use crate::estimators::{Estimator, SubsampleIndices};
use crate::model::{log_prior, PredictorModel, Theta};
use crate::surrogate::{DiscrepancySample, SurrogateModel};

use super::{accept_log, check_finite, rw_propose, ChainState, EstimateParts, ProposalConfig, SamplerCtx, StateKind, StepRecord};

/// Initialize a plain / block PMMH chain (one corrected estimate).
pub fn pmmh_init<M: PredictorModel>(
    theta0: Theta,
    u0: SubsampleIndices,
    ctx: &SamplerCtx<'_, M>,
    est: &Estimator<'_, M>,
) -> Result<ChainState> {
    let e0 = est.difference_estimate(&theta0, &u0)?;
    let parts = EstimateParts {
        q_dense: e0.q_sum,
        q_sparse: None,
        e_used: None,
        d_hat: e0.d_hat,
        sigma2_hat: e0.sigma2_hat,
        positive: e0.exact_positive_part,
        residuals: e0.residuals,
    };
    let lp = log_prior(&theta0, ctx.prior);
    let log_post = check_finite(parts.corrected_loglik() + lp, "initial PMMH state")?;
    Ok(ChainState {
        theta: theta0,
        u: Some(u0),
        log_prior: lp,
        log_second_stage: log_post,
        log_first_stage: None,
        iteration: 0,
        kind: StateKind::Pmmh { parts },
    })
}

/// One (block) PMMH step: propose `theta'` by random walk and `u'` either
/// freshly (`block = false`, uncorrelated) or by redrawing one of the G
/// blocks; accept both or neither with the corrected-estimate ratio.
pub fn pmmh_step<M: PredictorModel, R: Rng>(
    state: &mut ChainState,
    ctx: &SamplerCtx<'_, M>,
    est: &Estimator<'_, M>,
    cfg: &ProposalConfig,
    block: bool,
    rng: &mut R,
) -> Result<StepRecord> {
    let u_c = state.u.as_ref().expect("PMMH state carries u");
    let u_p = if block {
        u_c.refresh_block(rng)
    } else {
        SubsampleIndices::draw(est.clusters().scope_len(), u_c.m(), u_c.g(), rng)?
    };
    let proposal = rw_propose(&state.theta, cfg, rng);

    let start = Instant::now();
    let e_p = est.difference_estimate(&proposal, &u_p)?;
    ctx.ledger.push_stage1_time(start.elapsed().as_secs_f64());

    let lp_p = log_prior(&proposal, ctx.prior);
    let parts = EstimateParts {
        q_dense: e_p.q_sum,
        q_sparse: None,
        e_used: None,
        d_hat: e_p.d_hat,
        sigma2_hat: e_p.sigma2_hat,
        positive: e_p.exact_positive_part,
        residuals: e_p.residuals,
    };
    let log_ratio = check_finite(
        (parts.corrected_loglik() + lp_p) - state.log_second_stage,
        "PMMH log ratio",
    )?;
    let (accepted, alpha) = accept_log(log_ratio, rng);
    if accepted {
        state.theta = proposal;
        state.u = Some(u_p);
        state.log_prior = lp_p;
        state.log_second_stage = parts.corrected_loglik() + lp_p;
        state.kind = StateKind::Pmmh { parts };
    }
    state.iteration += 1;
    ctx.ledger.record_iteration();
    Ok(StepRecord {
        alpha1: alpha,
        alpha2: None,
        stage2_entered: false,
        accepted,
        u_refreshed: false,
        sigma_r: None,
        surrogate_extrapolated: false,
    })
}

/// Phase of a delayed-acceptance PMMH run.
#[derive(Clone, Copy)]
pub enum DaPmmhPhase<'a> {
    /// First `N_train` iterations: the first stage uses the true discrepancy
    /// (both sums evaluated) while training pairs are collected.
    Training,
    /// Post-training: the fitted surrogate predicts the discrepancy.
    Fitted(&'a SurrogateModel),
}

/// Initialize a DA-PMMH / DA-BPMMH chain in training mode: sparse and dense
/// sums, one residual pass and the exact positive part.
pub fn da_pmmh_init<M: PredictorModel>(
    theta0: Theta,
    u0: SubsampleIndices,
    ctx: &SamplerCtx<'_, M>,
    est_dense: &Estimator<'_, M>,
    est_sparse: &Estimator<'_, M>,
) -> Result<ChainState> {
    let stats = est_dense.residual_stats(&theta0, &u0);
    let positive = est_dense.exact_positive_sum(&theta0);
    let q_dense = est_dense.cv_sum(&theta0);
    let q_sparse = est_sparse.cv_sum(&theta0);
    let parts = EstimateParts {
        q_dense,
        q_sparse: Some(q_sparse),
        e_used: Some(q_dense - q_sparse),
        d_hat: stats.d_hat,
        sigma2_hat: stats.sigma2_hat,
        positive,
        residuals: stats.residuals,
    };
    let lp = log_prior(&theta0, ctx.prior);
    let second = check_finite(parts.corrected_loglik() + lp, "initial DA-PMMH state")?;
    let first = parts.stage1_loglik() + lp;
    Ok(ChainState {
        theta: theta0,
        u: Some(u0),
        log_prior: lp,
        log_second_stage: second,
        log_first_stage: Some(first),
        iteration: 0,
        kind: StateKind::Pmmh { parts },
    })
}

/// Re-anchor the cached first-stage value on the fitted surrogate at the
/// training/post boundary (one prediction).
pub fn da_pmmh_switch_to_surrogate<M: PredictorModel>(
    state: &mut ChainState,
    ctx: &SamplerCtx<'_, M>,
    surrogate: &SurrogateModel,
) -> Result<()> {
    let pred = surrogate.predict(&state.theta);
    ctx.ledger.add_surrogate_pred(pred.cost);
    if let StateKind::Pmmh { parts } = &mut state.kind {
        parts.e_used = Some(pred.e_hat);
        state.log_first_stage = Some(parts.stage1_loglik() + state.log_prior);
        check_finite(state.log_first_stage.unwrap(), "surrogate-anchored stage 1")?;
        Ok(())
    } else {
        unreachable!("da_pmmh_switch_to_surrogate on a non-PMMH state")
    }
}

/// One DA-PMMH / DA-BPMMH step.
///
/// `block = true` refreshes one of the G blocks of `u` (state-dependent
/// approximation); `block = false` redraws `u` entirely (state-independent).
/// Stage 1 evaluates the sparse sum, the shared residual pass and the
/// discrepancy (true in training, predicted after); stage 2 evaluates the
/// dense corrected estimate and accepts with the ratio of stage-2-to-stage-1
/// discrepancies. Returns the record and, in training, the collected
/// `(theta', e(theta'))` pair.
#[allow(clippy::too_many_arguments)]
pub fn da_pmmh_step<M: PredictorModel, R: Rng>(
    state: &mut ChainState,
    ctx: &SamplerCtx<'_, M>,
    est_dense: &Estimator<'_, M>,
    est_sparse: &Estimator<'_, M>,
    cfg: &ProposalConfig,
    phase: DaPmmhPhase<'_>,
    block: bool,
    rng: &mut R,
) -> Result<(StepRecord, Option<DiscrepancySample>)> {
    let u_c = state.u.as_ref().expect("DA-PMMH state carries u");
    let u_p = if block {
        u_c.refresh_block(rng)
    } else {
        SubsampleIndices::draw(est_dense.clusters().scope_len(), u_c.m(), u_c.g(), rng)?
    };
    let proposal = rw_propose(&state.theta, cfg, rng);
    let lp_p = log_prior(&proposal, ctx.prior);

    // stage 1: sparse sum + dense-residual pass + positive part + discrepancy
    let stage1_start = Instant::now();
    let stats = est_dense.residual_stats(&proposal, &u_p);
    let positive = est_dense.exact_positive_sum(&proposal);
    let q_sparse = est_sparse.cv_sum(&proposal);
    let mut training_sample = None;
    let mut q_dense_known = None;
    let mut extrapolated = false;
    let e_used = match phase {
        DaPmmhPhase::Training => {
            let q_dense = est_dense.cv_sum(&proposal);
            q_dense_known = Some(q_dense);
            let e_true = q_dense - q_sparse;
            training_sample = Some(DiscrepancySample {
                theta: proposal.clone(),
                e_value: e_true,
            });
            e_true
        }
        DaPmmhPhase::Fitted(surrogate) => {
            let pred = surrogate.predict(&proposal);
            ctx.ledger.add_surrogate_pred(pred.cost);
            extrapolated = pred.extrapolating;
            pred.e_hat
        }
    };
    ctx.ledger.push_stage1_time(stage1_start.elapsed().as_secs_f64());

    let s_hat_p = q_sparse + e_used + stats.d_hat + positive - stats.sigma2_hat / 2.0;
    let log_alpha1 = check_finite(
        (s_hat_p + lp_p) - state.log_first_stage.expect("DA-PMMH caches stage 1"),
        "DA-PMMH stage-1 log ratio",
    )?;
    let (pass1, alpha1) = accept_log(log_alpha1, rng);

    let record = if !pass1 {
        let mut rec = StepRecord::rejected_at_stage1(alpha1);
        rec.surrogate_extrapolated = extrapolated;
        (rec, training_sample)
    } else {
        // stage 2: the dense corrected estimate at (theta', u'); in training
        // the dense sum is already part of the iteration's flat cost, after
        // training it is a fresh dense sum plus its own residual pass
        let stage2_start = Instant::now();
        let (q_dense_p, d_hat2, sigma2_hat2) = match q_dense_known {
            Some(q) => (q, stats.d_hat, stats.sigma2_hat),
            None => {
                let q = est_dense.cv_sum(&proposal);
                let stats2 = est_dense.residual_stats(&proposal, &u_p);
                (q, stats2.d_hat, stats2.sigma2_hat)
            }
        };
        ctx.ledger.push_stage2_time(stage2_start.elapsed().as_secs_f64());
        ctx.ledger.record_full_entry();

        let p_hat_p = q_dense_p + d_hat2 + positive - sigma2_hat2 / 2.0;
        let (p_hat_c, s_hat_c) = match &state.kind {
            StateKind::Pmmh { parts } => (parts.corrected_loglik(), parts.stage1_loglik()),
            _ => unreachable!("da_pmmh_step on a non-PMMH state"),
        };
        let log_r2 = check_finite(
            (p_hat_p - s_hat_p) - (p_hat_c - s_hat_c),
            "DA-PMMH stage-2 log ratio",
        )?;
        let (accepted, alpha2) = accept_log(log_r2, rng);
        if accepted {
            let parts = EstimateParts {
                q_dense: q_dense_p,
                q_sparse: Some(q_sparse),
                e_used: Some(e_used),
                d_hat: d_hat2,
                sigma2_hat: sigma2_hat2,
                positive,
                residuals: stats.residuals,
            };
            state.theta = proposal;
            state.u = Some(u_p);
            state.log_prior = lp_p;
            state.log_second_stage = parts.corrected_loglik() + lp_p;
            state.log_first_stage = Some(parts.stage1_loglik() + lp_p);
            state.kind = StateKind::Pmmh { parts };
        }
        (
            StepRecord {
                alpha1,
                alpha2: Some(alpha2),
                stage2_entered: true,
                accepted,
                u_refreshed: false,
                sigma_r: None,
                surrogate_extrapolated: extrapolated,
            },
            training_sample,
        )
    };
    state.iteration += 1;
    ctx.ledger.record_iteration();
    Ok(record)
}
