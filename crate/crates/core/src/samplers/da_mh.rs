//! Delayed-acceptance MH: a subsampled estimate screens proposals with the
//! same `u` at the current and proposed values; survivors face the exact
//! full-data ratio in the second stage.

use std::time::Instant;

use rand::Rng;

use crate::error::Result;
use crate::estimators::{ratio_sigma2_hat, Estimator, SubsampleIndices};
use crate::model::{full_log_likelihood, log_prior, PredictorModel, Theta};

use super::{accept_log, check_finite, rw_propose, ChainState, ProposalConfig, SamplerCtx, StateKind, StepRecord};

/// Initialize a DA-MH chain: one subsampled estimate plus one full-data
/// evaluation for the second-stage cache.
pub fn da_mh_init<M: PredictorModel>(
    theta0: Theta,
    u0: SubsampleIndices,
    ctx: &SamplerCtx<'_, M>,
    est: &Estimator<'_, M>,
    correction: bool,
) -> Result<ChainState> {
    let e0 = est.difference_estimate(&theta0, &u0)?;
    let est_loglik = if correction { e0.corrected_value } else { e0.value };
    let full = full_log_likelihood(ctx.model, &theta0, ctx.data, ctx.ledger);
    let lp = log_prior(&theta0, ctx.prior);
    check_finite(est_loglik + full + lp, "initial DA-MH caches")?;
    Ok(ChainState {
        theta: theta0,
        u: Some(u0),
        log_prior: lp,
        log_second_stage: full + lp,
        log_first_stage: Some(est_loglik + lp),
        iteration: 0,
        kind: StateKind::DaMh {
            est_loglik,
            full_loglik: full,
            residuals: e0.residuals,
        },
    })
}

/// One DA-MH step.
///
/// With probability `u_refresh_prob` the auxiliary `u` is redrawn at
/// iteration start and the cached first-stage estimate recomputed. Stage 1
/// accepts with the estimated posterior ratio under the shared `u`; on
/// stage-1 acceptance the full-data likelihood is evaluated and the move
/// accepted with the ratio of estimate-to-truth discrepancies (proposal and
/// prior factors cancel). A stage-1 rejection leaves the chain in place
/// without touching the full data.
#[allow(clippy::too_many_arguments)]
pub fn da_mh_step<M: PredictorModel, R: Rng>(
    state: &mut ChainState,
    ctx: &SamplerCtx<'_, M>,
    est: &Estimator<'_, M>,
    cfg: &ProposalConfig,
    correction: bool,
    u_refresh_prob: f64,
    rng: &mut R,
) -> Result<StepRecord> {
    let mut u_refreshed = false;
    if u_refresh_prob > 0.0 && rng.random::<f64>() < u_refresh_prob {
        u_refreshed = true;
        ctx.ledger.record_u_refresh();
        let (m, g) = {
            let u = state.u.as_ref().expect("DA-MH state carries u");
            (u.m(), u.g())
        };
        let fresh = SubsampleIndices::draw(est.clusters().scope_len(), m, g, rng)?;
        let e_c = est.difference_estimate(&state.theta, &fresh)?;
        let est_loglik = if correction { e_c.corrected_value } else { e_c.value };
        state.u = Some(fresh);
        state.log_first_stage = Some(est_loglik + state.log_prior);
        if let StateKind::DaMh {
            est_loglik: cache,
            residuals,
            ..
        } = &mut state.kind
        {
            *cache = est_loglik;
            *residuals = e_c.residuals;
        }
    }

    let proposal = rw_propose(&state.theta, cfg, rng);
    let u = state.u.as_ref().expect("DA-MH state carries u").clone();

    let stage1_start = Instant::now();
    let e_p = est.difference_estimate(&proposal, &u)?;
    ctx.ledger.push_stage1_time(stage1_start.elapsed().as_secs_f64());

    let (est_c, full_c, res_c) = match &state.kind {
        StateKind::DaMh {
            est_loglik,
            full_loglik,
            residuals,
        } => (*est_loglik, *full_loglik, residuals),
        _ => unreachable!("da_mh_step on a non-DA-MH state"),
    };
    let sigma_r = ratio_sigma2_hat(res_c, &e_p.residuals, est.clusters().scope_len()).sqrt();

    let est_p = if correction { e_p.corrected_value } else { e_p.value };
    let lp_p = log_prior(&proposal, ctx.prior);
    let log_alpha1 = check_finite(
        (est_p + lp_p) - state.log_first_stage.expect("DA-MH caches stage 1"),
        "DA-MH stage-1 log ratio",
    )?;
    let (pass1, alpha1) = accept_log(log_alpha1, rng);

    let record = if !pass1 {
        StepRecord {
            u_refreshed,
            sigma_r: Some(sigma_r),
            ..StepRecord::rejected_at_stage1(alpha1)
        }
    } else {
        let stage2_start = Instant::now();
        let full_p = full_log_likelihood(ctx.model, &proposal, ctx.data, ctx.ledger);
        ctx.ledger.push_stage2_time(stage2_start.elapsed().as_secs_f64());
        ctx.ledger.record_full_entry();

        // ratio of (estimate / truth) discrepancies between current and
        // proposed values
        let log_r2 = check_finite(
            (est_c - full_c) - (est_p - full_p),
            "DA-MH stage-2 log ratio",
        )?;
        let (accepted, alpha2) = accept_log(log_r2, rng);
        if accepted {
            state.theta = proposal;
            state.log_prior = lp_p;
            state.log_second_stage = full_p + lp_p;
            state.log_first_stage = Some(est_p + lp_p);
            state.kind = StateKind::DaMh {
                est_loglik: est_p,
                full_loglik: full_p,
                residuals: e_p.residuals,
            };
        }
        StepRecord {
            alpha1,
            alpha2: Some(alpha2),
            stage2_entered: true,
            accepted,
            u_refreshed,
            sigma_r: Some(sigma_r),
            surrogate_extrapolated: false,
        }
    };
    state.iteration += 1;
    ctx.ledger.record_iteration();
    Ok(record)
}
