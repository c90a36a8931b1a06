//! Baseline random-walk Metropolis-Hastings on the exact posterior.

use std::time::Instant;

use rand::Rng;

use crate::error::Result;
use crate::model::{full_log_likelihood, log_prior, PredictorModel, Theta};

use super::{accept_log, check_finite, rw_propose, ChainState, ProposalConfig, SamplerCtx, StateKind, StepRecord};

/// Initialize an MH chain at `theta0` (one full-data evaluation).
pub fn mh_init<M: PredictorModel>(theta0: Theta, ctx: &SamplerCtx<'_, M>) -> Result<ChainState> {
    let full = full_log_likelihood(ctx.model, &theta0, ctx.data, ctx.ledger);
    let lp = log_prior(&theta0, ctx.prior);
    check_finite(full + lp, "initial posterior log-density")?;
    Ok(ChainState {
        theta: theta0,
        u: None,
        log_prior: lp,
        log_second_stage: full + lp,
        log_first_stage: None,
        iteration: 0,
        kind: StateKind::Mh { full_loglik: full },
    })
}

/// One MH step: accept `theta'` with probability
/// `min(1, exp[(l' + log p') - (l_c + log p_c)])`. Costs `n` evaluations.
pub fn mh_step<M: PredictorModel, R: Rng>(
    state: &mut ChainState,
    ctx: &SamplerCtx<'_, M>,
    cfg: &ProposalConfig,
    rng: &mut R,
) -> Result<StepRecord> {
    let proposal = rw_propose(&state.theta, cfg, rng);

    let start = Instant::now();
    let full = full_log_likelihood(ctx.model, &proposal, ctx.data, ctx.ledger);
    ctx.ledger.push_stage2_time(start.elapsed().as_secs_f64());
    ctx.ledger.record_full_entry();

    let lp = log_prior(&proposal, ctx.prior);
    let log_ratio = check_finite((full + lp) - state.log_second_stage, "MH log ratio")?;
    let (accepted, alpha) = accept_log(log_ratio, rng);
    if accepted {
        state.theta = proposal;
        state.log_prior = lp;
        state.log_second_stage = full + lp;
        state.kind = StateKind::Mh { full_loglik: full };
    }
    state.iteration += 1;
    ctx.ledger.record_iteration();
    Ok(StepRecord {
        alpha1: alpha,
        alpha2: None,
        stage2_entered: true,
        accepted,
        u_refreshed: false,
        sigma_r: None,
        surrogate_extrapolated: false,
    })
}
