//! Efficiency diagnostics: inefficiency factor, effective draws, relative
//! efficiency under the CPU-time and evaluation-count cost models, the
//! closed-form expected second-stage acceptance, and normality /
//! posterior-agreement checks.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::ledger::CostSnapshot;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Scaled complementary error function exp(x^2) erfc(x) for x >= 0, stable
/// for large x where exp(x^2) alone would overflow.
pub fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 5.0 {
        (x * x).exp() * erfc(x)
    } else {
        // asymptotic series 1/(x sqrt(pi)) * (1 - 1/(2x^2) + 3/(2x^2)^2 - ...)
        let inv2x2 = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut prev = f64::INFINITY;
        for k in 1..40 {
            term *= -((2 * k - 1) as f64) * inv2x2;
            if term.abs() >= prev {
                break; // asymptotic series started diverging
            }
            sum += term;
            prev = term.abs();
        }
        sum / (x * std::f64::consts::PI.sqrt())
    }
}

/// Expected second-stage acceptance probability of a delayed-acceptance MH
/// with a state-independent normal log-ratio estimator of standard deviation
/// `sigma_r`: `exp(sigma_r^2 / 2) (1 - Phi(sigma_r)) + 0.5`.
///
/// Evaluated via the scaled complementary error function so large `sigma_r`
/// neither overflows nor loses the (0.5, 1] range.
pub fn theorem1_expected_alpha2(sigma_r: f64) -> f64 {
    assert!(
        sigma_r >= 0.0 && sigma_r.is_finite(),
        "sigma_r must be finite and non-negative"
    );
    // exp(s^2/2) (1 - Phi(s)) = 0.5 exp(s^2/2) erfc(s/sqrt(2)) = 0.5 erfcx(s/sqrt(2))
    0.5 * erfcx(sigma_r / std::f64::consts::SQRT_2) + 0.5
}

/// Derivative of [`theorem1_expected_alpha2`] in `sigma_r`:
/// `sigma exp(sigma^2/2) (1 - Phi(sigma)) - 1/sqrt(2 pi)`, evaluated through
/// the scaled complementary error function. Strictly negative for all
/// `sigma_r >= 0`.
pub fn theorem1_derivative(sigma_r: f64) -> f64 {
    sigma_r * 0.5 * erfcx(sigma_r / std::f64::consts::SQRT_2)
        - 1.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// The auxiliary bracket `sigma - sigma Phi(sigma) - 1/sqrt(2 pi)`; its
/// maximum over sigma >= 0 is ~ -0.23 and strictly negative, evidence that
/// the expected second-stage acceptance decreases in `sigma_r`.
pub fn theorem1_derivative_bracket(sigma_r: f64) -> f64 {
    sigma_r * (1.0 - normal_cdf(sigma_r)) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inefficiency factor `1 + 2 sum rho_l` with the initial-monotone-positive-
/// sequence truncation on the pair sums `rho_{2k} + rho_{2k+1}`.
///
/// Returns `+inf` for a (numerically) constant chain and clamps antithetic
/// chains to 1.
pub fn inefficiency_factor(chain: &[f64]) -> Result<f64> {
    let n = chain.len();
    if n < 100 {
        return Err(Error::invalid(format!(
            "inefficiency factor needs a chain of length >= 100, got {n}"
        )));
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let c0 = chain.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 || !c0.is_finite() {
        log::warn!("constant chain: inefficiency factor undefined, reporting +inf");
        return Ok(f64::INFINITY);
    }
    let autocov = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..n - lag {
            acc += (chain[i] - mean) * (chain[i + lag] - mean);
        }
        acc / n as f64
    };

    // Gamma_k = rho_{2k} + rho_{2k+1}; accumulate while positive, enforcing
    // monotone non-increase.
    let mut sum_gamma = 0.0;
    let mut prev = f64::INFINITY;
    let max_pair = (n / 2).saturating_sub(1);
    for k in 0..max_pair {
        let g = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
        if g <= 0.0 {
            break;
        }
        let g = g.min(prev);
        sum_gamma += g;
        prev = g;
    }
    let raw = 2.0 * sum_gamma - 1.0;
    if raw < 1.0 {
        log::warn!("antithetic chain: raw inefficiency factor {raw:.3} clamped to 1");
    }
    Ok(raw.max(1.0))
}

/// Effective draws per cost unit: `N / (IF * cost)`.
pub fn effective_draws(n: f64, if_factor: f64, cost: f64) -> f64 {
    debug_assert!(if_factor >= 1.0 && cost > 0.0);
    n / (if_factor * cost)
}

/// Relative effective draws of an algorithm against the MH baseline.
pub fn relative_efficiency(ed_alg: f64, ed_mh: f64) -> f64 {
    debug_assert!(ed_mh > 0.0);
    ed_alg / ed_mh
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// How an algorithm maps onto the two-stage CPU cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpuCostTag {
    /// Single stage, every iteration is a full evaluation.
    Mh,
    /// Stage 1 every iteration, stage 2 on FullEval entries.
    DelayedAcceptance,
    /// Single estimated stage every iteration; the MH baseline time comes
    /// from the forced full-data timing sample.
    PseudoMarginal,
}

/// Median-based CPU cost of the algorithm and of the matched MH baseline:
/// `CPU_MH = N x median stage-2 time`,
/// `CPU_DA = N x median stage-1 time + FullEval x median stage-2 time`.
pub fn cpu_cost_model(
    tag: CpuCostTag,
    n_iters: u64,
    full_entries: u64,
    stage1_times: &[f64],
    stage2_times: &[f64],
) -> Result<(f64, f64)> {
    let med2 = median(stage2_times).ok_or_else(|| {
        Error::invalid("no stage-2 timings; collect a calibration sample at startup")
    })?;
    let n = n_iters as f64;
    let cpu_mh = n * med2;
    let cpu_alg = match tag {
        CpuCostTag::Mh => cpu_mh,
        CpuCostTag::DelayedAcceptance => {
            let med1 = median(stage1_times)
                .ok_or_else(|| Error::invalid("no stage-1 timings for a DA run"))?;
            n * med1 + full_entries as f64 * med2
        }
        CpuCostTag::PseudoMarginal => {
            let med1 = median(stage1_times)
                .ok_or_else(|| Error::invalid("no per-iteration timings for a PMMH run"))?;
            n * med1
        }
    };
    Ok((cpu_alg, cpu_mh))
}

/// Algorithm family for the evaluation-count model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    Mh,
    DaMh,
    Pmmh,
    Bpmmh,
    DaPmmh,
    DaBpmmh,
}

impl AlgorithmKind {
    pub fn is_pmmh_family(self) -> bool {
        matches!(
            self,
            AlgorithmKind::Pmmh | AlgorithmKind::Bpmmh | AlgorithmKind::DaPmmh | AlgorithmKind::DaBpmmh
        )
    }

    pub fn is_delayed(self) -> bool {
        matches!(
            self,
            AlgorithmKind::DaMh | AlgorithmKind::DaPmmh | AlgorithmKind::DaBpmmh
        )
    }
}

/// Everything the evaluation-count model needs to reproduce a run's ledger.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalModelInputs {
    pub algorithm: AlgorithmKind,
    /// Dataset size, subsample size, cluster counts (dense / sparse), number
    /// of exactly-summed positive-class observations.
    pub n: u64,
    pub m: u64,
    pub k_dense: u64,
    pub k_sparse: u64,
    pub p_pos: u64,
    /// Eval-equivalents per surrogate prediction (post-training DA-PMMH).
    pub pred_cost: u64,
    pub train_iters: u64,
    pub post_iters: u64,
    /// Second-stage entries during / after training.
    pub full_entries_train: u64,
    pub full_entries_post: u64,
    pub u_refreshes: u64,
    /// One-off optimizer / calibration evaluations, copied from the run.
    pub setup: u64,
}

/// Exact per-category expected counts under the documented accounting
/// conventions (initial state estimates and u-refresh recomputations are
/// itemized; the positive-class sum is a category of its own).
pub fn expected_counts(inp: &EvalModelInputs) -> CostSnapshot {
    let iters = inp.train_iters + inp.post_iters;
    let mut c = CostSnapshot {
        setup: inp.setup,
        full_entries: inp.full_entries_train + inp.full_entries_post,
        u_refreshes: inp.u_refreshes,
        iterations: iters,
        ..Default::default()
    };
    match inp.algorithm {
        AlgorithmKind::Mh => {
            // init + one full scan per iteration
            c.full_point = (iters + 1) * inp.n;
        }
        AlgorithmKind::DaMh => {
            // one estimate per iteration, plus init and u-refresh recomputes;
            // a full scan at init and on each stage-2 entry
            let estimates = iters + inp.u_refreshes + 1;
            c.subsample_point = estimates * inp.m;
            c.cluster_dense = estimates * inp.k_dense;
            c.positive_point = estimates * inp.p_pos;
            c.full_point = (c.full_entries + 1) * inp.n;
        }
        AlgorithmKind::Pmmh | AlgorithmKind::Bpmmh => {
            let estimates = iters + 1;
            c.subsample_point = estimates * inp.m;
            c.cluster_dense = estimates * inp.k_dense;
            c.positive_point = estimates * inp.p_pos;
        }
        AlgorithmKind::DaPmmh | AlgorithmKind::DaBpmmh => {
            // training: sparse + dense sums and residuals every iteration
            // (the true discrepancy needs both sums), plus the initial state;
            // post-training: sparse sum + residuals + prediction per
            // iteration, dense sum + fresh residual pass per stage-2 entry,
            // and one prediction to re-anchor the cached state at the phase
            // boundary.
            let t = inp.train_iters;
            let post = inp.post_iters;
            let f_post = inp.full_entries_post;
            c.cluster_sparse = (t + post + 1) * inp.k_sparse;
            c.cluster_dense = (t + 1) * inp.k_dense + f_post * inp.k_dense;
            c.subsample_point = (t + post + 1) * inp.m + f_post * inp.m;
            c.positive_point = (t + post + 1) * inp.p_pos;
            c.surrogate_pred = (post + 1) * inp.pred_cost;
        }
    }
    c
}

/// The per-iteration evaluation-count formulas in their standard form
/// (no init / refresh terms): MH `N x n`; DA-MH `N x (K + m) + FullEval x n`
/// (or `N x m + FullEval x n` without control variates); PMMH / BPMMH
/// `N x (K + m)`; delayed PMMH variants split by phase with the surrogate
/// prediction charged per iteration.
pub fn paper_eval_count(inp: &EvalModelInputs) -> u64 {
    let iters = inp.train_iters + inp.post_iters;
    let fulleval = inp.full_entries_train + inp.full_entries_post;
    match inp.algorithm {
        AlgorithmKind::Mh => iters * inp.n,
        AlgorithmKind::DaMh => iters * (inp.k_dense + inp.m) + fulleval * inp.n,
        AlgorithmKind::Pmmh | AlgorithmKind::Bpmmh => iters * (inp.k_dense + inp.m),
        AlgorithmKind::DaPmmh | AlgorithmKind::DaBpmmh => {
            inp.train_iters * (inp.k_sparse + inp.k_dense + inp.m)
                + inp.post_iters * (inp.k_sparse + inp.m + inp.pred_cost)
                + inp.full_entries_post * (inp.k_dense + inp.m)
        }
    }
}

/// Compare the closed-form counts against the instrumented ledger delta for
/// the MCMC phase; any mismatch is an internal-consistency error.
pub fn audit_counts(expected: &CostSnapshot, actual: &CostSnapshot) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::numerical(format!(
            "evaluation ledger mismatch:\n  expected {expected:?}\n  actual   {actual:?}"
        )))
    }
}

/// One-sample Kolmogorov-Smirnov check against the standard normal.
///
/// Returns the KS statistic and whether the sample passes at `significance`
/// (asymptotic p-value with the Stephens small-sample correction).
pub fn normality_check(samples: &[f64], significance: f64) -> Result<(f64, bool)> {
    if samples.len() < 1000 {
        return Err(Error::invalid(format!(
            "normality check needs >= 1000 replicates, got {}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = normal_cdf(x);
        d = d.max(((i + 1) as f64 / n - cdf).abs());
        d = d.max((cdf - i as f64 / n).abs());
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p = kolmogorov_survival(lambda);
    Ok((d, p > significance))
}

/// Asymptotic survival function of the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.1 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k as i32 - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// Two-sample KS distance with acceptance threshold scaled by *effective*
/// sample sizes, so autocorrelated MCMC output is not spuriously rejected.
pub fn ks_two_sample(
    a: &[f64],
    b: &[f64],
    ess_a: f64,
    ess_b: f64,
    significance: f64,
) -> (f64, bool) {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len(), sb.len());
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = sa[i].min(sb[j]);
        while i < na && sa[i] <= x {
            i += 1;
        }
        while j < nb && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let c = (-(significance / 2.0).ln() / 2.0).sqrt();
    let crit = c * ((ess_a + ess_b) / (ess_a * ess_b)).sqrt();
    (d, d <= crit)
}

/// Gaussian KDE evaluated on a grid, Silverman plug-in bandwidth.
pub fn kde_on_grid(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let bw = (1.06 * sd * n.powf(-0.2)).max(1e-12);
    let norm = 1.0 / (n * bw * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| {
            samples
                .iter()
                .map(|&x| (-0.5 * ((g - x) / bw).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Shared evaluation grid covering both samples with a margin.
pub fn kde_grid(a: &[f64], b: &[f64], points: usize) -> Vec<f64> {
    let lo = a
        .iter()
        .chain(b)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = a
        .iter()
        .chain(b)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let (lo, hi) = (lo - 0.1 * span, hi + 0.1 * span);
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Overlap coefficient of two kernel density estimates on a shared grid.
pub fn kde_overlap(a: &[f64], b: &[f64]) -> f64 {
    let grid = kde_grid(a, b, 512);
    let fa = kde_on_grid(a, &grid);
    let fb = kde_on_grid(b, &grid);
    let dx = grid[1] - grid[0];
    fa.iter().zip(&fb).map(|(x, y)| x.min(*y)).sum::<f64>() * dx
}

/// Per-parameter agreement of two chains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamAgreement {
    /// |mean_a - mean_b| in units of the pooled posterior SD.
    pub mean_diff_sd: f64,
    /// |mean_a - mean_b| in units of the combined Monte Carlo standard error.
    pub mean_diff_mcse: f64,
    pub ks_distance: f64,
    pub ks_pass: bool,
    pub overlap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgreementReport {
    pub per_param: Vec<ParamAgreement>,
}

/// Compare two chains coordinate by coordinate: mean differences in pooled-SD
/// and MCSE units, effective-sample-size-adjusted two-sample KS, and the KDE
/// overlap coefficient. `a[j]` / `b[j]` hold coordinate `j`'s draws.
pub fn posterior_agreement(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    significance: f64,
) -> Result<AgreementReport> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("chains have mismatched dimension"));
    }
    let mut per_param = Vec::with_capacity(a.len());
    for (xa, xb) in a.iter().zip(b) {
        let (ma, va) = mean_var(xa);
        let (mb, vb) = mean_var(xb);
        let pooled_sd = (0.5 * (va + vb)).sqrt().max(1e-300);
        let if_a = inefficiency_factor(xa)?;
        let if_b = inefficiency_factor(xb)?;
        let ess_a = xa.len() as f64 / if_a;
        let ess_b = xb.len() as f64 / if_b;
        let mcse = (va * if_a / xa.len() as f64 + vb * if_b / xb.len() as f64)
            .sqrt()
            .max(1e-300);
        let (ks, ks_pass) = ks_two_sample(xa, xb, ess_a, ess_b, significance);
        per_param.push(ParamAgreement {
            mean_diff_sd: (ma - mb).abs() / pooled_sd,
            mean_diff_mcse: (ma - mb).abs() / mcse,
            ks_distance: ks,
            ks_pass,
            overlap: kde_overlap(xa, xb),
        });
    }
    Ok(AgreementReport { per_param })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// The per-run diagnostics summary. Timing-derived entries (`ed_time`,
/// `red_time`) live in the quarantined timing report so this document stays
/// deterministic; they are kept here as optional fields for in-process use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Max-over-parameters inefficiency factor (the conservative aggregate).
    #[serde(rename = "if")]
    pub if_max: f64,
    pub if_mean: f64,
    pub if_per_param: Vec<f64>,
    pub ed_evals: f64,
    pub red_evals: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ed_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub red_time: Option<f64>,
    /// Mean first-stage acceptance probability.
    pub alpha1: f64,
    /// Mean second-stage acceptance conditional on first-stage acceptance.
    pub alpha2_cond: Option<f64>,
    /// Mean over iterations of the estimated sd of the log acceptance ratio.
    pub sigma_r_bar: Option<f64>,
    pub fulleval: u64,
    pub n_iters: u64,
    pub eval_count: u64,
}
