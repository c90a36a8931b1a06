//! One-off setup work: the posterior-mode fit used by static control
//! variates and proposal-free initialization, and the pre-run calibration of
//! the subsample size against a variance target.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{Estimator, SubsampleIndices};
use crate::ledger::CostLedger;
use crate::model::{PredictorModel, Prior, Theta};

/// Newton iterations on the full-data posterior; each iteration is one full
/// scan, logged to the setup bucket. Deterministic.
pub fn fit_mode<M: PredictorModel>(
    model: &M,
    data: &Dataset,
    prior: &Prior,
    max_iters: usize,
    grad_tol: f64,
    ledger: &CostLedger,
) -> Result<Theta> {
    let n = data.n();
    let p = data.p();
    let tau2 = prior.variance_scale();
    let mut beta = DVector::zeros(p);

    for _ in 0..max_iters {
        ledger.add_setup(n as u64);
        let t = data.covariates() * &beta;
        let mut grad = -&beta / tau2;
        let mut hess = DMatrix::from_diagonal_element(p, p, -1.0 / tau2);
        for k in 0..n {
            let y = data.response(k);
            let d1 = model.d1(t[k], y);
            let d2 = model.d2(t[k], y);
            let row = data.covariates().row(k).transpose();
            grad += d1 * &row;
            hess += d2 * &row * row.transpose();
        }
        if grad.amax() < grad_tol {
            return Theta::new(beta);
        }
        let step = hess
            .lu()
            .solve(&grad)
            .ok_or_else(|| Error::numerical("singular Hessian in mode fit"))?;
        beta -= step;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::numerical("mode fit diverged"));
        }
    }
    Theta::new(beta)
}

/// Smallest subsample size (a multiple of `g`) whose estimated variance at
/// `theta_star`, averaged over `reps` seeded draws, meets `target_sigma2`.
/// The probing evaluations are logged to the setup bucket.
pub fn calibrate_subsample_size<M: PredictorModel, R: Rng>(
    est: &Estimator<'_, M>,
    theta_star: &Theta,
    target_sigma2: f64,
    g: usize,
    reps: usize,
    rng: &mut R,
    ledger: &CostLedger,
) -> Result<usize> {
    if !(target_sigma2 > 0.0) {
        return Err(Error::invalid("variance target must be positive"));
    }
    let scope_len = est.clusters().scope_len();
    let scratch = CostLedger::new();
    let mut m = (2 * g).max(g); // m >= 2 and divisible by g
    loop {
        let mut mean_sigma2 = 0.0;
        for _ in 0..reps.max(1) {
            let u = SubsampleIndices::draw(scope_len, m, g, rng)?;
            // probes run against a scratch ledger; their total lands in the
            // setup bucket below
            let scratch_est = est_with_ledger(est, &scratch)?;
            let e = scratch_est.difference_estimate(theta_star, &u)?;
            mean_sigma2 += e.sigma2_hat;
        }
        mean_sigma2 /= reps.max(1) as f64;
        if mean_sigma2 <= target_sigma2 || m >= scope_len {
            if mean_sigma2 > target_sigma2 {
                log::warn!(
                    "subsample calibration hit the scope size with sigma2 = {mean_sigma2:.3} \
                     above target {target_sigma2}"
                );
            }
            ledger.add_setup(scratch.eval_total());
            return Ok(m);
        }
        m = (m * 2).min(((scope_len + g - 1) / g) * g);
    }
}

fn est_with_ledger<'a, M: PredictorModel>(
    est: &Estimator<'a, M>,
    ledger: &'a CostLedger,
) -> Result<Estimator<'a, M>> {
    Estimator::with_tier(
        est.model(),
        est.data(),
        est.clusters(),
        est.cv_config().clone(),
        est.tier(),
        ledger,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_clusters, generate_synthetic, CovariateLaw, SyntheticSpec};
    use crate::estimators::CvConfig;
    use crate::model::{log_prior, LogisticModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn newton_finds_the_posterior_mode() {
        let spec = SyntheticSpec {
            n: 2000,
            p: 3,
            true_beta: vec![-1.0, 0.8, -0.5],
            covariate_law: CovariateLaw::StandardNormal,
            seed: 12,
        };
        let data = generate_synthetic(&spec).unwrap();
        let model = LogisticModel;
        let prior = Prior::default();
        let ledger = CostLedger::new();
        let mode = fit_mode(&model, &data, &prior, 50, 1e-10, &ledger).unwrap();

        // the gradient at the mode vanishes and nearby perturbations lower
        // the posterior log-density
        let posterior = |theta: &Theta| {
            crate::model::full_log_likelihood(&model, theta, &data, &CostLedger::new())
                + log_prior(theta, &prior)
        };
        let at_mode = posterior(&mode);
        for j in 0..3 {
            for delta in [-0.05, 0.05] {
                let mut perturbed = mode.clone();
                perturbed.beta[j] += delta;
                assert!(posterior(&perturbed) < at_mode);
            }
        }
        // mode is near the generating coefficients at this n
        for j in 0..3 {
            assert!(
                (mode.beta[j] - spec.true_beta[j]).abs() < 0.35,
                "beta[{j}] = {}",
                mode.beta[j]
            );
        }
        assert!(ledger.snapshot().setup >= 2000);
    }

    #[test]
    fn calibration_returns_smallest_adequate_multiple() {
        let spec = SyntheticSpec {
            n: 3000,
            p: 2,
            true_beta: vec![-1.5, 1.0],
            covariate_law: CovariateLaw::StandardNormal,
            seed: 5,
        };
        let data = generate_synthetic(&spec).unwrap();
        let scope = data.negative_index().to_vec();
        let cm = build_clusters(&data, 30, &scope, 1).unwrap();
        let model = LogisticModel;
        let ledger = CostLedger::new();
        let est = Estimator::new(&model, &data, &cm, CvConfig::dynamic(), &ledger).unwrap();
        let mode = fit_mode(&model, &data, &Prior::default(), 50, 1e-8, &ledger).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = calibrate_subsample_size(&est, &mode, 3.3, 10, 5, &mut rng, &ledger).unwrap();
        assert!(m % 10 == 0 && m >= 20);
        assert!(m <= scope.len());
        // the probing work landed in the setup bucket, not the run counters
        let snap = ledger.snapshot();
        assert!(snap.setup > 0);
        assert_eq!(snap.subsample_point, 0);
    }
}
