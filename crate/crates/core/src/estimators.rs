//! Subsampled log-likelihood estimators.
//!
//! The full-data log-likelihood over a clustered scope is decomposed as
//! `l = q + d` where `q` is the control-variate sum (cheap, `K` evaluations
//! via cluster moments) and `d` the residual total, estimated from `m`
//! with-replacement draws by the Hansen-Hurwitz estimator. The positive
//! class is always summed exactly. The "bias-corrected" likelihood estimate
//! subtracts half the estimated variance in log space and is never
//! exponentiated.

use rand::Rng;

use crate::data::{ClusterModel, Dataset};
use crate::error::{Error, Result};
use crate::ledger::CostLedger;
use crate::model::{log_density_point, PredictorModel, Theta};

/// Which control variate enters the difference estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvMode {
    /// q_k = 0 for all k (the plain subsampling estimator).
    None,
    /// Second-order term evaluated at a fixed optimum theta*.
    Static,
    /// Second-order term evaluated at the theta being evaluated.
    Dynamic,
}

/// Control-variate configuration; `theta_star` is required iff `mode` is
/// [`CvMode::Static`].
#[derive(Debug, Clone)]
pub struct CvConfig {
    pub mode: CvMode,
    pub theta_star: Option<Theta>,
}

impl CvConfig {
    pub fn none() -> Self {
        CvConfig {
            mode: CvMode::None,
            theta_star: None,
        }
    }

    pub fn dynamic() -> Self {
        CvConfig {
            mode: CvMode::Dynamic,
            theta_star: None,
        }
    }

    pub fn static_at(theta_star: Theta) -> Self {
        CvConfig {
            mode: CvMode::Static,
            theta_star: Some(theta_star),
        }
    }
}

/// Ledger bucket for control-variate sums; the delayed-acceptance PMMH
/// samplers use a sparse model in stage one and a dense one in stage two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterTier {
    Dense,
    Sparse,
}

/// The auxiliary vector `u`: `m` with-replacement draws of scope positions,
/// partitioned into `G` contiguous blocks for correlated refresh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsampleIndices {
    u: Vec<usize>,
    g: usize,
    scope_len: usize,
}

impl SubsampleIndices {
    /// Draw `m` positions uniformly with replacement from `0..scope_len`.
    pub fn draw<R: Rng>(scope_len: usize, m: usize, g: usize, rng: &mut R) -> Result<Self> {
        Self::validate(scope_len, m, g)?;
        let u = (0..m).map(|_| rng.random_range(0..scope_len)).collect();
        Ok(SubsampleIndices { u, g, scope_len })
    }

    /// Wrap explicit positions (used by exhaustive-enumeration oracles).
    pub fn from_positions(u: Vec<usize>, g: usize, scope_len: usize) -> Result<Self> {
        Self::validate(scope_len, u.len(), g)?;
        if u.iter().any(|&i| i >= scope_len) {
            return Err(Error::invalid("subsample position outside scope"));
        }
        Ok(SubsampleIndices { u, g, scope_len })
    }

    fn validate(scope_len: usize, m: usize, g: usize) -> Result<()> {
        if scope_len == 0 {
            return Err(Error::invalid("empty scope"));
        }
        if m == 0 {
            return Err(Error::invalid("subsample size m must be >= 1"));
        }
        if g == 0 || m % g != 0 {
            return Err(Error::invalid(format!(
                "block count G = {g} must divide m = {m}"
            )));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.u.len()
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn scope_len(&self) -> usize {
        self.scope_len
    }

    pub fn positions(&self) -> &[usize] {
        &self.u
    }

    /// Redraw one uniformly chosen block, leaving the other `G - 1` intact.
    /// `G = 1` recovers a full redraw.
    pub fn refresh_block<R: Rng>(&self, rng: &mut R) -> SubsampleIndices {
        let mut next = self.clone();
        let block = rng.random_range(0..self.g);
        let len = self.u.len() / self.g;
        for slot in &mut next.u[block * len..(block + 1) * len] {
            *slot = rng.random_range(0..self.scope_len);
        }
        next
    }
}

/// The difference estimate of the log-likelihood at one `theta`:
/// `value = q_sum + d_hat + exact_positive_part`, with the Hansen-Hurwitz
/// residual estimate `d_hat`, its estimated variance `sigma2_hat`, and the
/// "bias-corrected" value `value - sigma2_hat / 2`.
#[derive(Debug, Clone)]
pub struct LogLikEstimate {
    pub q_sum: f64,
    pub d_hat: f64,
    pub sigma2_hat: f64,
    pub value: f64,
    pub corrected_value: f64,
    pub exact_positive_part: f64,
    /// Pointwise residuals d_{u_i} = l_{u_i} - q_{u_i}, kept so the
    /// difference-of-log-likelihoods variance can be formed without
    /// re-evaluating the sample.
    pub residuals: Vec<f64>,
}

/// Returns the log of the "bias-corrected" likelihood estimate,
/// `value - sigma2_hat / 2`; kept in log space throughout.
pub fn bias_corrected_likelihood_log(est: &LogLikEstimate) -> f64 {
    est.value - est.sigma2_hat / 2.0
}

/// Estimated variance of the difference-of-log-likelihoods estimator from
/// two pointwise-residual vectors sharing the same `u`:
/// `sigma_zeta2_hat / m` with the m-1 divisor.
pub fn ratio_sigma2_hat(res_c: &[f64], res_p: &[f64], scope_len: usize) -> f64 {
    let m = res_c.len();
    debug_assert_eq!(m, res_p.len());
    debug_assert!(m >= 2);
    let diffs: Vec<f64> = res_c.iter().zip(res_p).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / m as f64;
    let s2 = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (scope_len as f64).powi(2) * s2 / m as f64
}

/// Estimator bundle: model, data, cluster moments and control-variate
/// configuration. All operations are pure given `(theta, u)`; ledger
/// increments are atomic.
pub struct Estimator<'a, M: PredictorModel> {
    model: &'a M,
    data: &'a Dataset,
    clusters: &'a ClusterModel,
    cv: CvConfig,
    tier: ClusterTier,
    ledger: &'a CostLedger,
    /// Centroid predictors at theta* (static mode), precomputed once.
    t_star: Option<Vec<f64>>,
}

impl<'a, M: PredictorModel> Estimator<'a, M> {
    pub fn new(
        model: &'a M,
        data: &'a Dataset,
        clusters: &'a ClusterModel,
        cv: CvConfig,
        ledger: &'a CostLedger,
    ) -> Result<Self> {
        Self::with_tier(model, data, clusters, cv, ClusterTier::Dense, ledger)
    }

    pub fn with_tier(
        model: &'a M,
        data: &'a Dataset,
        clusters: &'a ClusterModel,
        cv: CvConfig,
        tier: ClusterTier,
        ledger: &'a CostLedger,
    ) -> Result<Self> {
        let t_star = match cv.mode {
            CvMode::Static => {
                let ts = cv
                    .theta_star
                    .as_ref()
                    .ok_or_else(|| Error::invalid("static control variates need theta_star"))?;
                if ts.dim() != data.p() {
                    return Err(Error::invalid("theta_star dimension mismatch"));
                }
                Some(
                    (0..clusters.k())
                        .map(|c| clusters.centroids().row(c).transpose().dot(&ts.beta))
                        .collect(),
                )
            }
            _ => None,
        };
        Ok(Estimator {
            model,
            data,
            clusters,
            cv,
            tier,
            ledger,
            t_star,
        })
    }

    pub fn clusters(&self) -> &'a ClusterModel {
        self.clusters
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn model(&self) -> &'a M {
        self.model
    }

    pub fn cv_mode(&self) -> CvMode {
        self.cv.mode
    }

    pub fn cv_config(&self) -> &CvConfig {
        &self.cv
    }

    pub fn tier(&self) -> ClusterTier {
        self.tier
    }

    fn centroid_predictor(&self, cluster: usize, theta: &Theta) -> f64 {
        self.clusters
            .centroids()
            .row(cluster)
            .transpose()
            .dot(&theta.beta)
    }

    /// Predictor at which the second-order term is evaluated.
    fn curvature_predictor(&self, cluster: usize, t_c: f64) -> f64 {
        match self.cv.mode {
            CvMode::Static => self.t_star.as_ref().unwrap()[cluster],
            _ => t_c,
        }
    }

    fn cv_point_inner(&self, theta: &Theta, k: usize, cluster: usize, t_c: f64) -> f64 {
        if self.cv.mode == CvMode::None {
            return 0.0;
        }
        let y = self.clusters.scope_response();
        let t_k = self.data.covariates().row(k).transpose().dot(&theta.beta);
        let dt = t_k - t_c;
        let t_curv = self.curvature_predictor(cluster, t_c);
        self.model.log_density(t_c, y)
            + self.model.d1(t_c, y) * dt
            + 0.5 * self.model.d2(t_curv, y) * dt * dt
    }

    /// Second-order control variate q_k(theta) for dataset index `k`.
    /// Errors if `k` is outside the clustered scope.
    pub fn cv_point(&self, theta: &Theta, k: usize) -> Result<f64> {
        let cluster = self
            .clusters
            .cluster_of(k)
            .ok_or_else(|| Error::invalid(format!("index {k} outside clustered scope")))?;
        let t_c = self.centroid_predictor(cluster, theta);
        Ok(self.cv_point_inner(theta, k, cluster, t_c))
    }

    /// Control-variate sum q(theta) over the scope via cluster moments.
    /// Costs `K` evaluations (none for [`CvMode::None`]).
    pub fn cv_sum(&self, theta: &Theta) -> f64 {
        if self.cv.mode == CvMode::None {
            return 0.0;
        }
        let k = self.clusters.k() as u64;
        match self.tier {
            ClusterTier::Dense => self.ledger.add_cluster_dense(k),
            ClusterTier::Sparse => self.ledger.add_cluster_sparse(k),
        }
        let y = self.clusters.scope_response();
        let mut total = 0.0;
        for c in 0..self.clusters.k() {
            let t_c = self.centroid_predictor(c, theta);
            let t_curv = self.curvature_predictor(c, t_c);
            let n_c = self.clusters.counts()[c] as f64;
            let quad = (&self.clusters.dev_outer_sums()[c] * &theta.beta).dot(&theta.beta);
            total += n_c * self.model.log_density(t_c, y)
                + self.model.d1(t_c, y) * self.clusters.dev_sums()[c].dot(&theta.beta)
                + 0.5 * self.model.d2(t_curv, y) * quad;
        }
        total
    }

    /// Exact sum of the positive-class log-densities. Costs `P` evaluations,
    /// tracked in the dedicated ledger bucket.
    pub fn exact_positive_sum(&self, theta: &Theta) -> f64 {
        let pos = self.data.positive_index();
        self.ledger.add_positive_point(pos.len() as u64);
        pos.iter()
            .map(|&k| log_density_point(self.model, theta, k, self.data))
            .sum()
    }

    /// Pointwise residuals d_{u_i} and the Hansen-Hurwitz statistics
    /// (d_hat, sigma2_hat). Costs `m` evaluations.
    pub fn residual_stats(&self, theta: &Theta, u: &SubsampleIndices) -> ResidualStats {
        self.ledger.add_subsample_point(u.m() as u64);
        let n_scope = self.clusters.scope_len() as f64;
        // centroid predictors computed on demand, memoized per cluster
        let mut t_c_cache: Vec<f64> = vec![f64::NAN; self.clusters.k()];
        let mut residuals = Vec::with_capacity(u.m());
        for &pos in u.positions() {
            let k = self.clusters.scope()[pos];
            let cluster = self.clusters.assignment()[pos];
            let l_k = log_density_point(self.model, theta, k, self.data);
            let q_k = if self.cv.mode == CvMode::None {
                0.0
            } else {
                if t_c_cache[cluster].is_nan() {
                    t_c_cache[cluster] = self.centroid_predictor(cluster, theta);
                }
                self.cv_point_inner(theta, k, cluster, t_c_cache[cluster])
            };
            residuals.push(l_k - q_k);
        }
        let m = u.m() as f64;
        let mean = residuals.iter().sum::<f64>() / m;
        let d_hat = n_scope * mean;
        let sigma2_hat = if u.m() >= 2 {
            let s2 = residuals.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0);
            n_scope * n_scope * s2 / m
        } else {
            f64::NAN
        };
        ResidualStats {
            d_hat,
            sigma2_hat,
            residuals,
        }
    }

    /// The difference estimator of the full-data log-likelihood:
    /// `q(theta) + d_hat + exact positive part`, with estimated variance.
    /// Costs `m + K + P` evaluations. Requires `m >= 2` so the variance
    /// estimator is defined.
    pub fn difference_estimate(&self, theta: &Theta, u: &SubsampleIndices) -> Result<LogLikEstimate> {
        if u.m() < 2 {
            return Err(Error::invalid(
                "difference estimate needs m >= 2 (variance estimator undefined)",
            ));
        }
        if u.scope_len() != self.clusters.scope_len() {
            return Err(Error::invalid("subsample drawn over a different scope"));
        }
        let q_sum = self.cv_sum(theta);
        let stats = self.residual_stats(theta, u);
        let exact_positive_part = self.exact_positive_sum(theta);
        let value = q_sum + stats.d_hat + exact_positive_part;
        Ok(LogLikEstimate {
            q_sum,
            d_hat: stats.d_hat,
            sigma2_hat: stats.sigma2_hat,
            value,
            corrected_value: value - stats.sigma2_hat / 2.0,
            exact_positive_part,
            residuals: stats.residuals,
        })
    }

    /// Difference-of-log-likelihoods estimator of `l(theta_c) - l(theta_p)`
    /// with the same `u` at both parameter values; returns the estimate and
    /// the estimated variance `sigma_zeta2_hat / m`. Diagnostics only.
    pub fn log_ratio_estimate(
        &self,
        theta_c: &Theta,
        theta_p: &Theta,
        u: &SubsampleIndices,
    ) -> Result<(f64, f64)> {
        if u.m() < 2 {
            return Err(Error::invalid("ratio estimate needs m >= 2"));
        }
        let stats_c = self.residual_stats(theta_c, u);
        let stats_p = self.residual_stats(theta_p, u);
        let fixed_c = self.cv_sum(theta_c) + self.exact_positive_sum(theta_c);
        let fixed_p = self.cv_sum(theta_p) + self.exact_positive_sum(theta_p);
        let value = (fixed_c + stats_c.d_hat) - (fixed_p + stats_p.d_hat);
        let var = ratio_sigma2_hat(
            &stats_c.residuals,
            &stats_p.residuals,
            self.clusters.scope_len(),
        );
        Ok((value, var))
    }

    /// Population residuals d_k over the whole scope, in scope order.
    /// Oracle/diagnostic helper; not ledgered.
    pub fn population_residuals(&self, theta: &Theta) -> Vec<f64> {
        self.clusters
            .scope()
            .iter()
            .enumerate()
            .map(|(pos, &k)| {
                let cluster = self.clusters.assignment()[pos];
                let t_c = self.centroid_predictor(cluster, theta);
                let l_k = log_density_point(self.model, theta, k, self.data);
                l_k - self.cv_point_inner(theta, k, cluster, t_c)
            })
            .collect()
    }
}

/// Hansen-Hurwitz statistics of one pointwise pass.
#[derive(Debug, Clone)]
pub struct ResidualStats {
    pub d_hat: f64,
    pub sigma2_hat: f64,
    pub residuals: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_clusters, generate_synthetic, CovariateLaw, SyntheticSpec};
    use crate::model::{full_log_likelihood, GaussianResponseModel, LogisticModel};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn negatives_dataset(n: usize, p: usize, seed: u64) -> Dataset {
        // all-negative synthetic covariates (responses forced to 0)
        let spec = SyntheticSpec {
            n,
            p,
            true_beta: vec![0.0; p],
            covariate_law: CovariateLaw::GaussianMixture,
            seed,
        };
        let base = generate_synthetic(&spec).unwrap();
        Dataset::from_parts(vec![0.0; n], base.covariates().clone()).unwrap()
    }

    /// Population sigma_eta^2 = n_scope * sum_k (d_k - d_bar)^2 with d_bar
    /// the population mean; independent oracle.
    fn population_sigma_eta2(d: &[f64]) -> f64 {
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        n * d.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    }

    #[test]
    fn cv_point_at_centroid_row_is_exact() {
        // A point whose row equals its centroid has zero deviation, so
        // q_k = l_k exactly.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let data = Dataset::from_parts(vec![0.0; 3], x).unwrap();
        let cm = build_clusters(&data, 1, &[0, 1, 2], 0).unwrap();
        let ledger = CostLedger::new();
        let model = LogisticModel;
        let est = Estimator::new(&model, &data, &cm, CvConfig::dynamic(), &ledger).unwrap();
        let theta = Theta::from_slice(&[0.4, -0.9]).unwrap();
        let q = est.cv_point(&theta, 1).unwrap();
        let l = log_density_point(&model, &theta, 1, &data);
        assert_relative_eq!(q, l, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_model_control_variates_are_exact_pointwise() {
        let data = {
            let spec = SyntheticSpec {
                n: 50,
                p: 3,
                true_beta: vec![0.0; 3],
                covariate_law: CovariateLaw::StandardNormal,
                seed: 4,
            };
            let base = generate_synthetic(&spec).unwrap();
            Dataset::from_parts(vec![0.0; 50], base.covariates().clone()).unwrap()
        };
        let cm = build_clusters(&data, 5, &(0..50).collect::<Vec<_>>(), 2).unwrap();
        let ledger = CostLedger::new();
        let model = GaussianResponseModel;
        let theta = Theta::from_slice(&[1.0, -0.5, 0.7]).unwrap();
        for cfg in [CvConfig::dynamic(), CvConfig::static_at(Theta::zeros(3))] {
            let est = Estimator::new(&model, &data, &cm, cfg, &ledger).unwrap();
            for k in 0..50 {
                let q = est.cv_point(&theta, k).unwrap();
                let l = log_density_point(&model, &theta, k, &data);
                assert_relative_eq!(q, l, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn mode_none_is_identically_zero() {
        let data = negatives_dataset(20, 2, 9);
        let cm = build_clusters(&data, 3, &(0..20).collect::<Vec<_>>(), 1).unwrap();
        let ledger = CostLedger::new();
        let model = LogisticModel;
        let est = Estimator::new(&model, &data, &cm, CvConfig::none(), &ledger).unwrap();
        let theta = Theta::from_slice(&[0.3, 1.0]).unwrap();
        for k in 0..20 {
            assert_eq!(est.cv_point(&theta, k).unwrap(), 0.0);
        }
        assert_eq!(est.cv_sum(&theta), 0.0);
        assert_eq!(ledger.snapshot().cluster_dense, 0);
    }

    #[test]
    fn cv_point_outside_scope_errors() {
        let data = negatives_dataset(10, 2, 3);
        let cm = build_clusters(&data, 2, &[0, 1, 2, 3, 4], 0).unwrap();
        let ledger = CostLedger::new();
        let model = LogisticModel;
        let est = Estimator::new(&model, &data, &cm, CvConfig::dynamic(), &ledger).unwrap();
        let theta = Theta::zeros(2);
        assert!(est.cv_point(&theta, 7).is_err());
    }

    #[test]
    fn cv_sum_matches_brute_force_pointwise_sum() {
        let data = negatives_dataset(200, 3, 12);
        let scope: Vec<usize> = (0..200).collect();
        let cm = build_clusters(&data, 7, &scope, 5).unwrap();
        let ledger = CostLedger::new();
        let model = LogisticModel;
        let theta = Theta::from_slice(&[0.8, -0.4, 0.2]).unwrap();

        for cfg in [
            CvConfig::dynamic(),
            CvConfig::static_at(Theta::from_slice(&[0.1, 0.1, 0.1]).unwrap()),
        ] {
            let est = Estimator::new(&model, &data, &cm, cfg, &ledger).unwrap();
            let fast = est.cv_sum(&theta);
            let brute: f64 = scope.iter().map(|&k| est.cv_point(&theta, k).unwrap()).sum();
            assert_relative_eq!(fast, brute, max_relative = 1e-9);
        }
        // ledger: two dense sums of K = 7
        assert_eq!(ledger.snapshot().cluster_dense, 14);
    }

    #[test]
    fn singleton_clusters_make_cv_sum_exact() {
        let data = negatives_dataset(30, 2, 6);
        let scope: Vec<usize> = (0..30).collect();
        let cm = build_clusters(&data, 30, &scope, 1).unwrap();
        let ledger = CostLedger::new();
        let model = LogisticModel;
        let est = Estimator::new(&model, &data, &cm, CvConfig::dynamic(), &ledger).unwrap();
        let theta = Theta::from_slice(&[0.5, 0.5]).unwrap();
        let q = est.cv_sum(&theta);
        let l = full_log_likelihood(&model, &theta, &data, &ledger);
        assert_relative_eq!(q, l, max_relative = 1e-12);
    }

    #[test]
    fn perfect_control_variates_give_zero_variance_estimate() {
        let data = {
            let spec = SyntheticSpec {
                n: 40,
                p: 2,
                true_beta: vec![0.0; 2],
                covariate_law: CovariateLaw::StandardNormal,
                seed: 8,
            };
            let base = generate_synthetic(&spec).unwrap();
            Dataset::from_parts(vec![0.0; 40], base.covariates().clone()).unwrap()
        };
        let cm = build_clusters(&data, 4, &(0..40).collect::<Vec<_>>(), 3).unwrap();
        let ledger = CostLedger::new();
        let model = GaussianResponseModel;
        let est = Estimator::new(&model, &data, &cm, CvConfig::dynamic(), &ledger).unwrap();
        let theta = Theta::from_slice(&[0.9, -1.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u = SubsampleIndices::draw(40, 8, 1, &mut rng).unwrap();
        let e = est.difference_estimate(&theta, &u).unwrap();
        let l = full_log_likelihood(&model, &theta, &data, &ledger);
        assert!(e.d_hat.abs() < 1e-9);
        assert!(e.sigma2_hat.abs() < 1e-12);
        assert_relative_eq!(e.value, l, max_relative = 1e-12);
        assert_relative_eq!(e.corrected_value, e.value, epsilon = 1e-12);
    }

    #[test]
    fn exhaustive_enumeration_reproduces_mean_and_variance() {
        // 4-point scope, m = 2: averaging over all 16 ordered subsamples must
        // reproduce E[l_hat] = l and E[sigma_eta2_hat] = sigma_eta^2 exactly.
        // One positive row exercises the exact positive part.
        let x = DMatrix::from_row_slice(
            5,
            2,
            &[1.0, 0.3, 1.0, -1.2, 1.0, 0.8, 1.0, 2.0, 1.0, -0.5],
        );
        let data = Dataset::from_parts(vec![0.0, 0.0, 0.0, 0.0, 1.0], x).unwrap();
        let scope = vec![0usize, 1, 2, 3];
        let cm = build_clusters(&data, 2, &scope, 0).unwrap();
        let ledger = CostLedger::new();
        let model = LogisticModel;
        let theta = Theta::from_slice(&[0.4, 0.7]).unwrap();

        for cfg in [CvConfig::none(), CvConfig::dynamic()] {
            let est = Estimator::new(&model, &data, &cm, cfg, &ledger).unwrap();
            let l = full_log_likelihood(&model, &theta, &data, &ledger);
            let d_pop = est.population_residuals(&theta);
            let sigma_eta2 = population_sigma_eta2(&d_pop);

            let mut sum_value = 0.0;
            let mut sum_sigma_eta2_hat = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    let u = SubsampleIndices::from_positions(vec![i, j], 1, 4).unwrap();
                    let e = est.difference_estimate(&theta, &u).unwrap();
                    sum_value += e.value;
                    sum_sigma_eta2_hat += e.sigma2_hat * 2.0; // sigma_eta2_hat = m * sigma2_hat
                }
            }
            assert_relative_eq!(sum_value / 16.0, l, max_relative = 1e-12);
            assert_relative_eq!(
                sum_sigma_eta2_hat / 16.0,
                sigma_eta2,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn exhaustive_enumeration_for_the_ratio_estimator() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 1.0, -1.2, 1.0, 0.8, 1.0, 2.0]);
        let data = Dataset::from_parts(vec![0.0; 4], x).unwrap();
        let scope = vec![0usize, 1, 2, 3];
        let cm = build_clusters(&data, 2, &scope, 0).unwrap();
        let ledger = CostLedger::new();
        let model = LogisticModel;
        let theta_c = Theta::from_slice(&[0.4, 0.7]).unwrap();
        let theta_p = Theta::from_slice(&[0.1, 1.0]).unwrap();
        let est = Estimator::new(&model, &data, &cm, CvConfig::dynamic(), &ledger).unwrap();

        let l_diff = full_log_likelihood(&model, &theta_c, &data, &ledger)
            - full_log_likelihood(&model, &theta_p, &data, &ledger);
        // population D_k and its variance oracle
        let dc = est.population_residuals(&theta_c);
        let dp = est.population_residuals(&theta_p);
        let big_d: Vec<f64> = dc.iter().zip(&dp).map(|(a, b)| a - b).collect();
        let sigma_zeta2 = population_sigma_eta2(&big_d);

        let mut sum_value = 0.0;
        let mut sum_var = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let u = SubsampleIndices::from_positions(vec![i, j], 1, 4).unwrap();
                let (v, var) = est.log_ratio_estimate(&theta_c, &theta_p, &u).unwrap();
                sum_value += v;
                sum_var += var * 2.0; // var = sigma_zeta2_hat / m
            }
        }
        assert_relative_eq!(sum_value / 16.0, l_diff, max_relative = 1e-10);
        assert_relative_eq!(sum_var / 16.0, sigma_zeta2, max_relative = 1e-10);
    }

    #[test]
    fn ratio_estimate_trivial_identities() {
        let data = negatives_dataset(60, 2, 15);
        let cm = build_clusters(&data, 5, &(0..60).collect::<Vec<_>>(), 2).unwrap();
        let ledger = CostLedger::new();
        let model = LogisticModel;
        let est = Estimator::new(&model, &data, &cm, CvConfig::dynamic(), &ledger).unwrap();
        let theta_c = Theta::from_slice(&[0.2, -0.4]).unwrap();
        let theta_p = Theta::from_slice(&[-0.6, 0.9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = SubsampleIndices::draw(60, 10, 1, &mut rng).unwrap();

        // theta_c = theta_p: value and variance vanish
        let (v0, var0) = est.log_ratio_estimate(&theta_c, &theta_c, &u).unwrap();
        assert_eq!(v0, 0.0);
        assert_eq!(var0, 0.0);

        // equals the difference of two shared-u difference estimates
        let (v, _) = est.log_ratio_estimate(&theta_c, &theta_p, &u).unwrap();
        let ec = est.difference_estimate(&theta_c, &u).unwrap();
        let ep = est.difference_estimate(&theta_p, &u).unwrap();
        assert_relative_eq!(v, ec.value - ep.value, max_relative = 1e-10);
    }

    #[test]
    fn m_below_two_is_rejected() {
        let data = negatives_dataset(10, 2, 1);
        let cm = build_clusters(&data, 2, &(0..10).collect::<Vec<_>>(), 0).unwrap();
        let ledger = CostLedger::new();
        let model = LogisticModel;
        let est = Estimator::new(&model, &data, &cm, CvConfig::none(), &ledger).unwrap();
        let theta = Theta::zeros(2);
        let u = SubsampleIndices::from_positions(vec![3], 1, 10).unwrap();
        assert!(est.difference_estimate(&theta, &u).is_err());
        assert!(est.log_ratio_estimate(&theta, &theta, &u).is_err());
    }

    #[test]
    fn bias_correction_trivial_and_monte_carlo() {
        // sigma2_hat = 0 leaves the value unchanged.
        let est = LogLikEstimate {
            q_sum: 0.0,
            d_hat: 0.0,
            sigma2_hat: 0.0,
            value: -3.5,
            corrected_value: -3.5,
            exact_positive_part: 0.0,
            residuals: vec![],
        };
        assert_eq!(bias_corrected_likelihood_log(&est), -3.5);

        // With l_hat ~ N(l, sigma2) and the true variance plugged in, the
        // corrected estimate is unbiased for exp(l): Monte Carlo check.
        let (l, sigma) = (-2.0f64, 0.8f64);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let x = (l + sigma * z - sigma * sigma / 2.0).exp();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let sd = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - l.exp()).abs() < 3.0 * sd,
            "mean {mean} vs exp(l) {} (3se = {})",
            l.exp(),
            3.0 * sd
        );
    }

    #[test]
    fn difference_estimate_ledger_accounting() {
        let data = {
            let spec = SyntheticSpec {
                n: 100,
                p: 2,
                true_beta: vec![0.0, 1.0],
                covariate_law: CovariateLaw::StandardNormal,
                seed: 30,
            };
            generate_synthetic(&spec).unwrap()
        };
        let scope = data.negative_index().to_vec();
        let cm = build_clusters(&data, 4, &scope, 0).unwrap();
        let ledger = CostLedger::new();
        let model = LogisticModel;
        let est = Estimator::new(&model, &data, &cm, CvConfig::dynamic(), &ledger).unwrap();
        let theta = Theta::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = SubsampleIndices::draw(scope.len(), 10, 2, &mut rng).unwrap();
        est.difference_estimate(&theta, &u).unwrap();
        let snap = ledger.snapshot();
        assert_eq!(snap.subsample_point, 10);
        assert_eq!(snap.cluster_dense, 4);
        assert_eq!(snap.positive_point, data.positive_index().len() as u64);
        // arithmetic identity value = q_sum + d_hat + positive part
        let e = est.difference_estimate(&theta, &u).unwrap();
        assert_relative_eq!(
            e.value,
            e.q_sum + e.d_hat + e.exact_positive_part,
            epsilon = 1e-12
        );
        assert!(e.sigma2_hat >= 0.0);
    }

    #[test]
    fn block_refresh_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let u = SubsampleIndices::draw(1000, 100, 10, &mut rng).unwrap();

        // one block differs, nine are untouched
        let next = u.refresh_block(&mut rng);
        let len = 10;
        let changed: Vec<usize> = (0..10)
            .filter(|&b| u.positions()[b * len..(b + 1) * len] != next.positions()[b * len..(b + 1) * len])
            .collect();
        assert!(changed.len() <= 1);

        // G = m replaces exactly one index
        let u1 = SubsampleIndices::draw(1000, 50, 50, &mut rng).unwrap();
        let n1 = u1.refresh_block(&mut rng);
        let diff = u1
            .positions()
            .iter()
            .zip(n1.positions())
            .filter(|(a, b)| a != b)
            .count();
        assert!(diff <= 1);

        // G = 1 redraws everything (same distribution as a fresh draw)
        let u2 = SubsampleIndices::draw(1000, 50, 1, &mut rng).unwrap();
        let n2 = u2.refresh_block(&mut rng);
        assert_eq!(n2.m(), 50);
        assert!(u2.positions() != n2.positions());
    }

    #[test]
    fn subsample_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(SubsampleIndices::draw(10, 9, 2, &mut rng).is_err()); // G !| m
        assert!(SubsampleIndices::draw(10, 0, 1, &mut rng).is_err());
        assert!(SubsampleIndices::draw(0, 2, 1, &mut rng).is_err());
        assert!(SubsampleIndices::from_positions(vec![11], 1, 10).is_err());
        let u = SubsampleIndices::draw(10, 6, 3, &mut rng).unwrap();
        assert_eq!(u.m(), 6);
        assert_eq!(u.g(), 3);
        assert!(u.positions().iter().all(|&i| i < 10));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            /// cv_sum via moments equals the brute-force pointwise sum for
            /// random parameter values.
            #[test]
            fn moment_sum_equals_pointwise_sum(
                b0 in -2.0f64..2.0,
                b1 in -2.0f64..2.0,
                seed in 0u64..50,
            ) {
                let data = negatives_dataset(80, 2, seed);
                let scope: Vec<usize> = (0..80).collect();
                let cm = build_clusters(&data, 6, &scope, seed).unwrap();
                let ledger = CostLedger::new();
                let model = LogisticModel;
                let est = Estimator::new(&model, &data, &cm, CvConfig::dynamic(), &ledger).unwrap();
                let theta = Theta::from_slice(&[b0, b1]).unwrap();
                let fast = est.cv_sum(&theta);
                let brute: f64 = scope.iter().map(|&k| est.cv_point(&theta, k).unwrap()).sum();
                prop_assert!((fast - brute).abs() <= 1e-9 * brute.abs().max(1.0));
            }

            /// The estimate decomposes exactly and its variance term is
            /// non-negative for random subsamples.
            #[test]
            fn estimate_identity_holds(seed in 0u64..100, m in 2usize..20) {
                let data = negatives_dataset(50, 2, 99);
                let scope: Vec<usize> = (0..50).collect();
                let cm = build_clusters(&data, 5, &scope, 7).unwrap();
                let ledger = CostLedger::new();
                let model = LogisticModel;
                let est = Estimator::new(&model, &data, &cm, CvConfig::dynamic(), &ledger).unwrap();
                let theta = Theta::from_slice(&[0.3, -0.6]).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let u = SubsampleIndices::draw(50, m, 1, &mut rng).unwrap();
                let e = est.difference_estimate(&theta, &u).unwrap();
                prop_assert!(e.sigma2_hat >= 0.0);
                prop_assert!((e.value - (e.q_sum + e.d_hat + e.exact_positive_part)).abs() < 1e-9);
                prop_assert!((bias_corrected_likelihood_log(&e) - (e.value - e.sigma2_hat / 2.0)).abs() < 1e-12);
            }
        }
    }
}
