//! Surrogate regression for the discrepancy `e(theta) = q(theta) - q1(theta)`
//! between the dense and sparse control-variate sums.
//!
//! During the training period the proposed parameter values and their
//! observed discrepancies are collected; afterwards a fitted model predicts
//! `e(theta)` so the first stage never has to evaluate the dense sum.
//! Two backends: least squares on a quadratic feature basis, and a noise-free
//! Gaussian process with a squared-exponential kernel (median-distance length
//! scale, no hyperparameter optimization, small jitter for conditioning).

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Theta;

const MAGIC: &[u8; 4] = b"SMD1";
/// Relative jitter ladder for the GP kernel diagonal; the smallest value
/// that yields a positive-definite factorization wins, keeping noise-free
/// interpolation tight on well-conditioned problems.
const GP_JITTERS: [f64; 4] = [1e-12, 1e-10, 1e-8, 1e-6];
/// Predictions beyond this multiple of the training radius are flagged.
const HULL_FACTOR: f64 = 1.5;

/// One training pair collected during the training period.
#[derive(Debug, Clone)]
pub struct DiscrepancySample {
    pub theta: Theta,
    pub e_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateBackend {
    Linear,
    Gp,
}

#[derive(Debug, Clone)]
enum Fitted {
    Linear {
        weights: DVector<f64>,
    },
    Gp {
        length_scale: f64,
        signal_var: f64,
        train_mean: f64,
        inputs: Vec<DVector<f64>>,
        /// Precomputed K^{-1} (e - mean).
        alpha: DVector<f64>,
    },
}

/// A fitted discrepancy model.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    backend: SurrogateBackend,
    p: usize,
    n_train: usize,
    fitted: Fitted,
    /// In-sample residual RMS.
    residual_rms: f64,
    /// Wall-clock seconds spent fitting.
    fit_seconds: f64,
    /// Fit cost expressed as a multiple of the mean per-iteration wall time
    /// during training; set by the run driver once that time is known.
    fit_cost_t: f64,
    /// Center and radius of the training inputs, for extrapolation flagging.
    train_center: DVector<f64>,
    train_radius: f64,
}

/// Prediction of the discrepancy at one parameter value.
#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    pub e_hat: f64,
    /// Cost in evaluation-equivalents: 1 for linear, n_train for the GP.
    pub cost: u64,
    /// True when `theta` lies far outside the training hull.
    pub extrapolating: bool,
}

/// Quadratic feature basis `[1, theta, vech(theta theta^T)]`.
pub fn feature_count(p: usize) -> usize {
    1 + p + p * (p + 1) / 2
}

fn features(beta: &DVector<f64>) -> DVector<f64> {
    let p = beta.len();
    let mut f = DVector::zeros(feature_count(p));
    f[0] = 1.0;
    for j in 0..p {
        f[1 + j] = beta[j];
    }
    let mut idx = 1 + p;
    for i in 0..p {
        for j in i..p {
            f[idx] = beta[i] * beta[j];
            idx += 1;
        }
    }
    f
}

/// Fit a surrogate on the collected training pairs.
pub fn fit_surrogate(
    samples: &[DiscrepancySample],
    backend: SurrogateBackend,
) -> Result<SurrogateModel> {
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let p = samples[0].theta.dim();
    if samples.iter().any(|s| s.theta.dim() != p) {
        return Err(Error::invalid("training inputs of mixed dimension"));
    }
    if samples.iter().any(|s| !s.e_value.is_finite()) {
        return Err(Error::invalid("non-finite discrepancy in training data"));
    }
    let min_samples = match backend {
        SurrogateBackend::Linear => feature_count(p).max(9) + 1,
        SurrogateBackend::Gp => 10,
    };
    if samples.len() < min_samples {
        return Err(Error::invalid(format!(
            "need at least {min_samples} training samples, got {}",
            samples.len()
        )));
    }
    let first = &samples[0].theta.beta;
    if samples.iter().all(|s| s.theta.beta == *first) {
        return Err(Error::invalid("all training inputs identical"));
    }

    let start = Instant::now();
    let n = samples.len();
    let targets = DVector::from_fn(n, |i, _| samples[i].e_value);
    let inputs: Vec<DVector<f64>> = samples.iter().map(|s| s.theta.beta.clone()).collect();

    let center = {
        let mut c = DVector::zeros(p);
        for x in &inputs {
            c += x;
        }
        c / n as f64
    };
    let radius = inputs
        .iter()
        .map(|x| (x - &center).norm())
        .fold(0.0f64, f64::max);

    let fitted = match backend {
        SurrogateBackend::Linear => {
            let nf = feature_count(p);
            let design = DMatrix::from_fn(n, nf, |i, j| features(&inputs[i])[j]);
            let svd = design.clone().svd(true, true);
            let tol = 1e-12 * svd.singular_values.max();
            let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
            if rank < nf {
                log::warn!(
                    "surrogate design matrix rank-deficient ({rank} < {nf}); using minimum-norm solution"
                );
            }
            let weights = svd
                .solve(&targets, tol)
                .map_err(|e| Error::numerical(format!("least squares failed: {e}")))?;
            Fitted::Linear { weights }
        }
        SurrogateBackend::Gp => {
            let length_scale = median_pairwise_distance(&inputs)?;
            let e_mean = targets.sum() / n as f64;
            let centered = targets.map(|v| v - e_mean);
            let mut signal_var =
                centered.iter().map(|v| v * v).sum::<f64>() / (n as f64 - 1.0);
            if signal_var < 1e-300 {
                signal_var = 1.0; // constant targets: alpha = 0, predict mean
            }
            let mut kmat = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let d2 = (&inputs[i] - &inputs[j]).norm_squared();
                    let v = signal_var * (-d2 / (2.0 * length_scale * length_scale)).exp();
                    kmat[(i, j)] = v;
                    kmat[(j, i)] = v;
                }
            }
            let mut chol = None;
            for &jitter in &GP_JITTERS {
                let mut kj = kmat.clone();
                for i in 0..n {
                    kj[(i, i)] += jitter * signal_var;
                }
                if let Some(c) = kj.cholesky() {
                    chol = Some(c);
                    break;
                }
            }
            let chol = chol
                .ok_or_else(|| Error::numerical("GP kernel matrix not PD even with jitter"))?;
            let alpha = chol.solve(&centered);
            Fitted::Gp {
                length_scale,
                signal_var,
                train_mean: e_mean,
                inputs,
                alpha,
            }
        }
    };
    let fit_seconds = start.elapsed().as_secs_f64();

    let mut model = SurrogateModel {
        backend,
        p,
        n_train: n,
        fitted,
        residual_rms: 0.0,
        fit_seconds,
        fit_cost_t: 0.0,
        train_center: center,
        train_radius: radius,
    };
    let mut ss = 0.0;
    for s in samples {
        let r = model.predict_value(&s.theta) - s.e_value;
        ss += r * r;
    }
    model.residual_rms = (ss / n as f64).sqrt();
    if !model.residual_rms.is_finite() {
        return Err(Error::numerical("non-finite in-sample residuals"));
    }
    Ok(model)
}

fn median_pairwise_distance(inputs: &[DVector<f64>]) -> Result<f64> {
    let mut dists = Vec::new();
    for i in 0..inputs.len() {
        for j in (i + 1)..inputs.len() {
            let d = (&inputs[i] - &inputs[j]).norm();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return Err(Error::invalid("degenerate training inputs for GP"));
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(dists[dists.len() / 2])
}

impl SurrogateModel {
    pub fn backend(&self) -> SurrogateBackend {
        self.backend
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn residual_rms(&self) -> f64 {
        self.residual_rms
    }

    pub fn fit_seconds(&self) -> f64 {
        self.fit_seconds
    }

    pub fn fit_cost_t(&self) -> f64 {
        self.fit_cost_t
    }

    /// Record the fit cost as a multiple of the mean training-iteration time.
    pub fn set_fit_cost_t(&mut self, t: f64) {
        self.fit_cost_t = t;
    }

    /// Evaluation-equivalents charged per prediction.
    pub fn prediction_cost(&self) -> u64 {
        match self.backend {
            SurrogateBackend::Linear => 1,
            SurrogateBackend::Gp => self.n_train as u64,
        }
    }

    fn predict_value(&self, theta: &Theta) -> f64 {
        match &self.fitted {
            Fitted::Linear { weights } => features(&theta.beta).dot(weights),
            Fitted::Gp {
                length_scale,
                signal_var,
                train_mean,
                inputs,
                alpha,
            } => {
                let mut acc = 0.0;
                for (x, a) in inputs.iter().zip(alpha.iter()) {
                    let d2 = (x - &theta.beta).norm_squared();
                    acc += a * signal_var * (-d2 / (2.0 * length_scale * length_scale)).exp();
                }
                train_mean + acc
            }
        }
    }

    /// Predict the discrepancy at `theta`.
    pub fn predict(&self, theta: &Theta) -> Prediction {
        let e_hat = self.predict_value(theta);
        let extrapolating =
            (&theta.beta - &self.train_center).norm() > HULL_FACTOR * self.train_radius;
        Prediction {
            e_hat,
            cost: self.prediction_cost(),
            extrapolating,
        }
    }

    /// Serialize to the self-describing binary blob (not a stability-
    /// guaranteed format; for run resumption only).
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = BufWriter::new(f);
        w.write_all(MAGIC)?;
        let tag: u8 = match self.backend {
            SurrogateBackend::Linear => 0,
            SurrogateBackend::Gp => 1,
        };
        w.write_all(&[tag])?;
        w.write_all(&(self.p as u64).to_le_bytes())?;
        w.write_all(&(self.n_train as u64).to_le_bytes())?;
        for v in [
            self.residual_rms,
            self.fit_seconds,
            self.fit_cost_t,
            self.train_radius,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.train_center.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        match &self.fitted {
            Fitted::Linear { weights } => {
                w.write_all(&(weights.len() as u64).to_le_bytes())?;
                for v in weights.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Fitted::Gp {
                length_scale,
                signal_var,
                train_mean,
                inputs,
                alpha,
            } => {
                for v in [*length_scale, *signal_var, *train_mean] {
                    w.write_all(&v.to_le_bytes())?;
                }
                for x in inputs {
                    for v in x.iter() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                for v in alpha.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut r = BufReader::new(f);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("not a surrogate model blob"));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let backend = match tag[0] {
            0 => SurrogateBackend::Linear,
            1 => SurrogateBackend::Gp,
            t => return Err(Error::format(format!("unknown backend tag {t}"))),
        };
        fn read_u64(r: &mut BufReader<std::fs::File>) -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        }
        fn read_f64(r: &mut BufReader<std::fs::File>) -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        }
        let p = read_u64(&mut r)? as usize;
        let n_train = read_u64(&mut r)? as usize;
        let residual_rms = read_f64(&mut r)?;
        let fit_seconds = read_f64(&mut r)?;
        let fit_cost_t = read_f64(&mut r)?;
        let train_radius = read_f64(&mut r)?;
        let mut center = DVector::zeros(p);
        for j in 0..p {
            center[j] = read_f64(&mut r)?;
        }
        let fitted = match backend {
            SurrogateBackend::Linear => {
                let nf = read_u64(&mut r)? as usize;
                let mut weights = DVector::zeros(nf);
                for j in 0..nf {
                    weights[j] = read_f64(&mut r)?;
                }
                Fitted::Linear { weights }
            }
            SurrogateBackend::Gp => {
                let length_scale = read_f64(&mut r)?;
                let signal_var = read_f64(&mut r)?;
                let train_mean = read_f64(&mut r)?;
                let mut inputs = Vec::with_capacity(n_train);
                for _ in 0..n_train {
                    let mut x = DVector::zeros(p);
                    for j in 0..p {
                        x[j] = read_f64(&mut r)?;
                    }
                    inputs.push(x);
                }
                let mut alpha = DVector::zeros(n_train);
                for i in 0..n_train {
                    alpha[i] = read_f64(&mut r)?;
                }
                Fitted::Gp {
                    length_scale,
                    signal_var,
                    train_mean,
                    inputs,
                    alpha,
                }
            }
        };
        Ok(SurrogateModel {
            backend,
            p,
            n_train,
            fitted,
            residual_rms,
            fit_seconds,
            fit_cost_t,
            train_center: center,
            train_radius,
        })
    }
}
