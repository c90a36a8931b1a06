//! Model abstraction: per-observation log-density and its first two
//! derivatives with respect to the scalar linear predictor `t = x_k' beta`,
//! plus the exact full-data log-likelihood and the Gaussian prior.
//!
//! Any model exposing `(h, h', h'')` of a scalar linear predictor plugs into
//! the estimator stack unchanged; the cluster moment trick needs derivatives
//! with respect to the data-dependent argument, which is why the interface is
//! per-predictor rather than fully general per-observation.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ledger::CostLedger;

/// Regression coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta: DVector<f64>,
}

impl Theta {
    pub fn new(beta: DVector<f64>) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("theta contains non-finite entries"));
        }
        Ok(Theta { beta })
    }

    pub fn from_slice(beta: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(beta))
    }

    pub fn zeros(p: usize) -> Self {
        Theta {
            beta: DVector::zeros(p),
        }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }
}

/// Isotropic Gaussian prior N(0, variance_scale * I).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Prior {
    variance_scale: f64,
}

impl Prior {
    pub fn new(variance_scale: f64) -> Result<Self> {
        if !(variance_scale > 0.0) || !variance_scale.is_finite() {
            return Err(Error::invalid(format!(
                "prior variance_scale must be a positive finite real, got {variance_scale}"
            )));
        }
        Ok(Prior { variance_scale })
    }

    pub fn variance_scale(&self) -> f64 {
        self.variance_scale
    }
}

impl Default for Prior {
    fn default() -> Self {
        Prior {
            variance_scale: 10.0,
        }
    }
}

/// Log-density of one observation as a function of its linear predictor.
///
/// `h` is the log-density, `d1`/`d2` its first and second derivatives in `t`.
pub trait PredictorModel: Sync {
    fn log_density(&self, t: f64, y: f64) -> f64;
    fn d1(&self, t: f64, y: f64) -> f64;
    fn d2(&self, t: f64, y: f64) -> f64;
}

/// Bernoulli-logistic model with success probability `sigma(t)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogisticModel;

/// log(1 + e^t), stable for |t| up to the f64 exponent range.
#[inline]
pub fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl PredictorModel for LogisticModel {
    /// y*log sigma(t) + (1-y)*log(1-sigma(t)) = y*t - log(1+e^t).
    fn log_density(&self, t: f64, y: f64) -> f64 {
        y * t - log1p_exp(t)
    }

    fn d1(&self, t: f64, y: f64) -> f64 {
        y - sigmoid(t)
    }

    fn d2(&self, t: f64, _y: f64) -> f64 {
        let s = sigmoid(t);
        -s * (1.0 - s)
    }
}

/// Gaussian response with unit noise: h(t, y) = -0.5 (y - t)^2 - 0.5 log(2 pi).
///
/// `h` is exactly quadratic in `t`, so second-order control variates are
/// exact; used to validate the estimator stack.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianResponseModel;

impl PredictorModel for GaussianResponseModel {
    fn log_density(&self, t: f64, y: f64) -> f64 {
        let r = y - t;
        -0.5 * r * r - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    fn d1(&self, t: f64, y: f64) -> f64 {
        y - t
    }

    fn d2(&self, _t: f64, _y: f64) -> f64 {
        -1.0
    }
}

/// Linear predictor of observation `k`.
#[inline]
pub fn predictor(theta: &Theta, k: usize, data: &Dataset) -> f64 {
    data.covariates().row(k).transpose().dot(&theta.beta)
}

/// Log-density of observation `k` at `theta`.
pub fn log_density_point<M: PredictorModel>(
    model: &M,
    theta: &Theta,
    k: usize,
    data: &Dataset,
) -> f64 {
    model.log_density(predictor(theta, k, data), data.response(k))
}

/// Exact full-data log-likelihood. Costs `n` evaluations.
pub fn full_log_likelihood<M: PredictorModel>(
    model: &M,
    theta: &Theta,
    data: &Dataset,
    ledger: &CostLedger,
) -> f64 {
    ledger.add_full_point(data.n() as u64);
    let t = data.covariates() * &theta.beta;
    let mut total = 0.0;
    for (k, &tk) in t.iter().enumerate() {
        total += model.log_density(tk, data.response(k));
    }
    total
}

/// Log-density of the N(0, tau^2 I) prior at `theta`.
pub fn log_prior(theta: &Theta, prior: &Prior) -> f64 {
    let tau2 = prior.variance_scale();
    let p = theta.dim() as f64;
    let norm = -0.5 * (2.0 * std::f64::consts::PI * tau2).ln();
    p * norm - theta.beta.norm_squared() / (2.0 * tau2)
}
