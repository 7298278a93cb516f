//! Goodness-of-fit test of "the sample was generated by ρ" against every
//! other stationary ergodic law.
//!
//! The test rejects when d̂(X, ρ) is at least a threshold γ. The ideal γ is
//! the smallest δ whose critical set `{d̂(X, ρ) >= δ}` has ρ-probability at
//! most α, which is not computable in general. It is replaced here by a
//! Monte Carlo surrogate: `n_cal` independent length-`n` samples are drawn
//! from ρ and the threshold is the `ceil((1 - α)(n_cal + 1))`-th smallest of
//! their distances. A fresh sample from ρ is exchangeable with the
//! calibration draws, which is what bounds the Type I error by α.
//!
//! One calibration may serve many test samples of the same length; the
//! bound then holds marginally for each test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{DistanceValue, PreparedModel, WeightScheme};
use crate::error::{Error, Result};
use crate::models::ProcessModel;
use crate::sample::Sample;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofConfig {
    pub alpha: f64,
    pub n: usize,
    pub n_cal: usize,
    pub seed: u64,
    pub scheme: WeightScheme,
}

impl GofConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n == 0 {
            return Err(Error::Config("sample length n must be at least 1".into()));
        }
        let min_cal = (1.0 / self.alpha).ceil() as usize;
        if self.n_cal < min_cal {
            return Err(Error::Config(format!(
                "n_cal = {} is too small for alpha = {}: need at least {min_cal}",
                self.n_cal, self.alpha
            )));
        }
        self.scheme.validate()
    }
}

/// A calibrated threshold, tied to the sample length and scheme it was
/// computed for.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub gamma_hat: f64,
    pub alpha: f64,
    pub n: usize,
    pub n_cal: usize,
    pub scheme: WeightScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "accept_H0")]
    AcceptH0,
    #[serde(rename = "reject_H0")]
    RejectH0,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofOutcome {
    pub decision: Decision,
    pub statistic: DistanceValue,
    pub gamma_hat: f64,
    pub n_cal_used: usize,
}

impl GofOutcome {
    pub fn rejected(&self) -> bool {
        self.decision == Decision::RejectH0
    }
}

/// 1-based rank `ceil((1 - alpha)(n_cal + 1))` of the conformal order statistic.
pub fn conformal_rank(n_cal: usize, alpha: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    // the epsilon keeps products like 0.95 * 1000 from rounding up a rank
    let k = ((1.0 - alpha) * (n_cal as f64 + 1.0) - 1e-9).ceil() as usize;
    let k = k.max(1);
    if k > n_cal {
        return Err(Error::Config(format!(
            "n_cal = {n_cal} calibration draws cannot certify alpha = {alpha}"
        )));
    }
    Ok(k)
}

/// The conformal order statistic of `scores`.
pub fn conformal_threshold(scores: &[f64], alpha: f64) -> Result<f64> {
    let k = conformal_rank(scores.len(), alpha)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k - 1])
}

/// d̂(S_i, ρ) for `n_cal` independent samples `S_i` of length `n` from ρ.
/// Draw `i` uses a seed derived from `(cfg.seed, i)`, so the result does
/// not depend on how the draws are scheduled.
pub fn calibration_scores(model: &ProcessModel, cfg: &GofConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let prepared = PreparedModel::new(model, &cfg.scheme)?;
    (0..cfg.n_cal)
        .into_par_iter()
        .map(|i| {
            let seed = seeds::derive(cfg.seed, &["gof-calibration".into(), i.into()]);
            let s = model.sample(cfg.n, seed)?;
            Ok(prepared.distance(&s)?.value)
        })
        .collect()
}

pub fn calibrate_gamma(model: &ProcessModel, cfg: &GofConfig) -> Result<Calibration> {
    let scores = calibration_scores(model, cfg)?;
    Ok(Calibration {
        gamma_hat: conformal_threshold(&scores, cfg.alpha)?,
        alpha: cfg.alpha,
        n: cfg.n,
        n_cal: cfg.n_cal,
        scheme: cfg.scheme,
    })
}

/// Rejects iff d̂(X, ρ) >= γ̂. `x` must have the calibrated length.
pub fn gof_test(x: &Sample, model: &ProcessModel, calibration: &Calibration) -> Result<GofOutcome> {
    if x.len() != calibration.n {
        return Err(Error::Config(format!(
            "sample length {} differs from the calibrated length {}",
            x.len(),
            calibration.n
        )));
    }
    let statistic = PreparedModel::new(model, &calibration.scheme)?.distance(x)?;
    Ok(decide(statistic, calibration))
}

pub(crate) fn decide(statistic: DistanceValue, calibration: &Calibration) -> GofOutcome {
    let decision = if statistic.value >= calibration.gamma_hat {
        Decision::RejectH0
    } else {
        Decision::AcceptH0
    };
    GofOutcome {
        decision,
        statistic,
        gamma_hat: calibration.gamma_hat,
        n_cal_used: calibration.n_cal,
    }
}
