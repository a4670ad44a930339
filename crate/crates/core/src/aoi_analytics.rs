//! Closed-form average age of information for the M/G/1 update queue.
//!
//! Updates arrive as a Poisson process and are served one at a time; a
//! service occupies a geometric number of fixed-length transmission rounds
//! (success probability `1 - eps` per round). The first two service moments
//! and `E[e^(-lambda s)]` give the mean age
//!
//! `AAoI = E[s] + E[s^2] / (2 (1/lambda - E[s])) + (1/lambda - E[s]) / E[e^(-lambda s)]`
//!
//! together with a stability analysis of the queue.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finite_blocklength::{self, ErrorMethod, ErrorReport, FblError};
use crate::link_model::{SystemConfig, STABILITY_GUARD};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AoiError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("queue unstable: utilization lambda*E[s] = {utilization} >= 1")]
    Unstable { utilization: f64 },
    #[error(transparent)]
    ErrorModel(#[from] FblError),
}

/// First two moments of the service time, its Laplace transform at the
/// arrival rate, and the queue utilization they imply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceMoments {
    /// `E[s] = (nT + upsilon) / (1 - eps)`, seconds.
    pub mean_s: f64,
    /// `E[s^2] = (nT + upsilon)^2 (1 + eps) / (1 - eps)^2`, seconds^2.
    pub second_moment_s: f64,
    /// `E[e^(-lambda s)]`, dimensionless.
    pub mgf_neg_lambda: f64,
    /// Duration of a single transmission round `nT + upsilon`, seconds.
    pub attempt_duration: f64,
    /// Overall round error probability used.
    pub eps: f64,
    /// `rho = lambda E[s]`.
    pub utilization: f64,
}

/// How an age estimate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateSource {
    Analytic,
    Simulated,
}

/// Average age of information, with its additive decomposition when the
/// queue is stable. An unstable queue yields `stable = false` and an
/// infinite `aaoi` rather than an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoiEstimate {
    /// Average age, seconds; `f64::INFINITY` when unstable.
    pub aaoi: f64,
    /// Whether `lambda * E[s] < 1` (with a small relative guard band).
    pub stable: bool,
    /// `[E[s], waiting term, interarrival/mgf term]`; present when stable.
    pub breakdown: Option<[f64; 3]>,
    /// Analytic formula or simulation.
    pub source: EstimateSource,
    /// Half-width of the confidence interval (simulated estimates only).
    pub ci_halfwidth: Option<f64>,
}

/// Probability that a delivery needs exactly `m` rounds:
/// `(1 - eps) eps^(m-1)`.
pub fn retransmission_pmf(eps: f64, m: u32) -> Result<f64, AoiError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(AoiError::InvalidInput(format!(
            "retransmission_pmf requires 0 <= eps < 1, got {eps}"
        )));
    }
    if m < 1 {
        return Err(AoiError::InvalidInput(
            "attempt count m must be >= 1".into(),
        ));
    }
    Ok((1.0 - eps) * eps.powi(m as i32 - 1))
}

/// Service-time moments for round error probability `eps`, total blocklength
/// `n_total`, symbol duration `t_symbol`, extra round delay `upsilon` and
/// arrival rate `lambda`.
pub fn service_moments(
    eps: f64,
    n_total: f64,
    t_symbol: f64,
    upsilon: f64,
    lambda: f64,
) -> Result<ServiceMoments, AoiError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(AoiError::InvalidInput(format!(
            "service_moments requires 0 <= eps < 1, got {eps}"
        )));
    }
    if !(n_total > 0.0) || !(t_symbol > 0.0) || !(upsilon >= 0.0) || !(lambda > 0.0) {
        return Err(AoiError::InvalidInput(format!(
            "service_moments requires n_total, T, lambda > 0 and upsilon >= 0, \
             got n={n_total} T={t_symbol} upsilon={upsilon} lambda={lambda}"
        )));
    }
    let attempt = n_total * t_symbol + upsilon;
    let succ = 1.0 - eps;
    let mean_s = attempt / succ;
    let second_moment_s = attempt * attempt * (1.0 + eps) / (succ * succ);
    let decay = (-attempt * lambda).exp();
    let mgf_neg_lambda = succ * decay / (1.0 - eps * decay);
    Ok(ServiceMoments {
        mean_s,
        second_moment_s,
        mgf_neg_lambda,
        attempt_duration: attempt,
        eps,
        utilization: lambda * mean_s,
    })
}

/// Whether the M/G/1 queue is stable at these moments: `E[s] < 1/lambda`
/// with a relative guard band against cancellation in `1/lambda - E[s]`.
pub fn is_stable(moments: &ServiceMoments) -> bool {
    moments.utilization < 1.0 - STABILITY_GUARD
}

/// Mean waiting time of the stable M/G/1 queue (Pollaczek-Khinchine):
/// `E[w] = E[s^2] / (2 (E[X] - E[s]))` with `E[X] = 1/lambda`.
pub fn pk_mean_wait(moments: &ServiceMoments, lambda: f64) -> Result<f64, AoiError> {
    if !(lambda > 0.0) {
        return Err(AoiError::InvalidInput(format!(
            "pk_mean_wait requires lambda > 0, got {lambda}"
        )));
    }
    if !is_stable(moments) {
        return Err(AoiError::Unstable {
            utilization: moments.utilization,
        });
    }
    Ok(lambda * moments.second_moment_s / (2.0 * (1.0 - lambda * moments.mean_s)))
}

/// Analytic AAoI from precomputed service moments.
pub fn aaoi_from_moments(moments: &ServiceMoments, lambda: f64) -> AoiEstimate {
    if !is_stable(moments) {
        return AoiEstimate {
            aaoi: f64::INFINITY,
            stable: false,
            breakdown: None,
            source: EstimateSource::Analytic,
            ci_halfwidth: None,
        };
    }
    let inv_lambda = 1.0 / lambda;
    let slack = inv_lambda - moments.mean_s;
    let wait_term = moments.second_moment_s / (2.0 * slack);
    let mgf_term = slack / moments.mgf_neg_lambda;
    AoiEstimate {
        aaoi: moments.mean_s + wait_term + mgf_term,
        stable: true,
        breakdown: Some([moments.mean_s, wait_term, mgf_term]),
        source: EstimateSource::Analytic,
        ci_halfwidth: None,
    }
}

/// Analytic AAoI for a given overall round error probability and the timing
/// parameters of `cfg`. Used by sweeps and by the simulator cross-checks.
pub fn aaoi_with_eps(cfg: &SystemConfig, eps: f64) -> Result<AoiEstimate, AoiError> {
    let m = service_moments(
        eps,
        cfg.n_total as f64,
        cfg.symbol_duration_s,
        cfg.channel_delay_s,
        cfg.lambda_rate,
    )?;
    Ok(aaoi_from_moments(&m, cfg.lambda_rate))
}

/// Analytic AAoI of a full configuration; the round error probability comes
/// from the finite-blocklength error model via `error_method`.
pub fn aaoi_analytic(
    cfg: &SystemConfig,
    error_method: ErrorMethod,
) -> Result<(AoiEstimate, ErrorReport), AoiError> {
    cfg.validate().map_err(FblError::from)?;
    let report = finite_blocklength::system_error(cfg, error_method)?;
    if report.eps_overall >= 1.0 {
        // Certain failure: no update is ever delivered.
        return Ok((
            AoiEstimate {
                aaoi: f64::INFINITY,
                stable: false,
                breakdown: None,
                source: EstimateSource::Analytic,
                ci_halfwidth: None,
            },
            report,
        ));
    }
    let estimate = aaoi_with_eps(cfg, report.eps_overall)?;
    Ok((estimate, report))
}
