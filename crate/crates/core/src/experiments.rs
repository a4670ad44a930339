//! Parameter sweeps and optimum finders over the analytic and simulated
//! age models.
//!
//! A sweep evaluates one parameter over an ordered grid, holding the rest of
//! the configuration fixed; coupled factors stay consistent (sweeping
//! `eta_sr` sets `eta_rd = 1 - eta_sr`, sweeping `phi_s` sets
//! `phi_r = 1 - phi_s`). Unstable points are flagged and never participate in
//! the argmin. Grid points evaluate in parallel; results are gathered in grid
//! order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi_analytics::{self, AoiError};
use crate::aoi_simulator::{self, SimError, SimMode};
use crate::finite_blocklength::{self, ErrorMethod, FblError};
use crate::link_model::{ConfigError, SystemConfig};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    ErrorModel(#[from] FblError),
    #[error(transparent)]
    Analytics(#[from] AoiError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("no stable bracket inside the requested bounds")]
    NoStableBracket,
}

/// Which configuration field a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    LambdaRate,
    NTotal,
    EtaSr,
    PhiS,
    KBits,
}

impl SweepParameter {
    /// Whether the parameter only takes whole-number values.
    pub fn is_integer(self) -> bool {
        matches!(self, SweepParameter::NTotal | SweepParameter::KBits)
    }

    pub fn key(self) -> &'static str {
        match self {
            SweepParameter::LambdaRate => "lambda_rate",
            SweepParameter::NTotal => "n_total",
            SweepParameter::EtaSr => "eta_sr",
            SweepParameter::PhiS => "phi_s",
            SweepParameter::KBits => "k_bits",
        }
    }
}

/// Whether rows carry analytic values, simulated values, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluator {
    Analytic,
    Simulated,
    Both,
}

/// Channel model used for a sweep's simulated column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepSimMode {
    /// Fixed per-round error probability taken from the closed form at each
    /// grid point.
    FixedEpsFromClosedForm,
    /// Full per-round fading and decoding draws.
    SampledFading,
}

/// One parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    /// Strictly increasing, non-empty grid of parameter values.
    pub grid: Vec<f64>,
    pub base: SystemConfig,
    pub evaluator: Evaluator,
    /// Replications per simulated grid point.
    pub replications: u32,
    /// Horizon per simulated replication, seconds.
    pub horizon_s: f64,
    pub seed: u64,
    pub sim_mode: SweepSimMode,
    /// Error-probability route feeding the analytic column.
    pub error_method: ErrorMethod,
}

impl SweepSpec {
    /// Analytic-only sweep over the parameter's default grid.
    pub fn analytic(parameter: SweepParameter, base: SystemConfig) -> Self {
        Self {
            parameter,
            grid: default_grid(parameter),
            base,
            evaluator: Evaluator::Analytic,
            replications: 10,
            horizon_s: 2.0e4,
            seed: 1,
            sim_mode: SweepSimMode::FixedEpsFromClosedForm,
            error_method: ErrorMethod::ClosedForm,
        }
    }

    fn validate(&self) -> Result<(), SweepError> {
        if self.grid.is_empty() {
            return Err(SweepError::InvalidSpec("grid is empty".into()));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SweepError::InvalidSpec(
                "grid must be strictly increasing".into(),
            ));
        }
        if self.evaluator != Evaluator::Analytic {
            if self.replications == 0 {
                return Err(SweepError::InvalidSpec("replications must be >= 1".into()));
            }
            if !(self.horizon_s > 0.0) {
                return Err(SweepError::InvalidSpec(format!(
                    "horizon must be positive, got {}",
                    self.horizon_s
                )));
            }
        }
        for &v in &self.grid {
            apply_param(&self.base, self.parameter, v)?.validate()?;
        }
        Ok(())
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param_value: f64,
    /// Analytic AAoI, seconds; infinite when unstable.
    pub aaoi_analytic: f64,
    /// Replication-mean simulated AAoI, when simulated.
    pub aaoi_sim: Option<f64>,
    /// Confidence half-width of the simulated mean.
    pub ci_halfwidth: Option<f64>,
    pub eps_overall: f64,
    pub stable: bool,
}

/// Sweep output: rows in grid order plus the argmin over stable rows
/// (ties resolved toward the smaller parameter value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
    /// `(param_value, aaoi)` of the best stable row; `None` if none is stable.
    pub argmin: Option<(f64, f64)>,
}

/// Result of [`find_optimum`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub param_value: f64,
    pub aaoi: f64,
    /// False when the search fell back to the grid argmin.
    pub refined: bool,
}

/// A family of blocklength-allocation curves, one per power split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationStudy {
    pub eta_grid: Vec<f64>,
    pub curves: Vec<AllocationCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationCurve {
    pub phi_s: f64,
    /// AAoI per `eta_grid` entry; infinite entries are unstable points.
    pub aaoi: Vec<f64>,
    pub min_aaoi: f64,
    pub argmin_eta: f64,
}

/// Default grid for each sweep parameter: update rates 1..=33, blocklengths
/// 20..=300 step 10 densified near the short-block region, allocation factors
/// 0.05..=0.95 step 0.05.
pub fn default_grid(parameter: SweepParameter) -> Vec<f64> {
    match parameter {
        SweepParameter::LambdaRate => (1..=33).map(f64::from).collect(),
        SweepParameter::NTotal => {
            let mut g: Vec<f64> = vec![10.0, 15.0, 25.0];
            g.extend((2..=30).map(|i| 10.0 * i as f64));
            g.sort_by(|a, b| a.partial_cmp(b).unwrap());
            g
        }
        SweepParameter::EtaSr | SweepParameter::PhiS => {
            (1..=19).map(|i| i as f64 / 20.0).collect()
        }
        SweepParameter::KBits => {
            let mut g: Vec<f64> = vec![1.0, 5.0, 10.0, 25.0, 50.0];
            g.extend((1..=10).map(|i| 100.0 * i as f64 / 2.0));
            g.sort_by(|a, b| a.partial_cmp(b).unwrap());
            g.dedup();
            g
        }
    }
}

/// Applies one parameter value to a base configuration, maintaining the
/// coupled allocation constraints.
pub fn apply_param(
    base: &SystemConfig,
    parameter: SweepParameter,
    value: f64,
) -> Result<SystemConfig, SweepError> {
    let mut cfg = base.clone();
    if parameter.is_integer() && (value.fract() != 0.0 || value < 1.0 || value > u32::MAX as f64)
    {
        return Err(SweepError::InvalidSpec(format!(
            "`{}` must be a positive whole number, got {value}",
            parameter.key()
        )));
    }
    match parameter {
        SweepParameter::LambdaRate => cfg.lambda_rate = value,
        SweepParameter::NTotal => cfg.n_total = value as u32,
        SweepParameter::KBits => cfg.k_bits = value as u32,
        SweepParameter::EtaSr => {
            cfg.eta_sr = value;
            cfg.eta_rd = 1.0 - value;
        }
        SweepParameter::PhiS => {
            cfg.phi_s = value;
            cfg.phi_r = 1.0 - value;
        }
    }
    Ok(cfg)
}

fn eval_row(spec: &SweepSpec, index: usize, value: f64) -> Result<SweepRow, SweepError> {
    let cfg = apply_param(&spec.base, spec.parameter, value)?;
    let (estimate, report) = aoi_analytics::aaoi_analytic(&cfg, spec.error_method)?;

    let mut aaoi_sim = None;
    let mut ci_halfwidth = None;
    if spec.evaluator != Evaluator::Analytic && estimate.stable {
        let mode = match spec.sim_mode {
            SweepSimMode::FixedEpsFromClosedForm => SimMode::FixedEps(report.eps_overall),
            SweepSimMode::SampledFading => SimMode::SampledFading,
        };
        let row_seed = aoi_simulator::replication_seed(spec.seed, index as u32);
        let agg = aoi_simulator::simulate_replicated(
            &cfg,
            spec.horizon_s,
            row_seed,
            mode,
            spec.replications,
        )?;
        aaoi_sim = Some(agg.mean_aaoi);
        ci_halfwidth = Some(agg.ci_halfwidth);
    }

    Ok(SweepRow {
        param_value: value,
        aaoi_analytic: estimate.aaoi,
        aaoi_sim,
        ci_halfwidth,
        eps_overall: report.eps_overall,
        stable: estimate.stable,
    })
}

/// Evaluates the sweep. Rows appear in grid order regardless of the parallel
/// execution schedule; an all-unstable sweep yields `argmin: None`.
pub fn sweep(spec: &SweepSpec) -> Result<SweepResult, SweepError> {
    spec.validate()?;
    let rows: Result<Vec<SweepRow>, SweepError> = spec
        .grid
        .par_iter()
        .enumerate()
        .map(|(i, &v)| eval_row(spec, i, v))
        .collect();
    let rows = rows?;

    let objective = |r: &SweepRow| -> f64 {
        if spec.evaluator == Evaluator::Simulated {
            r.aaoi_sim.unwrap_or(f64::INFINITY)
        } else {
            r.aaoi_analytic
        }
    };
    let mut argmin: Option<(f64, f64)> = None;
    for row in rows.iter().filter(|r| r.stable) {
        let v = objective(row);
        // Strict comparison keeps ties at the smaller parameter value.
        let better = match argmin {
            None => true,
            Some((_, best)) => v < best,
        };
        if better {
            argmin = Some((row.param_value, v));
        }
    }
    Ok(SweepResult {
        parameter: spec.parameter,
        rows,
        argmin,
    })
}

/// Golden-section refinement of the analytic AAoI around the sweep's grid
/// argmin, restricted to `bounds`.
///
/// The grid restricted to the bounds must contain a stable interior minimum
/// whose neighbourhood is unimodal; otherwise the search falls back to the
/// grid argmin (`refined = false`). Integer parameters are refined by exact
/// scan over the bracketed whole numbers. Given the same spec, bounds and
/// tolerance the result is bit-for-bit reproducible.
pub fn find_optimum(
    spec: &SweepSpec,
    bounds: (f64, f64),
    tolerance: f64,
) -> Result<Optimum, SweepError> {
    if !(bounds.0 < bounds.1) {
        return Err(SweepError::InvalidSpec(format!(
            "empty refinement bounds [{}, {}]",
            bounds.0, bounds.1
        )));
    }
    if !(tolerance > 0.0) {
        return Err(SweepError::InvalidSpec(format!(
            "tolerance must be positive, got {tolerance}"
        )));
    }
    spec.validate()?;

    let f = |v: f64| -> Result<f64, SweepError> {
        let cfg = apply_param(&spec.base, spec.parameter, v)?;
        Ok(aoi_analytics::aaoi_analytic(&cfg, spec.error_method)?
            .0
            .aaoi)
    };

    let in_bounds: Vec<f64> = spec
        .grid
        .iter()
        .copied()
        .filter(|v| (bounds.0..=bounds.1).contains(v))
        .collect();
    if in_bounds.is_empty() {
        return Err(SweepError::NoStableBracket);
    }
    let values: Vec<f64> = in_bounds
        .iter()
        .map(|&v| f(v))
        .collect::<Result<_, _>>()?;
    if values.iter().all(|v| v.is_infinite()) {
        return Err(SweepError::NoStableBracket);
    }
    let (best_idx, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();

    // A refinable bracket needs finite neighbours on both sides and a grid
    // that is unimodal around the minimum.
    let interior = best_idx > 0
        && best_idx + 1 < values.len()
        && values[best_idx - 1].is_finite()
        && values[best_idx + 1].is_finite();
    let unimodal = values_unimodal(&values);
    if !interior || !unimodal {
        return Ok(Optimum {
            param_value: in_bounds[best_idx],
            aaoi: values[best_idx],
            refined: false,
        });
    }

    let (mut lo, mut hi) = (in_bounds[best_idx - 1], in_bounds[best_idx + 1]);
    if spec.parameter.is_integer() {
        // Exact scan over the bracketed whole numbers.
        let mut best = (in_bounds[best_idx], values[best_idx]);
        let mut v = lo.ceil();
        while v <= hi {
            let y = f(v)?;
            if y < best.1 {
                best = (v, y);
            }
            v += 1.0;
        }
        return Ok(Optimum {
            param_value: best.0,
            aaoi: best.1,
            refined: true,
        });
    }

    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut iterations = 0;
    while hi - lo > tolerance && iterations < 200 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        }
        iterations += 1;
    }
    let (param_value, aaoi) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    Ok(Optimum {
        param_value,
        aaoi,
        refined: true,
    })
}

fn values_unimodal(values: &[f64]) -> bool {
    let mut falling = true;
    for w in values.windows(2) {
        if falling {
            if w[1] > w[0] {
                falling = false;
            }
        } else if w[1] < w[0] {
            return false;
        }
    }
    true
}

/// Cross-sweep of the blocklength allocation factor for power splits
/// `phi_s` in {0.3, 0.5, 0.7}, producing one AAoI curve per split.
pub fn allocation_study(base: &SystemConfig) -> Result<AllocationStudy, SweepError> {
    allocation_study_with(base, &[0.3, 0.5, 0.7], &default_grid(SweepParameter::EtaSr))
}

/// [`allocation_study`] with explicit power splits and allocation grid.
pub fn allocation_study_with(
    base: &SystemConfig,
    phi_values: &[f64],
    eta_grid: &[f64],
) -> Result<AllocationStudy, SweepError> {
    if phi_values.is_empty() || eta_grid.is_empty() {
        return Err(SweepError::InvalidSpec(
            "allocation study needs at least one phi and one eta".into(),
        ));
    }
    let curves: Result<Vec<AllocationCurve>, SweepError> = phi_values
        .par_iter()
        .map(|&phi| {
            let with_phi = apply_param(base, SweepParameter::PhiS, phi)?;
            let mut aaoi = Vec::with_capacity(eta_grid.len());
            for &eta in eta_grid {
                let cfg = apply_param(&with_phi, SweepParameter::EtaSr, eta)?;
                let (est, _) = aoi_analytics::aaoi_analytic(&cfg, ErrorMethod::ClosedForm)?;
                aaoi.push(est.aaoi);
            }
            let (idx, &min_aaoi) = aaoi
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            Ok(AllocationCurve {
                phi_s: phi,
                aaoi,
                min_aaoi,
                argmin_eta: eta_grid[idx],
            })
        })
        .collect();
    Ok(AllocationStudy {
        eta_grid: eta_grid.to_vec(),
        curves: curves?,
    })
}

/// Round error probability of the closed form at one grid point; exposed for
/// callers pairing sweeps with fixed-probability simulations.
pub fn closed_form_eps(
    base: &SystemConfig,
    parameter: SweepParameter,
    value: f64,
) -> Result<f64, SweepError> {
    let cfg = apply_param(base, parameter, value)?;
    Ok(finite_blocklength::system_error(&cfg, ErrorMethod::ClosedForm)?.eps_overall)
}
