//! Command-line front end: configuration ingestion, the analyze / simulate /
//! sweep / validate subcommands, and machine-readable emission.
//!
//! Configuration comes from an optional `key = value` text file (`#` starts a
//! comment) with every key mirrored by a flag; flags override the file and
//! unspecified keys take the baseline defaults. Every emitted result file
//! embeds or references a [`RunManifest`] describing exactly how to reproduce
//! it: analytic outputs are bit-exact functions of the manifest, simulated
//! outputs are bit-exact given the same seeds.
//!
//! Exit codes: 0 success, 2 validation error, 3 unstable configuration (or no
//! finite estimate), 4 oracle-suite failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi_analytics::{self, AoiEstimate, ServiceMoments};
use crate::aoi_simulator::{self, ReplicatedResult, SimError, SimMode};
use crate::experiments::{
    self, default_grid, Evaluator, SweepParameter, SweepResult, SweepRow, SweepSpec,
    SweepSimMode,
};
use crate::finite_blocklength::{self, ErrorMethod, ErrorReport, QuadKernel};
use crate::link_model::{build_link_budgets, LinkBudget, SystemConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_UNSTABLE: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("unknown configuration key `{key}`")]
    UnknownKey { key: String },
    #[error("configuration key `{key}`: cannot parse `{value}` as a number")]
    BadValue { key: String, value: String },
    #[error("configuration key `{key}` must be a positive whole number, got {value}")]
    NotInteger { key: String, value: f64 },
    #[error("`lambda_rate` is required for this subcommand (flag --lambda-rate or config key lambda_rate)")]
    MissingLambda,
    #[error(transparent)]
    Config(#[from] crate::link_model::ConfigError),
    #[error("bad grid `{0}`: expected `start:stop:step` or comma-separated values")]
    BadGrid(String),
    #[error("bad refinement spec `{0}`: expected `lo:hi:tol`")]
    BadRefine(String),
    #[error("{0}")]
    Sweep(#[from] experiments::SweepError),
    #[error("{0}")]
    Analytics(#[from] aoi_analytics::AoiError),
    #[error("{0}")]
    Simulation(#[from] SimError),
    #[error("{0}")]
    ErrorModel(#[from] finite_blocklength::FblError),
    #[error("cannot write `{path}`: {source}")]
    Emit {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse result file: {0}")]
    Parse(String),
}

// ---------------------------------------------------------------------------
// Configuration ingestion
// ---------------------------------------------------------------------------

const CONFIG_KEYS: [&str; 14] = [
    "d_m",
    "tau",
    "total_power_dbm",
    "phi_s",
    "phi_r",
    "noise_dbm",
    "carrier_hz",
    "n_total",
    "eta_sr",
    "eta_rd",
    "k_bits",
    "symbol_duration_s",
    "channel_delay_s",
    "lambda_rate",
];

/// Flags mirroring every configuration key.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigOverrides {
    /// Key=value configuration file; `#` starts a comment.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Source-destination distance, meters.
    #[arg(long, value_name = "M")]
    pub d_m: Option<f64>,
    /// Relay placement fraction in (0,1).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Total transmit power, dBm.
    #[arg(long, value_name = "DBM")]
    pub total_power_dbm: Option<f64>,
    /// Source power allocation factor in (0,1].
    #[arg(long)]
    pub phi_s: Option<f64>,
    /// Relay power allocation factor in (0,1].
    #[arg(long)]
    pub phi_r: Option<f64>,
    /// Receiver noise variance, dBm.
    #[arg(long, value_name = "DBM")]
    pub noise_dbm: Option<f64>,
    /// Carrier frequency, Hz.
    #[arg(long, value_name = "HZ")]
    pub carrier_hz: Option<f64>,
    /// Total blocklength, channel uses.
    #[arg(long, value_name = "USES")]
    pub n_total: Option<u32>,
    /// S-R blocklength allocation factor in (0,1).
    #[arg(long)]
    pub eta_sr: Option<f64>,
    /// R-D blocklength allocation factor in (0,1).
    #[arg(long)]
    pub eta_rd: Option<f64>,
    /// Update size, bits.
    #[arg(long, value_name = "BITS")]
    pub k_bits: Option<u32>,
    /// Symbol duration, seconds per channel use.
    #[arg(long, value_name = "S")]
    pub symbol_duration_s: Option<f64>,
    /// Channel-induced delay per round, seconds.
    #[arg(long, value_name = "S")]
    pub channel_delay_s: Option<f64>,
    /// Update generation rate, updates per second.
    #[arg(long, value_name = "RATE")]
    pub lambda_rate: Option<f64>,
}

impl ConfigOverrides {
    fn as_pairs(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: Option<f64>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("d_m", self.d_m);
        push("tau", self.tau);
        push("total_power_dbm", self.total_power_dbm);
        push("phi_s", self.phi_s);
        push("phi_r", self.phi_r);
        push("noise_dbm", self.noise_dbm);
        push("carrier_hz", self.carrier_hz);
        push("n_total", self.n_total.map(f64::from));
        push("eta_sr", self.eta_sr);
        push("eta_rd", self.eta_rd);
        push("k_bits", self.k_bits.map(f64::from));
        push("symbol_duration_s", self.symbol_duration_s);
        push("channel_delay_s", self.channel_delay_s);
        push("lambda_rate", self.lambda_rate);
        out
    }
}

/// Parses a `key = value` configuration file into ordered pairs.
pub fn parse_config_file(path: &Path) -> Result<Vec<(String, f64)>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Malformed {
                line: idx + 1,
                text: raw.trim().to_string(),
            });
        };
        let key = key.trim().to_string();
        let value_text = value.trim();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(CliError::UnknownKey { key });
        }
        let value: f64 = value_text.parse().map_err(|_| CliError::BadValue {
            key: key.clone(),
            value: value_text.to_string(),
        })?;
        pairs.push((key, value));
    }
    Ok(pairs)
}

/// Resolves the effective configuration: baseline defaults, then file keys,
/// then flags. `lambda_required` controls whether a missing `lambda_rate` is
/// an error or takes a placeholder (sweeps over the rate supply it per grid
/// point).
pub fn parse_config(
    overrides: &ConfigOverrides,
    lambda_required: bool,
) -> Result<SystemConfig, CliError> {
    let mut merged: BTreeMap<String, f64> = BTreeMap::new();
    if let Some(path) = &overrides.config {
        for (k, v) in parse_config_file(path)? {
            merged.insert(k, v);
        }
    }
    for (k, v) in overrides.as_pairs() {
        merged.insert(k.to_string(), v);
    }

    let mut cfg = SystemConfig::baseline(f64::NAN);
    let mut lambda = None;
    for (key, value) in &merged {
        let value = *value;
        let as_u32 = |v: f64| -> Result<u32, CliError> {
            if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                Err(CliError::NotInteger {
                    key: key.clone(),
                    value: v,
                })
            } else {
                Ok(v as u32)
            }
        };
        match key.as_str() {
            "d_m" => cfg.d_m = value,
            "tau" => cfg.tau = value,
            "total_power_dbm" => cfg.total_power_dbm = value,
            "phi_s" => cfg.phi_s = value,
            "phi_r" => cfg.phi_r = value,
            "noise_dbm" => cfg.noise_dbm = value,
            "carrier_hz" => cfg.carrier_hz = value,
            "n_total" => cfg.n_total = as_u32(value)?,
            "eta_sr" => cfg.eta_sr = value,
            "eta_rd" => cfg.eta_rd = value,
            "k_bits" => cfg.k_bits = as_u32(value)?,
            "symbol_duration_s" => cfg.symbol_duration_s = value,
            "channel_delay_s" => cfg.channel_delay_s = value,
            "lambda_rate" => lambda = Some(value),
            other => return Err(CliError::UnknownKey { key: other.into() }),
        }
    }
    match lambda {
        Some(l) => cfg.lambda_rate = l,
        None if lambda_required => return Err(CliError::MissingLambda),
        None => cfg.lambda_rate = 1.0,
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Manifest and emission
// ---------------------------------------------------------------------------

/// Everything needed to reproduce a run: the resolved configuration in SI
/// units, the subcommand and its knobs, seeds, and the tool version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub timestamp_unix_s: u64,
    pub subcommand: String,
    pub config: SystemConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim_mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameter: Option<SweepParameter>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluator: Option<String>,
    pub error_method: String,
}

impl RunManifest {
    fn new(subcommand: &str, config: SystemConfig) -> Self {
        Self {
            tool: "relay-aoi".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            subcommand: subcommand.into(),
            config,
            seed: None,
            replications: None,
            horizon_s: None,
            sim_mode: None,
            fixed_eps: None,
            parameter: None,
            grid: None,
            evaluator: None,
            error_method: "closed_form".into(),
        }
    }
}

/// Fixed-order CSV header for sweep emission.
pub const SWEEP_CSV_HEADER: &str =
    "param_value,aaoi_analytic_s,aaoi_sim_s,ci_halfwidth_s,eps_overall,stable";

/// 12-significant-digit decimal; infinities and NaN spelled out.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.11e}")
    }
}

/// Renders a sweep as CSV: the fixed header plus one row per grid point.
pub fn sweep_to_csv(result: &SweepResult) -> String {
    let mut out = String::with_capacity(64 * (result.rows.len() + 1));
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in &result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_float(r.param_value),
            fmt_float(r.aaoi_analytic),
            fmt_float(r.aaoi_sim.unwrap_or(f64::NAN)),
            fmt_float(r.ci_halfwidth.unwrap_or(f64::NAN)),
            fmt_float(r.eps_overall),
            r.stable,
        );
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlLine {
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<RunManifest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    row: Option<SweepRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    argmin: Option<Option<(f64, f64)>>,
}

/// Renders a sweep as JSON lines: the manifest, one line per row, then the
/// argmin. [`parse_sweep_jsonl`] inverts this exactly.
pub fn sweep_to_jsonl(manifest: &RunManifest, result: &SweepResult) -> String {
    let mut out = String::new();
    let push = |out: &mut String, line: &JsonlLine| {
        out.push_str(&serde_json::to_string(line).expect("serializable"));
        out.push('\n');
    };
    push(
        &mut out,
        &JsonlLine {
            manifest: Some(manifest.clone()),
            row: None,
            argmin: None,
        },
    );
    for row in &result.rows {
        push(
            &mut out,
            &JsonlLine {
                manifest: None,
                row: Some(row.clone()),
                argmin: None,
            },
        );
    }
    push(
        &mut out,
        &JsonlLine {
            manifest: None,
            row: None,
            argmin: Some(result.argmin),
        },
    );
    out
}

/// Parses JSON-lines sweep output back into the manifest and result.
pub fn parse_sweep_jsonl(text: &str) -> Result<(RunManifest, SweepResult), CliError> {
    let mut manifest = None;
    let mut rows = Vec::new();
    let mut argmin = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonlLine = serde_json::from_str(line)
            .map_err(|e| CliError::Parse(format!("line {}: {e}", idx + 1)))?;
        if let Some(m) = parsed.manifest {
            manifest = Some(m);
        }
        if let Some(r) = parsed.row {
            rows.push(r);
        }
        if let Some(a) = parsed.argmin {
            argmin = Some(a);
        }
    }
    let manifest = manifest.ok_or_else(|| CliError::Parse("missing manifest line".into()))?;
    let parameter = manifest
        .parameter
        .ok_or_else(|| CliError::Parse("manifest carries no sweep parameter".into()))?;
    let argmin = argmin.ok_or_else(|| CliError::Parse("missing argmin line".into()))?;
    Ok((
        manifest.clone(),
        SweepResult {
            parameter,
            rows,
            argmin,
        },
    ))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Emit {
        path: path.display().to_string(),
        source,
    })
}

/// Writes sweep output. CSV goes to `out` with the manifest in a
/// `<out>.manifest.json` sidecar; JSON lines embed the manifest directly.
/// Without a destination the rendering goes to stdout (no sidecar).
pub fn emit_sweep(
    manifest: &RunManifest,
    result: &SweepResult,
    format: OutputFormat,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let rendered = match format {
        OutputFormat::Csv => sweep_to_csv(result),
        OutputFormat::JsonLines => sweep_to_jsonl(manifest, result),
    };
    match out {
        Some(path) => {
            write_file(path, &rendered)?;
            if format == OutputFormat::Csv {
                let sidecar = path.with_extension(format!(
                    "{}manifest.json",
                    path.extension()
                        .map(|e| format!("{}.", e.to_string_lossy()))
                        .unwrap_or_default()
                ));
                write_file(
                    &sidecar,
                    &serde_json::to_string_pretty(manifest).expect("serializable"),
                )?;
            }
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Command definitions
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "relay-aoi",
    version,
    about = "Average age-of-information analysis and simulation for a two-hop decode-and-forward relay under finite-blocklength coding"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the closed-form error probabilities and average age.
    Analyze(AnalyzeArgs),
    /// Run the Monte Carlo age simulator.
    Simulate(SimulateArgs),
    /// Sweep one parameter and emit the resulting curve.
    Sweep(SweepArgs),
    /// Run the oracle suites (closed form vs quadrature, analytics vs
    /// simulation) and report pass/fail per tolerance.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    #[value(name = "json-lines")]
    JsonLines,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ErrorMethodArg {
    ClosedForm,
    QuadratureLinearized,
    QuadratureExact,
}

impl From<ErrorMethodArg> for ErrorMethod {
    fn from(v: ErrorMethodArg) -> Self {
        match v {
            ErrorMethodArg::ClosedForm => ErrorMethod::ClosedForm,
            ErrorMethodArg::QuadratureLinearized => ErrorMethod::QuadratureLinearized,
            ErrorMethodArg::QuadratureExact => ErrorMethod::QuadratureExact,
        }
    }
}

fn method_name(m: ErrorMethod) -> &'static str {
    match m {
        ErrorMethod::ClosedForm => "closed_form",
        ErrorMethod::QuadratureLinearized => "quadrature_linearized",
        ErrorMethod::QuadratureExact => "quadrature_exact",
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    config: ConfigOverrides,
    /// Error-probability route.
    #[arg(long, value_enum, default_value = "closed-form")]
    error_method: ErrorMethodArg,
    /// Emit the result as JSON to stdout.
    #[arg(long)]
    json: bool,
    /// Also write the JSON result document to this path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SimModeArg {
    /// Fixed per-round error probability (closed form unless --eps is given).
    Fixed,
    /// Per-round Rayleigh fading and decoding draws on both hops; either
    /// hop's failure repeats the whole round.
    Sampled,
    /// Experimental: a failed hop retransmits alone in its own slot.
    #[value(name = "sampled-per-hop")]
    SampledPerHop,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigOverrides,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    replications: u32,
    #[arg(long, value_name = "S", default_value_t = 2.0e4)]
    horizon_s: f64,
    #[arg(long, value_enum, default_value = "fixed")]
    mode: SimModeArg,
    /// Round error probability for --mode fixed (default: closed form).
    #[arg(long)]
    eps: Option<f64>,
    /// Write the first replication's delivery trace to this path.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// Emit the result as JSON to stdout.
    #[arg(long)]
    json: bool,
    /// Also write the JSON result document to this path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ParamArg {
    Lambda,
    N,
    EtaSr,
    PhiS,
    K,
}

impl From<ParamArg> for SweepParameter {
    fn from(v: ParamArg) -> Self {
        match v {
            ParamArg::Lambda => SweepParameter::LambdaRate,
            ParamArg::N => SweepParameter::NTotal,
            ParamArg::EtaSr => SweepParameter::EtaSr,
            ParamArg::PhiS => SweepParameter::PhiS,
            ParamArg::K => SweepParameter::KBits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvaluatorArg {
    Analytic,
    Simulated,
    Both,
}

impl From<EvaluatorArg> for Evaluator {
    fn from(v: EvaluatorArg) -> Self {
        match v {
            EvaluatorArg::Analytic => Evaluator::Analytic,
            EvaluatorArg::Simulated => Evaluator::Simulated,
            EvaluatorArg::Both => Evaluator::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepModeArg {
    /// Fixed per-round error probability from the closed form at each point.
    Fixed,
    /// Per-round fading and decoding draws.
    Sampled,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigOverrides,
    /// Parameter to sweep.
    #[arg(long, value_enum)]
    param: ParamArg,
    /// Grid as `start:stop:step` or comma-separated values
    /// (default: the parameter's standard grid).
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, value_enum, default_value = "analytic")]
    evaluator: EvaluatorArg,
    /// Channel model for the simulated column.
    #[arg(long, value_enum, default_value = "fixed")]
    sim_mode: SweepModeArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    replications: u32,
    #[arg(long, value_name = "S", default_value_t = 2.0e4)]
    horizon_s: f64,
    #[arg(long, value_enum, default_value = "closed-form")]
    error_method: ErrorMethodArg,
    /// Golden-section refinement around the argmin, as `lo:hi:tol`.
    #[arg(long, value_name = "LO:HI:TOL")]
    refine: Option<String>,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
    /// Destination file (stdout if omitted). CSV gets a
    /// `<out>.manifest.json` sidecar.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    config: ConfigOverrides,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    replications: u32,
    /// Horizon of the age comparison runs; the queueing check uses 5x this
    /// and the fading check half of it.
    #[arg(long, value_name = "S", default_value_t = 2.0e4)]
    horizon_s: f64,
}

// ---------------------------------------------------------------------------
// Subcommand implementations
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct AnalyzeResult<'a> {
    link_budgets: (LinkBudget, LinkBudget),
    error_report: &'a ErrorReport,
    service_moments: &'a ServiceMoments,
    estimate: &'a AoiEstimate,
}

#[derive(Debug, Serialize)]
struct JsonDocument<'a, T: Serialize> {
    manifest: &'a RunManifest,
    result: T,
}

fn run_analyze(args: &AnalyzeArgs) -> Result<i32, CliError> {
    let cfg = parse_config(&args.config, true)?;
    let method: ErrorMethod = args.error_method.into();
    let mut manifest = RunManifest::new("analyze", cfg.clone());
    manifest.error_method = method_name(method).into();

    let (estimate, report) = aoi_analytics::aaoi_analytic(&cfg, method)?;
    let budgets = build_link_budgets(&cfg)?;
    let moments = aoi_analytics::service_moments(
        report.eps_overall.min(1.0 - f64::EPSILON),
        cfg.n_total as f64,
        cfg.symbol_duration_s,
        cfg.channel_delay_s,
        cfg.lambda_rate,
    )?;

    let doc = serde_json::to_string_pretty(&JsonDocument {
        manifest: &manifest,
        result: AnalyzeResult {
            link_budgets: budgets,
            error_report: &report,
            service_moments: &moments,
            estimate: &estimate,
        },
    })
    .expect("serializable");
    if let Some(path) = &args.out {
        write_file(path, &doc)?;
    }
    if args.json {
        println!("{doc}");
    } else {
        print_analyze_human(&cfg, &budgets, &report, &moments, &estimate);
    }
    if estimate.stable {
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_UNSTABLE)
    }
}

fn print_analyze_human(
    cfg: &SystemConfig,
    budgets: &(LinkBudget, LinkBudget),
    report: &ErrorReport,
    moments: &ServiceMoments,
    estimate: &AoiEstimate,
) {
    println!("configuration");
    println!(
        "  d = {} m, tau = {}, P = {} dBm (phi_s {}, phi_r {}), noise = {} dBm",
        cfg.d_m, cfg.tau, cfg.total_power_dbm, cfg.phi_s, cfg.phi_r, cfg.noise_dbm
    );
    println!(
        "  f_c = {:.3e} Hz, n = {} (eta_sr {}, eta_rd {}), k = {} bits, T = {:.3e} s, upsilon = {:.3e} s, lambda = {} /s",
        cfg.carrier_hz,
        cfg.n_total,
        cfg.eta_sr,
        cfg.eta_rd,
        cfg.k_bits,
        cfg.symbol_duration_s,
        cfg.channel_delay_s,
        cfg.lambda_rate
    );
    for (label, b) in [("S->R", &budgets.0), ("R->D", &budgets.1)] {
        println!(
            "link {label}: alpha = {:.6e} ({:.2} dB), avg SNR = {:.6e} ({:.2} dB), n_hop = {}",
            b.alpha,
            10.0 * b.alpha.log10(),
            b.avg_snr,
            10.0 * b.avg_snr.log10(),
            b.n_hop
        );
    }
    println!(
        "block errors ({}): eps_sr = {:.6e}, eps_rd = {:.6e}, overall = {:.6e}",
        method_name(report.method),
        report.eps_sr,
        report.eps_rd,
        report.eps_overall
    );
    println!(
        "service: E[s] = {:.6e} s, E[s^2] = {:.6e} s^2, E[e^-ls] = {:.6}, utilization = {:.4}",
        moments.mean_s, moments.second_moment_s, moments.mgf_neg_lambda, moments.utilization
    );
    if estimate.stable {
        let b = estimate.breakdown.unwrap();
        println!("age: AAoI = {:.9} s (stable)", estimate.aaoi);
        println!(
            "  breakdown: service {:.9} + waiting {:.9} + interarrival {:.9}",
            b[0], b[1], b[2]
        );
    } else {
        let max_rate = (1.0 - moments.eps) / moments.attempt_duration;
        println!("age: UNSTABLE queue, no finite average age");
        println!(
            "  utilization lambda*E[s] = {:.6} >= 1; highest stable rate at this service time is {:.4} updates/s",
            moments.utilization, max_rate
        );
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let cfg = parse_config(&args.config, true)?;
    let (mode, eps_used) = match args.mode {
        SimModeArg::Sampled => (SimMode::SampledFading, None),
        SimModeArg::SampledPerHop => (SimMode::SampledFadingPerHop, None),
        SimModeArg::Fixed => {
            let eps = match args.eps {
                Some(e) => e,
                None => {
                    finite_blocklength::system_error(&cfg, ErrorMethod::ClosedForm)?.eps_overall
                }
            };
            (SimMode::FixedEps(eps), Some(eps))
        }
    };
    let mut manifest = RunManifest::new("simulate", cfg.clone());
    manifest.seed = Some(args.seed);
    manifest.replications = Some(args.replications);
    manifest.horizon_s = Some(args.horizon_s);
    manifest.sim_mode = Some(
        match args.mode {
            SimModeArg::Fixed => "fixed_eps",
            SimModeArg::Sampled => "sampled_fading",
            SimModeArg::SampledPerHop => "sampled_fading_per_hop",
        }
        .into(),
    );
    manifest.fixed_eps = eps_used;

    if let Some(path) = &args.trace {
        let (_, records) = aoi_simulator::simulate_with_trace(
            &cfg,
            args.horizon_s,
            aoi_simulator::replication_seed(args.seed, 0),
            mode,
        )?;
        let mut buf = Vec::new();
        aoi_simulator::export_trace(&records, &mut buf).map_err(|source| CliError::Emit {
            path: path.display().to_string(),
            source,
        })?;
        write_file(path, &String::from_utf8(buf).expect("ascii trace"))?;
    }

    let agg =
        aoi_simulator::simulate_replicated(&cfg, args.horizon_s, args.seed, mode, args.replications)?;

    let doc = serde_json::to_string_pretty(&JsonDocument {
        manifest: &manifest,
        result: &agg,
    })
    .expect("serializable");
    if let Some(path) = &args.out {
        write_file(path, &doc)?;
    }
    if args.json {
        println!("{doc}");
    } else {
        print_simulate_human(&agg, eps_used);
    }
    Ok(EXIT_OK)
}

fn print_simulate_human(agg: &ReplicatedResult, eps_used: Option<f64>) {
    let first = &agg.replications[0];
    match eps_used {
        Some(e) => println!(
            "simulated {} replication(s), horizon {} s, fixed round error {:.6e}",
            agg.replications.len(),
            first.horizon,
            e
        ),
        None => println!(
            "simulated {} replication(s), horizon {} s, sampled fading (hop blocklengths {:?})",
            agg.replications.len(),
            first.horizon,
            first.hop_blocklengths.unwrap_or((0, 0))
        ),
    }
    println!(
        "time-average age: {:.9} s +- {:.3e} (95% CI over replications)",
        agg.mean_aaoi, agg.ci_halfwidth
    );
    println!(
        "means: delay {:.6e} s, wait {:.6e} s, attempts {:.6}, delivered {} updates",
        agg.mean_delay, agg.mean_wait, agg.mean_attempts, agg.total_delivered
    );
    for (i, r) in agg.replications.iter().enumerate() {
        println!(
            "  rep {i:2}: seed {} aaoi {:.9} s (raw {:.9}), delivered {}",
            r.seed, r.time_avg_aoi_trimmed, r.time_avg_aoi, r.delivered_count
        );
    }
}

fn parse_grid(text: &str, parameter: SweepParameter) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::BadGrid(text.to_string());
    let values: Vec<f64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let start: f64 = parts[0].parse().map_err(|_| bad())?;
        let stop: f64 = parts[1].parse().map_err(|_| bad())?;
        let step: f64 = parts[2].parse().map_err(|_| bad())?;
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| start + step * i as f64).collect()
    } else {
        text.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        return Err(bad());
    }
    if parameter.is_integer() {
        for &v in &values {
            if v.fract() != 0.0 {
                return Err(CliError::NotInteger {
                    key: parameter.key().into(),
                    value: v,
                });
            }
        }
    }
    Ok(values)
}

fn run_sweep(args: &SweepArgs) -> Result<i32, CliError> {
    let parameter: SweepParameter = args.param.into();
    let lambda_required = parameter != SweepParameter::LambdaRate;
    let base = parse_config(&args.config, lambda_required)?;
    let grid = match &args.grid {
        Some(text) => parse_grid(text, parameter)?,
        None => default_grid(parameter),
    };
    let spec = SweepSpec {
        parameter,
        grid: grid.clone(),
        base: base.clone(),
        evaluator: args.evaluator.into(),
        replications: args.replications,
        horizon_s: args.horizon_s,
        seed: args.seed,
        sim_mode: match args.sim_mode {
            SweepModeArg::Fixed => SweepSimMode::FixedEpsFromClosedForm,
            SweepModeArg::Sampled => SweepSimMode::SampledFading,
        },
        error_method: args.error_method.into(),
    };
    let result = experiments::sweep(&spec)?;

    let mut manifest = RunManifest::new("sweep", base);
    manifest.parameter = Some(parameter);
    manifest.grid = Some(grid);
    manifest.seed = Some(args.seed);
    manifest.error_method = method_name(spec.error_method).into();
    manifest.evaluator = Some(
        match args.evaluator {
            EvaluatorArg::Analytic => "analytic",
            EvaluatorArg::Simulated => "simulated",
            EvaluatorArg::Both => "both",
        }
        .into(),
    );
    if args.evaluator != EvaluatorArg::Analytic {
        manifest.replications = Some(args.replications);
        manifest.horizon_s = Some(args.horizon_s);
        manifest.sim_mode = Some(
            match args.sim_mode {
                SweepModeArg::Fixed => "fixed_eps_from_closed_form",
                SweepModeArg::Sampled => "sampled_fading",
            }
            .into(),
        );
    }

    emit_sweep(&manifest, &result, args.format, args.out.as_deref())?;

    if let Some((value, aaoi)) = result.argmin {
        eprintln!("argmin: {} = {value} with AAoI {aaoi:.9} s", parameter.key());
    } else {
        eprintln!("argmin: none (no stable grid point)");
    }
    if let Some(refine) = &args.refine {
        let parts: Vec<&str> = refine.split(':').collect();
        let bad = || CliError::BadRefine(refine.clone());
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let tol: f64 = parts[2].parse().map_err(|_| bad())?;
        let opt = experiments::find_optimum(&spec, (lo, hi), tol)?;
        eprintln!(
            "refined optimum: {} = {} with AAoI {:.9} s ({})",
            parameter.key(),
            opt.param_value,
            opt.aaoi,
            if opt.refined {
                "golden-section"
            } else {
                "grid fallback"
            }
        );
    }
    Ok(EXIT_OK)
}

struct CheckReport {
    failures: u32,
}

impl CheckReport {
    fn new() -> Self {
        Self { failures: 0 }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        if pass {
            println!("PASS  {name}: {detail}");
        } else {
            self.failures += 1;
            println!("FAIL  {name}: {detail}");
        }
    }

    fn info(&self, name: &str, detail: String) {
        println!("INFO  {name}: {detail}");
    }
}

fn run_validate(args: &ValidateArgs) -> Result<i32, CliError> {
    let mut overrides = args.config.clone();
    if overrides.lambda_rate.is_none() {
        overrides.lambda_rate = Some(22.0);
    }
    let cfg = parse_config(&overrides, true)?;
    let mut report = CheckReport::new();

    // Closed form vs numerically integrated linearized kernel: the same
    // integral by two routes must agree to 1e-9 absolute.
    let gbars = [1.0, 1e2, 1e4, 1e6, 1e8];
    let n_hops = [50.0, 100.0, 150.0, 300.0, 600.0];
    let ks = [10.0, 50.0, 100.0, 200.0, 400.0];
    let mut max_lin_gap = 0.0f64;
    let mut max_exact_gap = 0.0f64;
    for &g in &gbars {
        for &n in &n_hops {
            for &k in &ks {
                let b = crate::link_model::LinkBudget {
                    alpha: 1.0,
                    avg_snr: g,
                    n_hop: n,
                    hop: crate::link_model::Hop::SourceRelay,
                };
                let cf = finite_blocklength::avg_error_closed_form(&b, k)?;
                let ql = finite_blocklength::avg_error_quadrature(&b, k, QuadKernel::Linearized)?;
                let qe = finite_blocklength::avg_error_quadrature(&b, k, QuadKernel::Exact)?;
                max_lin_gap = max_lin_gap.max((cf - ql).abs());
                max_exact_gap = max_exact_gap.max((cf - qe).abs());
            }
        }
    }
    report.check(
        "closed-form vs linearized quadrature",
        max_lin_gap <= 1e-9,
        format!("max |gap| = {max_lin_gap:.3e} (tolerance 1e-9)"),
    );
    report.info(
        "linearization quality",
        format!("max |closed form - exact-kernel quadrature| = {max_exact_gap:.3e} over the 125-point grid"),
    );

    // Factored overall closed form vs per-hop composition at a
    // well-conditioned operating point.
    {
        let mut moderate = cfg.clone();
        moderate.noise_dbm = -90.0;
        let (sr, rd) = build_link_budgets(&moderate)?;
        let k = moderate.k_bits as f64;
        let hop = |b: &LinkBudget| -> Result<f64, CliError> {
            let p = finite_blocklength::approx_params(b.n_hop, k)?;
            Ok(b.avg_snr
                * p.beta
                * b.n_hop.sqrt()
                * ((-(p.phi_lo / b.avg_snr)).exp() - (-(p.delta_hi / b.avg_snr)).exp()))
        };
        let direct = 1.0 - hop(&sr)? * hop(&rd)?;
        let composed =
            finite_blocklength::system_error(&moderate, ErrorMethod::ClosedForm)?.eps_overall;
        let gap = (direct - composed).abs();
        report.check(
            "overall error factorization",
            gap <= 1e-12,
            format!("|direct - composed| = {gap:.3e} (tolerance 1e-12)"),
        );
    }

    // Analytic age vs fixed-probability simulation at several update rates.
    let eps = finite_blocklength::system_error(&cfg, ErrorMethod::ClosedForm)?.eps_overall;
    for lam in [5.0, 15.0, 22.0, 28.0] {
        let mut c = cfg.clone();
        c.lambda_rate = lam;
        let ana = aoi_analytics::aaoi_with_eps(&c, eps)?.aaoi;
        let agg = aoi_simulator::simulate_replicated(
            &c,
            args.horizon_s,
            args.seed,
            SimMode::FixedEps(eps),
            args.replications,
        )?;
        let tol = (0.05 * ana).max(2.0 * agg.ci_halfwidth);
        report.check(
            &format!("analytic vs simulated age at lambda = {lam}"),
            (agg.mean_aaoi - ana).abs() <= tol,
            format!(
                "sim {:.6e} vs analytic {:.6e}, |gap| {:.2e} <= tol {:.2e}",
                agg.mean_aaoi,
                ana,
                (agg.mean_aaoi - ana).abs(),
                tol
            ),
        );
    }

    // Queueing oracle: service mean within 1%, waiting mean within 2%.
    {
        let mut c = cfg.clone();
        c.lambda_rate = 10.0;
        let v = aoi_simulator::validate_queue(
            &c,
            5.0 * args.horizon_s,
            args.seed,
            SimMode::FixedEps(0.2),
        )?;
        let s_gap = (v.sim_mean_s - v.ana_mean_s).abs() / v.ana_mean_s;
        let w_gap = (v.sim_mean_wait - v.ana_mean_wait).abs() / v.ana_mean_wait;
        report.check(
            "queueing oracle: mean service time",
            s_gap <= 0.01,
            format!(
                "sim {:.6e} vs analytic {:.6e} ({} deliveries, rel gap {:.2e} <= 1e-2)",
                v.sim_mean_s, v.ana_mean_s, v.delivered, s_gap
            ),
        );
        report.check(
            "queueing oracle: mean waiting time",
            w_gap <= 0.02,
            format!(
                "sim {:.6e} vs analytic {:.6e} (rel gap {:.2e} <= 2e-2)",
                v.sim_mean_wait, v.ana_mean_wait, w_gap
            ),
        );
    }

    // Fading oracle: empirical round failure rate vs the exact-kernel
    // quadrature composed across both hops.
    {
        let p_exact =
            finite_blocklength::system_error(&cfg, ErrorMethod::QuadratureExact)?.eps_overall;
        let run = aoi_simulator::simulate(
            &cfg,
            0.5 * args.horizon_s,
            args.seed,
            SimMode::SampledFading,
        )?;
        let rounds = run.rounds_delivered;
        let failures = run.rounds_delivered - run.delivered_count;
        let rate = failures as f64 / rounds as f64;
        let se = (p_exact * (1.0 - p_exact) / rounds as f64).sqrt();
        report.check(
            "fading oracle: round failure rate",
            (rate - p_exact).abs() <= 3.0 * se,
            format!(
                "empirical {rate:.3e} vs quadrature {p_exact:.3e} over {rounds} rounds (3 SE = {:.3e})",
                3.0 * se
            ),
        );
    }

    if report.failures == 0 {
        println!("all oracle checks passed");
        Ok(EXIT_OK)
    } else {
        println!("{} oracle check(s) failed", report.failures);
        Ok(EXIT_ORACLE)
    }
}

/// Parses the process arguments and runs the requested subcommand, returning
/// the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Analyze(args) => run_analyze(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Validate(args) => run_validate(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            match err {
                CliError::Simulation(SimError::NoDelivery { .. }) => EXIT_UNSTABLE,
                _ => EXIT_VALIDATION,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn write_temp_config(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn empty_config_with_lambda_gives_baseline() {
        let f = write_temp_config("# nothing but a comment\n");
        let overrides = ConfigOverrides {
            config: Some(f.path().to_path_buf()),
            lambda_rate: Some(22.0),
            ..Default::default()
        };
        let cfg = parse_config(&overrides, true).unwrap();
        assert_eq!(cfg, SystemConfig::baseline(22.0));
    }

    #[test]
    fn file_values_are_read_and_flags_override() {
        let f = write_temp_config(
            "n_total = 300\nlambda_rate = 10 # updates per second\ncarrier_hz = 6e9\n",
        );
        let overrides = ConfigOverrides {
            config: Some(f.path().to_path_buf()),
            n_total: Some(100),
            ..Default::default()
        };
        let cfg = parse_config(&overrides, true).unwrap();
        assert_eq!(cfg.n_total, 100);
        assert_eq!(cfg.lambda_rate, 10.0);
    }

    #[test]
    fn out_of_range_value_names_the_key() {
        let overrides = ConfigOverrides {
            tau: Some(1.5),
            lambda_rate: Some(22.0),
            ..Default::default()
        };
        let err = parse_config(&overrides, true).unwrap_err();
        assert!(err.to_string().contains("tau"), "got: {err}");
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let f = write_temp_config("total_power_w = 0.2\n");
        let overrides = ConfigOverrides {
            config: Some(f.path().to_path_buf()),
            lambda_rate: Some(5.0),
            ..Default::default()
        };
        let err = parse_config(&overrides, true).unwrap_err();
        match err {
            CliError::UnknownKey { key } => assert_eq!(key, "total_power_w"),
            other => panic!("expected UnknownKey, got {other}"),
        }
    }

    #[test]
    fn missing_lambda_is_an_error_only_when_required() {
        let overrides = ConfigOverrides::default();
        assert!(matches!(
            parse_config(&overrides, true),
            Err(CliError::MissingLambda)
        ));
        assert!(parse_config(&overrides, false).is_ok());
    }

    #[test]
    fn grid_parsing_forms() {
        let g = parse_grid("1:5:1", SweepParameter::LambdaRate).unwrap();
        assert_eq!(g, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let g = parse_grid("0.1,0.5,0.9", SweepParameter::EtaSr).unwrap();
        assert_eq!(g, vec![0.1, 0.5, 0.9]);
        assert!(parse_grid("5:1:1", SweepParameter::LambdaRate).is_err());
        assert!(parse_grid("10.5,20", SweepParameter::NTotal).is_err());
        assert!(parse_grid("", SweepParameter::LambdaRate).is_err());
    }

    #[test]
    fn csv_format_contract() {
        let result = SweepResult {
            parameter: SweepParameter::LambdaRate,
            rows: vec![
                SweepRow {
                    param_value: 22.0,
                    aaoi_analytic: 0.089018983619324009,
                    aaoi_sim: None,
                    ci_halfwidth: None,
                    eps_overall: 3.7103462377184811e-9,
                    stable: true,
                },
                SweepRow {
                    param_value: 40.0,
                    aaoi_analytic: f64::INFINITY,
                    aaoi_sim: None,
                    ci_halfwidth: None,
                    eps_overall: 3.7103462377184811e-9,
                    stable: false,
                },
            ],
            argmin: Some((22.0, 0.089018983619324009)),
        };
        let csv = sweep_to_csv(&result);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], SWEEP_CSV_HEADER);
        assert!(lines[1].starts_with("2.20000000000e1,8.90189836193e-2,nan,nan,"));
        assert!(lines[1].ends_with(",true"));
        let unstable: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(unstable[1], "inf");
        assert_eq!(unstable[5], "false");
        // 12 significant digits in each finite field.
        let aaoi_field: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
        assert_relative_eq!(aaoi_field, 0.089018983619324009, max_relative = 1e-11);
    }

    #[test]
    fn jsonl_round_trips() {
        let base = SystemConfig::baseline(22.0);
        let spec = SweepSpec {
            grid: vec![20.0, 21.0, 22.0],
            ..SweepSpec::analytic(SweepParameter::LambdaRate, base.clone())
        };
        let result = experiments::sweep(&spec).unwrap();
        let mut manifest = RunManifest::new("sweep", base);
        manifest.parameter = Some(SweepParameter::LambdaRate);
        manifest.grid = Some(spec.grid.clone());
        let text = sweep_to_jsonl(&manifest, &result);
        let (m2, r2) = parse_sweep_jsonl(&text).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(r2, result);
    }

    #[test]
    fn float_formatting_spells_out_non_finite() {
        assert_eq!(fmt_float(f64::INFINITY), "inf");
        assert_eq!(fmt_float(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_float(f64::NAN), "nan");
        assert_eq!(fmt_float(1.0), "1.00000000000e0");
    }
}
