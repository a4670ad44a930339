//! Discrete-event Monte Carlo of the age-of-information sample path.
//!
//! Updates are generated by a Poisson process and served FCFS by a single
//! server; each service round occupies `n*T + upsilon` seconds and succeeds
//! only if both hops decode. The age process is the usual sawtooth: it grows
//! at slope one and drops to the system delay of each update at its delivery
//! instant. The time average is the exact area under the piecewise-linear
//! path, accumulated with compensated summation.
//!
//! Randomness comes from four named ChaCha streams so that arrival times,
//! per-hop fading and decoding draws are independently reproducible:
//! stream 0 arrivals, 1 S-R fading, 2 R-D fading, 3 decoding. Replications
//! derive their seeds from the base seed with a SplitMix round and run
//! concurrently; results are merged in replication order.

use std::io::Write;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi_analytics::{self, AoiError, ServiceMoments};
use crate::finite_blocklength::{self, ErrorMethod, FblError};
use crate::link_model::{build_link_budgets, ConfigError, SystemConfig};

const STREAM_ARRIVALS: u64 = 0;
const STREAM_FADING_SR: u64 = 1;
const STREAM_FADING_RD: u64 = 2;
const STREAM_DECODE: u64 = 3;

/// Fraction of the horizon discarded before computing stationary estimates.
pub const WARMUP_FRACTION: f64 = 0.05;

/// Number of batch-means windows used for the single-run confidence interval.
const BATCH_COUNT: usize = 20;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    ErrorModel(#[from] FblError),
    #[error(transparent)]
    Analytics(#[from] AoiError),
    #[error("no update was delivered within the {horizon} s horizon ({generated} generated); the age is unbounded")]
    NoDelivery { generated: u64, horizon: f64 },
    #[error("invalid update records: {0}")]
    InvalidRecords(String),
    #[error("configuration is unstable: utilization = {utilization}")]
    Unstable { utilization: f64 },
}

/// Per-round channel behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SimMode {
    /// Draw independent unit-mean exponential gains per hop each round,
    /// evaluate the exact conditional error kernel, and draw the two
    /// decoding outcomes; the round succeeds only if both hops decode.
    /// A failure of either hop repeats the full two-hop round.
    SampledFading,
    /// Every round fails independently with the given probability.
    FixedEps(f64),
    /// Experimental: a failed hop retransmits alone while the other hop's
    /// result is held, each attempt occupying only that hop's slot
    /// (`eta * n * T` plus half the channel delay). No closed-form analytics
    /// correspond to this discipline; it exists for exploratory comparison
    /// against the whole-round default.
    SampledFadingPerHop,
}

/// One delivered update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// Generation instant, seconds.
    pub gen_time: f64,
    /// Delivery instant, seconds.
    pub depart_time: f64,
    /// Transmission rounds consumed.
    pub attempts: u32,
    /// `depart_time - gen_time`, seconds.
    pub system_delay: f64,
    /// Gap to the previous generation instant (to t = 0 for the first).
    pub interarrival: f64,
}

/// Outcome of a single simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Exact time average of the age over [0, horizon].
    pub time_avg_aoi: f64,
    /// Time average over [warmup, horizon]; the stationary estimate.
    pub time_avg_aoi_trimmed: f64,
    /// Batch-means 95% half-width for the trimmed average.
    pub ci_halfwidth: f64,
    /// Sample mean of the system delay `Y`.
    pub mean_delay: f64,
    /// Sample mean of the queue wait `w`.
    pub mean_wait: f64,
    /// Sample mean of rounds per delivered update.
    pub mean_attempts: f64,
    /// Sample mean of the generation gaps.
    pub mean_interarrival: f64,
    /// Updates delivered within the horizon.
    pub delivered_count: u64,
    /// Updates generated within the horizon.
    pub generated_count: u64,
    /// Rounds consumed by delivered updates.
    pub rounds_delivered: u64,
    /// All rounds consumed, including an update cut off by the horizon.
    pub total_rounds: u64,
    /// Observation horizon, seconds.
    pub horizon: f64,
    /// Discarded warm-up interval, seconds.
    pub warmup_s: f64,
    /// Seed this run used.
    pub seed: u64,
    /// Whole-channel-use blocklengths per hop (sampled-fading mode).
    pub hop_blocklengths: Option<(u32, u32)>,
    /// Whether rounding the per-hop blocklengths changed them.
    pub blocklength_rounded: bool,
}

/// Aggregate over independent replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicatedResult {
    /// Mean of the per-replication trimmed time averages.
    pub mean_aaoi: f64,
    /// Student-t 95% half-width across replications.
    pub ci_halfwidth: f64,
    pub mean_delay: f64,
    pub mean_wait: f64,
    pub mean_attempts: f64,
    pub total_delivered: u64,
    pub replications: Vec<SimResult>,
}

/// Side-by-side simulated and analytic queue statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueValidation {
    pub eps_used: f64,
    pub delivered: u64,
    pub sim_mean_s: f64,
    pub se_mean_s: f64,
    pub ana_mean_s: f64,
    pub sim_second_moment_s: f64,
    pub se_second_moment_s: f64,
    pub ana_second_moment_s: f64,
    pub sim_mean_wait: f64,
    pub se_mean_wait: f64,
    pub ana_mean_wait: f64,
    pub sim_aaoi: f64,
    pub sim_aaoi_ci: f64,
    pub ana_aaoi: f64,
}

/// Neumaier-compensated accumulator; the horizon is many orders of magnitude
/// larger than a single round, so naive summation would drift.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Two-sided 97.5% Student-t quantile for `df` degrees of freedom.
fn t_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match df {
        0 => f64::INFINITY,
        1..=30 => TABLE[df - 1],
        31..=60 => 2.0,
        _ => 1.96,
    }
}

/// Seed for replication `rep` derived from the base seed (SplitMix64).
pub fn replication_seed(base: u64, rep: u32) -> u64 {
    let mut z = base
        .wrapping_add((rep as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs one simulation and returns the statistics together with the full
/// delivery trace.
pub fn simulate_with_trace(
    cfg: &SystemConfig,
    horizon: f64,
    seed: u64,
    mode: SimMode,
) -> Result<(SimResult, Vec<UpdateRecord>), SimError> {
    cfg.validate()?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(SimError::InvalidInput(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    if let SimMode::FixedEps(p) = mode {
        if !(0.0..1.0).contains(&p) {
            return Err(SimError::InvalidInput(format!(
                "fixed_eps probability must be in [0,1), got {p}"
            )));
        }
    }

    let round = cfg.round_duration_s();
    let k = cfg.k_bits as f64;

    // Per-hop SNR and whole-channel-use blocklengths for sampled fading.
    let (hop_params, blocklength_rounded) = match mode {
        SimMode::SampledFading | SimMode::SampledFadingPerHop => {
            let (sr, rd) = build_link_budgets(cfg)?;
            let n_sr = sr.n_hop.round().max(1.0);
            let n_rd = rd.n_hop.round().max(1.0);
            let rounded = n_sr != sr.n_hop || n_rd != rd.n_hop;
            (Some((sr.avg_snr, n_sr, rd.avg_snr, n_rd)), rounded)
        }
        SimMode::FixedEps(_) => (None, false),
    };
    // Slot durations for the experimental per-hop discipline.
    let slot_sr =
        cfg.eta_sr * cfg.n_total as f64 * cfg.symbol_duration_s + 0.5 * cfg.channel_delay_s;
    let slot_rd =
        cfg.eta_rd * cfg.n_total as f64 * cfg.symbol_duration_s + 0.5 * cfg.channel_delay_s;

    let mut arrivals = stream_rng(seed, STREAM_ARRIVALS);
    let mut fading_sr = stream_rng(seed, STREAM_FADING_SR);
    let mut fading_rd = stream_rng(seed, STREAM_FADING_RD);
    let mut decode = stream_rng(seed, STREAM_DECODE);

    let interarrival_dist = Exp::new(cfg.lambda_rate)
        .map_err(|e| SimError::InvalidInput(format!("bad arrival rate: {e}")))?;
    let unit_exp = Exp::new(1.0).unwrap();
    let unit = Uniform::new(0.0f64, 1.0);

    let mut records: Vec<UpdateRecord> = Vec::new();
    let mut waits: Vec<f64> = Vec::new();
    let mut gen_clock = Kahan::default();
    let mut prev_gen = 0.0f64;
    let mut prev_depart = 0.0f64;
    let mut generated: u64 = 0;
    let mut total_rounds: u64 = 0;
    let mut rounds_delivered: u64 = 0;

    let hop_attempt = |fading: &mut ChaCha8Rng,
                       decode: &mut ChaCha8Rng,
                       snr: f64,
                       n_hop: f64|
     -> Result<bool, SimError> {
        let gain = unit_exp.sample(fading);
        let p = finite_blocklength::conditional_error(snr * gain, n_hop, k)?;
        Ok(unit.sample(decode) >= p)
    };

    'arrivals: loop {
        gen_clock.add(interarrival_dist.sample(&mut arrivals));
        let gen = gen_clock.value();
        if gen > horizon {
            break;
        }
        generated += 1;
        let start = prev_depart.max(gen);
        let mut attempts: u64 = 0;
        let mut elapsed;
        let mut crossed = false;
        match mode {
            SimMode::FixedEps(_) | SimMode::SampledFading => loop {
                attempts += 1;
                let success = match mode {
                    SimMode::FixedEps(p) => unit.sample(&mut decode) >= p,
                    _ => {
                        let (snr_sr, n_sr, snr_rd, n_rd) = hop_params.unwrap();
                        let ok_sr = hop_attempt(&mut fading_sr, &mut decode, snr_sr, n_sr)?;
                        let ok_rd = hop_attempt(&mut fading_rd, &mut decode, snr_rd, n_rd)?;
                        ok_sr && ok_rd
                    }
                };
                elapsed = attempts as f64 * round;
                if success {
                    break;
                }
                if start + elapsed > horizon {
                    crossed = true;
                    break;
                }
            },
            SimMode::SampledFadingPerHop => {
                let (snr_sr, n_sr, snr_rd, n_rd) = hop_params.unwrap();
                let mut attempts_sr: u64 = 0;
                let mut attempts_rd: u64 = 0;
                'first_hop: loop {
                    attempts_sr += 1;
                    elapsed = attempts_sr as f64 * slot_sr;
                    if hop_attempt(&mut fading_sr, &mut decode, snr_sr, n_sr)? {
                        break 'first_hop;
                    }
                    if start + elapsed > horizon {
                        crossed = true;
                        break 'first_hop;
                    }
                }
                while !crossed {
                    attempts_rd += 1;
                    elapsed = attempts_sr as f64 * slot_sr + attempts_rd as f64 * slot_rd;
                    if hop_attempt(&mut fading_rd, &mut decode, snr_rd, n_rd)? {
                        break;
                    }
                    if start + elapsed > horizon {
                        crossed = true;
                    }
                }
                attempts = attempts_sr + attempts_rd;
            }
        }
        total_rounds += attempts;
        if crossed {
            // Still failing and already past the horizon: this update and
            // every later one (FCFS) depart outside the window.
            break 'arrivals;
        }
        let depart = start + elapsed;
        if depart > horizon {
            break;
        }
        rounds_delivered += attempts;
        waits.push(start - gen);
        records.push(UpdateRecord {
            gen_time: gen,
            depart_time: depart,
            attempts: attempts as u32,
            system_delay: depart - gen,
            interarrival: gen - prev_gen,
        });
        prev_gen = gen;
        prev_depart = depart;
    }

    if records.is_empty() {
        return Err(SimError::NoDelivery { generated, horizon });
    }

    let warmup = WARMUP_FRACTION * horizon;
    let raw = integrate_window(&records, 0.0, 0.0, horizon)? / horizon;
    let trimmed = integrate_window(&records, 0.0, warmup, horizon)? / (horizon - warmup);

    // Batch means over the post-warm-up window.
    let batch_len = (horizon - warmup) / BATCH_COUNT as f64;
    let mut batch_means = Vec::with_capacity(BATCH_COUNT);
    for b in 0..BATCH_COUNT {
        let lo = warmup + b as f64 * batch_len;
        let hi = if b + 1 == BATCH_COUNT {
            horizon
        } else {
            lo + batch_len
        };
        batch_means.push(integrate_window(&records, 0.0, lo, hi)? / (hi - lo));
    }
    let ci_halfwidth = mean_ci(&batch_means).1;

    let n = records.len() as f64;
    let mean_delay = records.iter().map(|r| r.system_delay).sum::<f64>() / n;
    let mean_wait = waits.iter().sum::<f64>() / n;
    let mean_attempts = rounds_delivered as f64 / n;
    let mean_interarrival = prev_gen / n;

    Ok((
        SimResult {
            time_avg_aoi: raw,
            time_avg_aoi_trimmed: trimmed,
            ci_halfwidth,
            mean_delay,
            mean_wait,
            mean_attempts,
            mean_interarrival,
            delivered_count: records.len() as u64,
            generated_count: generated,
            rounds_delivered,
            total_rounds,
            horizon,
            warmup_s: warmup,
            seed,
            hop_blocklengths: hop_params.map(|(_, n_sr, _, n_rd)| (n_sr as u32, n_rd as u32)),
            blocklength_rounded,
        },
        records,
    ))
}

/// One simulation run; see [`simulate_with_trace`] for the mechanics.
pub fn simulate(
    cfg: &SystemConfig,
    horizon: f64,
    seed: u64,
    mode: SimMode,
) -> Result<SimResult, SimError> {
    simulate_with_trace(cfg, horizon, seed, mode).map(|(r, _)| r)
}

/// Independent replications with derived seeds, run in parallel and merged in
/// replication order.
pub fn simulate_replicated(
    cfg: &SystemConfig,
    horizon: f64,
    base_seed: u64,
    mode: SimMode,
    replications: u32,
) -> Result<ReplicatedResult, SimError> {
    if replications == 0 {
        return Err(SimError::InvalidInput("replications must be >= 1".into()));
    }
    let runs: Result<Vec<SimResult>, SimError> = (0..replications)
        .into_par_iter()
        .map(|rep| simulate(cfg, horizon, replication_seed(base_seed, rep), mode))
        .collect();
    let runs = runs?;
    let aaois: Vec<f64> = runs.iter().map(|r| r.time_avg_aoi_trimmed).collect();
    let (mean_aaoi, ci_halfwidth) = mean_ci(&aaois);
    let avg = |f: fn(&SimResult) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    Ok(ReplicatedResult {
        mean_aaoi,
        ci_halfwidth,
        mean_delay: avg(|r| r.mean_delay),
        mean_wait: avg(|r| r.mean_wait),
        mean_attempts: avg(|r| r.mean_attempts),
        total_delivered: runs.iter().map(|r| r.delivered_count).sum(),
        replications: runs,
    })
}

/// Sample mean and Student-t 95% half-width of a small sample.
fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, t_975(xs.len() - 1) * (var / n).sqrt())
}

/// Exact time average of the sawtooth age over [0, horizon].
///
/// The age starts at `initial_age`, grows at slope one, and drops to
/// `system_delay` at each delivery. Records must be ordered and consistent;
/// partial segments at both ends are handled exactly.
pub fn integrate_sawtooth(
    records: &[UpdateRecord],
    initial_age: f64,
    horizon: f64,
) -> Result<f64, SimError> {
    if !(horizon > 0.0) {
        return Err(SimError::InvalidInput(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    Ok(integrate_window(records, initial_age, 0.0, horizon)? / horizon)
}

/// Area under the age path over the window [from, to].
pub(crate) fn integrate_window(
    records: &[UpdateRecord],
    initial_age: f64,
    from: f64,
    to: f64,
) -> Result<f64, SimError> {
    if !(to > from) {
        return Err(SimError::InvalidInput(format!(
            "empty integration window [{from}, {to}]"
        )));
    }
    if !(initial_age >= 0.0) {
        return Err(SimError::InvalidInput(format!(
            "initial age must be >= 0, got {initial_age}"
        )));
    }
    validate_records(records)?;

    let mut area = Kahan::default();
    // Linear piece starting at `seg_start` with age `age0`; clip to window.
    let mut add_piece = |seg_start: f64, seg_end: f64, age0: f64| {
        let lo = seg_start.max(from);
        let hi = seg_end.min(to);
        if hi > lo {
            let a_lo = age0 + (lo - seg_start);
            area.add((a_lo + 0.5 * (hi - lo)) * (hi - lo));
        }
    };

    let mut seg_start = 0.0;
    let mut age0 = initial_age;
    for r in records {
        add_piece(seg_start, r.depart_time, age0);
        seg_start = r.depart_time;
        age0 = r.system_delay;
    }
    add_piece(seg_start, to, age0);
    Ok(area.value())
}

fn validate_records(records: &[UpdateRecord]) -> Result<(), SimError> {
    let mut prev_depart = 0.0f64;
    let mut prev_gen = -1.0f64;
    for (i, r) in records.iter().enumerate() {
        if r.depart_time < r.gen_time {
            return Err(SimError::InvalidRecords(format!(
                "record {i}: departs at {} before generation at {}",
                r.depart_time, r.gen_time
            )));
        }
        if i > 0 && r.depart_time <= prev_depart {
            return Err(SimError::InvalidRecords(format!(
                "record {i}: departures not strictly increasing ({} after {prev_depart})",
                r.depart_time
            )));
        }
        if r.gen_time <= prev_gen {
            return Err(SimError::InvalidRecords(format!(
                "record {i}: generations not strictly increasing ({} after {prev_gen})",
                r.gen_time
            )));
        }
        prev_depart = r.depart_time;
        prev_gen = r.gen_time;
    }
    Ok(())
}

/// Simulates under `mode` and tabulates the queue statistics against their
/// analytic counterparts. The analytic side uses the fixed error probability
/// in `FixedEps` mode and the exact-kernel fading average in `SampledFading`
/// mode. Rejects unstable configurations up front.
pub fn validate_queue(
    cfg: &SystemConfig,
    horizon: f64,
    seed: u64,
    mode: SimMode,
) -> Result<QueueValidation, SimError> {
    cfg.validate()?;
    let eps = match mode {
        SimMode::FixedEps(p) => p,
        SimMode::SampledFading => {
            finite_blocklength::system_error(cfg, ErrorMethod::QuadratureExact)?.eps_overall
        }
        SimMode::SampledFadingPerHop => {
            return Err(SimError::InvalidInput(
                "per-hop retransmission has no closed-form analytics to validate against"
                    .into(),
            ))
        }
    };
    let moments = aoi_analytics::service_moments(
        eps,
        cfg.n_total as f64,
        cfg.symbol_duration_s,
        cfg.channel_delay_s,
        cfg.lambda_rate,
    )?;
    if !aoi_analytics::is_stable(&moments) {
        return Err(SimError::Unstable {
            utilization: moments.utilization,
        });
    }
    let ana_wait = aoi_analytics::pk_mean_wait(&moments, cfg.lambda_rate)?;
    let ana_aaoi = aoi_analytics::aaoi_from_moments(&moments, cfg.lambda_rate).aaoi;

    let (result, records) = simulate_with_trace(cfg, horizon, seed, mode)?;
    let round = cfg.round_duration_s();
    let service: Vec<f64> = records.iter().map(|r| r.attempts as f64 * round).collect();
    let service_sq: Vec<f64> = service.iter().map(|s| s * s).collect();
    let waits: Vec<f64> = records
        .iter()
        .map(|r| r.system_delay - r.attempts as f64 * round)
        .collect();

    let (sim_s, se_s) = iid_mean_se(&service);
    let (sim_s2, se_s2) = iid_mean_se(&service_sq);
    let (sim_w, se_w) = batch_mean_se(&waits, BATCH_COUNT);

    Ok(QueueValidation {
        eps_used: eps,
        delivered: result.delivered_count,
        sim_mean_s: sim_s,
        se_mean_s: se_s,
        ana_mean_s: moments.mean_s,
        sim_second_moment_s: sim_s2,
        se_second_moment_s: se_s2,
        ana_second_moment_s: moments.second_moment_s,
        sim_mean_wait: sim_w,
        se_mean_wait: se_w,
        ana_mean_wait: ana_wait,
        sim_aaoi: result.time_avg_aoi_trimmed,
        sim_aaoi_ci: result.ci_halfwidth,
        ana_aaoi,
    })
}

fn iid_mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Standard error by batch means over consecutive index batches; the wait
/// sequence is autocorrelated through the queue.
fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    if xs.len() < batches * 2 {
        return iid_mean_se(xs);
    }
    let per = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| {
            let lo = b * per;
            let hi = if b + 1 == batches { xs.len() } else { lo + per };
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let (mean, se_t) = mean_ci(&means);
    (mean, se_t / t_975(batches - 1))
}

/// Writes the delivery trace: one `gen_time,depart_time,attempts,age_after`
/// line per delivery, 17 significant digits.
pub fn export_trace<W: Write>(records: &[UpdateRecord], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "gen_time,depart_time,attempts,age_after")?;
    for r in records {
        writeln!(
            out,
            "{:.16e},{:.16e},{},{:.16e}",
            r.gen_time, r.depart_time, r.attempts, r.system_delay
        )?;
    }
    Ok(())
}

/// Analytic service moments implied by a simulation mode; used by callers
/// pairing simulations with their closed-form counterparts.
pub fn analytic_moments_for_mode(
    cfg: &SystemConfig,
    mode: SimMode,
) -> Result<ServiceMoments, SimError> {
    let eps = match mode {
        SimMode::FixedEps(p) => p,
        SimMode::SampledFading => {
            finite_blocklength::system_error(cfg, ErrorMethod::QuadratureExact)?.eps_overall
        }
        SimMode::SampledFadingPerHop => {
            return Err(SimError::InvalidInput(
                "per-hop retransmission has no closed-form service moments".into(),
            ))
        }
    };
    Ok(aoi_analytics::service_moments(
        eps,
        cfg.n_total as f64,
        cfg.symbol_duration_s,
        cfg.channel_delay_s,
        cfg.lambda_rate,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn rec(gen: f64, depart: f64, attempts: u32) -> UpdateRecord {
        UpdateRecord {
            gen_time: gen,
            depart_time: depart,
            attempts,
            system_delay: depart - gen,
            interarrival: 0.0,
        }
    }

    #[test]
    fn sawtooth_no_deliveries_is_a_ramp() {
        let avg = integrate_sawtooth(&[], 2.0, 8.0).unwrap();
        assert_relative_eq!(avg, 2.0 + 4.0, max_relative = 1e-15);
    }

    #[test]
    fn sawtooth_single_update_hand_geometry() {
        // Ramp 0->1 over [0,1], reset to age 1, ramp to 3 at the horizon:
        // area = 1/2 + (1*2 + 2^2/2) = 4.5, average 1.5.
        let avg = integrate_sawtooth(&[rec(0.0, 1.0, 1)], 0.0, 3.0).unwrap();
        assert_abs_diff_eq!(avg, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn sawtooth_rejects_disorder() {
        let bad = vec![rec(0.0, 2.0, 1), rec(0.5, 1.5, 1)];
        assert!(matches!(
            integrate_sawtooth(&bad, 0.0, 3.0),
            Err(SimError::InvalidRecords(_))
        ));
        let bad_gen = vec![rec(1.0, 2.0, 1), rec(0.5, 2.5, 1)];
        assert!(matches!(
            integrate_sawtooth(&bad_gen, 0.0, 3.0),
            Err(SimError::InvalidRecords(_))
        ));
        let bad_delay = vec![UpdateRecord {
            gen_time: 2.0,
            depart_time: 1.0,
            attempts: 1,
            system_delay: -1.0,
            interarrival: 0.0,
        }];
        assert!(integrate_sawtooth(&bad_delay, 0.0, 3.0).is_err());
    }

    #[test]
    fn sawtooth_matches_brute_force_riemann_sum() {
        // Independent route: sample the age path on a fine grid.
        let records = vec![
            rec(0.3, 0.9, 2),
            rec(1.1, 1.7, 1),
            rec(1.4, 2.3, 3),
            rec(2.9, 4.0, 1),
        ];
        let horizon = 5.0;
        let initial = 0.7;
        let exact = integrate_sawtooth(&records, initial, horizon).unwrap();

        let steps = 2_000_000usize;
        let dt = horizon / steps as f64;
        let mut sum = 0.0;
        for i in 0..steps {
            let t = (i as f64 + 0.5) * dt;
            let mut age = initial + t;
            for r in &records {
                if r.depart_time <= t {
                    age = r.system_delay + (t - r.depart_time);
                }
            }
            sum += age * dt;
        }
        assert_relative_eq!(exact, sum / horizon, max_relative = 1e-6);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let cfg = SystemConfig::baseline(10.0);
        for mode in [
            SimMode::FixedEps(0.2),
            SimMode::SampledFading,
            SimMode::SampledFadingPerHop,
        ] {
            let a = simulate(&cfg, 200.0, 42, mode).unwrap();
            let b = simulate(&cfg, 200.0, 42, mode).unwrap();
            assert_eq!(a, b, "same seed must reproduce bit-identically");
            let c = simulate(&cfg, 200.0, 43, mode).unwrap();
            assert_ne!(
                a.time_avg_aoi, c.time_avg_aoi,
                "different seeds should differ"
            );
        }
    }

    #[test]
    fn per_hop_retransmission_beats_whole_round_under_stress() {
        // With substantial per-hop error, repeating only the failed hop's
        // slot wastes less airtime than repeating the full round.
        let mut cfg = SystemConfig::baseline(3.0);
        cfg.noise_dbm = -88.0;
        let whole = simulate(&cfg, 4.0e3, 5, SimMode::SampledFading).unwrap();
        let per_hop = simulate(&cfg, 4.0e3, 5, SimMode::SampledFadingPerHop).unwrap();
        assert!(
            per_hop.mean_delay < whole.mean_delay,
            "per-hop delay {} should beat whole-round {}",
            per_hop.mean_delay,
            whole.mean_delay
        );
        // No analytic counterpart exists for the experimental discipline.
        assert!(matches!(
            validate_queue(&cfg, 100.0, 1, SimMode::SampledFadingPerHop),
            Err(SimError::InvalidInput(_))
        ));
    }

    #[test]
    fn fixed_eps_zero_matches_analytic_aaoi() {
        let cfg = SystemConfig::baseline(10.0);
        let agg = simulate_replicated(&cfg, 2.0e4, 7, SimMode::FixedEps(0.0), 10).unwrap();
        let ana = aoi_analytics::aaoi_with_eps(&cfg, 0.0).unwrap().aaoi;
        assert!(
            (agg.mean_aaoi - ana).abs() <= 2.0 * agg.ci_halfwidth.max(0.005 * ana),
            "sim {} vs analytic {} (ci {})",
            agg.mean_aaoi,
            ana,
            agg.ci_halfwidth
        );
    }

    #[test]
    fn geometric_attempts_mean() {
        // >= 1e5 deliveries; empirical mean attempts -> 1/(1-p) within 1%.
        let cfg = SystemConfig::baseline(10.0);
        let p = 0.2;
        let res = simulate(&cfg, 1.2e4, 11, SimMode::FixedEps(p)).unwrap();
        assert!(res.delivered_count >= 100_000, "{}", res.delivered_count);
        let expect = 1.0 / (1.0 - p);
        assert!(
            (res.mean_attempts - expect).abs() <= 0.01 * expect,
            "mean attempts {} vs {}",
            res.mean_attempts,
            expect
        );
    }

    #[test]
    fn interarrival_mean_matches_rate() {
        let cfg = SystemConfig::baseline(10.0);
        let res = simulate(&cfg, 1.2e4, 5, SimMode::FixedEps(0.0)).unwrap();
        assert!(res.generated_count >= 100_000);
        assert!(
            (res.mean_interarrival - 0.1).abs() <= 0.001,
            "interarrival {}",
            res.mean_interarrival
        );
    }

    #[test]
    fn delay_bounds_hold_per_update() {
        let cfg = SystemConfig::baseline(12.0);
        let (_, records) =
            simulate_with_trace(&cfg, 500.0, 3, SimMode::FixedEps(0.3)).unwrap();
        let round = cfg.round_duration_s();
        for r in &records {
            let service = r.attempts as f64 * round;
            assert!(
                r.system_delay >= service - 1e-12,
                "delay {} below service {service}",
                r.system_delay
            );
        }
        // At least one zero-wait update achieves equality.
        let zero_wait = records
            .iter()
            .any(|r| (r.system_delay - r.attempts as f64 * round).abs() < 1e-9);
        assert!(zero_wait, "expected some update with no queueing delay");
    }

    #[test]
    fn no_delivery_is_explicit() {
        let cfg = SystemConfig::baseline(10.0);
        // Horizon shorter than one round: nothing can depart inside it.
        let err = simulate(&cfg, 0.02, 9, SimMode::FixedEps(0.0));
        assert!(matches!(err, Err(SimError::NoDelivery { .. })));
    }

    #[test]
    fn unstable_config_reported_by_validate_queue() {
        let cfg = SystemConfig::baseline(40.0);
        let err = validate_queue(&cfg, 100.0, 1, SimMode::FixedEps(0.0));
        assert!(matches!(err, Err(SimError::Unstable { .. })));
    }

    #[test]
    fn validate_queue_matches_service_mean() {
        let cfg = SystemConfig::baseline(10.0);
        let v = validate_queue(&cfg, 1.2e4, 17, SimMode::FixedEps(0.2)).unwrap();
        assert!(v.delivered >= 100_000);
        assert_relative_eq!(v.ana_mean_s, 0.0375, max_relative = 1e-12);
        assert!(
            (v.sim_mean_s - v.ana_mean_s).abs() <= 0.01 * v.ana_mean_s,
            "sim E[s] {} vs {}",
            v.sim_mean_s,
            v.ana_mean_s
        );
        assert!(
            (v.sim_mean_wait - v.ana_mean_wait).abs() <= 0.05 * v.ana_mean_wait,
            "sim E[w] {} vs {}",
            v.sim_mean_wait,
            v.ana_mean_wait
        );
    }

    #[test]
    fn trace_round_trips_through_text() {
        let cfg = SystemConfig::baseline(10.0);
        let (_, records) = simulate_with_trace(&cfg, 50.0, 2, SimMode::FixedEps(0.1)).unwrap();
        let mut buf = Vec::new();
        export_trace(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "gen_time,depart_time,attempts,age_after");
        for (line, r) in lines.zip(&records) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 4);
            assert_eq!(fields[0].parse::<f64>().unwrap(), r.gen_time);
            assert_eq!(fields[1].parse::<f64>().unwrap(), r.depart_time);
            assert_eq!(fields[2].parse::<u32>().unwrap(), r.attempts);
            assert_eq!(fields[3].parse::<f64>().unwrap(), r.system_delay);
        }
    }

    #[test]
    fn replication_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for rep in 0..1000 {
            assert!(seen.insert(replication_seed(99, rep)));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sawtooth_translation_invariant(
            shift in 1.0f64..1e3,
            delays in proptest::collection::vec(0.01f64..0.5, 1..20),
        ) {
            // Build a consistent FCFS record set from random delays.
            let initial_age = 0.5;
            let mut records = Vec::new();
            let mut t = 0.0;
            for (i, d) in delays.iter().enumerate() {
                let gen = t + 0.05;
                let depart = gen + d;
                records.push(rec(gen, depart, 1 + (i % 3) as u32));
                t = depart;
            }
            let horizon = t + 1.0;
            let base = integrate_window(&records, initial_age, 0.0, horizon).unwrap();

            // Shift every event by a constant and pin the age at the window
            // start with an anchor delivery; the area over the shifted window
            // must be unchanged.
            let mut shifted = vec![UpdateRecord {
                gen_time: shift - initial_age,
                depart_time: shift,
                attempts: 1,
                system_delay: initial_age,
                interarrival: 0.0,
            }];
            shifted.extend(records.iter().map(|r| UpdateRecord {
                gen_time: r.gen_time + shift,
                depart_time: r.depart_time + shift,
                ..*r
            }));
            let moved =
                integrate_window(&shifted, 0.0, shift, horizon + shift).unwrap();
            prop_assert!(
                (base - moved).abs() <= 1e-9 * base.abs().max(1.0),
                "base {base} vs shifted {moved}"
            );
        }

        #[test]
        fn age_resets_to_system_delay(seed in 0u64..500) {
            let cfg = SystemConfig::baseline(8.0);
            let (_, records) =
                simulate_with_trace(&cfg, 100.0, seed, SimMode::FixedEps(0.25)).unwrap();
            // Age just before delivery i+1 equals Y_i + (D_{i+1} - D_i).
            for w in records.windows(2) {
                let before = w[0].system_delay + (w[1].depart_time - w[0].depart_time);
                prop_assert!(before >= w[1].system_delay - 1e-9,
                    "age must not increase at a delivery");
            }
        }
    }
}
