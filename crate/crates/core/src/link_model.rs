//! Physical-layer link budgets for the two-hop relay geometry.
//!
//! Converts the system configuration (distances, powers, noise, blocklength
//! budget) into the per-hop quantities the error model consumes: large-scale
//! path gain, fading-averaged SNR and allocated blocklength. All internal
//! computation is in SI linear units; dB/dBm appear only at the configuration
//! boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nominal speed of light used by the path-gain model, m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 3.0e8;

/// Relative guard band for the queue stability test `E[s] < 1/lambda`.
pub const STABILITY_GUARD: f64 = 1e-9;

/// Configuration validation failure, naming the offending key.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConfigError {
    #[error("`{key}` = {value} is out of range ({requirement})")]
    OutOfRange {
        key: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("`eta_sr` + `eta_rd` = {sum} exceeds the blocklength budget (must be <= 1)")]
    EtaBudgetExceeded { sum: f64 },
}

/// Which hop of the relay link a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hop {
    SourceRelay,
    RelayDestination,
}

/// Full parameter set for one analysis or simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Source-destination distance, meters.
    pub d_m: f64,
    /// Relay placement fraction in (0,1); S-R distance is `tau * d_m`.
    pub tau: f64,
    /// Total transmit power constraint, dBm.
    pub total_power_dbm: f64,
    /// Source power allocation factor in (0,1].
    pub phi_s: f64,
    /// Relay power allocation factor in (0,1].
    pub phi_r: f64,
    /// Noise variance at each receiver, dBm.
    pub noise_dbm: f64,
    /// Carrier frequency, Hz.
    pub carrier_hz: f64,
    /// Total blocklength budget, channel uses.
    pub n_total: u32,
    /// Blocklength allocation factor of the S-R hop, in (0,1).
    pub eta_sr: f64,
    /// Blocklength allocation factor of the R-D hop, in (0,1).
    pub eta_rd: f64,
    /// Update size, bits per block.
    pub k_bits: u32,
    /// Symbol duration, seconds per channel use.
    pub symbol_duration_s: f64,
    /// Channel-induced delay per transmission round, seconds.
    pub channel_delay_s: f64,
    /// Poisson update generation rate, updates per second.
    pub lambda_rate: f64,
}

impl SystemConfig {
    /// Baseline parameter set used throughout the experiments: 1 km link with
    /// the relay at the midpoint, 23 dBm total power split evenly, -167 dBm
    /// noise, 6 GHz carrier, 300 channel uses split evenly, 100-bit updates,
    /// 0.1 ms symbols, no extra channel delay.
    pub fn baseline(lambda_rate: f64) -> Self {
        Self {
            d_m: 1000.0,
            tau: 0.5,
            total_power_dbm: 23.0,
            phi_s: 0.5,
            phi_r: 0.5,
            noise_dbm: -167.0,
            carrier_hz: 6.0e9,
            n_total: 300,
            eta_sr: 0.5,
            eta_rd: 0.5,
            k_bits: 100,
            symbol_duration_s: 1.0e-4,
            channel_delay_s: 0.0,
            lambda_rate,
        }
    }

    /// Checks every field against its admissible range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(
            ok: bool,
            key: &'static str,
            value: f64,
            requirement: &'static str,
        ) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange {
                    key,
                    value,
                    requirement,
                })
            }
        }

        check(self.d_m > 0.0 && self.d_m.is_finite(), "d_m", self.d_m, "> 0")?;
        check(
            self.tau > 0.0 && self.tau < 1.0,
            "tau",
            self.tau,
            "in (0,1)",
        )?;
        check(
            self.total_power_dbm.is_finite(),
            "total_power_dbm",
            self.total_power_dbm,
            "finite",
        )?;
        check(
            self.phi_s > 0.0 && self.phi_s <= 1.0,
            "phi_s",
            self.phi_s,
            "in (0,1]",
        )?;
        check(
            self.phi_r > 0.0 && self.phi_r <= 1.0,
            "phi_r",
            self.phi_r,
            "in (0,1]",
        )?;
        check(
            self.noise_dbm.is_finite(),
            "noise_dbm",
            self.noise_dbm,
            "finite",
        )?;
        check(
            self.carrier_hz > 0.0 && self.carrier_hz.is_finite(),
            "carrier_hz",
            self.carrier_hz,
            "> 0",
        )?;
        check(self.n_total >= 2, "n_total", self.n_total as f64, ">= 2")?;
        check(
            self.eta_sr > 0.0 && self.eta_sr < 1.0,
            "eta_sr",
            self.eta_sr,
            "in (0,1)",
        )?;
        check(
            self.eta_rd > 0.0 && self.eta_rd < 1.0,
            "eta_rd",
            self.eta_rd,
            "in (0,1)",
        )?;
        if self.eta_sr + self.eta_rd > 1.0 {
            return Err(ConfigError::EtaBudgetExceeded {
                sum: self.eta_sr + self.eta_rd,
            });
        }
        check(self.k_bits >= 1, "k_bits", self.k_bits as f64, ">= 1")?;
        check(
            self.symbol_duration_s > 0.0 && self.symbol_duration_s.is_finite(),
            "symbol_duration_s",
            self.symbol_duration_s,
            "> 0",
        )?;
        check(
            self.channel_delay_s >= 0.0 && self.channel_delay_s.is_finite(),
            "channel_delay_s",
            self.channel_delay_s,
            ">= 0",
        )?;
        check(
            self.lambda_rate > 0.0 && self.lambda_rate.is_finite(),
            "lambda_rate",
            self.lambda_rate,
            "> 0",
        )?;
        Ok(())
    }

    /// Duration of one two-hop transmission round, `n*T + upsilon`, seconds.
    pub fn round_duration_s(&self) -> f64 {
        self.n_total as f64 * self.symbol_duration_s + self.channel_delay_s
    }
}

/// Per-hop derived quantities: path gain, fading-averaged SNR and allocated
/// blocklength. The blocklength is kept as a real number; only the simulator
/// rounds it to whole channel uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Large-scale path gain, linear scale.
    pub alpha: f64,
    /// Fading-averaged SNR `alpha * P_i / sigma^2`, linear scale.
    pub avg_snr: f64,
    /// Allocated blocklength `eta * n`, channel uses.
    pub n_hop: f64,
    /// Which hop this budget describes.
    pub hop: Hop,
}

/// Converts dBm to watts: `10^((p - 30) / 10)`.
pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    10f64.powf((p_dbm - 30.0) / 10.0)
}

/// Converts watts to dBm; inverse of [`dbm_to_watts`].
pub fn watts_to_dbm(p_w: f64) -> f64 {
    10.0 * p_w.log10() + 30.0
}

/// Free-space path gain between two nodes, linear scale:
/// `alpha = (c / (4 pi f d))^2`.
pub fn path_gain(distance_m: f64, carrier_hz: f64) -> Result<f64, ConfigError> {
    if !(distance_m > 0.0) {
        return Err(ConfigError::OutOfRange {
            key: "distance_m",
            value: distance_m,
            requirement: "> 0",
        });
    }
    if !(carrier_hz > 0.0) {
        return Err(ConfigError::OutOfRange {
            key: "carrier_hz",
            value: carrier_hz,
            requirement: "> 0",
        });
    }
    let ratio = SPEED_OF_LIGHT_M_S / (4.0 * std::f64::consts::PI * carrier_hz * distance_m);
    Ok(ratio * ratio)
}

/// Builds the S-R and R-D link budgets from a validated configuration.
///
/// The S-R hop spans `tau * d` with power `phi_s * P` and blocklength
/// `eta_sr * n`; the R-D hop spans `(1 - tau) * d` with `phi_r * P` and
/// `eta_rd * n`.
pub fn build_link_budgets(cfg: &SystemConfig) -> Result<(LinkBudget, LinkBudget), ConfigError> {
    cfg.validate()?;
    let total_power_w = dbm_to_watts(cfg.total_power_dbm);
    let noise_w = dbm_to_watts(cfg.noise_dbm);
    let n = cfg.n_total as f64;

    let hop = |distance: f64, power_w: f64, n_hop: f64, hop: Hop| -> Result<LinkBudget, ConfigError> {
        let alpha = path_gain(distance, cfg.carrier_hz)?;
        Ok(LinkBudget {
            alpha,
            avg_snr: alpha * power_w / noise_w,
            n_hop,
            hop,
        })
    };

    let sr = hop(
        cfg.tau * cfg.d_m,
        cfg.phi_s * total_power_w,
        cfg.eta_sr * n,
        Hop::SourceRelay,
    )?;
    let rd = hop(
        (1.0 - cfg.tau) * cfg.d_m,
        cfg.phi_r * total_power_w,
        cfg.eta_rd * n,
        Hop::RelayDestination,
    )?;
    Ok((sr, rd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn dbm_conversion_anchors() {
        assert_relative_eq!(dbm_to_watts(30.0), 1.0, max_relative = 1e-15);
        assert_relative_eq!(dbm_to_watts(0.0), 1.0e-3, max_relative = 1e-15);
        // 10^(-0.7) evaluated independently to 17 digits.
        assert_relative_eq!(
            dbm_to_watts(23.0),
            0.19952623149688796,
            max_relative = 1e-14
        );
    }

    #[test]
    fn path_gain_unity_distance() {
        // At d = c / (4 pi f) the exponent cancels and alpha = 1.
        let f = 6.0e9;
        let d = SPEED_OF_LIGHT_M_S / (4.0 * std::f64::consts::PI * f);
        assert_relative_eq!(path_gain(d, f).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn path_gain_reference_values() {
        // Hand evaluation of the free-space formula at 6 GHz.
        let a1000 = path_gain(1000.0, 6.0e9).unwrap();
        assert_relative_eq!(a1000, 1.5831434944115277e-11, max_relative = 1e-12);
        assert_relative_eq!(-10.0 * a1000.log10(), 108.0047972, max_relative = 1e-9);

        // Halving the distance quadruples the gain, exactly.
        let a500 = path_gain(500.0, 6.0e9).unwrap();
        assert_relative_eq!(a500, 4.0 * a1000, max_relative = 1e-14);
        assert_relative_eq!(a500, 6.3325739776461107e-11, max_relative = 1e-12);
    }

    #[test]
    fn path_gain_rejects_nonpositive() {
        assert!(path_gain(0.0, 6.0e9).is_err());
        assert!(path_gain(-5.0, 6.0e9).is_err());
        assert!(path_gain(100.0, 0.0).is_err());
    }

    #[test]
    fn budgets_at_baseline() {
        let cfg = SystemConfig::baseline(22.0);
        let (sr, rd) = build_link_budgets(&cfg).unwrap();
        assert_eq!(sr.n_hop, 150.0);
        assert_eq!(rd.n_hop, 150.0);
        // Composed from path_gain and dbm_to_watts at the baseline numbers.
        assert_relative_eq!(sr.avg_snr, 316628698.88230554, max_relative = 1e-12);
        assert_relative_eq!(10.0 * sr.avg_snr.log10(), 85.005503, max_relative = 1e-8);
    }

    #[test]
    fn budgets_symmetric_when_config_symmetric() {
        let cfg = SystemConfig::baseline(10.0);
        let (sr, rd) = build_link_budgets(&cfg).unwrap();
        assert_eq!(sr.alpha, rd.alpha);
        assert_eq!(sr.avg_snr, rd.avg_snr);
        assert_eq!(sr.n_hop, rd.n_hop);
    }

    #[test]
    fn sr_snr_decreases_as_relay_moves_away() {
        let mut prev = f64::INFINITY;
        for tau in [0.2, 0.4, 0.6, 0.8, 0.95] {
            let cfg = SystemConfig {
                tau,
                ..SystemConfig::baseline(10.0)
            };
            let (sr, _) = build_link_budgets(&cfg).unwrap();
            assert!(
                sr.avg_snr < prev,
                "S-R SNR must fall as tau grows: tau={tau} snr={}",
                sr.avg_snr
            );
            prev = sr.avg_snr;
        }
    }

    #[test]
    fn eta_budget_enforced() {
        let mut cfg = SystemConfig::baseline(10.0);
        cfg.eta_sr = 0.6;
        cfg.eta_rd = 0.5;
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::EtaBudgetExceeded { .. })
        ));
        // Under-allocation leaves channel uses idle but is allowed.
        cfg.eta_rd = 0.3;
        assert!(cfg.validate().is_ok());
        let (sr, rd) = build_link_budgets(&cfg).unwrap();
        assert_eq!(sr.n_hop, 180.0);
        assert_eq!(rd.n_hop, 90.0);
    }

    #[test]
    fn validation_names_offending_key() {
        let mut cfg = SystemConfig::baseline(10.0);
        cfg.tau = 1.5;
        match cfg.validate() {
            Err(ConfigError::OutOfRange { key, .. }) => assert_eq!(key, "tau"),
            other => panic!("expected OutOfRange for tau, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn dbm_round_trip(p in -100.0f64..60.0) {
            let back = watts_to_dbm(dbm_to_watts(p));
            prop_assert!((back - p).abs() <= 1e-12 * p.abs().max(1.0));
        }

        #[test]
        fn alpha_inverse_square_in_distance(d in 1.0f64..1e5, f in 1e8f64..1e11) {
            let a = path_gain(d, f).unwrap();
            let a2 = path_gain(2.0 * d, f).unwrap();
            prop_assert!((a / a2 - 4.0).abs() < 1e-12 * 4.0);
        }

        #[test]
        fn snr_linear_in_power(extra_db in 0.0f64..30.0) {
            let base = SystemConfig::baseline(10.0);
            let boosted = SystemConfig {
                total_power_dbm: base.total_power_dbm + extra_db,
                ..base.clone()
            };
            let (sr0, _) = build_link_budgets(&base).unwrap();
            let (sr1, _) = build_link_budgets(&boosted).unwrap();
            let expect = 10f64.powf(extra_db / 10.0);
            prop_assert!((sr1.avg_snr / sr0.avg_snr / expect - 1.0).abs() < 1e-12);
        }
    }
}
