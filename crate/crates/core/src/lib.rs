//! Average age-of-information (AAoI) analysis for a two-hop decode-and-forward
//! relay link carrying short status updates over quasi-static Rayleigh fading.
//!
//! The crate has two independent routes to the same quantity and a harness that
//! plays them against each other:
//!
//! * closed-form analytics: per-hop block error probabilities in the
//!   finite-blocklength regime ([`finite_blocklength`]), folded into an M/G/1
//!   queueing model with geometric retransmissions ([`aoi_analytics`]);
//! * Monte Carlo: a discrete-event sample-path simulator of the age process
//!   with per-round fading and decoding draws ([`aoi_simulator`]).
//!
//! [`experiments`] sweeps parameters (update rate, blocklength, allocation
//! factors) over both routes and locates optima; [`cli`] exposes everything as
//! a command-line tool with CSV/JSON-lines emission.

// Reference values are frozen at full precision; validation comparisons are
// written in the negated form so NaN fails them.
#![allow(clippy::excessive_precision)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aoi_analytics;
pub mod aoi_simulator;
pub mod cli;
pub mod experiments;
pub mod finite_blocklength;
pub mod link_model;

pub use aoi_analytics::{AoiEstimate, ServiceMoments};
pub use aoi_simulator::{SimMode, SimResult, UpdateRecord};
pub use experiments::{SweepParameter, SweepResult, SweepSpec};
pub use finite_blocklength::{ApproxParams, ErrorMethod, ErrorReport};
pub use link_model::{ConfigError, LinkBudget, SystemConfig};
