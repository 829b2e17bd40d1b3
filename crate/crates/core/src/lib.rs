//! Downlink scheduling simulator plus an offline multi-agent RL stack.
//!
//! The crate simulates a square network of access points serving mobile
//! users (path loss, shadowing, Rayleigh fading, SINR, proportional-fair
//! weighting), provides four behavioral scheduling baselines, and trains
//! centralized / independent / CTDE agents either online (discrete SAC,
//! DQN) or purely offline from recorded experience (conservative
//! Q-learning). Evaluation reports sum rate, 5-percentile rate, and the
//! combined score.

pub mod error;
pub mod kv;
pub mod seeding;

pub mod nn;

pub mod env;

pub mod baselines;

pub mod metrics;

pub mod dataset;

pub mod marl;

pub use error::{Error, Result};
