//! Multi-agent deep Q-learning simulator for microgrid demand response.
//!
//! A service-provider agent sets the per-slot buy price paid for prosumer
//! injections; each prosumer agent schedules its home battery. The grid side
//! settles every 15-minute slot with a merit-order dispatch of quadratic-cost
//! generators with quadratic transmission losses.
//!
//! Module map:
//! - [`env`]: generator costs, losses, dispatch, prices, service-provider settlement
//! - [`prosumer`]: battery dynamics, net injection, prosumer reward, rule-based baseline
//! - [`profiles`]: synthetic and CSV-loaded 96-slot daily profiles
//! - [`nn`]: dense tanh network, backpropagation, Adam
//! - [`dqn`]: replay buffer, epsilon-greedy, TD targets, soft target updates
//! - [`sim`]: the per-slot interaction timeline, training and evaluation
//! - [`metrics`]: daily aggregates and CSV/JSON export
//! - [`config`]: JSON scenario configuration with documented defaults
//! - [`experiment`]: multi-seed comparisons and parameter sweeps


pub mod config;
pub mod dqn;
pub mod env;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod profiles;
pub mod prosumer;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};

/// Number of 15-minute slots in one simulated day.
pub const SLOTS_PER_DAY: usize = 96;
