//! Prediction-led orchestration of RAN optimisation apps.
//!
//! The crate simulates diurnal multi-class cellular traffic over a
//! flow-level macro + small-cell network, forecasts the aggregate volume with
//! a decomposition/auto-correlation transformer, and switches a DQN traffic
//! steering xApp or a DQN cell-sleeping rApp on and off against two volume
//! thresholds, never both at once.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod forecast;
pub mod par;
pub mod netsim;
pub mod orchestrator;
pub mod pipeline;
pub mod rlapps;
pub mod runner;
pub mod stages;
pub mod traffic;

pub use error::{Error, Result};
