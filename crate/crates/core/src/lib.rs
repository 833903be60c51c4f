//! Warehouse picking simulator with a tabular Q-learning policy, calibrated
//! perception and fault models, and an analysis harness.

pub mod analysis;
pub mod bench;
pub mod config;
pub mod env;
pub mod metrics;
pub mod perception;
pub mod qlearning;
pub mod sim;
pub mod warehouse;

pub use config::ExperimentConfig;
pub use qlearning::{QParams, QTable};
pub use warehouse::{Action, GridPos, Layout, StateId, WarehouseState};
