//! Virtual-time simulator for semi-asynchronous federated learning.
//!
//! Clients train on non-IID label shards and report back after a per-client
//! latency. The server folds their updates into a global model under one of
//! five strategies, including a buffered scheme that clusters clients by
//! privately projected label distributions and drops updates that are both
//! smaller and staler than their cluster's best.
//!
//! ```no_run
//! use afbs_core::{ExperimentConfig, Scenario, StrategyName};
//!
//! let config = ExperimentConfig::default();
//! let scenario = Scenario::build(&config)?;
//! for name in [StrategyName::FedBuff, StrategyName::Afbs] {
//!     let report = scenario.run_strategy(name)?;
//!     println!("{name}: best accuracy {:.3}", report.best_accuracy);
//! }
//! # Ok::<(), afbs_core::Error>(())
//! ```

// `!(x >= 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod projection;
pub mod rng;
pub mod sim;
pub mod strategy;
pub mod trainer;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use metrics::RunReport;
pub use model::{Architecture, ModelParams};
pub use sim::{run_simulation, Scenario, Simulation};
pub use strategy::{AggregationStrategy, StrategyName, Update};
