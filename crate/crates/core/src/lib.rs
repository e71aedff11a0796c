//! Byzantine-resilient federated learning with smoothed geometric median
//! aggregation, computed either exactly at the server or over a simulated
//! over-the-air (AirComp) fading uplink.
//!
//! The pieces, bottom up:
//!
//! * [`data`]: MNIST IDX loading, a synthetic Gaussian-cluster generator and
//!   IID partitioning.
//! * [`model`]: multi-class logistic regression and the one-step SGD local
//!   update.
//! * [`robust_agg`]: the smoothed geometric median via Weiszfeld, and the mean
//!   baseline.
//! * [`aircomp`]: channel inversion, soft-threshold power control,
//!   superposition and decoding for each Weiszfeld iteration.
//! * [`attacks`]: class flip and weight flip.
//! * [`federation`]: the round loop and metrics.
//! * [`config`] and [`metrics`]: the text config, run manifest and CSV output
//!   used by the `airfl` binary.

pub mod aircomp;
pub mod attacks;
pub mod config;
pub mod data;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod robust_agg;
pub mod streams;

pub use federation::{
    run_experiment, AggregationMode, ExperimentConfig, ExperimentOutcome, RoundMetrics, Simulation,
};
pub use model::ModelParams;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Aggregation(#[from] robust_agg::AggError),
    #[error(transparent)]
    Air(#[from] aircomp::AirError),
    #[error(transparent)]
    Attack(#[from] attacks::AttackError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("invalid config key {key}: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Metrics(String),
}
