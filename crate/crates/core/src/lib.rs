pub mod baselines;
pub mod calibration;
pub mod config;
pub mod covariance;
pub mod data;
pub mod error;
pub mod lattice;
pub mod mvn;
pub mod output;
pub mod rank_test;
pub mod seeds;
pub mod simulation;

pub use error::{Error, Result};
