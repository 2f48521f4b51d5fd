//! Calibrated confidence estimates for entities predicted by structured
//! sequence models: k-best decoding, Monte Carlo sample statistics,
//! forecasters, and calibration metrics.

pub mod decode;
pub mod error;
pub mod events;
pub mod features;
pub mod forecast;
pub mod io;
pub mod lm;
pub mod metrics;
pub mod pipeline;
pub mod rescore;
pub mod toymodel;
pub mod types;

pub use error::{Error, Result};
