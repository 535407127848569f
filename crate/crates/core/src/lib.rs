//! Multitask VAE-RNN toolkit for continuous glucose monitoring (CGM) series:
//! joint reconstruction/imputation and forecasting, the classical and
//! recurrent baselines it is compared against, and the statistical and
//! Clarke Error Grid evaluation used to rank them.

pub mod baselines;
pub mod benchmark;
pub mod cells;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod imputation;
pub mod metrics;
pub mod numeric;
pub mod report;
pub mod svg;
pub mod train;
pub mod vae;

pub use error::{Error, Result};
