//! Decision-grade nowcasting engine.
//!
//! The crate is organised along the workflow: [`vintage`] reconstructs what
//! was known at each forecast origin, [`models`] fits the candidate
//! portfolio, [`walk_forward`] runs the time-aware backtest, [`bootstrap`]
//! turns block-resampled refits into prediction intervals, [`explain`]
//! attaches attributions with bands and stability checks, [`combination`]
//! runs the model confidence set and forecast averaging, and [`report`]
//! assembles release packages with fallback and audit records.
//! [`dgp`] provides the synthetic processes the test-suite runs on.

pub mod bootstrap;
pub mod combination;
pub mod dgp;
pub mod digest;
pub mod error;
pub mod explain;
pub mod models;
pub mod period;
pub mod report;
pub mod rng;
pub mod stats;
pub mod vintage;
pub mod walk_forward;

pub use error::{NowcastError, Result};
pub use period::{Frequency, Period};
