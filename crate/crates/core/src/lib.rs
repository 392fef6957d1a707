//! Forecasting of life-table death-count curves with calibrated pointwise
//! prediction intervals.
//!
//! Curves are mapped to an unconstrained space ([`transforms`]), decomposed
//! by functional principal components ([`fpca`]), extrapolated through their
//! scores ([`score`]) and mapped back. Bands come from [`intervals`], and
//! [`evaluation`] backtests the whole pipeline over an expanding window.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod fpca;
pub mod intervals;
pub mod score;
pub mod stats;
pub mod transforms;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use data::{AgeGrid, LifeTableSeries, Sex};
pub use error::{Error, Result};
pub use exec::Execution;
pub use fpca::{FpcaModel, KRule, ModelKind};
pub use intervals::{IntervalBand, Method};
pub use score::ScoreModel;
pub use transforms::{CdfOptions, Transform, UnconstrainedSeries};
