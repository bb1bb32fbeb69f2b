//! Constrained ranking through predicted shadow prices.
//!
//! Offline, the Lagrangian dual of each training user's constrained
//! assignment problem is solved for its shadow prices `lambda`. A regressor
//! then maps user covariates to `lambda`, so that online a ranking only
//! needs one prediction, one score vector and one sort.

pub mod assignment;
pub mod cli;
pub mod dataset;
pub mod dual;
pub mod error;
pub mod exec;
pub mod model;
pub mod pipeline;
pub mod predictor;
pub mod protocol;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{
    Assignment, BoundKind, ConstraintSpec, DiscountVector, Matrix, RankingInstance, Sense,
    ShadowPriceVector, Weights,
};
