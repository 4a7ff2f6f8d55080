//! Budget planning for differentially private federated recommendation.

pub mod allocator;
pub mod baselines;
pub mod budget;
pub mod constrainer;
pub mod context;
pub mod error;
pub mod gpr;
pub mod harness;
pub mod lp;
pub mod sim;

pub use error::{Error, Result};
