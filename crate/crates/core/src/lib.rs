//! State estimation over networks with delays and dropouts using jump observers.

pub mod designer;
pub mod error;
pub mod flops;
pub mod kalman;
pub mod exec;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod outcome_chain;
pub mod reference;
pub mod simulator;

pub use error::{Error, Result};
