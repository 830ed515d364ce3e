//! Object-centric insertion surrogate with failure forecasting and
//! lift-and-retry recovery.

pub mod error;
pub mod forecast;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod pose;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
