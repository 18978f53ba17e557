//! Delayed sampled-data implementation of derivative-dependent output feedback,
//! with LMI stability certificates, an in-house SDP solver, and simulators.

pub mod cli;
pub mod config;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod sdp;
pub mod search;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
