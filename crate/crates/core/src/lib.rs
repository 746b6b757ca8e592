//! Robust transmit-covariance design for multi-link MIMO cognitive-radio
//! networks that share spectrum with primary users.

pub mod allocator;
pub mod bca;
pub mod error;
pub mod harness;
pub mod lmi;
pub mod matrix;
pub mod mse;
pub mod scenario;
pub mod sdp;

pub use error::{Error, Result};
