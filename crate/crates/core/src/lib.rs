//! MIMO-OFDM link-level simulator with an online, per-subframe learned
//! channel estimator and classical LS/LMMSE baselines.

pub mod channel;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod numerics;
pub mod phy;
pub mod structnet;

pub use error::{Error, Result};
