//! Phase-aberration correction workbench for ultrasound localization microscopy.

pub mod aberration;
pub mod beamform;
pub mod cvcnn;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod interp;
pub mod iq;
pub mod metrics;
pub mod pipeline;
pub mod simulator;
pub mod tensor;
pub mod ulm;
pub mod ulmt;

pub use error::{Error, Result};
