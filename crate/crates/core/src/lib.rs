//! Plane-wave ultrasound speed-of-sound data factory.
//!
//! Builds digital phantoms, propagates a single zero-degree plane wave
//! through them, records per-channel RF, and provides the preprocessing,
//! corruption, beamforming and evaluation stages around that data.

pub mod beamform;
pub mod calibration;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod sigproc;
pub mod solver;

pub use error::{Error, Result};
