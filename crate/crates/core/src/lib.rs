//! Second-order minimum energy filtering on SE(3) with constant velocity,
//! acceleration, jerk and snap models, an extended Kalman filter baseline on
//! the same group, and a synthetic depth/flow data generator.

pub mod ekf;
pub mod error;
pub mod integrators;
pub mod lie_core;
pub mod mef;
pub mod observation;
pub mod synth;

pub use error::{Error, Result};
pub use lie_core::{AlgebraVector, GroupElement, PoseMatrix, Se3Matrix};
pub use mef::{FilterConfig, FilterState};
pub use observation::{Frame, LinearObservation, ObsWeight, Observation};
pub use ekf::{EkfConfig, EkfState};
