//! Event-camera pixel simulator with fixed-step bias feedback control.
//!
//! The crate is organised bottom-up:
//!
//! * [`bias`] maps dimensionless tweaks to bias currents and pixel parameters.
//! * [`stimulus`] renders the rotating-dot scene from a timed schedule.
//! * [`pixel`] simulates the DVS pixel array, including noise and bias-change bursts.
//! * [`metering`] turns events into windowed rates with a background-activity filter.
//! * [`control`] holds the three fixed-step controllers and their supervisor.
//! * [`harness`] wires everything into closed-loop runs and parameter sweeps.

pub mod bias;
pub mod control;
pub mod error;
pub mod events;
pub mod harness;
pub mod metering;
pub mod pixel;
pub mod stimulus;

pub use bias::{BiasCurrents, CameraConstants, PixelParams, TweakSet, TweakTarget};
pub use control::{ControlAction, ControllerConfig, ControllerKind, Supervisor};
pub use error::{Error, Result};
pub use metering::{Denoiser, RateSample};
pub use pixel::{Event, NoiseModel, PixelArray, Polarity, Provenance};
pub use stimulus::{Geometry, ScenarioSchedule, Stimulus};
