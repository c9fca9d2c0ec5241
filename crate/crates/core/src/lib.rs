//! Multi-target DOA tracking with a sequential Monte Carlo PHD filter.
//!
//! The filter can run plain (SMC-PHD), with a non-zero-diffusion particle
//! flow applied to every particle (NPF), or with the intensity particle flow
//! (IPF) that folds clutter intensity and detection probability into the
//! migration of surviving particles. Around it sit a track-identity
//! post-processor, a synthetic scenario generator and the OSPA metric.

pub mod cluster;
pub mod error;
pub mod flow;
pub mod ident;
pub mod metrics;
pub mod model;
pub mod phd;
pub mod sim;
pub mod tracker;

pub use error::{Error, Result};
pub use flow::{FlowConfig, FlowKind};
pub use ident::{IdentityTracker, TrackEstimate};
pub use metrics::OspaParams;
pub use model::{Measurement, NoiseModel, Particle, TargetState};
pub use phd::{FilterConfig, ParticlePopulation};
pub use sim::{FrameRecord, ScenarioConfig, TargetSpec};
pub use tracker::{FrameOutput, Tracker, TrackerConfig};
