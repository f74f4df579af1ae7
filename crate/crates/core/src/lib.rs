//! Cooperative multi-user radio SLAM for mmWave ISAC systems.
//!
//! The crate simulates a static base station (the physical anchor, PA) serving
//! several moving UEs over a narrowband mmWave channel. Walls generate
//! single-bounce NLoS paths that behave as if radiated from virtual anchors
//! (VAs), the mirror images of the PA. Each UE runs a particle-filter SLAM on
//! noisy path-angle and IMU measurements; the BS fuses the uploaded local maps
//! into a global radio map with per-UE visibility, feeds the map back to the
//! UEs, optionally sharpens localization with camera detections, and uses the
//! map to steer multi-user beam selection.
//!
//! Modules follow the processing pipeline:
//!
//! - [`geometry`]: ground-truth propagation geometry (mirror anchors, path
//!   angles, reflection gains, field-of-view schedules).
//! - [`channel`]: channel synthesis, beam codebooks, and spectral efficiency.
//! - [`sensors`]: measurement synthesis (angles, IMU dead reckoning, camera).
//! - [`local_slam`]: per-UE particle-filter SLAM with per-feature EKFs.
//! - [`global_map`]: BS-side two-stage global radio-map construction.
//! - [`vision_fusion`]: pixel-indexed error tables and multi-modal fusion.
//! - [`beam_mgmt`]: sensing-aided beam selection, tracking codebooks, and
//!   baseline strategies.
//! - [`metrics`]: OSPA map error, UE localization error, realized SE.
//! - [`harness`]: scenario configs, the simulation loop, Monte Carlo batching,
//!   and CSV/JSON-lines output.

pub mod beam_mgmt;
pub mod channel;
mod error;
pub mod geometry;
pub mod global_map;
pub mod harness;
pub mod local_slam;
pub mod metrics;
pub mod rng;
pub mod sensors;
pub mod vec2;
pub mod vision_fusion;

pub use error::{Error, Result};
pub use vec2::Vec2;
