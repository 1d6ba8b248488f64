//! Pillar-based object detection for 4D radar point clouds.
//!
//! The crate covers the whole inference path, from raw radar frames to rotated
//! 3D detections:
//!
//! ```text
//! RadarFrame -> velocity features -> pillar assignment -> PointNet encoder
//!            -> PillarAttention (sparse tokens) -> scatter -> 3-stage encoder
//!            -> lateral fusion (160x160) -> SSD head -> decode -> rotated NMS
//! ```
//!
//! Alongside the forward path it ships the pieces needed to check it: a dense
//! masked-attention oracle, an analytic backward for the attention block,
//! parameter/FLOP counters, the weight-magnitude analysis and an AP evaluator
//! for synthetic scenes.

pub mod analysis;
pub mod attention;
pub mod detect;
pub mod error;
pub mod features;
pub mod nn;
pub mod pillars;
pub mod pipeline;
pub mod radar_io;
pub mod rng;
pub mod selfcheck;

pub use error::{Error, Result};
