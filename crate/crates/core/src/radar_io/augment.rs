use serde::{Deserialize, Serialize};

use super::RadarFrame;
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Mirrors the frame across the x axis. Radial velocities are magnitudes along
/// the line of sight and do not change under reflection.
pub fn augment_flip_y(frame: &RadarFrame) -> RadarFrame {
    let mut out = frame.clone();
    for p in &mut out.points {
        p.y = -p.y;
    }
    if let Some(ego) = &mut out.ego_velocity {
        ego[1] = -ego[1];
    }
    out
}

/// Scales point coordinates by `s`; velocities and rcs are left alone.
pub fn augment_scale(frame: &RadarFrame, s: f64) -> Result<RadarFrame> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale factor must be positive, got {s}")));
    }
    let mut out = frame.clone();
    for p in &mut out.points {
        p.x *= s;
        p.y *= s;
        p.z *= s;
    }
    Ok(out)
}

/// Range random scale factors are drawn from during augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRange {
    pub min: f64,
    pub max: f64,
}

impl Default for ScaleRange {
    fn default() -> Self {
        Self { min: 0.95, max: 1.05 }
    }
}

impl ScaleRange {
    pub fn sample(&self, rng: &mut SplitMix64) -> f64 {
        rng.uniform(self.min, self.max)
    }
}
