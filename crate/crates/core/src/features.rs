//! Per-point feature rows built from radar returns.
//!
//! Columns always start with `x, y, z, rcs`; velocity channels follow in the
//! fixed order of [`VelocityChannel::ALL`], restricted to the ones enabled in
//! the [`FeatureSetConfig`]:
//!
//! | channel      | meaning                                            |
//! |--------------|----------------------------------------------------|
//! | `v_rel`      | Doppler velocity relative to the moving sensor      |
//! | `v_r`        | ego-motion compensated radial velocity              |
//! | `v_rel_x/y`  | `v_rel` decomposed along the bearing `atan2(y, x)`  |
//! | `v_r_x/y`    | `v_r` decomposed along the bearing                  |
//! | `*_m`        | the same value minus its pillar mean                |

use serde::{Deserialize, Serialize};

use crate::pillars::PillarAssignment;
use crate::radar_io::RadarFrame;
use crate::{Error, Result};

/// Compensates a relative radial velocity for sensor motion.
///
/// Positive radial velocity means moving away from the sensor. A stationary
/// world point seen from a sensor moving with `ego` measures
/// `v_rel = -ego . p_hat`, which maps back to `v_r = 0`.
pub fn compensate_ego(v_rel: f64, position: [f64; 3], ego_velocity: [f64; 3]) -> Result<f64> {
    let norm = (position[0].powi(2) + position[1].powi(2) + position[2].powi(2)).sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateGeometry("point at the sensor origin has no line of sight".into()));
    }
    let along = ego_velocity[0] * position[0] + ego_velocity[1] * position[1] + ego_velocity[2] * position[2];
    Ok(v_rel + along / norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialComponents {
    pub vx: f64,
    pub vy: f64,
    /// Set when `(x, y) = (0, 0)`: the bearing is undefined and both components are 0.
    pub degenerate: bool,
}

/// Splits a radial velocity into BEV components along the bearing
/// `beta = atan2(y, x)`: `(v cos beta, v sin beta)`.
pub fn decompose_radial(x: f64, y: f64, v: f64) -> RadialComponents {
    let r = x.hypot(y);
    if r == 0.0 {
        return RadialComponents { vx: 0.0, vy: 0.0, degenerate: true };
    }
    RadialComponents { vx: v * (x / r), vy: v * (y / r), degenerate: false }
}

/// Subtracts each group's mean from its members. `groups` lists point indices
/// in the order the mean is accumulated; points in no group get offset 0.
pub fn offsets_by_group(values: &[f64], groups: &[Vec<usize>]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for g in groups {
        if g.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for &i in g {
            sum += values[i];
        }
        let mean = sum / g.len() as f64;
        for &i in g {
            out[i] = values[i] - mean;
        }
    }
    out
}

/// Per-point velocity offsets to the pillar mean. With `before_cap` the mean
/// covers every point in the pillar; otherwise only the retained slots.
pub fn pillar_velocity_offsets(values: &[f64], assignment: &PillarAssignment, before_cap: bool) -> Vec<f64> {
    if before_cap {
        offsets_by_group(values, &assignment.members)
    } else {
        let retained: Vec<Vec<usize>> = assignment.retained_members().map(<[usize]>::to_vec).collect();
        offsets_by_group(values, &retained)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VelocityChannel {
    VRel,
    VR,
    VRelX,
    VRelY,
    VRX,
    VRY,
    VRelM,
    VRM,
    VRelXM,
    VRelYM,
    VRXM,
    VRYM,
}

impl VelocityChannel {
    pub const ALL: [VelocityChannel; 12] = [
        VelocityChannel::VRel,
        VelocityChannel::VR,
        VelocityChannel::VRelX,
        VelocityChannel::VRelY,
        VelocityChannel::VRX,
        VelocityChannel::VRY,
        VelocityChannel::VRelM,
        VelocityChannel::VRM,
        VelocityChannel::VRelXM,
        VelocityChannel::VRelYM,
        VelocityChannel::VRXM,
        VelocityChannel::VRYM,
    ];

    pub fn name(self) -> &'static str {
        use VelocityChannel::*;
        match self {
            VRel => "v_rel",
            VR => "v_r",
            VRelX => "v_rel_x",
            VRelY => "v_rel_y",
            VRX => "v_r_x",
            VRY => "v_r_y",
            VRelM => "v_rel_m",
            VRM => "v_r_m",
            VRelXM => "v_rel_x_m",
            VRelYM => "v_rel_y_m",
            VRXM => "v_r_x_m",
            VRYM => "v_r_y_m",
        }
    }

    fn is_offset(self) -> bool {
        use VelocityChannel::*;
        matches!(self, VRelM | VRM | VRelXM | VRelYM | VRXM | VRYM)
    }
}

/// Which velocity channels are appended to the base `x, y, z, rcs` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSetConfig {
    pub v_rel: bool,
    pub v_r: bool,
    pub v_rel_xy: bool,
    pub v_r_xy: bool,
    pub v_rel_m: bool,
    pub v_r_m: bool,
    pub v_rel_xy_m: bool,
    pub v_r_xy_m: bool,
    /// Offsets average over all points of a pillar (true) or only the capped slots.
    pub offsets_before_cap: bool,
}

impl Default for FeatureSetConfig {
    /// `x, y, z, rcs, v_rel, v_r, v_r_x, v_r_y`.
    fn default() -> Self {
        Self::base().with_v_rel().with_v_r().with_v_r_xy()
    }
}

impl FeatureSetConfig {
    pub fn base() -> Self {
        Self {
            v_rel: false,
            v_r: false,
            v_rel_xy: false,
            v_r_xy: false,
            v_rel_m: false,
            v_r_m: false,
            v_rel_xy_m: false,
            v_r_xy_m: false,
            offsets_before_cap: true,
        }
    }

    pub fn with_v_rel(mut self) -> Self {
        self.v_rel = true;
        self
    }
    pub fn with_v_r(mut self) -> Self {
        self.v_r = true;
        self
    }
    pub fn with_v_rel_xy(mut self) -> Self {
        self.v_rel_xy = true;
        self
    }
    pub fn with_v_r_xy(mut self) -> Self {
        self.v_r_xy = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = [
            (self.v_rel_m, self.v_rel, "v_rel_m", "v_rel"),
            (self.v_r_m, self.v_r, "v_r_m", "v_r"),
            (self.v_rel_xy_m, self.v_rel_xy, "v_rel_xy_m", "v_rel_xy"),
            (self.v_r_xy_m, self.v_r_xy, "v_r_xy_m", "v_r_xy"),
        ];
        for (child, parent, cname, pname) in pairs {
            if child && !parent {
                return Err(Error::config(format!("{cname} requires {pname}")));
            }
        }
        Ok(())
    }

    pub fn velocity_channels(&self) -> Vec<VelocityChannel> {
        use VelocityChannel::*;
        VelocityChannel::ALL
            .into_iter()
            .filter(|c| match c {
                VRel => self.v_rel,
                VR => self.v_r,
                VRelX | VRelY => self.v_rel_xy,
                VRX | VRY => self.v_r_xy,
                VRelM => self.v_rel_m,
                VRM => self.v_r_m,
                VRelXM | VRelYM => self.v_rel_xy_m,
                VRXM | VRYM => self.v_r_xy_m,
            })
            .collect()
    }

    pub fn needs_assignment(&self) -> bool {
        self.velocity_channels().iter().any(|c| c.is_offset())
    }

    pub fn num_channels(&self) -> usize {
        4 + self.velocity_channels().len()
    }

    pub fn channel_names(&self) -> Vec<String> {
        ["x", "y", "z", "rcs"]
            .into_iter()
            .map(String::from)
            .chain(self.velocity_channels().into_iter().map(|c| c.name().to_string()))
            .collect()
    }
}

/// Row-major `N x D` feature matrix, one row per frame point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures {
    pub data: Vec<f64>,
    pub num_points: usize,
    pub channels: Vec<String>,
    /// Bearing `atan2(y, x)` per point.
    pub bearing: Vec<f64>,
    /// Points with undefined bearing (at the sensor's vertical axis).
    pub degenerate: Vec<bool>,
}

impl PointFeatures {
    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }
}

pub fn assemble_features(
    frame: &RadarFrame,
    cfg: &FeatureSetConfig,
    assignment: Option<&PillarAssignment>,
) -> Result<PointFeatures> {
    cfg.validate()?;
    let channels = cfg.velocity_channels();
    if channels.iter().any(|c| c.is_offset()) && assignment.is_none() {
        return Err(Error::config("offset velocity features need a pillar assignment"));
    }
    if let Some(a) = assignment {
        if a.members_len() != frame.len() {
            return Err(Error::shape(format!(
                "assignment covers {} points, frame has {}",
                a.members_len(),
                frame.len()
            )));
        }
    }

    let n = frame.len();
    let mut v_rel_xy = Vec::with_capacity(n);
    let mut v_r_xy = Vec::with_capacity(n);
    let mut bearing = Vec::with_capacity(n);
    let mut degenerate = Vec::with_capacity(n);
    for (i, p) in frame.points.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::Value { row: i + 1, msg: "non-finite point".into() });
        }
        let a = decompose_radial(p.x, p.y, p.v_rel);
        let b = decompose_radial(p.x, p.y, p.v_r);
        v_rel_xy.push((a.vx, a.vy));
        v_r_xy.push((b.vx, b.vy));
        bearing.push(p.y.atan2(p.x));
        degenerate.push(a.degenerate);
    }

    let raw = |c: VelocityChannel, i: usize| -> f64 {
        use VelocityChannel::*;
        let p = &frame.points[i];
        match c {
            VRel | VRelM => p.v_rel,
            VR | VRM => p.v_r,
            VRelX | VRelXM => v_rel_xy[i].0,
            VRelY | VRelYM => v_rel_xy[i].1,
            VRX | VRXM => v_r_xy[i].0,
            VRY | VRYM => v_r_xy[i].1,
        }
    };

    let columns: Vec<Vec<f64>> = channels
        .iter()
        .map(|&c| {
            let values: Vec<f64> = (0..n).map(|i| raw(c, i)).collect();
            if c.is_offset() {
                // Checked above.
                let a = assignment.expect("assignment present");
                pillar_velocity_offsets(&values, a, cfg.offsets_before_cap)
            } else {
                values
            }
        })
        .collect();

    let d = 4 + channels.len();
    let mut data = Vec::with_capacity(n * d);
    for (i, p) in frame.points.iter().enumerate() {
        data.extend_from_slice(&[p.x, p.y, p.z, p.rcs]);
        for col in &columns {
            data.push(col[i]);
        }
    }
    Ok(PointFeatures { data, num_points: n, channels: cfg.channel_names(), bearing, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn identity(channels: &[String]) -> Self {
        Self { channels: channels.to_vec(), mean: vec![0.0; channels.len()], std: vec![1.0; channels.len()] }
    }

    /// Mean and population std over all rows of the given feature sets.
    /// Constant channels get std 1 so the stats stay usable.
    pub fn from_features(sets: &[PointFeatures]) -> Result<Self> {
        let first = sets.first().ok_or_else(|| Error::config("no feature sets to compute stats from"))?;
        let d = first.dim();
        let mut count = 0usize;
        let mut sum = vec![0.0; d];
        for s in sets {
            if s.channels != first.channels {
                return Err(Error::shape("feature sets disagree on channels"));
            }
            for i in 0..s.num_points {
                for (acc, v) in sum.iter_mut().zip(s.row(i)) {
                    *acc += v;
                }
            }
            count += s.num_points;
        }
        if count == 0 {
            return Ok(Self::identity(&first.channels));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; d];
        for s in sets {
            for i in 0..s.num_points {
                for ((acc, v), m) in sq.iter_mut().zip(s.row(i)).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let v = (s / count as f64).sqrt();
                if v > 0.0 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { channels: first.channels.clone(), mean, std })
    }

    fn check(&self, features: &PointFeatures) -> Result<()> {
        if self.mean.len() != features.dim() || self.std.len() != features.dim() {
            return Err(Error::shape(format!(
                "stats have {} channels, features have {}",
                self.mean.len(),
                features.dim()
            )));
        }
        if let Some(bad) = self.std.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::config(format!("normalization std must be positive, got {bad}")));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

pub fn standardize(features: &PointFeatures, stats: &NormalizationStats) -> Result<PointFeatures> {
    stats.check(features)?;
    let d = features.dim();
    let mut out = features.clone();
    for (j, v) in out.data.iter_mut().enumerate() {
        let c = j % d;
        *v = (*v - stats.mean[c]) / stats.std[c];
    }
    Ok(out)
}

pub fn destandardize(features: &PointFeatures, stats: &NormalizationStats) -> Result<PointFeatures> {
    stats.check(features)?;
    let d = features.dim();
    let mut out = features.clone();
    for (j, v) in out.data.iter_mut().enumerate() {
        let c = j % d;
        *v = *v * stats.std[c] + stats.mean[c];
    }
    Ok(out)
}
