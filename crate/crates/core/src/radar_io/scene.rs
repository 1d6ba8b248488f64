//! Synthetic radar scenes with physically consistent radial velocities.
//!
//! Object returns are sampled on the sensor-facing sides of each box footprint
//! with uniform height. Their absolute radial velocity is the projection of the
//! object's BEV velocity on the BEV line of sight, and the relative velocity is
//! derived from it with the compensation convention of
//! [`compensate_ego`](crate::features::compensate_ego), so that compensating a
//! generated `v_rel` gives back `v_r` exactly (up to rounding).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{GroundTruthBox, ObjectClass, RadarFrame, RadarPoint};
use crate::rng::SplitMix64;
use crate::{Error, Result};

const MAX_PLACEMENT_TRIES: usize = 1000;
/// Clutter radial velocities are drawn from N(0, 0.5 m/s).
const CLUTTER_VELOCITY_STD: f64 = 0.5;
/// Inset keeping sampled returns strictly inside the footprint.
const FOOTPRINT_INSET: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSceneSpec {
    pub class: ObjectClass,
    pub count: usize,
    /// Nominal `[l, w, h]`; each object jitters it by up to +-5%.
    pub size: [f64; 3],
    pub speed_range: [f64; 2],
    pub points_range: [usize; 2],
    pub rcs_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub classes: Vec<ClassSceneSpec>,
    /// Objects placed verbatim in addition to the random ones.
    pub objects: Vec<GroundTruthBox>,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// z of the ground plane in the sensor frame.
    pub ground_z: f64,
    pub clutter_points: usize,
    pub clutter_z_range: [f64; 2],
    pub position_noise_std: f64,
    pub rcs_noise_std: f64,
    /// Radial velocity noise; clipped to +-3 std so that it is a hard bound.
    pub velocity_noise_std: f64,
    pub ego_velocity: [f64; 3],
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            classes: vec![
                ClassSceneSpec {
                    class: ObjectClass::Car,
                    count: 3,
                    size: [3.9, 1.6, 1.56],
                    speed_range: [0.0, 12.0],
                    points_range: [8, 25],
                    rcs_mean: 10.0,
                },
                ClassSceneSpec {
                    class: ObjectClass::Pedestrian,
                    count: 3,
                    size: [0.8, 0.6, 1.73],
                    speed_range: [0.0, 2.0],
                    points_range: [2, 6],
                    rcs_mean: -5.0,
                },
                ClassSceneSpec {
                    class: ObjectClass::Cyclist,
                    count: 2,
                    size: [1.76, 0.6, 1.73],
                    speed_range: [0.0, 6.0],
                    points_range: [3, 10],
                    rcs_mean: 0.0,
                },
            ],
            objects: Vec::new(),
            x_range: [2.0, 50.0],
            y_range: [-20.0, 20.0],
            ground_z: -1.5,
            clutter_points: 140,
            clutter_z_range: [-2.5, 1.5],
            position_noise_std: 0.05,
            rcs_noise_std: 1.0,
            velocity_noise_std: 0.1,
            ego_velocity: [5.0, 0.0, 0.0],
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Upper bound on `|v_r - v . p_hat|` for object returns.
    pub fn velocity_noise_bound(&self) -> f64 {
        3.0 * self.velocity_noise_std
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2], name: &str| {
            if r[0] < r[1] && r[0].is_finite() && r[1].is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} range {r:?} is degenerate")))
            }
        };
        ordered(self.x_range, "x")?;
        ordered(self.y_range, "y")?;
        ordered(self.clutter_z_range, "clutter z")?;
        for c in &self.classes {
            if c.speed_range[0] > c.speed_range[1] || c.speed_range[0] < 0.0 {
                return Err(Error::config(format!("{} speed range {:?}", c.class, c.speed_range)));
            }
            if c.points_range[0] > c.points_range[1] {
                return Err(Error::config(format!("{} points range {:?}", c.class, c.points_range)));
            }
            if c.size.iter().any(|&s| !(s > 0.0)) {
                return Err(Error::config(format!("{} size {:?}", c.class, c.size)));
            }
        }
        for std in [self.position_noise_std, self.rcs_noise_std, self.velocity_noise_std] {
            if !(std >= 0.0) {
                return Err(Error::config("noise std must be non-negative"));
            }
        }
        for b in &self.objects {
            b.validate()?;
        }
        Ok(())
    }
}

fn half_diagonal(l: f64, w: f64) -> f64 {
    0.5 * (l * l + w * w).sqrt()
}

fn overlaps(a: &GroundTruthBox, b: &GroundTruthBox) -> bool {
    let d = ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)).sqrt();
    d < half_diagonal(a.l, a.w) + half_diagonal(b.l, b.w)
}

fn clear_of_sensor(b: &GroundTruthBox) -> bool {
    (b.cx * b.cx + b.cy * b.cy).sqrt() > half_diagonal(b.l, b.w) + 1.0
}

fn sample_yaw(rng: &mut SplitMix64) -> f64 {
    PI - 2.0 * PI * rng.next_f64()
}

fn place_object(
    spec: &SceneSpec,
    class: &ClassSceneSpec,
    placed: &[GroundTruthBox],
    rng: &mut SplitMix64,
) -> Result<GroundTruthBox> {
    for _ in 0..MAX_PLACEMENT_TRIES {
        let jitter = |rng: &mut SplitMix64| rng.uniform(0.95, 1.05);
        let l = class.size[0] * jitter(rng);
        let w = class.size[1] * jitter(rng);
        let h = class.size[2] * jitter(rng);
        let yaw = sample_yaw(rng);
        let speed = rng.uniform(class.speed_range[0], class.speed_range[1]);
        let candidate = GroundTruthBox {
            cx: rng.uniform(spec.x_range[0], spec.x_range[1]),
            cy: rng.uniform(spec.y_range[0], spec.y_range[1]),
            cz: spec.ground_z + 0.5 * h,
            l,
            w,
            h,
            yaw,
            class: class.class,
            vx: speed * yaw.cos(),
            vy: speed * yaw.sin(),
        };
        if clear_of_sensor(&candidate) && placed.iter().all(|b| !overlaps(b, &candidate)) {
            return Ok(candidate);
        }
    }
    Err(Error::RejectedSample(format!(
        "could not place a {} clear of the sensor and other objects after {MAX_PLACEMENT_TRIES} tries",
        class.class
    )))
}

/// BEV corners in counter-clockwise order.
fn footprint_corners(b: &GroundTruthBox) -> [[f64; 2]; 4] {
    let (s, c) = b.yaw.sin_cos();
    let (hl, hw) = (0.5 * b.l, 0.5 * b.w);
    [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]].map(|[u, v]| [b.cx + u * c - v * s, b.cy + u * s + v * c])
}

fn sample_surface_point(b: &GroundTruthBox, noise_std: f64, rng: &mut SplitMix64) -> [f64; 3] {
    let corners = footprint_corners(b);
    // Edges whose outward normal points towards the sensor at the origin.
    let mut edges = Vec::with_capacity(4);
    for i in 0..4 {
        let a = corners[i];
        let e = corners[(i + 1) % 4];
        let mid = [0.5 * (a[0] + e[0]), 0.5 * (a[1] + e[1])];
        let normal = [mid[0] - b.cx, mid[1] - b.cy];
        if normal[0] * (-mid[0]) + normal[1] * (-mid[1]) > 0.0 {
            let len = ((e[0] - a[0]).powi(2) + (e[1] - a[1]).powi(2)).sqrt();
            edges.push((a, e, len));
        }
    }
    if edges.is_empty() {
        for i in 0..4 {
            let (a, e) = (corners[i], corners[(i + 1) % 4]);
            edges.push((a, e, ((e[0] - a[0]).powi(2) + (e[1] - a[1]).powi(2)).sqrt()));
        }
    }
    let total: f64 = edges.iter().map(|e| e.2).sum();
    let mut pick = rng.next_f64() * total;
    let mut chosen = edges[edges.len() - 1];
    for e in &edges {
        if pick < e.2 {
            chosen = *e;
            break;
        }
        pick -= e.2;
    }
    let t = rng.next_f64();
    let (a, e) = (chosen.0, chosen.1);
    let x = a[0] + t * (e[0] - a[0]) + noise_std * rng.normal();
    let y = a[1] + t * (e[1] - a[1]) + noise_std * rng.normal();
    let z = b.cz + b.h * (rng.next_f64() - 0.5) + noise_std * rng.normal();

    // Clamp back into the box so noise never moves a return off its object.
    let (s, c) = b.yaw.sin_cos();
    let (dx, dy) = (x - b.cx, y - b.cy);
    let hl = (0.5 * b.l - FOOTPRINT_INSET).max(0.0);
    let hw = (0.5 * b.w - FOOTPRINT_INSET).max(0.0);
    let u = (dx * c + dy * s).clamp(-hl, hl);
    let v = (-dx * s + dy * c).clamp(-hw, hw);
    let hh = 0.5 * b.h;
    [b.cx + u * c - v * s, b.cy + u * s + v * c, z.clamp(b.cz - hh, b.cz + hh)]
}

/// Relative velocity seen by a sensor moving with `ego`, given absolute `v_r`.
fn relative_velocity(v_r: f64, p: [f64; 3], ego: [f64; 3]) -> f64 {
    let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    v_r - (ego[0] * p[0] + ego[1] * p[1] + ego[2] * p[2]) / norm
}

pub fn generate_scene(spec: &SceneSpec) -> Result<(RadarFrame, Vec<GroundTruthBox>)> {
    spec.validate()?;
    let root = SplitMix64::new(spec.seed);
    let mut placement = root.split("placement");
    let mut returns = root.split("returns");
    let mut clutter = root.split("clutter");

    let mut boxes: Vec<GroundTruthBox> = Vec::new();
    for b in &spec.objects {
        if !clear_of_sensor(b) {
            return Err(Error::RejectedSample(format!(
                "fixed object at ({}, {}) covers the sensor origin",
                b.cx, b.cy
            )));
        }
        boxes.push(*b);
    }
    for class in &spec.classes {
        for _ in 0..class.count {
            let b = place_object(spec, class, &boxes, &mut placement)?;
            boxes.push(b);
        }
    }

    let vel_bound = spec.velocity_noise_bound();
    let mut points = Vec::new();
    for b in &boxes {
        let range = spec
            .classes
            .iter()
            .find(|c| c.class == b.class)
            .map(|c| (c.points_range, c.rcs_mean))
            .unwrap_or(([4, 12], 0.0));
        let n = returns.range_inclusive(range.0[0], range.0[1]);
        for _ in 0..n {
            let p = sample_surface_point(b, spec.position_noise_std, &mut returns);
            let bev = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let v_true = (b.vx * p[0] + b.vy * p[1]) / bev;
            let noise = (spec.velocity_noise_std * returns.normal()).clamp(-vel_bound, vel_bound);
            let v_r = v_true + noise;
            let v_rel = relative_velocity(v_r, p, spec.ego_velocity);
            let rcs = returns.gaussian(range.1, spec.rcs_noise_std);
            points.push(RadarPoint::new(p[0], p[1], p[2], rcs, v_rel, v_r));
        }
    }

    for _ in 0..spec.clutter_points {
        let p = loop {
            let x = clutter.uniform(spec.x_range[0], spec.x_range[1]);
            let y = clutter.uniform(spec.y_range[0], spec.y_range[1]);
            let z = clutter.uniform(spec.clutter_z_range[0], spec.clutter_z_range[1]);
            if x * x + y * y >= 1.0 {
                break [x, y, z];
            }
        };
        let v_r = clutter.gaussian(0.0, CLUTTER_VELOCITY_STD);
        let v_rel = relative_velocity(v_r, p, spec.ego_velocity);
        let rcs = clutter.uniform(-15.0, 15.0);
        points.push(RadarPoint::new(p[0], p[1], p[2], rcs, v_rel, v_r));
    }

    let mut frame = RadarFrame::new(format!("{:016x}", spec.seed), points);
    frame.ego_velocity = Some(spec.ego_velocity);
    Ok((frame, boxes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compensate_ego;

    fn single_object(cx: f64, cy: f64, vx: f64, vy: f64) -> SceneSpec {
        SceneSpec {
            classes: Vec::new(),
            objects: vec![GroundTruthBox {
                cx,
                cy,
                cz: -0.7,
                l: 1.0,
                w: 1.0,
                h: 1.6,
                yaw: 0.0,
                class: ObjectClass::Pedestrian,
                vx,
                vy,
            }],
            clutter_points: 0,
            position_noise_std: 0.0,
            velocity_noise_std: 0.0,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn tangential_motion_has_zero_radial_velocity() {
        let (frame, _) = generate_scene(&single_object(20.0, 0.0, 0.0, 2.0)).unwrap();
        assert!(!frame.is_empty());
        for p in &frame.points {
            // Returns lie within the 1 m footprint, so the line of sight is nearly along x.
            assert!(p.v_r.abs() < 2.0 * 0.5 / 19.5 + 1e-9, "v_r = {}", p.v_r);
        }
    }

    #[test]
    fn radial_motion_is_fully_observed() {
        let (frame, _) = generate_scene(&single_object(10.0, 0.0, 3.0, 0.0)).unwrap();
        for p in &frame.points {
            assert!((p.v_r - 3.0).abs() < 0.01, "v_r = {}", p.v_r);
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec { seed: 99, ..SceneSpec::default() };
        let (a, ga) = generate_scene(&spec).unwrap();
        let (b, gb) = generate_scene(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        let (c, _) = generate_scene(&SceneSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn object_returns_are_consistent() {
        let spec = SceneSpec { seed: 5, ..SceneSpec::default() };
        let (frame, boxes) = generate_scene(&spec).unwrap();
        let n_obj: usize = frame.points.len() - spec.clutter_points;
        let bound = spec.velocity_noise_bound() + 1e-9;
        let mut seen = 0;
        for p in &frame.points[..n_obj] {
            let b = boxes
                .iter()
                .find(|b| b.bev().contains(p.x, p.y, 1e-9))
                .expect("object return outside every footprint");
            let bev = (p.x * p.x + p.y * p.y).sqrt();
            let proj = (b.vx * p.x + b.vy * p.y) / bev;
            assert!((p.v_r - proj).abs() <= bound);
            assert!(p.z >= b.cz - 0.5 * b.h && p.z <= b.cz + 0.5 * b.h);
            let back = compensate_ego(p.v_rel, [p.x, p.y, p.z], spec.ego_velocity).unwrap();
            assert!((back - p.v_r).abs() < 1e-9);
            seen += 1;
        }
        assert!(seen > 0);
        assert_eq!(frame.ego_velocity, Some(spec.ego_velocity));
    }

    #[test]
    fn object_on_sensor_is_rejected() {
        let spec = single_object(0.0, 0.0, 1.0, 0.0);
        assert!(matches!(generate_scene(&spec), Err(Error::RejectedSample(_))));
    }

    #[test]
    fn impossible_ranges_fail_cleanly() {
        let mut spec = SceneSpec { x_range: [0.0, 0.5], y_range: [-0.5, 0.5], ..SceneSpec::default() };
        assert!(matches!(generate_scene(&spec), Err(Error::RejectedSample(_))));
        spec.x_range = [3.0, 3.0];
        assert!(matches!(generate_scene(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn empty_spec_gives_empty_frame() {
        let spec = SceneSpec { classes: Vec::new(), clutter_points: 0, ..SceneSpec::default() };
        let (frame, boxes) = generate_scene(&spec).unwrap();
        assert!(frame.is_empty() && boxes.is_empty());
    }
}
