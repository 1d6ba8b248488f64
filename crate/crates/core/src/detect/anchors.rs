use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::pillars::GridConfig;
use crate::radar_io::{GroundTruthBox, ObjectClass};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorClass {
    pub class: ObjectClass,
    /// `[l, w, h]` in meters.
    pub size: [f64; 3],
    pub z_center: f64,
}

/// Anchors placed at every fused-map cell: one per class and rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub classes: Vec<AnchorClass>,
    pub rotations: Vec<f64>,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        // Box centers of objects standing on a ground plane 1.5 m below the sensor.
        Self {
            classes: vec![
                AnchorClass { class: ObjectClass::Car, size: [3.9, 1.6, 1.56], z_center: -0.72 },
                AnchorClass { class: ObjectClass::Pedestrian, size: [0.8, 0.6, 1.73], z_center: -0.635 },
                AnchorClass { class: ObjectClass::Cyclist, size: [1.76, 0.6, 1.73], z_center: -0.635 },
            ],
            rotations: vec![0.0, FRAC_PI_2],
        }
    }
}

impl AnchorSpec {
    pub fn anchors_per_cell(&self) -> usize {
        self.classes.len() * self.rotations.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.rotations.is_empty() {
            return Err(Error::config("anchor spec needs at least one class and one rotation"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if !c.size.iter().all(|&s| s > 0.0 && s.is_finite()) {
                return Err(Error::config(format!("anchor sizes for {} must be positive", c.class)));
            }
            if self.classes[..i].iter().any(|o| o.class == c.class) {
                return Err(Error::config(format!("duplicate anchor class {}", c.class)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    pub class: ObjectClass,
}

impl Anchor {
    pub fn as_box(&self) -> [f64; 7] {
        [self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw]
    }

    pub fn bev(&self) -> super::BevBox {
        super::BevBox::new(self.cx, self.cy, self.l, self.w, self.yaw)
    }
}

/// Anchors for an `h x w` map covering the grid's BEV range, ordered
/// `(row, column, class, rotation)`: anchor `a` of cell `(y, x)` has index
/// `(y * w + x) * A + a` with `a = class * rotations + rotation`.
pub fn generate_anchors(spec: &AnchorSpec, grid: &GridConfig, h: usize, w: usize) -> Vec<Anchor> {
    let sx = (grid.x_max - grid.x_min) / w as f64;
    let sy = (grid.y_max - grid.y_min) / h as f64;
    let mut out = Vec::with_capacity(h * w * spec.anchors_per_cell());
    for iy in 0..h {
        let cy = grid.y_min + (iy as f64 + 0.5) * sy;
        for ix in 0..w {
            let cx = grid.x_min + (ix as f64 + 0.5) * sx;
            for c in &spec.classes {
                for &yaw in &spec.rotations {
                    out.push(Anchor {
                        cx,
                        cy,
                        cz: c.z_center,
                        l: c.size[0],
                        w: c.size[1],
                        h: c.size[2],
                        yaw,
                        class: c.class,
                    });
                }
            }
        }
    }
    out
}

/// `v - floor(v / period + offset) * period`: maps into `[-offset * period, (1 - offset) * period)`.
pub fn limit_period(v: f64, offset: f64, period: f64) -> f64 {
    v - (v / period + offset).floor() * period
}

/// Angle in `(-pi, pi]`.
pub fn wrap_angle(v: f64) -> f64 {
    let r = limit_period(v, 0.5, TAU);
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Direction bin of a heading: 0 for `[0, pi)`, 1 for `[pi, 2 pi)` modulo `2 pi`.
pub fn direction_bin(yaw: f64) -> usize {
    let r = limit_period(yaw, 0.0, TAU);
    usize::from(r >= PI)
}

/// Residual targets of `b` relative to `anchor`:
/// `[dx/d, dy/d, dz/h, ln(l/l_a), ln(w/w_a), ln(h/h_a), yaw - yaw_a]`.
pub fn encode_box(anchor: &Anchor, b: &[f64; 7]) -> [f64; 7] {
    let d = anchor.l.hypot(anchor.w);
    [
        (b[0] - anchor.cx) / d,
        (b[1] - anchor.cy) / d,
        (b[2] - anchor.cz) / anchor.h,
        (b[3] / anchor.l).ln(),
        (b[4] / anchor.w).ln(),
        (b[5] / anchor.h).ln(),
        b[6] - anchor.yaw,
    ]
}

/// Inverse of [`encode_box`]; the heading is left unwrapped.
pub fn decode_residual(anchor: &Anchor, r: &[f64; 7]) -> [f64; 7] {
    let d = anchor.l.hypot(anchor.w);
    [
        r[0] * d + anchor.cx,
        r[1] * d + anchor.cy,
        r[2] * anchor.h + anchor.cz,
        r[3].exp() * anchor.l,
        r[4].exp() * anchor.w,
        r[5].exp() * anchor.h,
        anchor.yaw + r[6],
    ]
}

/// Final heading: the regressed angle reduced to `[0, pi)`, turned by `pi` for
/// direction bin 1, then wrapped to `(-pi, pi]`.
pub fn apply_direction(yaw: f64, bin: usize) -> f64 {
    wrap_angle(limit_period(yaw, 0.0, PI) + PI * bin as f64)
}

pub fn gt_box(b: &GroundTruthBox) -> [f64; 7] {
    [b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn default_anchor_count() {
        let spec = AnchorSpec::default();
        assert_eq!(spec.anchors_per_cell(), 6);
        let a = generate_anchors(&spec, &GridConfig::default(), 160, 160);
        assert_eq!(a.len(), 160 * 160 * 6);
        assert!((a[0].cx - 0.16).abs() < 1e-12 && (a[0].cy + 25.44).abs() < 1e-12);
        assert_eq!(a[1].yaw, FRAC_PI_2);
        assert_eq!(a[2].class, ObjectClass::Pedestrian);
    }

    #[test]
    fn zero_residual_is_anchor() {
        let a = generate_anchors(&AnchorSpec::default(), &GridConfig::default(), 2, 2)[3];
        assert_eq!(decode_residual(&a, &[0.0; 7]), a.as_box());
    }

    #[test]
    fn direction_flip() {
        assert_eq!(apply_direction(0.0, 1), PI);
        assert_eq!(apply_direction(0.0, 0), 0.0);
        assert!((apply_direction(-0.3, 0) - (PI - 0.3)).abs() < 1e-12);
        assert!((apply_direction(-0.3, 1) + 0.3).abs() < 1e-12);
        assert_eq!(direction_bin(PI), 1);
        assert_eq!(direction_bin(-0.3), 1);
        assert_eq!(direction_bin(0.3), 0);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn encode_decode_inverse(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let anchors = generate_anchors(&AnchorSpec::default(), &GridConfig::default(), 4, 4);
            let a = anchors[rng.below(anchors.len())];
            let r: [f64; 7] = std::array::from_fn(|_| rng.uniform(-1.0, 1.0));
            let back = encode_box(&a, &decode_residual(&a, &r));
            for (x, y) in back.iter().zip(&r) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn direction_recovers_heading(yaw in -3.14f64..3.14) {
            let bin = direction_bin(yaw);
            prop_assert!((apply_direction(yaw, bin) - wrap_angle(yaw)).abs() < 1e-9);
        }
    }
}
