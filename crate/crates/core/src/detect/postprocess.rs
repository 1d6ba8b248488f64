use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::anchors::{apply_direction, decode_residual, Anchor};
use super::geometry::{rotated_iou, BevBox};
use super::network::HeadOutputs;
use crate::nn::{HeadConfig, Scalar};
use crate::radar_io::ObjectClass;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    pub class: ObjectClass,
    pub score: f64,
}

impl Detection {
    pub fn bev(&self) -> BevBox {
        BevBox::new(self.cx, self.cy, self.l, self.w, self.yaw)
    }

    /// Strict total order: score descending, then center, size, heading, class.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.cx.total_cmp(&other.cx))
            .then(self.cy.total_cmp(&other.cy))
            .then(self.cz.total_cmp(&other.cz))
            .then(self.l.total_cmp(&other.l))
            .then(self.w.total_cmp(&other.w))
            .then(self.h.total_cmp(&other.h))
            .then(self.yaw.total_cmp(&other.yaw))
            .then(self.class.index().cmp(&other.class.index()))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Turns head maps into scored boxes. Per anchor the class with the largest
/// logit is taken (lowest index on ties); candidates scoring below the
/// threshold are dropped and at most `nms_pre_max` survive, best first.
pub fn decode_boxes<T: Scalar>(outputs: &HeadOutputs<T>, anchors: &[Anchor], cfg: &HeadConfig) -> Result<Vec<Detection>> {
    let (cls_c, h, w) = outputs.cls.shape();
    let k = ObjectClass::ALL.len();
    let a = cls_c / k;
    if anchors.len() != h * w * a || outputs.reg.channels != a * 7 || outputs.dir.channels != a * 2 {
        return Err(Error::shape(format!(
            "{} anchors for a {cls_c}x{h}x{w} head with {} box and {} direction channels",
            anchors.len(),
            outputs.reg.channels,
            outputs.dir.channels
        )));
    }
    if !(0.0..=1.0).contains(&cfg.score_threshold) {
        return Err(Error::InvalidArgument(format!("score threshold {} outside [0, 1]", cfg.score_threshold)));
    }
    let hw = h * w;
    let at = |m: &crate::nn::FeatureMap<T>, c: usize, cell: usize| m.data[c * hw + cell].to_f64();
    let mut dets = Vec::new();
    for cell in 0..hw {
        for ai in 0..a {
            let anchor = &anchors[cell * a + ai];
            let mut best = 0;
            let mut best_logit = at(&outputs.cls, ai * k, cell);
            for ki in 1..k {
                let v = at(&outputs.cls, ai * k + ki, cell);
                if v > best_logit {
                    best = ki;
                    best_logit = v;
                }
            }
            let score = sigmoid(best_logit);
            if score < cfg.score_threshold {
                continue;
            }
            let r: [f64; 7] = std::array::from_fn(|j| at(&outputs.reg, ai * 7 + j, cell));
            let b = decode_residual(anchor, &r);
            let bin = usize::from(at(&outputs.dir, ai * 2 + 1, cell) > at(&outputs.dir, ai * 2, cell));
            dets.push(Detection {
                cx: b[0],
                cy: b[1],
                cz: b[2],
                l: b[3],
                w: b[4],
                h: b[5],
                yaw: apply_direction(b[6], bin),
                class: ObjectClass::from_index(best).expect("class index in range"),
                score,
            });
        }
    }
    dets.sort_by(Detection::rank_cmp);
    dets.truncate(cfg.nms_pre_max);
    Ok(dets)
}

/// Greedy per-class suppression in rank order: a box is dropped when its BEV
/// IoU with an already kept box of its class exceeds `iou_threshold`.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = detections.to_vec();
    sorted.sort_by(Detection::rank_cmp);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let bev = d.bev();
        let suppressed = kept.iter().any(|k| k.class == d.class && rotated_iou(&k.bev(), &bev) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Decode, NMS and the final cap.
pub fn postprocess<T: Scalar>(outputs: &HeadOutputs<T>, anchors: &[Anchor], cfg: &HeadConfig) -> Result<Vec<Detection>> {
    let mut dets = nms(&decode_boxes(outputs, anchors, cfg)?, cfg.nms_iou);
    dets.truncate(cfg.max_detections);
    Ok(dets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{generate_anchors, AnchorSpec};
    use crate::nn::FeatureMap;
    use crate::pillars::GridConfig;
    use std::f64::consts::PI;

    fn det(cx: f64, score: f64) -> Detection {
        Detection { cx, cy: 0.0, cz: 0.0, l: 2.0, w: 1.0, h: 1.5, yaw: 0.0, class: ObjectClass::Car, score }
    }

    #[test]
    fn nms_cases() {
        assert_eq!(nms(&[det(0.0, 0.5)], 0.5), vec![det(0.0, 0.5)]);
        assert_eq!(nms(&[det(0.0, 0.8), det(0.0, 0.9)], 0.5), vec![det(0.0, 0.9)]);
        assert_eq!(nms(&[det(0.0, 0.8), det(10.0, 0.9)], 0.5).len(), 2);
        let mut ped = det(0.0, 0.7);
        ped.class = ObjectClass::Pedestrian;
        assert_eq!(nms(&[det(0.0, 0.8), ped], 0.5).len(), 2);
    }

    fn outputs(h: usize, w: usize) -> HeadOutputs<f32> {
        HeadOutputs { cls: FeatureMap::zeros(18, h, w), reg: FeatureMap::zeros(42, h, w), dir: FeatureMap::zeros(12, h, w) }
    }

    #[test]
    fn zero_head_decodes_to_anchors() {
        let grid = GridConfig::default();
        let anchors = generate_anchors(&AnchorSpec::default(), &grid, 2, 2);
        let cfg = HeadConfig { nms_pre_max: 1000, ..HeadConfig::default() };
        let dets = decode_boxes(&outputs(2, 2), &anchors, &cfg).unwrap();
        assert_eq!(dets.len(), 24);
        assert!(dets.iter().all(|d| d.score == 0.5 && d.class == ObjectClass::Car));
        let a = anchors[0];
        assert!(dets.iter().any(|d| d.cx == a.cx && d.cy == a.cy && d.l == 3.9 && d.yaw == 0.0));
    }

    #[test]
    fn direction_bin_flips_heading() {
        let grid = GridConfig::default();
        let anchors = generate_anchors(&AnchorSpec::default(), &grid, 1, 1);
        let mut out = outputs(1, 1);
        out.cls.data[0] = 5.0;
        out.dir.data[1] = 1.0;
        let cfg = HeadConfig { score_threshold: 0.9, ..HeadConfig::default() };
        let dets = decode_boxes(&out, &anchors, &cfg).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].yaw, PI);
    }

    #[test]
    fn pre_nms_cap_and_threshold() {
        let grid = GridConfig::default();
        let anchors = generate_anchors(&AnchorSpec::default(), &grid, 4, 4);
        let cfg = HeadConfig { nms_pre_max: 7, ..HeadConfig::default() };
        assert_eq!(decode_boxes(&outputs(4, 4), &anchors, &cfg).unwrap().len(), 7);
        let cfg = HeadConfig { score_threshold: 0.6, ..HeadConfig::default() };
        assert!(decode_boxes(&outputs(4, 4), &anchors, &cfg).unwrap().is_empty());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }
}
