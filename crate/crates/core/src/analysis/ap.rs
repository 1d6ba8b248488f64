//! Average precision with greedy score-ordered matching and 40-point
//! interpolation, over the whole sensor area or a BEV sub-region.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::detect::{rotated_iou, Detection};
use crate::radar_io::{GroundTruthBox, ObjectClass};

/// Axis-aligned BEV rectangle, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x[0] && x <= self.x[1] && y >= self.y[0] && y <= self.y[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionFilter {
    EntireArea,
    DrivingCorridor(Region),
}

impl RegionFilter {
    /// A forward lane in front of the sensor; configurable, the numbers are a
    /// placeholder rather than a reference definition.
    pub fn default_corridor() -> Self {
        RegionFilter::DrivingCorridor(Region { x: [0.0, 25.0], y: [-4.0, 4.0] })
    }

    pub fn label(&self) -> &'static str {
        match self {
            RegionFilter::EntireArea => "entire_area",
            RegionFilter::DrivingCorridor(_) => "driving_corridor",
        }
    }

    fn keeps(&self, x: f64, y: f64) -> bool {
        match self {
            RegionFilter::EntireArea => true,
            RegionFilter::DrivingCorridor(r) => r.contains(x, y),
        }
    }
}

/// BEV IoU thresholds in class order (car, pedestrian, cyclist).
pub const DEFAULT_IOU_THRESHOLDS: [f64; 3] = [0.5, 0.25, 0.25];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApResult {
    pub per_class: IndexMap<String, f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub region: String,
}

/// A frame's detections and labels.
pub type FrameEval<'a> = (&'a [Detection], &'a [GroundTruthBox]);

/// 40-point interpolated AP of one class from per-detection TP flags in
/// descending score order.
pub fn r40_ap(tp_flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if tp_flags.is_empty() { 1.0 } else { 0.0 };
    }
    let mut points = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &is_tp) in tp_flags.iter().enumerate() {
        tp += usize::from(is_tp);
        points.push((tp as f64 / num_gt as f64, tp as f64 / (i + 1) as f64));
    }
    // Interpolated precision: the best precision at any recall >= r.
    let mut best_from = vec![0.0f64; points.len() + 1];
    for i in (0..points.len()).rev() {
        best_from[i] = best_from[i + 1].max(points[i].1);
    }
    let mut sum = 0.0;
    for k in 1..=40 {
        let r = k as f64 / 40.0;
        if let Some(idx) = points.iter().position(|&(rec, _)| rec >= r - 1e-12) {
            sum += best_from[idx];
        }
    }
    sum / 40.0
}

pub fn evaluate_ap(frames: &[FrameEval<'_>], iou_thresholds: [f64; 3], region: RegionFilter) -> ApResult {
    let mut per_class = IndexMap::new();
    for class in ObjectClass::ALL {
        let thr = iou_thresholds[class.index()];
        let gts: Vec<Vec<&GroundTruthBox>> = frames
            .iter()
            .map(|(_, g)| g.iter().filter(|b| b.class == class && region.keeps(b.cx, b.cy)).collect())
            .collect();
        let mut dets: Vec<(usize, &Detection)> = frames
            .iter()
            .enumerate()
            .flat_map(|(fi, (d, _))| d.iter().map(move |d| (fi, d)))
            .filter(|(_, d)| d.class == class && region.keeps(d.cx, d.cy))
            .collect();
        dets.sort_by(|a, b| a.1.rank_cmp(b.1).then(a.0.cmp(&b.0)));
        let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let flags: Vec<bool> = dets
            .iter()
            .map(|&(fi, d)| {
                let bev = d.bev();
                let mut best: Option<(f64, usize)> = None;
                for (gi, g) in gts[fi].iter().enumerate() {
                    if matched[fi][gi] {
                        continue;
                    }
                    let iou = rotated_iou(&bev, &g.bev());
                    if iou >= thr && best.is_none_or(|(b, _)| iou > b) {
                        best = Some((iou, gi));
                    }
                }
                match best {
                    Some((_, gi)) => {
                        matched[fi][gi] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect();
        let num_gt = gts.iter().map(Vec::len).sum();
        per_class.insert(class.name().to_string(), r40_ap(&flags, num_gt));
    }
    let map = per_class.values().sum::<f64>() / per_class.len() as f64;
    ApResult { per_class, map, region: region.label().to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(cx: f64, class: ObjectClass) -> GroundTruthBox {
        GroundTruthBox { cx, cy: 0.0, cz: -0.7, l: 3.9, w: 1.6, h: 1.5, yaw: 0.0, class, vx: 0.0, vy: 0.0 }
    }

    fn det_of(g: &GroundTruthBox, score: f64) -> Detection {
        Detection { cx: g.cx, cy: g.cy, cz: g.cz, l: g.l, w: g.w, h: g.h, yaw: g.yaw, class: g.class, score }
    }

    #[test]
    fn perfect_detections() {
        let g = vec![gt(10.0, ObjectClass::Car), gt(20.0, ObjectClass::Pedestrian)];
        let d: Vec<_> = g.iter().map(|g| det_of(g, 0.9)).collect();
        let r = evaluate_ap(&[(&d, &g)], DEFAULT_IOU_THRESHOLDS, RegionFilter::EntireArea);
        assert!(r.per_class.values().all(|&v| v == 1.0));
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn no_detections() {
        let g = vec![gt(10.0, ObjectClass::Car)];
        let r = evaluate_ap(&[(&[], &g)], DEFAULT_IOU_THRESHOLDS, RegionFilter::EntireArea);
        assert_eq!(r.per_class["car"], 0.0);
        // Classes with neither labels nor detections count as perfect.
        assert_eq!(r.per_class["cyclist"], 1.0);
        let stray = vec![det_of(&gt(10.0, ObjectClass::Cyclist), 0.5)];
        let r = evaluate_ap(&[(&stray, &[])], DEFAULT_IOU_THRESHOLDS, RegionFilter::EntireArea);
        assert_eq!(r.per_class["cyclist"], 0.0);
    }

    #[test]
    fn false_positive_ordering() {
        let g = vec![gt(10.0, ObjectClass::Car)];
        let hit = det_of(&g[0], 0.9);
        let miss = det_of(&gt(30.0, ObjectClass::Car), 0.5);
        let r = evaluate_ap(&[(&[hit, miss], &g)], DEFAULT_IOU_THRESHOLDS, RegionFilter::EntireArea);
        assert_eq!(r.per_class["car"], 1.0);
        let hit = det_of(&g[0], 0.5);
        let miss = det_of(&gt(30.0, ObjectClass::Car), 0.9);
        let r = evaluate_ap(&[(&[hit, miss], &g)], DEFAULT_IOU_THRESHOLDS, RegionFilter::EntireArea);
        assert_eq!(r.per_class["car"], 0.5);
    }

    #[test]
    fn region_filter_drops_outside_boxes() {
        let g = vec![gt(10.0, ObjectClass::Car), gt(40.0, ObjectClass::Car)];
        let d = vec![det_of(&g[0], 0.9)];
        let all = evaluate_ap(&[(&d, &g)], DEFAULT_IOU_THRESHOLDS, RegionFilter::EntireArea);
        let corridor = evaluate_ap(&[(&d, &g)], DEFAULT_IOU_THRESHOLDS, RegionFilter::default_corridor());
        assert_eq!(all.per_class["car"], 0.5);
        assert_eq!(corridor.per_class["car"], 1.0);
        assert_eq!(corridor.region, "driving_corridor");
    }

    #[test]
    fn adding_true_positive_never_lowers_ap() {
        let mut rng = crate::rng::SplitMix64::new(3);
        for _ in 0..200 {
            let g: Vec<_> = (0..5).map(|i| gt(5.0 + 6.0 * i as f64, ObjectClass::Car)).collect();
            let mut d: Vec<Detection> = Vec::new();
            for gi in 0..4 {
                if rng.below(2) == 0 {
                    d.push(det_of(&g[gi], rng.uniform(0.0, 1.0)));
                }
                if rng.below(2) == 0 {
                    d.push(det_of(&gt(100.0 + gi as f64 * 10.0, ObjectClass::Car), rng.uniform(0.0, 1.0)));
                }
            }
            let before = evaluate_ap(&[(&d, &g)], DEFAULT_IOU_THRESHOLDS, RegionFilter::EntireArea).per_class["car"];
            d.push(det_of(&g[4], rng.uniform(0.0, 1.0)));
            let after = evaluate_ap(&[(&d, &g)], DEFAULT_IOU_THRESHOLDS, RegionFilter::EntireArea).per_class["car"];
            assert!(after >= before - 1e-12, "{before} -> {after}");
        }
    }
}
