use super::anchors::{direction_bin, encode_box, gt_box, Anchor};
use super::geometry::rotated_iou;
use crate::nn::HeadConfig;
use crate::radar_io::GroundTruthBox;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorTarget {
    Negative,
    Ignore,
    Positive { gt: usize, residual: [f64; 7], direction: usize },
}

impl AnchorTarget {
    pub fn is_positive(&self) -> bool {
        matches!(self, AnchorTarget::Positive { .. })
    }
}

/// Matches anchors to same-class boxes by rotated BEV IoU. An anchor is
/// positive at `IoU >= pos` with its best box, and every box additionally
/// claims its best-overlapping anchor; anchors below `neg` with every box are
/// negative, the rest ignored.
pub fn assign_targets(anchors: &[Anchor], gt: &[GroundTruthBox], cfg: &HeadConfig) -> Result<Vec<AnchorTarget>> {
    for (c, &(pos, neg)) in cfg.match_iou.iter().enumerate() {
        if pos <= neg {
            return Err(Error::InvalidArgument(format!("class {c}: positive IoU {pos} must exceed negative {neg}")));
        }
    }
    let gt_bev: Vec<_> = gt.iter().map(GroundTruthBox::bev).collect();
    // (best iou, best gt) per anchor; (best iou, best anchor) per gt.
    let mut best_for_anchor = vec![(0.0f64, usize::MAX); anchors.len()];
    let mut best_for_gt = vec![(0.0f64, usize::MAX); gt.len()];
    for (ai, a) in anchors.iter().enumerate() {
        let bev = a.bev();
        for (gi, g) in gt.iter().enumerate() {
            if g.class != a.class {
                continue;
            }
            let iou = rotated_iou(&bev, &gt_bev[gi]);
            if iou > best_for_anchor[ai].0 {
                best_for_anchor[ai] = (iou, gi);
            }
            if iou > best_for_gt[gi].0 {
                best_for_gt[gi] = (iou, ai);
            }
        }
    }
    let positive = |ai: usize, gi: usize| {
        let b = gt_box(&gt[gi]);
        AnchorTarget::Positive { gt: gi, residual: encode_box(&anchors[ai], &b), direction: direction_bin(b[6]) }
    };
    let mut out: Vec<AnchorTarget> = anchors
        .iter()
        .enumerate()
        .map(|(ai, a)| {
            let (iou, gi) = best_for_anchor[ai];
            let (pos, neg) = cfg.match_thresholds(a.class);
            if gi != usize::MAX && iou >= pos {
                positive(ai, gi)
            } else if iou < neg {
                AnchorTarget::Negative
            } else {
                AnchorTarget::Ignore
            }
        })
        .collect();
    for (gi, &(iou, ai)) in best_for_gt.iter().enumerate() {
        if ai != usize::MAX && iou > 0.0 && !out[ai].is_positive() {
            out[ai] = positive(ai, gi);
        }
    }
    Ok(out)
}
