//! Encoder, fusion and SSD head, plus everything around boxes: anchors,
//! residual coding, rotated IoU, NMS, target assignment and losses.

mod anchors;
mod geometry;
pub mod loss;
mod network;
mod postprocess;
mod targets;

pub use anchors::{
    apply_direction, decode_residual, direction_bin, encode_box, generate_anchors, limit_period, wrap_angle, Anchor,
    AnchorClass, AnchorSpec,
};
pub use geometry::{clip_polygon, polygon_area, rotated_iou, BevBox};
pub use loss::{direction_ce, focal_loss, smooth_l1, FOCAL_ALPHA, FOCAL_GAMMA, SMOOTH_L1_BETA};
pub use network::{
    encoder_forward, fuse_features, head_forward, BackboneWeights, ConvBnRelu, HeadOutputs, Lateral, PointwiseConv,
};
pub use postprocess::{decode_boxes, nms, postprocess, sigmoid, Detection};
pub use targets::{assign_targets, AnchorTarget};
