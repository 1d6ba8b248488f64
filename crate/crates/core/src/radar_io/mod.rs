//! Radar frames: CSV parsing, label files, synthetic scenes and augmentation.

mod augment;
mod frame;
mod labels;
mod scene;

pub use augment::{augment_flip_y, augment_scale, ScaleRange};
pub use frame::{parse_frame, serialize_frame, RadarFrame, RadarPoint, FRAME_HEADER};
pub use labels::{
    parse_detections, parse_labels, write_detections, write_labels, GroundTruthBox, ObjectClass,
};
pub use scene::{generate_scene, ClassSceneSpec, SceneSpec};
