//! Anchor-free centre/scale detection: targets, head, loss, decoding.

pub mod decode;
pub mod head;
pub mod loss;
pub mod targets;

pub use decode::{
    decode_boxes, format_detections, nms, parse_detections, read_detections, write_detections,
};
pub use head::{DetectionHead, HeadCache, HeadOutputs};
pub use loss::{detection_loss, sigmoid, DetectionLoss};
pub use targets::{build_targets, DetectionTargets};
