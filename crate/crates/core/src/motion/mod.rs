//! Skeletal motion ingest, the feature representation, kinematics and the
//! temporal pyramid.

pub mod bvh;
pub mod features;
pub mod kinematics;
pub mod motion_json;
pub mod pyramid;
pub mod resample;
pub mod rotation;
pub mod skeleton;

pub use bvh::{parse_bvh, write_bvh};
pub use features::{from_feature_tensor, resample_temporal, to_feature_tensor, to_feature_tensor_with, FeatureLayout, MotionTensor};
pub use kinematics::{detect_foot_contacts, forward_kinematics, ContactThresholds, JointPositions};
pub use motion_json::MotionJson;
pub use pyramid::PyramidConfig;
pub use rotation::{rotation_to_6d, sixd_to_rotation, EulerOrder};
pub use skeleton::{SkeletonMotion, SkeletonTopology};

/// Pyramid targets: the clip resampled to every stage length.
pub fn build_pyramid_targets(t: &MotionTensor, p: &PyramidConfig) -> crate::Result<Vec<MotionTensor>> {
    if t.frames() != p.total_frames() {
        return Err(crate::Error::Argument(format!(
            "clip has {} frames, pyramid expects {}",
            t.frames(),
            p.total_frames()
        )));
    }
    p.stage_lengths.iter().map(|&n| t.resample(n)).collect()
}
