use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::skeleton::{SkeletonMotion, SkeletonTopology};

/// Global joint positions, `positions[t][j]`.
pub type JointPositions = Vec<Vec<Vector3<f64>>>;

/// Forward kinematics for a single frame given local rotation matrices.
///
/// The root sits at `root_position` with its local rotation as its global
/// rotation; every other joint is placed at its parent's global transform
/// applied to its offset.
pub fn fk_frame(topo: &SkeletonTopology, order: &[usize], local: &[Matrix3<f64>], root_position: Vector3<f64>) -> Vec<Vector3<f64>> {
    let j = topo.joint_count();
    let mut global_rot = vec![Matrix3::identity(); j];
    let mut pos = vec![Vector3::zeros(); j];
    for &k in order {
        match topo.parents[k] {
            None => {
                global_rot[k] = local[k];
                pos[k] = root_position;
            }
            Some(p) => {
                pos[k] = pos[p] + global_rot[p] * Vector3::from(topo.offsets[k]);
                global_rot[k] = global_rot[p] * local[k];
            }
        }
    }
    pos
}

pub fn forward_kinematics(m: &SkeletonMotion) -> JointPositions {
    let order = m.topology.topological_order();
    m.local_rotations
        .iter()
        .zip(&m.root_translation)
        .map(|(frame, root)| {
            let local: Vec<Matrix3<f64>> = frame.iter().map(|q| q.to_rotation_matrix().into_inner()).collect();
            fk_frame(&m.topology, &order, &local, *root)
        })
        .collect()
}

/// Thresholds for foot-contact detection, in skeleton units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactThresholds {
    /// Maximum joint speed (units per frame) for a planted joint.
    pub velocity: f64,
    /// Maximum height above the joint's lowest point in the clip.
    pub height: f64,
}

impl ContactThresholds {
    /// Defaults: speed below 0.2 leg lengths per second and height within 5%
    /// of the leg length above the joint's lowest point.
    pub fn for_topology(topo: &SkeletonTopology, frame_rate: f64) -> Self {
        let leg = topo.leg_length().max(1e-6);
        ContactThresholds {
            velocity: 0.2 * leg / frame_rate,
            height: 0.05 * leg,
        }
    }
}

/// Per-frame binary contact labels for each contact joint, `labels[t][c]`.
///
/// Speed uses central differences (one-sided at the ends). Height is measured
/// above the joint's minimum height over the clip.
pub fn detect_foot_contacts(positions: &JointPositions, contact_joints: &[usize], thresholds: ContactThresholds) -> Vec<Vec<bool>> {
    let t = positions.len();
    let mut labels = vec![vec![false; contact_joints.len()]; t];
    for (ci, &j) in contact_joints.iter().enumerate() {
        let floor = positions.iter().map(|f| f[j].y).fold(f64::INFINITY, f64::min);
        for f in 0..t {
            let speed = if t < 2 {
                0.0
            } else if f == 0 {
                (positions[1][j] - positions[0][j]).norm()
            } else if f == t - 1 {
                (positions[f][j] - positions[f - 1][j]).norm()
            } else {
                (positions[f + 1][j] - positions[f - 1][j]).norm() / 2.0
            };
            let height = positions[f][j].y - floor;
            labels[f][ci] = speed < thresholds.velocity && height < thresholds.height;
        }
    }
    labels
}
