//! The per-frame motion feature matrix consumed and produced by the networks.
//!
//! Each row holds `[6D rotation of joint 0..J][contact 0..C][root vx, root vz, root y]`.
//! Root velocities are frame differences expressed in the root's heading
//! frame (yaw of the root rotation at the destination frame); the first frame
//! copies the second.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use ndarray::Array2;

use super::kinematics::{detect_foot_contacts, forward_kinematics, ContactThresholds};
use super::resample::resample_rows;
use super::rotation::{heading_angle, rotation_to_6d, sixd_to_quaternion, sixd_to_rotation};
use super::skeleton::{SkeletonMotion, SkeletonTopology};
use crate::error::{Error, Result};

/// Column layout of a feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub joints: usize,
    pub contacts: usize,
}

impl FeatureLayout {
    pub fn of(topo: &SkeletonTopology) -> Self {
        FeatureLayout {
            joints: topo.joint_count(),
            contacts: topo.contact_count(),
        }
    }

    pub fn dim(&self) -> usize {
        6 * self.joints + self.contacts + 3
    }

    pub fn rotation(&self, joint: usize) -> Range<usize> {
        6 * joint..6 * joint + 6
    }

    pub fn contact(&self, c: usize) -> usize {
        6 * self.joints + c
    }

    pub fn contacts_range(&self) -> Range<usize> {
        6 * self.joints..6 * self.joints + self.contacts
    }

    pub fn root_vx(&self) -> usize {
        6 * self.joints + self.contacts
    }

    pub fn root_vz(&self) -> usize {
        self.root_vx() + 1
    }

    pub fn root_y(&self) -> usize {
        self.root_vx() + 2
    }

    pub fn root_range(&self) -> Range<usize> {
        self.root_vx()..self.root_vx() + 3
    }
}

/// Feature matrix (`frames x F`) bound to its skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTensor {
    pub features: Array2<f64>,
    pub topology: Arc<SkeletonTopology>,
    pub frame_rate: f64,
}

impl MotionTensor {
    pub fn new(features: Array2<f64>, topology: Arc<SkeletonTopology>, frame_rate: f64) -> Result<Self> {
        let expected = topology.feature_dim();
        if features.ncols() != expected {
            return Err(Error::Structural(format!(
                "feature width {} does not match skeleton ({} expected)",
                features.ncols(),
                expected
            )));
        }
        Ok(MotionTensor {
            features,
            topology,
            frame_rate,
        })
    }

    pub fn frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::of(&self.topology)
    }

    /// Same skeleton, different feature matrix.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        MotionTensor::new(features, self.topology.clone(), self.frame_rate)
    }

    /// Contact labels thresholded at 0.5, `labels[t][c]`.
    pub fn contact_labels(&self) -> Vec<Vec<bool>> {
        let layout = self.layout();
        self.features
            .rows()
            .into_iter()
            .map(|r| layout.contacts_range().map(|c| r[c] >= 0.5).collect())
            .collect()
    }

    /// Piecewise-linear resampling along time.
    pub fn resample(&self, target_frames: usize) -> Result<Self> {
        if target_frames < 2 {
            return Err(Error::Argument(format!("cannot resample to {target_frames} frames")));
        }
        Ok(MotionTensor {
            features: resample_rows(self.features.view(), target_frames),
            topology: self.topology.clone(),
            frame_rate: self.frame_rate * target_frames as f64 / self.frames() as f64,
        })
    }

    /// Frames `[start, end)`.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames() {
            return Err(Error::Argument(format!("frame range {start}..{end} outside 0..{}", self.frames())));
        }
        self.with_features(self.features.slice(ndarray::s![start..end, ..]).to_owned())
    }
}

/// Resample a tensor along time (see [`MotionTensor::resample`]).
pub fn resample_temporal(t: &MotionTensor, target_frames: usize) -> Result<MotionTensor> {
    t.resample(target_frames)
}

/// Rotate an xz displacement by `angle` about +Y.
pub(crate) fn yaw_rotate(angle: f64, x: f64, z: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * x + s * z, -s * x + c * z)
}

pub fn to_feature_tensor(m: &SkeletonMotion) -> Result<MotionTensor> {
    let th = ContactThresholds::for_topology(&m.topology, m.frame_rate);
    to_feature_tensor_with(m, th)
}

pub fn to_feature_tensor_with(m: &SkeletonMotion, thresholds: ContactThresholds) -> Result<MotionTensor> {
    m.validate()?;
    let topo = &m.topology;
    let layout = FeatureLayout::of(topo);
    let t = m.frames();
    let root = topo.root();
    let mut feats = Array2::zeros((t, layout.dim()));

    let positions = forward_kinematics(m);
    let contacts = detect_foot_contacts(&positions, &topo.contact_joints, thresholds);

    for f in 0..t {
        let mut row = feats.row_mut(f);
        for (j, q) in m.local_rotations[f].iter().enumerate() {
            let v = rotation_to_6d(q);
            for (k, c) in layout.rotation(j).enumerate() {
                row[c] = v[k];
            }
        }
        for (c, &on) in contacts[f].iter().enumerate() {
            row[layout.contact(c)] = if on { 1.0 } else { 0.0 };
        }
        row[layout.root_y()] = m.root_translation[f].y;
    }
    for f in 1..t {
        let d = m.root_translation[f] - m.root_translation[f - 1];
        let heading = heading_angle(&m.local_rotations[f][root].to_rotation_matrix().into_inner());
        let (vx, vz) = yaw_rotate(-heading, d.x, d.z);
        feats[[f, layout.root_vx()]] = vx;
        feats[[f, layout.root_vz()]] = vz;
    }
    let (vx1, vz1) = (feats[[1, layout.root_vx()]], feats[[1, layout.root_vz()]]);
    feats[[0, layout.root_vx()]] = vx1;
    feats[[0, layout.root_vz()]] = vz1;

    MotionTensor::new(feats, Arc::new(topo.clone()), m.frame_rate)
}

/// Root trajectory implied by the feature rows, anchored at the origin in xz.
pub fn integrate_root(t: &MotionTensor, root_rotations: &[Matrix3<f64>]) -> Vec<Vector3<f64>> {
    let layout = t.layout();
    let mut out = Vec::with_capacity(t.frames());
    let mut x = 0.0;
    let mut z = 0.0;
    for f in 0..t.frames() {
        let row = t.features.row(f);
        if f > 0 {
            let heading = heading_angle(&root_rotations[f]);
            let (dx, dz) = yaw_rotate(heading, row[layout.root_vx()], row[layout.root_vz()]);
            x += dx;
            z += dz;
        }
        out.push(Vector3::new(x, row[layout.root_y()], z));
    }
    out
}

pub fn from_feature_tensor(t: &MotionTensor) -> Result<SkeletonMotion> {
    let layout = t.layout();
    if t.features.ncols() != layout.dim() {
        return Err(Error::Structural("feature width does not match skeleton".into()));
    }
    if t.frames() < 2 {
        return Err(Error::Structural("need at least 2 frames".into()));
    }
    let root = t.topology.root();
    let mut rotations = Vec::with_capacity(t.frames());
    let mut root_rot = Vec::with_capacity(t.frames());
    for row in t.features.rows() {
        let frame: Vec<UnitQuaternion<f64>> = (0..layout.joints)
            .map(|j| {
                let r = layout.rotation(j);
                let v: Vec<f64> = row.slice(ndarray::s![r]).to_vec();
                sixd_to_quaternion(&v)
            })
            .collect();
        let r = layout.rotation(root);
        let v: Vec<f64> = row.slice(ndarray::s![r]).to_vec();
        root_rot.push(sixd_to_rotation(&v).matrix);
        rotations.push(frame);
    }
    let root_pos = integrate_root(t, &root_rot);
    SkeletonMotion::new((*t.topology).clone(), rotations, root_pos, t.frame_rate)
}
