//! MotionJSON: the wire format shared with the HTTP service and the studio UI.
//!
//! ```json
//! {
//!   "topology": {"names": [...], "parents": [null, 0, ...], "offsets": [[x,y,z], ...], "contact_joints": [...]},
//!   "frame_rate": 30.0,
//!   "frames": [[[w,x,y,z], ...per joint], ...per frame],
//!   "root": [[x,y,z], ...per frame]
//! }
//! ```

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::skeleton::{SkeletonMotion, SkeletonTopology};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyJson {
    pub names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub offsets: Vec<[f64; 3]>,
    pub contact_joints: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionJson {
    pub topology: TopologyJson,
    pub frame_rate: f64,
    pub frames: Vec<Vec<[f64; 4]>>,
    pub root: Vec<[f64; 3]>,
}

impl From<&SkeletonTopology> for TopologyJson {
    fn from(t: &SkeletonTopology) -> Self {
        TopologyJson {
            names: t.joint_names.clone(),
            parents: t.parents.clone(),
            offsets: t.offsets.clone(),
            contact_joints: t.contact_joints.clone(),
        }
    }
}

impl TopologyJson {
    pub fn to_topology(&self) -> Result<SkeletonTopology> {
        SkeletonTopology::new(
            self.names.clone(),
            self.parents.clone(),
            self.offsets.clone(),
            self.contact_joints.clone(),
        )
    }
}

impl From<&SkeletonMotion> for MotionJson {
    fn from(m: &SkeletonMotion) -> Self {
        MotionJson {
            topology: TopologyJson::from(&m.topology),
            frame_rate: m.frame_rate,
            frames: m
                .local_rotations
                .iter()
                .map(|f| {
                    f.iter()
                        .map(|q| {
                            let q = q.quaternion();
                            [q.w, q.i, q.j, q.k]
                        })
                        .collect()
                })
                .collect(),
            root: m.root_translation.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }
}

impl MotionJson {
    /// Convert to a validated motion. Quaternions are renormalized; inputs
    /// further than 1e-3 from unit norm are rejected.
    pub fn to_motion(&self) -> Result<SkeletonMotion> {
        let topo = self.topology.to_topology()?;
        let rotations = self
            .frames
            .iter()
            .enumerate()
            .map(|(f, frame)| {
                frame
                    .iter()
                    .map(|&[w, x, y, z]| {
                        let q = Quaternion::new(w, x, y, z);
                        if (q.norm() - 1.0).abs() > 1e-3 {
                            return Err(Error::Structural(format!("frame {f}: quaternion is not unit length")));
                        }
                        Ok(UnitQuaternion::from_quaternion(q))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let root = self.root.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
        SkeletonMotion::new(topo, rotations, root, self.frame_rate)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
