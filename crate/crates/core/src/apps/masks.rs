//! Joint and frame masks for composition.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{FeatureLayout, SkeletonTopology};

/// A subset of joints, plus whether the root trajectory triplet and the
/// contact labels travel with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointMask {
    pub kept_joints: Vec<usize>,
    pub includes_root: bool,
    pub includes_contacts: bool,
}

impl JointMask {
    pub fn empty() -> Self {
        JointMask {
            kept_joints: Vec::new(),
            includes_root: false,
            includes_contacts: false,
        }
    }

    pub fn full(topo: &SkeletonTopology) -> Self {
        JointMask {
            kept_joints: (0..topo.joint_count()).collect(),
            includes_root: true,
            includes_contacts: true,
        }
    }

    /// Root and every joint on or below a chain from the root to a contact
    /// joint. The root trajectory and contacts belong to the lower body.
    pub fn lower_body(topo: &SkeletonTopology) -> Self {
        let mut set = BTreeSet::new();
        set.insert(topo.root());
        for &c in &topo.contact_joints {
            set.extend(topo.ancestors(c));
            set.extend(topo.subtree(c));
        }
        JointMask {
            kept_joints: set.into_iter().collect(),
            includes_root: true,
            includes_contacts: true,
        }
    }

    pub fn upper_body(topo: &SkeletonTopology) -> Self {
        let lower: BTreeSet<usize> = Self::lower_body(topo).kept_joints.into_iter().collect();
        JointMask {
            kept_joints: (0..topo.joint_count()).filter(|j| !lower.contains(j)).collect(),
            includes_root: false,
            includes_contacts: false,
        }
    }

    pub fn validate(&self, topo: &SkeletonTopology) -> Result<()> {
        if let Some(j) = self.kept_joints.iter().find(|&&j| j >= topo.joint_count()) {
            return Err(Error::Argument(format!("joint {j} out of range for {} joints", topo.joint_count())));
        }
        Ok(())
    }

    /// Per-feature flags over the feature layout of `topo`.
    pub fn feature_mask(&self, topo: &SkeletonTopology) -> Result<Vec<bool>> {
        self.validate(topo)?;
        let layout = FeatureLayout::of(topo);
        let mut m = vec![false; layout.dim()];
        for &j in &self.kept_joints {
            for c in layout.rotation(j) {
                m[c] = true;
            }
        }
        if self.includes_contacts {
            for c in layout.contacts_range() {
                m[c] = true;
            }
        }
        if self.includes_root {
            for c in layout.root_range() {
                m[c] = true;
            }
        }
        Ok(m)
    }
}

/// Frames to be regenerated, as half-open intervals on a timeline of
/// `total_frames`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMask {
    pub total_frames: usize,
    pub intervals: Vec<(usize, usize)>,
}

impl FrameMask {
    pub fn new(total_frames: usize, intervals: Vec<(usize, usize)>) -> Result<Self> {
        let m = FrameMask { total_frames, intervals };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_frames == 0 {
            return Err(Error::Argument("frame mask timeline is empty".into()));
        }
        for &(a, b) in &self.intervals {
            if a >= b || b > self.total_frames {
                return Err(Error::Argument(format!("interval [{a}, {b}) is empty or exceeds {} frames", self.total_frames)));
            }
        }
        Ok(())
    }

    /// The mask at another temporal resolution: frame `i` of `len` is masked
    /// when its centre falls inside an interval.
    pub fn at_resolution(&self, len: usize) -> Vec<bool> {
        let scale = self.total_frames as f64 / len as f64;
        (0..len)
            .map(|i| {
                let t = (i as f64 + 0.5) * scale;
                self.intervals.iter().any(|&(a, b)| t >= a as f64 && t < b as f64)
            })
            .collect()
    }
}

/// Mask specification as exchanged in JSON:
/// `{"kept_joints": [...], "frames": [[start, end], ...]}` plus optional
/// flags and a named preset (`"lower"` or `"upper"`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskSpec {
    pub preset: Option<String>,
    pub kept_joints: Option<Vec<usize>>,
    pub includes_root: Option<bool>,
    pub includes_contacts: Option<bool>,
    pub frames: Option<Vec<(usize, usize)>>,
    pub total_frames: Option<usize>,
}

impl MaskSpec {
    pub fn joint_mask(&self, topo: &SkeletonTopology) -> Result<JointMask> {
        let mask = match (self.preset.as_deref(), &self.kept_joints) {
            (Some("lower"), None) => JointMask::lower_body(topo),
            (Some("upper"), None) => JointMask::upper_body(topo),
            (Some(p), None) => return Err(Error::Argument(format!("unknown mask preset {p:?}"))),
            (Some(_), Some(_)) => return Err(Error::Argument("give either a preset or kept_joints, not both".into())),
            (None, kept) => {
                let kept = kept.clone().unwrap_or_default();
                let has_root = kept.contains(&topo.root());
                let has_contacts = !topo.contact_joints.is_empty() && topo.contact_joints.iter().all(|c| kept.contains(c));
                JointMask {
                    includes_root: self.includes_root.unwrap_or(has_root),
                    includes_contacts: self.includes_contacts.unwrap_or(has_contacts),
                    kept_joints: kept,
                }
            }
        };
        mask.validate(topo)?;
        Ok(mask)
    }

    pub fn frame_mask(&self, default_total: usize) -> Result<FrameMask> {
        FrameMask::new(self.total_frames.unwrap_or(default_total), self.frames.clone().unwrap_or_default())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::biped_topology;

    #[test]
    fn lower_and_upper_partition_the_skeleton() {
        let t = biped_topology();
        let lower = JointMask::lower_body(&t);
        let upper = JointMask::upper_body(&t);
        assert_eq!(lower.kept_joints, vec![0, 2, 3, 4, 5, 6, 7]);
        assert_eq!(upper.kept_joints, vec![1]);
        let a = lower.feature_mask(&t).unwrap();
        let b = upper.feature_mask(&t).unwrap();
        assert_eq!(a.len(), t.feature_dim());
        assert!(a.iter().zip(&b).all(|(x, y)| x ^ y));
        let layout = FeatureLayout::of(&t);
        assert!(layout.root_range().all(|c| a[c]));
    }

    #[test]
    fn frame_mask_rescales() {
        let m = FrameMask::new(96, vec![(32, 64)]).unwrap();
        let low = m.at_resolution(24);
        assert_eq!(low.iter().filter(|&&v| v).count(), 8);
        assert!(low[8] && !low[7] && low[15] && !low[16]);
        assert!(FrameMask::new(96, vec![(10, 10)]).is_err());
        assert!(FrameMask::new(96, vec![(90, 97)]).is_err());
    }

    #[test]
    fn spec_from_json() {
        let t = biped_topology();
        let s = MaskSpec::from_json(r#"{"kept_joints": [0, 2, 3, 4, 5, 6, 7], "frames": [[10, 20]]}"#).unwrap();
        let jm = s.joint_mask(&t).unwrap();
        assert!(jm.includes_root && jm.includes_contacts);
        assert_eq!(jm, JointMask::lower_body(&t));
        assert_eq!(s.frame_mask(96).unwrap().intervals, vec![(10, 20)]);
        let p = MaskSpec::from_json(r#"{"preset": "upper"}"#).unwrap();
        assert_eq!(p.joint_mask(&t).unwrap(), JointMask::upper_body(&t));
        assert!(MaskSpec::from_json(r#"{"kept_joints": [42]}"#).unwrap().joint_mask(&t).is_err());
    }
}
