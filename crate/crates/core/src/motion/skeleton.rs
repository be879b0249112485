use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::EulerOrder;
use crate::error::{Error, Result};

/// Joint hierarchy shared by every motion and network built on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub joint_names: Vec<String>,
    /// Parent of each joint; `None` marks the root.
    pub parents: Vec<Option<usize>>,
    pub offsets: Vec<[f64; 3]>,
    /// Joints supervised by the contact term and carried in the contact block.
    pub contact_joints: Vec<usize>,
    /// Optional BVH `End Site` offset per joint, kept for lossless writing.
    #[serde(default)]
    pub end_sites: Vec<Option<[f64; 3]>>,
    /// BVH rotation channel order per joint.
    #[serde(default)]
    pub rotation_orders: Vec<EulerOrder>,
}

impl SkeletonTopology {
    /// Build and validate a topology. End sites default to none and rotation
    /// orders to ZXY.
    pub fn new(
        joint_names: Vec<String>,
        parents: Vec<Option<usize>>,
        offsets: Vec<[f64; 3]>,
        contact_joints: Vec<usize>,
    ) -> Result<Self> {
        let j = joint_names.len();
        let topo = SkeletonTopology {
            joint_names,
            parents,
            offsets,
            contact_joints,
            end_sites: vec![None; j],
            rotation_orders: vec![EulerOrder::ZXY; j],
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn contact_count(&self) -> usize {
        self.contact_joints.len()
    }

    /// Width of the per-frame feature vector: 6 per joint, one per contact
    /// joint, and the root triplet.
    pub fn feature_dim(&self) -> usize {
        6 * self.joint_count() + self.contact_count() + 3
    }

    pub fn root(&self) -> usize {
        self.parents
            .iter()
            .position(Option::is_none)
            .expect("validated topology has a root")
    }

    pub fn children(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Some(joint))
            .map(|(i, _)| i)
    }

    /// Joints ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.joint_count());
        order.push(self.root());
        let mut head = 0;
        while head < order.len() {
            let j = order[head];
            order.extend(self.children(j));
            head += 1;
        }
        order
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joint_count();
        if j == 0 {
            return Err(Error::Structural("skeleton has no joints".into()));
        }
        if self.parents.len() != j || self.offsets.len() != j {
            return Err(Error::Structural(format!(
                "joint arrays disagree: {} names, {} parents, {} offsets",
                j,
                self.parents.len(),
                self.offsets.len()
            )));
        }
        if !self.end_sites.is_empty() && self.end_sites.len() != j {
            return Err(Error::Structural("end_sites length differs from joint count".into()));
        }
        if !self.rotation_orders.is_empty() && self.rotation_orders.len() != j {
            return Err(Error::Structural("rotation_orders length differs from joint count".into()));
        }
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(Error::Structural(format!("expected exactly one root, found {roots}")));
        }
        for (i, p) in self.parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= j || p == i {
                    return Err(Error::Structural(format!("joint {i} has invalid parent {p}")));
                }
            }
        }
        // Every joint must reach the root within j steps.
        for start in 0..j {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = self.parents[cur] {
                cur = p;
                steps += 1;
                if steps > j {
                    return Err(Error::Structural(format!("cycle through joint {start}")));
                }
            }
        }
        if self.contact_joints.is_empty() {
            return Err(Error::Structural("contact joint set is empty".into()));
        }
        let mut seen = vec![false; j];
        for &c in &self.contact_joints {
            if c >= j {
                return Err(Error::Structural(format!("contact joint {c} out of range")));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::Structural(format!("contact joint {c} listed twice")));
            }
        }
        Ok(())
    }

    /// Longest root-to-contact-joint chain length in skeleton units.
    pub fn leg_length(&self) -> f64 {
        self.contact_joints
            .iter()
            .map(|&c| {
                let mut len = 0.0;
                let mut cur = c;
                while let Some(p) = self.parents[cur] {
                    len += Vector3::from(self.offsets[cur]).norm();
                    cur = p;
                }
                len
            })
            .fold(0.0, f64::max)
    }

    /// Joints whose subtree contains `joint` (inclusive), root first.
    pub fn ancestors(&self, joint: usize) -> Vec<usize> {
        let mut chain = vec![joint];
        let mut cur = joint;
        while let Some(p) = self.parents[cur] {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }

    /// All joints in the subtree rooted at `joint`.
    pub fn subtree(&self, joint: usize) -> Vec<usize> {
        let mut out = vec![joint];
        let mut head = 0;
        while head < out.len() {
            let j = out[head];
            out.extend(self.children(j));
            head += 1;
        }
        out
    }

    /// Graph distance between every pair of joints on the (undirected) tree.
    pub fn joint_distances(&self) -> Vec<Vec<usize>> {
        let j = self.joint_count();
        let mut adj = vec![Vec::new(); j];
        for (i, p) in self.parents.iter().enumerate() {
            if let Some(p) = *p {
                adj[i].push(p);
                adj[p].push(i);
            }
        }
        (0..j)
            .map(|src| {
                let mut dist = vec![usize::MAX; j];
                dist[src] = 0;
                let mut queue = std::collections::VecDeque::from([src]);
                while let Some(u) = queue.pop_front() {
                    for &v in &adj[u] {
                        if dist[v] == usize::MAX {
                            dist[v] = dist[u] + 1;
                            queue.push_back(v);
                        }
                    }
                }
                dist
            })
            .collect()
    }

    /// Pick contact joints from names (toe/foot/heel/ankle); falls back to the
    /// leaf joints lowest in the rest pose.
    pub fn guess_contact_joints(names: &[String], parents: &[Option<usize>], offsets: &[[f64; 3]]) -> Vec<usize> {
        let by_name: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, n)| {
                let n = n.to_ascii_lowercase();
                ["toe", "foot", "heel", "ankle"].iter().any(|k| n.contains(k))
            })
            .map(|(i, _)| i)
            .collect();
        if !by_name.is_empty() {
            return by_name;
        }
        let j = names.len();
        if j == 1 {
            return vec![0];
        }
        // Rest-pose heights.
        let mut height = vec![0.0; j];
        let mut done = vec![false; j];
        fn resolve(k: usize, parents: &[Option<usize>], offsets: &[[f64; 3]], h: &mut [f64], done: &mut [bool]) -> f64 {
            if done[k] {
                return h[k];
            }
            let v = match parents[k] {
                Some(p) => resolve(p, parents, offsets, h, done) + offsets[k][1],
                None => 0.0,
            };
            h[k] = v;
            done[k] = true;
            v
        }
        for k in 0..j {
            resolve(k, parents, offsets, &mut height, &mut done);
        }
        let leaves: Vec<usize> = (0..j).filter(|&k| !parents.contains(&Some(k)) && parents[k].is_some()).collect();
        let min_h = leaves.iter().map(|&k| height[k]).fold(f64::INFINITY, f64::min);
        leaves
            .into_iter()
            .filter(|&k| height[k] <= min_h + 1e-9)
            .collect()
    }
}

/// A clip: per-frame local joint rotations plus the root trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonMotion {
    pub topology: SkeletonTopology,
    /// `local_rotations[t][j]`
    pub local_rotations: Vec<Vec<UnitQuaternion<f64>>>,
    pub root_translation: Vec<Vector3<f64>>,
    pub frame_rate: f64,
}

impl SkeletonMotion {
    pub fn new(
        topology: SkeletonTopology,
        local_rotations: Vec<Vec<UnitQuaternion<f64>>>,
        root_translation: Vec<Vector3<f64>>,
        frame_rate: f64,
    ) -> Result<Self> {
        let m = SkeletonMotion {
            topology,
            local_rotations,
            root_translation,
            frame_rate,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn frames(&self) -> usize {
        self.local_rotations.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        let t = self.frames();
        if t < 2 {
            return Err(Error::Structural(format!("motion needs at least 2 frames, got {t}")));
        }
        if self.root_translation.len() != t {
            return Err(Error::Structural(format!(
                "{} root positions for {t} frames",
                self.root_translation.len()
            )));
        }
        let j = self.topology.joint_count();
        for (f, row) in self.local_rotations.iter().enumerate() {
            if row.len() != j {
                return Err(Error::Structural(format!("frame {f} has {} rotations, expected {j}", row.len())));
            }
            for q in row {
                if (q.as_ref().norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::Structural(format!("non-unit quaternion at frame {f}")));
                }
            }
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::Structural(format!("invalid frame rate {}", self.frame_rate)));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn chain(n: usize) -> SkeletonTopology {
        let names = (0..n).map(|i| format!("j{i}")).collect();
        let parents = (0..n).map(|i| i.checked_sub(1)).collect();
        let offsets = (0..n).map(|i| if i == 0 { [0.0; 3] } else { [1.0, 0.0, 0.0] }).collect();
        SkeletonTopology::new(names, parents, offsets, vec![n - 1]).unwrap()
    }

    #[test]
    fn feature_dim_for_twenty_two_joints() {
        let names: Vec<String> = (0..22).map(|i| format!("j{i}")).collect();
        let parents = (0..22).map(|i: usize| i.checked_sub(1)).collect();
        let topo = SkeletonTopology::new(names, parents, vec![[0.0, 1.0, 0.0]; 22], vec![18, 19, 20, 21]).unwrap();
        assert_eq!(topo.feature_dim(), 139);
    }

    #[test]
    fn rejects_two_roots_and_cycles() {
        let names: Vec<String> = (0..3).map(|i| format!("j{i}")).collect();
        let two_roots = SkeletonTopology::new(names.clone(), vec![None, None, Some(0)], vec![[0.0; 3]; 3], vec![2]);
        assert!(matches!(two_roots, Err(Error::Structural(_))));
        let cycle = SkeletonTopology::new(names, vec![None, Some(2), Some(1)], vec![[0.0; 3]; 3], vec![2]);
        assert!(matches!(cycle, Err(Error::Structural(_))));
    }

    #[test]
    fn rejects_bad_contact_sets() {
        let names: Vec<String> = (0..2).map(|i| format!("j{i}")).collect();
        let parents = vec![None, Some(0)];
        assert!(SkeletonTopology::new(names.clone(), parents.clone(), vec![[0.0; 3]; 2], vec![]).is_err());
        assert!(SkeletonTopology::new(names.clone(), parents.clone(), vec![[0.0; 3]; 2], vec![1, 1]).is_err());
        assert!(SkeletonTopology::new(names, parents, vec![[0.0; 3]; 2], vec![5]).is_err());
    }

    #[test]
    fn distances_on_chain() {
        let d = chain(4).joint_distances();
        assert_eq!(d[0][3], 3);
        assert_eq!(d[2][1], 1);
        assert_eq!(d[1][1], 0);
    }

    #[test]
    fn contact_guess_prefers_names() {
        let names: Vec<String> = ["Hips", "LeftUpLeg", "LeftFoot", "Spine"].iter().map(|s| s.to_string()).collect();
        let parents = vec![None, Some(0), Some(1), Some(0)];
        let offsets = vec![[0.0; 3], [0.1, -0.4, 0.0], [0.0, -0.4, 0.0], [0.0, 0.3, 0.0]];
        assert_eq!(SkeletonTopology::guess_contact_joints(&names, &parents, &offsets), vec![2]);
        let anon: Vec<String> = (0..4).map(|i| format!("j{i}")).collect();
        assert_eq!(SkeletonTopology::guess_contact_joints(&anon, &parents, &offsets), vec![2]);
    }
}
