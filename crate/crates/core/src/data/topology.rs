use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{norm3, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bone {
    pub parent: usize,
    pub child: usize,
    /// Capsule radius of the limb segment, meters.
    pub radius_m: f64,
    /// Child position relative to its parent in the rest pose, millimeters.
    /// Only the synthetic generator needs it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_offset_mm: Option<Vec3>,
}

/// Joint tree with per-bone limb radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonTopology {
    pub joint_names: Vec<String>,
    pub bones: Vec<Bone>,
}

impl SkeletonTopology {
    pub fn new(joint_names: Vec<String>, bones: Vec<Bone>) -> Result<Self> {
        let t = Self { joint_names, bones };
        t.validate()?;
        Ok(t)
    }

    pub fn joints(&self) -> usize {
        self.joint_names.len()
    }

    /// Checks that the bones form a spanning tree and radii are positive.
    pub fn validate(&self) -> Result<()> {
        let v = self.joints();
        if v == 0 {
            return Err(Error::config("topology has no joints"));
        }
        if self.bones.len() != v - 1 {
            return Err(Error::config(alloc::format!(
                "{} joints need {} bones, found {}",
                v,
                v - 1,
                self.bones.len()
            )));
        }
        let mut parent = vec![None; v];
        for (i, b) in self.bones.iter().enumerate() {
            if b.parent >= v || b.child >= v || b.parent == b.child {
                return Err(Error::config(alloc::format!("bone {i} has invalid endpoints")));
            }
            if !(b.radius_m.is_finite() && b.radius_m > 0.0) {
                return Err(Error::config(alloc::format!("bone {i} radius must be positive")));
            }
            if let Some(o) = b.rest_offset_mm {
                if o.iter().any(|x| !x.is_finite()) {
                    return Err(Error::config(alloc::format!("bone {i} rest offset not finite")));
                }
            }
            if parent[b.child].replace(b.parent).is_some() {
                return Err(Error::config(alloc::format!(
                    "joint {} has two parents",
                    b.child
                )));
            }
        }
        // v - 1 edges with one parent each leave exactly one root; reachability
        // from it rules out cycles.
        let order = self.order_from(&parent);
        if order.len() != v {
            return Err(Error::config("bones do not form a connected tree"));
        }
        Ok(())
    }

    fn parents(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.joints()];
        for b in &self.bones {
            parent[b.child] = Some(b.parent);
        }
        parent
    }

    fn order_from(&self, parent: &[Option<usize>]) -> Vec<usize> {
        let Some(root) = parent.iter().position(Option::is_none) else {
            return Vec::new();
        };
        let mut order = vec![root];
        let mut i = 0;
        while i < order.len() {
            let p = order[i];
            for b in self.bones.iter().filter(|b| b.parent == p) {
                order.push(b.child);
            }
            i += 1;
            if order.len() > self.joints() {
                break;
            }
        }
        order
    }

    pub fn root(&self) -> usize {
        self.parents().iter().position(Option::is_none).unwrap_or(0)
    }

    pub fn parent_of(&self, joint: usize) -> Option<usize> {
        self.bones.iter().find(|b| b.child == joint).map(|b| b.parent)
    }

    /// Joints in breadth-first order from the root; parents precede children.
    pub fn order(&self) -> Vec<usize> {
        self.order_from(&self.parents())
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Rest-pose bone lengths in millimeters, if every bone carries an offset.
    pub fn rest_lengths_mm(&self) -> Option<Vec<f64>> {
        self.bones
            .iter()
            .map(|b| b.rest_offset_mm.map(norm3))
            .collect()
    }

    /// Generic 15-joint human: pelvis root, two legs, torso with head, two arms.
    /// Axes are x lateral (left positive), y forward, z up.
    pub fn default_15() -> Self {
        const JOINTS: [&str; 15] = [
            "pelvis",
            "r_hip",
            "r_knee",
            "r_ankle",
            "l_hip",
            "l_knee",
            "l_ankle",
            "neck",
            "head",
            "r_shoulder",
            "r_elbow",
            "r_wrist",
            "l_shoulder",
            "l_elbow",
            "l_wrist",
        ];
        let bones: [(usize, usize, f64, Vec3); 14] = [
            (0, 1, 0.08, [-100.0, 0.0, 0.0]),
            (1, 2, 0.07, [0.0, 0.0, -420.0]),
            (2, 3, 0.05, [0.0, 0.0, -400.0]),
            (0, 4, 0.08, [100.0, 0.0, 0.0]),
            (4, 5, 0.07, [0.0, 0.0, -420.0]),
            (5, 6, 0.05, [0.0, 0.0, -400.0]),
            (0, 7, 0.12, [0.0, 0.0, 520.0]),
            (7, 8, 0.10, [0.0, 0.0, 200.0]),
            (7, 9, 0.06, [-180.0, 0.0, -30.0]),
            (9, 10, 0.05, [0.0, 0.0, -290.0]),
            (10, 11, 0.045, [0.0, 0.0, -250.0]),
            (7, 12, 0.06, [180.0, 0.0, -30.0]),
            (12, 13, 0.05, [0.0, 0.0, -290.0]),
            (13, 14, 0.045, [0.0, 0.0, -250.0]),
        ];
        Self {
            joint_names: JOINTS.iter().map(|s| s.to_string()).collect(),
            bones: bones
                .iter()
                .map(|&(parent, child, radius_m, o)| Bone {
                    parent,
                    child,
                    radius_m,
                    rest_offset_mm: Some(o),
                })
                .collect(),
        }
    }
}
