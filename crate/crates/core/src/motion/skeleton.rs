use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// SMPL joint order.
pub const SMPL_JOINTS: [&str; 24] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

/// T-pose rest positions for the SMPL ordering, y up, facing +z.
const SMPL_REST: [[f32; 3]; 24] = [
    [0.0, 0.93, 0.0],
    [0.09, 0.85, 0.0],
    [-0.09, 0.85, 0.0],
    [0.0, 1.03, 0.0],
    [0.10, 0.48, 0.0],
    [-0.10, 0.48, 0.0],
    [0.0, 1.16, 0.0],
    [0.10, 0.08, 0.0],
    [-0.10, 0.08, 0.0],
    [0.0, 1.22, 0.0],
    [0.11, 0.02, 0.12],
    [-0.11, 0.02, 0.12],
    [0.0, 1.45, 0.0],
    [0.07, 1.38, 0.0],
    [-0.07, 1.38, 0.0],
    [0.0, 1.58, 0.03],
    [0.18, 1.40, 0.0],
    [-0.18, 1.40, 0.0],
    [0.45, 1.40, 0.0],
    [-0.45, 1.40, 0.0],
    [0.70, 1.40, 0.0],
    [-0.70, 1.40, 0.0],
    [0.78, 1.40, 0.0],
    [-0.78, 1.40, 0.0],
];

pub const MINI_JOINTS: [&str; 8] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "neck",
    "left_shoulder",
    "right_shoulder",
    "head",
];

const MINI_REST: [[f32; 3]; 8] = [
    [0.0, 0.93, 0.0],
    [0.09, 0.85, 0.0],
    [-0.09, 0.85, 0.0],
    [0.0, 1.03, 0.0],
    [0.0, 1.45, 0.0],
    [0.18, 1.40, 0.0],
    [-0.18, 1.40, 0.0],
    [0.0, 1.58, 0.03],
];

/// Joint indices needed to build the facing normals of each half body.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodyLandmarks {
    pub pelvis: usize,
    pub spine1: usize,
    pub neck: usize,
    pub left_hip: usize,
    pub right_hip: usize,
    pub left_shoulder: usize,
    pub right_shoulder: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub id: String,
    pub joint_names: Vec<String>,
    pub rest_pose: Vec<[f32; 3]>,
}

impl Skeleton {
    pub fn smpl24() -> Self {
        Self::named("smpl24", &SMPL_JOINTS, &SMPL_REST)
    }

    /// Eight-joint torso skeleton used by the small test configurations.
    pub fn mini8() -> Self {
        Self::named("mini8", &MINI_JOINTS, &MINI_REST)
    }

    /// A vertical chain of `joints` anonymous joints.
    pub fn generic(joints: usize) -> Self {
        Self {
            id: format!("generic{joints}"),
            joint_names: (0..joints).map(|j| format!("joint{j}")).collect(),
            rest_pose: (0..joints)
                .map(|j| [0.0, 0.9 + 0.1 * j as f32, 0.0])
                .collect(),
        }
    }

    /// Skeleton implied by a joint count (files carry no skeleton id).
    pub fn for_joint_count(joints: usize) -> Self {
        match joints {
            24 => Self::smpl24(),
            8 => Self::mini8(),
            j => Self::generic(j),
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "smpl24" => Ok(Self::smpl24()),
            "mini8" => Ok(Self::mini8()),
            other => other
                .strip_prefix("generic")
                .and_then(|n| n.parse().ok())
                .filter(|&n: &usize| n >= 2)
                .map(Self::generic)
                .ok_or_else(|| config(format!("unknown skeleton `{other}`"))),
        }
    }

    fn named(id: &str, names: &[&str], rest: &[[f32; 3]]) -> Self {
        Self {
            id: id.to_string(),
            joint_names: names.iter().map(|s| s.to_string()).collect(),
            rest_pose: rest.to_vec(),
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn landmarks(&self) -> Option<BodyLandmarks> {
        Some(BodyLandmarks {
            pelvis: self.index_of("pelvis")?,
            spine1: self.index_of("spine1")?,
            neck: self.index_of("neck")?,
            left_hip: self.index_of("left_hip")?,
            right_hip: self.index_of("right_hip")?,
            left_shoulder: self.index_of("left_shoulder")?,
            right_shoulder: self.index_of("right_shoulder")?,
        })
    }

    /// Default upper/lower partition for this skeleton.
    pub fn default_split(&self) -> HalfBodySplit {
        match self.id.as_str() {
            "smpl24" => HalfBodySplit {
                lower: vec![0, 1, 2, 3, 4, 5, 7, 8, 10, 11],
                upper: vec![6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23],
                root: 0,
            },
            _ => {
                let j = self.joint_count();
                let half = j.div_ceil(2);
                HalfBodySplit {
                    lower: (0..half).collect(),
                    upper: (half..j).collect(),
                    root: 0,
                }
            }
        }
    }
}

/// Partition of the joints into upper and lower half bodies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HalfBodySplit {
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
    pub root: usize,
}

impl HalfBodySplit {
    /// Checks disjointness, coverage of `0..joints`, and that the root is in the lower half.
    pub fn validate(&self, joints: usize) -> Result<()> {
        let mut seen = vec![false; joints];
        for &j in self.upper.iter().chain(&self.lower) {
            if j >= joints {
                return Err(config(format!("joint index {j} out of range for {joints} joints")));
            }
            if seen[j] {
                return Err(config(format!("joint {j} assigned twice")));
            }
            seen[j] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(config(format!("joint {missing} not assigned to either half")));
        }
        if !self.lower.contains(&self.root) {
            return Err(config(format!("root joint {} must be in the lower half", self.root)));
        }
        if self.upper.is_empty() {
            return Err(config("upper half is empty"));
        }
        Ok(())
    }

    pub fn joints(&self, half: Half) -> &[usize] {
        match half {
            Half::Upper => &self.upper,
            Half::Lower => &self.lower,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Half {
    Upper,
    Lower,
}

impl Half {
    pub fn as_str(self) -> &'static str {
        match self {
            Half::Upper => "upper",
            Half::Lower => "lower",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_smpl_split_partitions_all_joints() {
        let sk = Skeleton::smpl24();
        let split = sk.default_split();
        split.validate(24).unwrap();
        let mut all: Vec<usize> = split.upper.iter().chain(&split.lower).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..24).collect::<Vec<_>>());
        assert_eq!(split.lower.len(), 10);
        assert_eq!(split.upper.len(), 14);
        for name in ["pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_foot"] {
            assert!(split.lower.contains(&sk.index_of(name).unwrap()), "{name}");
        }
        for name in ["neck", "head", "left_shoulder", "right_hand", "spine2", "spine3"] {
            assert!(split.upper.contains(&sk.index_of(name).unwrap()), "{name}");
        }
    }

    #[test]
    fn split_validation_errors() {
        let bad_root = HalfBodySplit {
            upper: vec![0, 1],
            lower: vec![2, 3],
            root: 0,
        };
        assert!(bad_root.validate(4).is_err());
        let overlap = HalfBodySplit {
            upper: vec![1, 2],
            lower: vec![0, 1, 3],
            root: 0,
        };
        assert!(overlap.validate(4).is_err());
        let out_of_range = HalfBodySplit {
            upper: vec![2, 3, 4],
            lower: vec![0, 1],
            root: 0,
        };
        assert!(out_of_range.validate(4).is_err());
        let missing = HalfBodySplit {
            upper: vec![2],
            lower: vec![0, 1],
            root: 0,
        };
        assert!(missing.validate(4).is_err());
    }

    #[test]
    fn landmarks_exist_for_named_skeletons() {
        assert!(Skeleton::smpl24().landmarks().is_some());
        assert!(Skeleton::mini8().landmarks().is_some());
        assert!(Skeleton::generic(5).landmarks().is_none());
        assert_eq!(Skeleton::from_id("generic6").unwrap().joint_count(), 6);
        assert!(Skeleton::from_id("robot").is_err());
    }
}
