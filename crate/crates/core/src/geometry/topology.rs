use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-width of limb boxes as a fraction of the mean bone length.
pub const LIMB_WIDTH_FACTOR: f64 = 0.13;
/// Half-width of the head box as a fraction of the mean bone length.
pub const HEAD_WIDTH_FACTOR: f64 = 0.26;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("joint index {index} out of range for {joint_count} joints ({context})")]
    IndexOutOfRange {
        index: usize,
        joint_count: usize,
        context: String,
    },
    #[error("parent links do not form a tree rooted at joint {0}")]
    NotATree(usize),
    #[error("segment `{0}` has a non-positive width factor")]
    BadWidth(String),
    #[error("joint_names has {names} entries but joint_count is {joint_count}")]
    NameCount { names: usize, joint_count: usize },
    #[error("unknown topology preset `{0}`")]
    UnknownPreset(String),
    #[error("reading topology file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing topology file: {0}")]
    Json(#[from] serde_json::Error),
}

/// A box-shaped occluder built around the bone between joints `a` and `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbSegment {
    pub name: String,
    pub a: usize,
    pub b: usize,
    /// Box half-width relative to the pose's mean bone length.
    pub width_factor: f64,
}

/// The torso occluder: four corner joints plus the torso-internal joints
/// (pelvis, spine, ...) that belong to the same body part and are never
/// occluded by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorsoQuad {
    pub corners: [usize; 4],
    #[serde(default)]
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub name: String,
    pub joint_count: usize,
    pub joint_names: Vec<String>,
    /// `None` marks the root.
    pub parent: Vec<Option<usize>>,
    pub root_index: usize,
    pub head_segment: LimbSegment,
    pub limb_segments: Vec<LimbSegment>,
    pub torso_quad: TorsoQuad,
}

fn limb(name: &str, a: usize, b: usize) -> LimbSegment {
    LimbSegment {
        name: name.to_string(),
        a,
        b,
        width_factor: LIMB_WIDTH_FACTOR,
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn parents(list: &[i32]) -> Vec<Option<usize>> {
    list.iter()
        .map(|&p| (p >= 0).then_some(p as usize))
        .collect()
}

impl SkeletonTopology {
    pub const PRESETS: [&'static str; 2] = ["h36m17", "humaneva15"];

    /// The 17-joint Human3.6M layout. Joints 9/10 bound the head and
    /// 1, 4, 11, 14 (hips and shoulders) span the torso.
    pub fn h36m17() -> Self {
        Self {
            name: "h36m17".into(),
            joint_count: 17,
            joint_names: names(&[
                "pelvis",
                "r_hip",
                "r_knee",
                "r_ankle",
                "l_hip",
                "l_knee",
                "l_ankle",
                "spine",
                "thorax",
                "neck",
                "head",
                "l_shoulder",
                "l_elbow",
                "l_wrist",
                "r_shoulder",
                "r_elbow",
                "r_wrist",
            ]),
            parent: parents(&[-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15]),
            root_index: 0,
            head_segment: LimbSegment {
                name: "head".into(),
                a: 10,
                b: 9,
                width_factor: HEAD_WIDTH_FACTOR,
            },
            limb_segments: vec![
                limb("r_thigh", 1, 2),
                limb("r_shin", 2, 3),
                limb("l_thigh", 4, 5),
                limb("l_shin", 5, 6),
                limb("l_upper_arm", 11, 12),
                limb("l_forearm", 12, 13),
                limb("r_upper_arm", 14, 15),
                limb("r_forearm", 15, 16),
            ],
            torso_quad: TorsoQuad {
                corners: [1, 4, 11, 14],
                members: vec![0, 7, 8],
            },
        }
    }

    /// The 15-joint HumanEva-I layout.
    pub fn humaneva15() -> Self {
        Self {
            name: "humaneva15".into(),
            joint_count: 15,
            joint_names: names(&[
                "pelvis",
                "thorax",
                "l_shoulder",
                "l_elbow",
                "l_wrist",
                "r_shoulder",
                "r_elbow",
                "r_wrist",
                "l_hip",
                "l_knee",
                "l_ankle",
                "r_hip",
                "r_knee",
                "r_ankle",
                "head",
            ]),
            parent: parents(&[-1, 0, 1, 2, 3, 1, 5, 6, 0, 8, 9, 0, 11, 12, 1]),
            root_index: 0,
            head_segment: LimbSegment {
                name: "head".into(),
                a: 14,
                b: 1,
                width_factor: HEAD_WIDTH_FACTOR,
            },
            limb_segments: vec![
                limb("l_upper_arm", 2, 3),
                limb("l_forearm", 3, 4),
                limb("r_upper_arm", 5, 6),
                limb("r_forearm", 6, 7),
                limb("l_thigh", 8, 9),
                limb("l_shin", 9, 10),
                limb("r_thigh", 11, 12),
                limb("r_shin", 12, 13),
            ],
            torso_quad: TorsoQuad {
                corners: [8, 11, 5, 2],
                members: vec![0, 1],
            },
        }
    }

    pub fn preset(name: &str) -> Result<Self, TopologyError> {
        match name {
            "h36m17" => Ok(Self::h36m17()),
            "humaneva15" => Ok(Self::humaneva15()),
            other => Err(TopologyError::UnknownPreset(other.to_string())),
        }
    }

    /// Loads a preset by name, or a JSON topology file when `spec` is a path.
    pub fn resolve(spec: &str) -> Result<Self, TopologyError> {
        if Self::PRESETS.contains(&spec) {
            return Self::preset(spec);
        }
        let path = Path::new(spec);
        if path.exists() {
            return Self::from_json_file(path);
        }
        Err(TopologyError::UnknownPreset(spec.to_string()))
    }

    pub fn from_json_file(path: &Path) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path)?;
        let topo: Self = serde_json::from_str(&text)?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let n = self.joint_count;
        if self.joint_names.len() != n || self.parent.len() != n {
            return Err(TopologyError::NameCount {
                names: self.joint_names.len().min(self.parent.len()),
                joint_count: n,
            });
        }
        let check = |index: usize, context: &str| {
            if index >= n {
                Err(TopologyError::IndexOutOfRange {
                    index,
                    joint_count: n,
                    context: context.to_string(),
                })
            } else {
                Ok(())
            }
        };
        check(self.root_index, "root")?;
        for p in self.parent.iter().flatten() {
            check(*p, "parent")?;
        }
        for seg in self.segments() {
            check(seg.a, &seg.name)?;
            check(seg.b, &seg.name)?;
            if !(seg.width_factor > 0.0) {
                return Err(TopologyError::BadWidth(seg.name.clone()));
            }
        }
        for &c in self.torso_quad.corners.iter().chain(&self.torso_quad.members) {
            check(c, "torso")?;
        }
        // exactly one root, and every joint reaches it without revisiting
        if self.parent[self.root_index].is_some()
            || self.parent.iter().filter(|p| p.is_none()).count() != 1
        {
            return Err(TopologyError::NotATree(self.root_index));
        }
        for start in 0..n {
            let mut j = start;
            let mut steps = 0;
            while let Some(p) = self.parent[j] {
                j = p;
                steps += 1;
                if steps > n {
                    return Err(TopologyError::NotATree(self.root_index));
                }
            }
            if j != self.root_index {
                return Err(TopologyError::NotATree(self.root_index));
            }
        }
        Ok(())
    }

    /// Head segment followed by the limb segments.
    pub fn segments(&self) -> impl Iterator<Item = &LimbSegment> {
        std::iter::once(&self.head_segment).chain(self.limb_segments.iter())
    }

    /// `(child, parent)` pairs for every non-root joint.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.map(|p| (j, p)))
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in SkeletonTopology::PRESETS {
            let t = SkeletonTopology::preset(name).unwrap();
            t.validate().unwrap();
            assert_eq!(t.name, name);
        }
        assert_eq!(SkeletonTopology::h36m17().joint_count, 17);
        assert_eq!(SkeletonTopology::humaneva15().joint_count, 15);
    }

    #[test]
    fn h36m_head_and_torso_indices() {
        let t = SkeletonTopology::h36m17();
        assert_eq!((t.head_segment.b, t.head_segment.a), (9, 10));
        let mut c = t.torso_quad.corners;
        c.sort();
        assert_eq!(c, [1, 4, 11, 14]);
    }

    #[test]
    fn rejects_cycles_and_bad_indices() {
        let mut t = SkeletonTopology::humaneva15();
        t.parent[1] = Some(2);
        assert!(matches!(t.validate(), Err(TopologyError::NotATree(_))));

        let mut t = SkeletonTopology::humaneva15();
        t.limb_segments[0].b = 99;
        assert!(matches!(
            t.validate(),
            Err(TopologyError::IndexOutOfRange { index: 99, .. })
        ));

        let mut t = SkeletonTopology::humaneva15();
        t.limb_segments[0].width_factor = 0.0;
        assert!(matches!(t.validate(), Err(TopologyError::BadWidth(_))));
    }

    #[test]
    fn json_round_trip() {
        let t = SkeletonTopology::h36m17();
        let back: SkeletonTopology = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }
}
