//! Per-joint binary occlusion labels from two geometric heuristics:
//! depth-ordered planar clusters over camera-frame 3D joints, and the
//! 2D "boxed man" body model.

mod boxed;
mod cluster;
mod quad;

pub use boxed::{
    boxed_man_occlusions, build_occluders, mean_bone_length_2d, BoxedManConfig, DeltaSpec,
    Occluder,
};
pub use cluster::{cluster_occlusions, ClusterConfig, DEPTH_TIE_TOL};
pub use quad::{build_segment_quad, point_in_quad, Quad, MIN_SEGMENT_LENGTH};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcclusionError {
    #[error("degenerate segment{}: endpoints coincide", .segment.as_ref().map(|s| format!(" `{s}`")).unwrap_or_default())]
    DegenerateSegment { segment: Option<String> },
    #[error("invalid occlusion config: {0}")]
    InvalidConfig(String),
    #[error("occlusion label {value} at joint {index} is not 0 or 1")]
    BadLabel { index: usize, value: i64 },
    #[error("pose has {got} joints, topology expects {expected}")]
    JointCount { got: usize, expected: usize },
}

/// One label per joint; 1 = occluded, 0 = visible.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OcclusionVector(Vec<u8>);

impl OcclusionVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn from_labels<I, T>(labels: I) -> Result<Self, OcclusionError>
    where
        I: IntoIterator<Item = T>,
        T: Into<i64>,
    {
        labels
            .into_iter()
            .enumerate()
            .map(|(index, v)| match v.into() {
                0 => Ok(0),
                1 => Ok(1),
                value => Err(OcclusionError::BadLabel { index, value }),
            })
            .collect::<Result<Vec<u8>, _>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_occluded(&self, joint: usize) -> bool {
        self.0[joint] == 1
    }

    pub fn set_occluded(&mut self, joint: usize) {
        self.0[joint] = 1;
    }

    pub fn count_occluded(&self) -> usize {
        self.0.iter().map(|&v| v as usize).sum()
    }

    pub fn labels(&self) -> &[u8] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

/// Which heuristic produced a set of labels.
#[derive(Debug, Clone, PartialEq)]
pub enum Labeler {
    Clustered(ClusterConfig),
    BoxedMan(BoxedManConfig),
    /// Use labels stored alongside the sequence.
    Precomputed,
}

impl Labeler {
    pub fn name(&self) -> &'static str {
        match self {
            Labeler::Clustered(_) => "clustered",
            Labeler::BoxedMan(_) => "boxedman",
            Labeler::Precomputed => "precomputed",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_must_be_binary() {
        assert!(OcclusionVector::from_labels([0, 1, 1]).is_ok());
        assert_eq!(
            OcclusionVector::from_labels([0, 2]),
            Err(OcclusionError::BadLabel { index: 1, value: 2 })
        );
        let v = OcclusionVector::from_labels([1u8, 0, 1]).unwrap();
        assert_eq!(v.count_occluded(), 2);
        assert_eq!(v.to_f64(), vec![1.0, 0.0, 1.0]);
    }
}
