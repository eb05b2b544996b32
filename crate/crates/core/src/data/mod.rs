//! Motion sequences: synthetic generation, POSEQ1 files, and splitting.

mod poseq;
mod synth;

pub use poseq::{load_sequences, read_sequences, write_sequences, LoadReport, FORMAT_TAG};
pub use synth::{synth_corpus, synth_walk, CameraOrbit, Gait, SynthConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{CameraModel, GeometryError, Pose2D, Pose3D, SkeletonTopology, TopologyError};
use crate::occlusion::OcclusionVector;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("line {line}: topology mismatch: {reason}")]
    TopologyMismatch { line: usize, reason: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Consecutive frames of one subject/action seen by one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    /// World-frame joints in meters.
    pub frames: Vec<Pose3D>,
    pub fps: f64,
    pub subject: String,
    pub action: String,
    pub camera_id: String,
    pub camera: CameraModel,
    /// Topology preset name.
    pub topology: String,
    /// Index of the first frame in the source recording.
    pub first_frame: usize,
    /// Detected or precomputed 2D keypoints in pixels, one per frame.
    pub joints2d: Option<Vec<Pose2D>>,
    /// Precomputed occlusion labels, one per frame.
    pub occ: Option<Vec<OcclusionVector>>,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Largest deviation of any bone length from its first-frame value.
    pub fn bone_length_drift(&self, topo: &SkeletonTopology) -> f64 {
        let Some(first) = self.frames.first() else {
            return 0.0;
        };
        let len = |p: &Pose3D, c: usize, q: usize| crate::geometry::norm3(crate::geometry::sub3(p.joints[c], p.joints[q]));
        let mut worst: f64 = 0.0;
        for (c, q) in topo.bones() {
            let l0 = len(first, c, q);
            for f in &self.frames {
                worst = worst.max((len(f, c, q) - l0).abs());
            }
        }
        worst
    }
}

/// Seeded partition at sequence granularity; `round(fraction·n)` sequences
/// go to training. Input order is kept within each side.
pub fn split_train_val(
    sequences: Vec<MotionSequence>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<MotionSequence>, Vec<MotionSequence>), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidConfig(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = sequences.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fraction * n as f64).round() as usize;
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (seq, t) in sequences.into_iter().zip(is_train) {
        if t {
            train.push(seq);
        } else {
            val.push(seq);
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy(n: usize) -> Vec<MotionSequence> {
        (0..n)
            .map(|i| MotionSequence {
                frames: vec![Pose3D::new(vec![[i as f64, 0.0, 0.0]])],
                fps: 50.0,
                subject: format!("S{i}"),
                action: "Walking".into(),
                camera_id: "C1".into(),
                camera: CameraModel::intrinsics_only(1000.0, 1000.0, 500.0, 500.0).unwrap(),
                topology: "h36m17".into(),
                first_frame: 0,
                joints2d: None,
                occ: None,
            })
            .collect()
    }

    #[test]
    fn single_sequence_lands_on_one_side() {
        let (t, v) = split_train_val(dummy(1), 0.5, 3).unwrap();
        assert_eq!(t.len() + v.len(), 1);
    }

    #[test]
    fn hundred_sequences_split_reproducibly() {
        for seed in 0..20 {
            let (t, v) = split_train_val(dummy(100), 0.5, seed).unwrap();
            assert!((40..=60).contains(&t.len()));
            let (t2, _) = split_train_val(dummy(100), 0.5, seed).unwrap();
            assert_eq!(t, t2);
            let mut all: Vec<String> = t.iter().chain(&v).map(|s| s.subject.clone()).collect();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 100);
        }
        let (a, _) = split_train_val(dummy(100), 0.5, 1).unwrap();
        let (b, _) = split_train_val(dummy(100), 0.5, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn fraction_must_be_open_interval() {
        assert!(split_train_val(dummy(3), 0.0, 0).is_err());
        assert!(split_train_val(dummy(3), 1.0, 0).is_err());
    }
}
