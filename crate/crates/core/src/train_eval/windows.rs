use super::TrainError;
use crate::data::MotionSequence;
use crate::geometry::{project, root_center_at, Frame, Pose2D, SkeletonTopology};
use crate::nn::{Batch, TcnConfig, Tensor, Variant};
use crate::occlusion::{boxed_man_occlusions, cluster_occlusions, Labeler, OcclusionVector};

/// One receptive-field window ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// `2N × T`, channel `2j + c` holds normalized coordinate `c` of joint `j`.
    pub seq2d: Vec<f64>,
    /// `N × T` input occlusion labels.
    pub occ_in: Vec<f64>,
    /// `3N` root-centered camera-frame center-frame pose in meters.
    pub target3d: Vec<f64>,
    /// `N × T_out` occlusion targets: the center frame (OneVector) or the
    /// whole window (ManyVectors).
    pub occ_target: Vec<f64>,
    pub subject: String,
    pub action: String,
    /// Source frame index of the window center.
    pub frame: usize,
}

/// 2D keypoints in pixels: the stored detections if any, else projections.
pub fn keypoints_2d(seq: &MotionSequence) -> Result<Vec<Pose2D>, TrainError> {
    if let Some(k) = &seq.joints2d {
        return Ok(k.clone());
    }
    seq.frames
        .iter()
        .map(|f| project(f, &seq.camera, Frame::World).map_err(TrainError::from))
        .collect()
}

/// Per-frame occlusion labels. Clustered labels use camera-frame 3D
/// joints; boxed-man labels use the 2D keypoints.
pub fn label_sequence(
    seq: &MotionSequence,
    labeler: &Labeler,
    topo: &SkeletonTopology,
) -> Result<Vec<OcclusionVector>, TrainError> {
    match labeler {
        Labeler::Clustered(cfg) => {
            cfg.validate()?;
            Ok(seq
                .frames
                .iter()
                .map(|f| cluster_occlusions(&f.to_camera(&seq.camera), cfg))
                .collect())
        }
        Labeler::BoxedMan(cfg) => keypoints_2d(seq)?
            .iter()
            .map(|p| boxed_man_occlusions(p, topo, cfg).map_err(TrainError::from))
            .collect(),
        Labeler::Precomputed => seq.occ.clone().ok_or(TrainError::MissingLabels),
    }
}

/// Every full window of `cfg.receptive_field()` consecutive frames, stepping
/// by `stride` frames.
pub fn make_windows(
    seq: &MotionSequence,
    labeler: &Labeler,
    topo: &SkeletonTopology,
    cfg: &TcnConfig,
    stride: usize,
) -> Result<Vec<Example>, TrainError> {
    let rf = cfg.receptive_field();
    if seq.len() < rf {
        return Err(TrainError::SequenceTooShort {
            len: seq.len(),
            needed: rf,
        });
    }
    if seq.frames[0].len() != cfg.joints || topo.joint_count != cfg.joints {
        return Err(TrainError::Config(format!(
            "sequence has {} joints, topology {} and network {}",
            seq.frames[0].len(),
            topo.joint_count,
            cfg.joints
        )));
    }
    let n = cfg.joints;
    let kp = keypoints_2d(seq)?;
    let labels = label_sequence(seq, labeler, topo)?;
    let cam = &seq.camera;
    let half = rf / 2;
    let mut out = Vec::with_capacity((seq.len() - rf) / stride.max(1) + 1);
    for start in (0..=seq.len() - rf).step_by(stride.max(1)) {
        let mut seq2d = vec![0.0; 2 * n * rf];
        let mut occ_in = vec![0.0; n * rf];
        for k in 0..rf {
            let f = start + k;
            for j in 0..n {
                let [u, v] = cam.normalize_pixel(kp[f].joints[j]);
                seq2d[(2 * j) * rf + k] = u;
                seq2d[(2 * j + 1) * rf + k] = v;
                occ_in[j * rf + k] = labels[f].labels()[j] as f64;
            }
        }
        let center = start + half;
        let cam3d = root_center_at(&seq.frames[center].to_camera(cam), topo.root_index);
        let occ_target = match cfg.variant {
            Variant::OneVector => labels[center].to_f64(),
            Variant::ManyVectors => occ_in.clone(),
        };
        out.push(Example {
            seq2d,
            occ_in,
            target3d: cam3d.joints.iter().flatten().copied().collect(),
            occ_target,
            subject: seq.subject.clone(),
            action: seq.action.clone(),
            frame: seq.first_frame + center,
        });
    }
    Ok(out)
}

/// Windows of every sequence, in sequence order.
pub fn make_dataset(
    sequences: &[MotionSequence],
    labeler: &Labeler,
    topo: &SkeletonTopology,
    cfg: &TcnConfig,
    stride: usize,
) -> Result<Vec<Example>, TrainError> {
    let rf = cfg.receptive_field();
    let mut out = Vec::new();
    for seq in sequences.iter().filter(|s| s.len() >= rf) {
        out.extend(make_windows(seq, labeler, topo, cfg, stride)?);
    }
    Ok(out)
}

/// Stacks examples into network tensors.
pub fn stack(examples: &[&Example], cfg: &TcnConfig) -> Batch {
    let (n, t, b) = (cfg.joints, cfg.receptive_field(), examples.len());
    let cat = |f: fn(&Example) -> &Vec<f64>| -> Vec<f64> {
        examples.iter().flat_map(|e| f(e).iter().copied()).collect()
    };
    Batch {
        seq2d: Tensor::new(vec![b, 2 * n, t], cat(|e| &e.seq2d)).expect("window size"),
        occ_in: Tensor::new(vec![b, n, t], cat(|e| &e.occ_in)).expect("window size"),
        target3d: cat(|e| &e.target3d),
        occ_target: cat(|e| &e.occ_target),
    }
}
