//! Pose error, the occlusion-aware training loss, and evaluation reports.

mod report;

pub use report::{build_report, method_table, subject_table, EvalReport, FrameError, ReportRow};

use thiserror::Error;

use crate::geometry::{norm3, sub3, Pose3D, SkeletonTopology};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self, MetricsError> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(lambda1) || !ok(lambda2) {
            return Err(MetricsError::InvalidWeights(format!(
                "weights must be finite and ≥ 0, got ({lambda1}, {lambda2})"
            )));
        }
        if lambda1 == 0.0 && lambda2 == 0.0 {
            return Err(MetricsError::InvalidWeights("both weights are zero".into()));
        }
        Ok(Self { lambda1, lambda2 })
    }
}

/// Root-relative error of every joint of one pose, in the input units.
pub fn joint_errors(pred: &Pose3D, gt: &Pose3D, root: usize) -> Vec<f64> {
    let (pr, gr) = (pred.joints[root], gt.joints[root]);
    pred.joints
        .iter()
        .zip(&gt.joints)
        .map(|(p, g)| norm3(sub3(sub3(*p, pr), sub3(*g, gr))))
        .collect()
}

/// Mean root-relative joint error of one pose pair, in millimeters
/// (poses in meters).
pub fn pose_error_mm(pred: &Pose3D, gt: &Pose3D, root: usize) -> f64 {
    let e = joint_errors(pred, gt, root);
    1000.0 * e.iter().sum::<f64>() / e.len() as f64
}

/// Mean per-joint position error in millimeters over a batch of poses in meters.
pub fn mpjpe(pred: &[Pose3D], gt: &[Pose3D], topo: &SkeletonTopology) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} predictions for {} targets",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let n = topo.joint_count;
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != n || g.len() != n {
            return Err(MetricsError::ShapeMismatch(format!(
                "poses with {} and {} joints for a {n}-joint topology",
                p.len(),
                g.len()
            )));
        }
        total += joint_errors(p, g, topo.root_index).iter().sum::<f64>();
    }
    Ok(1000.0 * total / (pred.len() * n) as f64)
}

/// Root-relative position loss on flat `[B·3N]` buffers (joint `j` at
/// `3j..3j+3` of each example), in the buffers' units, with its gradient
/// with respect to `pred`. The gradient of a zero-length error is zero.
pub fn position_loss(
    pred: &[f64],
    gt: &[f64],
    joints: usize,
    root: usize,
) -> Result<(f64, Vec<f64>), MetricsError> {
    let stride = 3 * joints;
    if pred.len() != gt.len() || joints == 0 || pred.len() % stride != 0 || root >= joints {
        return Err(MetricsError::ShapeMismatch(format!(
            "pred {} / gt {} values for {joints} joints",
            pred.len(),
            gt.len()
        )));
    }
    let batch = pred.len() / stride;
    if batch == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    let denom = (batch * joints) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for b in 0..batch {
        let p = &pred[b * stride..][..stride];
        let g = &gt[b * stride..][..stride];
        let gr = &mut grad[b * stride..][..stride];
        for j in 0..joints {
            let d: [f64; 3] = std::array::from_fn(|k| {
                (p[3 * j + k] - p[3 * root + k]) - (g[3 * j + k] - g[3 * root + k])
            });
            let norm = norm3(d);
            loss += norm;
            if norm > 0.0 {
                for k in 0..3 {
                    let u = d[k] / norm / denom;
                    gr[3 * j + k] += u;
                    gr[3 * root + k] -= u;
                }
            }
        }
    }
    Ok((loss / denom, grad))
}

/// Mean absolute difference between predicted probabilities and binary
/// labels, with gradient `sign(õ − o)/count` (zero at equality).
pub fn occlusion_loss(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} occlusion predictions for {} labels",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let m = pred.len() as f64;
    let loss = pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / m;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            if p > g {
                1.0 / m
            } else if p < g {
                -1.0 / m
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    /// Position term in meters.
    pub position: f64,
    pub occlusion: f64,
    pub grad_pose: Vec<f64>,
    pub grad_occ: Vec<f64>,
}

/// `λ₁·L + λ₂·L_occ` with gradients for both heads.
pub fn combined_loss(
    pred3d: &[f64],
    gt3d: &[f64],
    occ_pred: &[f64],
    occ_gt: &[f64],
    joints: usize,
    root: usize,
    w: LossWeights,
) -> Result<CombinedLoss, MetricsError> {
    let (position, mut grad_pose) = position_loss(pred3d, gt3d, joints, root)?;
    let (occlusion, mut grad_occ) = occlusion_loss(occ_pred, occ_gt)?;
    grad_pose.iter_mut().for_each(|g| *g *= w.lambda1);
    grad_occ.iter_mut().for_each(|g| *g *= w.lambda2);
    Ok(CombinedLoss {
        total: w.lambda1 * position + w.lambda2 * occlusion,
        position,
        occlusion,
        grad_pose,
        grad_occ,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_joint_topology() -> SkeletonTopology {
        let mut t = SkeletonTopology::preset("humaneva15").unwrap();
        t.joint_count = 2;
        t
    }

    #[test]
    fn mpjpe_examples() {
        let topo = two_joint_topology();
        let gt = vec![Pose3D::new(vec![[0.0; 3], [1.0, 0.0, 0.0]])];
        assert_eq!(mpjpe(&gt, &gt, &topo).unwrap(), 0.0);
        let moved = vec![gt[0].translated([0.3, -2.0, 5.0])];
        assert!(mpjpe(&moved, &gt, &topo).unwrap() < 1e-9);
        let pred = vec![Pose3D::new(vec![[0.0; 3], [1.0, 0.0, 0.003]])];
        assert!((mpjpe(&pred, &gt, &topo).unwrap() - 1.5).abs() < 1e-9);
        assert!(matches!(
            mpjpe(&pred, &[], &topo),
            Err(MetricsError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn occlusion_loss_examples() {
        assert_eq!(occlusion_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap().0, 0.0);
        assert_eq!(occlusion_loss(&[0.5; 4], &[1.0, 0.0, 0.0, 1.0]).unwrap().0, 0.5);
        let (l, g) = occlusion_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap();
        assert!((l - 0.15).abs() < 1e-15);
        assert_eq!(g, vec![-0.5, 0.5]);
    }

    #[test]
    fn zero_occlusion_weight_leaves_position_term() {
        let pred = [0.0, 0.0, 0.0, 1.0, 0.2, 0.0];
        let gt = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let w = LossWeights::new(2.0, 0.0).unwrap();
        let c = combined_loss(&pred, &gt, &[0.3], &[1.0], 2, 0, w).unwrap();
        let (l, _) = position_loss(&pred, &gt, 2, 0).unwrap();
        assert_eq!(c.total, 2.0 * l);
        assert!(c.grad_occ.iter().all(|&g| g == 0.0));
        let perfect = combined_loss(&gt, &gt, &[1.0], &[1.0], 2, 0, LossWeights::default()).unwrap();
        assert_eq!(perfect.total, 0.0);
        assert!(LossWeights::new(0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (joints, batch) = (4, 3);
        let pred: Vec<f64> = (0..batch * joints * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gt: Vec<f64> = (0..pred.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let occ: Vec<f64> = (0..6).map(|_| rng.gen_range(0.05..0.95)).collect();
        let occ_gt = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let w = LossWeights::new(0.7, 1.3).unwrap();
        let f = |p: &[f64], o: &[f64]| combined_loss(p, &gt, o, &occ_gt, joints, 1, w).unwrap().total;
        let c = combined_loss(&pred, &gt, &occ, &occ_gt, joints, 1, w).unwrap();
        let h = 1e-5;
        for i in 0..pred.len() {
            let (mut a, mut b) = (pred.clone(), pred.clone());
            a[i] += h;
            b[i] -= h;
            let num = (f(&a, &occ) - f(&b, &occ)) / (2.0 * h);
            let rel = (num - c.grad_pose[i]).abs() / num.abs().max(c.grad_pose[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "pose {i}: {num} vs {}", c.grad_pose[i]);
        }
        for i in 0..occ.len() {
            let (mut a, mut b) = (occ.clone(), occ.clone());
            a[i] += h;
            b[i] -= h;
            let num = (f(&pred, &a) - f(&pred, &b)) / (2.0 * h);
            assert!((num - c.grad_occ[i]).abs() < 1e-4 * num.abs());
        }
    }

    #[test]
    fn flat_loss_agrees_with_mpjpe() {
        let topo = SkeletonTopology::preset("h36m17").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mk = |rng: &mut ChaCha8Rng| {
            Pose3D::new((0..17).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect())
        };
        let p: Vec<Pose3D> = (0..5).map(|_| mk(&mut rng)).collect();
        let g: Vec<Pose3D> = (0..5).map(|_| mk(&mut rng)).collect();
        let flat = |v: &[Pose3D]| v.iter().flat_map(|p| p.joints.iter().flatten().copied()).collect::<Vec<_>>();
        let (l, _) = position_loss(&flat(&p), &flat(&g), 17, 0).unwrap();
        assert!((1000.0 * l - mpjpe(&p, &g, &topo).unwrap()).abs() < 1e-9);
    }
}
