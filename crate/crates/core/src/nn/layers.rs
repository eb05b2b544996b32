//! Tensor-in, tensor-out versions of the primitive ops, for callers that
//! do not need gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{conv1d_forward, Tape};
use super::{Mode, NnError, Tensor};

pub fn conv1d_temporal(
    x: &Tensor,
    k: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
) -> Result<Tensor, NnError> {
    conv1d_forward(x, k, bias, stride)
}

/// Eval mode reads `running_mean`/`running_var`; train mode uses batch statistics.
pub fn batchnorm_1d(
    x: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    running_mean: &[f64],
    running_var: &[f64],
    mode: Mode,
) -> Result<Tensor, NnError> {
    let mut tape = Tape::new();
    let (xv, sv, hv) = (
        tape.input(x.clone()),
        tape.input(scale.clone()),
        tape.input(shift.clone()),
    );
    let (y, _) = tape.batchnorm(xv, sv, hv, (running_mean, running_var), mode)?;
    Ok(tape.value(y).clone())
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.grad = None;
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.grad = None;
    out.data
        .iter_mut()
        .for_each(|v| *v = super::tape::sigmoid(*v));
    out
}

pub fn dropout(x: &Tensor, p: f64, seed: u64, mode: Mode) -> Result<Tensor, NnError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::Config(format!("dropout p must be in [0, 1), got {p}")));
    }
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let y = tape.dropout(xv, p, &mut ChaCha8Rng::seed_from_u64(seed), mode);
    Ok(tape.value(y).clone())
}

/// Keep-mask over keypoint channels: joint `j` owns channels `2j` and `2j+1`,
/// and both are zeroed at every frame where its probability exceeds `tau`.
/// A single-frame probability tensor applies to all frames.
pub fn gate_mask(keypoints: &Tensor, occ_prob: &Tensor, tau: f64) -> Result<Vec<f64>, NnError> {
    let (b, c2, t) = keypoints.bct()?;
    let (pb, n, pt) = occ_prob.bct()?;
    if pb != b || c2 != 2 * n || (pt != t && pt != 1) {
        return Err(NnError::ShapeMismatch(format!(
            "keypoints {:?} vs occlusion probabilities {:?}",
            keypoints.shape, occ_prob.shape
        )));
    }
    let mut mask = vec![1.0; keypoints.numel()];
    for bi in 0..b {
        for j in 0..n {
            let probs = &occ_prob.data[(bi * n + j) * pt..][..pt];
            for tt in 0..t {
                let p = if pt == 1 { probs[0] } else { probs[tt] };
                if p > tau {
                    for c in [2 * j, 2 * j + 1] {
                        mask[(bi * c2 + c) * t + tt] = 0.0;
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// Returns `(gated keypoints, sigmoid(occ_logits))`.
pub fn occlusion_gate(
    keypoints: &Tensor,
    occ_logits: &Tensor,
    tau: f64,
) -> Result<(Tensor, Tensor), NnError> {
    let prob = sigmoid(occ_logits);
    let mask = gate_mask(keypoints, &prob, tau)?;
    let mut gated = keypoints.clone();
    gated.grad = None;
    gated.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
    Ok((gated, prob))
}
