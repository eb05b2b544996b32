//! One forward/backward pass of the network against the combined loss.

use std::collections::BTreeMap;

use rand::Rng;

use super::tape::{BatchStats, Tape};
use super::tcn::{build_forward, ParameterStore, TcnConfig};
use super::{Mode, NnError, Tensor};
use crate::metrics::{combined_loss, CombinedLoss, LossWeights};

/// A stacked batch of training windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `(B, 2N, T)` normalized keypoints.
    pub seq2d: Tensor,
    /// `(B, N, T)` input occlusion labels.
    pub occ_in: Tensor,
    /// `B·3N` root-centered center-frame targets in meters.
    pub target3d: Vec<f64>,
    /// `B·N·T_out` occlusion targets, laid out like the occlusion head.
    pub occ_target: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.seq2d.shape.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct StepOutput {
    pub loss: CombinedLoss,
    /// Gradients of every trainable parameter.
    pub grads: BTreeMap<String, Vec<f64>>,
    pub bn_stats: Vec<(String, BatchStats)>,
    /// `B·3N` predictions.
    pub pose: Vec<f64>,
    /// `B·N·T_out` occlusion probabilities.
    pub occ_prob: Vec<f64>,
}

pub fn loss_and_grads<R: Rng>(
    cfg: &TcnConfig,
    params: &ParameterStore,
    batch: &Batch,
    weights: LossWeights,
    root: usize,
    mode: Mode,
    rng: &mut R,
) -> Result<StepOutput, NnError> {
    let mut tape = Tape::new();
    let f = build_forward(
        &mut tape,
        cfg,
        params,
        batch.seq2d.clone(),
        batch.occ_in.clone(),
        mode,
        rng,
    )?;
    let pose = tape.value(f.pose).data.clone();
    let occ_prob = tape.value(f.occ_prob).data.clone();
    let loss = combined_loss(
        &pose,
        &batch.target3d,
        &occ_prob,
        &batch.occ_target,
        cfg.joints,
        root,
        weights,
    )?;
    let g = tape.backward(&[
        (f.pose, loss.grad_pose.clone()),
        (f.occ_prob, loss.grad_occ.clone()),
    ])?;
    let grads = tape
        .param_grads(&g)
        .into_iter()
        .filter(|(k, _)| ParameterStore::is_trainable(k))
        .collect();
    Ok(StepOutput {
        loss,
        grads,
        bn_stats: f.bn_stats,
        pose,
        occ_prob,
    })
}
