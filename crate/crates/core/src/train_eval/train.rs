use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::windows::{stack, Example};
use super::TrainError;
use crate::geometry::SkeletonTopology;
use crate::metrics::{build_report, EvalReport, FrameError, LossWeights};
use crate::nn::tcn::{build_forward, BN_MOMENTUM};
use crate::nn::{checkpoint, init_params, loss_and_grads, Mode, ParameterStore, Sgd, Tape, TcnConfig, Variant};
use crate::occlusion::{ClusterConfig, Labeler};

/// Windows per eval-mode forward pass.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub loss_weights: LossWeights,
    pub labeler: Labeler,
    pub tcn: TcnConfig,
    pub seed: u64,
    /// Where the best-validation parameters are written, if anywhere.
    pub checkpoint_path: Option<PathBuf>,
    pub topology: String,
    pub root_index: usize,
}

impl TrainConfig {
    pub fn new(topo: &SkeletonTopology, variant: Variant) -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            momentum: 0.9,
            lr_decay: 0.95,
            loss_weights: LossWeights::default(),
            labeler: Labeler::Clustered(ClusterConfig::default()),
            tcn: TcnConfig::desk(topo.joint_count, variant),
            seed: 0,
            checkpoint_path: None,
            topology: topo.name.clone(),
            root_index: topo.root_index,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be ≥ 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be ≥ 0, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(TrainError::Config(format!("lr_decay must be > 0, got {}", self.lr_decay)));
        }
        if self.root_index >= self.tcn.joints {
            return Err(TrainError::Config("root index outside the skeleton".into()));
        }
        self.tcn.validate()?;
        Ok(())
    }

    /// Extra `key=value` lines stored next to checkpoints.
    pub fn sidecar(&self) -> Vec<(&'static str, String)> {
        vec![
            ("topology", self.topology.clone()),
            ("root_index", self.root_index.to_string()),
            ("labeler", self.labeler.name().to_string()),
            ("lambda1", self.loss_weights.lambda1.to_string()),
            ("lambda2", self.loss_weights.lambda2.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean combined loss over the epoch's training batches.
    pub train_loss: f64,
    /// Eval-mode MPJPE over the whole training set after the epoch.
    pub train_mpjpe_mm: f64,
    pub val_mpjpe_mm: f64,
    pub val_occ_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_mpjpe_mm,val_occ_loss,lr\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_mpjpe_mm, r.val_occ_loss, r.lr
            );
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub params: ParameterStore,
    /// Parameters of the epoch with the lowest validation MPJPE.
    pub best_params: ParameterStore,
    pub best_epoch: usize,
    pub log: TrainLog,
}

/// Momentum-SGD training with per-epoch validation.
///
/// With `lr = 0` nothing is learned: neither weights nor batchnorm running
/// statistics change.
pub fn train(
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let tcn = &cfg.tcn;
    let mut params = init_params(tcn, cfg.seed)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let learning = cfg.lr > 0.0;

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32 - 1);
        opt.lr = lr;
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let examples: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch = stack(&examples, tcn);
            let out = loss_and_grads(
                tcn,
                &params,
                &batch,
                cfg.loss_weights,
                cfg.root_index,
                Mode::Train,
                &mut dropout_rng,
            )?;
            let bad = out
                .grads
                .iter()
                .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
                .map(|(n, _)| n.clone())
                .or_else(|| (!out.loss.total.is_finite()).then(|| "loss".to_string()));
            if let Some(param) = bad {
                return Err(TrainError::NonFiniteGradient {
                    epoch,
                    step: step + 1,
                    param,
                });
            }
            loss_sum += out.loss.total * examples.len() as f64;
            if learning {
                params.update_running_stats(&out.bn_stats, BN_MOMENTUM)?;
                params.set_grads(out.grads)?;
                opt.step(&mut params)?;
            }
        }
        let train_eval = evaluate(train_set, &params, tcn, cfg.root_index)?;
        let val = evaluate(val_set, &params, tcn, cfg.root_index)?;
        log.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_mpjpe_mm: train_eval.mpjpe_mm,
            val_mpjpe_mm: val.mpjpe_mm,
            val_occ_loss: val.occ_loss,
            lr,
        });
        if best.as_ref().map_or(true, |(b, _, _)| val.mpjpe_mm < *b) {
            if let Some(path) = &cfg.checkpoint_path {
                checkpoint::save(path, &params, tcn, &cfg.sidecar())?;
            }
            best = Some((val.mpjpe_mm, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        best_params,
        best_epoch,
        log,
    })
}

pub struct EvalOutput {
    pub report: EvalReport,
    /// Frame-weighted MPJPE, equal to `report.overall_mm`.
    pub mpjpe_mm: f64,
    /// Mean absolute occlusion error over every predicted entry.
    pub occ_loss: f64,
}

/// Eval-mode forward over every window. Chunks run in parallel; results
/// are reduced in window order.
pub fn evaluate(
    examples: &[Example],
    params: &ParameterStore,
    tcn: &TcnConfig,
    root: usize,
) -> Result<EvalOutput, TrainError> {
    if examples.is_empty() {
        return Err(crate::metrics::MetricsError::EmptyEvaluation.into());
    }
    let n = tcn.joints;
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = examples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<(Vec<f64>, Vec<f64>), TrainError> {
            let refs: Vec<&Example> = chunk.iter().collect();
            let batch = stack(&refs, tcn);
            let mut tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let f = build_forward(&mut tape, tcn, params, batch.seq2d, batch.occ_in, Mode::Eval, &mut rng)?;
            let pose = &tape.value(f.pose).data;
            let occ = &tape.value(f.occ_prob).data;
            let errors = chunk
                .iter()
                .enumerate()
                .map(|(i, ex)| frame_error_mm(&pose[i * 3 * n..(i + 1) * 3 * n], &ex.target3d, n, root))
                .collect();
            let occ_abs = occ
                .iter()
                .zip(&batch.occ_target)
                .map(|(p, g)| (p - g).abs())
                .collect();
            Ok((errors, occ_abs))
        })
        .collect::<Result<_, _>>()?;
    let mut frames = Vec::with_capacity(examples.len());
    let (mut occ_sum, mut occ_count) = (0.0, 0usize);
    for ((errors, occ_abs), chunk) in chunks.iter().zip(examples.chunks(EVAL_CHUNK)) {
        for (e, ex) in errors.iter().zip(chunk) {
            frames.push(FrameError {
                subject: ex.subject.clone(),
                action: ex.action.clone(),
                error_mm: *e,
            });
        }
        occ_sum += occ_abs.iter().sum::<f64>();
        occ_count += occ_abs.len();
    }
    let report = build_report(&frames)?;
    Ok(EvalOutput {
        mpjpe_mm: report.overall_mm,
        report,
        occ_loss: occ_sum / occ_count as f64,
    })
}

fn frame_error_mm(pred: &[f64], target: &[f64], n: usize, root: usize) -> f64 {
    let r = &pred[3 * root..3 * root + 3];
    let g = &target[3 * root..3 * root + 3];
    let mut sum = 0.0;
    for j in 0..n {
        let d: [f64; 3] = std::array::from_fn(|k| (pred[3 * j + k] - r[k]) - (target[3 * j + k] - g[k]));
        sum += crate::geometry::norm3(d);
    }
    1000.0 * sum / n as f64
}
