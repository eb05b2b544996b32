//! Occlusion-aware temporal convolutional lifting network.
//!
//! Layout for `N` joints, kernel `W`, `C` channels and `B` blocks:
//!
//! ```text
//! occ_in [N×T] ─ occlusion convs ─ sigmoid ─► occ_prob ─┐
//! seq2d [2N×T] ─────────────────────────────────────── gate ─ conv W (2N→C) ─ BN ─ ReLU ─ drop
//!   ─ B × [conv W ─ BN ─ ReLU ─ drop ─ conv 1 ─ BN ─ ReLU ─ drop ─ + center-cropped skip]
//!   ─ conv 1 (C→3N) ─► pose3d [3N]
//! ```
//!
//! Each kernel-`W` conv removes `W − 1` frames, so `T = (W−1)(1+B)+1` input
//! frames collapse to the single center frame.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::gate_mask;
use super::tape::{BatchStats, Tape, Var};
use super::{Mode, NnError, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Occlusion branch down-convolves to the center frame's vector.
    OneVector,
    /// Occlusion branch keeps one vector per input frame.
    ManyVectors,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::OneVector => "one-vector",
            Variant::ManyVectors => "many-vectors",
        })
    }
}

impl FromStr for Variant {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "one-vector" | "onevector" | "one" => Ok(Variant::OneVector),
            "many-vectors" | "manyvectors" | "many" => Ok(Variant::ManyVectors),
            other => Err(NnError::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnConfig {
    pub joints: usize,
    pub kernel_w: usize,
    pub channels_c: usize,
    pub blocks_b: usize,
    pub dropout_p: f64,
    pub gate_threshold_tau: f64,
    pub variant: Variant,
}

impl TcnConfig {
    /// Small network that trains in minutes on a CPU.
    pub fn desk(joints: usize, variant: Variant) -> Self {
        Self {
            joints,
            kernel_w: 3,
            channels_c: 64,
            blocks_b: 2,
            dropout_p: 0.25,
            gate_threshold_tau: 0.5,
            variant,
        }
    }

    pub fn full_scale(joints: usize, variant: Variant) -> Self {
        Self {
            channels_c: 1024,
            ..Self::desk(joints, variant)
        }
    }

    pub fn receptive_field(&self) -> usize {
        (self.kernel_w - 1) * (1 + self.blocks_b) + 1
    }

    /// Frames in the occlusion head's output.
    pub fn occ_frames(&self) -> usize {
        match self.variant {
            Variant::OneVector => 1,
            Variant::ManyVectors => self.receptive_field(),
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.joints == 0 {
            return bad("joints must be ≥ 1".into());
        }
        if self.kernel_w == 0 || self.kernel_w % 2 == 0 {
            return bad(format!("kernel_w must be odd and ≥ 1, got {}", self.kernel_w));
        }
        if self.channels_c == 0 {
            return bad("channels_c must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        if !(self.gate_threshold_tau > 0.0 && self.gate_threshold_tau < 1.0) {
            return bad(format!(
                "gate_threshold_tau must be in (0, 1), got {}",
                self.gate_threshold_tau
            ));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "joints={}\nkernel_w={}\nchannels_c={}\nblocks_b={}\ndropout_p={}\ngate_threshold_tau={}\nvariant={}\nreceptive_field={}\n",
            self.joints,
            self.kernel_w,
            self.channels_c,
            self.blocks_b,
            self.dropout_p,
            self.gate_threshold_tau,
            self.variant,
            self.receptive_field()
        )
    }

    /// Parses `key=value` lines; unknown keys are ignored so callers can
    /// store extra settings in the same file.
    pub fn from_kv(text: &str) -> Result<Self, NnError> {
        let map = parse_kv(text);
        let get = |k: &str| {
            map.get(k)
                .ok_or_else(|| NnError::Config(format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<usize, NnError> {
            get(k)?
                .parse()
                .map_err(|_| NnError::Config(format!("bad integer for {k}")))
        };
        let float = |k: &str| -> Result<f64, NnError> {
            get(k)?
                .parse()
                .map_err(|_| NnError::Config(format!("bad number for {k}")))
        };
        let cfg = Self {
            joints: num("joints")?,
            kernel_w: num("kernel_w")?,
            channels_c: num("channels_c")?,
            blocks_b: num("blocks_b")?,
            dropout_p: float("dropout_p")?,
            gate_threshold_tau: float("gate_threshold_tau")?,
            variant: get("variant")?.parse()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn occ_layers(&self) -> usize {
        match self.variant {
            Variant::OneVector => 1 + self.blocks_b,
            Variant::ManyVectors => 1,
        }
    }
}

pub fn parse_kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| {
            let l = l.trim();
            if l.is_empty() || l.starts_with('#') {
                return None;
            }
            let (k, v) = l.split_once('=')?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Named network tensors in lexicographic order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.tensors
            .get(name)
            .ok_or_else(|| NnError::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NnError> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| NnError::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Running batchnorm statistics are state, not learnable weights.
    pub fn is_trainable(name: &str) -> bool {
        !(name.ends_with(".running_mean") || name.ends_with(".running_var"))
    }

    pub fn trainable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(k, _)| Self::is_trainable(k))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Stores gradients in the matching tensors' gradient slots.
    pub fn set_grads(&mut self, grads: BTreeMap<String, Vec<f64>>) -> Result<(), NnError> {
        for (name, g) in grads {
            let t = self.get_mut(&name)?;
            if g.len() != t.numel() {
                return Err(NnError::ShapeMismatch(format!(
                    "gradient for {name} has {} values, parameter has {}",
                    g.len(),
                    t.numel()
                )));
            }
            t.grad = Some(g);
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.tensors.values_mut().for_each(|t| t.grad = None);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// `running ← (1 − m)·running + m·batch` for every recorded batchnorm.
    pub fn update_running_stats(
        &mut self,
        stats: &[(String, BatchStats)],
        momentum: f64,
    ) -> Result<(), NnError> {
        for (prefix, s) in stats {
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let t = self.get_mut(&format!("{prefix}.{suffix}"))?;
                for (r, b) in t.data.iter_mut().zip(batch) {
                    *r = (1.0 - momentum) * *r + momentum * b;
                }
            }
        }
        Ok(())
    }
}

/// Kaiming-uniform weights from a seeded generator; zero biases, unit BN scale.
pub fn init_params(cfg: &TcnConfig, seed: u64) -> Result<ParameterStore, NnError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let (n, c, w) = (cfg.joints, cfg.channels_c, cfg.kernel_w);
    let mut conv = |store: &mut ParameterStore, name: &str, cout, cin, kw, bias: bool| {
        let bound = (6.0 / (cin * kw) as f64).sqrt();
        let data = (0..cout * cin * kw)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        store.insert(
            format!("{name}.weight"),
            Tensor::new(vec![cout, cin, kw], data).expect("sized"),
        );
        if bias {
            store.insert(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        }
    };
    let occ_w = match cfg.variant {
        Variant::OneVector => w,
        Variant::ManyVectors => 1,
    };
    for i in 0..cfg.occ_layers() {
        conv(&mut store, &format!("occ.conv{i}"), n, n, occ_w, true);
    }
    conv(&mut store, "in.conv", c, 2 * n, w, false);
    for b in 0..cfg.blocks_b {
        conv(&mut store, &format!("block{b}.conv_w"), c, c, w, false);
        conv(&mut store, &format!("block{b}.conv_1"), c, c, 1, false);
    }
    conv(&mut store, "out.conv", 3 * n, c, 1, true);
    let mut bn_names = vec!["in.bn".to_string()];
    for b in 0..cfg.blocks_b {
        bn_names.push(format!("block{b}.bn_w"));
        bn_names.push(format!("block{b}.bn_1"));
    }
    for name in bn_names {
        store.insert(format!("{name}.scale"), Tensor::filled(vec![c], 1.0));
        store.insert(format!("{name}.shift"), Tensor::zeros(vec![c]));
        store.insert(format!("{name}.running_mean"), Tensor::zeros(vec![c]));
        store.insert(format!("{name}.running_var"), Tensor::filled(vec![c], 1.0));
    }
    Ok(store)
}

/// Handles into a recorded forward pass.
pub struct Forward {
    /// `(B, 3N, 1)`, channel `3j + k` is coordinate `k` of joint `j`.
    pub pose: Var,
    /// `(B, N, T_out)` occlusion probabilities.
    pub occ_prob: Var,
    /// Batch statistics of each batchnorm (train mode only), keyed by prefix.
    pub bn_stats: Vec<(String, BatchStats)>,
}

struct Builder<'a, R> {
    tape: &'a mut Tape,
    params: &'a ParameterStore,
    mode: Mode,
    rng: &'a mut R,
    dropout_p: f64,
    bn_stats: Vec<(String, BatchStats)>,
}

impl<R: Rng> Builder<'_, R> {
    fn param(&mut self, name: &str) -> Result<Var, NnError> {
        let t = self.params.get(name)?.clone();
        Ok(self.tape.param(name, Tensor { grad: None, ..t }))
    }

    fn conv(&mut self, x: Var, name: &str, bias: bool) -> Result<Var, NnError> {
        let k = self.param(&format!("{name}.weight"))?;
        let b = if bias {
            Some(self.param(&format!("{name}.bias"))?)
        } else {
            None
        };
        self.tape.conv1d(x, k, b, 1)
    }

    /// conv → BN → ReLU → dropout
    fn unit(&mut self, x: Var, conv: &str, bn: &str) -> Result<Var, NnError> {
        let h = self.conv(x, conv, false)?;
        let scale = self.param(&format!("{bn}.scale"))?;
        let shift = self.param(&format!("{bn}.shift"))?;
        let rm = &self.params.get(&format!("{bn}.running_mean"))?.data;
        let rv = &self.params.get(&format!("{bn}.running_var"))?.data;
        let (h, stats) = self
            .tape
            .batchnorm(h, scale, shift, (rm, rv), self.mode)?;
        if let Some(s) = stats {
            self.bn_stats.push((bn.to_string(), s));
        }
        let h = self.tape.relu(h);
        Ok(self
            .tape
            .dropout(h, self.dropout_p, &mut *self.rng, self.mode))
    }
}

/// Records the network on `tape`.
///
/// `seq2d` is `(B, 2N, T)` with joint `j` in channels `2j, 2j+1`; `occ_in`
/// is `(B, N, T)`. Rank-2 inputs are treated as a batch of one.
pub fn build_forward<R: Rng>(
    tape: &mut Tape,
    cfg: &TcnConfig,
    params: &ParameterStore,
    seq2d: Tensor,
    occ_in: Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<Forward, NnError> {
    cfg.validate()?;
    let (b, c2, t) = seq2d.bct()?;
    let (ob, on, ot) = occ_in.bct()?;
    let rf = cfg.receptive_field();
    if t != rf {
        return Err(NnError::Config(format!(
            "window has {t} frames, network receptive field is {rf}"
        )));
    }
    if c2 != 2 * cfg.joints || (ob, on, ot) != (b, cfg.joints, t) {
        return Err(NnError::ShapeMismatch(format!(
            "seq2d {:?} / occ_in {:?} for {} joints",
            seq2d.shape, occ_in.shape, cfg.joints
        )));
    }
    let seq2d = seq2d.reshaped(vec![b, c2, t])?;
    let occ_in = occ_in.reshaped(vec![b, on, t])?;
    let mut bld = Builder {
        tape,
        params,
        mode,
        rng,
        dropout_p: cfg.dropout_p,
        bn_stats: Vec::new(),
    };
    let x = bld.tape.input(seq2d);
    let mut o = bld.tape.input(occ_in);
    for i in 0..cfg.occ_layers() {
        o = bld.conv(o, &format!("occ.conv{i}"), true)?;
    }
    let occ_prob = bld.tape.sigmoid(o);
    let mask = gate_mask(
        bld.tape.value(x),
        bld.tape.value(occ_prob),
        cfg.gate_threshold_tau,
    )?;
    let gated = bld.tape.mask_mul(x, mask);

    let mut h = bld.unit(gated, "in.conv", "in.bn")?;
    let half = (cfg.kernel_w - 1) / 2;
    for blk in 0..cfg.blocks_b {
        let len = bld.tape.value(h).shape[2] - (cfg.kernel_w - 1);
        let skip = bld.tape.crop_time(h, half, len)?;
        let y = bld.unit(h, &format!("block{blk}.conv_w"), &format!("block{blk}.bn_w"))?;
        let y = bld.unit(y, &format!("block{blk}.conv_1"), &format!("block{blk}.bn_1"))?;
        h = bld.tape.add(skip, y)?;
    }
    let pose = bld.conv(h, "out.conv", true)?;
    Ok(Forward {
        pose,
        occ_prob,
        bn_stats: bld.bn_stats,
    })
}

/// Single forward pass returning `(pose3d (B, 3N), occ_pred (B, N, T_out))`.
/// The dropout stream is seeded by `seed` (ignored in eval mode).
pub fn tcn_forward(
    seq2d: &Tensor,
    occ_in: &Tensor,
    cfg: &TcnConfig,
    params: &ParameterStore,
    mode: Mode,
    seed: u64,
) -> Result<(Tensor, Tensor), NnError> {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = build_forward(
        &mut tape,
        cfg,
        params,
        seq2d.clone(),
        occ_in.clone(),
        mode,
        &mut rng,
    )?;
    let pose = tape.value(f.pose).clone();
    let b = pose.shape[0];
    let pose = pose.reshaped(vec![b, 3 * cfg.joints])?;
    Ok((pose, tape.value(f.occ_prob).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(cfg: &TcnConfig, b: usize, seed: u64) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = cfg.receptive_field();
        let n = cfg.joints;
        let x = (0..b * 2 * n * t).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let o = (0..b * n * t)
            .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
            .collect();
        (
            Tensor::new(vec![b, 2 * n, t], x).unwrap(),
            Tensor::new(vec![b, n, t], o).unwrap(),
        )
    }

    #[test]
    fn receptive_field_formula() {
        let mut cfg = TcnConfig::desk(17, Variant::ManyVectors);
        assert_eq!(cfg.receptive_field(), 7);
        cfg.blocks_b = 0;
        assert_eq!(cfg.receptive_field(), 3);
        cfg.kernel_w = 5;
        cfg.blocks_b = 3;
        assert_eq!(cfg.receptive_field(), 17);
    }

    #[test]
    fn shape_contract() {
        for variant in [Variant::OneVector, Variant::ManyVectors] {
            let cfg = TcnConfig::desk(15, variant);
            let params = init_params(&cfg, 1).unwrap();
            let (x, o) = inputs(&cfg, 1, 2);
            let x = x.reshaped(vec![30, 7]).unwrap();
            let o = o.reshaped(vec![15, 7]).unwrap();
            let (pose, occ) = tcn_forward(&x, &o, &cfg, &params, Mode::Eval, 0).unwrap();
            assert_eq!(pose.numel(), 45);
            assert_eq!(occ.shape, vec![1, 15, cfg.occ_frames()]);
        }
    }

    #[test]
    fn full_scale_runs() {
        let cfg = TcnConfig::full_scale(15, Variant::OneVector);
        let params = init_params(&cfg, 0).unwrap();
        let (x, o) = inputs(&cfg, 1, 0);
        let (pose, _) = tcn_forward(&x, &o, &cfg, &params, Mode::Eval, 0).unwrap();
        assert!(pose.is_finite());
    }

    #[test]
    fn rejects_wrong_window() {
        let cfg = TcnConfig::desk(3, Variant::ManyVectors);
        let params = init_params(&cfg, 0).unwrap();
        let x = Tensor::zeros(vec![1, 6, 5]);
        let o = Tensor::zeros(vec![1, 3, 5]);
        assert!(matches!(
            tcn_forward(&x, &o, &cfg, &params, Mode::Eval, 0),
            Err(NnError::Config(_))
        ));
        let x = Tensor::zeros(vec![1, 4, 7]);
        let o = Tensor::zeros(vec![1, 3, 7]);
        assert!(matches!(
            tcn_forward(&x, &o, &cfg, &params, Mode::Eval, 0),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn eval_is_pure_and_batch_independent() {
        let cfg = TcnConfig::desk(4, Variant::ManyVectors);
        let mut params = init_params(&cfg, 3).unwrap();
        for (name, t) in params.iter_mut() {
            if name.ends_with("running_var") {
                t.data.iter_mut().for_each(|v| *v = 2.0);
            }
        }
        let (x, o) = inputs(&cfg, 3, 4);
        let before = params.clone();
        let (p1, _) = tcn_forward(&x, &o, &cfg, &params, Mode::Eval, 1).unwrap();
        let (p2, _) = tcn_forward(&x, &o, &cfg, &params, Mode::Eval, 99).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(params, before);
        // first example alone gives the same prediction as inside the batch
        let t = cfg.receptive_field();
        let x0 = Tensor::new(vec![1, 8, t], x.data[..8 * t].to_vec()).unwrap();
        let o0 = Tensor::new(vec![1, 4, t], o.data[..4 * t].to_vec()).unwrap();
        let (single, _) = tcn_forward(&x0, &o0, &cfg, &params, Mode::Eval, 0).unwrap();
        assert_eq!(single.data[..], p1.data[..12]);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = TcnConfig::desk(5, Variant::OneVector);
        assert_eq!(init_params(&cfg, 9).unwrap(), init_params(&cfg, 9).unwrap());
        assert_ne!(init_params(&cfg, 9).unwrap(), init_params(&cfg, 10).unwrap());
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = TcnConfig {
            dropout_p: 0.1,
            ..TcnConfig::desk(15, Variant::OneVector)
        };
        let text = format!("topology=humaneva15\n{}", cfg.to_kv());
        assert_eq!(TcnConfig::from_kv(&text).unwrap(), cfg);
        assert!(TcnConfig::from_kv("joints=3").is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TcnConfig::desk(3, Variant::OneVector);
        cfg.kernel_w = 2;
        assert!(cfg.validate().is_err());
        cfg.kernel_w = 3;
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());
        cfg.dropout_p = 0.0;
        cfg.gate_threshold_tau = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn running_stats_update() {
        let cfg = TcnConfig::desk(2, Variant::ManyVectors);
        let mut params = init_params(&cfg, 0).unwrap();
        let stats = vec![(
            "in.bn".to_string(),
            BatchStats {
                mean: vec![1.0; 64],
                var: vec![3.0; 64],
            },
        )];
        params.update_running_stats(&stats, BN_MOMENTUM).unwrap();
        assert!((params.get("in.bn.running_mean").unwrap().data[0] - 0.1).abs() < 1e-15);
        assert!((params.get("in.bn.running_var").unwrap().data[0] - 1.2).abs() < 1e-15);
    }
}
