//! Wengert-list reverse-mode differentiation over `(B, C, T)` tensors.
//!
//! Every op appends a node holding its forward value plus whatever it needs
//! for the backward sweep. [`Tape::backward`] walks the list once in reverse,
//! accumulating gradients in a fixed order so results are bit-reproducible.

use std::collections::BTreeMap;

use rand::Rng;

use super::{Mode, NnError, Tensor};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf {
        param: Option<String>,
    },
    Conv1d {
        x: Var,
        k: Var,
        bias: Option<Var>,
        stride: usize,
    },
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    /// Elementwise product with a constant (dropout masks, occlusion gating).
    MaskMul {
        x: Var,
        mask: Vec<f64>,
    },
    Add(Var, Var),
    CropTime {
        x: Var,
        start: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Batch statistics produced by a train-mode batchnorm, for running-stat updates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient for every node reached by the backward sweep.
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None })
    }

    pub fn param(&mut self, name: &str, t: Tensor) -> Var {
        self.push(
            t,
            Op::Leaf {
                param: Some(name.to_string()),
            },
        )
    }

    pub fn conv1d(
        &mut self,
        x: Var,
        k: Var,
        bias: Option<Var>,
        stride: usize,
    ) -> Result<Var, NnError> {
        let out = conv1d_forward(
            self.value(x),
            self.value(k),
            bias.map(|b| self.value(b)),
            stride,
        )?;
        Ok(self.push(out, Op::Conv1d { x, k, bias, stride }))
    }

    /// Per-channel normalization over batch and time. Train mode uses batch
    /// statistics (returned for the running-stat update); eval mode uses
    /// the supplied running mean and variance.
    pub fn batchnorm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        running: (&[f64], &[f64]),
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>), NnError> {
        let xt = self.value(x);
        let (b, c, t) = xt.bct()?;
        let (sc, sh) = (&self.value(scale).data, &self.value(shift).data);
        if sc.len() != c || sh.len() != c || running.0.len() != c || running.1.len() != c {
            return Err(NnError::ShapeMismatch(format!(
                "batchnorm over {c} channels got scale/shift/running of length {}/{}/{}/{}",
                sc.len(),
                sh.len(),
                running.0.len(),
                running.1.len()
            )));
        }
        let m = (b * t) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let batch_stats = mode == Mode::Train;
        if batch_stats {
            for ch in 0..c {
                let mut s = 0.0;
                for bi in 0..b {
                    s += xt.data[(bi * c + ch) * t..][..t].iter().sum::<f64>();
                }
                mean[ch] = s / m;
                let mut v = 0.0;
                for bi in 0..b {
                    v += xt.data[(bi * c + ch) * t..][..t]
                        .iter()
                        .map(|x| (x - mean[ch]).powi(2))
                        .sum::<f64>();
                }
                var[ch] = v / m;
            }
        } else {
            mean.copy_from_slice(running.0);
            var.copy_from_slice(running.1);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xt.numel()];
        let mut out = vec![0.0; xt.numel()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * t;
                for i in off..off + t {
                    xhat[i] = (xt.data[i] - mean[ch]) * inv_std[ch];
                    out[i] = sc[ch] * xhat[i] + sh[ch];
                }
            }
        }
        let stats = batch_stats.then(|| BatchStats {
            var: var
                .iter()
                .map(|v| if m > 1.0 { v * m / (m - 1.0) } else { *v })
                .collect(),
            mean,
        });
        let value = Tensor::new(xt.shape.clone(), out)?;
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                batch_stats,
            },
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        t.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(t, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        t.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        self.push(t, Op::Sigmoid(x))
    }

    /// Inverted dropout: kept activations are scaled by `1/(1−p)`. Identity
    /// in eval mode or when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R, mode: Mode) -> Var {
        if mode == Mode::Eval || p == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mask_mul(x, mask)
    }

    /// Multiplies by a constant mask; gradients pass through the same mask.
    pub fn mask_mul(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let mut t = self.value(x).clone();
        assert_eq!(mask.len(), t.numel(), "mask length");
        t.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.push(t, Op::MaskMul { x, mask })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(NnError::ShapeMismatch(format!(
                "add {:?} + {:?}",
                ta.shape, tb.shape
            )));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape.clone(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// Frames `start..start+len` of every `(batch, channel)` row.
    pub fn crop_time(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let xt = self.value(x);
        let (b, c, t) = xt.bct()?;
        if start + len > t {
            return Err(NnError::ShapeMismatch(format!(
                "crop {start}..{} of {t} frames",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(b * c * len);
        for row in xt.data.chunks(t) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let t = Tensor::new(vec![b, c, len], data)?;
        Ok(self.push(t, Op::CropTime { x, start }))
    }

    /// Reverse sweep seeded with `∂L/∂v` for each `(v, grad)` pair.
    pub fn backward(&self, seeds: &[(Var, Vec<f64>)]) -> Result<Grads, NnError> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            if g.len() != self.value(*v).numel() {
                return Err(NnError::ShapeMismatch(format!(
                    "seed gradient of length {} for a tensor of {} values",
                    g.len(),
                    self.value(*v).numel()
                )));
            }
            accumulate(&mut grads, *v, g);
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { .. } => {}
                Op::Conv1d { x, k, bias, stride } => {
                    let (gx, gk, gb) = conv1d_backward(
                        self.value(*x),
                        self.value(*k),
                        &node.value,
                        &gy,
                        *stride,
                    );
                    accumulate(&mut grads, *x, &gx);
                    accumulate(&mut grads, *k, &gk);
                    if let Some(b) = bias {
                        accumulate(&mut grads, *b, &gb);
                    }
                }
                Op::BatchNorm {
                    x,
                    scale,
                    shift,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (b, c, t) = node.value.bct()?;
                    let sc = &self.value(*scale).data;
                    let m = (b * t) as f64;
                    let mut gscale = vec![0.0; c];
                    let mut gshift = vec![0.0; c];
                    for bi in 0..b {
                        for ch in 0..c {
                            let off = (bi * c + ch) * t;
                            for i in off..off + t {
                                gscale[ch] += gy[i] * xhat[i];
                                gshift[ch] += gy[i];
                            }
                        }
                    }
                    let mut gx = vec![0.0; gy.len()];
                    for bi in 0..b {
                        for ch in 0..c {
                            let off = (bi * c + ch) * t;
                            let k = sc[ch] * inv_std[ch];
                            for i in off..off + t {
                                gx[i] = if *batch_stats {
                                    k * (gy[i] - gshift[ch] / m - xhat[i] * gscale[ch] / m)
                                } else {
                                    k * gy[i]
                                };
                            }
                        }
                    }
                    accumulate(&mut grads, *x, &gx);
                    accumulate(&mut grads, *scale, &gscale);
                    accumulate(&mut grads, *shift, &gshift);
                }
                Op::Relu(x) => {
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(&node.value.data)
                        .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Sigmoid(x) => {
                    let gx: Vec<f64> = gy
                        .iter()
                        .zip(&node.value.data)
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::MaskMul { x, mask } => {
                    let gx: Vec<f64> = gy.iter().zip(mask).map(|(g, m)| g * m).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &gy);
                    accumulate(&mut grads, *b, &gy);
                }
                Op::CropTime { x, start } => {
                    let (_, _, t) = self.value(*x).bct()?;
                    let len = node.value.shape[2];
                    let mut gx = vec![0.0; self.value(*x).numel()];
                    for (dst, src) in gx.chunks_mut(t).zip(gy.chunks(len)) {
                        dst[*start..*start + len].copy_from_slice(src);
                    }
                    accumulate(&mut grads, *x, &gx);
                }
            }
            grads[idx] = Some(gy);
        }
        Ok(Grads { grads })
    }

    /// Gradients of every named parameter leaf, keyed by name.
    pub fn param_grads(&self, grads: &Grads) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(name) } = &node.op {
                let g = grads.grads[i]
                    .clone()
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                match out.get_mut(name) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        out.insert(name.clone(), g);
                    }
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Valid (unpadded) temporal cross-correlation.
///
/// `x`: `(B, C_in, T)` or `(C_in, T)`; `k`: `(C_out, C_in, W)`; `bias`: `(C_out)`.
/// Output has `T′ = ⌊(T − W)/stride⌋ + 1` frames and the rank of `x`.
pub fn conv1d_forward(
    x: &Tensor,
    k: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
) -> Result<Tensor, NnError> {
    let (b, cin, t) = x.bct()?;
    let [cout, kcin, w] = match k.shape.as_slice() {
        &[o, i, w] => [o, i, w],
        other => {
            return Err(NnError::ShapeMismatch(format!(
                "kernel must be (C_out, C_in, W), got {other:?}"
            )))
        }
    };
    if kcin != cin {
        return Err(NnError::ShapeMismatch(format!(
            "kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    if w == 0 || w > t || stride == 0 {
        return Err(NnError::ShapeMismatch(format!(
            "kernel width {w} / stride {stride} invalid for {t} frames"
        )));
    }
    if let Some(bias) = bias {
        if bias.numel() != cout {
            return Err(NnError::ShapeMismatch(format!(
                "bias has {} entries for {cout} output channels",
                bias.numel()
            )));
        }
    }
    let tout = (t - w) / stride + 1;
    let mut y = vec![0.0; b * cout * tout];
    for bi in 0..b {
        for o in 0..cout {
            let yrow = &mut y[(bi * cout + o) * tout..][..tout];
            if let Some(bias) = bias {
                yrow.iter_mut().for_each(|v| *v = bias.data[o]);
            }
            for i in 0..cin {
                let xrow = &x.data[(bi * cin + i) * t..][..t];
                let krow = &k.data[(o * cin + i) * w..][..w];
                for (tt, yv) in yrow.iter_mut().enumerate() {
                    let xs = &xrow[tt * stride..tt * stride + w];
                    let mut acc = 0.0;
                    for (kv, xv) in krow.iter().zip(xs) {
                        acc += kv * xv;
                    }
                    *yv += acc;
                }
            }
        }
    }
    let shape = if x.rank() == 2 {
        vec![cout, tout]
    } else {
        vec![b, cout, tout]
    };
    Tensor::new(shape, y)
}

fn conv1d_backward(
    x: &Tensor,
    k: &Tensor,
    y: &Tensor,
    gy: &[f64],
    stride: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (b, cin, t) = x.bct().expect("checked in forward");
    let (cout, w) = (k.shape[0], k.shape[2]);
    let tout = y.shape[y.rank() - 1];
    let mut gx = vec![0.0; x.numel()];
    let mut gk = vec![0.0; k.numel()];
    let mut gb = vec![0.0; cout];
    for bi in 0..b {
        for o in 0..cout {
            let grow = &gy[(bi * cout + o) * tout..][..tout];
            gb[o] += grow.iter().sum::<f64>();
            for i in 0..cin {
                let xoff = (bi * cin + i) * t;
                let koff = (o * cin + i) * w;
                for (tt, &g) in grow.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let base = xoff + tt * stride;
                    for ww in 0..w {
                        gk[koff + ww] += g * x.data[base + ww];
                        gx[base + ww] += g * k.data[koff + ww];
                    }
                }
            }
        }
    }
    (gx, gk, gb)
}
