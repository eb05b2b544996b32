//! Central finite-difference checks of every primitive and of the whole
//! network under the combined loss.
//!
//! Relative error is `|a − n| / max(|a|, |n|, REL_FLOOR)`; the floor keeps
//! entries whose true gradient is essentially zero from reporting pure
//! rounding noise as a large relative error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::gate_mask;
use super::objective::{loss_and_grads, Batch};
use super::tape::Tape;
use super::tcn::{init_params, ParameterStore, TcnConfig, Variant};
use super::{Mode, NnError, Tensor, Var};
use crate::metrics::LossWeights;

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-6;
pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const NETWORK_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub primitives: Vec<CheckResult>,
    pub networks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn max_primitive_error(&self) -> f64 {
        self.primitives.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn max_network_error(&self) -> f64 {
        self.networks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_primitive_error() < PRIMITIVE_TOL && self.max_network_error() < NETWORK_TOL
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in self.primitives.iter().chain(&self.networks) {
            out.push_str(&format!(
                "{:<28} entries {:>5}  max rel error {:.3e}\n",
                c.name, c.entries, c.max_rel_error
            ));
        }
        out.push_str(&format!(
            "primitives max {:.3e} (tol {PRIMITIVE_TOL:e}), network max {:.3e} (tol {NETWORK_TOL:e})\n",
            self.max_primitive_error(),
            self.max_network_error()
        ));
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("sized")
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor {
    let mut t = random_tensor(rng, shape, -2.0, 2.0);
    for v in &mut t.data {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin - v.abs() } else { margin + *v };
        }
    }
    t
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Vec<Var>, NnError>;

/// Checks `∂(Σ wᵢ·outputᵢ)/∂input` for every input element against
/// central differences, with fixed random weights `w`.
fn check_op(name: &str, inputs: Vec<Tensor>, build: &Build, seed: u64) -> Result<CheckResult, NnError> {
    let run = |inputs: &[Tensor]| -> Result<(Tape, Vec<Var>, Vec<Var>), NnError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let outs = build(&mut tape, &vars)?;
        Ok((tape, vars, outs))
    };
    let (tape, vars, outs) = run(&inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<Vec<f64>> = outs
        .iter()
        .map(|&o| (0..tape.value(o).numel()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let objective = |tape: &Tape, outs: &[Var]| -> f64 {
        outs.iter()
            .zip(&weights)
            .map(|(&o, w)| tape.value(o).data.iter().zip(w).map(|(y, w)| y * w).sum::<f64>())
            .sum()
    };
    let seeds: Vec<(Var, Vec<f64>)> = outs.iter().copied().zip(weights.iter().cloned()).collect();
    let grads = tape.backward(&seeds)?;
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        for i in 0..input.numel() {
            let mut plus = inputs.clone();
            plus[k].data[i] += FD_STEP;
            let mut minus = inputs.clone();
            minus[k].data[i] -= FD_STEP;
            let (tp, _, op) = run(&plus)?;
            let (tm, _, om) = run(&minus)?;
            let numeric = (objective(&tp, &op) - objective(&tm, &om)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[i], numeric));
            entries += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_error: worst,
        entries,
    })
}

/// Finite-difference checks of each primitive op in isolation.
pub fn primitive_suite(seed: u64) -> Result<Vec<CheckResult>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    for stride in [1usize, 2] {
        let inputs = vec![
            random_tensor(&mut rng, &[2, 3, 7], -1.0, 1.0),
            random_tensor(&mut rng, &[4, 3, 3], -1.0, 1.0),
            random_tensor(&mut rng, &[4], -1.0, 1.0),
        ];
        out.push(check_op(
            &format!("conv1d (stride {stride})"),
            inputs,
            &move |t, v| Ok(vec![t.conv1d(v[0], v[1], Some(v[2]), stride)?]),
            seed + 1,
        )?);
    }

    for mode in [Mode::Train, Mode::Eval] {
        let inputs = vec![
            random_tensor(&mut rng, &[3, 4, 5], -2.0, 2.0),
            random_tensor(&mut rng, &[4], 0.5, 1.5),
            random_tensor(&mut rng, &[4], -0.5, 0.5),
        ];
        let rm: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let rv: Vec<f64> = (0..4).map(|_| rng.gen_range(0.5..2.0)).collect();
        out.push(check_op(
            &format!("batchnorm ({mode:?})").to_lowercase(),
            inputs,
            &move |t, v| Ok(vec![t.batchnorm(v[0], v[1], v[2], (&rm, &rv), mode)?.0]),
            seed + 2,
        )?);
    }

    out.push(check_op(
        "relu",
        vec![away_from_zero(&mut rng, &[2, 3, 4], 0.05)],
        &|t, v| Ok(vec![t.relu(v[0])]),
        seed + 3,
    )?);
    out.push(check_op(
        "sigmoid",
        vec![random_tensor(&mut rng, &[2, 3, 4], -4.0, 4.0)],
        &|t, v| Ok(vec![t.sigmoid(v[0])]),
        seed + 4,
    )?);
    out.push(check_op(
        "dropout",
        vec![random_tensor(&mut rng, &[2, 3, 8], -1.0, 1.0)],
        &|t, v| {
            let mut r = ChaCha8Rng::seed_from_u64(77);
            Ok(vec![t.dropout(v[0], 0.3, &mut r, Mode::Train)])
        },
        seed + 5,
    )?);
    out.push(check_op(
        "occlusion gate",
        vec![
            random_tensor(&mut rng, &[2, 6, 5], -1.0, 1.0),
            away_from_zero(&mut rng, &[2, 3, 5], 0.5),
        ],
        &|t, v| {
            let prob = t.sigmoid(v[1]);
            let mask = gate_mask(t.value(v[0]), t.value(prob), 0.5)?;
            let gated = t.mask_mul(v[0], mask);
            Ok(vec![gated, prob])
        },
        seed + 6,
    )?);
    out.push(check_op(
        "add + crop",
        vec![
            random_tensor(&mut rng, &[2, 3, 7], -1.0, 1.0),
            random_tensor(&mut rng, &[2, 3, 5], -1.0, 1.0),
        ],
        &|t, v| {
            let c = t.crop_time(v[0], 1, 5)?;
            Ok(vec![t.add(c, v[1])?])
        },
        seed + 7,
    )?);
    Ok(out)
}

/// The configuration used for the composed-network check.
pub fn tiny_config(variant: Variant) -> TcnConfig {
    TcnConfig {
        joints: 3,
        kernel_w: 3,
        channels_c: 8,
        blocks_b: 1,
        dropout_p: 0.0,
        gate_threshold_tau: 0.5,
        variant,
    }
}

fn random_batch(cfg: &TcnConfig, b: usize, rng: &mut ChaCha8Rng) -> Batch {
    let (n, t) = (cfg.joints, cfg.receptive_field());
    let bin = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
        (0..len).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect()
    };
    let seq2d = random_tensor(rng, &[b, 2 * n, t], -1.0, 1.0);
    // soft inputs keep the occlusion logits off exact ties with the threshold
    let occ_in = random_tensor(rng, &[b, n, t], 0.0, 1.0);
    let target3d = (0..b * 3 * n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let occ_target = bin(rng, b * n * cfg.occ_frames());
    Batch {
        seq2d,
        occ_in,
        target3d,
        occ_target,
    }
}

/// Checks the gradient of the combined loss with respect to every
/// trainable parameter of `cfg` in train mode (batch statistics).
pub fn network_check(cfg: &TcnConfig, seed: u64) -> Result<CheckResult, NnError> {
    let weights = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = random_batch(cfg, 4, &mut rng);
    let mut noop = ChaCha8Rng::seed_from_u64(0);
    // pick an initialization whose occlusion probabilities sit clearly on
    // one side of the gate threshold, so small perturbations never flip it
    let mut init_seed = seed;
    let params = loop {
        if init_seed > seed + 100 {
            return Err(NnError::Config(
                "no initialization keeps the gate away from its threshold".into(),
            ));
        }
        let p = init_params(cfg, init_seed)?;
        let s = loss_and_grads(cfg, &p, &batch, weights, 0, Mode::Train, &mut noop)?;
        let margin = s
            .occ_prob
            .iter()
            .map(|q| (q - cfg.gate_threshold_tau).abs())
            .fold(f64::INFINITY, f64::min);
        if margin > 1e-3 {
            break p;
        }
        init_seed += 1;
    };
    let loss_at = |p: &ParameterStore| -> Result<f64, NnError> {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        Ok(loss_and_grads(cfg, p, &batch, weights, 0, Mode::Train, &mut r)?.loss.total)
    };
    let step = loss_and_grads(cfg, &params, &batch, weights, 0, Mode::Train, &mut noop)?;
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (name, g) in &step.grads {
        for i in 0..g.len() {
            let mut plus = params.clone();
            plus.get_mut(name)?.data[i] += FD_STEP;
            let mut minus = params.clone();
            minus.get_mut(name)?.data[i] -= FD_STEP;
            let numeric = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(g[i], numeric));
            entries += 1;
        }
    }
    Ok(CheckResult {
        name: format!("network ({})", cfg.variant),
        max_rel_error: worst,
        entries,
    })
}

/// Every primitive plus the tiny network in both variants.
pub fn run_suite(seed: u64) -> Result<GradcheckReport, NnError> {
    Ok(GradcheckReport {
        primitives: primitive_suite(seed)?,
        networks: vec![
            network_check(&tiny_config(Variant::ManyVectors), seed)?,
            network_check(&tiny_config(Variant::OneVector), seed)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass() {
        for c in primitive_suite(3).unwrap() {
            assert!(c.max_rel_error < PRIMITIVE_TOL, "{c:?}");
            assert!(c.entries > 0);
        }
    }

    #[test]
    fn network_passes() {
        let c = network_check(&tiny_config(Variant::ManyVectors), 1).unwrap();
        assert!(c.max_rel_error < NETWORK_TOL, "{c:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        assert!(relative_error(1.0, 1.1) > 0.05);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, 0.0) < 1e-5);
    }
}
