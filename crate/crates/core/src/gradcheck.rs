//! Randomized finite-difference checks of every tape op kind and of a whole
//! small sparse model.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Mode, MaskPair, ModelConfig, SesGcnModel, Variant};
use crate::numerics::{finite_difference_check, BatchNormMode, Bound, Tape, Tensor, Var};
use crate::Result;

/// Central-difference step used by every check here.
pub const STEP: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).expect("finite draw")
}

fn dims(rng: &mut ChaCha8Rng, max: usize) -> usize {
    rng.random_range(1..=max)
}

/// Reduces `y` to a scalar with fixed random weights so every output entry
/// contributes a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(random(&mut rng, &shape, -1.0, 1.0));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn check(
    out: &mut Vec<(&'static str, f64)>,
    seed: u64,
    name: &'static str,
    build: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    op: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = build(&mut rng);
    let err = finite_difference_check(
        |tape, p| {
            let y = op(tape, p)?;
            weighted_sum(tape, y, seed)
        },
        &params,
        STEP,
    )?;
    out.push((name, err));
    Ok(())
}

/// Worst relative gradient error of each op kind on shapes and values drawn
/// from `seed`.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::new();
    check(
        &mut out,
        seed,
        "channel_mix",
        |r| {
            let (n, g) = (dims(r, 3), dims(r, 2));
            let (ci, co) = (g * dims(r, 2), g * dims(r, 2));
            let (a, b) = (dims(r, 3), dims(r, 3));
            vec![random(r, &[n, ci, a, b], -1.0, 1.0), random(r, &[co, ci / g], -1.0, 1.0)]
        },
        |tape, p| {
            let g = tape.value(p[0]).shape()[1] / tape.value(p[1]).shape()[1];
            tape.channel_mix(p[0], p[1], g)
        },
    )?;
    check(
        &mut out,
        seed,
        "last_axis_map",
        |r| {
            let (k, m, a, b) = (dims(r, 5), dims(r, 5), dims(r, 3), dims(r, 3));
            vec![random(r, &[a, b, k], -1.0, 1.0), random(r, &[m, k], -1.0, 1.0)]
        },
        |tape, p| tape.last_axis_map(p[0], p[1]),
    )?;
    check(
        &mut out,
        seed,
        "temporal_mix",
        |r| {
            let (v, t_len, a, b) = (dims(r, 4), dims(r, 4), dims(r, 3), dims(r, 3));
            vec![
                random(r, &[a, b, v, t_len], -1.0, 1.0),
                random(r, &[t_len, t_len, v], -1.0, 1.0),
            ]
        },
        |tape, p| tape.temporal_mix(p[0], p[1]),
    )?;
    check(
        &mut out,
        seed,
        "spatial_mix",
        |r| {
            let (v, t_len, a, b) = (dims(r, 4), dims(r, 4), dims(r, 3), dims(r, 3));
            vec![
                random(r, &[a, b, v, t_len], -1.0, 1.0),
                random(r, &[v, v, t_len], -1.0, 1.0),
            ]
        },
        |tape, p| tape.spatial_mix(p[0], p[1]),
    )?;
    check(
        &mut out,
        seed,
        "channel_bias",
        |r| {
            let (n, c, rest) = (dims(r, 3), dims(r, 4), dims(r, 4));
            vec![random(r, &[n, c, rest, 2], -1.0, 1.0), random(r, &[c], -1.0, 1.0)]
        },
        |tape, p| tape.channel_bias(p[0], p[1]),
    )?;
    let pair = |r: &mut ChaCha8Rng| {
        let shape = [dims(r, 3), dims(r, 3), dims(r, 4)];
        vec![random(r, &shape, -2.0, 2.0), random(r, &shape, -2.0, 2.0)]
    };
    check(&mut out, seed, "add", pair, |tape, p| tape.add(p[0], p[1]))?;
    check(&mut out, seed, "sub", pair, |tape, p| tape.sub(p[0], p[1]))?;
    check(&mut out, seed, "mul", pair, |tape, p| tape.mul(p[0], p[1]))?;
    check(
        &mut out,
        seed,
        "scale",
        |r| {
            let shape = [dims(r, 5), dims(r, 5)];
            vec![random(r, &shape, -2.0, 2.0)]
        },
        |tape, p| tape.scale(p[0], -1.7),
    )?;
    check(
        &mut out,
        seed,
        "prelu",
        |r| {
            let (n, c, v) = (dims(r, 3), dims(r, 4), dims(r, 4));
            vec![random(r, &[n, c, v, 2], -3.0, 3.0), random(r, &[c], 0.0, 1.0)]
        },
        |tape, p| tape.prelu(p[0], p[1]),
    )?;
    check(
        &mut out,
        seed,
        "relu6",
        |r| {
            let shape = [dims(r, 4), dims(r, 5)];
            vec![random(r, &shape, -2.0, 8.0)]
        },
        |tape, p| tape.relu6(p[0]),
    )?;
    check(
        &mut out,
        seed,
        "batch_norm_train",
        |r| {
            let (n, c, v, t_len) = (dims(r, 3), dims(r, 3), 1 + dims(r, 3), dims(r, 3));
            vec![
                random(r, &[n, c, v, t_len], -3.0, 3.0),
                random(r, &[c], 0.5, 1.5),
                random(r, &[c], -1.0, 1.0),
            ]
        },
        |tape, p| Ok(tape.batch_norm(p[0], p[1], p[2], 1e-5, BatchNormMode::Train)?.0),
    )?;
    check(
        &mut out,
        seed,
        "batch_norm_eval",
        |r| {
            let (n, c, v, t_len) = (dims(r, 3), dims(r, 3), dims(r, 3), dims(r, 3));
            vec![
                random(r, &[n, c, v, t_len], -3.0, 3.0),
                random(r, &[c], 0.5, 1.5),
                random(r, &[c], -1.0, 1.0),
            ]
        },
        |tape, p| {
            let c = tape.value(p[1]).len();
            let mean: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
            let var: Vec<f64> = (0..c).map(|i| 1.0 + i as f64).collect();
            Ok(tape
                .batch_norm(p[0], p[1], p[2], 1e-5, BatchNormMode::Eval { mean: &mean, var: &var })?
                .0)
        },
    )?;
    check(
        &mut out,
        seed,
        "conv_time",
        |r| {
            let (n, c, v, len) = (dims(r, 2), dims(r, 3), dims(r, 3), 2 + dims(r, 5));
            let width = [1, 3][r.random_range(0..2)];
            vec![random(r, &[n, c, v, len], -1.0, 1.0), random(r, &[c, width], -1.0, 1.0)]
        },
        |tape, p| tape.conv_time(p[0], p[1]),
    )?;
    check(
        &mut out,
        seed,
        "channel_norm",
        |r| {
            let (n, v, t_len) = (dims(r, 3), dims(r, 3), dims(r, 3));
            vec![random(r, &[n, 3, v, t_len], -2.0, 2.0)]
        },
        |tape, p| tape.channel_norm(p[0]),
    )?;
    check(
        &mut out,
        seed,
        "reshape",
        |r| {
            let (a, b) = (dims(r, 4), dims(r, 4));
            vec![random(r, &[a, b, 2], -2.0, 2.0)]
        },
        |tape, p| {
            let n = tape.value(p[0]).len();
            tape.reshape(p[0], &[n])
        },
    )?;
    check(
        &mut out,
        seed,
        "mask",
        |r| {
            let (a, b) = (dims(r, 4), dims(r, 4));
            vec![random(r, &[a, b], -2.0, 2.0)]
        },
        |tape, p| {
            let n = tape.value(p[0]).len();
            let shape = tape.value(p[0]).shape().to_vec();
            let m = tape.constant(Tensor::from_fn(&shape, |i| (i % 3 != 0) as u8 as f64).expect("finite mask"));
            debug_assert_eq!(n, shape.iter().product::<usize>());
            tape.mask(p[0], m)
        },
    )?;
    check(
        &mut out,
        seed,
        "mean",
        |r| {
            let shape = [dims(r, 4), dims(r, 4)];
            vec![random(r, &shape, -2.0, 2.0)]
        },
        |tape, p| {
            let m = tape.mean(p[0])?;
            let sq = tape.mul(m, m)?;
            tape.add(sq, m)
        },
    )?;
    Ok(out)
}

/// The `V = 3, T = 4, K = 2` sparse model the end-to-end check runs on.
pub fn small_ses_config() -> ModelConfig {
    ModelConfig {
        joints: 3,
        observed_frames: 4,
        forecast_frames: 2,
        channels: vec![3, 4, 4],
        gcn_layers: 2,
        tcn_layers: 2,
        alpha: None,
        variant: Variant::Ses,
        tcn_kernel: 1,
        input_scale_mm: 100.0,
    }
}

fn model_loss(model: &SesGcnModel, xt: &Tensor, target: &Tensor, mode: Mode, tape: &mut Tape, p: &[Var]) -> Result<Var> {
    let mut learnable = p.iter();
    let vars = model
        .store()
        .entries()
        .iter()
        .map(|e| {
            if e.tensor.requires_grad {
                *learnable.next().expect("one variable per learnable tensor")
            } else {
                tape.leaf(&e.tensor)
            }
        })
        .collect();
    let bound = Bound::new(vars);
    let x = tape.constant(xt.clone());
    let (h, _) = model.encoder_forward(tape, &bound, x, mode)?;
    let y = model.tcn_decode(tape, &bound, h)?;
    let t = tape.constant(target.clone());
    let d = tape.sub(y, t)?;
    let n = tape.channel_norm(d)?;
    tape.mean(n)
}

/// Worst relative gradient error of the whole small sparse model, with
/// random masks (about 30% zeros), in training and evaluation mode.
pub fn model_check(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let cfg = small_ses_config();
    let (v, t, k) = (cfg.joints, cfg.observed_frames, cfg.forecast_frames);
    let mut model = SesGcnModel::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e5);
    let mut draw = |shape: &[usize]| {
        Tensor::from_fn(shape, |_| f64::from(u8::from(rng.random::<f64>() > 0.3))).expect("finite mask")
    };
    let masks = (0..cfg.gcn_layers)
        .map(|_| {
            let mut p = MaskPair::ones(v, t);
            p.spatial = draw(&[v, v, t]);
            p.temporal = draw(&[t, t, v]);
            p
        })
        .collect();
    model.set_masks(masks)?;
    let xt = random(&mut rng, &[3, 3, v, t], -1.0, 1.0);
    let target = random(&mut rng, &[3, 3, v, k], -1.0, 1.0);
    let params: Vec<Tensor> = model
        .store()
        .entries()
        .iter()
        .filter(|e| e.tensor.requires_grad)
        .map(|e| e.tensor.value.clone())
        .collect();
    let mut out = Vec::new();
    for (name, mode) in [("model_train", Mode::Train), ("model_eval", Mode::Eval)] {
        let err = finite_difference_check(
            |tape, p| model_loss(&model, &xt, &target, mode, tape, p),
            &params,
            STEP,
        )?;
        out.push((name, err));
    }
    Ok(out)
}
