//! The separable graph-convolutional encoder, the temporal-convolution
//! decoder and parameter accounting.

mod count;
mod layers;
mod mask;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Poses;
use crate::numerics::{BatchNormMode, BatchStats, Bound, ParamId, ParamRole, ParamStore, Tape, Tensor, Var};
use crate::{math, Error, Result};

pub use count::{count_parameters, ParameterBreakdown};
pub use layers::{
    dw_block_forward, factored_mix, gcn_layer_forward, ses_block_forward, sts_layer_forward,
    DepthwiseWeights, MixWeights,
};
pub use mask::{MaskPair, MaskProvenance};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full `[V·T, V·T]` adjacency.
    Vanilla,
    /// Space-time separable factors `A_s`, `A_t`.
    Sts,
    /// Separable factors with a depth-wise block.
    StsDw,
    /// Depth-wise block over masked factors.
    Ses,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Sts => "sts",
            Variant::StsDw => "sts_dw",
            Variant::Ses => "ses",
        }
    }

    fn depthwise(self) -> bool {
        matches!(self, Variant::StsDw | Variant::Ses)
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Variant::Vanilla),
            "sts" => Ok(Variant::Sts),
            "sts_dw" => Ok(Variant::StsDw),
            "ses" => Ok(Variant::Ses),
            other => Err(Error::config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub joints: usize,
    pub observed_frames: usize,
    pub forecast_frames: usize,
    /// Encoder widths `C^(1) .. C^(L+1)`; the first entry is the 3 coordinates.
    pub channels: Vec<usize>,
    pub gcn_layers: usize,
    pub tcn_layers: usize,
    /// Depth-wise group count; `None` means one group per channel.
    pub alpha: Option<usize>,
    pub variant: Variant,
    pub tcn_kernel: usize,
    /// Inputs are expressed relative to the last observed frame and divided
    /// by this length before entering the network.
    pub input_scale_mm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            joints: 15,
            observed_frames: 10,
            forecast_frames: 25,
            channels: vec![3, 64, 64, 64, 64, 64],
            gcn_layers: 5,
            tcn_layers: 4,
            alpha: None,
            variant: Variant::StsDw,
            tcn_kernel: 3,
            input_scale_mm: 100.0,
        }
    }
}

impl ModelConfig {
    /// Default widths for `gcn_layers` layers of `width` channels.
    pub fn with_width(mut self, gcn_layers: usize, width: usize) -> Self {
        self.gcn_layers = gcn_layers;
        self.channels = core::iter::once(3).chain(core::iter::repeat_n(width, gcn_layers)).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::Config(m));
        if self.channels.first() != Some(&3) {
            return fail("channels must start with 3 coordinates".into());
        }
        if self.gcn_layers == 0 || self.channels.len() != self.gcn_layers + 1 {
            return fail(format!(
                "{} gcn layers need {} channel widths, found {}",
                self.gcn_layers,
                self.gcn_layers + 1,
                self.channels.len()
            ));
        }
        if self.channels.contains(&0) {
            return fail("channel widths must be positive".into());
        }
        if self.joints == 0 {
            return fail("at least one joint is required".into());
        }
        if self.observed_frames < 2 {
            return fail("at least two observed frames are required".into());
        }
        if self.forecast_frames == 0 {
            return fail("at least one forecast frame is required".into());
        }
        if self.tcn_layers == 0 {
            return fail("at least one tcn layer is required".into());
        }
        if self.tcn_kernel % 2 == 0 {
            return fail(format!("tcn kernel {} must be odd", self.tcn_kernel));
        }
        if self.tcn_layers > 1 && self.tcn_kernel > self.forecast_frames {
            return fail(format!(
                "tcn kernel {} is wider than {} forecast frames",
                self.tcn_kernel, self.forecast_frames
            ));
        }
        if !(self.input_scale_mm.is_finite() && self.input_scale_mm > 0.0) {
            return fail("input_scale_mm must be positive".into());
        }
        if self.variant.depthwise() {
            for &c in &self.channels[..self.gcn_layers] {
                let g = self.groups(c);
                if g == 0 || g > c || c % g != 0 {
                    return fail(format!("alpha {g} does not divide {c} channels"));
                }
            }
        }
        Ok(())
    }

    fn groups(&self, channels: usize) -> usize {
        self.alpha.unwrap_or(channels)
    }
}

/// `[V·T, V·T]` or the factor pair of one encoder layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Adjacency {
    Full(ParamId),
    Factored { spatial: ParamId, temporal: ParamId },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Mix {
    weight: ParamId,
    bias: ParamId,
    slope: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderLayer {
    adjacency: Adjacency,
    depthwise: Option<(ParamId, ParamId, usize)>,
    mix: Mix,
    bn_gamma: ParamId,
    bn_beta: ParamId,
    bn_mean: ParamId,
    bn_var: ParamId,
    residual: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone, PartialEq)]
struct Decoder {
    remap: ParamId,
    slopes: Vec<ParamId>,
    convs: Vec<(ParamId, ParamId)>,
    out_weight: ParamId,
    out_bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm uses batch statistics, which are returned for the caller.
    Train,
    /// Batch-norm uses the stored running statistics.
    Eval,
}

/// A recorded forward pass.
pub struct Forward {
    pub tape: Tape,
    pub bound: Bound,
    /// Prediction in millimeters, `[N, 3, V, K]`.
    pub prediction: Var,
    /// Batch statistics per encoder layer (training mode only).
    pub batch_stats: Vec<BatchStats>,
}

/// Encoder, decoder and every tensor they own.
#[derive(Debug, Clone, PartialEq)]
pub struct SesGcnModel {
    config: ModelConfig,
    store: ParamStore,
    masks: Option<Vec<MaskPair>>,
    layers: Vec<EncoderLayer>,
    decoder: Decoder,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / math::sqrt(fan_in.max(1) as f64);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("finite init")
    }
}

impl SesGcnModel {
    /// Fresh model with seeded uniform `±1/√fan_in` weights. A `ses` model
    /// starts with all-ones masks.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut store = ParamStore::new();
        let (v, t, k) = (config.joints, config.observed_frames, config.forecast_frames);

        let mut layers = Vec::with_capacity(config.gcn_layers);
        for l in 0..config.gcn_layers {
            let (c_in, c_out) = (config.channels[l], config.channels[l + 1]);
            let p = |s: &str| format!("gcn.{l}.{s}");
            let adjacency = if config.variant == Variant::Vanilla {
                Adjacency::Full(store.insert(p("adj"), ParamRole::Adjacency, init.uniform(&[v * t, v * t], v * t)))
            } else {
                Adjacency::Factored {
                    spatial: store.insert(p("adj_s"), ParamRole::Adjacency, init.uniform(&[v, v, t], v)),
                    temporal: store.insert(p("adj_t"), ParamRole::Adjacency, init.uniform(&[t, t, v], t)),
                }
            };
            let depthwise = config.variant.depthwise().then(|| {
                let groups = config.groups(c_in);
                let per = c_in / groups;
                (
                    store.insert(p("dw.weight"), ParamRole::Weight, init.uniform(&[c_in, per], per)),
                    store.insert(p("dw.bias"), ParamRole::Weight, init.uniform(&[c_in], per)),
                    groups,
                )
            });
            let mix = Mix {
                weight: store.insert(p("mix.weight"), ParamRole::Weight, init.uniform(&[c_out, c_in], c_in)),
                bias: store.insert(p("mix.bias"), ParamRole::Weight, init.uniform(&[c_out], c_in)),
                slope: store.insert(p("prelu"), ParamRole::Weight, Tensor::full(&[c_out], PRELU_INIT)),
            };
            let layer = EncoderLayer {
                adjacency,
                depthwise,
                mix,
                bn_gamma: store.insert(p("bn.gamma"), ParamRole::Weight, Tensor::full(&[c_out], 1.0)),
                bn_beta: store.insert(p("bn.beta"), ParamRole::Weight, Tensor::zeros(&[c_out])),
                bn_mean: store.insert(p("bn.running_mean"), ParamRole::Buffer, Tensor::zeros(&[c_out])),
                bn_var: store.insert(p("bn.running_var"), ParamRole::Buffer, Tensor::full(&[c_out], 1.0)),
                residual: (c_in != c_out).then(|| {
                    (
                        store.insert(p("res.weight"), ParamRole::Weight, init.uniform(&[c_out, c_in], c_in)),
                        store.insert(p("res.bias"), ParamRole::Weight, init.uniform(&[c_out], c_in)),
                    )
                }),
            };
            layers.push(layer);
        }

        let c = *config.channels.last().expect("validated");
        let w = config.tcn_kernel;
        let remap = store.insert("tcn.remap", ParamRole::Weight, init.uniform(&[k, t], t));
        let mut slopes = Vec::new();
        let mut convs = Vec::new();
        for i in 1..config.tcn_layers {
            slopes.push(store.insert(format!("tcn.{i}.prelu"), ParamRole::Weight, Tensor::full(&[c], PRELU_INIT)));
            convs.push((
                store.insert(format!("tcn.{i}.kernel"), ParamRole::Weight, init.uniform(&[c, w], w)),
                store.insert(format!("tcn.{i}.bias"), ParamRole::Weight, init.uniform(&[c], w)),
            ));
        }
        let decoder = Decoder {
            remap,
            slopes,
            convs,
            out_weight: store.insert("tcn.out.weight", ParamRole::Weight, init.uniform(&[3, c], c)),
            out_bias: store.insert("tcn.out.bias", ParamRole::Weight, init.uniform(&[3], c)),
        };

        let masks = (config.variant == Variant::Ses)
            .then(|| (0..config.gcn_layers).map(|_| MaskPair::ones(v, t)).collect());
        Ok(Self {
            config,
            store,
            masks,
            layers,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn masks(&self) -> Option<&[MaskPair]> {
        self.masks.as_deref()
    }

    /// SHA-256 over every stored tensor's name, shape and value bits, as
    /// lowercase hex. Gradients and frozen flags do not contribute.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config.variant.name().as_bytes());
        for e in self.store.entries() {
            h.update((e.name.len() as u64).to_le_bytes());
            h.update(e.name.as_bytes());
            h.update((e.tensor.value.rank() as u64).to_le_bytes());
            for d in e.tensor.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in e.tensor.value.data() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn adjacency(&self, layer: usize) -> Adjacency {
        self.layers[layer].adjacency
    }

    /// Installs one mask pair per layer. Masked adjacency entries are set to
    /// zero and frozen, so the optimizer never touches them again.
    pub fn set_masks(&mut self, masks: Vec<MaskPair>) -> Result<()> {
        if self.config.variant != Variant::Ses {
            return Err(Error::contract(format!(
                "masks require the ses variant, model is {}",
                self.config.variant.name()
            )));
        }
        if masks.len() != self.config.gcn_layers {
            return Err(Error::contract(format!(
                "{} mask pairs for {} layers",
                masks.len(),
                self.config.gcn_layers
            )));
        }
        for m in &masks {
            m.validate(self.config.joints, self.config.observed_frames)?;
        }
        for (layer, m) in self.layers.iter().zip(&masks) {
            let Adjacency::Factored { spatial, temporal } = layer.adjacency else {
                unreachable!("ses layers are factored");
            };
            for (id, mask) in [(spatial, &m.spatial), (temporal, &m.temporal)] {
                let t = self.store.get_mut(id);
                let frozen: Vec<bool> = mask.data().iter().map(|x| *x == 0.0).collect();
                for (v, f) in t.value.data_mut().iter_mut().zip(&frozen) {
                    if *f {
                        *v = 0.0;
                    }
                }
                t.frozen = frozen.iter().any(|f| *f).then_some(frozen);
            }
        }
        self.masks = Some(masks);
        Ok(())
    }

    /// Encoder over `x = [N, 3, V, T]` (normalized coordinates).
    pub fn encoder_forward(&self, tape: &mut Tape, bound: &Bound, x: Var, mode: Mode) -> Result<(Var, Vec<BatchStats>)> {
        let cfg = &self.config;
        let want = [cfg.joints, cfg.observed_frames];
        let xs = tape.value(x).shape();
        if xs.len() != 4 || xs[1] != 3 || xs[2..] != want {
            return Err(Error::ShapeMismatch {
                op: "encoder_forward",
                left: vec![0, 3, cfg.joints, cfg.observed_frames],
                right: xs.to_vec(),
            });
        }
        let mut stats = Vec::new();
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let mix = MixWeights {
                weight: bound.var(layer.mix.weight),
                bias: bound.var(layer.mix.bias),
                slope: bound.var(layer.mix.slope),
            };
            let y = match (layer.adjacency, layer.depthwise) {
                (Adjacency::Full(a), _) => gcn_layer_forward(tape, h, bound.var(a), &mix)?,
                (Adjacency::Factored { spatial, temporal }, None) => {
                    sts_layer_forward(tape, h, bound.var(spatial), bound.var(temporal), &mix)?
                }
                (Adjacency::Factored { spatial, temporal }, Some((w, b, groups))) => {
                    let dw = DepthwiseWeights {
                        weight: bound.var(w),
                        bias: bound.var(b),
                        groups,
                    };
                    let (a_s, a_t) = (bound.var(spatial), bound.var(temporal));
                    match &self.masks {
                        Some(masks) => {
                            let m_s = tape.constant(masks[l].spatial.clone());
                            let m_t = tape.constant(masks[l].temporal.clone());
                            ses_block_forward(tape, h, a_s, a_t, m_s, m_t, &dw, &mix)?
                        }
                        None => dw_block_forward(tape, h, a_s, a_t, &dw, &mix)?,
                    }
                }
            };
            let (gamma, beta) = (bound.var(layer.bn_gamma), bound.var(layer.bn_beta));
            let (y, batch) = match mode {
                Mode::Train => tape.batch_norm(y, gamma, beta, BN_EPS, BatchNormMode::Train)?,
                Mode::Eval => {
                    let mean = self.store.get(layer.bn_mean).value.data();
                    let var = self.store.get(layer.bn_var).value.data();
                    tape.batch_norm(y, gamma, beta, BN_EPS, BatchNormMode::Eval { mean, var })?
                }
            };
            stats.extend(batch);
            let skip = match layer.residual {
                Some((w, b)) => {
                    let r = tape.channel_mix(h, bound.var(w), 1)?;
                    tape.channel_bias(r, bound.var(b))?
                }
                None => h,
            };
            h = tape.add(y, skip)?;
        }
        Ok((h, stats))
    }

    /// Decoder from `[N, C, V, T]` to `[N, 3, V, K]` (normalized coordinates).
    pub fn tcn_decode(&self, tape: &mut Tape, bound: &Bound, h: Var) -> Result<Var> {
        let d = &self.decoder;
        let mut y = tape.last_axis_map(h, bound.var(d.remap))?;
        for (slope, (kernel, bias)) in d.slopes.iter().zip(&d.convs) {
            y = tape.prelu(y, bound.var(*slope))?;
            y = tape.conv_time(y, bound.var(*kernel))?;
            y = tape.channel_bias(y, bound.var(*bias))?;
        }
        let y = tape.channel_mix(y, bound.var(d.out_weight), 1)?;
        tape.channel_bias(y, bound.var(d.out_bias))
    }

    /// Records a full forward pass over a batch of observed windows.
    pub fn forward(&self, observed: &[&Poses], mode: Mode) -> Result<Forward> {
        let cfg = &self.config;
        if observed.is_empty() {
            return Err(Error::Empty("forward batch".into()));
        }
        for p in observed {
            if p.frames() != cfg.observed_frames || p.joints() != cfg.joints {
                return Err(Error::ShapeMismatch {
                    op: "model_forward",
                    left: vec![cfg.observed_frames, cfg.joints, 3],
                    right: vec![p.frames(), p.joints(), 3],
                });
            }
        }
        let (n, v, t, k) = (observed.len(), cfg.joints, cfg.observed_frames, cfg.forecast_frames);
        let s = cfg.input_scale_mm;
        let mut input = vec![0.0; n * 3 * v * t];
        let mut anchor = vec![0.0; n * 3 * v * k];
        for (b, p) in observed.iter().enumerate() {
            for j in 0..v {
                let last = p.point(t - 1, j);
                for (c, &l) in last.iter().enumerate() {
                    let row = ((b * 3 + c) * v + j) * t;
                    for f in 0..t {
                        input[row + f] = (p.point(f, j)[c] - l) / s;
                    }
                    let row = ((b * 3 + c) * v + j) * k;
                    anchor[row..row + k].fill(l);
                }
            }
        }
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let x = tape.constant(Tensor::new(vec![n, 3, v, t], input)?);
        let (h, batch_stats) = self.encoder_forward(&mut tape, &bound, x, mode)?;
        let out = self.tcn_decode(&mut tape, &bound, h)?;
        let out = tape.scale(out, s)?;
        let anchor = tape.constant(Tensor::new(vec![n, 3, v, k], anchor)?);
        let prediction = tape.add(out, anchor)?;
        Ok(Forward {
            tape,
            bound,
            prediction,
            batch_stats,
        })
    }

    /// Inference: `K` forecast frames per observed window, millimeters.
    pub fn predict(&self, observed: &[&Poses]) -> Result<Vec<Poses>> {
        let f = self.forward(observed, Mode::Eval)?;
        Ok(tensor_to_poses(f.tape.value(f.prediction)))
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != self.layers.len() {
            return Err(Error::contract(format!(
                "{} batch statistics for {} layers",
                stats.len(),
                self.layers.len()
            )));
        }
        for (layer, s) in self.layers.iter().zip(stats) {
            let unbias = if s.count > 1 {
                s.count as f64 / (s.count - 1) as f64
            } else {
                1.0
            };
            let mean = &mut self.store.get_mut(layer.bn_mean).value;
            for (r, m) in mean.data_mut().iter_mut().zip(&s.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            let var = &mut self.store.get_mut(layer.bn_var).value;
            for (r, v) in var.data_mut().iter_mut().zip(&s.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
            }
        }
        Ok(())
    }
}

/// `[N, 3, V, F]` to one `Poses` per batch entry.
pub fn tensor_to_poses(t: &Tensor) -> Vec<Poses> {
    let [n, _, v, f] = *t.shape() else {
        panic!("expected [N, 3, V, F], got {:?}", t.shape());
    };
    let d = t.data();
    (0..n)
        .map(|b| {
            let mut p = Poses::zeros(f, v);
            for j in 0..v {
                for fr in 0..f {
                    let at = |c: usize| d[((b * 3 + c) * v + j) * f + fr];
                    p.set_point(fr, j, [at(0), at(1), at(2)]);
                }
            }
            p
        })
        .collect()
}

/// One `Poses` per batch entry to `[N, 3, V, F]`.
pub fn poses_to_tensor(poses: &[&Poses]) -> Result<Tensor> {
    let Some(first) = poses.first() else {
        return Err(Error::Empty("pose batch".into()));
    };
    let (f, v) = (first.frames(), first.joints());
    let mut out = vec![0.0; poses.len() * 3 * v * f];
    for (b, p) in poses.iter().enumerate() {
        if p.frames() != f || p.joints() != v {
            return Err(Error::ShapeMismatch {
                op: "poses_to_tensor",
                left: vec![f, v, 3],
                right: vec![p.frames(), p.joints(), 3],
            });
        }
        for j in 0..v {
            for fr in 0..f {
                let pt = p.point(fr, j);
                for c in 0..3 {
                    out[((b * 3 + c) * v + j) * f + fr] = pt[c];
                }
            }
        }
    }
    Tensor::new(vec![poses.len(), 3, v, f], out)
}

#[cfg(test)]
mod tests;
