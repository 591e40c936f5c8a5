//! Single-layer forwards for the four encoder variants.
//!
//! All functions take batched activations `[N, C, V, T]` already on a tape.

use crate::numerics::{Tape, Var};
use crate::{Error, Result};

/// Pointwise `C_in → C_out` map with bias and a per-channel PReLU slope.
#[derive(Debug, Clone, Copy)]
pub struct MixWeights {
    /// `[C_out, C_in]`
    pub weight: Var,
    /// `[C_out]`
    pub bias: Var,
    /// `[C_out]`
    pub slope: Var,
}

/// Grouped 1×1 kernel applied inside a depth-wise block.
#[derive(Debug, Clone, Copy)]
pub struct DepthwiseWeights {
    /// `[C, C / groups]`
    pub weight: Var,
    /// `[C]`
    pub bias: Var,
    pub groups: usize,
}

fn mix_activate(tape: &mut Tape, x: Var, w: &MixWeights) -> Result<Var> {
    let y = tape.channel_mix(x, w.weight, 1)?;
    let y = tape.channel_bias(y, w.bias)?;
    tape.prelu(y, w.slope)
}

fn vt(tape: &Tape, x: Var) -> Result<[usize; 4]> {
    match *tape.value(x).shape() {
        [n, c, v, t] => Ok([n, c, v, t]),
        ref s => Err(Error::ShapeMismatch {
            op: "graph_layer",
            left: s.to_vec(),
            right: alloc::vec![0, 0, 0, 0],
        }),
    }
}

/// PReLU of `W · (A X) + b` with `A` the full `[V·T, V·T]` adjacency acting on
/// the joint-major flattened node axis (node `v·T + t`).
pub fn gcn_layer_forward(tape: &mut Tape, x: Var, adjacency: Var, w: &MixWeights) -> Result<Var> {
    let [n, c, v, t] = vt(tape, x)?;
    let flat = tape.reshape(x, &[n, c, v * t])?;
    let mixed = tape.last_axis_map(flat, adjacency)?;
    let mixed = tape.reshape(mixed, &[n, c, v, t])?;
    mix_activate(tape, mixed, w)
}

/// `A_s A_t X`: frames mixed per joint first, then joints mixed per frame.
pub fn factored_mix(tape: &mut Tape, x: Var, a_s: Var, a_t: Var) -> Result<Var> {
    let y = tape.temporal_mix(x, a_t)?;
    tape.spatial_mix(y, a_s)
}

/// PReLU of `W · (A_s A_t X) + b`.
pub fn sts_layer_forward(tape: &mut Tape, x: Var, a_s: Var, a_t: Var, w: &MixWeights) -> Result<Var> {
    let z = factored_mix(tape, x, a_s, a_t)?;
    mix_activate(tape, z, w)
}

/// `H = relu6(W_dw (A_s A_t X) + b_dw)`, then PReLU of `W_mlp H + b_mlp`.
pub fn dw_block_forward(
    tape: &mut Tape,
    x: Var,
    a_s: Var,
    a_t: Var,
    dw: &DepthwiseWeights,
    mlp: &MixWeights,
) -> Result<Var> {
    let c = vt(tape, x)?[1];
    if dw.groups == 0 || c % dw.groups != 0 {
        return Err(Error::config(alloc::format!(
            "{} depth-wise groups do not divide {} channels",
            dw.groups,
            c
        )));
    }
    let z = factored_mix(tape, x, a_s, a_t)?;
    let h = tape.channel_mix(z, dw.weight, dw.groups)?;
    let h = tape.channel_bias(h, dw.bias)?;
    let h = tape.relu6(h)?;
    mix_activate(tape, h, mlp)
}

/// [`dw_block_forward`] on the masked factors `M_s ⊙ A_s`, `M_t ⊙ A_t`.
#[allow(clippy::too_many_arguments)]
pub fn ses_block_forward(
    tape: &mut Tape,
    x: Var,
    a_s: Var,
    a_t: Var,
    m_s: Var,
    m_t: Var,
    dw: &DepthwiseWeights,
    mlp: &MixWeights,
) -> Result<Var> {
    let a_s = tape.mask(a_s, m_s)?;
    let a_t = tape.mask(a_t, m_t)?;
    dw_block_forward(tape, x, a_s, a_t, dw, mlp)
}
