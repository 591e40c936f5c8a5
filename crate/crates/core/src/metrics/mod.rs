//! Forecast error measures, the training loss, the zero-velocity baseline
//! and the evaluation report.

mod report;

use alloc::format;
use alloc::vec::Vec;

use crate::data::{Poses, WindowedExample};
use crate::math::{norm3, sub3};
use crate::model::SesGcnModel;
use crate::numerics::{Tape, Var};
use crate::{Error, Result};

pub use report::{evaluate, ActionRow, EvalReport, JointRow, LatencyStats};

/// Anything that maps observed windows to forecast frames.
///
/// Implementations receive whole windows so that [`Oracle`] can replay the
/// ground truth; real forecasters read only `input`.
pub trait Forecaster {
    fn forecast(&self, batch: &[&WindowedExample]) -> Result<Vec<Poses>>;
}

impl Forecaster for SesGcnModel {
    fn forecast(&self, batch: &[&WindowedExample]) -> Result<Vec<Poses>> {
        let inputs: Vec<&Poses> = batch.iter().map(|w| &w.input).collect();
        self.predict(&inputs)
    }
}

/// Repeats the last observed pose for every target frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroVelocity;

impl Forecaster for ZeroVelocity {
    fn forecast(&self, batch: &[&WindowedExample]) -> Result<Vec<Poses>> {
        batch
            .iter()
            .map(|w| zero_velocity_forecast(&w.input, w.target.frames()))
            .collect()
    }
}

/// Returns the ground-truth future. Only useful as a test oracle.
#[derive(Debug, Clone, Copy, Default)]
pub struct Oracle;

impl Forecaster for Oracle {
    fn forecast(&self, batch: &[&WindowedExample]) -> Result<Vec<Poses>> {
        Ok(batch.iter().map(|w| w.target.clone()).collect())
    }
}

fn check_shapes(op: &str, pred: &Poses, truth: &Poses) -> Result<()> {
    if pred.frames() != truth.frames() || pred.joints() != truth.joints() {
        return Err(Error::contract(format!(
            "{op}: prediction is [{}, {}, 3], truth is [{}, {}, 3]",
            pred.frames(),
            pred.joints(),
            truth.frames(),
            truth.joints()
        )));
    }
    Ok(())
}

/// Euclidean error of every joint at frame `t`, millimeters.
pub fn joint_errors_at_frame(pred: &Poses, truth: &Poses, t: usize) -> Result<Vec<f64>> {
    check_shapes("mpjpe", pred, truth)?;
    if t >= pred.frames() {
        return Err(Error::contract(format!(
            "mpjpe: frame {t} outside a {}-frame forecast",
            pred.frames()
        )));
    }
    Ok((0..pred.joints())
        .map(|v| norm3(sub3(pred.point(t, v), truth.point(t, v))))
        .collect())
}

/// Mean per-joint position error at zero-based forecast frame `t`.
pub fn mpjpe_at_frame(pred: &Poses, truth: &Poses, t: usize) -> Result<f64> {
    let errs = joint_errors_at_frame(pred, truth, t)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// MPJPE averaged over every forecast frame.
pub fn sequence_loss(pred: &Poses, truth: &Poses) -> Result<f64> {
    check_shapes("sequence_loss", pred, truth)?;
    let mut total = 0.0;
    for t in 0..pred.frames() {
        total += mpjpe_at_frame(pred, truth, t)?;
    }
    Ok(total / pred.frames() as f64)
}

/// [`sequence_loss`] recorded on a tape, averaged over the batch.
///
/// `pred` and `truth` are `[N, 3, V, K]`.
pub fn sequence_loss_on_tape(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    let (ps, ts) = (tape.value(pred).shape(), tape.value(truth).shape());
    if ps.len() != 4 || ps[1] != 3 || ps != ts {
        return Err(Error::ShapeMismatch {
            op: "sequence_loss",
            left: ps.to_vec(),
            right: ts.to_vec(),
        });
    }
    let diff = tape.sub(pred, truth)?;
    let dist = tape.channel_norm(diff)?;
    tape.mean(dist)
}

/// `k` copies of the last observed frame.
pub fn zero_velocity_forecast(observed: &Poses, k: usize) -> Result<Poses> {
    if observed.frames() == 0 {
        return Err(Error::Empty("observed window".into()));
    }
    Ok(observed.repeat_frame(observed.frames() - 1, k))
}
