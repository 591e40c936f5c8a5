use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{joint_errors_at_frame, zero_velocity_forecast, Forecaster};
use crate::data::WindowedExample;
use crate::model::ParameterBreakdown;
use crate::{Error, Result};

/// MPJPE of one action class. Vectors are indexed like
/// [`EvalReport::horizons`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRow {
    pub action: String,
    pub windows: usize,
    pub mpjpe_mm: Vec<f64>,
    pub zero_velocity_mm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRow {
    pub joint: usize,
    pub horizon_frames: usize,
    pub mean_error_mm: f64,
}

/// Wall-clock cost of one single-window forward pass, seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub warmup: usize,
    pub trials: usize,
    pub mean_s: f64,
    pub p95_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Horizons in frames; horizon `h` is zero-based forecast frame `h - 1`.
    pub horizons: Vec<usize>,
    pub windows: usize,
    pub overall_mpjpe_mm: Vec<f64>,
    pub zero_velocity_mpjpe_mm: Vec<f64>,
    pub per_action: Vec<ActionRow>,
    pub per_joint: Vec<JointRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<ParameterBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
}

impl EvalReport {
    /// Overall model MPJPE at horizon `h` frames, if it was evaluated.
    pub fn overall_at(&self, h: usize) -> Option<f64> {
        let i = self.horizons.iter().position(|x| *x == h)?;
        Some(self.overall_mpjpe_mm[i])
    }

    pub fn zero_velocity_at(&self, h: usize) -> Option<f64> {
        let i = self.horizons.iter().position(|x| *x == h)?;
        Some(self.zero_velocity_mpjpe_mm[i])
    }
}

#[derive(Default)]
struct Sums {
    windows: usize,
    model: Vec<f64>,
    baseline: Vec<f64>,
}

impl Sums {
    fn add(&mut self, model: &[f64], baseline: &[f64]) {
        if self.model.is_empty() {
            self.model = vec![0.0; model.len()];
            self.baseline = vec![0.0; baseline.len()];
        }
        self.windows += 1;
        for (s, x) in self.model.iter_mut().zip(model) {
            *s += x;
        }
        for (s, x) in self.baseline.iter_mut().zip(baseline) {
            *s += x;
        }
    }

    fn means(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.windows as f64;
        (
            self.model.iter().map(|s| s / n).collect(),
            self.baseline.iter().map(|s| s / n).collect(),
        )
    }
}

/// MPJPE of `forecaster` over `windows` at each horizon, overall and per
/// action, with zero-velocity columns and a per-joint profile.
///
/// Windows are forecast `batch_size` at a time and every sum runs in window
/// order, so the report is a pure function of its inputs.
pub fn evaluate<F: Forecaster + ?Sized>(
    forecaster: &F,
    windows: &[WindowedExample],
    horizons: &[usize],
    batch_size: usize,
) -> Result<EvalReport> {
    let Some(first) = windows.first() else {
        return Err(Error::Empty("evaluation set has no windows".into()));
    };
    let k = first.target.frames();
    let v = first.target.joints();
    if horizons.is_empty() {
        return Err(Error::config("at least one horizon is required"));
    }
    for &h in horizons {
        if h == 0 || h > k {
            return Err(Error::config(format!("horizon {h} outside 1..={k} forecast frames")));
        }
    }
    if batch_size == 0 {
        return Err(Error::config("evaluation batch size must be positive"));
    }

    let mut overall = Sums::default();
    let mut actions: BTreeMap<&str, Sums> = BTreeMap::new();
    let mut joint_sums = vec![0.0; horizons.len() * v];
    for chunk in windows.chunks(batch_size) {
        let batch: Vec<&WindowedExample> = chunk.iter().collect();
        let preds = forecaster.forecast(&batch)?;
        if preds.len() != batch.len() {
            return Err(Error::contract(format!(
                "forecaster returned {} predictions for {} windows",
                preds.len(),
                batch.len()
            )));
        }
        for (w, pred) in batch.iter().zip(&preds) {
            let baseline = zero_velocity_forecast(&w.input, w.target.frames())?;
            let mut model_row = Vec::with_capacity(horizons.len());
            let mut base_row = Vec::with_capacity(horizons.len());
            for (hi, &h) in horizons.iter().enumerate() {
                let errs = joint_errors_at_frame(pred, &w.target, h - 1)?;
                if errs.len() != v {
                    return Err(Error::contract(format!(
                        "window of sequence {} has {} joints, expected {v}",
                        w.sequence_id,
                        errs.len()
                    )));
                }
                for (s, e) in joint_sums[hi * v..(hi + 1) * v].iter_mut().zip(&errs) {
                    *s += e;
                }
                model_row.push(errs.iter().sum::<f64>() / v as f64);
                let base = joint_errors_at_frame(&baseline, &w.target, h - 1)?;
                base_row.push(base.iter().sum::<f64>() / v as f64);
            }
            overall.add(&model_row, &base_row);
            actions.entry(w.action_label.as_str()).or_default().add(&model_row, &base_row);
        }
    }

    let n = overall.windows as f64;
    let (overall_mpjpe_mm, zero_velocity_mpjpe_mm) = overall.means();
    let per_action = actions
        .into_iter()
        .map(|(action, s)| {
            let (mpjpe_mm, zero_velocity_mm) = s.means();
            ActionRow {
                action: action.into(),
                windows: s.windows,
                mpjpe_mm,
                zero_velocity_mm,
            }
        })
        .collect();
    let per_joint = horizons
        .iter()
        .enumerate()
        .flat_map(|(hi, &h)| {
            let sums = &joint_sums;
            (0..v).map(move |j| JointRow {
                joint: j,
                horizon_frames: h,
                mean_error_mm: sums[hi * v + j] / n,
            })
        })
        .collect();
    Ok(EvalReport {
        horizons: horizons.to_vec(),
        windows: overall.windows,
        overall_mpjpe_mm,
        zero_velocity_mpjpe_mm,
        per_action,
        per_joint,
        parameters: None,
        latency: None,
    })
}
