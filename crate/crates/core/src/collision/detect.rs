use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{capsule_clearance, Capsule, ClearanceMode, CobotTrajectory};
use crate::data::{window_sequences, MotionSequence, Poses, SkeletonTopology, WindowedExample};
use crate::math::mm_to_m;
use crate::metrics::Forecaster;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollisionConfig {
    pub threshold_m: f64,
    pub clearance_mode: ClearanceMode,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self {
            threshold_m: 0.13,
            clearance_mode: ClearanceMode::SurfaceDistance,
        }
    }
}

impl CollisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_m > 0.0) || !self.threshold_m.is_finite() {
            return Err(Error::config(format!(
                "collision threshold must be > 0 m, got {}",
                self.threshold_m
            )));
        }
        Ok(())
    }
}

/// Smallest clearance over a run of frames, with where it happened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub flag: bool,
    pub min_clearance_m: f64,
    /// Frame index within the inspected poses.
    pub frame: usize,
    /// Index into the topology's bones.
    pub limb: usize,
    /// Index into the cobot's links.
    pub link: usize,
}

/// One capsule per bone of the pose at `frame`, meters.
pub fn human_capsules(poses: &Poses, frame: usize, topology: &SkeletonTopology) -> Vec<Capsule> {
    topology
        .bones
        .iter()
        .map(|b| Capsule {
            a: mm_to_m(poses.point(frame, b.parent)),
            b: mm_to_m(poses.point(frame, b.child)),
            radius: b.radius_m,
        })
        .collect()
}

/// (clearance, limb, link) minimum of one frame; ties keep the first pair.
fn frame_minimum(humans: &[Capsule], links: &[Capsule], mode: ClearanceMode) -> (f64, usize, usize) {
    let mut best = (f64::INFINITY, 0, 0);
    for (hi, h) in humans.iter().enumerate() {
        for (li, l) in links.iter().enumerate() {
            let c = capsule_clearance(h, l, mode);
            if c < best.0 {
                best = (c, hi, li);
            }
        }
    }
    best
}

/// Whether any limb comes closer than the threshold to any cobot link in any
/// frame of `poses` (millimeters); `cobot` must hold the same frames.
pub fn detect_collision(
    poses: &Poses,
    topology: &SkeletonTopology,
    cobot: &CobotTrajectory,
    cfg: &CollisionConfig,
) -> Result<Detection> {
    if cobot.frames() != poses.frames() {
        return Err(Error::contract(format!(
            "forecast has {} frames, cobot window has {}",
            poses.frames(),
            cobot.frames()
        )));
    }
    if poses.joints() != topology.joints() {
        return Err(Error::contract(format!(
            "pose has {} joints, topology has {}",
            poses.joints(),
            topology.joints()
        )));
    }
    let mut best = Detection {
        flag: false,
        min_clearance_m: f64::INFINITY,
        frame: 0,
        limb: 0,
        link: 0,
    };
    for f in 0..poses.frames() {
        let humans = human_capsules(poses, f, topology);
        let (c, limb, link) = frame_minimum(&humans, cobot.links_at(f), cfg.clearance_mode);
        if c < best.min_clearance_m {
            best = Detection {
                flag: false,
                min_clearance_m: c,
                frame: f,
                limb,
                link,
            };
        }
    }
    best.flag = best.min_clearance_m < cfg.threshold_m;
    Ok(best)
}

/// Frames of `seq` whose true pose is within the threshold of the cobot,
/// the same test [`detect_collision`] applies to forecasts.
pub fn label_collisions(
    seq: &MotionSequence,
    topology: &SkeletonTopology,
    cobot: &CobotTrajectory,
    cfg: &CollisionConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    check_cobot(seq, cobot, seq.frames())?;
    let mut out = Vec::new();
    for f in 0..seq.frames() {
        let humans = human_capsules(&seq.poses, f, topology);
        let (c, _, _) = frame_minimum(&humans, cobot.links_at(f), cfg.clearance_mode);
        if c < cfg.threshold_m {
            out.push(f);
        }
    }
    Ok(out)
}

fn check_cobot(seq: &MotionSequence, cobot: &CobotTrajectory, needed: usize) -> Result<()> {
    if (cobot.fps() - seq.fps).abs() > 1e-9 * seq.fps {
        return Err(Error::config(format!(
            "cobot for sequence {} runs at {} fps, the sequence at {}",
            seq.id,
            cobot.fps(),
            seq.fps
        )));
    }
    if cobot.frames() < needed {
        return Err(Error::config(format!(
            "cobot for sequence {} has {} frames, {needed} needed",
            seq.id,
            cobot.frames()
        )));
    }
    Ok(())
}

/// Outcome of one forecast window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLog {
    pub sequence: String,
    pub start_frame: usize,
    pub predicted: bool,
    pub truth: bool,
    pub min_clearance_m: f64,
    /// Absolute frame of the source sequence.
    pub witness_frame: usize,
    pub witness_limb: usize,
    pub witness_link: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub windows: Vec<WindowLog>,
}

/// Precision, recall and F1; a ratio with a zero denominator is 0.
pub fn scores(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Window lengths and stride for collision scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionWindows {
    pub observed: usize,
    pub forecast: usize,
    pub stride: usize,
}

impl Default for CollisionWindows {
    fn default() -> Self {
        Self {
            observed: 10,
            forecast: 25,
            stride: 10,
        }
    }
}

/// Forecasts every window of `sequences` and scores the collision flags
/// against the labels.
///
/// A window is truly positive when a labeled collision frame falls in its
/// forecast span; it is predicted positive when [`detect_collision`] fires
/// on the forecast against the cobot frames of that span.
pub fn evaluate_collisions<F: Forecaster + ?Sized>(
    forecaster: &F,
    sequences: &[MotionSequence],
    cobots: &BTreeMap<String, CobotTrajectory>,
    topology: &SkeletonTopology,
    cfg: &CollisionConfig,
    windows: CollisionWindows,
    batch_size: usize,
) -> Result<CollisionReport> {
    cfg.validate()?;
    if batch_size == 0 {
        return Err(Error::config("collision batch size must be positive"));
    }
    for seq in sequences {
        let cobot = cobots
            .get(&seq.id)
            .ok_or_else(|| Error::config(format!("no cobot trajectory for sequence {}", seq.id)))?;
        check_cobot(seq, cobot, seq.frames())?;
    }
    let examples = window_sequences(
        sequences,
        windows.observed,
        windows.forecast,
        windows.stride,
        false,
    )?;
    let by_id: BTreeMap<&str, &MotionSequence> =
        sequences.iter().map(|s| (s.id.as_str(), s)).collect();

    let mut logs = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size) {
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
            let seq = by_id[w.sequence_id.as_str()];
            let span = w.start_frame + windows.observed;
            let cobot = cobots[&seq.id].window(span, windows.forecast)?;
            let d = detect_collision(pred, topology, &cobot, cfg)?;
            let truth = seq
                .collision_frames
                .iter()
                .any(|&c| c >= span && c < span + windows.forecast);
            logs.push(WindowLog {
                sequence: seq.id.clone(),
                start_frame: w.start_frame,
                predicted: d.flag,
                truth,
                min_clearance_m: d.min_clearance_m,
                witness_frame: span + d.frame,
                witness_limb: d.limb,
                witness_link: d.link,
            });
        }
    }
    let count = |p: bool, t: bool| logs.iter().filter(|l| l.predicted == p && l.truth == t).count();
    let (tp, fp, fn_, tn) = (count(true, true), count(true, false), count(false, true), count(false, false));
    let (precision, recall, f1) = scores(tp, fp, fn_);
    Ok(CollisionReport {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
        windows: logs,
    })
}
