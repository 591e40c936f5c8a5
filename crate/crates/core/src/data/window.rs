use alloc::string::String;
use alloc::vec::Vec;

use super::{MotionSequence, Poses};
use crate::{math, Error, Result};

/// Seconds after a labeled collision during which the robot is stopped.
pub const COLLISION_GUARD_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedExample {
    pub sequence_id: String,
    pub subject_id: String,
    pub action_label: String,
    pub start_frame: usize,
    /// `T` observed frames.
    pub input: Poses,
    /// The `K` frames that follow `input`.
    pub target: Poses,
}

/// Cuts `t + k` frame windows at `stride`.
///
/// With `exclude_collisions`, a window is dropped when it touches any frame in
/// `[c, c + round(fps * COLLISION_GUARD_S)]` for a labeled collision `c`.
pub fn window_sequences<'a>(
    seqs: impl IntoIterator<Item = &'a MotionSequence>,
    t: usize,
    k: usize,
    stride: usize,
    exclude_collisions: bool,
) -> Result<Vec<WindowedExample>> {
    if stride == 0 || t == 0 || k == 0 {
        return Err(Error::config("window lengths and stride must be positive"));
    }
    let span = t + k;
    let mut out = Vec::new();
    for seq in seqs {
        if seq.frames() < span {
            continue;
        }
        let guard = math::round(seq.fps * COLLISION_GUARD_S) as usize;
        let blocked: Vec<(usize, usize)> = if exclude_collisions {
            seq.collision_frames.iter().map(|&c| (c, c + guard)).collect()
        } else {
            Vec::new()
        };
        for start in (0..=seq.frames() - span).step_by(stride) {
            let end = start + span - 1;
            if blocked.iter().any(|&(a, b)| start <= b && a <= end) {
                continue;
            }
            out.push(WindowedExample {
                sequence_id: seq.id.clone(),
                subject_id: seq.subject_id.clone(),
                action_label: seq.action_label.clone(),
                start_frame: start,
                input: seq.poses.slice(start, t)?,
                target: seq.poses.slice(start + t, k)?,
            });
        }
    }
    Ok(out)
}
