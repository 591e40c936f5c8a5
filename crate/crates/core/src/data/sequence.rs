use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::Vec3;
use crate::{Error, Result};

/// Joint positions over frames, stored `[frame][joint][xyz]`, millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Poses {
    frames: usize,
    joints: usize,
    data: Vec<f64>,
}

impl Poses {
    pub fn new(frames: usize, joints: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * joints * 3 {
            return Err(Error::ShapeMismatch {
                op: "poses",
                left: vec![frames, joints, 3],
                right: vec![data.len()],
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::contract(alloc::format!(
                "pose value at frame {} joint {} is not finite",
                i / (joints * 3),
                (i / 3) % joints
            )));
        }
        Ok(Self {
            frames,
            joints,
            data,
        })
    }

    pub fn zeros(frames: usize, joints: usize) -> Self {
        Self {
            frames,
            joints,
            data: vec![0.0; frames * joints * 3],
        }
    }

    pub fn from_frames(frames: &[Vec<Vec3>]) -> Result<Self> {
        let joints = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != joints) {
            return Err(Error::contract("frames disagree on joint count"));
        }
        let data = frames.iter().flatten().flatten().copied().collect();
        Self::new(frames.len(), joints, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn point(&self, frame: usize, joint: usize) -> Vec3 {
        let at = (frame * self.joints + joint) * 3;
        [self.data[at], self.data[at + 1], self.data[at + 2]]
    }

    pub fn set_point(&mut self, frame: usize, joint: usize, p: Vec3) {
        assert!(p.iter().all(|x| x.is_finite()), "non-finite pose value");
        let at = (frame * self.joints + joint) * 3;
        self.data[at..at + 3].copy_from_slice(&p);
    }

    /// The `[joint][xyz]` block of one frame.
    pub fn frame(&self, frame: usize) -> &[f64] {
        let w = self.joints * 3;
        &self.data[frame * w..(frame + 1) * w]
    }

    /// Copy of `len` frames starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Poses> {
        if start + len > self.frames {
            return Err(Error::contract(alloc::format!(
                "frames {start}..{} out of range for {} frames",
                start + len,
                self.frames
            )));
        }
        let w = self.joints * 3;
        Ok(Poses {
            frames: len,
            joints: self.joints,
            data: self.data[start * w..(start + len) * w].to_vec(),
        })
    }

    /// `len` copies of frame `frame`.
    pub fn repeat_frame(&self, frame: usize, len: usize) -> Poses {
        let f = self.frame(frame);
        let mut data = Vec::with_capacity(len * f.len());
        for _ in 0..len {
            data.extend_from_slice(f);
        }
        Poses {
            frames: len,
            joints: self.joints,
            data,
        }
    }
}

/// A recorded or generated motion sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub id: String,
    pub fps: f64,
    pub subject_id: String,
    pub action_label: String,
    pub poses: Poses,
    /// Sorted, deduplicated frame indices labeled as collisions.
    pub collision_frames: Vec<usize>,
}

impl MotionSequence {
    pub fn new(
        id: impl Into<String>,
        fps: f64,
        subject_id: impl Into<String>,
        action_label: impl Into<String>,
        poses: Poses,
        mut collision_frames: Vec<usize>,
    ) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::contract(alloc::format!("fps must be positive, got {fps}")));
        }
        if poses.frames() == 0 {
            return Err(Error::contract("sequence has no frames"));
        }
        collision_frames.sort_unstable();
        collision_frames.dedup();
        if let Some(&f) = collision_frames.last() {
            if f >= poses.frames() {
                return Err(Error::contract(alloc::format!(
                    "collision frame {f} outside 0..{}",
                    poses.frames()
                )));
            }
        }
        Ok(Self {
            id: id.into(),
            fps,
            subject_id: subject_id.into(),
            action_label: action_label.into(),
            poses,
            collision_frames,
        })
    }

    pub fn frames(&self) -> usize {
        self.poses.frames()
    }

    pub fn joints(&self) -> usize {
        self.poses.joints()
    }
}
