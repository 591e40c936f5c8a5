use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::{Error, Result};

/// Where a mask came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskProvenance {
    /// Content hash of the teacher's parameters, or `"none"`.
    pub teacher_hash: String,
    pub epsilon_spatial: f64,
    pub epsilon_temporal: f64,
}

/// Binary masks for one layer's `A_s` (`[V, V, T]`) and `A_t` (`[T, T, V]`).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub spatial: Tensor,
    pub temporal: Tensor,
    pub provenance: MaskProvenance,
}

impl MaskPair {
    pub fn ones(joints: usize, frames: usize) -> Self {
        Self {
            spatial: Tensor::full(&[joints, joints, frames], 1.0),
            temporal: Tensor::full(&[frames, frames, joints], 1.0),
            provenance: MaskProvenance {
                teacher_hash: "none".into(),
                epsilon_spatial: 0.0,
                epsilon_temporal: 0.0,
            },
        }
    }

    pub fn validate(&self, joints: usize, frames: usize) -> Result<()> {
        for (m, want) in [
            (&self.spatial, [joints, joints, frames]),
            (&self.temporal, [frames, frames, joints]),
        ] {
            if m.shape() != want {
                return Err(Error::ShapeMismatch {
                    op: "mask",
                    left: want.to_vec(),
                    right: m.shape().to_vec(),
                });
            }
            if let Some(i) = m.data().iter().position(|x| *x != 0.0 && *x != 1.0) {
                return Err(Error::contract(alloc::format!(
                    "mask entry {i} is {}, expected 0 or 1",
                    m.data()[i]
                )));
            }
        }
        Ok(())
    }

    pub fn zeros_spatial(&self) -> usize {
        self.spatial.data().iter().filter(|x| **x == 0.0).count()
    }

    pub fn zeros_temporal(&self) -> usize {
        self.temporal.data().iter().filter(|x| **x == 0.0).count()
    }
}
