//! JSON mask files: per layer, run-length-encoded bit arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sesgcn_core::model::{MaskPair, MaskProvenance};
use sesgcn_core::numerics::Tensor;

use crate::error::{AppError, AppResult};

/// A 0/1 array as alternating run lengths starting with the value `first`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RleBits {
    pub shape: Vec<usize>,
    pub first: u8,
    pub runs: Vec<usize>,
}

impl RleBits {
    /// Encodes a mask tensor; entries other than 0.0 count as 1.
    pub fn encode(t: &Tensor) -> Self {
        let bits = t.data().iter().map(|x| u8::from(*x != 0.0));
        let mut runs = Vec::new();
        let mut first = 1;
        let mut current: Option<u8> = None;
        for b in bits {
            match current {
                Some(c) if c == b => *runs.last_mut().expect("open run") += 1,
                _ => {
                    if current.is_none() {
                        first = b;
                    }
                    current = Some(b);
                    runs.push(1);
                }
            }
        }
        Self {
            shape: t.shape().to_vec(),
            first,
            runs,
        }
    }

    pub fn decode(&self) -> Result<Tensor, String> {
        if self.first > 1 {
            return Err(format!("first bit is {}, expected 0 or 1", self.first));
        }
        if self.runs.contains(&0) {
            return Err("zero-length run".into());
        }
        let n: usize = self.shape.iter().product();
        let total = self.runs.iter().try_fold(0usize, |a, r| a.checked_add(*r));
        if total != Some(n) {
            return Err(format!("runs cover {total:?} entries, shape {:?} needs {n}", self.shape));
        }
        let mut data = Vec::with_capacity(n);
        let mut bit = self.first;
        for r in &self.runs {
            data.extend(std::iter::repeat_n(f64::from(bit), *r));
            bit ^= 1;
        }
        Tensor::new(self.shape.clone(), data).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerMasks {
    pub spatial: RleBits,
    pub temporal: RleBits,
    pub epsilon_spatial: f64,
    pub epsilon_temporal: f64,
    pub teacher_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskFile {
    pub layers: Vec<LayerMasks>,
}

impl MaskFile {
    pub fn from_masks(masks: &[MaskPair]) -> Self {
        Self {
            layers: masks
                .iter()
                .map(|m| LayerMasks {
                    spatial: RleBits::encode(&m.spatial),
                    temporal: RleBits::encode(&m.temporal),
                    epsilon_spatial: m.provenance.epsilon_spatial,
                    epsilon_temporal: m.provenance.epsilon_temporal,
                    teacher_hash: m.provenance.teacher_hash.clone(),
                })
                .collect(),
        }
    }

    /// `path` only labels errors.
    pub fn to_masks(&self, path: &Path) -> AppResult<Vec<MaskPair>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let decode = |r: &RleBits, which: &str| {
                    r.decode()
                        .map_err(|e| AppError::Schema(format!("{}: layer {i} {which} mask: {e}", path.display())))
                };
                Ok(MaskPair {
                    spatial: decode(&l.spatial, "spatial")?,
                    temporal: decode(&l.temporal, "temporal")?,
                    provenance: MaskProvenance {
                        teacher_hash: l.teacher_hash.clone(),
                        epsilon_spatial: l.epsilon_spatial,
                        epsilon_temporal: l.epsilon_temporal,
                    },
                })
            })
            .collect()
    }
}

pub fn save_masks(masks: &[MaskPair], path: &Path) -> AppResult<()> {
    crate::write_json(path, &MaskFile::from_masks(masks))
}

pub fn load_masks(path: &Path) -> AppResult<Vec<MaskPair>> {
    let f: MaskFile = crate::read_json(path)?;
    f.to_masks(path)
}
