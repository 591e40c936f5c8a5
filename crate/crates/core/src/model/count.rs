use serde::{Deserialize, Serialize};

use super::SesGcnModel;
use crate::numerics::ParamRole;

/// Learnable scalar counts. Masked adjacency entries are constants and are
/// reported separately, not in `adjacency` or `total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterBreakdown {
    pub adjacency: usize,
    pub weights: usize,
    pub masked_out: usize,
    pub total: usize,
}

pub fn count_parameters(model: &SesGcnModel) -> ParameterBreakdown {
    let mut b = ParameterBreakdown {
        adjacency: 0,
        weights: 0,
        masked_out: 0,
        total: 0,
    };
    for e in model.store().entries() {
        let live = e.tensor.trainable_len();
        match e.role {
            ParamRole::Adjacency => {
                b.adjacency += live;
                b.masked_out += e.tensor.value.len() - live;
            }
            ParamRole::Weight => b.weights += live,
            ParamRole::Buffer => {}
        }
    }
    b.total = b.adjacency + b.weights;
    b
}
