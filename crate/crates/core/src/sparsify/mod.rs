//! Teacher-student sparsification: binary masks from the `|tanh A|`
//! threshold of a trained dense teacher, then a masked student trained from
//! scratch.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::WindowedExample;
use crate::math;
use crate::model::{count_parameters, Adjacency, MaskPair, MaskProvenance, ModelConfig, ParameterBreakdown, SesGcnModel, Variant};
use crate::numerics::Tensor;
use crate::training::{train, EpochRecord, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparsifyConfig {
    /// Fixed threshold, used when `target_sparsity` is `None`.
    pub epsilon: f64,
    /// Fraction of entries to prune; calibrates the threshold as a quantile
    /// of `|tanh A|`.
    pub target_sparsity: Option<f64>,
    /// Calibrate each factor separately rather than one threshold for all.
    pub per_matrix: bool,
}

impl Default for SparsifyConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            target_sparsity: Some(0.30),
            per_matrix: true,
        }
    }
}

impl SparsifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if let Some(q) = self.target_sparsity {
            if !(0.0..1.0).contains(&q) {
                return Err(Error::config(format!("target_sparsity must lie in [0, 1), got {q}")));
            }
        }
        Ok(())
    }
}

/// Threshold that prunes a `target` fraction of `values`: the value at
/// position `round(target · n)` in ascending order. Entries equal to it are
/// kept, so ties can only lower the pruned fraction. At least one entry is
/// always kept.
pub fn calibrate_epsilon(values: &[f64], target: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let pruned = (math::round(target * n as f64) as usize).min(n.saturating_sub(1));
    sorted.get(pruned).copied().unwrap_or(0.0)
}

fn magnitudes(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|a| math::abs(math::tanh(*a))).collect()
}

/// 1 where `|tanh a| ≥ ε`, else 0.
pub fn threshold_mask(adjacency: &Tensor, epsilon: f64) -> Tensor {
    let data = magnitudes(adjacency)
        .into_iter()
        .map(|m| if m >= epsilon { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(adjacency.shape().to_vec(), data).expect("binary values are finite")
}

/// One mask pair per encoder layer of an `sts_dw` teacher.
pub fn derive_masks(teacher: &SesGcnModel, cfg: &SparsifyConfig) -> Result<Vec<MaskPair>> {
    cfg.validate()?;
    if teacher.config().variant != Variant::StsDw {
        return Err(Error::contract(format!(
            "masks are derived from an sts_dw teacher, got {}",
            teacher.config().variant.name()
        )));
    }
    let layers = teacher.config().gcn_layers;
    let factors: Vec<(&Tensor, &Tensor)> = (0..layers)
        .map(|l| match teacher.adjacency(l) {
            Adjacency::Factored { spatial, temporal } => {
                (&teacher.store().get(spatial).value, &teacher.store().get(temporal).value)
            }
            Adjacency::Full(_) => unreachable!("sts_dw layers are factored"),
        })
        .collect();

    let global = match (cfg.target_sparsity, cfg.per_matrix) {
        (Some(q), false) => {
            let all: Vec<f64> = factors
                .iter()
                .flat_map(|(s, t)| magnitudes(s).into_iter().chain(magnitudes(t)))
                .collect();
            Some(calibrate_epsilon(&all, q))
        }
        _ => None,
    };
    let epsilon_for = |a: &Tensor| match (cfg.target_sparsity, global) {
        (_, Some(e)) => e,
        (Some(q), None) => calibrate_epsilon(&magnitudes(a), q),
        (None, None) => cfg.epsilon,
    };

    let hash = teacher.fingerprint();
    Ok(factors
        .into_iter()
        .map(|(s, t)| {
            let (es, et) = (epsilon_for(s), epsilon_for(t));
            MaskPair {
                spatial: threshold_mask(s, es),
                temporal: threshold_mask(t, et),
                provenance: MaskProvenance {
                    teacher_hash: hash.clone(),
                    epsilon_spatial: es,
                    epsilon_temporal: et,
                },
            }
        })
        .collect())
}

/// A freshly initialized `ses` model with `masks` frozen in place.
pub fn build_student(config: &ModelConfig, masks: Vec<MaskPair>, seed: u64) -> Result<SesGcnModel> {
    let config = ModelConfig {
        variant: Variant::Ses,
        ..config.clone()
    };
    if masks.len() != config.gcn_layers {
        return Err(Error::contract(format!(
            "{} mask pairs for {} layers",
            masks.len(),
            config.gcn_layers
        )));
    }
    let mut student = SesGcnModel::new(config, seed)?;
    student.set_masks(masks)?;
    Ok(student)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: usize,
    pub epsilon_spatial: f64,
    pub epsilon_temporal: f64,
    /// Fraction of pruned entries.
    pub spatial: f64,
    pub temporal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsifyReport {
    pub teacher_history: Vec<EpochRecord>,
    pub student_history: Vec<EpochRecord>,
    pub teacher_best_val_mm: f64,
    pub student_best_val_mm: f64,
    pub teacher_parameters: ParameterBreakdown,
    pub student_parameters: ParameterBreakdown,
    pub layers: Vec<LayerSparsity>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TeacherStudent {
    /// Best-validation teacher; the masks come from it.
    pub teacher: SesGcnModel,
    pub masks: Vec<MaskPair>,
    /// Best-validation student.
    pub student: SesGcnModel,
    pub report: SparsifyReport,
}

pub fn layer_sparsity(masks: &[MaskPair]) -> Vec<LayerSparsity> {
    masks
        .iter()
        .enumerate()
        .map(|(layer, m)| LayerSparsity {
            layer,
            epsilon_spatial: m.provenance.epsilon_spatial,
            epsilon_temporal: m.provenance.epsilon_temporal,
            spatial: m.zeros_spatial() as f64 / m.spatial.len() as f64,
            temporal: m.zeros_temporal() as f64 / m.temporal.len() as f64,
        })
        .collect()
}

fn never_improved(history: &[EpochRecord]) -> bool {
    history.len() > 1 && history.windows(2).all(|w| w[1].val_loss_mm >= w[0].val_loss_mm)
}

/// Trains an `sts_dw` teacher, derives masks from its best-validation
/// parameters, then trains a masked student from a fresh initialization.
///
/// The teacher is initialized from `train_cfg.seed`, the student from
/// `train_cfg.seed + 1`; both share the shuffling seed. `model_cfg.variant`
/// is overridden for each stage.
pub fn teacher_student_train(
    train_set: &[WindowedExample],
    val_set: &[WindowedExample],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    sparsify_cfg: &SparsifyConfig,
) -> Result<TeacherStudent> {
    sparsify_cfg.validate()?;
    train_cfg.validate()?;
    let teacher_cfg = ModelConfig {
        variant: Variant::StsDw,
        ..model_cfg.clone()
    };
    let mut teacher = SesGcnModel::new(teacher_cfg, train_cfg.seed)?;
    log::info!("training teacher");
    let t_out = train(&mut teacher, train_set, val_set, train_cfg)?;
    let masks = derive_masks(&t_out.best, sparsify_cfg)?;
    let mut student = build_student(model_cfg, masks.clone(), train_cfg.seed.wrapping_add(1))?;
    log::info!("training student");
    let s_out = train(&mut student, train_set, val_set, train_cfg)?;

    let mut warnings = Vec::new();
    for (who, h) in [("teacher", &t_out.history), ("student", &s_out.history)] {
        if never_improved(h) {
            warnings.push(format!("{who} validation loss never decreased"));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let report = SparsifyReport {
        teacher_best_val_mm: t_out.best_val_loss_mm,
        student_best_val_mm: s_out.best_val_loss_mm,
        teacher_parameters: count_parameters(&t_out.best),
        student_parameters: count_parameters(&s_out.best),
        layers: layer_sparsity(&masks),
        teacher_history: t_out.history,
        student_history: s_out.history,
        warnings,
    };
    Ok(TeacherStudent {
        teacher: t_out.best,
        masks,
        student: s_out.best,
        report,
    })
}
