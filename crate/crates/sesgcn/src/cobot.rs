//! JSON cobot scripts: `{"fps": 25, "trajectories": {"<sequence id>": [chain, ...]}}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sesgcn_core::collision::{script_cobot, ChainScript, CobotTrajectory};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CobotFile {
    pub fps: f64,
    pub trajectories: BTreeMap<String, Vec<ChainScript>>,
}

impl CobotFile {
    /// Samples every script at the file's fps.
    pub fn trajectories(&self) -> AppResult<BTreeMap<String, CobotTrajectory>> {
        self.trajectories
            .iter()
            .map(|(id, chains)| {
                script_cobot(chains, self.fps)
                    .map(|t| (id.clone(), t))
                    .map_err(|e| AppError::Schema(format!("cobot script for `{id}`: {e}")))
            })
            .collect()
    }
}

pub fn load_cobots(path: &Path) -> AppResult<BTreeMap<String, CobotTrajectory>> {
    let f: CobotFile = crate::read_json(path)?;
    f.trajectories()
}
