//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::path::Path;

use hjb_core::model::{param_count, ValueModel};
use hjb_core::trainer::TrainState;
use hjb_core::AdamState;
use serde::{Deserialize, Serialize};

use crate::config::{architecture_of, ModelConfig};
use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamRecord {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    pub next_iteration: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: ModelConfig,
    pub d: usize,
    pub param_count: usize,
    pub theta: Vec<f64>,
    pub adam: AdamRecord,
    pub rng_state: RngState,
}

impl Checkpoint {
    pub fn from_state(architecture: &ModelConfig, state: &TrainState) -> Self {
        let a = &state.adam;
        Self {
            format_version: FORMAT_VERSION,
            architecture: architecture.clone(),
            d: state.model.d,
            param_count: state.model.theta.len(),
            theta: state.model.theta.clone(),
            adam: AdamRecord { m: a.m.clone(), v: a.v.clone(), step: a.step, beta1: a.beta1, beta2: a.beta2, eps: a.eps },
            rng_state: RngState { seed: state.seed, next_iteration: state.next_iteration },
        }
    }

    pub fn to_state(&self) -> CliResult<TrainState> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::config(format!(
                "checkpoint.format_version: unsupported version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let arch = architecture_of(&self.architecture);
        let expected = param_count(&arch, self.d);
        if self.param_count != expected || self.theta.len() != expected {
            return Err(CliError::config(format!(
                "checkpoint.theta: architecture needs {expected} parameters, file declares {} and holds {}",
                self.param_count,
                self.theta.len()
            )));
        }
        if self.adam.m.len() != expected || self.adam.v.len() != expected {
            return Err(CliError::config("checkpoint.adam: moment vectors do not match the parameter count"));
        }
        let model = ValueModel::from_parts(arch, self.d, self.theta.clone())?;
        let adam = AdamState {
            m: self.adam.m.clone(),
            v: self.adam.v.clone(),
            step: self.adam.step,
            beta1: self.adam.beta1,
            beta2: self.adam.beta2,
            eps: self.adam.eps,
        };
        Ok(TrainState { model, adam, seed: self.rng_state.seed, next_iteration: self.rng_state.next_iteration })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Writes through a temporary file so readers never see a partial checkpoint.
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string(self).map_err(|e| CliError::runtime(format!("checkpoint: {e}")))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }
}
