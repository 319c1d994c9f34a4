//! The experiment configuration file: one TOML document with a section per
//! component. Every field has a default, so an empty file is a valid
//! configuration; unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::driver::{OperatorConfig, OutputConfig, TrainingConfig};
use crate::env::{TaskParams, WorldConfig};
use crate::error::{Error, Result};
use crate::genharness::GridSpec;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub training: TrainingConfig,
    pub operators: OperatorConfig,
    pub output: OutputConfig,
    pub grid: GridSpec,
    /// Physics of a single replayed scenario.
    pub task: TaskParams,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.training.validate()?;
        self.training.spec().validate()?;
        self.operators.validate()?;
        self.grid.validate()?;
        self.task.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string().replace('\n', " ")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }
}
