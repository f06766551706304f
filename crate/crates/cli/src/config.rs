//! Experiment configuration files and the two built-in presets.

use std::fs;
use std::path::Path;

use clap::ValueEnum;
use pdgmm_core::model::{Architecture, InputScaling};
use pdgmm_core::synthgen::{DataConfig, MixingKind};
use pdgmm_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Linear,
    Nonlinear,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Linear => "linear",
            Experiment::Nonlinear => "nonlinear",
        }
    }

    /// Reference per-source correlations for the comparison table.
    pub fn reference_correlations(self) -> [f64; 3] {
        match self {
            Experiment::Linear => [0.9988, 0.9963, 0.9907],
            Experiment::Nonlinear => [0.9943, 0.9693, 0.9593],
        }
    }
}

/// One run: how to generate data and how to train on it.
///
/// `seed` is authoritative: it replaces `data.seed` and `train.seed` when the
/// config is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn preset(experiment: Experiment) -> Self {
        let (data, architecture, epochs) = match experiment {
            Experiment::Linear => (DataConfig::linear(), Architecture::linear(), 1000),
            Experiment::Nonlinear => (DataConfig::tanh2(), Architecture::nonlinear(), 1500),
        };
        let mut train = TrainConfig {
            sources: data.sources.len(),
            epochs,
            architecture,
            batch_size: Some(250),
            input_scaling: InputScaling::Whiten,
            eval_every: 10,
            ..TrainConfig::default()
        };
        train.convergence.stop_early = false;
        Self {
            experiment: Some(experiment),
            seed: 0,
            data,
            train,
        }
        .resolved()
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let cfg = cfg.resolved();
        cfg.validate().map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Config from a file if given, otherwise the named preset; `seed`
    /// overrides either.
    pub fn from_args(
        config: Option<&Path>,
        experiment: Option<Experiment>,
        seed: Option<u64>,
    ) -> CliResult<Self> {
        let mut cfg = match (config, experiment) {
            (Some(path), _) => Self::load(path)?,
            (None, Some(e)) => Self::preset(e),
            (None, None) => {
                return Err(CliError::Usage(
                    "either --config or --experiment is required".into(),
                ))
            }
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolved(mut self) -> Self {
        self.data.seed = self.seed;
        self.train.seed = self.seed;
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        self.data.validate()?;
        self.train.validate()?;
        if self.train.sources != self.data.sources.len() {
            return Err(CliError::Usage(format!(
                "invalid train.sources: {} but data defines {} sources",
                self.train.sources,
                self.data.sources.len()
            )));
        }
        if let Some(e) = self.experiment {
            let kind = match e {
                Experiment::Linear => MixingKind::Linear,
                Experiment::Nonlinear => MixingKind::Tanh2,
            };
            if kind != self.data.kind {
                return Err(CliError::Usage(format!(
                    "invalid data.kind: experiment {} expects {:?} mixing",
                    e.name(),
                    kind
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
