//! Run configuration file (TOML). Every key is optional; missing keys take
//! the defaults below and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use lever_core::agent::AgentConfig;
use lever_core::env::{Curriculum, EnvConfig, EnvConfigOverrides, Fidelity};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSections {
    pub coarse: EnvConfigOverrides,
    pub fine: EnvConfigOverrides,
}

/// Learning rates of the fine-tuning stage; every other learner setting is
/// shared with `[agent]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineStage {
    pub lr_actor: f64,
    pub lr_critic: f64,
}

impl Default for FineStage {
    fn default() -> Self {
        let fine = AgentConfig::fine_stage();
        Self { lr_actor: fine.lr_actor, lr_critic: fine.lr_critic }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub finetune_episodes: usize,
    /// How training episodes start; evaluation always starts free.
    pub curriculum: Curriculum,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { epochs: 50, episodes_per_epoch: 30, finetune_episodes: 300, curriculum: Curriculum::Alternate }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_test_episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { n_test_episodes: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    /// Caps the background at this many rows (0 keeps all).
    pub background_max: usize,
    pub n_permutations: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self { background_max: 0, n_permutations: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub checkpoint_dir: PathBuf,
    pub log_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { checkpoint_dir: "runs/checkpoints".into(), log_dir: "runs/logs".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub env: EnvSections,
    pub agent: AgentConfig,
    pub fine_stage: FineStage,
    pub schedule: Schedule,
    pub eval: EvalSection,
    pub explain: ExplainSection,
    pub paths: Paths,
}

impl RunConfig {
    pub fn env_config(&self, fidelity: Fidelity) -> EnvConfig {
        match fidelity {
            Fidelity::Coarse => self.env.coarse.apply(Fidelity::Coarse),
            Fidelity::Fine => self.env.fine.apply(Fidelity::Fine),
        }
    }

    /// Learner settings of the fine-tuning stage.
    pub fn fine_agent_config(&self) -> AgentConfig {
        AgentConfig {
            lr_actor: self.fine_stage.lr_actor,
            lr_critic: self.fine_stage.lr_critic,
            ..self.agent.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |section: &str, e: &dyn std::fmt::Display| CliError::Usage(format!("[{section}] {e}"));
        self.agent.validate().map_err(|e| invalid("agent", &e))?;
        self.fine_agent_config().validate().map_err(|e| invalid("fine_stage", &e))?;
        self.env_config(Fidelity::Coarse).validate().map_err(|e| invalid("env.coarse", &e))?;
        self.env_config(Fidelity::Fine).validate().map_err(|e| invalid("env.fine", &e))?;
        if self.agent.updates_per_cycle == 0 {
            return Err(CliError::Usage("[agent] updates_per_cycle must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Usage(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

/// Reads, defaults and validates a run configuration.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    RunConfig::from_toml(&text).map_err(|e| match e {
        CliError::Usage(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
        other => other,
    })
}
