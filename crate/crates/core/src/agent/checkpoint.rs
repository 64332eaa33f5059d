//! On-disk agents: one JSON file per network and one for the normalizer,
//! tied together by a small manifest that the caller passes around.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Agent, AgentError, ObsNormalizer, Result};
use crate::nn::Mlp;
use crate::Scalar;

pub const AGENT_FORMAT_VERSION: u32 = 1;

/// Manifest contents. File names are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentCheckpoint {
    pub format_version: u32,
    pub actor: String,
    pub critic: String,
    pub target_actor: String,
    pub target_critic: String,
    pub normalizer: String,
    /// Free-form provenance, e.g. training stage and env fidelity.
    #[serde(default)]
    pub notes: Vec<String>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AgentError {
    AgentError::Checkpoint(format!("{}: {e}", path.display()))
}

fn sibling(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().unwrap_or_else(|| Path::new(".")).join(name)
}

impl AgentCheckpoint {
    /// Writes the agent next to `manifest`, using the manifest's file stem
    /// as a prefix for the component files.
    pub fn save<T: Scalar>(agent: &Agent<T>, manifest: &Path, notes: Vec<String>) -> Result<Self> {
        let stem = manifest
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| io_err(manifest, "manifest path has no file name"))?;
        let name = |part: &str| format!("{stem}.{part}.json");
        let ckpt = Self {
            format_version: AGENT_FORMAT_VERSION,
            actor: name("actor"),
            critic: name("critic"),
            target_actor: name("target_actor"),
            target_critic: name("target_critic"),
            normalizer: name("normalizer"),
            notes,
        };
        if let Some(dir) = manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let write = |file: &str, text: String| -> Result<()> {
            let path = sibling(manifest, file);
            fs::write(&path, text).map_err(|e| io_err(&path, e))
        };
        write(&ckpt.actor, agent.actor.to_json())?;
        write(&ckpt.critic, agent.critic.to_json())?;
        write(&ckpt.target_actor, agent.target_actor.to_json())?;
        write(&ckpt.target_critic, agent.target_critic.to_json())?;
        write(
            &ckpt.normalizer,
            serde_json::to_string_pretty(&agent.normalizer).map_err(|e| io_err(manifest, e))?,
        )?;
        write(
            manifest.file_name().and_then(|s| s.to_str()).expect("checked above"),
            serde_json::to_string_pretty(&ckpt).map_err(|e| io_err(manifest, e))?,
        )?;
        Ok(ckpt)
    }

    pub fn read_manifest(manifest: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest).map_err(|e| io_err(manifest, e))?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|e| io_err(manifest, e))?;
        if ckpt.format_version != AGENT_FORMAT_VERSION {
            return Err(io_err(manifest, format!("unsupported format version {}", ckpt.format_version)));
        }
        Ok(ckpt)
    }

    /// Loads an agent; optimizer state starts fresh.
    pub fn load<T: Scalar>(manifest: &Path) -> Result<Agent<T>> {
        let ckpt = Self::read_manifest(manifest)?;
        let read = |file: &str| -> Result<String> {
            let path = sibling(manifest, file);
            fs::read_to_string(&path).map_err(|e| io_err(&path, e))
        };
        let actor = Mlp::from_json(&read(&ckpt.actor)?)?;
        let critic = Mlp::from_json(&read(&ckpt.critic)?)?;
        let target_actor = Mlp::from_json(&read(&ckpt.target_actor)?)?;
        let target_critic = Mlp::from_json(&read(&ckpt.target_critic)?)?;
        if !actor.same_architecture(&target_actor) || !critic.same_architecture(&target_critic) {
            return Err(io_err(manifest, "target network architecture differs from its source"));
        }
        let normalizer: ObsNormalizer =
            serde_json::from_str(&read(&ckpt.normalizer)?).map_err(|e| io_err(manifest, e))?;
        let mut agent = Agent::from_networks(actor, critic, normalizer);
        agent.target_actor = target_actor;
        agent.target_critic = target_critic;
        Ok(agent)
    }
}
