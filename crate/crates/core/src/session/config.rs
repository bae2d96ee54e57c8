use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::curriculum::{decision_interval, CurriculumConfig, SourceKind};
use crate::env::EnvId;
use crate::ppo::PpoConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Everything needed to reproduce a run. Persisted verbatim as
/// `config.json` in the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvId,
    pub ppo: PpoConfig,
    pub source: SourceKind,
    /// Event log replayed by the scripted source.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Alternative to `script`: one level per decision point.
    #[serde(default)]
    pub schedule: Option<Vec<u32>>,
    /// Human source only: keep the current level if no command arrives in
    /// time. `None` waits indefinitely.
    #[serde(default)]
    pub auto_continue_ms: Option<u64>,
    pub seed: u64,
    pub curriculum: CurriculumConfig,
    pub run_dir: PathBuf,
    #[serde(default)]
    pub bind: Option<String>,
}

impl RunConfig {
    pub fn new(env: EnvId, source: SourceKind, run_dir: impl Into<PathBuf>) -> Self {
        Self {
            env,
            ppo: PpoConfig::for_env(env),
            source,
            script: None,
            schedule: None,
            auto_continue_ms: None,
            seed: 1,
            curriculum: CurriculumConfig::default(),
            run_dir: run_dir.into(),
            bind: None,
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::Config(m));
        self.ppo.validate()?;
        decision_interval(self.ppo.total_steps, self.curriculum.decision_points)?;
        if self.curriculum.evaluate && self.curriculum.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1".into());
        }
        let max = self.env.descriptor().max_level;
        match self.source {
            SourceKind::Scripted => match (&self.script, &self.schedule) {
                (Some(_), Some(_)) => return bad("scripted source takes a script or a schedule, not both".into()),
                (None, None) => return bad("scripted source needs a script or a schedule".into()),
                (None, Some(levels)) => {
                    if levels.len() != self.curriculum.decision_points {
                        return bad(format!(
                            "schedule has {} levels for {} decision points",
                            levels.len(),
                            self.curriculum.decision_points
                        ));
                    }
                    if let Some(l) = levels.iter().find(|&&l| l > max) {
                        return bad(format!("schedule level {l} out of range [0,{max}]"));
                    }
                }
                (Some(_), None) => {}
            },
            _ if self.script.is_some() || self.schedule.is_some() => {
                return bad(format!("--script/--schedule only apply to the scripted source, not {:?}", self.source));
            }
            _ => {}
        }
        if self.source == SourceKind::Human && self.bind.is_none() {
            return bad("the human source needs a bind address for clients to connect".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.run_dir.join(CHECKPOINT_DIR)
    }
}
