//! Difficulty-parameterized episodic environments.
//!
//! Every environment exposes a single integer difficulty axis. A call to
//! [`Environment::set_difficulty`] never touches the running episode: the new
//! level is applied by the next [`Environment::reset`].

pub mod gridworld;
pub mod walljumper;

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gridworld::GridWorld;
pub use walljumper::WallJumper;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    SteppedAfterTerminal,
    #[error("step called before the first reset")]
    EpisodeNotStarted,
    #[error("invalid action {action} (action count {count})")]
    InvalidAction { action: usize, count: usize },
    #[error("level {level} out of range [0,{max}]")]
    OutOfRange { level: u32, max: u32 },
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    GridWorld,
    WallJumper,
}

impl EnvId {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::GridWorld => "gridworld",
            EnvId::WallJumper => "walljumper",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            EnvId::GridWorld => 1,
            EnvId::WallJumper => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(EnvId::GridWorld),
            2 => Some(EnvId::WallJumper),
            _ => None,
        }
    }

    pub fn descriptor(self) -> EnvDescriptor {
        match self {
            EnvId::GridWorld => GridWorld::default().descriptor(),
            EnvId::WallJumper => WallJumper::new().descriptor(),
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "gridworld" => Ok(EnvId::GridWorld),
            "walljumper" => Ok(EnvId::WallJumper),
            other => Err(format!("unknown environment '{other}'")),
        }
    }
}

/// Static shape of an environment, stable for a whole session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvDescriptor {
    pub env_id: EnvId,
    pub obs_dim: usize,
    pub action_count: usize,
    pub max_level: u32,
    pub max_episode_steps: u32,
}

/// A curriculum level, always within `0..=max_level` of its environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DifficultyLevel {
    level: u32,
    max_level: u32,
}

impl DifficultyLevel {
    pub fn new(level: u32, max_level: u32) -> Result<Self, EnvError> {
        if level > max_level {
            return Err(EnvError::OutOfRange { level, max: max_level });
        }
        Ok(Self { level, max_level })
    }

    pub fn zero(max_level: u32) -> Self {
        Self { level: 0, max_level }
    }

    pub fn max(max_level: u32) -> Self {
        Self { level: max_level, max_level }
    }

    pub fn level(self) -> u32 {
        self.level
    }

    pub fn max_level(self) -> u32 {
        self.max_level
    }

    pub fn easier(self) -> Self {
        Self { level: self.level.saturating_sub(1), ..self }
    }

    pub fn harder(self) -> Self {
        Self { level: (self.level + 1).min(self.max_level), ..self }
    }
}

impl fmt::Display for DifficultyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.level, self.max_level)
    }
}

/// Dense observation vector; entries lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Observation {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    None,
    Success,
    Failure,
    Timeout,
}

impl TerminalKind {
    pub fn is_terminal(self) -> bool {
        self != TerminalKind::None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub kind: TerminalKind,
}

impl StepResult {
    pub fn terminal(&self) -> bool {
        self.kind.is_terminal()
    }
}

/// Inclusive per-step reward bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBounds {
    pub min: f64,
    pub max: f64,
}

impl RewardBounds {
    pub fn contains(&self, reward: f64) -> bool {
        // Rewards are sums of a few decimal constants; allow for rounding.
        reward >= self.min - 1e-12 && reward <= self.max + 1e-12
    }
}

pub trait Environment: Send {
    fn descriptor(&self) -> EnvDescriptor;

    fn reward_bounds(&self) -> RewardBounds;

    /// Starts a fresh episode at the pending level. Layout is a pure function
    /// of `(seed, level)`.
    fn reset(&mut self, seed: u64) -> Observation;

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError>;

    /// Queues `level` for the next reset.
    fn set_difficulty(&mut self, level: u32) -> Result<(), EnvError>;

    /// Level of the episode in flight (or of the last episode).
    fn level(&self) -> u32;

    fn pending_level(&self) -> u32;

    fn observe(&self) -> Observation;
}

/// Closed set of environments, dispatched statically.
#[derive(Debug, Clone)]
pub enum EnvInstance {
    GridWorld(GridWorld),
    WallJumper(WallJumper),
}

impl EnvInstance {
    pub fn new(env_id: EnvId, level: u32) -> Result<Self, EnvError> {
        let mut env = match env_id {
            EnvId::GridWorld => EnvInstance::GridWorld(GridWorld::default()),
            EnvId::WallJumper => EnvInstance::WallJumper(WallJumper::new()),
        };
        env.set_difficulty(level)?;
        Ok(env)
    }

    pub fn env_id(&self) -> EnvId {
        match self {
            EnvInstance::GridWorld(_) => EnvId::GridWorld,
            EnvInstance::WallJumper(_) => EnvId::WallJumper,
        }
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            EnvInstance::GridWorld(env) => env,
            EnvInstance::WallJumper(env) => env,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            EnvInstance::GridWorld(env) => env,
            EnvInstance::WallJumper(env) => env,
        }
    }
}

impl Environment for EnvInstance {
    fn descriptor(&self) -> EnvDescriptor {
        self.inner().descriptor()
    }

    fn reward_bounds(&self) -> RewardBounds {
        self.inner().reward_bounds()
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.inner_mut().reset(seed)
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        self.inner_mut().step(action)
    }

    fn set_difficulty(&mut self, level: u32) -> Result<(), EnvError> {
        self.inner_mut().set_difficulty(level)
    }

    fn level(&self) -> u32 {
        self.inner().level()
    }

    fn pending_level(&self) -> u32 {
        self.inner().pending_level()
    }

    fn observe(&self) -> Observation {
        self.inner().observe()
    }
}
