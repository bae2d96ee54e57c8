//! Curriculum PPO training with a human (or scripted, or automatic)
//! difficulty source in the loop.
//!
//! Bottom up: [`env`] holds the two task families, [`nn`] the policy/value
//! network and optimizer, [`ppo`] the learner, [`rollout`] the parallel
//! actors, [`eval`] greedy evaluation, [`curriculum`] the decision loop and
//! [`session`] the run directory, checkpoints and wire protocol.

pub mod curriculum;
pub mod env;
pub mod eval;
pub mod nn;
pub mod ppo;
pub mod rollout;
pub mod session;

pub use curriculum::{
    run_curriculum, CurriculumConfig, CurriculumError, CurriculumEvent, DecisionPoint, DifficultyCommand,
    DifficultySource, RoundRecord, SourceKind, Trainer,
};
pub use env::{
    DifficultyLevel, EnvDescriptor, EnvError, EnvId, EnvInstance, Environment, Observation, StepResult, TerminalKind,
};
pub use eval::{EvalReport, GeneralizationCurve};
pub use nn::{AdamState, Mlp, MlpSpec, PolicyParams};
pub use ppo::{Learner, PpoConfig, PpoError, Transition};
pub use rollout::{RolloutError, RolloutPool, TrajectoryBatch};
pub use session::{Checkpoint, RunConfig, SessionError};
