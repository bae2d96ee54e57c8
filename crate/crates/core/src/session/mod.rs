//! Run orchestration: configuration, run directory, checkpoints, metrics
//! logs and the client wire protocol.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod protocol;
pub mod run;
pub mod server;

use std::path::PathBuf;

use thiserror::Error;

use crate::curriculum::CurriculumError;
use crate::eval::EvalError;
use crate::ppo::PpoError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::RunConfig;
pub use metrics::{MetricRecord, MetricsWriter};
pub use protocol::{ClientEnvelope, ClientMessage, ServerEnvelope, ServerMessage};
pub use run::{prepare, replay, train, PreparedRun, ReplayOutcome, RunOutcome};
pub use server::{Hub, RunGate, Server, Session};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("unknown run '{0}'")]
    UnknownRun(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("run directory {0} already holds a run")]
    RunDirInUse(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<PpoError> for SessionError {
    fn from(e: PpoError) -> Self {
        SessionError::Curriculum(e.into())
    }
}
