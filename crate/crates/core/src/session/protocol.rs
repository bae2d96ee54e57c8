//! Newline-delimited JSON wire messages. Field names are frozen in
//! `docs/protocol.md`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SessionError;
use crate::curriculum::{CurriculumEvent, DifficultyCommand, RoundRecord};
use crate::env::EnvDescriptor;
use crate::eval::EvalReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        env: EnvDescriptor,
        total_steps: u64,
    },
    /// Snapshot sent right after `hello` so late joiners can catch up.
    State {
        step: u64,
        current_level: u32,
        max_level: u32,
        paused: bool,
        pending_decision: Option<usize>,
        finished: bool,
    },
    Metrics(RoundRecord),
    Eval {
        step: u64,
        report: EvalReport,
    },
    DecisionPoint {
        index: usize,
        step: u64,
        reports: Vec<EvalReport>,
        current_level: u32,
        max_level: u32,
    },
    Event(CurriculumEvent),
    Paused {},
    Resumed {},
    Saved {
        path: String,
    },
    Error {
        message: String,
    },
    Finished {
        step: u64,
        reached_total: bool,
    },
}

impl ServerMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            ServerMessage::Hello { .. } => "hello",
            ServerMessage::State { .. } => "state",
            ServerMessage::Metrics(_) => "metrics",
            ServerMessage::Eval { .. } => "eval",
            ServerMessage::DecisionPoint { .. } => "decision_point",
            ServerMessage::Event(_) => "event",
            ServerMessage::Paused {} => "paused",
            ServerMessage::Resumed {} => "resumed",
            ServerMessage::Saved { .. } => "saved",
            ServerMessage::Error { .. } => "error",
            ServerMessage::Finished { .. } => "finished",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command { command: DifficultyCommand },
    Pause {},
    Play {},
    Save {},
    Subscribe {},
}

pub const CLIENT_TYPES: &[&str] = &["command", "pause", "play", "save", "subscribe"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEnvelope {
    pub run_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub message: ServerMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEnvelope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(flatten)]
    pub message: ClientMessage,
}

pub fn encode_server(envelope: &ServerEnvelope) -> String {
    serde_json::to_string(envelope).expect("server messages always serialize")
}

/// Parses one client line. `Ok(None)` means a well-formed message of an
/// unknown type, which receivers ignore.
pub fn decode_client(line: &str) -> Result<Option<ClientEnvelope>, SessionError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| SessionError::MalformedMessage(e.to_string()))?;
    let kind = value
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| SessionError::MalformedMessage("missing string field 'type'".into()))?;
    if !CLIENT_TYPES.contains(&kind) {
        return Ok(None);
    }
    serde_json::from_value(value)
        .map(Some)
        .map_err(|e| SessionError::MalformedMessage(e.to_string()))
}
