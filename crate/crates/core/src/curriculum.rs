//! Interval-based curriculum loop with pluggable difficulty sources.
//!
//! Training starts at level 0. At ten evenly spaced decision points
//! (`0, 0.1, ..., 0.9` of the step budget) the source picks the level for the
//! next stretch of training. Each decision sees the two most recent
//! evaluations: reports are taken every half interval, and decision 0 gets
//! two reports of the untrained policy.

use std::collections::VecDeque;
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvId;
use crate::eval::{evaluate_with, EvalError, EvalReport};
use crate::nn::{AdamState, MlpSpec, PolicyParams};
use crate::ppo::{Learner, PpoConfig, PpoError, TrainStats};
use crate::rollout::{RolloutError, RolloutPool, TrajectoryBatch};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurriculumError {
    #[error("human source timed out: command channel closed with no auto-continue")]
    SourceTimeout,
    #[error("scripted log has no event at step {0}")]
    MissingEvent(u64),
    #[error("level {level} out of range [0,{max}]")]
    OutOfRange { level: u32, max: u32 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("observer: {0}")]
    Observer(String),
    #[error(transparent)]
    Trainer(#[from] PpoError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Human,
    Auto,
    Scripted,
    Scratch,
}

impl std::str::FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human" => Ok(SourceKind::Human),
            "auto" => Ok(SourceKind::Auto),
            "scripted" => Ok(SourceKind::Scripted),
            "scratch" => Ok(SourceKind::Scratch),
            other => Err(format!("unknown source '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumEvent {
    pub global_step: u64,
    pub source: SourceKind,
    pub old_level: u32,
    pub new_level: u32,
    /// Milliseconds since the Unix epoch.
    pub wall_clock: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionPoint {
    pub index: usize,
    pub global_step: u64,
    /// The two latest evaluations; empty when evaluation is disabled.
    pub recent_reports: Vec<EvalReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum DifficultyCommand {
    Easier,
    Harder,
    Unchanged,
    Set { value: u32 },
}

/// Resolves a command against the current level. `Easier`/`Harder` clamp to
/// the valid range; `Set` outside it is an error.
pub fn apply_command(command: DifficultyCommand, current: u32, max_level: u32) -> Result<u32, CurriculumError> {
    match command {
        DifficultyCommand::Easier => Ok(current.saturating_sub(1)),
        DifficultyCommand::Harder => Ok((current + 1).min(max_level)),
        DifficultyCommand::Unchanged => Ok(current),
        DifficultyCommand::Set { value } if value <= max_level => Ok(value),
        DifficultyCommand::Set { value } => Err(CurriculumError::OutOfRange { level: value, max: max_level }),
    }
}

/// Fixed-interval auto-curriculum: `round(max_level · index / 9)`, blind to
/// performance.
pub fn auto_next(point: &DecisionPoint, max_level: u32) -> u32 {
    let index = point.index.min(9) as u64;
    let scaled = u64::from(max_level) * index;
    ((2 * scaled + 9) / 18) as u32
}

/// Blocks until a valid command arrives. With `auto_continue` set, an
/// expired wait (or a closed channel) yields `current` unchanged.
pub fn human_next(
    current: u32,
    max_level: u32,
    commands: &Receiver<DifficultyCommand>,
    auto_continue: Option<Duration>,
) -> Result<u32, CurriculumError> {
    let deadline = auto_continue.map(|d| Instant::now() + d);
    loop {
        let received = match deadline {
            None => commands.recv().map_err(|_| RecvTimeoutError::Disconnected),
            Some(deadline) => {
                commands.recv_timeout(deadline.saturating_duration_since(Instant::now()))
            }
        };
        match received {
            Ok(command) => {
                // Out-of-range commands are rejected at the session boundary;
                // anything that slips through is skipped.
                if let Ok(level) = apply_command(command, current, max_level) {
                    return Ok(level);
                }
            }
            Err(RecvTimeoutError::Timeout) => return Ok(current),
            Err(RecvTimeoutError::Disconnected) => {
                return match auto_continue {
                    Some(_) => Ok(current),
                    None => Err(CurriculumError::SourceTimeout),
                };
            }
        }
    }
}

pub fn scripted_next(log: &[CurriculumEvent], point: &DecisionPoint) -> Result<u32, CurriculumError> {
    log.iter()
        .find(|e| e.global_step == point.global_step)
        .map(|e| e.new_level)
        .ok_or(CurriculumError::MissingEvent(point.global_step))
}

/// The function that picks the next level at every decision point.
pub trait DifficultySource {
    fn kind(&self) -> SourceKind;

    fn next_level(&mut self, point: &DecisionPoint, current: u32, max_level: u32) -> Result<u32, CurriculumError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AutoSource;

impl DifficultySource for AutoSource {
    fn kind(&self) -> SourceKind {
        SourceKind::Auto
    }

    fn next_level(&mut self, point: &DecisionPoint, _current: u32, max_level: u32) -> Result<u32, CurriculumError> {
        Ok(auto_next(point, max_level))
    }
}

/// Learning from scratch: the hardest level from step 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScratchSource;

impl DifficultySource for ScratchSource {
    fn kind(&self) -> SourceKind {
        SourceKind::Scratch
    }

    fn next_level(&mut self, _point: &DecisionPoint, _current: u32, max_level: u32) -> Result<u32, CurriculumError> {
        Ok(max_level)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedSource {
    events: Vec<CurriculumEvent>,
}

impl ScriptedSource {
    pub fn new(events: Vec<CurriculumEvent>) -> Self {
        Self { events }
    }

    /// One level per decision point, in order.
    pub fn from_levels(levels: &[u32], total_steps: u64) -> Result<Self, CurriculumError> {
        if levels.is_empty() {
            return Err(CurriculumError::InvalidSchedule("empty level list".into()));
        }
        let interval = decision_interval(total_steps, levels.len())?;
        let mut old = 0;
        let events = levels
            .iter()
            .enumerate()
            .map(|(i, &level)| {
                let e = CurriculumEvent {
                    global_step: i as u64 * interval,
                    source: SourceKind::Scripted,
                    old_level: old,
                    new_level: level,
                    wall_clock: 0,
                };
                old = level;
                e
            })
            .collect();
        Ok(Self { events })
    }

    pub fn events(&self) -> &[CurriculumEvent] {
        &self.events
    }
}

impl DifficultySource for ScriptedSource {
    fn kind(&self) -> SourceKind {
        SourceKind::Scripted
    }

    fn next_level(&mut self, point: &DecisionPoint, _current: u32, max_level: u32) -> Result<u32, CurriculumError> {
        let level = scripted_next(&self.events, point)?;
        if level > max_level {
            return Err(CurriculumError::OutOfRange { level, max: max_level });
        }
        Ok(level)
    }
}

#[derive(Debug)]
pub struct HumanSource {
    commands: Receiver<DifficultyCommand>,
    auto_continue: Option<Duration>,
}

impl HumanSource {
    pub fn new(commands: Receiver<DifficultyCommand>, auto_continue: Option<Duration>) -> Self {
        Self { commands, auto_continue }
    }
}

impl DifficultySource for HumanSource {
    fn kind(&self) -> SourceKind {
        SourceKind::Human
    }

    fn next_level(&mut self, _point: &DecisionPoint, current: u32, max_level: u32) -> Result<u32, CurriculumError> {
        human_next(current, max_level, &self.commands, self.auto_continue)
    }
}

pub fn decision_interval(total_steps: u64, decision_points: usize) -> Result<u64, CurriculumError> {
    if decision_points == 0 {
        return Err(CurriculumError::InvalidSchedule("no decision points".into()));
    }
    let interval = total_steps / decision_points as u64;
    if interval < 2 {
        return Err(CurriculumError::InvalidSchedule(format!(
            "{total_steps} steps cannot hold {decision_points} decision points"
        )));
    }
    Ok(interval)
}

/// Global step at which decision `index` is due.
pub fn decision_steps(total_steps: u64, decision_points: usize) -> Result<Vec<u64>, CurriculumError> {
    let interval = decision_interval(total_steps, decision_points)?;
    Ok((0..decision_points as u64).map(|i| i * interval).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub decision_points: usize,
    pub evaluate: bool,
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self { decision_points: 10, evaluate: true, eval_episodes: 100, eval_seed: 10_000 }
    }
}

/// Summary of one collect + train round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub step: u64,
    pub difficulty: u32,
    pub mean_episodic_return: Option<f64>,
    pub success_rate: Option<f64>,
    pub episodes: usize,
    pub steps_per_sec: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub policy_version: u64,
}

/// Environment, learner and worker pool for one run.
pub struct Trainer {
    env_id: EnvId,
    learner: Learner,
    pool: RolloutPool,
}

impl Trainer {
    pub fn new(env_id: EnvId, spec: MlpSpec, config: PpoConfig, seed: u64) -> Result<Self, CurriculumError> {
        let learner = Learner::new(spec, config, seed)?;
        Self::from_learner(env_id, learner, seed)
    }

    pub fn from_learner(env_id: EnvId, learner: Learner, seed: u64) -> Result<Self, CurriculumError> {
        let pool = RolloutPool::spawn(env_id, learner.config().workers, learner.mlp(), seed)?;
        Ok(Self { env_id, learner, pool })
    }

    pub fn env_id(&self) -> EnvId {
        self.env_id
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    /// Broadcast, collect at `level`, then one PPO iteration.
    pub fn round(&mut self, level: u32) -> Result<(TrajectoryBatch, TrainStats), CurriculumError> {
        self.pool.broadcast(Arc::new(self.learner.params().clone()))?;
        let horizon = self.learner.config().horizon;
        let batch = self.pool.collect(horizon, level)?;
        let stats = self.learner.train_iteration(&batch)?;
        Ok((batch, stats))
    }
}

/// Read-only view of training state handed to observers.
pub struct RunState<'a> {
    pub step: u64,
    pub level: u32,
    pub max_level: u32,
    pub learner: &'a Learner,
}

/// Hooks into the run loop. All run on the learner thread.
pub trait RunObserver {
    /// Called before each collection round; may block (pause).
    fn before_round(&mut self, _state: &RunState<'_>) -> Result<(), CurriculumError> {
        Ok(())
    }

    fn on_round(&mut self, _record: &RoundRecord) -> Result<(), CurriculumError> {
        Ok(())
    }

    fn on_eval(&mut self, _step: u64, _report: &EvalReport) -> Result<(), CurriculumError> {
        Ok(())
    }

    /// Called right before the source is queried.
    fn on_decision(&mut self, _point: &DecisionPoint, _state: &RunState<'_>) -> Result<(), CurriculumError> {
        Ok(())
    }

    fn on_event(&mut self, _event: &CurriculumEvent) -> Result<(), CurriculumError> {
        Ok(())
    }
}

/// Observer that ignores everything.
#[derive(Debug, Default)]
pub struct NoopObserver;

impl RunObserver for NoopObserver {}

#[derive(Debug, Clone)]
pub struct CurriculumRun {
    pub params: PolicyParams,
    pub adam: AdamState,
    pub events: Vec<CurriculumEvent>,
    pub rounds: Vec<RoundRecord>,
    pub evals: Vec<(u64, EvalReport)>,
    pub final_step: u64,
}

pub fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// The training loop: alternate collect/train at the current level, and at
/// every decision point evaluate, query `source`, and log an event (whether
/// or not the level changed). Stops once `total_steps` is reached.
pub fn run_curriculum(
    curriculum: &CurriculumConfig,
    source: &mut dyn DifficultySource,
    trainer: &mut Trainer,
    observer: &mut dyn RunObserver,
) -> Result<CurriculumRun, CurriculumError> {
    let config = trainer.learner.config().clone();
    let max_level = trainer.env_id.descriptor().max_level;
    let interval = decision_interval(config.total_steps, curriculum.decision_points)?;
    let half = interval / 2;
    let eval_mark = |j: u64| if j < 2 { 0 } else { (j - 1) * half };
    let total_evals = 2 * curriculum.decision_points as u64;

    let mut level = 0u32;
    let mut step = 0u64;
    let mut next_eval = 0u64;
    let mut recent: VecDeque<EvalReport> = VecDeque::with_capacity(2);
    let mut run = CurriculumRun {
        params: trainer.learner.params().clone(),
        adam: trainer.learner.adam().clone(),
        events: Vec::new(),
        rounds: Vec::new(),
        evals: Vec::new(),
        final_step: 0,
    };

    loop {
        while next_eval < total_evals && eval_mark(next_eval) <= step {
            if curriculum.evaluate {
                let report = evaluate_with(
                    trainer.learner.mlp(),
                    trainer.learner.params(),
                    trainer.env_id,
                    level,
                    curriculum.eval_episodes,
                    curriculum.eval_seed.wrapping_add(next_eval),
                )?;
                observer.on_eval(step, &report)?;
                if recent.len() == 2 {
                    recent.pop_front();
                }
                recent.push_back(report.clone());
                run.evals.push((step, report));
            }
            if next_eval % 2 == 1 {
                let index = (next_eval / 2) as usize;
                let point = DecisionPoint {
                    index,
                    global_step: index as u64 * interval,
                    recent_reports: recent.iter().cloned().collect(),
                };
                let state = RunState { step, level, max_level, learner: &trainer.learner };
                observer.on_decision(&point, &state)?;
                let new_level = source.next_level(&point, level, max_level)?;
                if new_level > max_level {
                    return Err(CurriculumError::OutOfRange { level: new_level, max: max_level });
                }
                let event = CurriculumEvent {
                    global_step: point.global_step,
                    source: source.kind(),
                    old_level: level,
                    new_level,
                    wall_clock: now_millis(),
                };
                observer.on_event(&event)?;
                run.events.push(event);
                level = new_level;
            }
            next_eval += 1;
        }
        if step >= config.total_steps {
            break;
        }

        observer.before_round(&RunState { step, level, max_level, learner: &trainer.learner })?;
        let started = Instant::now();
        let (batch, stats) = trainer.round(level)?;
        let elapsed = started.elapsed().as_secs_f64();
        step += batch.len() as u64;
        let record = RoundRecord {
            step,
            difficulty: batch.difficulty,
            mean_episodic_return: batch.mean_episode_return(),
            success_rate: batch.success_rate(),
            episodes: batch.episodes.len(),
            steps_per_sec: if elapsed > 0.0 { batch.len() as f64 / elapsed } else { 0.0 },
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            policy_version: trainer.learner.params().version,
        };
        observer.on_round(&record)?;
        run.rounds.push(record);
    }

    run.params = trainer.learner.params().clone();
    run.adam = trainer.learner.adam().clone();
    run.final_step = step;
    Ok(run)
}
