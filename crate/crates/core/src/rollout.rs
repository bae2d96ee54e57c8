//! Synchronous parallel experience collection.
//!
//! Each worker thread exclusively owns one environment and an RNG seeded with
//! `base_seed + worker_id`. The learner pushes immutable parameter snapshots
//! to every worker, then requests a fixed-horizon segment from each and
//! blocks until all segments arrive. Segments are assembled in worker-id
//! order, so the batch does not depend on thread scheduling.

use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{EnvError, EnvId, EnvInstance, Environment, Observation, TerminalKind};
use crate::nn::{log_softmax, Mlp, NnError, PolicyParams};
use crate::ppo::Transition;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RolloutError {
    #[error("worker {worker_id} failed: {reason}")]
    WorkerFailure { worker_id: usize, reason: String },
    #[error("workers disagree on policy version: {0:?}")]
    VersionSkew(Vec<Option<u64>>),
    #[error("broadcast of version {offered} would roll back worker at version {held}")]
    VersionRollback { offered: u64, held: u64 },
    #[error("at least one worker is required")]
    NoWorkers,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Network(#[from] NnError),
}

/// Outcome of one episode finished during collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub episode_return: f64,
    pub length: u32,
    pub kind: TerminalKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerSegment {
    pub worker_id: usize,
    pub transitions: Vec<Transition>,
    pub bootstrap_value: f64,
    pub episodes: Vec<EpisodeOutcome>,
}

/// `workers × horizon` transitions, worker-major, all collected under one
/// policy version at one difficulty level.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub transitions: Vec<Transition>,
    pub horizon: usize,
    pub policy_version: u64,
    pub difficulty: u32,
    pub bootstrap_values: Vec<f64>,
    pub episodes: Vec<EpisodeOutcome>,
    pub elapsed_secs: f64,
}

impl TrajectoryBatch {
    pub fn from_segments(
        segments: Vec<WorkerSegment>,
        horizon: usize,
        policy_version: u64,
        difficulty: u32,
    ) -> Self {
        let mut batch = TrajectoryBatch {
            transitions: Vec::with_capacity(segments.len() * horizon),
            horizon,
            policy_version,
            difficulty,
            bootstrap_values: Vec::with_capacity(segments.len()),
            episodes: Vec::new(),
            elapsed_secs: 0.0,
        };
        for segment in segments {
            batch.transitions.extend(segment.transitions);
            batch.bootstrap_values.push(segment.bootstrap_value);
            batch.episodes.extend(segment.episodes);
        }
        batch
    }

    pub fn workers(&self) -> usize {
        self.bootstrap_values.len()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Per-worker slices of `horizon` consecutive transitions.
    pub fn segments(&self) -> std::slice::Chunks<'_, Transition> {
        self.transitions.chunks(self.horizon.max(1))
    }

    pub fn mean_episode_return(&self) -> Option<f64> {
        if self.episodes.is_empty() {
            return None;
        }
        Some(self.episodes.iter().map(|e| e.episode_return).sum::<f64>() / self.episodes.len() as f64)
    }

    pub fn success_rate(&self) -> Option<f64> {
        if self.episodes.is_empty() {
            return None;
        }
        let wins = self.episodes.iter().filter(|e| e.kind == TerminalKind::Success).count();
        Some(wins as f64 / self.episodes.len() as f64)
    }
}

/// Samples from the softmax over `logits` using one uniform draw.
pub fn sample_action(logits: &[f64], uniform: f64) -> (usize, f64) {
    let log_probs = log_softmax(logits);
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if uniform < acc {
            return (i, *lp);
        }
    }
    let last = log_probs.len() - 1;
    (last, log_probs[last])
}

/// One actor: an environment, its RNG stream and the current parameter
/// snapshot. Usable directly (single-threaded) or inside [`RolloutPool`].
#[derive(Debug)]
pub struct Worker {
    id: usize,
    env: EnvInstance,
    mlp: Mlp,
    rng: ChaCha8Rng,
    params: Option<Arc<PolicyParams>>,
    obs: Observation,
    needs_reset: bool,
    episode_return: f64,
    episode_len: u32,
}

impl Worker {
    pub fn new(id: usize, env: EnvInstance, mlp: Mlp, base_seed: u64) -> Self {
        Self {
            id,
            env,
            mlp,
            rng: ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(id as u64)),
            params: None,
            obs: Observation::default(),
            needs_reset: true,
            episode_return: 0.0,
            episode_len: 0,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn params_version(&self) -> Option<u64> {
        self.params.as_ref().map(|p| p.version)
    }

    /// Stores a parameter snapshot. Re-sending the held version is a no-op;
    /// an older version is refused.
    pub fn receive(&mut self, params: Arc<PolicyParams>) -> Result<u64, RolloutError> {
        if let Some(held) = self.params_version() {
            if params.version < held {
                return Err(RolloutError::VersionRollback { offered: params.version, held });
            }
            if params.version == held {
                return Ok(held);
            }
        }
        let version = params.version;
        self.params = Some(params);
        Ok(version)
    }

    fn reset_episode(&mut self) {
        let seed = self.rng.next_u64();
        self.obs = self.env.reset(seed);
        self.needs_reset = false;
        self.episode_return = 0.0;
        self.episode_len = 0;
    }

    /// Steps the environment exactly `horizon` times at `level`, resetting
    /// on terminal steps. An in-flight episode from an earlier level is
    /// abandoned so every transition is collected at `level`.
    pub fn collect_segment(&mut self, horizon: usize, level: u32) -> Result<WorkerSegment, RolloutError> {
        let params = self.params.clone().ok_or_else(|| RolloutError::WorkerFailure {
            worker_id: self.id,
            reason: "no parameters received".into(),
        })?;
        self.env.set_difficulty(level)?;
        if self.needs_reset || self.env.level() != level {
            self.reset_episode();
        }
        let mut transitions = Vec::with_capacity(horizon);
        let mut episodes = Vec::new();
        let mut last_terminal = false;
        for _ in 0..horizon {
            if self.needs_reset {
                self.reset_episode();
            }
            let out = self.mlp.forward(&params.values, &self.obs)?;
            let (action, log_prob) = sample_action(&out.logits, self.rng.random::<f64>());
            let step = self.env.step(action)?;
            self.episode_return += step.reward;
            self.episode_len += 1;
            let terminal = step.terminal();
            transitions.push(Transition {
                obs: std::mem::replace(&mut self.obs, step.observation),
                action,
                reward: step.reward,
                terminal,
                log_prob,
                value: out.value,
                difficulty: level,
            });
            if terminal {
                episodes.push(EpisodeOutcome {
                    episode_return: self.episode_return,
                    length: self.episode_len,
                    kind: step.kind,
                });
                self.needs_reset = true;
            }
            last_terminal = terminal;
        }
        let bootstrap_value = if last_terminal {
            0.0
        } else {
            self.mlp.forward(&params.values, &self.obs)?.value
        };
        Ok(WorkerSegment { worker_id: self.id, transitions, bootstrap_value, episodes })
    }
}

enum Command {
    Broadcast(Arc<PolicyParams>),
    Collect { horizon: usize, level: u32 },
}

enum Reply {
    Ack(Result<u64, RolloutError>),
    Segment(Result<WorkerSegment, RolloutError>),
}

struct WorkerThread {
    commands: Sender<Command>,
    replies: Receiver<Reply>,
    handle: Option<JoinHandle<()>>,
}

/// `K` worker threads fed by message passing; the calling thread is the
/// learner and blocks at each barrier.
pub struct RolloutPool {
    threads: Vec<WorkerThread>,
    versions: Vec<Option<u64>>,
}

impl RolloutPool {
    pub fn spawn(env_id: EnvId, workers: usize, mlp: &Mlp, base_seed: u64) -> Result<Self, RolloutError> {
        if workers == 0 {
            return Err(RolloutError::NoWorkers);
        }
        let mut threads = Vec::with_capacity(workers);
        for id in 0..workers {
            let env = EnvInstance::new(env_id, 0)?;
            let worker = Worker::new(id, env, mlp.clone(), base_seed);
            threads.push(spawn_worker(worker)?);
        }
        Ok(Self { threads, versions: vec![None; workers] })
    }

    pub fn workers(&self) -> usize {
        self.threads.len()
    }

    pub fn versions(&self) -> &[Option<u64>] {
        &self.versions
    }

    /// Sends the snapshot to every worker and waits for all acknowledgments.
    pub fn broadcast(&mut self, params: Arc<PolicyParams>) -> Result<Vec<u64>, RolloutError> {
        for (id, t) in self.threads.iter().enumerate() {
            t.commands
                .send(Command::Broadcast(Arc::clone(&params)))
                .map_err(|_| disconnected(id))?;
        }
        let mut acks = Vec::with_capacity(self.threads.len());
        for (id, t) in self.threads.iter().enumerate() {
            match t.replies.recv() {
                Ok(Reply::Ack(result)) => {
                    let version = result?;
                    self.versions[id] = Some(version);
                    acks.push(version);
                }
                Ok(Reply::Segment(_)) => unreachable!("collect reply while broadcasting"),
                Err(_) => return Err(disconnected(id)),
            }
        }
        Ok(acks)
    }

    /// One synchronous round: every worker steps `horizon` times at `level`.
    pub fn collect(&mut self, horizon: usize, level: u32) -> Result<TrajectoryBatch, RolloutError> {
        let version = match self.versions.first().copied().flatten() {
            Some(v) if self.versions.iter().all(|x| *x == Some(v)) => v,
            _ => return Err(RolloutError::VersionSkew(self.versions.clone())),
        };
        let start = Instant::now();
        for (id, t) in self.threads.iter().enumerate() {
            t.commands
                .send(Command::Collect { horizon, level })
                .map_err(|_| disconnected(id))?;
        }
        let mut segments = Vec::with_capacity(self.threads.len());
        let mut failure = None;
        for (id, t) in self.threads.iter().enumerate() {
            match t.replies.recv() {
                Ok(Reply::Segment(Ok(segment))) => segments.push(segment),
                Ok(Reply::Segment(Err(e))) => {
                    failure.get_or_insert(RolloutError::WorkerFailure { worker_id: id, reason: e.to_string() });
                }
                Ok(Reply::Ack(_)) => unreachable!("ack while collecting"),
                Err(_) => {
                    failure.get_or_insert(disconnected(id));
                }
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }
        let mut batch = TrajectoryBatch::from_segments(segments, horizon, version, level);
        batch.elapsed_secs = start.elapsed().as_secs_f64();
        Ok(batch)
    }
}

impl Drop for RolloutPool {
    fn drop(&mut self) {
        for t in &mut self.threads {
            // Closing the command channel ends the worker loop.
            let (dead, _) = mpsc::channel();
            t.commands = dead;
            if let Some(handle) = t.handle.take() {
                let _ = handle.join();
            }
        }
    }
}

fn disconnected(worker_id: usize) -> RolloutError {
    RolloutError::WorkerFailure { worker_id, reason: "worker thread exited".into() }
}

fn spawn_worker(mut worker: Worker) -> Result<WorkerThread, RolloutError> {
    let (cmd_tx, cmd_rx) = mpsc::channel::<Command>();
    let (reply_tx, reply_rx) = mpsc::channel::<Reply>();
    let id = worker.id();
    let handle = thread::Builder::new()
        .name(format!("rollout-{id}"))
        .spawn(move || {
            for command in cmd_rx {
                let reply = match command {
                    Command::Broadcast(params) => Reply::Ack(worker.receive(params)),
                    Command::Collect { horizon, level } => {
                        Reply::Segment(worker.collect_segment(horizon, level))
                    }
                };
                if reply_tx.send(reply).is_err() {
                    break;
                }
            }
        })
        .map_err(|e| RolloutError::WorkerFailure { worker_id: id, reason: e.to_string() })?;
    Ok(WorkerThread { commands: cmd_tx, replies: reply_rx, handle: Some(handle) })
}
