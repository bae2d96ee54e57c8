//! Training runs backed by a run directory:
//!
//! ```text
//! <run_dir>/config.json
//! <run_dir>/metrics.log      rounds, evaluations and events
//! <run_dir>/events.log       events only (a script for replay)
//! <run_dir>/checkpoints/     decision-<k>.ckpt, final.ckpt, save-*.ckpt
//! ```

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::{RunConfig, CONFIG_FILE};
use super::metrics::{compare_logs, read_events, LogComparison, MetricRecord, MetricsWriter, EvalRecord};
use super::metrics::{EVENTS_FILE, METRICS_FILE, VOLATILE_FIELDS};
use super::protocol::ServerMessage;
use super::server::{Hub, RunGate, Server, Session};
use super::SessionError;
use crate::curriculum::{
    now_millis, run_curriculum, AutoSource, CurriculumError, CurriculumEvent, DecisionPoint, DifficultySource,
    HumanSource, RoundRecord, RunObserver, RunState, ScratchSource, ScriptedSource, SourceKind, Trainer,
};
use crate::env::EnvDescriptor;
use crate::eval::EvalReport;
use crate::nn::MlpSpec;

/// Writes logs and checkpoints, and mirrors everything to subscribers.
struct SessionObserver {
    writer: MetricsWriter,
    session: Arc<Session>,
    descriptor: EnvDescriptor,
    spec: MlpSpec,
    checkpoint_dir: PathBuf,
}

fn observer_err(e: impl std::fmt::Display) -> CurriculumError {
    CurriculumError::Observer(e.to_string())
}

impl SessionObserver {
    fn checkpoint(&self, state: &RunState<'_>) -> Checkpoint {
        Checkpoint::new(
            self.descriptor,
            self.spec.clone(),
            state.learner.params().clone(),
            Some(state.learner.adam().clone()),
        )
    }
}

impl RunObserver for SessionObserver {
    fn before_round(&mut self, state: &RunState<'_>) -> Result<(), CurriculumError> {
        self.session.publish_snapshot(state.step, self.checkpoint(state));
        self.session.gate().wait_while_paused();
        Ok(())
    }

    fn on_round(&mut self, record: &RoundRecord) -> Result<(), CurriculumError> {
        self.writer.append(&MetricRecord::Round(record.clone())).map_err(observer_err)?;
        self.session.hub().publish(ServerMessage::Metrics(record.clone()));
        Ok(())
    }

    fn on_eval(&mut self, step: u64, report: &EvalReport) -> Result<(), CurriculumError> {
        let record = EvalRecord { step, report: report.clone() };
        self.writer.append(&MetricRecord::Eval(record)).map_err(observer_err)?;
        self.session.hub().publish(ServerMessage::Eval { step, report: report.clone() });
        Ok(())
    }

    fn on_decision(&mut self, point: &DecisionPoint, state: &RunState<'_>) -> Result<(), CurriculumError> {
        let checkpoint = self.checkpoint(state);
        let path = self.checkpoint_dir.join(format!("decision-{}.ckpt", point.index));
        save_checkpoint(&path, &checkpoint).map_err(observer_err)?;
        self.session.publish_snapshot(state.step, checkpoint);
        self.session.hub().publish(ServerMessage::DecisionPoint {
            index: point.index,
            step: point.global_step,
            reports: point.recent_reports.clone(),
            current_level: state.level,
            max_level: state.max_level,
        });
        Ok(())
    }

    fn on_event(&mut self, event: &CurriculumEvent) -> Result<(), CurriculumError> {
        self.writer.append(&MetricRecord::Event(event.clone())).map_err(observer_err)?;
        self.session.hub().publish(ServerMessage::Event(event.clone()));
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub final_step: u64,
    /// The exit-status criterion: the run reached its step budget.
    pub reached_total: bool,
    pub final_checkpoint: PathBuf,
    pub events: Vec<CurriculumEvent>,
}

/// A run whose directory, session and (optional) server exist but whose
/// training has not started. Lets callers attach to the session first.
pub struct PreparedRun {
    config: RunConfig,
    session: Arc<Session>,
    source: Box<dyn DifficultySource + Send>,
    server: Option<Server>,
}

impl PreparedRun {
    pub fn session(&self) -> &Arc<Session> {
        &self.session
    }

    pub fn run_id(&self) -> &str {
        self.session.hub().run_id()
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.server.as_ref().map(Server::local_addr)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn execute(mut self) -> Result<RunOutcome, SessionError> {
        let config = &self.config;
        let descriptor = config.env.descriptor();
        let spec = MlpSpec::for_env(config.env);
        let hub = self.session.hub().clone();
        let mut observer = SessionObserver {
            writer: MetricsWriter::open(&config.run_dir)?,
            session: self.session.clone(),
            descriptor,
            spec: spec.clone(),
            checkpoint_dir: config.checkpoint_dir(),
        };

        let result = Trainer::new(config.env, spec.clone(), config.ppo.clone(), config.seed)
            .and_then(|mut trainer| run_curriculum(&config.curriculum, self.source.as_mut(), &mut trainer, &mut observer));
        let run = match result {
            Ok(run) => run,
            Err(e) => {
                hub.publish(ServerMessage::Error { message: e.to_string() });
                hub.close();
                return Err(e.into());
            }
        };

        let checkpoint = Checkpoint::new(descriptor, spec, run.params.clone(), Some(run.adam.clone()));
        let final_checkpoint = save_checkpoint(&config.checkpoint_dir().join("final.ckpt"), &checkpoint)?;
        self.session.publish_snapshot(run.final_step, checkpoint);
        let reached_total = run.final_step >= config.ppo.total_steps;
        hub.publish(ServerMessage::Finished { step: run.final_step, reached_total });
        if let Some(server) = self.server.take() {
            server.shutdown();
        }
        hub.close();
        Ok(RunOutcome {
            run_id: hub.run_id().to_string(),
            run_dir: config.run_dir.clone(),
            final_step: run.final_step,
            reached_total,
            final_checkpoint,
            events: run.events,
        })
    }
}

/// The source plus, for human runs, the sender that feeds it commands.
type BuiltSource = (Box<dyn DifficultySource + Send>, Option<mpsc::Sender<crate::curriculum::DifficultyCommand>>);

fn build_source(config: &RunConfig) -> Result<BuiltSource, SessionError> {
    Ok(match config.source {
        SourceKind::Auto => (Box::new(AutoSource), None),
        SourceKind::Scratch => (Box::new(ScratchSource), None),
        SourceKind::Scripted => {
            let source = match (&config.script, &config.schedule) {
                (Some(path), _) => ScriptedSource::new(read_events(path)?),
                (None, Some(levels)) => ScriptedSource::from_levels(levels, config.ppo.total_steps)?,
                (None, None) => return Err(SessionError::Config("scripted source without a script".into())),
            };
            (Box::new(source), None)
        }
        SourceKind::Human => {
            let (tx, rx) = mpsc::channel();
            let wait = config.auto_continue_ms.map(Duration::from_millis);
            (Box::new(HumanSource::new(rx, wait)), Some(tx))
        }
    })
}

/// Validates the config, initializes the run directory and starts the
/// server if a bind address is set.
pub fn prepare(config: &RunConfig) -> Result<PreparedRun, SessionError> {
    config.validate()?;
    let dir = &config.run_dir;
    if dir.join(METRICS_FILE).exists() || dir.join(EVENTS_FILE).exists() {
        return Err(SessionError::RunDirInUse(dir.clone()));
    }
    fs::create_dir_all(config.checkpoint_dir())?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(config)?)?;

    let (source, commands) = build_source(config)?;
    let source_name = serde_json::to_value(config.source)?;
    let run_id = format!(
        "{}-{}-s{}-{:x}",
        config.env.as_str(),
        source_name.as_str().unwrap_or("run"),
        config.seed,
        now_millis()
    );
    let hub = Arc::new(Hub::new(run_id, config.env.descriptor(), config.ppo.total_steps));
    let session = Arc::new(Session::new(hub, Arc::new(RunGate::new()), commands, config.checkpoint_dir()));
    let server = config.bind.as_deref().map(|b| Server::start(b, session.clone())).transpose()?;
    Ok(PreparedRun { config: config.clone(), session, source, server })
}

pub fn train(config: &RunConfig) -> Result<RunOutcome, SessionError> {
    prepare(config)?.execute()
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub outcome: RunOutcome,
    pub comparison: LogComparison,
}

/// Fields ignored when comparing a replay with its original. The event
/// source differs by construction (the replay is scripted).
pub const REPLAY_IGNORED_FIELDS: &[&str] = &["wall_clock", "steps_per_sec", "source"];

/// Re-runs `run_dir` with its own event log as the script, into
/// `<run_dir>/replay-<n>`, and compares the metrics logs.
pub fn replay(run_dir: &Path) -> Result<ReplayOutcome, SessionError> {
    let original = RunConfig::load(&run_dir.join(CONFIG_FILE))?;
    let events = run_dir.join(EVENTS_FILE);
    let target = (0..)
        .map(|n| run_dir.join(format!("replay-{n}")))
        .find(|p| !p.exists())
        .expect("unbounded search");
    let config = RunConfig {
        source: SourceKind::Scripted,
        script: Some(events),
        schedule: None,
        auto_continue_ms: None,
        run_dir: target,
        bind: None,
        ..original
    };
    let outcome = train(&config)?;
    let comparison =
        compare_logs(&run_dir.join(METRICS_FILE), &outcome.run_dir.join(METRICS_FILE), REPLAY_IGNORED_FIELDS)?;
    Ok(ReplayOutcome { outcome, comparison })
}

/// Compares two runs' metrics with only the wall-clock fields ignored.
pub fn compare_runs(a: &Path, b: &Path) -> Result<LogComparison, SessionError> {
    compare_logs(&a.join(METRICS_FILE), &b.join(METRICS_FILE), VOLATILE_FIELDS)
}
