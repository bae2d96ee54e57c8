//! Control plane: subscriber fan-out, pause gate, client message handling
//! and the TCP acceptor. The training loop never touches a socket; it
//! publishes through [`Hub`] and blocks only on [`RunGate`] or the human
//! command channel.

use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::protocol::{decode_client, encode_server, ClientEnvelope, ClientMessage, ServerEnvelope, ServerMessage};
use super::SessionError;
use crate::curriculum::{apply_command, DifficultyCommand};
use crate::env::EnvDescriptor;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Pause/play switch checked by the training loop between rounds.
#[derive(Debug, Default)]
pub struct RunGate {
    paused: Mutex<bool>,
    changed: Condvar,
}

impl RunGate {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns whether the state changed.
    pub fn pause(&self) -> bool {
        let mut paused = lock(&self.paused);
        !std::mem::replace(&mut *paused, true)
    }

    pub fn resume(&self) -> bool {
        let mut paused = lock(&self.paused);
        let was = std::mem::replace(&mut *paused, false);
        self.changed.notify_all();
        was
    }

    pub fn is_paused(&self) -> bool {
        *lock(&self.paused)
    }

    pub fn wait_while_paused(&self) {
        let mut paused = lock(&self.paused);
        while *paused {
            paused = self.changed.wait(paused).unwrap_or_else(|p| p.into_inner());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct HubState {
    step: u64,
    current_level: u32,
    paused: bool,
    pending_decision: Option<usize>,
    finished: bool,
}

struct HubInner {
    next_seq: u64,
    next_id: usize,
    subscribers: Vec<(usize, Sender<String>)>,
    state: HubState,
}

/// Outbound fan-out. Sequence numbers come from one counter and are
/// assigned under the same lock that delivers, so every subscriber sees a
/// strictly increasing sequence.
pub struct Hub {
    run_id: String,
    descriptor: EnvDescriptor,
    total_steps: u64,
    inner: Mutex<HubInner>,
}

pub struct Subscription {
    pub id: usize,
    pub lines: Receiver<String>,
}

impl Hub {
    pub fn new(run_id: impl Into<String>, descriptor: EnvDescriptor, total_steps: u64) -> Self {
        Self {
            run_id: run_id.into(),
            descriptor,
            total_steps,
            inner: Mutex::new(HubInner { next_seq: 0, next_id: 0, subscribers: Vec::new(), state: HubState::default() }),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn descriptor(&self) -> EnvDescriptor {
        self.descriptor
    }

    fn envelope(&self, inner: &mut HubInner, message: ServerMessage) -> String {
        let seq = inner.next_seq;
        inner.next_seq += 1;
        encode_server(&ServerEnvelope { run_id: self.run_id.clone(), seq, message })
    }

    fn state_message(&self, state: HubState) -> ServerMessage {
        ServerMessage::State {
            step: state.step,
            current_level: state.current_level,
            max_level: self.descriptor.max_level,
            paused: state.paused,
            pending_decision: state.pending_decision,
            finished: state.finished,
        }
    }

    /// New subscriber; its first two lines are `hello` and `state`.
    pub fn subscribe(&self) -> Subscription {
        let (tx, rx) = mpsc::channel();
        let mut inner = lock(&self.inner);
        let id = inner.next_id;
        inner.next_id += 1;
        let hello = ServerMessage::Hello { env: self.descriptor, total_steps: self.total_steps };
        let hello = self.envelope(&mut inner, hello);
        let state = self.state_message(inner.state);
        let state = self.envelope(&mut inner, state);
        let _ = tx.send(hello);
        let _ = tx.send(state);
        inner.subscribers.push((id, tx));
        Subscription { id, lines: rx }
    }

    pub fn unsubscribe(&self, id: usize) {
        lock(&self.inner).subscribers.retain(|(sid, _)| *sid != id);
    }

    pub fn subscriber_count(&self) -> usize {
        lock(&self.inner).subscribers.len()
    }

    /// Broadcast to every subscriber, updating the late-joiner snapshot.
    pub fn publish(&self, message: ServerMessage) {
        let mut inner = lock(&self.inner);
        let state = &mut inner.state;
        match &message {
            ServerMessage::Metrics(record) => state.step = record.step,
            ServerMessage::DecisionPoint { index, current_level, .. } => {
                state.pending_decision = Some(*index);
                state.current_level = *current_level;
            }
            ServerMessage::Event(event) => {
                state.pending_decision = None;
                state.current_level = event.new_level;
            }
            ServerMessage::Paused {} => state.paused = true,
            ServerMessage::Resumed {} => state.paused = false,
            ServerMessage::Finished { step, .. } => {
                state.finished = true;
                state.step = *step;
            }
            _ => {}
        }
        let line = self.envelope(&mut inner, message);
        inner.subscribers.retain(|(_, tx)| tx.send(line.clone()).is_ok());
    }

    /// Reply to a single subscriber.
    pub fn send_to(&self, id: usize, message: ServerMessage) {
        let mut inner = lock(&self.inner);
        let line = self.envelope(&mut inner, message);
        if let Some((_, tx)) = inner.subscribers.iter().find(|(sid, _)| *sid == id) {
            let _ = tx.send(line);
        }
    }

    pub fn current_state(&self) -> ServerMessage {
        let state = lock(&self.inner).state;
        self.state_message(state)
    }

    /// Drops every subscriber channel; connection writers then exit.
    pub fn close(&self) {
        lock(&self.inner).subscribers.clear();
    }
}

/// What a client can act on for one run.
pub struct Session {
    hub: Arc<Hub>,
    gate: Arc<RunGate>,
    commands: Option<Sender<DifficultyCommand>>,
    snapshot: Mutex<Option<(u64, Checkpoint)>>,
    checkpoint_dir: PathBuf,
    saves: AtomicU64,
}

impl Session {
    /// `commands` is present only for human-steered runs.
    pub fn new(
        hub: Arc<Hub>,
        gate: Arc<RunGate>,
        commands: Option<Sender<DifficultyCommand>>,
        checkpoint_dir: PathBuf,
    ) -> Self {
        Self { hub, gate, commands, snapshot: Mutex::new(None), checkpoint_dir, saves: AtomicU64::new(0) }
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    pub fn gate(&self) -> &Arc<RunGate> {
        &self.gate
    }

    /// Latest parameters, published by the training loop between rounds.
    pub fn publish_snapshot(&self, step: u64, checkpoint: Checkpoint) {
        *lock(&self.snapshot) = Some((step, checkpoint));
    }

    /// Applies one client message. Broadcasts (paused, resumed, saved) go
    /// through the hub; the return value is a reply for the sender only.
    pub fn handle_message(&self, envelope: ClientEnvelope) -> Result<Option<ServerMessage>, SessionError> {
        if let Some(run_id) = &envelope.run_id {
            if run_id != self.hub.run_id() {
                return Err(SessionError::UnknownRun(run_id.clone()));
            }
        }
        let error = |message: String| Ok(Some(ServerMessage::Error { message }));
        match envelope.message {
            ClientMessage::Command { command } => {
                let max = self.hub.descriptor().max_level;
                if let Err(e) = apply_command(command, 0, max) {
                    return error(e.to_string());
                }
                match &self.commands {
                    None => error("run is not steered by a human source".into()),
                    Some(tx) => match tx.send(command) {
                        Ok(()) => Ok(None),
                        Err(_) => error("run is no longer accepting commands".into()),
                    },
                }
            }
            ClientMessage::Pause {} => {
                self.gate.pause();
                self.hub.publish(ServerMessage::Paused {});
                Ok(None)
            }
            ClientMessage::Play {} => {
                self.gate.resume();
                self.hub.publish(ServerMessage::Resumed {});
                Ok(None)
            }
            ClientMessage::Save {} => {
                let Some((step, checkpoint)) = lock(&self.snapshot).clone() else {
                    return error("nothing to save yet".into());
                };
                let n = self.saves.fetch_add(1, Ordering::SeqCst);
                let path = self.checkpoint_dir.join(format!("save-{step}-{n}.ckpt"));
                match save_checkpoint(&path, &checkpoint) {
                    Ok(path) => {
                        self.hub.publish(ServerMessage::Saved { path: path.display().to_string() });
                        Ok(None)
                    }
                    Err(e) => error(format!("save failed: {e}")),
                }
            }
            ClientMessage::Subscribe {} => Ok(Some(self.hub.current_state())),
        }
    }

    /// Handles one raw line on behalf of subscriber `id`, replying to it.
    pub fn handle_line(&self, id: usize, line: &str) {
        let reply = match decode_client(line) {
            Ok(None) => None,
            Ok(Some(envelope)) => match self.handle_message(envelope) {
                Ok(reply) => reply,
                Err(e) => Some(ServerMessage::Error { message: e.to_string() }),
            },
            Err(e) => Some(ServerMessage::Error { message: e.to_string() }),
        };
        if let Some(reply) = reply {
            self.hub.send_to(id, reply);
        }
    }
}

/// TCP acceptor; one reader and one writer thread per connection.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    session: Arc<Session>,
}

impl Server {
    pub fn start(bind: &str, session: Arc<Session>) -> Result<Self, SessionError> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let stop = stop.clone();
            let session = session.clone();
            thread::Builder::new().name("hcrl-acceptor".into()).spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    if let Ok(stream) = stream {
                        let _ = serve_connection(stream, session.clone());
                    }
                }
            })?
        };
        Ok(Self { addr, stop, acceptor: Some(acceptor), session })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and closes every connection.
    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if let Some(handle) = self.acceptor.take() {
            self.stop.store(true, Ordering::SeqCst);
            // wake the blocking accept
            let _ = TcpStream::connect(self.addr);
            let _ = handle.join();
            self.session.hub().close();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

fn serve_connection(stream: TcpStream, session: Arc<Session>) -> std::io::Result<()> {
    let subscription = session.hub().subscribe();
    let id = subscription.id;
    let mut writer = stream.try_clone()?;
    thread::Builder::new().name(format!("hcrl-conn-{id}-tx")).spawn(move || {
        for line in subscription.lines {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                break;
            }
            let _ = writer.flush();
        }
        let _ = writer.shutdown(Shutdown::Both);
    })?;
    thread::Builder::new().name(format!("hcrl-conn-{id}-rx")).spawn(move || {
        let reader = BufReader::new(stream);
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if !line.trim().is_empty() {
                session.handle_line(id, &line);
            }
        }
        session.hub().unsubscribe(id);
    })?;
    Ok(())
}
