//! One episode per session, owned by a single worker task. Handlers talk to
//! the worker through its command queue, so all mutations of a session are
//! totally ordered.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use remove_core::feedback::{ActionSequence, Instruction, LanguageModel, PromptTemplate, Provenance};
use remove_core::gridworld::AgentState;
use remove_core::runner::{
    interpret_instruction, Episode, EpisodeEvent, FeedbackContext, FeedbackMode, FeedbackSource, Method, Phase,
    RunError, ScriptedOracle, MAX_FEEDBACK_ATTEMPTS,
};
use remove_core::scenario::ScenarioSpec;
use serde::Serialize;
use tokio::sync::{mpsc, oneshot, watch};

use crate::store::LogStore;
use crate::ServiceError;

/// An event with its position in the session's stream.
#[derive(Debug, Clone, Serialize)]
pub struct Frame {
    pub seq: u64,
    #[serde(flatten)]
    pub event: EpisodeEvent,
}

#[derive(Debug, Clone, Serialize)]
pub struct Preview {
    pub actions: Vec<u8>,
    pub provenance: Provenance,
}

impl From<&ActionSequence> for Preview {
    fn from(s: &ActionSequence) -> Self {
        Preview { actions: s.codes(), provenance: s.provenance() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionStatus {
    pub id: String,
    pub scenario: ScenarioSpec,
    pub method: Method,
    pub seed: u64,
    pub feedback: FeedbackMode,
    pub phase: Phase,
    pub state: AgentState,
    pub events: u64,
    /// Store record of the finished log.
    pub record: Option<u64>,
}

pub(crate) enum Command {
    Feedback { text: String, reply: oneshot::Sender<Result<Preview, ServiceError>> },
    Confirm { reply: oneshot::Sender<Result<(), ServiceError>> },
}

pub(crate) struct Shared {
    frames: Mutex<Vec<Frame>>,
    latest: watch::Sender<u64>,
    status: Mutex<SessionStatus>,
}

impl Shared {
    fn publish(&self, events: Vec<EpisodeEvent>, ep: &Episode) {
        let mut frames = self.frames.lock().unwrap();
        for event in events {
            let seq = frames.len() as u64;
            frames.push(Frame { seq, event });
        }
        let n = frames.len() as u64;
        {
            let mut s = self.status.lock().unwrap();
            s.phase = ep.phase().clone();
            s.state = ep.state();
            s.events = n;
        }
        drop(frames);
        self.latest.send_replace(n);
    }

    /// Frames with `seq >= from`, and whether the stream has ended.
    pub(crate) fn frames_from(&self, from: u64) -> (Vec<Frame>, bool) {
        let frames = self.frames.lock().unwrap();
        let ended = matches!(frames.last(), Some(Frame { event: EpisodeEvent::EpisodeEnded { .. }, .. }));
        (frames.iter().skip(from as usize).cloned().collect(), ended)
    }

    pub(crate) fn subscribe(&self) -> watch::Receiver<u64> {
        self.latest.subscribe()
    }

    pub(crate) fn status(&self) -> SessionStatus {
        self.status.lock().unwrap().clone()
    }
}

#[derive(Clone)]
pub(crate) struct SessionHandle {
    pub(crate) shared: Arc<Shared>,
    commands: mpsc::Sender<Command>,
}

impl SessionHandle {
    async fn call<T>(
        &self,
        make: impl FnOnce(oneshot::Sender<Result<T, ServiceError>>) -> Command,
    ) -> Result<T, ServiceError> {
        let (tx, rx) = oneshot::channel();
        let gone = || ServiceError::Internal("session worker stopped".into());
        self.commands.send(make(tx)).await.map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?
    }

    pub(crate) async fn feedback(&self, text: String) -> Result<Preview, ServiceError> {
        self.call(|reply| Command::Feedback { text, reply }).await
    }

    pub(crate) async fn confirm(&self) -> Result<(), ServiceError> {
        self.call(|reply| Command::Confirm { reply }).await
    }
}

pub(crate) struct WorkerSetup {
    pub id: String,
    pub scenario: ScenarioSpec,
    pub feedback: FeedbackMode,
    pub step_delay: Duration,
    pub template: Arc<PromptTemplate>,
    pub model: Option<Arc<dyn LanguageModel>>,
    pub store: Arc<Mutex<LogStore>>,
}

/// Spawns the worker on the current runtime.
pub(crate) fn spawn(ep: Episode, setup: WorkerSetup) -> SessionHandle {
    let status = SessionStatus {
        id: setup.id.clone(),
        scenario: setup.scenario.clone(),
        method: ep.config().method,
        seed: ep.seed(),
        feedback: setup.feedback,
        phase: ep.phase().clone(),
        state: ep.state(),
        events: 0,
        record: None,
    };
    let shared = Arc::new(Shared { frames: Mutex::new(Vec::new()), latest: watch::channel(0).0, status: Mutex::new(status) });
    let (tx, rx) = mpsc::channel(16);
    tokio::spawn(Worker { ep, setup, shared: shared.clone(), commands: rx }.run());
    SessionHandle { shared, commands: tx }
}

struct Worker {
    ep: Episode,
    setup: WorkerSetup,
    shared: Arc<Shared>,
    commands: mpsc::Receiver<Command>,
}

impl Worker {
    async fn run(mut self) {
        loop {
            match self.ep.phase() {
                Phase::Terminal { .. } => {
                    match self.commands.recv().await {
                        Some(cmd) => self.handle(cmd).await,
                        None => return,
                    }
                }
                Phase::AwaitingFeedback { .. } if self.setup.feedback == FeedbackMode::Scripted => {
                    if let Err(e) = self.answer_from_oracle().await {
                        tracing::error!(session = %self.setup.id, "scripted feedback failed: {e}");
                        return;
                    }
                }
                Phase::AwaitingFeedback { .. } => match self.commands.recv().await {
                    Some(cmd) => self.handle(cmd).await,
                    None => return,
                },
                Phase::Running | Phase::Executing { .. } => {
                    tokio::select! {
                        biased;
                        cmd = self.commands.recv() => match cmd {
                            Some(cmd) => self.handle(cmd).await,
                            None => return,
                        },
                        _ = tokio::time::sleep(self.setup.step_delay) => {
                            match self.ep.advance() {
                                Ok(events) => {
                                    // Stored before EpisodeEnded goes out, so a client that
                                    // saw the end can fetch the record.
                                    if self.ep.phase().is_terminal() {
                                        self.persist().await;
                                    }
                                    self.shared.publish(events, &self.ep);
                                }
                                Err(e) => {
                                    tracing::error!(session = %self.setup.id, "episode step failed: {e}");
                                    return;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    async fn persist(&mut self) {
        let store = self.setup.store.clone();
        let log = self.ep.to_log();
        let result = tokio::task::spawn_blocking(move || store.lock().unwrap().append("sessions", &log)).await;
        match result {
            Ok(Ok(id)) => self.shared.status.lock().unwrap().record = Some(id),
            Ok(Err(e)) => tracing::error!(session = %self.setup.id, "cannot persist log: {e}"),
            Err(e) => tracing::error!(session = %self.setup.id, "persist task failed: {e}"),
        }
    }

    async fn answer_from_oracle(&mut self) -> Result<(), RunError> {
        let Phase::AwaitingFeedback { reason, .. } = self.ep.phase() else { return Ok(()) };
        let ctx = FeedbackContext {
            grid: self.ep.grid(),
            state: self.ep.state(),
            reason: *reason,
            attempt: self.ep.attempts(),
            last_error: self.ep.last_error(),
        };
        let Some(instr) = ScriptedOracle::default().request(&ctx) else {
            self.ep.give_up()?;
            return Ok(());
        };
        match self.interpret(&instr).await {
            Ok(seq) => {
                let events = self.ep.propose(Some(instr), seq)?;
                self.ep.confirm()?;
                self.shared.publish(events, &self.ep);
            }
            Err(ServiceError::Feedback(e)) => {
                if self.ep.reject(Some(instr), e)? >= MAX_FEEDBACK_ATTEMPTS {
                    self.ep.give_up()?;
                }
            }
            Err(e) => return Err(RunError::BadConfig(e.to_string())),
        }
        Ok(())
    }

    async fn interpret(&self, instr: &Instruction) -> Result<ActionSequence, ServiceError> {
        let (instr, template, model) = (instr.clone(), self.setup.template.clone(), self.setup.model.clone());
        tokio::task::spawn_blocking(move || interpret_instruction(&instr, &template, model.as_deref()))
            .await
            .map_err(|e| ServiceError::Internal(e.to_string()))?
            .map_err(ServiceError::Feedback)
    }

    async fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Feedback { text, reply } => {
                let r = self.feedback(text).await;
                let _ = reply.send(r);
            }
            Command::Confirm { reply } => {
                let r = self.ep.confirm().map_err(ServiceError::from);
                if r.is_ok() {
                    self.shared.publish(Vec::new(), &self.ep);
                }
                let _ = reply.send(r);
            }
        }
    }

    async fn feedback(&mut self, text: String) -> Result<Preview, ServiceError> {
        if !matches!(self.ep.phase(), Phase::AwaitingFeedback { .. }) {
            return Err(ServiceError::WrongState { phase: self.ep.phase().name() });
        }
        if self.setup.feedback == FeedbackMode::Scripted {
            return Err(ServiceError::ReadOnly);
        }
        let instr = match Instruction::operator(text) {
            Ok(i) => i,
            Err(e) => {
                self.ep.reject(None, e.clone())?;
                return Err(ServiceError::Feedback(e));
            }
        };
        match self.interpret(&instr).await {
            Ok(seq) => {
                let preview = Preview::from(&seq);
                let events = self.ep.propose(Some(instr), seq)?;
                self.shared.publish(events, &self.ep);
                Ok(preview)
            }
            Err(ServiceError::Feedback(e)) => {
                self.ep.reject(Some(instr), e.clone())?;
                Err(ServiceError::Feedback(e))
            }
            Err(e) => Err(e),
        }
    }
}
