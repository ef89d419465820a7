//! Step-wise episode state machine and the batch driver around it.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    normalized_length, Driver, EpisodeLog, EpisodeMetrics, FeedbackEvent, Method, Outcome, RequestReason, RunError,
    StepRecord, TrailPoint, TriggerRecord, FROZEN_THRESHOLD, MAX_FEEDBACK_ATTEMPTS,
};
use crate::changepoint::{DetectorConfig, RunLengthPosterior};
use crate::feedback::{interpret, ActionSequence, FeedbackError, Instruction, InstructionSource, LanguageModel, PromptTemplate, Provenance};
use crate::gridworld::{Action, AgentState, CellKind, Grid, Pos, StepEvent, StepOutcome};
use crate::observe::{Observer, SeenMask};
use crate::par;
use crate::policy::{decode_action, EnsemblePolicy};
use crate::uncertainty::{decompose_at, UncertaintyRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub method: Method,
    pub detector: DetectorConfig,
    /// Step budget; `None` means `4 L²`.
    pub max_steps: Option<u32>,
    pub frozen_threshold: u32,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            method: Method::ReMove,
            detector: DetectorConfig::default(),
            max_steps: None,
            frozen_threshold: FROZEN_THRESHOLD,
        }
    }
}

impl EpisodeConfig {
    pub fn for_method(method: Method) -> Self {
        EpisodeConfig { method, ..Default::default() }
    }

    pub fn step_budget(&self, l: usize) -> u32 {
        self.max_steps.unwrap_or((4 * l * l) as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Running,
    AwaitingFeedback {
        t: u32,
        reason: RequestReason,
        uncertainty: Option<UncertaintyRecord>,
        preview: Option<ActionSequence>,
    },
    Executing {
        sequence: ActionSequence,
        index: usize,
    },
    Terminal {
        outcome: Outcome,
    },
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Running => "running",
            Phase::AwaitingFeedback { .. } => "awaiting_feedback",
            Phase::Executing { .. } => "executing",
            Phase::Terminal { .. } => "terminal",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Phase::Terminal { .. })
    }
}

/// Observable progress of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum EpisodeEvent {
    StepTaken {
        t: u32,
        pos: Pos,
        action: Action,
        next: Pos,
        event: StepEvent,
        mutual_info: f64,
        total_entropy: f64,
        expected_entropy: f64,
    },
    FeedbackRequested {
        t: u32,
        pos: Pos,
        reason: RequestReason,
        mutual_info: Option<f64>,
    },
    SequencePreview {
        actions: Vec<u8>,
        provenance: Provenance,
        text: Option<String>,
    },
    ExecutionProgress {
        index: usize,
        total: usize,
        action: Action,
        pos: Pos,
        event: StepEvent,
    },
    EpisodeEnded {
        metrics: EpisodeMetrics,
    },
}

impl EpisodeEvent {
    pub fn type_name(&self) -> &'static str {
        match self {
            EpisodeEvent::StepTaken { .. } => "StepTaken",
            EpisodeEvent::FeedbackRequested { .. } => "FeedbackRequested",
            EpisodeEvent::SequencePreview { .. } => "SequencePreview",
            EpisodeEvent::ExecutionProgress { .. } => "ExecutionProgress",
            EpisodeEvent::EpisodeEnded { .. } => "EpisodeEnded",
        }
    }
}

/// What a feedback source sees when asked for help.
pub struct FeedbackContext<'a> {
    pub grid: &'a Grid,
    pub state: AgentState,
    pub reason: RequestReason,
    pub attempt: usize,
    pub last_error: Option<&'a FeedbackError>,
}

pub trait FeedbackSource {
    /// An instruction, or `None` when no help is available.
    fn request(&mut self, ctx: &FeedbackContext<'_>) -> Option<Instruction>;
}

/// Never answers.
pub struct NoFeedback;

impl FeedbackSource for NoFeedback {
    fn request(&mut self, _: &FeedbackContext<'_>) -> Option<Instruction> {
        None
    }
}

/// Uniform pick among free cells within Chebyshev distance 1 of the
/// declared start, seeded by the trial seed.
pub fn jittered_start(grid: &Grid, seed: u64) -> Pos {
    let s = grid.start();
    let mut candidates = Vec::new();
    for dr in -1..=1 {
        for dc in -1..=1 {
            let p = Pos::new(s.row + dr, s.col + dc);
            if grid.in_central(p) && grid.cell(p) == CellKind::Empty {
                candidates.push(p);
            }
        }
    }
    let mut rng = par::rng_for(seed, 1);
    candidates.choose(&mut rng).copied().unwrap_or(s)
}

pub struct Episode {
    grid: Grid,
    policy: Arc<EnsemblePolicy>,
    observer: Observer,
    config: EpisodeConfig,
    detector: RunLengthPosterior,
    rng: ChaCha8Rng,
    state: AgentState,
    seen: SeenMask,
    phase: Phase,
    stuck: u32,
    last_record: Option<UncertaintyRecord>,
    budget: u32,
    scenario_id: String,
    seed: u64,
    start: Pos,
    steps: Vec<StepRecord>,
    feedback_events: Vec<FeedbackEvent>,
    triggers: Vec<TriggerRecord>,
    trail: Vec<TrailPoint>,
    path_length: u32,
    history: Vec<EpisodeEvent>,
}

impl Episode {
    /// Starts at `grid.start()`; callers apply any start jitter beforehand.
    pub fn new(
        grid: Grid,
        policy: Arc<EnsemblePolicy>,
        config: EpisodeConfig,
        scenario_id: impl Into<String>,
        seed: u64,
    ) -> Result<Episode, RunError> {
        if config.method == Method::PerceivedPlannerBaseline {
            return Err(RunError::ConfigMismatch("the planner baseline does not run a policy episode".into()));
        }
        if grid.start() == grid.goal() {
            return Err(RunError::ConfigMismatch("start and goal coincide".into()));
        }
        let observer = policy.observer().clone();
        let state = AgentState::at(grid.start());
        let mut seen = SeenMask::for_grid(&grid);
        seen.reveal(state.pos, observer.params().lp.max(1));
        let probe = observer.observe(&grid, &state, &seen)?;
        if probe.len() != policy.input_dim() {
            return Err(RunError::ConfigMismatch(format!(
                "{:?} observation on L={} has {} values, policy expects {}",
                probe.kind,
                grid.l(),
                probe.len(),
                policy.input_dim()
            )));
        }
        let detector = RunLengthPosterior::new(config.detector)?;
        let budget = config.step_budget(grid.l());
        let start = grid.start();
        Ok(Episode {
            observer,
            detector,
            rng: par::rng_for(seed, 2),
            state,
            seen,
            phase: Phase::Running,
            stuck: 0,
            last_record: None,
            budget,
            scenario_id: scenario_id.into(),
            seed,
            start,
            steps: Vec::new(),
            feedback_events: Vec::new(),
            triggers: Vec::new(),
            trail: vec![TrailPoint { pos: start, driver: Driver::Policy }],
            path_length: 0,
            history: Vec::new(),
            grid,
            policy,
            config,
        })
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn state(&self) -> AgentState {
        self.state
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    /// Every event emitted so far.
    pub fn history(&self) -> &[EpisodeEvent] {
        &self.history
    }

    /// Attempts already rejected for the pending request.
    pub fn attempts(&self) -> usize {
        match (&self.phase, self.feedback_events.last()) {
            (Phase::AwaitingFeedback { .. }, Some(f)) => f.errors.len(),
            _ => 0,
        }
    }

    pub fn last_error(&self) -> Option<&FeedbackError> {
        match &self.phase {
            Phase::AwaitingFeedback { .. } => self.feedback_events.last().and_then(|f| f.errors.last()),
            _ => None,
        }
    }

    fn emit(&mut self, out: &mut Vec<EpisodeEvent>, e: EpisodeEvent) {
        self.history.push(e.clone());
        out.push(e);
    }

    fn wrong_state(&self) -> RunError {
        RunError::WrongState { phase: self.phase.name() }
    }

    /// One unit of progress: a policy step while running, one action of the
    /// sequence while executing. No-op once terminal.
    pub fn advance(&mut self) -> Result<Vec<EpisodeEvent>, RunError> {
        let mut out = Vec::new();
        match self.phase {
            Phase::Terminal { .. } => {}
            Phase::AwaitingFeedback { .. } => return Err(self.wrong_state()),
            Phase::Running => self.policy_step(&mut out)?,
            Phase::Executing { .. } => self.execute_step(&mut out),
        }
        Ok(out)
    }

    fn policy_step(&mut self, out: &mut Vec<EpisodeEvent>) -> Result<(), RunError> {
        if self.state.t >= self.budget {
            self.terminate(Outcome::Timeout, out);
            return Ok(());
        }
        let t = self.state.t;
        let obs = self.observer.observe(&self.grid, &self.state, &self.seen)?;
        let rows = self.policy.predict_members(&obs, &mut self.rng)?;
        let record = decompose_at(t, &rows)?;
        let decision = self.detector.update(record.mutual_info)?;
        self.last_record = Some(record.clone());
        if decision.fired {
            self.triggers.push(TriggerRecord {
                t,
                pos: self.state.pos,
                reason: RequestReason::Changepoint,
                obstacle_distance: self.grid.obstacle_distance(self.state.pos),
                mutual_info: Some(record.mutual_info),
                short_run_mass: Some(decision.short_run_mass),
            });
            if self.config.method == Method::ReMove {
                self.request_feedback(RequestReason::Changepoint, out);
                return Ok(());
            }
            self.detector.reset();
        }
        let action = decode_action(&rows);
        let from = self.state.pos;
        let outcome = self.grid.step(self.state, action);
        self.steps.push(StepRecord {
            t,
            pos: from,
            obs_digest: Some(obs.digest()),
            action,
            event: outcome.event,
            uncertainty: Some(record.clone()),
        });
        self.emit(
            out,
            EpisodeEvent::StepTaken {
                t,
                pos: from,
                action,
                next: outcome.state.pos,
                event: outcome.event,
                mutual_info: record.mutual_info,
                total_entropy: record.total_entropy,
                expected_entropy: record.expected_entropy,
            },
        );
        if self.apply(outcome, Driver::Policy, out) {
            return Ok(());
        }
        if outcome.event.moved() {
            self.stuck = 0;
        } else {
            self.stuck += 1;
        }
        if self.stuck >= self.config.frozen_threshold {
            if self.config.method == Method::ReMove {
                self.triggers.push(TriggerRecord {
                    t: self.state.t,
                    pos: self.state.pos,
                    reason: RequestReason::Frozen,
                    obstacle_distance: self.grid.obstacle_distance(self.state.pos),
                    mutual_info: None,
                    short_run_mass: None,
                });
                self.stuck = 0;
                self.request_feedback(RequestReason::Frozen, out);
            } else {
                self.terminate(Outcome::Frozen, out);
            }
            return Ok(());
        }
        if self.state.t >= self.budget {
            self.terminate(Outcome::Timeout, out);
        }
        Ok(())
    }

    /// Moves the agent; returns whether the episode ended.
    fn apply(&mut self, outcome: StepOutcome, driver: Driver, out: &mut Vec<EpisodeEvent>) -> bool {
        if outcome.state.pos != self.state.pos {
            self.path_length += 1;
        }
        self.state = outcome.state;
        self.seen.reveal(self.state.pos, self.observer.params().lp.max(1));
        self.trail.push(TrailPoint { pos: self.state.pos, driver });
        match outcome.event {
            StepEvent::Collision => {
                self.terminate(Outcome::Collision, out);
                true
            }
            StepEvent::ReachedGoal => {
                self.terminate(Outcome::Success, out);
                true
            }
            _ => false,
        }
    }

    fn request_feedback(&mut self, reason: RequestReason, out: &mut Vec<EpisodeEvent>) {
        let t = self.state.t;
        self.feedback_events.push(FeedbackEvent {
            t,
            reason,
            instruction: None,
            sequence: None,
            provenance: None,
            errors: Vec::new(),
            executed: 0,
        });
        let mi = self.last_record.as_ref().map(|r| r.mutual_info);
        self.phase = Phase::AwaitingFeedback { t, reason, uncertainty: self.last_record.clone(), preview: None };
        self.emit(out, EpisodeEvent::FeedbackRequested { t, pos: self.state.pos, reason, mutual_info: mi });
    }

    /// Records a parsed sequence as the pending preview (replacing any
    /// earlier one). Execution waits for [`Episode::confirm`].
    pub fn propose(
        &mut self,
        instruction: Option<Instruction>,
        sequence: ActionSequence,
    ) -> Result<Vec<EpisodeEvent>, RunError> {
        let Phase::AwaitingFeedback { preview, .. } = &mut self.phase else {
            return Err(self.wrong_state());
        };
        *preview = Some(sequence.clone());
        let text = instruction.as_ref().map(|i| i.text().to_string());
        if let Some(f) = self.feedback_events.last_mut() {
            f.instruction = instruction;
            f.provenance = Some(sequence.provenance());
            f.sequence = Some(sequence.clone());
        }
        let mut out = Vec::new();
        self.emit(
            &mut out,
            EpisodeEvent::SequencePreview { actions: sequence.codes(), provenance: sequence.provenance(), text },
        );
        Ok(out)
    }

    /// Starts executing the pending preview.
    pub fn confirm(&mut self) -> Result<(), RunError> {
        match &self.phase {
            Phase::AwaitingFeedback { preview: Some(seq), .. } => {
                self.phase = Phase::Executing { sequence: seq.clone(), index: 0 };
                Ok(())
            }
            _ => Err(self.wrong_state()),
        }
    }

    /// Records a failed attempt; returns the number of failures so far.
    pub fn reject(&mut self, instruction: Option<Instruction>, error: FeedbackError) -> Result<usize, RunError> {
        if !matches!(self.phase, Phase::AwaitingFeedback { .. }) {
            return Err(self.wrong_state());
        }
        let f = self.feedback_events.last_mut().expect("a request is pending");
        if instruction.is_some() {
            f.instruction = instruction;
        }
        f.errors.push(error);
        Ok(f.errors.len())
    }

    /// Abandons the pending request and hands control back to the policy.
    pub fn give_up(&mut self) -> Result<(), RunError> {
        if !matches!(self.phase, Phase::AwaitingFeedback { .. }) {
            return Err(self.wrong_state());
        }
        self.resume();
        Ok(())
    }

    fn resume(&mut self) {
        self.detector.reset();
        self.stuck = 0;
        self.phase = Phase::Running;
    }

    fn execute_step(&mut self, out: &mut Vec<EpisodeEvent>) {
        let Phase::Executing { sequence, index } = &self.phase else { unreachable!() };
        let (sequence, index) = (sequence.clone(), *index);
        if self.state.t >= self.budget {
            self.terminate(Outcome::Timeout, out);
            return;
        }
        let action = sequence.actions()[index];
        let outcome = self.grid.step(self.state, action);
        if let Some(f) = self.feedback_events.last_mut() {
            f.executed += 1;
        }
        self.emit(
            out,
            EpisodeEvent::ExecutionProgress {
                index,
                total: sequence.len(),
                action,
                pos: outcome.state.pos,
                event: outcome.event,
            },
        );
        if self.apply(outcome, Driver::Feedback, out) {
            return;
        }
        if index + 1 == sequence.len() {
            self.resume();
        } else {
            self.phase = Phase::Executing { sequence, index: index + 1 };
        }
        if self.state.t >= self.budget {
            self.terminate(Outcome::Timeout, out);
        }
    }

    fn terminate(&mut self, outcome: Outcome, out: &mut Vec<EpisodeEvent>) {
        self.phase = Phase::Terminal { outcome };
        let metrics = self.metrics(outcome);
        self.emit(out, EpisodeEvent::EpisodeEnded { metrics });
    }

    fn metrics(&self, outcome: Outcome) -> EpisodeMetrics {
        let straight = self.start.euclidean(self.grid.goal());
        EpisodeMetrics {
            outcome,
            steps: self.state.t,
            path_length: self.path_length,
            straight_line: straight,
            normalized_length: normalized_length(self.path_length, straight),
            feedback_count: self.feedback_events.len(),
            trigger_count: self.triggers.len(),
        }
    }

    pub fn outcome(&self) -> Option<Outcome> {
        match self.phase {
            Phase::Terminal { outcome } => Some(outcome),
            _ => None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The log so far; an unfinished episode is logged as a timeout.
    pub fn to_log(&self) -> EpisodeLog {
        let outcome = self.outcome().unwrap_or(Outcome::Timeout);
        let m = self.metrics(outcome);
        EpisodeLog {
            scenario_id: self.scenario_id.clone(),
            method: self.config.method,
            seed: self.seed,
            start: self.start,
            goal: self.grid.goal(),
            steps: self.steps.clone(),
            feedback_events: self.feedback_events.clone(),
            triggers: self.triggers.clone(),
            trail: self.trail.clone(),
            outcome,
            path_length: m.path_length,
            straight_line: m.straight_line,
            normalized_length: m.normalized_length,
        }
    }

    pub fn into_log(self) -> EpisodeLog {
        self.to_log()
    }
}

/// [`interpret`], with grammar parses of scripted text labelled as coming
/// from the oracle.
pub fn interpret_instruction(
    instr: &Instruction,
    template: &PromptTemplate,
    model: Option<&dyn LanguageModel>,
) -> Result<ActionSequence, FeedbackError> {
    let seq = interpret(instr, template, model)?;
    if instr.source() == InstructionSource::Scripted && seq.provenance() == Provenance::Grammar {
        Ok(seq.with_provenance(Provenance::ScriptedOracle))
    } else {
        Ok(seq)
    }
}

/// Runs one episode to completion, answering help requests from `source`.
/// Failed interpretations are re-prompted up to three times, after which the
/// policy resumes without feedback.
pub fn run_episode(
    grid: Grid,
    policy: Arc<EnsemblePolicy>,
    config: EpisodeConfig,
    source: &mut dyn FeedbackSource,
    template: &PromptTemplate,
    model: Option<&dyn LanguageModel>,
    scenario_id: &str,
    seed: u64,
) -> Result<(EpisodeLog, Vec<EpisodeEvent>), RunError> {
    let mut ep = Episode::new(grid, policy, config, scenario_id, seed)?;
    loop {
        match ep.phase() {
            Phase::Terminal { .. } => break,
            Phase::AwaitingFeedback { reason, .. } => {
                let reason = *reason;
                let instr = {
                    let ctx = FeedbackContext {
                        grid: ep.grid(),
                        state: ep.state(),
                        reason,
                        attempt: ep.attempts(),
                        last_error: ep.last_error(),
                    };
                    source.request(&ctx)
                };
                let Some(instr) = instr else {
                    ep.give_up()?;
                    continue;
                };
                match interpret_instruction(&instr, template, model) {
                    Ok(seq) => {
                        ep.propose(Some(instr), seq)?;
                        ep.confirm()?;
                    }
                    Err(e) => {
                        if ep.reject(Some(instr), e)? >= MAX_FEEDBACK_ATTEMPTS {
                            ep.give_up()?;
                        }
                    }
                }
            }
            _ => {
                ep.advance()?;
            }
        }
    }
    let events = ep.history().to_vec();
    Ok((ep.into_log(), events))
}
