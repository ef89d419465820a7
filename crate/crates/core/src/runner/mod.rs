//! Episodes, baselines and suites.
//!
//! An episode alternates policy control with feedback: every policy step
//! records the ensemble's entropy decomposition and feeds the epistemic part
//! to the changepoint detector; when it fires the agent halts, asks a
//! [`FeedbackSource`] for an instruction, executes the interpreted sequence
//! open-loop, resets the detector and resumes toward the original goal.

mod baseline;
mod episode;
mod oracle;
mod suite;
mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::changepoint::ChangepointError;
use crate::feedback::{ActionSequence, FeedbackError, Instruction, Provenance};
use crate::gridworld::{Action, GridError, Pos, StepEvent};
use crate::observe::ObserveError;
use crate::policy::PolicyError;
use crate::scenario::ScenarioError;
use crate::uncertainty::{UncertaintyError, UncertaintyRecord};

pub use baseline::run_baseline;
pub use episode::{
    interpret_instruction, jittered_start, run_episode, Episode, EpisodeConfig, EpisodeEvent, FeedbackContext,
    FeedbackSource, NoFeedback, Phase,
};
pub use oracle::{oracle_path, ScriptedOracle};
pub use suite::{
    format_table, load_scenarios, run_suite, run_suite_with, write_outputs, FeedbackMode, MethodSummary, RunConfig,
    ScenarioRow, SuiteReport,
};
pub use validate::{validate_events, EventPatternError};

/// Consecutive non-moving steps after which an agent counts as frozen.
pub const FROZEN_THRESHOLD: u32 = 6;
/// Instruction attempts per feedback request before giving up.
pub const MAX_FEEDBACK_ATTEMPTS: usize = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("bad run configuration: {0}")]
    BadConfig(String),
    #[error("operation not allowed in phase {phase}")]
    WrongState { phase: &'static str },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Observe(#[from] ObserveError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Changepoint(#[from] ChangepointError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Policy with uncertainty-triggered feedback.
    #[serde(rename = "remove")]
    ReMove,
    /// Same policy and detector, but triggers are only logged.
    #[serde(rename = "remove-no-feedback")]
    ReMoveNoFeedback,
    /// BFS on the perceived map, replanned every step.
    #[serde(rename = "baseline")]
    PerceivedPlannerBaseline,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::ReMove, Method::ReMoveNoFeedback, Method::PerceivedPlannerBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Method::ReMove => "remove",
            Method::ReMoveNoFeedback => "remove-no-feedback",
            Method::PerceivedPlannerBaseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
    Frozen,
}

/// Who moved the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Driver {
    Policy,
    Feedback,
    Planner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u32,
    /// Position before the action.
    pub pos: Pos,
    pub obs_digest: Option<String>,
    pub action: Action,
    pub event: StepEvent,
    pub uncertainty: Option<UncertaintyRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestReason {
    Changepoint,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerRecord {
    pub t: u32,
    pub pos: Pos,
    pub reason: RequestReason,
    /// Chebyshev distance to the nearest obstacle cell, if any exists.
    pub obstacle_distance: Option<u32>,
    pub mutual_info: Option<f64>,
    pub short_run_mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub t: u32,
    pub reason: RequestReason,
    pub instruction: Option<Instruction>,
    pub sequence: Option<ActionSequence>,
    pub provenance: Option<Provenance>,
    /// Errors from rejected attempts, in order.
    pub errors: Vec<FeedbackError>,
    /// Actions actually executed from the sequence.
    pub executed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub outcome: Outcome,
    pub steps: u32,
    /// Moves that changed the agent's cell.
    pub path_length: u32,
    /// Euclidean start-goal distance in cells.
    pub straight_line: f64,
    pub normalized_length: f64,
    pub feedback_count: usize,
    pub trigger_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailPoint {
    pub pos: Pos,
    pub driver: Driver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub scenario_id: String,
    pub method: Method,
    pub seed: u64,
    pub start: Pos,
    pub goal: Pos,
    pub steps: Vec<StepRecord>,
    pub feedback_events: Vec<FeedbackEvent>,
    pub triggers: Vec<TriggerRecord>,
    /// Positions after every executed action, starting with the start cell.
    pub trail: Vec<TrailPoint>,
    pub outcome: Outcome,
    pub path_length: u32,
    pub straight_line: f64,
    pub normalized_length: f64,
}

impl EpisodeLog {
    pub fn metrics(&self) -> EpisodeMetrics {
        EpisodeMetrics {
            outcome: self.outcome,
            steps: self.trail.len().saturating_sub(1) as u32,
            path_length: self.path_length,
            straight_line: self.straight_line,
            normalized_length: self.normalized_length,
            feedback_count: self.feedback_events.len(),
            trigger_count: self.triggers.len(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("episode logs serialise")
    }
}

/// `path / straight`, or 0 when start and goal coincide.
pub fn normalized_length(path_length: u32, straight_line: f64) -> f64 {
    if straight_line > 0.0 {
        path_length as f64 / straight_line
    } else {
        0.0
    }
}
