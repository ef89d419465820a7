//! Checks that an event stream follows the episode protocol:
//! `StepTaken* (FeedbackRequested SequencePreview* ExecutionProgress* StepTaken*)* EpisodeEnded`.
//!
//! Repeated previews are accepted because an operator may rephrase an
//! instruction before confirming it.

use thiserror::Error;

use super::EpisodeEvent;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EventPatternError {
    #[error("event {index} ({found}) is not allowed after {after}")]
    Unexpected { index: usize, found: &'static str, after: &'static str },
    #[error("stream does not end with EpisodeEnded")]
    Unterminated,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Steps,
    Requested,
    Previewed,
    Executing,
    Ended,
}

impl State {
    fn name(self) -> &'static str {
        match self {
            State::Steps => "policy steps",
            State::Requested => "FeedbackRequested",
            State::Previewed => "SequencePreview",
            State::Executing => "ExecutionProgress",
            State::Ended => "EpisodeEnded",
        }
    }
}

pub fn validate_events<'a>(events: impl IntoIterator<Item = &'a EpisodeEvent>) -> Result<(), EventPatternError> {
    let mut state = State::Steps;
    for (index, e) in events.into_iter().enumerate() {
        use EpisodeEvent::*;
        let next = match (state, e) {
            (State::Ended, _) => None,
            (_, StepTaken { .. }) => Some(State::Steps),
            (_, FeedbackRequested { .. }) => Some(State::Requested),
            (_, EpisodeEnded { .. }) => Some(State::Ended),
            (State::Requested | State::Previewed, SequencePreview { .. }) => Some(State::Previewed),
            (State::Requested | State::Previewed | State::Executing, ExecutionProgress { .. }) => Some(State::Executing),
            _ => None,
        };
        state = next.ok_or(EventPatternError::Unexpected { index, found: e.type_name(), after: state.name() })?;
    }
    if state == State::Ended {
        Ok(())
    } else {
        Err(EventPatternError::Unterminated)
    }
}
