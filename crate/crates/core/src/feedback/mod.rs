//! Natural-language instructions to validated action sequences.
//!
//! [`interpret`] tries the deterministic grammar in [`grammar`] first and
//! falls back to an external chat model ([`llm`]) only when the text is
//! outside the grammar and a client is configured.

pub mod grammar;
pub mod llm;
pub mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::Action;

pub use grammar::parse_grammar;
pub use llm::{extract_sequence, LanguageModel, LlmClient, LlmConfig};
pub use prompt::{build_prompt, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("cannot parse instruction at byte {position} ({found:?}): expected {expected}")]
    Unparseable { position: usize, found: String, expected: String },
    #[error("\"{direction}\" at byte {position} refers to no earlier movement in that direction")]
    AmbiguousReference { position: usize, direction: String },
    #[error("language model transport error: {message}")]
    Transport { message: String },
    #[error("language model response has no integer list: {message}")]
    MalformedResponse { message: String },
    #[error("action codes outside 0..=3: {codes:?}")]
    InvalidCodes { codes: Vec<i64> },
    #[error("action sequence is empty")]
    EmptySequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionSource {
    Operator,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawInstruction")]
pub struct Instruction {
    text: String,
    source: InstructionSource,
}

#[derive(Deserialize)]
struct RawInstruction {
    text: String,
    source: InstructionSource,
}

impl TryFrom<RawInstruction> for Instruction {
    type Error = FeedbackError;
    fn try_from(raw: RawInstruction) -> Result<Self, FeedbackError> {
        Instruction::new(raw.text, raw.source)
    }
}

impl Instruction {
    pub fn new(text: impl Into<String>, source: InstructionSource) -> Result<Self, FeedbackError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(FeedbackError::EmptyInstruction);
        }
        Ok(Instruction { text, source })
    }

    pub fn operator(text: impl Into<String>) -> Result<Self, FeedbackError> {
        Instruction::new(text, InstructionSource::Operator)
    }

    pub fn scripted(text: impl Into<String>) -> Result<Self, FeedbackError> {
        Instruction::new(text, InstructionSource::Scripted)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn source(&self) -> InstructionSource {
        self.source
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Grammar,
    LanguageModel,
    ScriptedOracle,
}

/// Non-empty list of actions. Codes are valid by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence")]
pub struct ActionSequence {
    actions: Vec<Action>,
    provenance: Provenance,
}

#[derive(Deserialize)]
struct RawSequence {
    actions: Vec<i64>,
    provenance: Provenance,
}

impl TryFrom<RawSequence> for ActionSequence {
    type Error = FeedbackError;
    fn try_from(raw: RawSequence) -> Result<Self, FeedbackError> {
        ActionSequence::from_codes(&raw.actions, raw.provenance)
    }
}

impl ActionSequence {
    pub fn new(actions: Vec<Action>, provenance: Provenance) -> Result<Self, FeedbackError> {
        if actions.is_empty() {
            return Err(FeedbackError::EmptySequence);
        }
        Ok(ActionSequence { actions, provenance })
    }

    pub fn from_codes(codes: &[i64], provenance: Provenance) -> Result<Self, FeedbackError> {
        let bad: Vec<i64> = codes.iter().copied().filter(|c| !(0..=3).contains(c)).collect();
        if !bad.is_empty() {
            return Err(FeedbackError::InvalidCodes { codes: bad });
        }
        let actions = codes.iter().map(|&c| Action::from_code(c as u8).expect("checked range")).collect();
        ActionSequence::new(actions, provenance)
    }

    pub fn with_provenance(self, provenance: Provenance) -> Self {
        ActionSequence { provenance, ..self }
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn codes(&self) -> Vec<u8> {
        self.actions.iter().map(|a| a.code()).collect()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Grammar first; on `Unparseable` and a configured model, ask the model.
pub fn interpret(
    instr: &Instruction,
    template: &PromptTemplate,
    model: Option<&dyn LanguageModel>,
) -> Result<ActionSequence, FeedbackError> {
    match parse_grammar(instr) {
        Err(FeedbackError::Unparseable { .. }) if model.is_some() => {
            let prompt = build_prompt(template, instr);
            model.expect("checked").query(&prompt)
        }
        other => other,
    }
}
