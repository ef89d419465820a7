//! Prompt construction for the language-model fallback.

use serde::{Deserialize, Serialize};

use super::Instruction;

/// Placeholder replaced by the instruction text in [`PromptTemplate::question`].
pub const INSTRUCTION_SLOT: &str = "{instruction}";

/// The four action-integer rules, verbatim in every preamble.
pub const ACTION_MAPPINGS: [&str; 4] = ["go up = 0", "go right = 1", "go down = 2", "go left = 3"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub preamble: String,
    pub question: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        let rules = ACTION_MAPPINGS.map(|m| format!("'{m}'")).join(", ");
        PromptTemplate {
            preamble: format!(
                "An agent moves on a grid and has four possible moves: up, right, down and left. \
                 Write each move as an integer with these rules: {rules}. \
                 Answer with the list of integers in square brackets, for example [1, 1, 2]."
            ),
            question: format!("Instruction: {INSTRUCTION_SLOT}\nInteger sequence:"),
        }
    }
}

impl PromptTemplate {
    /// Whether the preamble still states every mapping rule.
    pub fn is_valid(&self) -> bool {
        ACTION_MAPPINGS.iter().all(|m| self.preamble.contains(m)) && self.question.contains(INSTRUCTION_SLOT)
    }
}

/// Preamble, a blank line, then the question with the instruction filled in.
pub fn build_prompt(template: &PromptTemplate, instr: &Instruction) -> String {
    format!("{}\n\n{}", template.preamble, template.question.replace(INSTRUCTION_SLOT, instr.text()))
}
