//! Deterministic parser for simple movement instructions.
//!
//! Covered fragment:
//!
//! * clauses `[verb] [count unit] direction [count]`, e.g. "go up", "move to
//!   the left twice", "go up two steps", "go two steps up";
//! * counts as digits, `one`..`ten`, or `once`/`twice`/`thrice`, optionally
//!   followed by `times`/`steps`/`cells`;
//! * separators: `then`, `and`, `finally`, `next`, commas and full stops;
//! * alternation: "left and right alternatively four times each" expands to
//!   four (left, right) pairs;
//! * back-reference: "the same number of times that you went up" or "as many
//!   times as you went up" reuse the count of the nearest earlier clause
//!   that moved in that direction.

use super::{ActionSequence, FeedbackError, Instruction, Provenance};
use crate::gridworld::Action;

const MAX_COUNT: u32 = 100;

#[derive(Debug, Clone)]
struct Token {
    pos: usize,
    word: String,
}

fn tokenize(text: &str) -> Result<Vec<Token>, FeedbackError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c.is_alphanumeric() || c == '\'' {
            let mut word = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if c.is_alphanumeric() || c == '\'' {
                    word.extend(c.to_lowercase());
                    chars.next();
                } else {
                    break;
                }
            }
            out.push(Token { pos, word });
        } else if matches!(c, ',' | '.' | ';' | '!') {
            out.push(Token { pos, word: c.to_string() });
            chars.next();
        } else {
            return Err(FeedbackError::Unparseable {
                position: pos,
                found: c.to_string(),
                expected: "a word or punctuation".into(),
            });
        }
    }
    Ok(out)
}

fn direction(word: &str) -> Option<Action> {
    Some(match word {
        "up" | "upward" | "upwards" | "north" => Action::Up,
        "right" | "rightward" | "rightwards" | "east" => Action::Right,
        "down" | "downward" | "downwards" | "south" => Action::Down,
        "left" | "leftward" | "leftwards" | "west" => Action::Left,
        _ => return None,
    })
}

fn number(word: &str) -> Option<u32> {
    if word.bytes().all(|b| b.is_ascii_digit()) {
        return word.parse().ok().or(Some(u32::MAX));
    }
    let n = ["one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"]
        .iter()
        .position(|w| *w == word)?;
    Some(n as u32 + 1)
}

fn multiplier(word: &str) -> Option<u32> {
    match word {
        "once" => Some(1),
        "twice" => Some(2),
        "thrice" => Some(3),
        _ => None,
    }
}

fn is_unit(word: &str) -> bool {
    matches!(word, "time" | "times" | "step" | "steps" | "cell" | "cells" | "square" | "squares")
}

fn is_filler(word: &str) -> bool {
    matches!(word, "go" | "move" | "step" | "walk" | "head" | "to" | "the" | "please")
}

fn is_separator(word: &str) -> bool {
    matches!(word, "," | "." | ";" | "!" | "then" | "and" | "finally" | "next" | "afterwards")
}

fn is_past_move(word: &str) -> bool {
    matches!(word, "went" | "moved" | "go" | "did" | "stepped" | "headed" | "walked")
}

#[derive(Debug, Clone)]
struct Clause {
    dirs: Vec<Action>,
    count: u32,
}

struct Parser<'t> {
    toks: &'t [Token],
    i: usize,
    end: usize,
    clauses: Vec<Clause>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&str> {
        self.toks.get(self.i).map(|t| t.word.as_str())
    }

    fn peek_at(&self, j: usize) -> Option<&str> {
        self.toks.get(j).map(|t| t.word.as_str())
    }

    fn pos(&self) -> usize {
        self.toks.get(self.i).map_or(self.end, |t| t.pos)
    }

    fn fail(&self, expected: &str) -> FeedbackError {
        FeedbackError::Unparseable {
            position: self.pos(),
            found: self.peek().unwrap_or("end of input").to_string(),
            expected: expected.into(),
        }
    }

    fn eat(&mut self, word: &str) -> bool {
        if self.peek() == Some(word) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn skip_fillers(&mut self) {
        while self.peek().is_some_and(is_filler) {
            self.i += 1;
        }
    }

    /// Number followed by an optional unit.
    fn count(&mut self) -> Result<Option<u32>, FeedbackError> {
        let Some(w) = self.peek() else { return Ok(None) };
        if let Some(n) = multiplier(w) {
            self.i += 1;
            return Ok(Some(n));
        }
        let Some(n) = number(w) else { return Ok(None) };
        if n == 0 || n > MAX_COUNT {
            return Err(self.fail(&format!("a count between 1 and {MAX_COUNT}")));
        }
        self.i += 1;
        if self.peek().is_some_and(is_unit) {
            self.i += 1;
        }
        Ok(Some(n))
    }

    fn direction(&mut self) -> Result<Action, FeedbackError> {
        match self.peek().and_then(direction) {
            Some(d) => {
                self.i += 1;
                Ok(d)
            }
            None => Err(self.fail("a direction (up, right, down or left)")),
        }
    }

    /// `the same number of times (that|as) you went DIR` or
    /// `as many times as you went DIR`, already past the first word.
    fn back_reference(&mut self) -> Result<u32, FeedbackError> {
        let ok = if self.eat("as") {
            self.eat("many") && (self.eat("times") || self.eat("steps")) && self.eat("as")
        } else {
            self.eat("the");
            self.eat("same") && self.eat("number") && self.eat("of") && (self.eat("times") || self.eat("steps"))
                && (self.eat("that") || self.eat("as"))
        };
        if !ok {
            return Err(self.fail("\"the same number of times that you went <direction>\""));
        }
        if !self.eat("you") || !self.peek().is_some_and(is_past_move) {
            return Err(self.fail("\"you went <direction>\""));
        }
        self.i += 1;
        self.skip_fillers();
        let dir_pos = self.pos();
        let d = self.direction()?;
        self.clauses
            .iter()
            .rev()
            .find(|c| c.dirs.contains(&d))
            .map(|c| c.count)
            .ok_or(FeedbackError::AmbiguousReference { position: dir_pos, direction: d.name().into() })
    }

    fn starts_back_reference(&self) -> bool {
        match self.peek() {
            Some("the") => self.peek_at(self.i + 1) == Some("same"),
            Some("same") => true,
            Some("as") => self.peek_at(self.i + 1) == Some("many"),
            _ => false,
        }
    }

    fn clause(&mut self) -> Result<Clause, FeedbackError> {
        self.skip_fillers();
        let pre = self.count()?;
        self.skip_fillers();
        let first = self.direction()?;
        let mut dirs = vec![first];

        // "X and Y alternatively"
        if self.peek() == Some("and") {
            let mut j = self.i + 1;
            while self.peek_at(j).is_some_and(is_filler) {
                j += 1;
            }
            if let Some(second) = self.peek_at(j).and_then(direction) {
                if matches!(self.peek_at(j + 1), Some("alternatively" | "alternately" | "alternating")) {
                    dirs.push(second);
                    self.i = j + 2;
                }
            }
        }

        let count = match pre {
            Some(n) => n,
            None if self.starts_back_reference() => self.back_reference()?,
            None => self.count()?.unwrap_or(1),
        };
        self.eat("each");
        Ok(Clause { dirs, count })
    }

    fn run(&mut self) -> Result<Vec<Action>, FeedbackError> {
        loop {
            while self.peek().is_some_and(is_separator) {
                self.i += 1;
            }
            if self.peek().is_none() {
                break;
            }
            let c = self.clause()?;
            self.clauses.push(c);
            if self.peek().is_some_and(|w| !is_separator(w)) {
                return Err(self.fail("a separator such as \"then\" or a comma"));
            }
        }
        let mut out = Vec::new();
        for c in &self.clauses {
            for _ in 0..c.count {
                out.extend_from_slice(&c.dirs);
            }
        }
        Ok(out)
    }
}

/// Parses `instr` with the grammar; `Unparseable` means the text is outside
/// the covered fragment.
pub fn parse_grammar(instr: &Instruction) -> Result<ActionSequence, FeedbackError> {
    parse_text(instr.text())
}

pub fn parse_text(text: &str) -> Result<ActionSequence, FeedbackError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks: &toks, i: 0, end: text.len(), clauses: Vec::new() };
    let actions = p.run()?;
    if actions.is_empty() {
        return Err(FeedbackError::Unparseable {
            position: text.len(),
            found: "end of input".into(),
            expected: "at least one movement".into(),
        });
    }
    ActionSequence::new(actions, Provenance::Grammar)
}

/// Renders actions as run-length clauses, e.g. "go right three times, then
/// go down once". The output parses back to the same actions.
pub fn render_actions(actions: &[Action]) -> String {
    const WORDS: [&str; 11] = ["", "once", "twice", "three times", "four times", "five times", "six times",
        "seven times", "eight times", "nine times", "ten times"];
    let mut parts = Vec::new();
    let mut i = 0;
    while i < actions.len() {
        let a = actions[i];
        let mut n = 1;
        while i + n < actions.len() && actions[i + n] == a {
            n += 1;
        }
        let count = if n <= 10 { WORDS[n].to_string() } else { format!("{n} times") };
        parts.push(format!("go {} {count}", a.name()));
        i += n;
    }
    parts.join(", then ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(text: &str) -> Vec<u8> {
        parse_text(text).unwrap().codes()
    }

    #[test]
    fn counts_and_synonyms() {
        assert_eq!(codes("go up"), vec![0]);
        assert_eq!(codes("move to the left 3 times"), vec![3, 3, 3]);
        assert_eq!(codes("go two steps up"), vec![0, 0]);
        assert_eq!(codes("Go RIGHT twice."), vec![1, 1]);
        assert_eq!(codes("step down once and then go west ten times").len(), 11);
    }

    #[test]
    fn out_of_grammar_reports_position() {
        let e = parse_text("fly up").unwrap_err();
        assert_eq!(
            e,
            FeedbackError::Unparseable { position: 0, found: "fly".into(), expected: "a direction (up, right, down or left)".into() }
        );
        match parse_text("go up then jump").unwrap_err() {
            FeedbackError::Unparseable { position, .. } => assert_eq!(position, 11),
            e => panic!("{e:?}"),
        }
        assert!(matches!(parse_text("go up 0 times"), Err(FeedbackError::Unparseable { .. })));
        assert!(matches!(parse_text("go up 99999999999 times"), Err(FeedbackError::Unparseable { .. })));
        assert!(matches!(parse_text(", then ."), Err(FeedbackError::Unparseable { .. })));
        assert!(matches!(parse_text("go up?"), Err(FeedbackError::Unparseable { position: 5, .. })));
    }

    #[test]
    fn back_reference_needs_antecedent() {
        assert_eq!(
            parse_text("go left then go down the same number of times that you went up").unwrap_err(),
            FeedbackError::AmbiguousReference { position: 60, direction: "up".into() }
        );
        assert_eq!(codes("go up 3 times, go right, go up once, go down as many times as you went up"), vec![0, 0, 0, 1, 0, 2]);
    }

    #[test]
    fn alternation_interleaves_from_first_named() {
        assert_eq!(codes("go up and down alternately twice"), vec![0, 2, 0, 2]);
        // Plain "and" between clauses is still a separator.
        assert_eq!(codes("go up and down twice"), vec![0, 2, 2]);
    }

    #[test]
    fn rendering_round_trips() {
        use Action::*;
        let path = vec![Right, Right, Right, Down, Left, Left, Up, Up, Up, Up, Up, Up, Up, Up, Up, Up, Up, Up];
        let text = render_actions(&path);
        assert_eq!(&text[..40], "go right three times, then go down once,");
        assert_eq!(parse_text(&text).unwrap().actions(), path.as_slice());
    }
}
