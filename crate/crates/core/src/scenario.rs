//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! name=sealed_deceptive_room
//! L=10
//! start=3,6
//! goal=10,6
//! baseline_solvable=false
//! solid 8,4
//! deceptive 8,2
//! ```
//!
//! `name` and `baseline_solvable` are optional. Coordinates are full-grid
//! `row,col`, so the accessible region is `2..L+2`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::Pos;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing `{0}` header")]
    MissingHeader(&'static str),
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObstacleKind {
    Solid,
    Pliable,
    Deceptive,
}

impl ObstacleKind {
    pub fn keyword(self) -> &'static str {
        match self {
            ObstacleKind::Solid => "solid",
            ObstacleKind::Pliable => "pliable",
            ObstacleKind::Deceptive => "deceptive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: Option<String>,
    pub l: usize,
    pub start: Pos,
    pub goal: Pos,
    pub obstacles: Vec<(ObstacleKind, Pos)>,
    /// Declared answer to "can a planner that avoids everything that looks
    /// occupied reach the goal?".
    pub baseline_solvable: Option<bool>,
}

impl ScenarioSpec {
    pub fn open(l: usize, start: Pos, goal: Pos) -> Self {
        ScenarioSpec { name: None, l, start, goal, obstacles: Vec::new(), baseline_solvable: None }
    }

    pub fn id(&self) -> &str {
        self.name.as_deref().unwrap_or("unnamed")
    }

    pub fn parse(text: &str) -> Result<ScenarioSpec, ScenarioError> {
        let mut name = None;
        let mut l = None;
        let mut start = None;
        let mut goal = None;
        let mut baseline_solvable = None;
        let mut obstacles = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| ScenarioError::Parse { line: line_no, message };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "L" => l = Some(value.parse::<usize>().map_err(|e| err(format!("bad L: {e}")))?),
                    "start" => start = Some(parse_pos(value).map_err(err)?),
                    "goal" => goal = Some(parse_pos(value).map_err(err)?),
                    "name" => name = Some(value.to_string()),
                    "baseline_solvable" => {
                        baseline_solvable =
                            Some(value.parse::<bool>().map_err(|e| err(format!("bad baseline_solvable: {e}")))?)
                    }
                    other => return Err(err(format!("unknown header `{other}`"))),
                }
                continue;
            }
            let (word, coords) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| err(format!("expected `<kind> <r>,<c>`, got `{line}`")))?;
            let kind = match word {
                "solid" => ObstacleKind::Solid,
                "pliable" => ObstacleKind::Pliable,
                "deceptive" => ObstacleKind::Deceptive,
                other => return Err(err(format!("unknown obstacle kind `{other}`"))),
            };
            obstacles.push((kind, parse_pos(coords.trim()).map_err(err)?));
        }
        Ok(ScenarioSpec {
            name,
            l: l.ok_or(ScenarioError::MissingHeader("L"))?,
            start: start.ok_or(ScenarioError::MissingHeader("start"))?,
            goal: goal.ok_or(ScenarioError::MissingHeader("goal"))?,
            obstacles,
            baseline_solvable,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScenarioSpec, ScenarioError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut spec = ScenarioSpec::parse(&text)?;
        if spec.name.is_none() {
            spec.name = path.as_ref().file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(name) = &self.name {
            let _ = writeln!(out, "name={name}");
        }
        let _ = writeln!(out, "L={}", self.l);
        let _ = writeln!(out, "start={}", self.start);
        let _ = writeln!(out, "goal={}", self.goal);
        if let Some(b) = self.baseline_solvable {
            let _ = writeln!(out, "baseline_solvable={b}");
        }
        for (kind, p) in &self.obstacles {
            let _ = writeln!(out, "{} {p}", kind.keyword());
        }
        out
    }
}

fn parse_pos(s: &str) -> Result<Pos, String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected `<r>,<c>`, got `{s}`"))?;
    let r = r.trim().parse::<i32>().map_err(|e| format!("bad row `{r}`: {e}"))?;
    let c = c.trim().parse::<i32>().map_err(|e| format!("bad column `{c}`: {e}"))?;
    Ok(Pos::new(r, c))
}

const BUNDLED: [(&str, &str); 5] = [
    ("open_room", include_str!("../scenarios/open_room.txt")),
    ("deceptive_corridor", include_str!("../scenarios/deceptive_corridor.txt")),
    ("sealed_deceptive_room", include_str!("../scenarios/sealed_deceptive_room.txt")),
    ("pillar_field", include_str!("../scenarios/pillar_field.txt")),
    ("slippery_patch", include_str!("../scenarios/slippery_patch.txt")),
];

/// Scenarios shipped with the crate, in a fixed order.
pub fn bundled() -> Vec<ScenarioSpec> {
    BUNDLED
        .iter()
        .map(|(id, text)| {
            let mut spec = ScenarioSpec::parse(text).expect("bundled scenario parses");
            spec.name.get_or_insert_with(|| (*id).to_string());
            spec
        })
        .collect()
}

pub fn bundled_by_name(name: &str) -> Option<ScenarioSpec> {
    bundled().into_iter().find(|s| s.id() == name)
}
