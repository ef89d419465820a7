//! Discrete grid environment: cell taxonomy, agent dynamics, breadth-first
//! search helpers and the 100×100 grayscale renderer.
//!
//! A grid of side `L + 4` has a two-cell ring of walls; only the central
//! `L × L` block is accessible. Coordinates are `(row, col)` over the full
//! grid, so the accessible block spans `2..L+2` on both axes.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{ObstacleKind, ScenarioSpec};

/// Width of the wall ring around the accessible region.
pub const WALL_RING: i32 = 2;

/// Observation code of the agent overlay.
pub const AGENT_CODE: f64 = 10.0;

/// Gray level of the agent overlay in rendered images.
pub const AGENT_GRAY: u8 = 192;

/// Rendered images are always this many pixels on a side.
pub const IMAGE_SIDE: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("grid side {0} does not fit in a {IMAGE_SIDE}x{IMAGE_SIDE} image")]
    GridTooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Empty,
    Wall,
    SolidObstacle,
    PliableObstacle,
    DeceptiveObstacle,
    Goal,
}

impl CellKind {
    /// Value written into observation vectors for this cell.
    pub fn code(self) -> f64 {
        match self {
            CellKind::Empty => 0.0,
            CellKind::Goal => 20.0,
            CellKind::Wall
            | CellKind::SolidObstacle
            | CellKind::PliableObstacle
            | CellKind::DeceptiveObstacle => 30.0,
        }
    }

    /// Gray level used by the renderer. Deceptive cells are drawn exactly
    /// like solid ones.
    pub fn gray(self) -> u8 {
        match self {
            CellKind::Empty => 255,
            CellKind::Wall | CellKind::SolidObstacle | CellKind::DeceptiveObstacle => 0,
            CellKind::PliableObstacle => 64,
            CellKind::Goal => 128,
        }
    }

    pub fn is_obstacle(self) -> bool {
        matches!(
            self,
            CellKind::SolidObstacle | CellKind::PliableObstacle | CellKind::DeceptiveObstacle
        )
    }

    /// Whether the agent can physically enter the cell.
    pub fn is_traversable(self) -> bool {
        !matches!(self, CellKind::Wall | CellKind::SolidObstacle)
    }

    /// Whether the cell reads as occupied (code 30) to any sensor.
    pub fn looks_occupied(self) -> bool {
        self.code() == 30.0
    }
}

impl From<ObstacleKind> for CellKind {
    fn from(kind: ObstacleKind) -> Self {
        match kind {
            ObstacleKind::Solid => CellKind::SolidObstacle,
            ObstacleKind::Pliable => CellKind::PliableObstacle,
            ObstacleKind::Deceptive => CellKind::DeceptiveObstacle,
        }
    }
}

/// The four grid moves, with their fixed integer wire codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    Up = 0,
    Right = 1,
    Down = 2,
    Left = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Right, Action::Down, Action::Left];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Action> {
        Action::ALL.get(code as usize).copied()
    }

    /// `(d_row, d_col)` of the move; rows grow downwards.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (-1, 0),
            Action::Right => (0, 1),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Right => "right",
            Action::Down => "down",
            Action::Left => "left",
        }
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a.code()
    }
}

impl TryFrom<u8> for Action {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Action::from_code(code).ok_or_else(|| format!("action code {code} is not in 0..=3"))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: i32,
    pub col: i32,
}

impl Pos {
    pub const fn new(row: i32, col: i32) -> Self {
        Pos { row, col }
    }

    pub fn step(self, action: Action) -> Pos {
        let (dr, dc) = action.delta();
        Pos::new(self.row + dr, self.col + dc)
    }

    pub fn euclidean(self, other: Pos) -> f64 {
        let dr = f64::from(self.row - other.row);
        let dc = f64::from(self.col - other.col);
        dr.hypot(dc)
    }

    pub fn manhattan(self, other: Pos) -> u32 {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    pub fn chebyshev(self, other: Pos) -> u32 {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }

    /// The action that moves from `self` to the 4-neighbour `next`.
    pub fn action_to(self, next: Pos) -> Option<Action> {
        Action::ALL.into_iter().find(|&a| self.step(a) == next)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Pos,
    pub t: u32,
}

impl AgentState {
    pub fn at(pos: Pos) -> Self {
        AgentState { pos, t: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepEvent {
    Moved,
    BlockedByWall,
    Collision,
    PassedThroughPliable,
    PassedThroughDeceptive,
    ReachedGoal,
}

impl StepEvent {
    pub fn moved(self) -> bool {
        !matches!(self, StepEvent::BlockedByWall | StepEvent::Collision)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub state: AgentState,
    pub event: StepEvent,
}

/// Immutable grid built from a [`ScenarioSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    l: usize,
    side: usize,
    cells: Vec<CellKind>,
    start: Pos,
    goal: Pos,
}

impl Grid {
    pub fn build(spec: &ScenarioSpec) -> Result<Grid, GridError> {
        let l = spec.l;
        if l < 3 {
            return Err(GridError::InvalidSpec(format!("L must be at least 3, got {l}")));
        }
        let side = l + 4;
        let mut grid = Grid {
            l,
            side,
            cells: vec![CellKind::Wall; side * side],
            start: spec.start,
            goal: spec.goal,
        };
        for r in 0..l as i32 {
            for c in 0..l as i32 {
                let idx = grid.index(Pos::new(r + WALL_RING, c + WALL_RING));
                grid.cells[idx] = CellKind::Empty;
            }
        }
        if !grid.in_central(spec.start) {
            return Err(GridError::InvalidSpec(format!("start {} is outside the central region", spec.start)));
        }
        if !grid.in_central(spec.goal) {
            return Err(GridError::InvalidSpec(format!("goal {} is outside the central region", spec.goal)));
        }
        if spec.start == spec.goal {
            return Err(GridError::InvalidSpec("start and goal coincide".into()));
        }
        for &(kind, pos) in &spec.obstacles {
            if !grid.in_central(pos) {
                return Err(GridError::InvalidSpec(format!("obstacle {pos} is outside the central region")));
            }
            if pos == spec.start || pos == spec.goal {
                let which = if pos == spec.start { "start" } else { "goal" };
                return Err(GridError::InvalidSpec(format!("{which} {pos} is covered by an obstacle")));
            }
            let idx = grid.index(pos);
            grid.cells[idx] = kind.into();
        }
        let goal_idx = grid.index(spec.goal);
        grid.cells[goal_idx] = CellKind::Goal;
        Ok(grid)
    }

    /// Obstacle-free grid with the given start and goal.
    pub fn open(l: usize, start: Pos, goal: Pos) -> Result<Grid, GridError> {
        Grid::build(&ScenarioSpec::open(l, start, goal))
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn start(&self) -> Pos {
        self.start
    }

    pub fn goal(&self) -> Pos {
        self.goal
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.row >= 0 && p.col >= 0 && (p.row as usize) < self.side && (p.col as usize) < self.side
    }

    pub fn in_central(&self, p: Pos) -> bool {
        let hi = self.l as i32 + WALL_RING;
        (WALL_RING..hi).contains(&p.row) && (WALL_RING..hi).contains(&p.col)
    }

    pub fn index(&self, p: Pos) -> usize {
        p.row as usize * self.side + p.col as usize
    }

    pub fn pos_of(&self, idx: usize) -> Pos {
        Pos::new((idx / self.side) as i32, (idx % self.side) as i32)
    }

    /// Cell kind, with anything outside the grid reading as wall.
    pub fn cell(&self, p: Pos) -> CellKind {
        if self.in_bounds(p) {
            self.cells[self.index(p)]
        } else {
            CellKind::Wall
        }
    }

    pub fn cells(&self) -> &[CellKind] {
        &self.cells
    }

    /// All central cells in row-major order.
    pub fn central_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        let lo = WALL_RING;
        let hi = self.l as i32 + WALL_RING;
        (lo..hi).flat_map(move |r| (lo..hi).map(move |c| Pos::new(r, c)))
    }

    pub fn obstacles(&self) -> impl Iterator<Item = (Pos, CellKind)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, k)| k.is_obstacle())
            .map(|(i, &k)| (self.pos_of(i), k))
    }

    pub fn has_obstacles(&self) -> bool {
        self.cells.iter().any(|k| k.is_obstacle())
    }

    /// Chebyshev distance to the nearest obstacle cell, if any exist.
    pub fn obstacle_distance(&self, p: Pos) -> Option<u32> {
        self.obstacles().map(|(o, _)| o.chebyshev(p)).min()
    }

    /// The same layout with a different start/goal pair.
    pub fn with_endpoints(&self, start: Pos, goal: Pos) -> Result<Grid, GridError> {
        let mut spec = self.to_spec();
        spec.start = start;
        spec.goal = goal;
        Grid::build(&spec)
    }

    pub fn to_spec(&self) -> ScenarioSpec {
        let obstacles = self
            .obstacles()
            .map(|(p, k)| {
                let kind = match k {
                    CellKind::SolidObstacle => ObstacleKind::Solid,
                    CellKind::PliableObstacle => ObstacleKind::Pliable,
                    _ => ObstacleKind::Deceptive,
                };
                (kind, p)
            })
            .collect();
        ScenarioSpec {
            name: None,
            l: self.l,
            start: self.start,
            goal: self.goal,
            obstacles,
            baseline_solvable: None,
        }
    }

    /// Applies one action. Walls block without consequence; entering a
    /// solid obstacle is a collision and leaves the agent where it was.
    pub fn step(&self, state: AgentState, action: Action) -> StepOutcome {
        let target = state.pos.step(action);
        let t = state.t + 1;
        let stay = AgentState { pos: state.pos, t };
        let moved = AgentState { pos: target, t };
        match self.cell(target) {
            CellKind::Wall => StepOutcome { state: stay, event: StepEvent::BlockedByWall },
            CellKind::SolidObstacle => StepOutcome { state: stay, event: StepEvent::Collision },
            CellKind::PliableObstacle => StepOutcome { state: moved, event: StepEvent::PassedThroughPliable },
            CellKind::DeceptiveObstacle => StepOutcome { state: moved, event: StepEvent::PassedThroughDeceptive },
            CellKind::Goal => StepOutcome { state: moved, event: StepEvent::ReachedGoal },
            CellKind::Empty => StepOutcome { state: moved, event: StepEvent::Moved },
        }
    }

    /// Row-major observation codes with the agent overlaid.
    pub fn encode(&self, agent: Pos) -> Vec<f64> {
        let mut out: Vec<f64> = self.cells.iter().map(|k| k.code()).collect();
        if self.in_bounds(agent) {
            out[self.index(agent)] = AGENT_CODE;
        }
        out
    }

    /// BFS distances (in moves) from `source` to every cell; `None` where
    /// unreachable. `blocked` decides which cells cannot be entered.
    pub fn bfs_distances(&self, source: Pos, blocked: impl Fn(Pos) -> bool) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.side * self.side];
        if !self.in_bounds(source) {
            return dist;
        }
        let mut queue = VecDeque::new();
        dist[self.index(source)] = Some(0);
        queue.push_back(source);
        while let Some(p) = queue.pop_front() {
            let d = dist[self.index(p)].unwrap_or(0);
            for a in Action::ALL {
                let q = p.step(a);
                if !self.in_bounds(q) || blocked(q) {
                    continue;
                }
                let qi = self.index(q);
                if dist[qi].is_none() {
                    dist[qi] = Some(d + 1);
                    queue.push_back(q);
                }
            }
        }
        dist
    }

    /// A shortest path `from → to` (both ends included), choosing the lowest
    /// action code among equally short continuations.
    pub fn shortest_path(&self, from: Pos, to: Pos, blocked: impl Fn(Pos) -> bool) -> Option<Vec<Pos>> {
        let dist = self.bfs_distances(to, &blocked);
        let mut d = dist[self.index(from)]?;
        let mut path = vec![from];
        let mut cur = from;
        while d > 0 {
            let next = Action::ALL.into_iter().map(|a| cur.step(a)).find(|&q| {
                self.in_bounds(q) && !blocked(q) && dist[self.index(q)] == Some(d - 1)
            })?;
            path.push(next);
            cur = next;
            d -= 1;
        }
        Some(path)
    }

    /// Whether the goal can be reached from the start under `mode`.
    pub fn solvable(&self, mode: Traversal) -> bool {
        self.shortest_path(self.start, self.goal, |p| mode.blocks(self.cell(p))).is_some()
    }

    pub fn render(&self, state: &AgentState) -> Result<Image100, GridError> {
        if self.side > IMAGE_SIDE {
            return Err(GridError::GridTooLarge(self.side));
        }
        let block = IMAGE_SIDE / self.side;
        let mut pixels = vec![0u8; IMAGE_SIDE * IMAGE_SIDE];
        for (idx, kind) in self.cells.iter().enumerate() {
            let p = self.pos_of(idx);
            let gray = if p == state.pos { AGENT_GRAY } else { kind.gray() };
            let (r0, c0) = (p.row as usize * block, p.col as usize * block);
            for r in r0..r0 + block {
                pixels[r * IMAGE_SIDE + c0..r * IMAGE_SIDE + c0 + block].fill(gray);
            }
        }
        Ok(Image100 { pixels, block })
    }
}

/// How cells are treated by path searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Traversal {
    /// Only walls and solid obstacles block: the true dynamics.
    Physical,
    /// Everything that reads as occupied blocks: what a range sensor believes.
    Perceived,
}

impl Traversal {
    pub fn blocks(self, kind: CellKind) -> bool {
        match self {
            Traversal::Physical => !kind.is_traversable(),
            Traversal::Perceived => kind.looks_occupied(),
        }
    }
}

/// Single-channel 100×100 rendering of a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image100 {
    pixels: Vec<u8>,
    block: usize,
}

impl Image100 {
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * IMAGE_SIDE + col]
    }

    /// Pixel edge length of one grid cell.
    pub fn block(&self) -> usize {
        self.block
    }

    /// Binary portable graymap (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{IMAGE_SIDE} {IMAGE_SIDE}\n255\n").into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }
}
