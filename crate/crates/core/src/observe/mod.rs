//! Observation encodings fed to the navigation policies.
//!
//! All encodings are built from the cell codes of [`CellKind::code`]
//! (`0` empty, `10` agent, `20` goal, `30` anything occupied). The local
//! patch is an odd `Lp × Lp` window centred on the agent; cells outside the
//! grid read as wall. When the goal lies outside the window its direction
//! is marked by a goal code on the window cell closest to it, unless that
//! cell reads as occupied.

mod costmap;
mod pca;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{AgentState, CellKind, Grid, GridError, Pos, AGENT_CODE};

pub use costmap::{build_costmap, Costmap, CostmapParams};
pub use pca::{PcaError, PcaModel};

#[derive(Debug, Error)]
pub enum ObserveError {
    #[error("local patch side must be odd, got {0}")]
    InvalidPatch(usize),
    #[error("seen mask has {got} cells, grid has {expected}")]
    MaskShapeMismatch { expected: usize, got: usize },
    #[error("costmap observations need a fitted PCA model")]
    MissingPca,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Pca(#[from] PcaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    /// Whole grid, flattened: `(L+4)²` values.
    GlobalVisibility,
    /// Local patch plus distance to goal: `Lp² + 1` values.
    GoalConditioned,
    /// Whole grid with unseen obstacles hidden, plus the local patch.
    PartialGlobal,
    /// Rendered 100×100 image, optionally followed by the goal distance.
    Visual,
    /// PCA-reduced local costmap plus distance to goal: `k + 1` values.
    CostmapPca,
}

impl ObservationKind {
    pub fn parse(s: &str) -> Option<ObservationKind> {
        match s {
            "global" | "global-visibility" => Some(ObservationKind::GlobalVisibility),
            "goal" | "goal-conditioned" => Some(ObservationKind::GoalConditioned),
            "partial" | "partial-global" => Some(ObservationKind::PartialGlobal),
            "visual" => Some(ObservationKind::Visual),
            "costmap" | "costmap-pca" => Some(ObservationKind::CostmapPca),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsMeta {
    pub l: usize,
    pub lp: usize,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub kind: ObservationKind,
    pub vector: Vec<f64>,
    pub meta: ObsMeta,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }

    /// Stable 64-bit FNV-1a digest of the vector's bit patterns, as hex.
    pub fn digest(&self) -> String {
        use std::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        for x in &self.vector {
            h.write(&x.to_bits().to_le_bytes());
        }
        format!("{:016x}", h.finish())
    }
}

/// Cells that have been covered by some local patch during an episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeenMask {
    side: usize,
    seen: Vec<bool>,
}

impl SeenMask {
    pub fn new(side: usize) -> Self {
        SeenMask { side, seen: vec![false; side * side] }
    }

    pub fn for_grid(grid: &Grid) -> Self {
        SeenMask::new(grid.side())
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn is_seen(&self, p: Pos) -> bool {
        p.row >= 0
            && p.col >= 0
            && (p.row as usize) < self.side
            && (p.col as usize) < self.side
            && self.seen[p.row as usize * self.side + p.col as usize]
    }

    /// Marks every in-bounds cell of the `lp × lp` window around `center`.
    pub fn reveal(&mut self, center: Pos, lp: usize) {
        let r = (lp / 2) as i32;
        for dr in -r..=r {
            for dc in -r..=r {
                let p = Pos::new(center.row + dr, center.col + dc);
                if p.row >= 0 && p.col >= 0 && (p.row as usize) < self.side && (p.col as usize) < self.side {
                    self.seen[p.row as usize * self.side + p.col as usize] = true;
                }
            }
        }
    }

    pub fn count(&self) -> usize {
        self.seen.iter().filter(|s| **s).count()
    }
}

fn check_patch(lp: usize) -> Result<(), ObserveError> {
    if lp.is_multiple_of(2) {
        Err(ObserveError::InvalidPatch(lp))
    } else {
        Ok(())
    }
}

/// Agent-centred `lp × lp` window, row-major, with the goal marker.
pub fn local_patch(grid: &Grid, agent: Pos, lp: usize) -> Result<Vec<f64>, ObserveError> {
    check_patch(lp)?;
    let r = (lp / 2) as i32;
    let mut out = Vec::with_capacity(lp * lp);
    for dr in -r..=r {
        for dc in -r..=r {
            out.push(grid.cell(Pos::new(agent.row + dr, agent.col + dc)).code());
        }
    }
    let goal = grid.goal();
    let gr = (goal.row - agent.row).clamp(-r, r);
    let gc = (goal.col - agent.col).clamp(-r, r);
    let idx = ((gr + r) as usize) * lp + (gc + r) as usize;
    if out[idx] != CellKind::Wall.code() && (gr, gc) != (0, 0) {
        out[idx] = CellKind::Goal.code();
    }
    let center = (r as usize) * lp + r as usize;
    out[center] = AGENT_CODE;
    Ok(out)
}

fn meta(grid: &Grid, lp: usize, k: Option<usize>) -> ObsMeta {
    ObsMeta { l: grid.l(), lp, k }
}

pub fn global_observation(grid: &Grid, state: &AgentState) -> Observation {
    Observation {
        kind: ObservationKind::GlobalVisibility,
        vector: grid.encode(state.pos),
        meta: meta(grid, 0, None),
    }
}

pub fn goal_conditioned_observation(grid: &Grid, state: &AgentState, lp: usize) -> Result<Observation, ObserveError> {
    let mut vector = local_patch(grid, state.pos, lp)?;
    vector.push(state.pos.euclidean(grid.goal()));
    Ok(Observation { kind: ObservationKind::GoalConditioned, vector, meta: meta(grid, lp, None) })
}

/// Global map with obstacles outside `seen` erased, followed by the current
/// local patch. Walls are part of the known map and always visible.
pub fn partial_global_observation(
    grid: &Grid,
    state: &AgentState,
    lp: usize,
    seen: &SeenMask,
) -> Result<Observation, ObserveError> {
    check_patch(lp)?;
    if seen.len() != grid.cells().len() {
        return Err(ObserveError::MaskShapeMismatch { expected: grid.cells().len(), got: seen.len() });
    }
    let mut vector = grid.encode(state.pos);
    for (i, kind) in grid.cells().iter().enumerate() {
        let p = grid.pos_of(i);
        if kind.is_obstacle() && !seen.is_seen(p) && p != state.pos {
            vector[i] = CellKind::Empty.code();
        }
    }
    vector.extend(local_patch(grid, state.pos, lp)?);
    Ok(Observation { kind: ObservationKind::PartialGlobal, vector, meta: meta(grid, lp, None) })
}

pub fn visual_observation(grid: &Grid, state: &AgentState, with_distance: bool) -> Result<Observation, ObserveError> {
    let mut vector = grid.render(state)?.to_f64();
    if with_distance {
        vector.push(state.pos.euclidean(grid.goal()));
    }
    Ok(Observation { kind: ObservationKind::Visual, vector, meta: meta(grid, 0, None) })
}

/// Everything needed to turn `(grid, state, mask)` into an observation of
/// one fixed kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsParams {
    pub kind: ObservationKind,
    pub lp: usize,
    #[serde(default)]
    pub visual_distance: bool,
    #[serde(default)]
    pub costmap: CostmapParams,
}

impl ObsParams {
    pub fn new(kind: ObservationKind, lp: usize) -> Self {
        ObsParams { kind, lp, visual_distance: true, costmap: CostmapParams::default() }
    }

    /// Vector length produced for a grid with central side `l`.
    pub fn dim(&self, l: usize, k: Option<usize>) -> usize {
        let side = l + 4;
        match self.kind {
            ObservationKind::GlobalVisibility => side * side,
            ObservationKind::GoalConditioned => self.lp * self.lp + 1,
            ObservationKind::PartialGlobal => side * side + self.lp * self.lp,
            ObservationKind::Visual => 10_000 + usize::from(self.visual_distance),
            ObservationKind::CostmapPca => k.unwrap_or(self.costmap.k) + 1,
        }
    }
}

/// Observation builder bound to one parameter set (and, for costmap
/// observations, a fitted PCA model).
#[derive(Debug, Clone)]
pub struct Observer {
    params: ObsParams,
    pca: Option<Arc<PcaModel>>,
}

impl Observer {
    pub fn new(params: ObsParams) -> Self {
        Observer { params, pca: None }
    }

    pub fn with_pca(params: ObsParams, pca: Arc<PcaModel>) -> Self {
        Observer { params, pca: Some(pca) }
    }

    pub fn params(&self) -> &ObsParams {
        &self.params
    }

    pub fn kind(&self) -> ObservationKind {
        self.params.kind
    }

    pub fn pca(&self) -> Option<&Arc<PcaModel>> {
        self.pca.as_ref()
    }

    pub fn observe(&self, grid: &Grid, state: &AgentState, seen: &SeenMask) -> Result<Observation, ObserveError> {
        let p = &self.params;
        match p.kind {
            ObservationKind::GlobalVisibility => Ok(global_observation(grid, state)),
            ObservationKind::GoalConditioned => goal_conditioned_observation(grid, state, p.lp),
            ObservationKind::PartialGlobal => partial_global_observation(grid, state, p.lp, seen),
            ObservationKind::Visual => visual_observation(grid, state, p.visual_distance),
            ObservationKind::CostmapPca => {
                let pca = self.pca.as_ref().ok_or(ObserveError::MissingPca)?;
                let map = build_costmap(grid, state, p.lp, p.costmap.alpha_scan, p.costmap.alpha_dist)?;
                let mut obs = pca.project_observation(&map, state.pos.euclidean(grid.goal()))?;
                obs.meta.l = grid.l();
                Ok(obs)
            }
        }
    }
}
