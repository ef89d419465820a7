//! Shortest-path expert and demonstration datasets.
//!
//! The expert follows a unit-cost Dijkstra (breadth-first) distance field
//! towards the goal. Where several moves are optimal it picks one uniformly
//! at random, so shared states carry genuinely multimodal labels.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{Action, AgentState, Grid, GridError, Pos, Traversal};
use crate::observe::{build_costmap, ObsParams, ObservationKind, ObserveError, Observer, PcaError, PcaModel, SeenMask};
use crate::par::{self, Execution};

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("goal {goal} is unreachable from {from}")]
    Unreachable { from: Pos, goal: Pos },
    #[error("agent is already at the goal")]
    AtGoal,
    #[error("L = {0} is too small to sample start/goal pairs")]
    GridTooSmall(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Observe(#[from] ObserveError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error("demonstration file: {0}")]
    Format(String),
    #[error("demonstration io: {0}")]
    Io(#[from] std::io::Error),
}

/// Distance-to-goal field over the perceived map of one grid.
#[derive(Debug, Clone)]
pub struct ExpertPlanner<'g> {
    grid: &'g Grid,
    dist: Vec<Option<u32>>,
}

impl<'g> ExpertPlanner<'g> {
    pub fn new(grid: &'g Grid) -> Self {
        let dist = grid.bfs_distances(grid.goal(), |p| Traversal::Perceived.blocks(grid.cell(p)));
        ExpertPlanner { grid, dist }
    }

    pub fn distance(&self, p: Pos) -> Option<u32> {
        if self.grid.in_bounds(p) {
            self.dist[self.grid.index(p)]
        } else {
            None
        }
    }

    /// Every action that lies on some shortest path from `p`.
    pub fn optimal_actions(&self, p: Pos) -> Result<Vec<Action>, ExpertError> {
        let d = self.distance(p).ok_or(ExpertError::Unreachable { from: p, goal: self.grid.goal() })?;
        if d == 0 {
            return Err(ExpertError::AtGoal);
        }
        Ok(Action::ALL.into_iter().filter(|&a| self.distance(p.step(a)) == Some(d - 1)).collect())
    }

    pub fn act<R: Rng + ?Sized>(&self, p: Pos, rng: &mut R) -> Result<Action, ExpertError> {
        let options = self.optimal_actions(p)?;
        Ok(*options.choose(rng).expect("a reachable non-goal cell has an optimal move"))
    }
}

/// One expert action from `state`, breaking ties uniformly with `rng`.
pub fn shortest_path_policy<R: Rng + ?Sized>(grid: &Grid, state: &AgentState, rng: &mut R) -> Result<Action, ExpertError> {
    ExpertPlanner::new(grid).act(state.pos, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scenario_id: String,
    pub seed: u64,
    pub start: Pos,
    pub goal: Pos,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoHeader {
    pub format: String,
    pub version: u32,
    pub l: usize,
    pub params: ObsParams,
    pub pca: Option<PcaModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationSet {
    pub header: DemoHeader,
    pub trajectories: Vec<Trajectory>,
}

const DEMO_FORMAT: &str = "remove-demos";

impl DemonstrationSet {
    pub fn params(&self) -> &ObsParams {
        &self.header.params
    }

    pub fn kind(&self) -> ObservationKind {
        self.header.params.kind
    }

    pub fn observer(&self) -> Observer {
        match &self.header.pca {
            Some(pca) => Observer::with_pca(self.header.params.clone(), Arc::new(pca.clone())),
            None => Observer::new(self.header.params.clone()),
        }
    }

    pub fn num_samples(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.trajectories.iter().flat_map(|t| t.observations.first()).map(Vec::len).next()
    }

    /// `(observation, action)` pairs across all trajectories.
    pub fn samples(&self) -> impl Iterator<Item = (&[f64], Action)> {
        self.trajectories
            .iter()
            .flat_map(|t| t.observations.iter().zip(&t.actions).map(|(o, a)| (o.as_slice(), *a)))
    }

    /// JSON-Lines: a header line followed by one trajectory per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), ExpertError> {
        let to_err = |e: serde_json::Error| ExpertError::Format(e.to_string());
        serde_json::to_writer(&mut out, &self.header).map_err(to_err)?;
        out.write_all(b"\n")?;
        for t in &self.trajectories {
            serde_json::to_writer(&mut out, t).map_err(to_err)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<DemonstrationSet, ExpertError> {
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| ExpertError::Format("empty file".into()))??;
        let header: DemoHeader = serde_json::from_str(&first).map_err(|e| ExpertError::Format(e.to_string()))?;
        if header.format != DEMO_FORMAT {
            return Err(ExpertError::Format(format!("unexpected format `{}`", header.format)));
        }
        let mut trajectories = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trajectory =
                serde_json::from_str(&line).map_err(|e| ExpertError::Format(format!("line {}: {e}", i + 2)))?;
            trajectories.push(t);
        }
        Ok(DemonstrationSet { header, trajectories })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ExpertError> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DemonstrationSet, ExpertError> {
        DemonstrationSet::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Splits off the trajectories with index `>= keep` (e.g. for held-out
    /// evaluation).
    pub fn split_at(&self, keep: usize) -> (DemonstrationSet, DemonstrationSet) {
        let keep = keep.min(self.trajectories.len());
        let a = DemonstrationSet { header: self.header.clone(), trajectories: self.trajectories[..keep].to_vec() };
        let b = DemonstrationSet { header: self.header.clone(), trajectories: self.trajectories[keep..].to_vec() };
        (a, b)
    }
}

/// Uniform distinct central cells with Euclidean separation `>= L/2`.
pub fn sample_endpoints<R: Rng + ?Sized>(l: usize, rng: &mut R) -> (Pos, Pos) {
    let lo = crate::gridworld::WALL_RING;
    let hi = l as i32 + lo;
    let min_sep = l as f64 / 2.0;
    loop {
        let s = Pos::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        let g = Pos::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        if s != g && s.euclidean(g) >= min_sep {
            return (s, g);
        }
    }
}

/// Runs the expert from the grid's start to its goal, returning the visited
/// states (before each action) and the actions.
pub fn expert_rollout<R: Rng + ?Sized>(grid: &Grid, rng: &mut R) -> Result<(Vec<AgentState>, Vec<Action>), ExpertError> {
    let planner = ExpertPlanner::new(grid);
    let mut state = AgentState::at(grid.start());
    let mut states = Vec::new();
    let mut actions = Vec::new();
    while state.pos != grid.goal() {
        let a = planner.act(state.pos, rng)?;
        states.push(state);
        actions.push(a);
        state = grid.step(state, a).state;
    }
    Ok((states, actions))
}

/// Generates `n` expert trajectories on obstacle-free `L × L` grids with
/// random endpoints. Deterministic in `seed` regardless of `exec`.
pub fn generate_demos(
    l: usize,
    n: usize,
    params: &ObsParams,
    seed: u64,
    exec: Execution,
) -> Result<DemonstrationSet, ExpertError> {
    if l < 3 {
        return Err(ExpertError::GridTooSmall(l));
    }
    let rollouts = par::map_range(exec, n, |i| -> Result<_, ExpertError> {
        let traj_seed = par::derive_seed(seed, i as u64);
        let mut rng = par::rng_for(traj_seed, 0);
        let (start, goal) = sample_endpoints(l, &mut rng);
        let grid = Grid::open(l, start, goal)?;
        let (states, actions) = expert_rollout(&grid, &mut rng)?;
        Ok((traj_seed, grid, states, actions))
    });
    let rollouts = rollouts.into_iter().collect::<Result<Vec<_>, _>>()?;

    let pca = if params.kind == ObservationKind::CostmapPca {
        let mut maps = Vec::new();
        for (_, grid, states, _) in &rollouts {
            for s in states {
                maps.push(build_costmap(grid, s, params.lp, params.costmap.alpha_scan, params.costmap.alpha_dist)?.combined);
            }
        }
        Some(PcaModel::fit(&maps, params.costmap.k)?)
    } else {
        None
    };
    let observer = match &pca {
        Some(p) => Observer::with_pca(params.clone(), Arc::new(p.clone())),
        None => Observer::new(params.clone()),
    };

    let trajectories = par::map_slice(exec, &rollouts, |(traj_seed, grid, states, actions)| {
        let mut seen = SeenMask::for_grid(grid);
        let mut observations = Vec::with_capacity(states.len());
        for s in states {
            seen.reveal(s.pos, params.lp.max(1));
            observations.push(observer.observe(grid, s, &seen)?.vector);
        }
        Ok::<_, ExpertError>(Trajectory {
            scenario_id: format!("open-{l}"),
            seed: *traj_seed,
            start: grid.start(),
            goal: grid.goal(),
            observations,
            actions: actions.clone(),
        })
    });
    Ok(DemonstrationSet {
        header: DemoHeader { format: DEMO_FORMAT.into(), version: 1, l, params: params.clone(), pca },
        trajectories: trajectories.into_iter().collect::<Result<_, _>>()?,
    })
}
