//! Map-based planner that trusts its sensors: every cell that reads as
//! occupied is impassable.

use super::{
    normalized_length, Driver, EpisodeConfig, EpisodeLog, Method, Outcome, StepRecord, TrailPoint,
};
use crate::gridworld::{AgentState, CellKind, Grid, StepEvent};
use crate::observe::SeenMask;

/// BFS on the perceived map (cells inside the visited patches), replanned
/// after every move. Frozen as soon as no plan exists.
pub fn run_baseline(grid: &Grid, config: &EpisodeConfig, lp: usize, scenario_id: &str, seed: u64) -> EpisodeLog {
    let budget = config.step_budget(grid.l());
    let start = grid.start();
    let mut state = AgentState::at(start);
    let mut seen = SeenMask::for_grid(grid);
    let mut steps = Vec::new();
    let mut trail = vec![TrailPoint { pos: start, driver: Driver::Planner }];
    let mut path_length = 0;
    let outcome = loop {
        seen.reveal(state.pos, lp.max(1));
        if state.t >= budget {
            break Outcome::Timeout;
        }
        let blocked = |p| {
            let k = grid.cell(p);
            k == CellKind::Wall || (seen.is_seen(p) && k.looks_occupied())
        };
        let Some(plan) = grid.shortest_path(state.pos, grid.goal(), blocked) else {
            break Outcome::Frozen;
        };
        let action = plan[0].action_to(plan[1]).expect("adjacent cells");
        let outcome = grid.step(state, action);
        steps.push(StepRecord { t: state.t, pos: state.pos, obs_digest: None, action, event: outcome.event, uncertainty: None });
        if outcome.state.pos != state.pos {
            path_length += 1;
        }
        state = outcome.state;
        trail.push(TrailPoint { pos: state.pos, driver: Driver::Planner });
        match outcome.event {
            StepEvent::Collision => break Outcome::Collision,
            StepEvent::ReachedGoal => break Outcome::Success,
            _ => {}
        }
    };
    let straight = start.euclidean(grid.goal());
    EpisodeLog {
        scenario_id: scenario_id.to_string(),
        method: Method::PerceivedPlannerBaseline,
        seed,
        start,
        goal: grid.goal(),
        steps,
        feedback_events: Vec::new(),
        triggers: Vec::new(),
        trail,
        outcome,
        path_length,
        straight_line: straight,
        normalized_length: normalized_length(path_length, straight),
    }
}
