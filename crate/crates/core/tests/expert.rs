mod common;

use std::collections::{HashMap, HashSet, VecDeque};

use proptest::prelude::*;
use remove_core::expert::{expert_rollout, generate_demos, ExpertError, ExpertPlanner};
use remove_core::gridworld::{Action, AgentState, Grid, Pos, StepEvent};
use remove_core::observe::{ObsParams, ObservationKind};
use remove_core::par::{rng_for, Execution};
use remove_core::scenario::{bundled, ObstacleKind, ScenarioSpec};

/// Plain BFS over the spec itself: `blocked` picks the obstacle kinds that
/// cannot be entered; everything outside the central square is wall.
fn oracle_distance(spec: &ScenarioSpec, blocked: &[ObstacleKind]) -> Option<u32> {
    let walls: HashSet<Pos> =
        spec.obstacles.iter().filter(|(k, _)| blocked.contains(k)).map(|(_, p)| *p).collect();
    let inside = |p: Pos| common::central(spec.l).contains(&p.row) && common::central(spec.l).contains(&p.col);
    let mut seen = HashMap::from([(spec.start, 0u32)]);
    let mut queue = VecDeque::from([spec.start]);
    while let Some(p) = queue.pop_front() {
        let d = seen[&p];
        if p == spec.goal {
            return Some(d);
        }
        for (dr, dc) in [(-1, 0), (0, 1), (1, 0), (0, -1)] {
            let q = Pos::new(p.row + dr, p.col + dc);
            if inside(q) && !walls.contains(&q) && !seen.contains_key(&q) {
                seen.insert(q, d + 1);
                queue.push_back(q);
            }
        }
    }
    None
}

const ALL_KINDS: [ObstacleKind; 3] = [ObstacleKind::Solid, ObstacleKind::Pliable, ObstacleKind::Deceptive];

#[test]
fn rollouts_are_shortest_paths_on_random_grids() {
    let mut rng = rng_for(100, 0);
    let mut solved = 0;
    for i in 0..100 {
        let spec = common::random_spec(4 + i % 9, 0.25, &mut rng);
        let grid = Grid::build(&spec).unwrap();
        match (expert_rollout(&grid, &mut rng), oracle_distance(&spec, &ALL_KINDS)) {
            (Ok((states, actions)), Some(d)) => {
                assert_eq!(actions.len() as u32, d, "grid {i}");
                let mut s = AgentState::at(spec.start);
                for (before, a) in states.iter().zip(&actions) {
                    assert_eq!(*before, s);
                    let out = grid.step(s, *a);
                    assert!(matches!(out.event, StepEvent::Moved | StepEvent::ReachedGoal), "grid {i}: {:?}", out.event);
                    s = out.state;
                }
                assert_eq!(s.pos, spec.goal);
                solved += 1;
            }
            (Err(ExpertError::Unreachable { .. }), None) => {}
            (r, d) => panic!("grid {i}: expert {:?} vs oracle {d:?}", r.map(|x| x.1.len())),
        }
    }
    assert!(solved >= 60, "only {solved} solvable grids");
}

#[test]
fn demonstrations_follow_shortest_paths() {
    let demos =
        generate_demos(10, 100, &ObsParams::new(ObservationKind::GoalConditioned, 5), 4, Execution::Sequential).unwrap();
    for t in &demos.trajectories {
        let spec = ScenarioSpec::open(10, t.start, t.goal);
        assert_eq!(Some(t.len() as u32), oracle_distance(&spec, &[]));
        assert_eq!(t.len() as u32, t.start.manhattan(t.goal));
    }
}

#[test]
fn ties_are_broken_at_random() {
    let grid = Grid::open(6, Pos::new(2, 2), Pos::new(7, 7)).unwrap();
    let planner = ExpertPlanner::new(&grid);
    let mut counts = [0usize; 4];
    for seed in 0..1000 {
        let a = planner.act(grid.start(), &mut rng_for(seed, 0)).unwrap();
        counts[a.code() as usize] += 1;
    }
    assert_eq!(counts[Action::Up.code() as usize] + counts[Action::Left.code() as usize], 0);
    assert!(counts.iter().filter(|c| **c > 0).count() >= 2, "{counts:?}");
    assert!(counts.iter().all(|c| *c < 600), "{counts:?}");
}

#[test]
fn bundled_reachability_taxonomy() {
    for spec in bundled() {
        assert!(oracle_distance(&spec, &[ObstacleKind::Solid]).is_some(), "{}", spec.id());
        let perceived = oracle_distance(&spec, &ALL_KINDS).is_some();
        assert_eq!(Some(perceived), spec.baseline_solvable, "{}", spec.id());
    }
}

proptest! {
    #[test]
    fn stepping_is_deterministic(spec in common::spec_strategy(), moves in proptest::collection::vec(0u8..4, 1..40)) {
        let a = Grid::build(&spec).unwrap();
        let b = Grid::build(&spec).unwrap();
        let (mut s, mut u) = (AgentState::at(spec.start), AgentState::at(spec.start));
        for m in moves {
            let act = Action::from_code(m).unwrap();
            let (x, y) = (a.step(s, act), b.step(u, act));
            prop_assert_eq!(x, y);
            prop_assert!(a.in_central(x.state.pos));
            prop_assert!(a.cell(x.state.pos).is_traversable());
            s = x.state;
            u = y.state;
        }
    }
}
