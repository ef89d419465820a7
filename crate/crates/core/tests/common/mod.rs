#![allow(dead_code)]

use proptest::prelude::*;
use rand::Rng;
use remove_core::gridworld::{Pos, WALL_RING};
use remove_core::scenario::{ObstacleKind, ScenarioSpec};

pub fn central(l: usize) -> std::ops::Range<i32> {
    WALL_RING..WALL_RING + l as i32
}

/// Random grid with about `density` of the central cells occupied by
/// obstacles of every kind. Start and goal are always free.
pub fn random_spec<R: Rng>(l: usize, density: f64, rng: &mut R) -> ScenarioSpec {
    let r = central(l);
    let start = Pos::new(rng.gen_range(r.clone()), rng.gen_range(r.clone()));
    let goal = loop {
        let g = Pos::new(rng.gen_range(r.clone()), rng.gen_range(r.clone()));
        if g != start {
            break g;
        }
    };
    let kinds = [ObstacleKind::Solid, ObstacleKind::Pliable, ObstacleKind::Deceptive];
    let mut obstacles = Vec::new();
    for row in r.clone() {
        for col in r.clone() {
            let p = Pos::new(row, col);
            if p != start && p != goal && rng.gen_bool(density) {
                obstacles.push((kinds[rng.gen_range(0..3)], p));
            }
        }
    }
    ScenarioSpec { name: None, l, start, goal, obstacles, baseline_solvable: None }
}

pub fn spec_strategy() -> impl Strategy<Value = ScenarioSpec> {
    (3usize..14, 0.0f64..0.4, any::<u64>()).prop_map(|(l, d, seed)| {
        let mut rng = remove_core::par::rng_for(seed, 0);
        random_spec(l, d, &mut rng)
    })
}
