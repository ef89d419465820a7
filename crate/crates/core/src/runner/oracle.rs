//! Test-time stand-in for a human who knows the true map.

use super::episode::{FeedbackContext, FeedbackSource};
use crate::feedback::grammar::render_actions;
use crate::feedback::Instruction;
use crate::gridworld::{Action, CellKind, Grid, Pos};

/// Chebyshev radius around obstacles within which the oracle keeps guiding.
const GUIDE_RADIUS: u32 = 2;

/// Shortest physical route from `from` to the goal that avoids solid and,
/// when possible, pliable cells (deceptive cells are fine), cut one cell past
/// the last position near an obstacle. `None` if the goal is unreachable.
pub fn oracle_path(grid: &Grid, from: Pos) -> Option<Vec<Action>> {
    let strict = |p: Pos| matches!(grid.cell(p), CellKind::Wall | CellKind::SolidObstacle | CellKind::PliableObstacle);
    let loose = |p: Pos| !grid.cell(p).is_traversable();
    let path = grid.shortest_path(from, grid.goal(), strict).or_else(|| grid.shortest_path(from, grid.goal(), loose))?;
    if path.len() < 2 {
        return None;
    }
    let actions: Vec<Action> = path.windows(2).map(|w| w[0].action_to(w[1]).expect("adjacent cells")).collect();
    let near = |p: &Pos| grid.obstacle_distance(*p).is_some_and(|d| d <= GUIDE_RADIUS);
    let cut = match path.iter().rposition(near) {
        Some(i) => (i + 1).clamp(1, actions.len()),
        None => actions.len(),
    };
    Some(actions[..cut].to_vec())
}

/// Answers every request with the natural-language rendering of
/// [`oracle_path`], so the parser is exercised on each feedback.
#[derive(Debug, Default, Clone)]
pub struct ScriptedOracle {
    pub requests: usize,
}

impl FeedbackSource for ScriptedOracle {
    fn request(&mut self, ctx: &FeedbackContext<'_>) -> Option<Instruction> {
        self.requests += 1;
        let actions = oracle_path(ctx.grid, ctx.state.pos)?;
        Instruction::scripted(render_actions(&actions)).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::bundled_by_name;

    #[test]
    fn open_grid_gets_full_route() {
        let g = Grid::open(6, Pos::new(2, 2), Pos::new(2, 5)).unwrap();
        assert_eq!(oracle_path(&g, g.start()).unwrap(), vec![Action::Right; 3]);
        assert_eq!(oracle_path(&g, g.goal()), None);
    }

    #[test]
    fn sealed_room_route_uses_the_deceptive_door() {
        let spec = bundled_by_name("sealed_deceptive_room").unwrap();
        let g = Grid::build(&spec).unwrap();
        let acts = oracle_path(&g, g.start()).unwrap();
        let mut p = g.start();
        let mut crossed = false;
        for a in &acts {
            p = p.step(*a);
            assert!(g.cell(p).is_traversable());
            crossed |= g.cell(p) == CellKind::DeceptiveObstacle;
        }
        assert!(crossed);
    }
}
