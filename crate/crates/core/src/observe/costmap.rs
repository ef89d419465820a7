use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{check_patch, ObserveError};
use crate::gridworld::{AgentState, Grid, Pos};

/// Weights of the occupancy and goal-distance layers plus the PCA size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostmapParams {
    pub alpha_scan: f64,
    pub alpha_dist: f64,
    pub k: usize,
}

impl Default for CostmapParams {
    fn default() -> Self {
        CostmapParams { alpha_scan: 1.0, alpha_dist: 0.05, k: 8 }
    }
}

/// Local costmap: `combined = alpha_scan * scan + alpha_dist * dist`.
#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    pub lp: usize,
    /// 1 where the patch cell reads as occupied, else 0.
    pub scan: Vec<f64>,
    /// Euclidean distance from each patch cell to the goal.
    pub dist: Vec<f64>,
    pub combined: Vec<f64>,
    pub alphas: (f64, f64),
}

impl Costmap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.combined[row * self.lp + col]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,scan,dist,cost\n");
        for i in 0..self.combined.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                i / self.lp,
                i % self.lp,
                self.scan[i],
                self.dist[i],
                self.combined[i]
            );
        }
        out
    }
}

pub fn build_costmap(
    grid: &Grid,
    state: &AgentState,
    lp: usize,
    alpha_scan: f64,
    alpha_dist: f64,
) -> Result<Costmap, ObserveError> {
    check_patch(lp)?;
    let r = (lp / 2) as i32;
    let goal = grid.goal();
    let n = lp * lp;
    let mut scan = Vec::with_capacity(n);
    let mut dist = Vec::with_capacity(n);
    for dr in -r..=r {
        for dc in -r..=r {
            let p = Pos::new(state.pos.row + dr, state.pos.col + dc);
            scan.push(if grid.cell(p).looks_occupied() { 1.0 } else { 0.0 });
            dist.push(p.euclidean(goal));
        }
    }
    let combined = scan.iter().zip(&dist).map(|(s, d)| alpha_scan * s + alpha_dist * d).collect();
    Ok(Costmap { lp, scan, dist, combined, alphas: (alpha_scan, alpha_dist) })
}
