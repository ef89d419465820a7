//! Entropy decomposition of an ensemble's action distribution.
//!
//! For member probability rows `p_k`:
//!
//! * total (predictive) entropy `H = entropy(mean_k p_k)`
//! * expected (aleatoric) entropy `Ē = mean_k entropy(p_k)`
//! * mutual information (epistemic) `I = H - Ē`, non-negative by concavity.
//!
//! Everything is in nats.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probability rows, one per ensemble member or dropout sample.
pub type ProbMatrix = Vec<[f64; 4]>;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UncertaintyError {
    #[error("row {row} is not a probability vector (sum {sum}, min {min})")]
    NotSimplex { row: usize, sum: f64, min: f64 },
    #[error("need at least 2 member rows, got {0}")]
    TooFewMembers(usize),
}

fn check_simplex(p: &[f64; 4], row: usize) -> Result<(), UncertaintyError> {
    let sum: f64 = p.iter().sum();
    let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
    if (sum - 1.0).abs() > 1e-6 || min < -1e-9 || !sum.is_finite() {
        return Err(UncertaintyError::NotSimplex { row, sum, min });
    }
    Ok(())
}

fn entropy_unchecked(p: &[f64; 4]) -> f64 {
    -p.iter().map(|&x| if x > 0.0 { x * x.clamp(LOG_FLOOR, 1.0).ln() } else { 0.0 }).sum::<f64>()
}

/// Shannon entropy with `0 · ln 0 = 0`.
pub fn entropy(p: &[f64; 4]) -> Result<f64, UncertaintyError> {
    check_simplex(p, 0)?;
    Ok(entropy_unchecked(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub t: u32,
    pub member_probs: ProbMatrix,
    /// Predictive entropy `H`.
    pub total_entropy: f64,
    /// Expected member entropy `Ē`.
    pub expected_entropy: f64,
    /// Epistemic part `I = H - Ē`.
    pub mutual_info: f64,
}

impl UncertaintyRecord {
    pub fn mean_probs(&self) -> [f64; 4] {
        mean_row(&self.member_probs)
    }
}

pub fn mean_row(rows: &[[f64; 4]]) -> [f64; 4] {
    let mut mean = [0.0; 4];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    let k = rows.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    mean
}

pub fn decompose(member_probs: &[[f64; 4]]) -> Result<UncertaintyRecord, UncertaintyError> {
    decompose_at(0, member_probs)
}

pub fn decompose_at(t: u32, member_probs: &[[f64; 4]]) -> Result<UncertaintyRecord, UncertaintyError> {
    if member_probs.len() < 2 {
        return Err(UncertaintyError::TooFewMembers(member_probs.len()));
    }
    for (i, row) in member_probs.iter().enumerate() {
        check_simplex(row, i)?;
    }
    let total = entropy_unchecked(&mean_row(member_probs));
    let expected = member_probs.iter().map(entropy_unchecked).sum::<f64>() / member_probs.len() as f64;
    Ok(UncertaintyRecord {
        t,
        member_probs: member_probs.to_vec(),
        total_entropy: total,
        expected_entropy: expected,
        mutual_info: total - expected,
    })
}

/// Epistemic values in step order.
pub fn uncertainty_series(log: &[UncertaintyRecord]) -> Vec<f64> {
    log.iter().map(|r| r.mutual_info).collect()
}

/// `t,I,H,Ebar` rows.
pub fn series_csv(log: &[UncertaintyRecord]) -> String {
    let mut out = String::from("t,I,H,Ebar\n");
    for r in log {
        let _ = writeln!(out, "{},{},{},{}", r.t, r.mutual_info, r.total_entropy, r.expected_entropy);
    }
    out
}
