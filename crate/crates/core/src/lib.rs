//! Grid-world navigation with uncertainty-triggered human feedback.
//!
//! An imitation-learned ensemble policy drives an agent through a grid.
//! The epistemic part of its predictive entropy feeds an online changepoint
//! detector; when the detector fires, the agent stops and asks for a
//! natural-language instruction, which is parsed into an action sequence and
//! executed before control returns to the policy.

pub mod changepoint;
pub mod expert;
pub mod feedback;
pub mod gridworld;
pub mod linalg;
pub mod observe;
pub mod par;
pub mod policy;
pub mod runner;
pub mod scenario;
pub mod uncertainty;
