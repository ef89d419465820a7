//! Imitation-learned navigation policies with uncertainty-capable
//! prediction.
//!
//! A member is a softmax classifier trained by stochastic gradient ascent
//! on the log-likelihood of expert actions. An [`EnsemblePolicy`] is either
//! `K` members trained on independent bootstrap resamples of the
//! trajectories, or a single dropout network queried `M` times with dropout
//! left on.

mod io;
mod mlp;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expert::DemonstrationSet;
use crate::gridworld::Action;
use crate::observe::{ObsParams, Observation, ObservationKind, Observer, PcaModel};
use crate::par::{self, Execution};
use crate::uncertainty::{mean_row, ProbMatrix};

pub use mlp::{Architecture, InputTransform, Network};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("observation has {got} values, policy expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("observation kind {got:?} does not match policy kind {expected:?}")]
    KindMismatch { expected: ObservationKind, got: ObservationKind },
    #[error("non-finite loss in member {member} at epoch {epoch} (last finite loss {last_loss})")]
    NonFiniteLoss { member: usize, epoch: usize, last_loss: f64 },
    #[error("demonstration set is empty")]
    EmptyDemos,
    #[error("invalid policy configuration: {0}")]
    BadConfig(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    Ensemble,
    McDropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Resample trajectories with replacement before training.
    pub bootstrap: bool,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { learning_rate: 0.05, epochs: 200, batch_size: 32, hidden: vec![64, 64], dropout: 0.0, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMember {
    pub seed: u64,
    pub net: Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_nll: f64,
    pub final_nll: f64,
    pub samples: usize,
}

/// Default input transform for an observation kind: images are pooled
/// 4×4 to 25×25 before the dense layers.
pub fn transform_for(kind: ObservationKind) -> InputTransform {
    match kind {
        ObservationKind::Visual => InputTransform::Pool { side: 100, factor: 4 },
        _ => InputTransform::Identity,
    }
}

fn bootstrap_samples<'d, R: Rng + ?Sized>(
    demos: &'d DemonstrationSet,
    bootstrap: bool,
    rng: &mut R,
) -> Vec<(&'d [f64], Action)> {
    let n = demos.trajectories.len();
    let picks: Vec<usize> = if bootstrap { (0..n).map(|_| rng.gen_range(0..n)).collect() } else { (0..n).collect() };
    picks
        .into_iter()
        .flat_map(|i| {
            let t = &demos.trajectories[i];
            t.observations.iter().zip(&t.actions).map(|(o, a)| (o.as_slice(), *a))
        })
        .collect()
}

/// Trains one member on a bootstrap resample of `demos`.
pub fn train_member(
    demos: &DemonstrationSet,
    seed: u64,
    hyper: &TrainHyper,
) -> Result<(PolicyMember, TrainReport), PolicyError> {
    train_member_indexed(demos, seed, hyper, 0)
}

fn train_member_indexed(
    demos: &DemonstrationSet,
    seed: u64,
    hyper: &TrainHyper,
    index: usize,
) -> Result<(PolicyMember, TrainReport), PolicyError> {
    let dim = demos.input_dim().ok_or(PolicyError::EmptyDemos)?;
    if let Some((o, _)) = demos.samples().find(|(o, _)| o.len() != dim) {
        return Err(PolicyError::DimensionMismatch { expected: dim, got: o.len() });
    }
    if hyper.batch_size == 0 || !(0.0..1.0).contains(&hyper.dropout) {
        return Err(PolicyError::BadConfig(format!("batch size {} / dropout {}", hyper.batch_size, hyper.dropout)));
    }
    let mut rng = par::rng_for(seed, 0);
    let mut samples = bootstrap_samples(demos, hyper.bootstrap, &mut rng);
    if samples.is_empty() {
        return Err(PolicyError::EmptyDemos);
    }
    let arch = Architecture {
        hidden: hyper.hidden.clone(),
        dropout: hyper.dropout,
        transform: transform_for(demos.kind()),
    };
    let mut net = Network::new(arch, dim, &mut rng);
    net.fit_scaler(samples.iter().map(|(o, _)| *o));
    let initial_nll = net.mean_nll(&samples);
    let mut last_loss = initial_nll;
    for epoch in 0..hyper.epochs {
        samples.shuffle(&mut rng);
        for batch in samples.chunks(hyper.batch_size) {
            let (loss, grad) = net.nll_and_grad(batch, Some(&mut rng));
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(PolicyError::NonFiniteLoss { member: index, epoch, last_loss });
            }
            last_loss = loss;
            net.apply_gradient(&grad, hyper.learning_rate);
        }
    }
    let final_nll = net.mean_nll(&samples);
    if !final_nll.is_finite() {
        return Err(PolicyError::NonFiniteLoss { member: index, epoch: hyper.epochs, last_loss });
    }
    let report = TrainReport { initial_nll, final_nll, samples: samples.len() };
    Ok((PolicyMember { seed, net }, report))
}

/// Uncertainty-aware policy: several probability rows per observation.
#[derive(Debug, Clone)]
pub struct EnsemblePolicy {
    mode: PolicyMode,
    members: Vec<PolicyMember>,
    mc_samples: usize,
    l: usize,
    observer: Observer,
}

impl EnsemblePolicy {
    pub fn new(
        mode: PolicyMode,
        members: Vec<PolicyMember>,
        mc_samples: usize,
        l: usize,
        observer: Observer,
    ) -> Result<Self, PolicyError> {
        match mode {
            PolicyMode::Ensemble if members.len() < 2 => {
                return Err(PolicyError::BadConfig(format!("ensemble needs K >= 2, got {}", members.len())))
            }
            PolicyMode::McDropout if members.len() != 1 || mc_samples < 2 => {
                return Err(PolicyError::BadConfig(format!(
                    "MC dropout needs exactly one member and M >= 2, got K={} M={mc_samples}",
                    members.len()
                )))
            }
            _ => {}
        }
        let dim = members[0].net.input_dim();
        if members.iter().any(|m| m.net.input_dim() != dim) {
            return Err(PolicyError::BadConfig("members disagree on input dimension".into()));
        }
        Ok(EnsemblePolicy { mode, members, mc_samples, l, observer })
    }

    pub fn mode(&self) -> PolicyMode {
        self.mode
    }

    pub fn members(&self) -> &[PolicyMember] {
        &self.members
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn mc_samples(&self) -> usize {
        self.mc_samples
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].net.input_dim()
    }

    pub fn kind(&self) -> ObservationKind {
        self.observer.kind()
    }

    /// Central grid side the policy was trained on.
    pub fn l(&self) -> usize {
        self.l
    }

    pub fn observer(&self) -> &Observer {
        &self.observer
    }

    pub fn obs_params(&self) -> &ObsParams {
        self.observer.params()
    }

    pub fn pca(&self) -> Option<&Arc<PcaModel>> {
        self.observer.pca()
    }

    /// A policy restricted to a subset of ensemble members.
    pub fn subset(&self, indices: &[usize]) -> Result<EnsemblePolicy, PolicyError> {
        let members = indices.iter().map(|&i| self.members[i].clone()).collect();
        EnsemblePolicy::new(self.mode, members, self.mc_samples, self.l, self.observer.clone())
    }

    fn check(&self, obs: &Observation) -> Result<(), PolicyError> {
        if obs.kind != self.kind() {
            return Err(PolicyError::KindMismatch { expected: self.kind(), got: obs.kind });
        }
        self.check_vector(&obs.vector)
    }

    fn check_vector(&self, v: &[f64]) -> Result<(), PolicyError> {
        if v.len() != self.input_dim() {
            return Err(PolicyError::DimensionMismatch { expected: self.input_dim(), got: v.len() });
        }
        Ok(())
    }

    /// One probability row per member (ensemble) or per stochastic pass
    /// (MC dropout).
    pub fn predict_members<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Result<ProbMatrix, PolicyError> {
        self.check(obs)?;
        self.predict_vector(&obs.vector, rng)
    }

    pub fn predict_vector<R: Rng + ?Sized>(&self, v: &[f64], rng: &mut R) -> Result<ProbMatrix, PolicyError> {
        self.check_vector(v)?;
        Ok(match self.mode {
            PolicyMode::Ensemble => self.members.iter().map(|m| m.net.predict(v)).collect(),
            PolicyMode::McDropout => {
                let net = &self.members[0].net;
                (0..self.mc_samples).map(|_| net.predict_stochastic(v, rng)).collect()
            }
        })
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Result<Action, PolicyError> {
        Ok(decode_action(&self.predict_members(obs, rng)?))
    }
}

/// Argmax of the member-mean probabilities; ties go to the lowest code.
pub fn decode_action(rows: &[[f64; 4]]) -> Action {
    argmax_action(&mean_row(rows))
}

pub fn argmax_action(p: &[f64; 4]) -> Action {
    let mut best = 0;
    for i in 1..4 {
        if p[i] > p[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

/// Trains `k` members with distinct derived seeds and bootstrap resamples.
pub fn train_ensemble(
    demos: &DemonstrationSet,
    k: usize,
    seed: u64,
    hyper: &TrainHyper,
    exec: Execution,
) -> Result<(EnsemblePolicy, Vec<TrainReport>), PolicyError> {
    if k < 2 {
        return Err(PolicyError::BadConfig(format!("ensemble needs K >= 2, got {k}")));
    }
    let results = par::map_range(exec, k, |i| train_member_indexed(demos, par::derive_seed(seed, i as u64), hyper, i));
    let mut members = Vec::with_capacity(k);
    let mut reports = Vec::with_capacity(k);
    for r in results {
        let (m, rep) = r?;
        members.push(m);
        reports.push(rep);
    }
    let policy = EnsemblePolicy::new(PolicyMode::Ensemble, members, 0, demos.header.l, demos.observer())?;
    Ok((policy, reports))
}

/// Trains a single dropout network (on the full data set) for MC-dropout
/// prediction with `m` stochastic passes.
pub fn train_mc_dropout(
    demos: &DemonstrationSet,
    m: usize,
    seed: u64,
    hyper: &TrainHyper,
) -> Result<(EnsemblePolicy, TrainReport), PolicyError> {
    let hyper = TrainHyper { bootstrap: false, ..hyper.clone() };
    let (member, report) = train_member_indexed(demos, par::derive_seed(seed, 0), &hyper, 0)?;
    let policy = EnsemblePolicy::new(PolicyMode::McDropout, vec![member], m, demos.header.l, demos.observer())?;
    Ok((policy, report))
}

/// Fraction of samples where `predict` picks the labelled action.
pub fn accuracy<'a>(samples: impl Iterator<Item = (&'a [f64], Action)>, mut predict: impl FnMut(&[f64]) -> Action) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (x, a) in samples {
        n += 1;
        if predict(x) == a {
            hit += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{DemoHeader, Trajectory};
    use crate::gridworld::Pos;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_demos(samples: Vec<(Vec<f64>, Action)>) -> DemonstrationSet {
        let (observations, actions): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
        DemonstrationSet {
            header: DemoHeader {
                format: "remove-demos".into(),
                version: 1,
                l: 10,
                params: ObsParams::new(ObservationKind::GoalConditioned, 1),
                pca: None,
            },
            trajectories: vec![Trajectory {
                scenario_id: "toy".into(),
                seed: 0,
                start: Pos::new(2, 2),
                goal: Pos::new(3, 3),
                observations,
                actions,
            }],
        }
    }

    fn no_bootstrap() -> TrainHyper {
        TrainHyper { epochs: 100, bootstrap: false, hidden: vec![16], ..Default::default() }
    }

    #[test]
    fn degenerate_dataset_is_learned() {
        let demos = toy_demos(vec![(vec![1.0, 2.0], Action::Right); 8]);
        let (m, rep) = train_member(&demos, 1, &TrainHyper { epochs: 1000, ..no_bootstrap() }).unwrap();
        let p = m.net.predict(&[1.0, 2.0]);
        assert!(p[1] >= 0.95, "{p:?}");
        assert!(rep.final_nll <= rep.initial_nll);
    }

    #[test]
    fn split_labels_converge_to_empirical_distribution() {
        let mut samples = vec![(vec![0.5, -1.0], Action::Up); 10];
        samples.extend(vec![(vec![0.5, -1.0], Action::Left); 10]);
        let demos = toy_demos(samples);
        let (m, _) = train_member(&demos, 3, &no_bootstrap()).unwrap();
        let p = m.net.predict(&[0.5, -1.0]);
        assert!((0.4..=0.6).contains(&p[0]), "{p:?}");
        assert!((0.4..=0.6).contains(&p[3]), "{p:?}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let demos = toy_demos(vec![(vec![1.0, 2.0], Action::Up), (vec![1.0], Action::Up)]);
        assert!(matches!(train_member(&demos, 0, &no_bootstrap()), Err(PolicyError::DimensionMismatch { .. })));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let demos = toy_demos(vec![(vec![1.0, 2.0], Action::Up), (vec![3.0, 1.0], Action::Down)]);
        let hyper = TrainHyper { learning_rate: f64::INFINITY, ..no_bootstrap() };
        assert!(matches!(train_member(&demos, 0, &hyper), Err(PolicyError::NonFiniteLoss { .. })));
    }

    #[test]
    fn decoding_rule() {
        assert_eq!(decode_action(&[[0.1, 0.7, 0.1, 0.1]]), Action::Right);
        assert_eq!(decode_action(&[[0.5, 0.5, 0.0, 0.0]]), Action::Up);
        assert_eq!(decode_action(&[[0.25; 4], [0.25; 4]]), Action::Up);
        assert_eq!(decode_action(&[[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 1.0]]), Action::Left);
    }

    #[test]
    fn mode_invariants() {
        let demos = toy_demos(vec![(vec![1.0, 2.0], Action::Up), (vec![3.0, 1.0], Action::Down)]);
        let (m, _) = train_member(&demos, 0, &no_bootstrap()).unwrap();
        let obs = demos.observer();
        assert!(EnsemblePolicy::new(PolicyMode::Ensemble, vec![m.clone()], 0, 10, obs.clone()).is_err());
        assert!(EnsemblePolicy::new(PolicyMode::McDropout, vec![m.clone()], 1, 10, obs.clone()).is_err());
        assert!(EnsemblePolicy::new(PolicyMode::McDropout, vec![m], 5, 10, obs).is_ok());
    }

    #[test]
    fn mc_dropout_without_dropout_is_deterministic() {
        let demos = toy_demos(vec![(vec![1.0, 2.0], Action::Up), (vec![3.0, 1.0], Action::Down)]);
        let (policy, _) = train_mc_dropout(&demos, 6, 2, &TrainHyper { dropout: 0.0, ..no_bootstrap() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows = policy.predict_vector(&[1.0, 2.0], &mut rng).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r == &rows[0]));

        let (noisy, _) = train_mc_dropout(&demos, 6, 2, &TrainHyper { dropout: 0.5, ..no_bootstrap() }).unwrap();
        let rows = noisy.predict_vector(&[1.0, 2.0], &mut rng).unwrap();
        assert!(rows.iter().any(|r| r != &rows[0]));
        for r in &rows {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
