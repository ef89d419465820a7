//! Online Bayesian changepoint detection over the epistemic-uncertainty
//! stream.
//!
//! Each segment is modelled as Gaussian with unknown mean and precision
//! under a Normal-Gamma prior, so the posterior predictive of every run
//! length is a Student-t. After each observation the run-length posterior
//! is updated with a constant hazard; the detector fires when most of the
//! posterior mass sits on short runs (a recent change) and the new segment's
//! posterior mean is above the previous one. Drops in uncertainty never
//! fire.
//!
//! Run lengths beyond `r_max` are folded into the last bucket, which then
//! tracks the most recent `r_max + 1` observations, so no probability mass
//! is ever discarded.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChangepointError {
    #[error("bad detector parameter: {0}")]
    BadParam(String),
    #[error("observation {0} is not finite")]
    NonFinite(f64),
}

/// Normal-Gamma prior `(mu0, kappa0, alpha0, beta0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGammaPrior {
    pub mu0: f64,
    pub kappa0: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

impl Default for NormalGammaPrior {
    fn default() -> Self {
        NormalGammaPrior { mu0: 0.05, kappa0: 1.0, alpha0: 2.0, beta0: 0.001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub hazard: f64,
    /// Posterior mass on run lengths `<= r0` needed to fire.
    pub tau: f64,
    pub r0: usize,
    #[serde(rename = "Rmax", alias = "r_max")]
    pub r_max: usize,
    #[serde(with = "prior_tuple")]
    pub prior: NormalGammaPrior,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { hazard: 1.0 / 50.0, tau: 0.9, r0: 2, r_max: 500, prior: NormalGammaPrior::default() }
    }
}

mod prior_tuple {
    use super::NormalGammaPrior;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &NormalGammaPrior, s: S) -> Result<S::Ok, S::Error> {
        [p.mu0, p.kappa0, p.alpha0, p.beta0].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NormalGammaPrior, D::Error> {
        let [mu0, kappa0, alpha0, beta0] = <[f64; 4]>::deserialize(d)?;
        Ok(NormalGammaPrior { mu0, kappa0, alpha0, beta0 })
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), ChangepointError> {
        let bad = |m: String| Err(ChangepointError::BadParam(m));
        if !(self.hazard > 0.0 && self.hazard < 1.0) {
            return bad(format!("hazard must lie in (0,1), got {}", self.hazard));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0,1], got {}", self.tau));
        }
        if self.r_max < 10 {
            return bad(format!("Rmax must be at least 10, got {}", self.r_max));
        }
        if self.r0 >= self.r_max {
            return bad(format!("r0 = {} must be below Rmax = {}", self.r0, self.r_max));
        }
        let p = self.prior;
        if !(p.mu0.is_finite() && p.kappa0 > 0.0 && p.alpha0 > 0.0 && p.beta0 > 0.0) {
            return bad(format!("prior {p:?} must have finite mu0 and positive kappa0, alpha0, beta0"));
        }
        Ok(())
    }
}

/// Welford statistics of one run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct RunStats {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunStats {
    fn single(x: f64) -> Self {
        RunStats { n: 1, mean: x, m2: 0.0 }
    }

    fn push(self, x: f64) -> Self {
        let n = self.n + 1;
        let delta = x - self.mean;
        let mean = self.mean + delta / n as f64;
        RunStats { n, mean, m2: self.m2 + delta * (x - mean) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerDecision {
    pub fired: bool,
    /// Observations consumed since the last reset, including this one.
    pub t: usize,
    pub map_run_length: usize,
    /// Posterior mass on run lengths `<= r0`.
    pub short_run_mass: f64,
    pub posterior_mean_before: f64,
    pub posterior_mean_after: f64,
}

/// Run-length posterior plus the data needed to update it.
#[derive(Debug, Clone)]
pub struct RunLengthPosterior {
    config: DetectorConfig,
    weights: Vec<f64>,
    stats: Vec<RunStats>,
    /// Prefix sums of observations since the last reset.
    prefix: Vec<f64>,
    /// `ln Γ(α_n + ½) − ln Γ(α_n)` for `n = 0..=r_max + 1`.
    lgamma_ratio: Vec<f64>,
}

impl RunLengthPosterior {
    pub fn new(config: DetectorConfig) -> Result<Self, ChangepointError> {
        config.validate()?;
        let a0 = config.prior.alpha0;
        let lgamma_ratio = (0..=config.r_max + 1)
            .map(|n| {
                let a = a0 + n as f64 / 2.0;
                ln_gamma(a + 0.5) - ln_gamma(a)
            })
            .collect();
        Ok(RunLengthPosterior {
            config,
            weights: vec![1.0],
            stats: vec![RunStats::default()],
            prefix: vec![0.0],
            lgamma_ratio,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Probability of each run length `0..`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Observations consumed since the last reset.
    pub fn observations(&self) -> usize {
        self.prefix.len() - 1
    }

    /// Back to a single zero-length run under the prior.
    pub fn reset(&mut self) {
        self.weights = vec![1.0];
        self.stats = vec![RunStats::default()];
        self.prefix = vec![0.0];
    }

    fn posterior_mean(&self, s: &RunStats) -> f64 {
        let p = &self.config.prior;
        (p.kappa0 * p.mu0 + s.n as f64 * s.mean) / (p.kappa0 + s.n as f64)
    }

    fn log_predictive(&self, s: &RunStats, x: f64) -> f64 {
        let p = &self.config.prior;
        let n = s.n as f64;
        let kappa = p.kappa0 + n;
        let mu = (p.kappa0 * p.mu0 + n * s.mean) / kappa;
        let alpha = p.alpha0 + n / 2.0;
        let beta = p.beta0 + 0.5 * s.m2 + p.kappa0 * n * (s.mean - p.mu0).powi(2) / (2.0 * kappa);
        let nu = 2.0 * alpha;
        let scale2 = beta * (kappa + 1.0) / (alpha * kappa);
        let z = (x - mu).powi(2) / (nu * scale2);
        let ratio = self.lgamma_ratio[s.n.min(self.lgamma_ratio.len() - 1)];
        ratio - 0.5 * (nu * std::f64::consts::PI * scale2).ln() - (nu + 1.0) / 2.0 * z.ln_1p()
    }

    /// Consumes one observation and reports whether the detector fires.
    pub fn update(&mut self, x: f64) -> Result<TriggerDecision, ChangepointError> {
        if !x.is_finite() {
            return Err(ChangepointError::NonFinite(x));
        }
        let h = self.config.hazard;
        let prior_lp = self.log_predictive(&RunStats::default(), x);
        let mut log_w = Vec::with_capacity(self.weights.len() + 1);
        log_w.push(h.ln() + prior_lp);
        for (w, s) in self.weights.iter().zip(&self.stats) {
            if *w > 0.0 {
                log_w.push(w.ln() + (1.0 - h).ln() + self.log_predictive(s, x));
            } else {
                log_w.push(f64::NEG_INFINITY);
            }
        }
        let mut stats = Vec::with_capacity(self.stats.len() + 1);
        stats.push(RunStats::single(x));
        stats.extend(self.stats.iter().map(|s| s.push(x)));

        // Fold the overflow bucket into the longest tracked run.
        let cap = self.config.r_max + 1;
        if log_w.len() > cap {
            let extra = log_w.pop().unwrap_or(f64::NEG_INFINITY);
            stats.pop();
            let last = log_w.last_mut().expect("cap >= 1");
            *last = log_add(*last, extra);
        }

        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        self.weights = weights;
        self.stats = stats;
        self.prefix.push(self.prefix.last().copied().unwrap_or(0.0) + x);

        Ok(self.decide())
    }

    fn decide(&self) -> TriggerDecision {
        let r0 = self.config.r0;
        let t = self.observations();
        let short = &self.weights[..self.weights.len().min(r0 + 1)];
        let short_run_mass: f64 = short.iter().sum();
        let map_run_length = argmax(&self.weights);
        let short_map = argmax(short);

        // Segment split implied by the most probable recent change. A run
        // that started with a change holds `r + 1` observations; the run
        // begun at reset holds all of them.
        let after_len = self.stats[short_map].n.min(t);
        let before_len = t.saturating_sub(after_len);
        let p = &self.config.prior;
        let shrunk = |sum: f64, n: usize| (p.kappa0 * p.mu0 + sum) / (p.kappa0 + n as f64);
        let total = self.prefix[t];
        let split = self.prefix[before_len];
        let posterior_mean_after = self.posterior_mean(&self.stats[short_map]);
        let posterior_mean_before = shrunk(split, before_len);
        debug_assert!((posterior_mean_after - shrunk(total - split, after_len)).abs() < 1e-6);

        let warmed_up = t >= r0 + 2;
        let fired = warmed_up
            && short_run_mass >= self.config.tau
            && posterior_mean_after > posterior_mean_before;
        TriggerDecision {
            fired,
            t,
            map_run_length,
            short_run_mass,
            posterior_mean_before,
            posterior_mean_after,
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn init_and_params() {
        let d = RunLengthPosterior::new(DetectorConfig::default()).unwrap();
        assert_eq!(d.weights(), &[1.0]);
        let with = |hazard| RunLengthPosterior::new(DetectorConfig { hazard, ..Default::default() });
        assert!(matches!(with(0.0), Err(ChangepointError::BadParam(_))));
        assert!(with(0.5).is_ok());
        let small = DetectorConfig { r_max: 5, ..Default::default() };
        assert!(RunLengthPosterior::new(small).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let mut d = RunLengthPosterior::new(DetectorConfig::default()).unwrap();
        assert!(matches!(d.update(f64::NAN), Err(ChangepointError::NonFinite(_))));
        assert_eq!(d.update(f64::INFINITY), Err(ChangepointError::NonFinite(f64::INFINITY)));
        assert_eq!(d.observations(), 0);
    }

    #[test]
    fn constant_series_never_fires() {
        let mut d = RunLengthPosterior::new(DetectorConfig::default()).unwrap();
        for _ in 0..500 {
            assert!(!d.update(0.1).unwrap().fired);
        }
    }

    #[test]
    fn weights_stay_normalised_and_bounded() {
        let cfg = DetectorConfig { r_max: 50, ..Default::default() };
        let mut d = RunLengthPosterior::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.02, 0.005).unwrap();
        for _ in 0..2000 {
            d.update(noise.sample(&mut rng)).unwrap();
            let sum: f64 = d.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(d.weights().len() <= 51);
        }
    }

    #[test]
    fn reset_is_idempotent_and_blocks_immediate_refire() {
        let mut d = RunLengthPosterior::new(DetectorConfig::default()).unwrap();
        for _ in 0..20 {
            d.update(0.02).unwrap();
        }
        assert!(d.update(0.6).unwrap().fired);
        d.reset();
        let snapshot = d.weights().to_vec();
        d.reset();
        assert_eq!(d.weights(), snapshot.as_slice());
        assert_eq!(d.weights(), &[1.0]);
        let r0 = d.config().r0;
        for i in 0..=r0 {
            assert!(!d.update(0.6).unwrap().fired, "fired {i} observations after reset");
        }
    }

    #[test]
    fn drop_does_not_fire() {
        let mut d = RunLengthPosterior::new(DetectorConfig::default()).unwrap();
        for _ in 0..20 {
            d.update(0.5).unwrap();
        }
        for _ in 0..10 {
            assert!(!d.update(0.01).unwrap().fired);
        }
    }
}
