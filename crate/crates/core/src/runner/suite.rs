//! Seeded multi-trial comparisons across scenarios and methods.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::episode::{jittered_start, run_episode, EpisodeConfig, FeedbackSource, NoFeedback};
use super::{run_baseline, EpisodeLog, Method, Outcome, RunError, ScriptedOracle, FROZEN_THRESHOLD};
use crate::changepoint::DetectorConfig;
use crate::feedback::{LanguageModel, LlmClient, LlmConfig, PromptTemplate};
use crate::gridworld::Grid;
use crate::par::{self, Execution};
use crate::policy::EnsemblePolicy;
use crate::scenario::{bundled_by_name, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    Scripted,
    Operator,
    Llm,
}

/// Run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Bundled scenario names or paths to scenario files.
    pub scenarios: Vec<String>,
    pub methods: Vec<Method>,
    /// Model file; required by the policy methods.
    pub policy: Option<PathBuf>,
    pub feedback: FeedbackMode,
    pub trials: usize,
    pub seed: u64,
    pub max_steps: Option<u32>,
    pub frozen_threshold: u32,
    /// Perception window of the planner baseline; defaults to the policy's.
    pub baseline_lp: Option<usize>,
    /// Pause between steps of operator sessions.
    pub step_delay_ms: u64,
    pub detector: DetectorConfig,
    pub llm: Option<LlmConfig>,
    pub prompt: PromptTemplate,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenarios: vec!["open_room".into(), "deceptive_corridor".into(), "sealed_deceptive_room".into()],
            methods: Method::ALL.to_vec(),
            policy: None,
            feedback: FeedbackMode::Scripted,
            trials: 10,
            seed: 0,
            max_steps: None,
            frozen_threshold: FROZEN_THRESHOLD,
            baseline_lp: None,
            step_delay_ms: 150,
            detector: DetectorConfig::default(),
            llm: None,
            prompt: PromptTemplate::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, RunError> {
        let c: RunConfig = toml::from_str(text).map_err(|e| RunError::BadConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Loads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, RunError> {
        let path = path.as_ref();
        let mut c = RunConfig::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &c.policy {
            if p.is_relative() {
                c.policy = Some(base.join(p));
            }
        }
        for s in &mut c.scenarios {
            if bundled_by_name(s).is_none() && Path::new(s).is_relative() {
                *s = base.join(&*s).to_string_lossy().into_owned();
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.trials == 0 {
            return Err(RunError::BadConfig("trials must be at least 1".into()));
        }
        if self.methods.is_empty() || self.scenarios.is_empty() {
            return Err(RunError::BadConfig("need at least one scenario and one method".into()));
        }
        if !self.prompt.is_valid() {
            return Err(RunError::BadConfig("prompt preamble must state all four action mappings".into()));
        }
        if self.frozen_threshold == 0 {
            return Err(RunError::BadConfig("frozen_threshold must be positive".into()));
        }
        self.detector.validate()?;
        Ok(())
    }

    pub fn needs_policy(&self) -> bool {
        self.methods.iter().any(|m| *m != Method::PerceivedPlannerBaseline)
    }

    pub fn episode_config(&self, method: Method) -> EpisodeConfig {
        EpisodeConfig {
            method,
            detector: self.detector,
            max_steps: self.max_steps,
            frozen_threshold: self.frozen_threshold,
        }
    }
}

/// Resolves bundled names first, then files.
pub fn load_scenarios(names: &[String]) -> Result<Vec<ScenarioSpec>, RunError> {
    names
        .iter()
        .map(|n| match bundled_by_name(n) {
            Some(s) => Ok(s),
            None => Ok(ScenarioSpec::load(n)?),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub method: Method,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_normalized_length: f64,
    pub collisions: usize,
    pub timeouts: usize,
    pub frozen: usize,
    pub mean_feedback: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub success_rate: f64,
    pub mean_normalized_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<MethodSummary>,
    pub rows: Vec<ScenarioRow>,
}

impl SuiteReport {
    pub fn row(&self, scenario: &str, method: Method) -> Option<&ScenarioRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scenario,method,trials,successes,success_rate,mean_normalized_length,collisions,timeouts,frozen,mean_feedback\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.scenario,
                r.method.name(),
                r.trials,
                r.successes,
                r.success_rate,
                r.mean_normalized_length,
                r.collisions,
                r.timeouts,
                r.frozen,
                r.mean_feedback
            );
        }
        out
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn summarize(logs: &[EpisodeLog], trials: usize, seed: u64) -> SuiteReport {
    let mut rows = Vec::new();
    let mut keys: Vec<(String, Method)> = Vec::new();
    for l in logs {
        let k = (l.scenario_id.clone(), l.method);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (scenario, method) in keys {
        let group: Vec<&EpisodeLog> = logs.iter().filter(|l| l.scenario_id == scenario && l.method == method).collect();
        let count = |o: Outcome| group.iter().filter(|l| l.outcome == o).count();
        let n = group.len();
        rows.push(ScenarioRow {
            scenario,
            method,
            trials: n,
            successes: count(Outcome::Success),
            success_rate: count(Outcome::Success) as f64 / n as f64,
            mean_normalized_length: mean(group.iter().map(|l| l.normalized_length)),
            collisions: count(Outcome::Collision),
            timeouts: count(Outcome::Timeout),
            frozen: count(Outcome::Frozen),
            mean_feedback: mean(group.iter().map(|l| l.feedback_events.len() as f64)),
        });
    }
    let mut methods = Vec::new();
    for m in Method::ALL {
        let group: Vec<&EpisodeLog> = logs.iter().filter(|l| l.method == m).collect();
        if group.is_empty() {
            continue;
        }
        methods.push(MethodSummary {
            method: m,
            trials: group.len(),
            success_rate: group.iter().filter(|l| l.outcome == Outcome::Success).count() as f64 / group.len() as f64,
            mean_normalized_length: mean(group.iter().map(|l| l.normalized_length)),
        });
    }
    SuiteReport { trials, seed, methods, rows }
}

/// Runs `trials` seeded episodes per (scenario, method). Logs come back in
/// scenario, method, trial order whatever the execution strategy.
pub fn run_suite(
    scenarios: &[ScenarioSpec],
    policy: Option<Arc<EnsemblePolicy>>,
    config: &RunConfig,
    exec: Execution,
) -> Result<(SuiteReport, Vec<EpisodeLog>), RunError> {
    config.validate()?;
    if config.needs_policy() && policy.is_none() {
        return Err(RunError::BadConfig("policy methods need a policy file".into()));
    }
    if config.methods.contains(&Method::ReMove) && config.feedback == FeedbackMode::Operator {
        return Err(RunError::BadConfig("operator feedback is only available through the service".into()));
    }
    let llm = match (config.feedback, &config.llm) {
        (FeedbackMode::Llm, Some(c)) => Some(LlmClient::new(c.clone())),
        (FeedbackMode::Llm, None) => return Err(RunError::BadConfig("feedback = \"llm\" needs an [llm] block".into())),
        _ => None,
    };
    let grids = scenarios.iter().map(Grid::build).collect::<Result<Vec<_>, _>>()?;
    let lp = config.baseline_lp.or(policy.as_ref().map(|p| p.obs_params().lp)).unwrap_or(5);

    let mut jobs = Vec::new();
    for (si, spec) in scenarios.iter().enumerate() {
        for &method in &config.methods {
            for trial in 0..config.trials {
                jobs.push((si, spec.id().to_string(), method, par::derive_seed(config.seed, trial as u64)));
            }
        }
    }
    let results = par::map_slice(exec, &jobs, |(si, id, method, seed)| -> Result<EpisodeLog, RunError> {
        let base = &grids[*si];
        let grid = base.with_endpoints(jittered_start(base, *seed), base.goal())?;
        let ep_config = config.episode_config(*method);
        match method {
            Method::PerceivedPlannerBaseline => Ok(run_baseline(&grid, &ep_config, lp, id, *seed)),
            _ => {
                let policy = policy.clone().expect("checked above");
                let mut oracle = ScriptedOracle::default();
                let mut none = NoFeedback;
                let source: &mut dyn FeedbackSource = if *method == Method::ReMove { &mut oracle } else { &mut none };
                let model = llm.as_ref().map(|c| c as &dyn LanguageModel);
                let (log, _) = run_episode(grid, policy, ep_config, source, &config.prompt, model, id, *seed)?;
                Ok(log)
            }
        }
    });
    let logs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok((summarize(&logs, config.trials, config.seed), logs))
}

/// Loads scenarios and the policy named in `config`, then runs the suite.
pub fn run_suite_with(config: &RunConfig, exec: Execution) -> Result<(SuiteReport, Vec<EpisodeLog>), RunError> {
    let scenarios = load_scenarios(&config.scenarios)?;
    let policy = match &config.policy {
        Some(p) if config.needs_policy() => Some(Arc::new(EnsemblePolicy::load(p)?)),
        _ => None,
    };
    run_suite(&scenarios, policy, config, exec)
}

/// Fixed-width text table of the per-scenario rows.
pub fn format_table(report: &SuiteReport) -> String {
    let mut out = format!("trials per cell: {}, seed: {}\n", report.trials, report.seed);
    let _ = writeln!(out, "{:<24} {:<20} {:>6} {:>8} {:>6} {:>6} {:>6} {:>6}", "scenario", "method", "SR", "normLen", "coll", "tout", "frozen", "fb");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<24} {:<20} {:>6.2} {:>8.3} {:>6} {:>6} {:>6} {:>6.2}",
            r.scenario,
            r.method.name(),
            r.success_rate,
            r.mean_normalized_length,
            r.collisions,
            r.timeouts,
            r.frozen,
            r.mean_feedback
        );
    }
    for m in &report.methods {
        let _ = writeln!(out, "overall {:<20} SR {:.2} normLen {:.3}", m.method.name(), m.success_rate, m.mean_normalized_length);
    }
    out
}

/// Writes `episodes.jsonl`, `suite.csv`, `table.txt` and `report.json`.
pub fn write_outputs(dir: impl AsRef<Path>, report: &SuiteReport, logs: &[EpisodeLog]) -> Result<(), RunError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut jsonl = String::new();
    for l in logs {
        jsonl.push_str(&l.to_json_line());
        jsonl.push('\n');
    }
    fs::write(dir.join("episodes.jsonl"), jsonl)?;
    fs::write(dir.join("suite.csv"), report.to_csv())?;
    fs::write(dir.join("table.txt"), format_table(report))?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report).expect("report serialises"))?;
    Ok(())
}
