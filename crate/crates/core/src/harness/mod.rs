//! Experiment harness: runs seeded trials of one or more learners on an
//! instance, aggregates them and writes CSV tables.
//!
//! Output directory layout:
//!
//! | file | content |
//! |------|---------|
//! | `results.csv` | one row per (algorithm, trial, episode) |
//! | `summary.csv` | per (algorithm, episode) cross-trial mean and standard error |
//! | `final_window.csv` | per algorithm statistics over the last `final_window` episodes |
//! | `config.echo` | the fully resolved config; running it reproduces the results |
//! | `MANIFEST` | completion status and the SHA-256 of every file written |

mod diag;

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{ActionMode, Algorithm, EpisodeObserver, EpisodeRecord, EpsilonSchedule, LearnerConfig, Trainer};
use crate::error::{ErdError, Result};
use crate::instance::{self, InstanceConfig, SchematicParams};
use crate::mdp::ReturnScale;
use crate::rng::{derive_seed, Stream};

pub use diag::{parse_line, replay, replay_file, DiagEvent, DiagnosticsWriter, ReplayReport, DIAG_PREFIX};

pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_TRAINING_TIMESTEPS: u64 = 20_000;
pub const DEFAULT_FINAL_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    /// One of the named instances (`one-button`, `two-button`).
    Canonical(String),
    Generate { params: SchematicParams, seed: u64 },
    /// Instance file, relative paths resolved against the config's directory.
    Path(PathBuf),
    Inline(Box<InstanceConfig>),
}

impl InstanceSource {
    pub fn resolve(&self, base_dir: &Path) -> Result<InstanceConfig> {
        let instance = match self {
            InstanceSource::Canonical(name) => instance::canonical(name)
                .ok_or_else(|| ErdError::config("instance.canonical", format!("unknown instance `{name}`")))?,
            InstanceSource::Generate { params, seed } => instance::generate(params, *seed)?,
            InstanceSource::Path(path) => {
                let path = base_dir.join(path);
                let text = fs::read_to_string(&path)
                    .map_err(|e| ErdError::Io(format!("{}: {e}", path.display())))?;
                instance::deserialize(&text)?
            }
            InstanceSource::Inline(inst) => (**inst).clone(),
        };
        instance.check_structure()?;
        Ok(instance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Trials in parallel, no per-step output.
    Release,
    /// Trials in sequence with per-step diagnostics.
    Debug,
}

/// Learner hyperparameters; the budget and seed come from the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub algorithm: Algorithm,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub epsilon: EpsilonSchedule,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_gamma() -> f64 {
    0.99
}

impl LearnerSpec {
    pub fn new(algorithm: Algorithm) -> Self {
        LearnerSpec {
            algorithm,
            alpha: default_alpha(),
            gamma: default_gamma(),
            epsilon: EpsilonSchedule::default(),
        }
    }
}

fn default_learners() -> Vec<LearnerSpec> {
    [Algorithm::QLearning, Algorithm::Sarsa, Algorithm::Random]
        .into_iter()
        .map(LearnerSpec::new)
        .collect()
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_timesteps() -> u64 {
    DEFAULT_TRAINING_TIMESTEPS
}

fn default_action_mode() -> ActionMode {
    ActionMode::Primitives
}

fn default_mode() -> RunMode {
    RunMode::Release
}

fn default_window() -> usize {
    DEFAULT_FINAL_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    #[serde(default = "default_learners")]
    pub learners: Vec<LearnerSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_timesteps")]
    pub training_timesteps: u64,
    #[serde(default = "default_action_mode")]
    pub action_mode: ActionMode,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_window")]
    pub final_window: usize,
}

impl ExperimentConfig {
    pub fn new(instance: InstanceSource) -> Self {
        ExperimentConfig {
            instance,
            learners: default_learners(),
            trials: DEFAULT_TRIALS,
            training_timesteps: DEFAULT_TRAINING_TIMESTEPS,
            action_mode: ActionMode::Primitives,
            mode: RunMode::Release,
            output_dir: None,
            master_seed: 0,
            final_window: DEFAULT_FINAL_WINDOW,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ErdError::from_json(&e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ErdError::Io(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn check(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(ErdError::config("trials", "must be at least 1"));
        }
        if self.learners.is_empty() {
            return Err(ErdError::config("learners", "at least one learner is required"));
        }
        if self.training_timesteps < 1 {
            return Err(ErdError::config("training_timesteps", "must be at least 1"));
        }
        if self.final_window < 1 {
            return Err(ErdError::config("final_window", "must be at least 1"));
        }
        for l in &self.learners {
            self.learner_config(l, 0).check()?;
        }
        Ok(())
    }

    /// Seed of trial `trial`, shared by every learner.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.master_seed, Stream::Trial, trial as u64)
    }

    pub fn learner_config(&self, spec: &LearnerSpec, trial: usize) -> LearnerConfig {
        LearnerConfig {
            algorithm: spec.algorithm,
            alpha: spec.alpha,
            gamma: spec.gamma,
            epsilon: spec.epsilon,
            training_timesteps: self.training_timesteps,
            seed: self.trial_seed(trial),
        }
    }

    /// Same experiment with the instance inlined, for `config.echo`.
    pub fn resolved(&self, instance: &InstanceConfig) -> ExperimentConfig {
        ExperimentConfig {
            instance: InstanceSource::Inline(Box::new(instance.clone())),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub trial: usize,
    pub episode: usize,
    pub start_timestep: u64,
    pub steps: u32,
    pub decisions: usize,
    pub cumulative_reward: f64,
    pub normalized_return: f64,
    pub exited: bool,
    pub optimal: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub episode: usize,
    pub trials: usize,
    pub mean_normalized: f64,
    pub stderr_normalized: f64,
    pub mean_reward: f64,
    pub stderr_reward: f64,
    pub exit_rate: f64,
    pub mean_start_timestep: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub algorithm: String,
    pub trials: usize,
    /// Complete episodes per trial in the window (at most `final_window`).
    pub episodes: usize,
    pub exit_rate: f64,
    pub optimal_rate: f64,
    pub mean_normalized: f64,
    pub stderr_normalized: f64,
}

/// Per (algorithm, trial) episode records in config order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecords {
    pub algorithm: Algorithm,
    pub trial: usize,
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub instance_id: String,
    pub trials: Vec<TrialRecords>,
    pub summary: Vec<SummaryRow>,
    pub final_window: Vec<WindowRow>,
}

impl ResultTable {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.trials
            .iter()
            .flat_map(|t| {
                t.episodes.iter().map(move |r| ResultRow {
                    algorithm: t.algorithm.label().to_owned(),
                    trial: t.trial,
                    episode: r.episode,
                    start_timestep: r.start_timestep,
                    steps: r.steps,
                    decisions: r.actions.len(),
                    cumulative_reward: r.cumulative_reward,
                    normalized_return: r.normalized_return,
                    exited: r.exited,
                    optimal: r.optimal,
                    truncated: r.truncated,
                })
            })
            .collect()
    }

    pub fn window(&self, algorithm: Algorithm) -> Option<&WindowRow> {
        self.final_window.iter().find(|w| w.algorithm == algorithm.label())
    }
}

/// Mean and standard error per index over series aligned by index,
/// truncated to the shortest series. Standard error uses the sample standard
/// deviation and is 0 for a single series.
pub fn aggregate(series: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    if series.is_empty() {
        return Err(ErdError::usage("aggregate needs at least one series"));
    }
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    let n = series.len() as f64;
    Ok((0..len)
        .map(|i| {
            let mean = series.iter().map(|s| s[i]).sum::<f64>() / n;
            let stderr = if series.len() < 2 {
                0.0
            } else {
                let var = series.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            };
            (mean, stderr)
        })
        .collect())
}

fn complete(records: &[EpisodeRecord]) -> &[EpisodeRecord] {
    match records.last() {
        Some(last) if last.truncated => &records[..records.len() - 1],
        _ => records,
    }
}

fn summarize(algorithm: Algorithm, trials: &[&TrialRecords]) -> Result<Vec<SummaryRow>> {
    let pick = |f: fn(&EpisodeRecord) -> f64| -> Vec<Vec<f64>> {
        trials
            .iter()
            .map(|t| complete(&t.episodes).iter().map(f).collect())
            .collect()
    };
    let normalized = aggregate(&pick(|r| r.normalized_return))?;
    let reward = aggregate(&pick(|r| r.cumulative_reward))?;
    let exits = aggregate(&pick(|r| if r.exited { 1.0 } else { 0.0 }))?;
    let starts = aggregate(&pick(|r| r.start_timestep as f64))?;
    Ok((0..normalized.len())
        .map(|i| SummaryRow {
            algorithm: algorithm.label().to_owned(),
            episode: i,
            trials: trials.len(),
            mean_normalized: normalized[i].0,
            stderr_normalized: normalized[i].1,
            mean_reward: reward[i].0,
            stderr_reward: reward[i].1,
            exit_rate: exits[i].0,
            mean_start_timestep: starts[i].0,
        })
        .collect())
}

/// Statistics over the last `window` complete episodes of every trial.
pub fn final_window(algorithm: Algorithm, trials: &[&TrialRecords], window: usize) -> WindowRow {
    let mut exits = 0usize;
    let mut optimal = 0usize;
    let mut count = 0usize;
    let mut per_trial = Vec::new();
    let mut episodes = usize::MAX;
    for t in trials {
        let done = complete(&t.episodes);
        let w = &done[done.len().saturating_sub(window)..];
        episodes = episodes.min(w.len());
        exits += w.iter().filter(|r| r.exited).count();
        optimal += w.iter().filter(|r| r.optimal).count();
        count += w.len();
        let mean = if w.is_empty() {
            0.0
        } else {
            w.iter().map(|r| r.normalized_return).sum::<f64>() / w.len() as f64
        };
        per_trial.push(vec![mean]);
    }
    let (mean, stderr) = aggregate(&per_trial).map(|v| v[0]).unwrap_or((0.0, 0.0));
    let rate = |k: usize| if count == 0 { 0.0 } else { k as f64 / count as f64 };
    WindowRow {
        algorithm: algorithm.label().to_owned(),
        trials: trials.len(),
        episodes: if trials.is_empty() { 0 } else { episodes },
        exit_rate: rate(exits),
        optimal_rate: rate(optimal),
        mean_normalized: mean,
        stderr_normalized: stderr,
    }
}

fn tabulate(instance_id: String, trials: Vec<TrialRecords>, config: &ExperimentConfig) -> Result<ResultTable> {
    let mut summary = Vec::new();
    let mut window = Vec::new();
    for spec in &config.learners {
        let mine: Vec<&TrialRecords> = trials.iter().filter(|t| t.algorithm == spec.algorithm).collect();
        if mine.is_empty() {
            continue;
        }
        summary.extend(summarize(spec.algorithm, &mine)?);
        window.push(final_window(spec.algorithm, &mine, config.final_window));
    }
    Ok(ResultTable {
        instance_id,
        trials,
        summary,
        final_window: window,
    })
}

struct Task {
    learner: usize,
    trial: usize,
}

fn run_task<O: EpisodeObserver + ?Sized>(
    config: &ExperimentConfig,
    instance: &InstanceConfig,
    scale: ReturnScale,
    task: &Task,
    observer: &mut O,
) -> Result<TrialRecords> {
    let spec = &config.learners[task.learner];
    let learner = config.learner_config(spec, task.trial);
    let (episodes, _) = Trainer::new(instance, &learner, config.action_mode, scale)?.run(observer)?;
    Ok(TrialRecords {
        algorithm: spec.algorithm,
        trial: task.trial,
        episodes,
    })
}

/// Run every (learner, trial) pair. `base_dir` resolves a relative instance
/// path. Release mode runs trials on the rayon pool; debug mode runs them in
/// order and writes diagnostics to `diagnostics`. Results are identical in
/// both modes.
pub fn run(config: &ExperimentConfig, base_dir: &Path, diagnostics: Option<&mut dyn Write>) -> Result<ResultTable> {
    let (_, table, failure) = run_inner(config, base_dir, diagnostics)?;
    match failure {
        None => Ok(table),
        Some(e) => Err(e),
    }
}

/// Resolved instance, the table of completed trials and the first trial error.
fn run_inner(
    config: &ExperimentConfig,
    base_dir: &Path,
    diagnostics: Option<&mut dyn Write>,
) -> Result<(InstanceConfig, ResultTable, Option<ErdError>)> {
    config.check()?;
    let instance = config.instance.resolve(base_dir)?;
    let scale = ReturnScale::for_instance(&instance)?;
    let tasks: Vec<Task> = (0..config.learners.len())
        .flat_map(|learner| (0..config.trials).map(move |trial| Task { learner, trial }))
        .collect();

    let outcomes: Vec<Result<TrialRecords>> = match (config.mode, diagnostics) {
        (RunMode::Debug, Some(sink)) => {
            let mut writer = DiagnosticsWriter::new(sink, &instance, config.action_mode);
            tasks
                .iter()
                .map(|task| {
                    writer.set_context(config.learners[task.learner].algorithm, task.trial);
                    let out = run_task(config, &instance, scale, task, &mut writer);
                    writer.flush()?;
                    out
                })
                .collect()
        }
        (RunMode::Debug, None) => tasks
            .iter()
            .map(|task| run_task(config, &instance, scale, task, &mut ()))
            .collect(),
        (RunMode::Release, _) => tasks
            .par_iter()
            .map(|task| run_task(config, &instance, scale, task, &mut ()))
            .collect(),
    };

    let mut trials = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    let mut first = None;
    for outcome in outcomes {
        match outcome {
            Ok(t) => trials.push(t),
            Err(e) => {
                failed += 1;
                first.get_or_insert(e);
            }
        }
    }
    let table = tabulate(instance.id(), trials, config)?;
    let failure = first.map(|e| {
        ErdError::Validation(format!("{failed} of {} trials failed; first error: {e}", tasks.len()))
    });
    Ok((instance, table, failure))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| ErdError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| ErdError::Io(e.to_string()))
}

/// Write the result files into `dir`. `failure` marks the run incomplete in
/// the MANIFEST.
pub fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    instance: &InstanceConfig,
    table: &ResultTable,
    failure: Option<&str>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let files: Vec<(&str, Vec<u8>)> = vec![
        ("results.csv", csv_bytes(&table.rows())?),
        ("summary.csv", csv_bytes(&table.summary)?),
        ("final_window.csv", csv_bytes(&table.final_window)?),
        ("config.echo", config.resolved(instance).to_json().into_bytes()),
    ];
    let mut manifest = String::new();
    let expected = config.learners.len() * config.trials;
    let _ = writeln!(
        manifest,
        "status: {}",
        if failure.is_none() { "complete" } else { "incomplete" }
    );
    let _ = writeln!(manifest, "instance: {}", table.instance_id);
    let _ = writeln!(manifest, "trials_completed: {}/{}", table.trials.len(), expected);
    if let Some(msg) = failure {
        let _ = writeln!(manifest, "error: {}", msg.replace('\n', " "));
    }
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
        let digest = Sha256::digest(bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(manifest, "sha256 {hex}  {name}");
    }
    fs::write(dir.join("MANIFEST"), manifest)?;
    Ok(())
}

/// Run and write the files to `output_dir` (or the config's `output_dir`,
/// relative to `base_dir`). When trials fail the completed ones are still
/// written and the MANIFEST says `incomplete`.
pub fn run_to_dir(
    config: &ExperimentConfig,
    base_dir: &Path,
    output_dir: Option<&Path>,
    diagnostics: Option<&mut dyn Write>,
) -> Result<ResultTable> {
    let (instance, table, failure) = run_inner(config, base_dir, diagnostics)?;
    let dir = output_dir
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.as_ref().map(|d| base_dir.join(d)));
    if let Some(dir) = dir {
        let msg = failure.as_ref().map(ToString::to_string);
        write_outputs(&dir, config, &instance, &table, msg.as_deref())?;
    }
    match failure {
        None => Ok(table),
        Some(e) => Err(e),
    }
}
