//! Debug-mode diagnostics and their replay.
//!
//! Every line is `erd-diag<TAB><kind><TAB><json>` where kind is one of
//! `episode-begin`, `step` or `episode-end`. An episode produces one begin
//! line, one step line per agent decision and one end line. The begin line
//! embeds the instance, the episode seed and the start state, which is all
//! [`replay`] needs to re-simulate the episode.

use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agents::{ActionMode, Algorithm, EpisodeObserver, EpisodeRecord};
use crate::env::Env;
use crate::error::{ErdError, Result};
use crate::instance::InstanceConfig;
use crate::mdp::{Action, EnvState, Transition};

pub const DIAG_PREFIX: &str = "erd-diag";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBegin {
    pub algorithm: String,
    pub trial: usize,
    pub episode: usize,
    pub episode_seed: u64,
    pub meta_enabled: bool,
    pub instance: InstanceConfig,
    pub state: EnvState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLine {
    pub episode: usize,
    pub t: usize,
    pub action: usize,
    pub name: String,
    pub reward: f64,
    pub primitive_steps: u32,
    pub touched: Vec<usize>,
    pub touched_eligible: Vec<bool>,
    pub pressed: Vec<usize>,
    pub done: bool,
    pub state: EnvState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEnd {
    pub episode: usize,
    pub steps: u32,
    pub cumulative_reward: f64,
    pub exited: bool,
    pub normalized_return: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiagEvent {
    EpisodeBegin(Box<EpisodeBegin>),
    Step(Box<StepLine>),
    EpisodeEnd(EpisodeEnd),
}

/// `None` for lines that are not diagnostics.
pub fn parse_line(line: &str) -> Option<Result<DiagEvent>> {
    let mut parts = line.trim_end_matches(['\r', '\n']).splitn(3, '\t');
    if parts.next() != Some(DIAG_PREFIX) {
        return None;
    }
    let (Some(kind), Some(body)) = (parts.next(), parts.next()) else {
        return Some(Err(ErdError::usage(format!("truncated diagnostics line: {line}"))));
    };
    let parsed = match kind {
        "episode-begin" => serde_json::from_str(body).map(|b| DiagEvent::EpisodeBegin(Box::new(b))),
        "step" => serde_json::from_str(body).map(|s| DiagEvent::Step(Box::new(s))),
        "episode-end" => serde_json::from_str(body).map(DiagEvent::EpisodeEnd),
        other => return Some(Err(ErdError::usage(format!("unknown diagnostics kind `{other}`")))),
    };
    Some(parsed.map_err(|e| ErdError::from_json(&e)))
}

/// Episode observer that writes diagnostics lines.
pub struct DiagnosticsWriter<'a> {
    sink: &'a mut dyn Write,
    instance: serde_json::Value,
    env: Env,
    algorithm: Algorithm,
    trial: usize,
    episode: usize,
    t: usize,
    error: Option<io::Error>,
}

impl<'a> DiagnosticsWriter<'a> {
    pub fn new(sink: &'a mut dyn Write, instance: &InstanceConfig, mode: ActionMode) -> Self {
        DiagnosticsWriter {
            sink,
            instance: serde_json::to_value(instance).expect("instance serializes"),
            env: Env::new(instance.clone(), mode.meta_enabled()).expect("instance checked by caller"),
            algorithm: Algorithm::Random,
            trial: 0,
            episode: 0,
            t: 0,
            error: None,
        }
    }

    pub fn set_context(&mut self, algorithm: Algorithm, trial: usize) {
        self.algorithm = algorithm;
        self.trial = trial;
    }

    /// Flush the sink and report the first write error, if any.
    pub fn flush(&mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        self.sink.flush()?;
        Ok(())
    }

    fn emit(&mut self, kind: &str, body: serde_json::Value) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = writeln!(self.sink, "{DIAG_PREFIX}\t{kind}\t{body}") {
            self.error = Some(e);
        }
    }
}

impl EpisodeObserver for DiagnosticsWriter<'_> {
    fn begin_episode(&mut self, episode: usize, episode_seed: u64, state: &EnvState) {
        self.episode = episode;
        self.t = 0;
        let body = json!({
            "algorithm": self.algorithm.label(),
            "trial": self.trial,
            "episode": episode,
            "episode_seed": episode_seed,
            "meta_enabled": self.env.action_space().meta_enabled,
            "instance": self.instance,
            "state": state,
        });
        self.emit("episode-begin", body);
    }

    fn on_step(&mut self, action_index: usize, _action: Action, tr: &Transition) {
        let body = json!({
            "episode": self.episode,
            "t": self.t,
            "action": action_index,
            "name": self.env.action_space().name(action_index),
            "reward": tr.reward,
            "primitive_steps": tr.info.primitive_steps,
            "touched": tr.info.touched,
            "touched_eligible": tr.info.touched_eligible,
            "pressed": tr.info.pressed,
            "done": tr.done,
            "state": tr.next,
        });
        self.t += 1;
        self.emit("step", body);
    }

    fn end_episode(&mut self, r: &EpisodeRecord) {
        let body = json!({
            "episode": r.episode,
            "steps": r.steps,
            "cumulative_reward": r.cumulative_reward,
            "exited": r.exited,
            "normalized_return": r.normalized_return,
            "truncated": r.truncated,
        });
        self.emit("episode-end", body);
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayReport {
    pub episodes: usize,
    pub steps: usize,
    pub mismatches: Vec<String>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Re-simulate every logged episode and compare rewards and states with the
/// log. Non-diagnostics lines are skipped.
pub fn replay<R: BufRead>(reader: R) -> Result<ReplayReport> {
    let mut report = ReplayReport::default();
    let mut env: Option<Env> = None;
    let mut total = 0.0;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let Some(event) = parse_line(&line) else { continue };
        let lineno = n + 1;
        match event? {
            DiagEvent::EpisodeBegin(b) => {
                let mut e = Env::new(b.instance, b.meta_enabled)?;
                e.reset(b.episode_seed);
                if *e.state() != b.state {
                    report.mismatches.push(format!("line {lineno}: start state differs"));
                }
                env = Some(e);
                total = 0.0;
                report.episodes += 1;
            }
            DiagEvent::Step(s) => {
                let e = env
                    .as_mut()
                    .ok_or_else(|| ErdError::usage(format!("line {lineno}: step before episode-begin")))?;
                let tr = e.step_index(s.action)?;
                total += tr.reward;
                report.steps += 1;
                if tr.reward != s.reward {
                    report
                        .mismatches
                        .push(format!("line {lineno}: reward {} replayed as {}", s.reward, tr.reward));
                }
                if tr.next != s.state || tr.done != s.done {
                    report.mismatches.push(format!("line {lineno}: next state differs"));
                }
            }
            DiagEvent::EpisodeEnd(end) => {
                if total != end.cumulative_reward {
                    report.mismatches.push(format!(
                        "line {lineno}: cumulative reward {} replayed as {total}",
                        end.cumulative_reward
                    ));
                }
                env = None;
            }
        }
    }
    Ok(report)
}

pub fn replay_file(path: &Path) -> Result<ReplayReport> {
    let file = std::fs::File::open(path).map_err(|e| ErdError::Io(format!("{}: {e}", path.display())))?;
    replay(io::BufReader::new(file))
}
