//! Tabular learning baselines over a discretized state.
//!
//! Q-learning and SARSA with epsilon-greedy exploration, plus a uniform random
//! policy. Training runs episodes back to back until a budget of primitive
//! timesteps is spent; a meta-action counts as all of its primitives.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Env;
use crate::error::{ErdError, Result};
use crate::instance::InstanceConfig;
use crate::mdp::{Action, EnvState, ReturnScale, Transition, JOINT_LIMIT, TURN_DEGREES};
use crate::rng::{derive_seed, stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    QLearning,
    Sarsa,
    Random,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::QLearning => "q-learning",
            Algorithm::Sarsa => "sarsa",
            Algorithm::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionMode {
    #[serde(rename = "primitives")]
    Primitives,
    #[serde(rename = "with-meta")]
    WithMeta,
}

impl ActionMode {
    pub fn meta_enabled(&self) -> bool {
        matches!(self, ActionMode::WithMeta)
    }
}

/// Linear decay from `initial` to `final` over `decay_steps` primitive
/// timesteps (half the training budget when unset), then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_value: f64,
    #[serde(default)]
    pub decay_steps: Option<u64>,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            initial: 1.0,
            final_value: 0.05,
            decay_steps: None,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, timestep: u64, budget: u64) -> f64 {
        let decay = self.decay_steps.unwrap_or(budget / 2);
        if decay == 0 || timestep >= decay {
            return self.final_value;
        }
        let frac = timestep as f64 / decay as f64;
        self.initial + (self.final_value - self.initial) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub alpha: f64,
    /// Discount factor; the environment itself never discounts.
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub training_timesteps: u64,
    pub seed: u64,
}

impl LearnerConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        LearnerConfig {
            algorithm,
            alpha: 0.1,
            gamma: 0.99,
            epsilon: EpsilonSchedule::default(),
            training_timesteps: 20_000,
            seed: 0,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ErdError::config("alpha", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ErdError::config("gamma", "must lie in [0, 1]"));
        }
        let e = &self.epsilon;
        if !((0.0..=1.0).contains(&e.initial) && (0.0..=1.0).contains(&e.final_value)) {
            return Err(ErdError::config("epsilon", "rates must lie in [0, 1]"));
        }
        if e.final_value > e.initial {
            return Err(ErdError::config("epsilon", "schedule must be non-increasing"));
        }
        Ok(())
    }
}

/// Quantized state: 1 m cells, 10° heading buckets, the puzzle bits verbatim
/// and 10° joint buckets (empty without joints).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscretizedKey {
    pub cell_x: i32,
    pub cell_y: i32,
    pub heading_bucket: u8,
    pub bits: u64,
    pub joints: Vec<u8>,
}

pub fn discretize(state: &EnvState) -> DiscretizedKey {
    let bucket = (state.pose.heading / TURN_DEGREES).floor() as i64;
    DiscretizedKey {
        cell_x: state.pose.x.floor() as i32,
        cell_y: state.pose.y.floor() as i32,
        heading_bucket: bucket.rem_euclid(36) as u8,
        bits: state.puzzle.mask(),
        joints: state
            .joints
            .0
            .iter()
            .map(|a| (((a + JOINT_LIMIT) / TURN_DEGREES).floor() as i64).clamp(0, 36) as u8)
            .collect(),
    }
}

/// Action values, zero for anything never updated.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_actions: usize,
    rows: HashMap<DiscretizedKey, Vec<f64>>,
}

impl QTable {
    pub fn new(n_actions: usize) -> Self {
        QTable {
            n_actions,
            rows: HashMap::new(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of states with at least one updated entry.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, key: &DiscretizedKey, action: usize) -> f64 {
        self.rows.get(key).map_or(0.0, |row| row[action])
    }

    pub fn set(&mut self, key: &DiscretizedKey, action: usize, value: f64) {
        let n = self.n_actions;
        self.rows.entry(key.clone()).or_insert_with(|| vec![0.0; n])[action] = value;
    }

    pub fn max_over(&self, key: &DiscretizedKey, actions: &[usize]) -> f64 {
        match self.rows.get(key) {
            None => 0.0,
            Some(row) => actions
                .iter()
                .map(|&a| row[a])
                .fold(f64::NEG_INFINITY, f64::max)
                .max(if actions.is_empty() { 0.0 } else { f64::NEG_INFINITY }),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.values().flat_map(|r| r.iter().copied())
    }
}

/// Epsilon-greedy choice. Greedy ties go to the earliest entry of
/// `legal_actions` (which callers keep in ascending index order).
pub fn select_action<R: Rng>(
    q: &QTable,
    key: &DiscretizedKey,
    legal_actions: &[usize],
    epsilon: f64,
    rng: &mut R,
) -> usize {
    assert!(!legal_actions.is_empty(), "no legal actions");
    if rng.random::<f64>() < epsilon {
        return legal_actions[rng.random_range(0..legal_actions.len())];
    }
    greedy(q, key, legal_actions)
}

pub fn greedy(q: &QTable, key: &DiscretizedKey, legal_actions: &[usize]) -> usize {
    let Some(row) = q.rows.get(key) else {
        return legal_actions[0];
    };
    let mut best = legal_actions[0];
    for &a in &legal_actions[1..] {
        if row[a] > row[best] {
            best = a;
        }
    }
    best
}

/// `Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a))`. `next = None`
/// marks a terminal transition (bootstrap 0).
pub fn q_update(
    q: &mut QTable,
    key: &DiscretizedKey,
    action: usize,
    reward: f64,
    next: Option<(&DiscretizedKey, &[usize])>,
    config: &LearnerConfig,
) {
    let bootstrap = next.map_or(0.0, |(k, legal)| q.max_over(k, legal));
    td_update(q, key, action, reward + config.gamma * bootstrap, config.alpha);
}

/// `Q(s,a) += alpha * (r + gamma * Q(s',a') - Q(s,a))`.
pub fn sarsa_update(
    q: &mut QTable,
    key: &DiscretizedKey,
    action: usize,
    reward: f64,
    next: Option<(&DiscretizedKey, usize)>,
    config: &LearnerConfig,
) {
    let bootstrap = next.map_or(0.0, |(k, a)| q.get(k, a));
    td_update(q, key, action, reward + config.gamma * bootstrap, config.alpha);
}

fn td_update(q: &mut QTable, key: &DiscretizedKey, action: usize, target: f64, alpha: f64) {
    let old = q.get(key, action);
    let new = old + alpha * (target - old);
    if new != old || q.rows.contains_key(key) {
        q.set(key, action, new);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub instance_id: String,
    pub episode: usize,
    pub seed: u64,
    /// Primitive timestep at which the episode began.
    pub start_timestep: u64,
    /// Flat action indices, one per agent decision.
    pub actions: Vec<u16>,
    pub rewards: Vec<f64>,
    pub cumulative_reward: f64,
    /// Primitive steps taken.
    pub steps: u32,
    pub exited: bool,
    pub normalized_return: f64,
    /// Exited within the planner's optimal step count.
    pub optimal: bool,
    /// Cut short by the training budget rather than by exit or step cap.
    pub truncated: bool,
}

/// Hooks for per-step diagnostics.
pub trait EpisodeObserver {
    fn begin_episode(&mut self, _episode: usize, _episode_seed: u64, _state: &EnvState) {}
    fn on_step(&mut self, _action_index: usize, _action: Action, _transition: &Transition) {}
    fn end_episode(&mut self, _record: &EpisodeRecord) {}
}

impl EpisodeObserver for () {}

pub fn run_training(
    instance: &InstanceConfig,
    learner: &LearnerConfig,
    action_mode: ActionMode,
) -> Result<Vec<EpisodeRecord>> {
    let scale = ReturnScale::for_instance(instance)?;
    Ok(Trainer::new(instance, learner, action_mode, scale)?.run(&mut ())?.0)
}

/// One learner on one instance.
pub struct Trainer {
    env: Env,
    learner: LearnerConfig,
    scale: ReturnScale,
    instance_id: String,
    q: QTable,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(
        instance: &InstanceConfig,
        learner: &LearnerConfig,
        action_mode: ActionMode,
        scale: ReturnScale,
    ) -> Result<Self> {
        learner.check()?;
        let env = Env::new(instance.clone(), action_mode.meta_enabled())?;
        let q = QTable::new(env.action_space().len());
        Ok(Trainer {
            env,
            learner: learner.clone(),
            scale,
            instance_id: instance.id(),
            q,
            rng: stream_rng(learner.seed, Stream::Policy, 0),
        })
    }

    fn choose(&mut self, key: &DiscretizedKey, legal: &[usize], epsilon: f64) -> usize {
        match self.learner.algorithm {
            Algorithm::Random => legal[self.rng.random_range(0..legal.len())],
            _ => select_action(&self.q, key, legal, epsilon, &mut self.rng),
        }
    }

    /// Run until the timestep budget is spent. Returns the episode records and
    /// the learned table.
    pub fn run<O: EpisodeObserver + ?Sized>(mut self, observer: &mut O) -> Result<(Vec<EpisodeRecord>, QTable)> {
        let budget = self.learner.training_timesteps;
        let cfg = self.learner.clone();
        let step_reward = self.env.instance().step_reward;
        let exit_reward = self.env.instance().exit_reward;
        let space = self.env.action_space();

        let mut records = Vec::new();
        let mut legal = Vec::new();
        let mut next_legal = Vec::new();
        let mut t: u64 = 0;
        while t < budget {
            let episode = records.len();
            let episode_seed = derive_seed(cfg.seed, Stream::Episode, episode as u64);
            self.env.reset(episode_seed);
            observer.begin_episode(episode, episode_seed, self.env.state());

            let start_timestep = t;
            let mut actions = Vec::new();
            let mut rewards = Vec::new();
            let mut key = discretize(self.env.state());
            self.env.legal_actions(&mut legal);
            let mut action = self.choose(&key, &legal, cfg.epsilon.value(t, budget));
            let mut done;
            loop {
                let tr = self.env.step_index(action)?;
                t += u64::from(tr.info.primitive_steps);
                actions.push(action as u16);
                rewards.push(tr.reward);
                if let Some(a) = space.action(action) {
                    observer.on_step(action, a, &tr);
                }
                done = tr.done;
                let terminal = tr.next.exited;
                let next_key = discretize(&tr.next);
                self.env.legal_actions(&mut next_legal);
                let next_action = if done || t >= budget {
                    None
                } else {
                    Some(self.choose(&next_key, &next_legal, cfg.epsilon.value(t, budget)))
                };
                match cfg.algorithm {
                    Algorithm::QLearning => {
                        let next = (!terminal).then_some((&next_key, next_legal.as_slice()));
                        q_update(&mut self.q, &key, action, tr.reward, next, &cfg);
                    }
                    Algorithm::Sarsa => {
                        let bootstrap = if terminal {
                            None
                        } else {
                            // truncated transitions bootstrap from a sampled next action
                            let a = next_action.unwrap_or_else(|| {
                                select_action(
                                    &self.q,
                                    &next_key,
                                    &next_legal,
                                    cfg.epsilon.value(t, budget),
                                    &mut self.rng,
                                )
                            });
                            Some((&next_key, a))
                        };
                        sarsa_update(&mut self.q, &key, action, tr.reward, bootstrap, &cfg);
                    }
                    Algorithm::Random => {}
                }
                match next_action {
                    Some(a) => {
                        action = a;
                        key = next_key;
                        std::mem::swap(&mut legal, &mut next_legal);
                    }
                    None => break,
                }
            }

            let state = self.env.state();
            let cumulative_reward: f64 = rewards.iter().sum();
            let expected = if state.exited { exit_reward } else { 0.0 }
                + step_reward * f64::from(state.steps_taken);
            if (cumulative_reward - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                return Err(ErdError::Validation(format!(
                    "reward accounting broken in episode {episode}: {cumulative_reward} != {expected}"
                )));
            }
            let record = EpisodeRecord {
                instance_id: self.instance_id.clone(),
                episode,
                seed: episode_seed,
                start_timestep,
                actions,
                rewards,
                cumulative_reward,
                steps: state.steps_taken,
                exited: state.exited,
                normalized_return: self.scale.normalize(cumulative_reward),
                optimal: state.exited && state.steps_taken <= self.scale.optimal_steps,
                truncated: !done,
            };
            observer.end_episode(&record);
            records.push(record);
        }
        Ok((records, self.q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::canonical_one_button;
    use crate::mdp::{reset, Pose};
    use rand::SeedableRng;

    fn key(x: i32) -> DiscretizedKey {
        DiscretizedKey {
            cell_x: x,
            cell_y: 0,
            heading_bucket: 0,
            bits: 0,
            joints: vec![],
        }
    }

    #[test]
    fn discretization() {
        let inst = canonical_one_button();
        let mut s = reset(&inst, 0).unwrap();
        s.pose = Pose::ground(5.3, 2.9, 47.0);
        let k = discretize(&s);
        assert_eq!((k.cell_x, k.cell_y, k.heading_bucket), (5, 2, 4));
        assert!(k.joints.is_empty());

        let mut t = s.clone();
        t.pose = Pose::ground(5.9, 2.1, 41.0);
        assert_eq!(discretize(&t), k);

        s.pose.heading = 359.9;
        assert_eq!(discretize(&s).heading_bucket, 35);
    }

    #[test]
    fn greedy_and_tie_break() {
        let mut q = QTable::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&q, &key(0), &[1, 2, 3], 0.0, &mut rng), 1);
        q.set(&key(0), 2, 0.5);
        q.set(&key(0), 3, -0.5);
        assert_eq!(select_action(&q, &key(0), &[1, 2, 3], 0.0, &mut rng), 2);
        assert_eq!(select_action(&q, &key(0), &[0, 3], 0.0, &mut rng), 0);
    }

    #[test]
    fn uniform_exploration() {
        let q = QTable::new(6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let legal: Vec<usize> = (0..6).collect();
        let mut counts = [0usize; 6];
        let draws = 10_000;
        for _ in 0..draws {
            counts[select_action(&q, &key(0), &legal, 1.0, &mut rng)] += 1;
        }
        let p = 1.0 / 6.0;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn update_arithmetic() {
        let cfg = LearnerConfig::new(Algorithm::QLearning);
        let mut q = QTable::new(2);
        q_update(&mut q, &key(0), 0, -1.0, Some((&key(1), &[0, 1])), &cfg);
        assert!((q.get(&key(0), 0) + 0.1).abs() < 1e-15);

        let cfg = LearnerConfig {
            alpha: 1.0,
            gamma: 0.9,
            ..cfg
        };
        let mut q = QTable::new(2);
        q.set(&key(1), 0, 1000.0);
        q_update(&mut q, &key(0), 1, 99.0, None, &cfg);
        assert_eq!(q.get(&key(0), 1), 99.0);
        let mut s = QTable::new(2);
        sarsa_update(&mut s, &key(0), 1, 99.0, None, &cfg);
        assert_eq!(s.get(&key(0), 1), 99.0);
    }

    #[test]
    fn zero_alpha_changes_nothing() {
        let cfg = LearnerConfig {
            alpha: 0.0,
            ..LearnerConfig::new(Algorithm::Sarsa)
        };
        let mut q = QTable::new(2);
        q.set(&key(0), 0, 3.0);
        let before = q.clone();
        sarsa_update(&mut q, &key(0), 0, -1.0, Some((&key(1), 1)), &cfg);
        sarsa_update(&mut q, &key(2), 1, -1.0, None, &cfg);
        assert_eq!(q, before);
    }

    #[test]
    fn epsilon_schedule() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.value(0, 20_000), 1.0);
        assert!((e.value(5_000, 20_000) - 0.525).abs() < 1e-12);
        assert_eq!(e.value(10_000, 20_000), 0.05);
        assert_eq!(e.value(19_999, 20_000), 0.05);
    }

    #[test]
    fn config_checks() {
        let mut cfg = LearnerConfig::new(Algorithm::QLearning);
        assert!(cfg.check().is_ok());
        cfg.alpha = 0.0;
        assert!(cfg.check().is_err());
        cfg.alpha = 0.5;
        cfg.epsilon.final_value = 1.0;
        cfg.epsilon.initial = 0.1;
        assert!(cfg.check().is_err());
    }

    #[test]
    fn training_is_reproducible_and_accounted() {
        let inst = canonical_one_button();
        let cfg = LearnerConfig {
            training_timesteps: 3_000,
            seed: 5,
            ..LearnerConfig::new(Algorithm::QLearning)
        };
        let a = run_training(&inst, &cfg, ActionMode::Primitives).unwrap();
        let b = run_training(&inst, &cfg, ActionMode::Primitives).unwrap();
        assert_eq!(a, b);
        let total: u64 = a.iter().map(|r| u64::from(r.steps)).sum();
        assert_eq!(total, 3_000);
        for r in &a {
            assert_eq!(r.cumulative_reward, r.rewards.iter().sum::<f64>());
            let expected = if r.exited { 100.0 } else { 0.0 } - f64::from(r.steps);
            assert_eq!(r.cumulative_reward, expected);
            assert!((0.0..=100.0).contains(&r.normalized_return));
        }
        assert!(a[..a.len() - 1].iter().all(|r| !r.truncated));
    }
}
