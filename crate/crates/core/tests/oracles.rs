mod common;

use std::collections::{HashMap, HashSet};

use common::{fk_oracle, TabularMdp};
use erd_core::agents::{
    discretize, greedy, q_update, sarsa_update, select_action, ActionMode, Algorithm, DiscretizedKey,
    EpisodeObserver, LearnerConfig, QTable, Trainer,
};
use erd_core::harness::{self, ExperimentConfig, InstanceSource};
use erd_core::instance::{canonical_one_button, validate, ArmConfig, InstanceConfig};
use erd_core::mdp::{forward_kinematics, Action, EnvState, JointVector, Pose, ReturnScale, Transition};
use erd_core::puzzle::Button;
use erd_core::geometry::RoomGeometry;
use erd_core::Env;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn key(s: usize) -> DiscretizedKey {
    DiscretizedKey {
        cell_x: s as i32,
        cell_y: 0,
        heading_bucket: 0,
        bits: 0,
        joints: vec![],
    }
}

fn two_state_chain() -> TabularMdp {
    TabularMdp {
        next: vec![vec![Some(1), None], vec![None, Some(0)]],
        reward: vec![vec![0.0, 1.0], vec![10.0, -1.0]],
    }
}

fn five_state_mdp() -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut next = Vec::new();
    let mut reward = Vec::new();
    for s in 0..5 {
        let mut n = Vec::new();
        let mut r = Vec::new();
        for a in 0..3 {
            n.push(if s == 4 && a == 0 { None } else { Some(rng.random_range(0..5)) });
            r.push(rng.random_range(-5.0..5.0f64).round());
        }
        next.push(n);
        reward.push(r);
    }
    TabularMdp { next, reward }
}

fn sweep_config(gamma: f64) -> LearnerConfig {
    LearnerConfig {
        alpha: 0.5,
        gamma,
        ..LearnerConfig::new(Algorithm::QLearning)
    }
}

fn assert_matches(q: &QTable, mdp: &TabularMdp, gamma: f64) {
    let star = mdp.q_star(gamma);
    for (s, row) in star.iter().enumerate() {
        for (a, v) in row.iter().enumerate() {
            let got = q.get(&key(s), a);
            assert!((got - v).abs() < 1e-6, "Q({s},{a}) = {got}, value iteration {v}");
        }
    }
}

fn q_learning_sweeps(mdp: &TabularMdp, gamma: f64) -> QTable {
    let n_actions = mdp.next[0].len();
    let all: Vec<usize> = (0..n_actions).collect();
    let cfg = sweep_config(gamma);
    let mut q = QTable::new(n_actions);
    for _ in 0..5000 {
        for s in 0..mdp.next.len() {
            for a in 0..n_actions {
                let next_key = mdp.next[s][a].map(key);
                let next = next_key.as_ref().map(|k| (k, all.as_slice()));
                q_update(&mut q, &key(s), a, mdp.reward[s][a], next, &cfg);
            }
        }
    }
    q
}

fn sarsa_sweeps(mdp: &TabularMdp, gamma: f64) -> QTable {
    let n_actions = mdp.next[0].len();
    let all: Vec<usize> = (0..n_actions).collect();
    let cfg = LearnerConfig {
        algorithm: Algorithm::Sarsa,
        ..sweep_config(gamma)
    };
    let mut q = QTable::new(n_actions);
    for _ in 0..5000 {
        for s in 0..mdp.next.len() {
            for a in 0..n_actions {
                let next_key = mdp.next[s][a].map(key);
                let next = next_key.as_ref().map(|k| (k, greedy(&q, k, &all)));
                sarsa_update(&mut q, &key(s), a, mdp.reward[s][a], next, &cfg);
            }
        }
    }
    q
}

#[test]
fn q_learning_fixed_point_is_value_iteration() {
    for gamma in [0.9, 0.99] {
        assert_matches(&q_learning_sweeps(&two_state_chain(), gamma), &two_state_chain(), gamma);
        assert_matches(&q_learning_sweeps(&five_state_mdp(), gamma), &five_state_mdp(), gamma);
    }
}

#[test]
fn greedy_sarsa_fixed_point_is_value_iteration() {
    for gamma in [0.9, 0.99] {
        assert_matches(&sarsa_sweeps(&two_state_chain(), gamma), &two_state_chain(), gamma);
        assert_matches(&sarsa_sweeps(&five_state_mdp(), gamma), &five_state_mdp(), gamma);
    }
}

#[test]
fn single_updates_follow_the_formulas() {
    let cfg = LearnerConfig {
        alpha: 0.25,
        gamma: 0.5,
        ..LearnerConfig::new(Algorithm::QLearning)
    };
    let mut q = QTable::new(3);
    q.set(&key(1), 0, 4.0);
    q.set(&key(1), 2, 8.0);
    q.set(&key(0), 1, 2.0);
    q_update(&mut q, &key(0), 1, -1.0, Some((&key(1), &[0, 1])), &cfg);
    assert!((q.get(&key(0), 1) - (2.0 + 0.25 * (-1.0 + 0.5 * 4.0 - 2.0))).abs() < 1e-12);
    sarsa_update(&mut q, &key(0), 2, 3.0, Some((&key(1), 2)), &cfg);
    assert!((q.get(&key(0), 2) - 0.25 * (3.0 + 0.5 * 8.0)).abs() < 1e-12);
    q_update(&mut q, &key(2), 0, 100.0, None, &cfg);
    assert!((q.get(&key(2), 0) - 25.0).abs() < 1e-12);
}

#[test]
fn forward_kinematics_matches_transform_chain() {
    let arm = ArmConfig {
        link_lengths: vec![1.0, 1.0],
        mount_height: 0.0,
        press_with_effector: false,
    };
    let origin = Pose::ground(0.0, 0.0, 0.0);
    let p = forward_kinematics(&origin, &JointVector(vec![90.0, -90.0]), &arm).unwrap();
    for (got, want) in p.iter().zip([1.0, 0.0, 1.0]) {
        assert!((got - want).abs() < 1e-9, "{p:?}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let n = rng.random_range(0..5usize);
        let links: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.5)).collect();
        let angles: Vec<f64> = (0..n).map(|_| (rng.random_range(-18..=18) * 10) as f64).collect();
        let arm = ArmConfig {
            link_lengths: links.clone(),
            mount_height: rng.random_range(0.0..1.0),
            press_with_effector: false,
        };
        let pose = Pose::ground(
            rng.random_range(0.0..20.0),
            rng.random_range(0.0..20.0),
            (rng.random_range(0..36) * 10) as f64,
        );
        let got = forward_kinematics(&pose, &JointVector(angles.clone()), &arm).unwrap();
        let want = fk_oracle(&pose, &angles, &links, arm.mount_height);
        for i in 0..3 {
            assert!((got[i] - want[i]).abs() < 1e-9, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn epsilon_one_is_uniform_over_legal_actions() {
    let mut q = QTable::new(8);
    q.set(&key(0), 5, 10.0);
    let legal = [0, 2, 3, 5, 7];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 100_000;
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for _ in 0..draws {
        *counts.entry(select_action(&q, &key(0), &legal, 1.0, &mut rng)).or_default() += 1;
    }
    assert_eq!(counts.len(), legal.len());
    let expected = draws as f64 / legal.len() as f64;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 4 degrees of freedom, p = 0.001
    assert!(chi2 < 18.47, "chi2 {chi2}");

    let eps = 0.3;
    let greedy_hits = (0..draws)
        .filter(|_| select_action(&q, &key(0), &legal, eps, &mut rng) == 5)
        .count() as f64
        / draws as f64;
    let p = 1.0 - eps + eps / legal.len() as f64;
    assert!((greedy_hits - p).abs() < 4.0 * (p * (1.0 - p) / draws as f64).sqrt());
}

fn small_room() -> InstanceConfig {
    let mut inst = canonical_one_button();
    inst.room = RoomGeometry::new(3.0, 3.0, inst.room.exit_wall);
    inst.start_pose = Pose::ground(0.5, 1.5, 0.0);
    inst.layout.buttons = vec![Button {
        x: 0.5,
        y: 0.5,
        radius: 0.3,
    }];
    assert_eq!(validate(&inst), vec![]);
    inst
}

/// Room cell and puzzle bits of a non-terminal state; poses on the far walls
/// belong to the last cell.
type Cell = (i32, i32, u64);

fn cell(state: &EnvState) -> Cell {
    let k = discretize(state);
    (k.cell_x.min(2), k.cell_y.min(2), k.bits)
}

#[derive(Default)]
struct Cells(HashSet<Cell>);

impl EpisodeObserver for Cells {
    fn begin_episode(&mut self, _: usize, _: u64, state: &EnvState) {
        self.0.insert(cell(state));
    }
    fn on_step(&mut self, _: usize, _: Action, t: &Transition) {
        if !t.done {
            self.0.insert(cell(&t.next));
        }
    }
}

/// Cells reached by a long uniform random walk, as the reachable set.
fn reachable_cells(inst: &InstanceConfig, steps: usize) -> HashSet<Cell> {
    let mut env = Env::new(inst.clone(), false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut seen = HashSet::from([cell(env.state())]);
    let mut episode = 0;
    for _ in 0..steps {
        let t = env.step_index(rng.random_range(0..6)).unwrap();
        if t.done {
            episode += 1;
            env.reset(episode);
        } else {
            seen.insert(cell(&t.next));
        }
    }
    seen
}

#[test]
fn learners_visit_every_reachable_cell_of_a_small_room() {
    let inst = small_room();
    let reachable = reachable_cells(&inst, 1_000_000);
    // with the button on, cell (2, 1) lies wholly in the exit strip
    assert_eq!(reachable.len(), 17);
    assert!(!reachable.contains(&(2, 1, 1)));
    let scale = ReturnScale::for_instance(&inst).unwrap();
    for algorithm in [Algorithm::QLearning, Algorithm::Sarsa] {
        let learner = LearnerConfig {
            training_timesteps: 50_000,
            ..LearnerConfig::new(algorithm)
        };
        let mut cells = Cells::default();
        Trainer::new(&inst, &learner, ActionMode::Primitives, scale)
            .unwrap()
            .run(&mut cells)
            .unwrap();
        let missing: Vec<_> = reachable.difference(&cells.0).collect();
        assert!(missing.is_empty(), "{algorithm:?}: unvisited {missing:?}");
    }
}

#[derive(serde::Deserialize)]
struct Row {
    algorithm: String,
    trial: usize,
    episode: usize,
    normalized_return: f64,
    cumulative_reward: f64,
    exited: bool,
    optimal: bool,
    truncated: bool,
}

#[derive(serde::Deserialize)]
struct Summary {
    algorithm: String,
    episode: usize,
    mean_normalized: f64,
    stderr_normalized: f64,
    mean_reward: f64,
    exit_rate: f64,
}

#[derive(serde::Deserialize)]
struct Window {
    algorithm: String,
    exit_rate: f64,
    optimal_rate: f64,
    mean_normalized: f64,
    stderr_normalized: f64,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0) / n).sqrt())
}

fn read<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Vec<T> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn summaries_recompute_from_raw_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        trials: 4,
        training_timesteps: 6_000,
        final_window: 20,
        ..ExperimentConfig::new(InstanceSource::Canonical("one-button".into()))
    };
    harness::run_to_dir(&cfg, dir.path(), Some(dir.path()), None).unwrap();
    let rows: Vec<Row> = read(&dir.path().join("results.csv"));
    let summary: Vec<Summary> = read(&dir.path().join("summary.csv"));
    let windows: Vec<Window> = read(&dir.path().join("final_window.csv"));

    for alg in ["q-learning", "sarsa", "random"] {
        let per_trial: Vec<Vec<&Row>> = (0..cfg.trials)
            .map(|t| {
                let mut v: Vec<&Row> = rows
                    .iter()
                    .filter(|r| r.algorithm == alg && r.trial == t && !r.truncated)
                    .collect();
                v.sort_by_key(|r| r.episode);
                v
            })
            .collect();
        let len = per_trial.iter().map(Vec::len).min().unwrap();
        let mine: Vec<&Summary> = summary.iter().filter(|s| s.algorithm == alg).collect();
        assert_eq!(mine.len(), len);
        for s in mine {
            let col = |f: fn(&Row) -> f64| -> Vec<f64> { per_trial.iter().map(|t| f(t[s.episode])).collect() };
            let (m, se) = mean_stderr(&col(|r| r.normalized_return));
            assert!((m - s.mean_normalized).abs() < 1e-9);
            assert!((se - s.stderr_normalized).abs() < 1e-9);
            assert!((mean_stderr(&col(|r| r.cumulative_reward)).0 - s.mean_reward).abs() < 1e-9);
            let exits = mean_stderr(&col(|r| if r.exited { 1.0 } else { 0.0 })).0;
            assert!((exits - s.exit_rate).abs() < 1e-9);
        }

        let w = windows.iter().find(|w| w.algorithm == alg).unwrap();
        let tails: Vec<&[&Row]> = per_trial.iter().map(|t| &t[t.len().saturating_sub(20)..]).collect();
        let total: usize = tails.iter().map(|t| t.len()).sum();
        let exit_rate = tails.iter().flat_map(|t| t.iter()).filter(|r| r.exited).count() as f64 / total as f64;
        let optimal_rate = tails.iter().flat_map(|t| t.iter()).filter(|r| r.optimal).count() as f64 / total as f64;
        let means: Vec<f64> = tails
            .iter()
            .map(|t| t.iter().map(|r| r.normalized_return).sum::<f64>() / t.len() as f64)
            .collect();
        let (m, se) = mean_stderr(&means);
        assert!((exit_rate - w.exit_rate).abs() < 1e-9);
        assert!((optimal_rate - w.optimal_rate).abs() < 1e-9);
        assert!((m - w.mean_normalized).abs() < 1e-9);
        assert!((se - w.stderr_normalized).abs() < 1e-9);
    }
}
