use erd_core::agents::{discretize, q_update, run_training, ActionMode, Algorithm, LearnerConfig, QTable};
use erd_core::instance::{deserialize, generate, serialize, validate, InstanceConfig, SchematicParams};
use erd_core::mdp::{self, EnvState, JOINT_LIMIT};
use erd_core::meta::{self, planner_for, target_region, MetaTarget};
use erd_core::puzzle::{
    apply_press, detect_touches, generate_dag, is_unlocked, press_eligible, solve_order, Button, ButtonDag,
    ButtonLayout, PuzzleBits,
};
use erd_core::Env;
use proptest::prelude::*;

fn instance_strategy() -> impl Strategy<Value = InstanceConfig> {
    (1usize..=4, 0usize..=2, any::<bool>(), 5u32..=300, any::<u64>()).prop_map(|(n, joints, effector, cap, seed)| {
        let params = SchematicParams {
            num_joints: joints,
            press_with_effector: effector && joints > 0,
            ..SchematicParams::with_buttons(n)
        };
        let mut inst = generate(&params, seed).expect("default schematic always generates");
        // short caps exercise truncation; the instance need not stay solvable
        inst.max_episode_steps = cap;
        inst
    })
}

/// Trajectory of states from `episode_seed`, feeding indices modulo the
/// action-space size and resetting whenever an episode ends.
fn rollout(inst: &InstanceConfig, meta: bool, seed: u64, indices: &[usize]) -> Vec<(EnvState, f64, bool)> {
    let mut env = Env::new(inst.clone(), meta).unwrap();
    env.reset(seed);
    let n = env.action_space().len();
    let mut out = Vec::new();
    let mut legal = Vec::new();
    let mut episode = seed;
    for &i in indices {
        env.legal_actions(&mut legal);
        let t = env.step_index(legal[i % legal.len()]).unwrap();
        assert!(n >= legal.len());
        out.push((t.next.clone(), t.reward, t.done));
        if t.done {
            episode = episode.wrapping_add(1);
            env.reset(episode);
            out.push((env.state().clone(), 0.0, false));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn trajectories_are_deterministic(
        inst in instance_strategy(),
        meta in any::<bool>(),
        seed in any::<u64>(),
        indices in prop::collection::vec(0usize..64, 0..120),
    ) {
        let a = rollout(&inst, meta, seed, &indices);
        let b = rollout(&inst, meta, seed, &indices);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn states_stay_in_range(
        inst in instance_strategy(),
        meta in any::<bool>(),
        indices in prop::collection::vec(0usize..64, 0..200),
    ) {
        let mut env = Env::new(inst.clone(), meta).unwrap();
        env.reset(0);
        let mut legal = Vec::new();
        for i in indices {
            env.legal_actions(&mut legal);
            let before = env.state().clone();
            let t = env.step_index(legal[i % legal.len()]).unwrap();
            let s = &t.next;
            prop_assert!((0.0..=inst.room.width).contains(&s.pose.x));
            prop_assert!((0.0..=inst.room.depth).contains(&s.pose.y));
            prop_assert!((0.0..360.0).contains(&s.pose.heading));
            prop_assert_eq!((s.pose.z, s.pose.pitch, s.pose.roll), (0.0, 0.0, 0.0));
            prop_assert_eq!(s.joints.len(), inst.num_joints);
            prop_assert!(s.joints.0.iter().all(|a| (-JOINT_LIMIT..=JOINT_LIMIT).contains(a)));
            prop_assert_eq!(s.puzzle.len(), inst.num_buttons);
            prop_assert!(before.puzzle.is_subset_of(&s.puzzle), "bits went off");
            prop_assert!(s.steps_taken <= inst.max_episode_steps);
            prop_assert_eq!(s.steps_taken, before.steps_taken + t.info.primitive_steps);
            prop_assert_eq!(t.done, s.exited || s.steps_taken == inst.max_episode_steps);
            if s.exited {
                prop_assert!(is_unlocked(&s.puzzle, &inst.dag), "exited while locked");
            }
            if t.done && !s.exited {
                prop_assert_eq!(t.reward, -f64::from(t.info.primitive_steps));
            }
            if t.done {
                env.reset(1);
            }
        }
    }

    #[test]
    fn episode_rewards_add_up(
        inst in instance_strategy(),
        seed in any::<u64>(),
        indices in prop::collection::vec(0usize..64, 0..300),
    ) {
        let mut env = Env::new(inst.clone(), true).unwrap();
        env.reset(seed);
        let mut legal = Vec::new();
        let mut total = 0.0;
        for i in indices {
            env.legal_actions(&mut legal);
            let t = env.step_index(legal[i % legal.len()]).unwrap();
            total += t.reward;
            if t.done {
                let s = &t.next;
                let expected = if s.exited { 100.0 } else { 0.0 } - f64::from(s.steps_taken);
                prop_assert_eq!(total, expected);
                total = 0.0;
                env.reset(seed ^ 1);
            }
        }
    }

    #[test]
    fn metas_replay_as_their_plans(
        inst in instance_strategy(),
        indices in prop::collection::vec(0usize..64, 0..40),
        target in 0usize..5,
    ) {
        // reach some state by primitives, then run one meta-action
        let mut state = mdp::reset(&inst, 0).unwrap();
        let prims = mdp::primitive_action_count(inst.num_joints);
        let space = erd_core::ActionSpace::for_instance(&inst, false);
        for i in indices {
            if mdp::is_done(&state, &inst) {
                break;
            }
            state = mdp::step(&state, space.action(i % prims).unwrap(), &inst).unwrap().next;
        }
        prop_assume!(!mdp::is_done(&state, &inst));
        let target = if target < inst.num_buttons { MetaTarget::Button(target) } else { MetaTarget::Exit };
        prop_assume!(!meta::target_reached(&state, &inst, target));

        let t = meta::execute_meta(&state, target, &inst).unwrap();
        let region = target_region(&inst, target).unwrap();
        let planner = planner_for(&state, &inst, target);
        let mut actions = Vec::new();
        let mut pose = state.pose;
        if planner.plan(&pose, &region, &inst.room).unwrap().actions.is_empty() {
            // an unpressed button under the pressing point: out, then back in
            let out = planner.step_out(&pose, &region, &inst.room).unwrap();
            actions.push(out);
            pose = mdp::apply_movement(&pose, out, &inst.room);
        }
        actions.extend(planner.plan(&pose, &region, &inst.room).unwrap().actions);
        let mut s = state.clone();
        let mut reward = 0.0;
        let mut pressed = Vec::new();
        for a in actions {
            let p = mdp::step(&s, a, &inst).unwrap();
            reward += p.reward;
            pressed.extend(p.info.pressed);
            s = p.next;
            if p.done {
                break;
            }
        }
        prop_assert_eq!(&t.next, &s);
        prop_assert_eq!(t.reward, reward);
        prop_assert_eq!(&t.info.pressed, &pressed);
        let mut newly: Vec<usize> = (0..inst.num_buttons)
            .filter(|&b| t.next.puzzle.get(b) && !state.puzzle.get(b))
            .collect();
        newly.sort_unstable();
        let mut sorted = pressed.clone();
        sorted.sort_unstable();
        prop_assert_eq!(newly, sorted);
    }

    #[test]
    fn solve_order_metas_always_exit(
        n in 1usize..=4,
        joints in 0usize..=2,
        effector in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let params = SchematicParams {
            num_joints: joints,
            press_with_effector: effector && joints > 0,
            ..SchematicParams::with_buttons(n)
        };
        let inst = generate(&params, seed).unwrap();
        let mut env = Env::new(inst.clone(), true).unwrap();
        env.reset(seed);
        let mut total = 0.0;
        let mut targets: Vec<MetaTarget> = solve_order(&inst.dag).unwrap().into_iter().map(MetaTarget::Button).collect();
        targets.push(MetaTarget::Exit);
        for target in targets {
            prop_assert!(!env.is_done());
            if meta::target_reached(env.state(), &inst, target) {
                continue;
            }
            total += env.step(erd_core::Action::Meta(target)).unwrap().reward;
        }
        prop_assert!(env.state().exited);
        prop_assert_eq!(total, 100.0 - f64::from(env.state().steps_taken));
    }

    #[test]
    fn serialization_round_trips(inst in instance_strategy()) {
        let text = serialize(&inst);
        let back = deserialize(&text).unwrap();
        prop_assert_eq!(&back, &inst);
        prop_assert_eq!(serialize(&back), text);
        prop_assert_eq!(back.id(), inst.id());
    }

    #[test]
    fn generation_is_a_function_of_params_and_seed(n in 1usize..=4, seed in any::<u64>()) {
        let params = SchematicParams::with_buttons(n);
        prop_assert_eq!(generate(&params, seed).unwrap(), generate(&params, seed).unwrap());
    }

    #[test]
    fn apply_press_latches_only_eligible_buttons(n in 1usize..=6, dag_seed in any::<u64>(), mask in any::<u64>(), button in 0usize..8) {
        let dag = generate_dag_with_cap(n, dag_seed);
        let bits = bits_from_mask(n, mask);
        let after = apply_press(bits, button, &dag);
        prop_assert!(bits.is_subset_of(&after));
        prop_assert_eq!(apply_press(after, button, &dag), after);
        match press_eligible(&dag, &bits, button) {
            Ok(true) => prop_assert_eq!(after, bits.with(button)),
            Ok(false) | Err(_) => prop_assert_eq!(after, bits),
        }
    }

    #[test]
    fn touches_are_translation_invariant(
        buttons in prop::collection::vec((0i32..640, 0i32..640, 16i32..64), 1..5),
        px in 0i32..640,
        py in 0i32..640,
        dx in -40i32..40,
        dy in -40i32..40,
    ) {
        // coordinates on a 1/64 m grid and shifts in 1/4 m keep the arithmetic exact
        let layout = |sx: f64, sy: f64| ButtonLayout {
            buttons: buttons
                .iter()
                .map(|&(x, y, r)| Button { x: f64::from(x) / 64.0 + sx, y: f64::from(y) / 64.0 + sy, radius: f64::from(r) / 64.0 })
                .collect(),
        };
        let (sx, sy) = (f64::from(dx) / 4.0, f64::from(dy) / 4.0);
        let p = (f64::from(px) / 64.0, f64::from(py) / 64.0);
        let q = (p.0 + sx, p.1 + sy);
        prop_assert_eq!(
            detect_touches(p, None, &layout(0.0, 0.0)),
            detect_touches(q, None, &layout(sx, sy))
        );
        prop_assert_eq!(
            detect_touches((0.0, 0.0), Some(p), &layout(0.0, 0.0)),
            detect_touches((5.0, 5.0), Some(q), &layout(sx, sy))
        );
    }
}

fn generate_dag_with_cap(n: usize, seed: u64) -> ButtonDag {
    erd_core::puzzle::generate_dag_with(n, seed, 0.5, 64).unwrap()
}

fn bits_from_mask(n: usize, mask: u64) -> PuzzleBits {
    PuzzleBits::from_bools(&(0..n).map(|i| mask >> i & 1 == 1).collect::<Vec<_>>())
}

/// Every labelled DAG on `n` nodes: forward edges of the identity order under
/// every relabelling.
fn all_dags(n: usize) -> Vec<ButtonDag> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut perms = vec![vec![]];
    for _ in 0..n {
        perms = perms
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..n)
                    .filter(|x| !p.contains(x))
                    .map(|x| [p.clone(), vec![x]].concat())
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for subset in 0u32..(1 << pairs.len()) {
        for perm in &perms {
            let mut edges: Vec<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| subset >> k & 1 == 1)
                .map(|(_, &(a, b))| (perm[a], perm[b]))
                .collect();
            edges.sort_unstable();
            if seen.insert(edges.clone()) {
                out.push(ButtonDag { num_buttons: n, edges, goal_index: perm[n - 1] });
            }
        }
    }
    out
}

fn check_press_sequences(dag: &ButtonDag, bits: PuzzleBits, depth: usize, count: &mut usize) {
    if depth == 0 {
        return;
    }
    for b in 0..dag.num_buttons {
        let next = apply_press(bits, b, dag);
        *count += 1;
        for i in 0..dag.num_buttons {
            if next.get(i) {
                let parents = dag.parent_mask(i);
                assert_eq!(next.mask() & parents, parents, "{dag:?}: bit {i} on before its parents");
            }
        }
        check_press_sequences(dag, next, depth - 1, count);
    }
}

#[test]
fn no_press_sequence_beats_the_dag() {
    // 1, 3, 25 and 543 labelled DAGs on 1..4 nodes
    let expected = [1, 3, 25, 543];
    for n in 1..=4 {
        let dags = all_dags(n);
        assert_eq!(dags.len(), expected[n - 1]);
        for dag in &dags {
            dag.check().unwrap();
            let mut count = 0;
            check_press_sequences(dag, PuzzleBits::new(n), 8, &mut count);
            assert_eq!(count, (1..=8).map(|k| n.pow(k)).sum::<usize>());
        }
    }
}

#[test]
fn generator_sweep() {
    for n in 1..=4 {
        for seed in 0..10_000u64 {
            let dag = generate_dag(n, seed).unwrap();
            dag.check().unwrap();
            assert!(dag.goal_index < n);
            let mut bits = PuzzleBits::new(n);
            for b in solve_order(&dag).unwrap() {
                assert!(press_eligible(&dag, &bits, b).unwrap());
                bits = apply_press(bits, b, &dag);
            }
            assert!(is_unlocked(&bits, &dag));

            let inst = generate(&SchematicParams::with_buttons(n), seed).unwrap();
            let bs = &inst.layout.buttons;
            for i in 0..n {
                for j in i + 1..n {
                    let d = (bs[i].x - bs[j].x).hypot(bs[i].y - bs[j].y);
                    assert!(d > bs[i].radius + bs[j].radius, "seed {seed}: discs {i} and {j} overlap");
                }
                let on = detect_touches((bs[i].x, bs[i].y), None, &inst.layout);
                assert_eq!(on, vec![i]);
            }
        }
    }
}

#[test]
fn two_button_instances_validate() {
    for seed in 0..1000 {
        let inst = generate(&SchematicParams::with_buttons(2), seed).unwrap();
        assert_eq!(validate(&inst), vec![], "seed {seed}");
        assert!(meta::optimal_route(&inst).unwrap().steps < inst.max_episode_steps);
    }
}

#[test]
fn training_is_reproducible_and_finite() {
    let inst = generate(&SchematicParams::with_buttons(2), 7).unwrap();
    for algorithm in [Algorithm::QLearning, Algorithm::Sarsa, Algorithm::Random] {
        for mode in [ActionMode::Primitives, ActionMode::WithMeta] {
            let cfg = LearnerConfig {
                training_timesteps: 3_000,
                seed: 5,
                ..LearnerConfig::new(algorithm)
            };
            let a = run_training(&inst, &cfg, mode).unwrap();
            let b = run_training(&inst, &cfg, mode).unwrap();
            assert_eq!(a, b);
            for r in &a {
                assert_eq!(r.rewards.iter().sum::<f64>(), r.cumulative_reward);
                assert!((0.0..=100.0).contains(&r.normalized_return));
            }
        }
    }
}

#[test]
fn updates_touch_one_entry() {
    let inst = generate(&SchematicParams::with_buttons(2), 3).unwrap();
    let mut env = Env::new(inst, false).unwrap();
    let cfg = LearnerConfig::new(Algorithm::QLearning);
    let n = env.action_space().len();
    let all: Vec<usize> = (0..n).collect();
    let mut q = QTable::new(n);
    let mut seed = 1u64;
    for _ in 0..5_000 {
        let key = discretize(env.state());
        let a = (erd_core::rng::splitmix64(&mut seed) % n as u64) as usize;
        let t = env.step_index(a).unwrap();
        let before = q.clone();
        let next_key = discretize(&t.next);
        q_update(&mut q, &key, a, t.reward, (!t.next.exited).then_some((&next_key, all.as_slice())), &cfg);
        for k in [&key, &next_key] {
            for b in (0..n).filter(|&b| (k, b) != (&key, a)) {
                assert_eq!(before.get(k, b), q.get(k, b));
            }
        }
        assert!(q.len() <= before.len() + 1);
        let delta = q.get(&key, a) - before.get(&key, a);
        let sums = (before.values().sum::<f64>(), q.values().sum::<f64>());
        assert!((sums.0 + delta - sums.1).abs() < 1e-9);
        assert!(q.values().all(f64::is_finite));
        if t.done {
            env.reset(0);
        }
    }
}
