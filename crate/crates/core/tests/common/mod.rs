//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use erd_core::geometry::RoomGeometry;
use erd_core::instance::{generate, InstanceConfig, SchematicParams};
use erd_core::mdp::{apply_movement, Action, Pose};
use erd_core::meta::{target_region, MetaTarget, Region};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shortest number of movement primitives from `start` into `region`, by
/// breadth-first search over real poses deduplicated on a lattice of
/// `cell` metres and 10° heading buckets.
pub fn bfs_lattice(start: &Pose, region: &Region, room: &RoomGeometry, cell: f64, limit: usize) -> Option<usize> {
    let key = |p: &Pose| {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            ((p.heading / 10.0).round() as i64).rem_euclid(36),
        )
    };
    if region.contains(start.x, start.y) {
        return Some(0);
    }
    let mut seen = HashSet::new();
    seen.insert(key(start));
    let mut queue = VecDeque::from([(*start, 0usize)]);
    while let Some((pose, depth)) = queue.pop_front() {
        if depth >= limit {
            return None;
        }
        for action in Action::MOVEMENTS {
            let next = apply_movement(&pose, action, room);
            if region.contains(next.x, next.y) {
                return Some(depth + 1);
            }
            if seen.insert(key(&next)) {
                queue.push_back((next, depth + 1));
            }
        }
    }
    None
}

type Mat4 = [[f64; 4]; 4];

fn mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn translation(x: f64, y: f64, z: f64) -> Mat4 {
    [[1.0, 0.0, 0.0, x], [0.0, 1.0, 0.0, y], [0.0, 0.0, 1.0, z], [0.0, 0.0, 0.0, 1.0]]
}

fn rot_z(deg: f64) -> Mat4 {
    let (s, c) = deg.to_radians().sin_cos();
    [[c, -s, 0.0, 0.0], [s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

fn rot_y(deg: f64) -> Mat4 {
    let (s, c) = deg.to_radians().sin_cos();
    [[c, 0.0, s, 0.0], [0.0, 1.0, 0.0, 0.0], [-s, 0.0, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

/// End effector by chaining homogeneous transforms: base translation, yaw by
/// heading, then per joint a pitch-up rotation (about -y) and a link along x.
pub fn fk_oracle(pose: &Pose, angles: &[f64], links: &[f64], mount: f64) -> [f64; 3] {
    let mut t = mul(&translation(pose.x, pose.y, pose.z + mount), &rot_z(pose.heading));
    for (a, l) in angles.iter().zip(links) {
        t = mul(&t, &rot_y(-a));
        t = mul(&t, &translation(*l, 0.0, 0.0));
    }
    [t[0][3], t[1][3], t[2][3]]
}

/// Deterministic finite MDP for value iteration: `next[s][a]`, `reward[s][a]`,
/// `None` next meaning terminal.
pub struct TabularMdp {
    pub next: Vec<Vec<Option<usize>>>,
    pub reward: Vec<Vec<f64>>,
}

impl TabularMdp {
    /// Q* by value iteration until the largest change is below 1e-13.
    pub fn q_star(&self, gamma: f64) -> Vec<Vec<f64>> {
        let n = self.next.len();
        let mut v = vec![0.0; n];
        loop {
            let mut delta: f64 = 0.0;
            for s in 0..n {
                let best = (0..self.next[s].len())
                    .map(|a| self.reward[s][a] + gamma * self.next[s][a].map_or(0.0, |t| v[t]))
                    .fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((best - v[s]).abs());
                v[s] = best;
            }
            if delta < 1e-13 {
                break;
            }
        }
        (0..n)
            .map(|s| {
                (0..self.next[s].len())
                    .map(|a| self.reward[s][a] + gamma * self.next[s][a].map_or(0.0, |t| v[t]))
                    .collect()
            })
            .collect()
    }
}

pub struct PlannerCase {
    pub instance: InstanceConfig,
    pub pose: Pose,
    pub target: MetaTarget,
    pub region: Region,
}

/// Random (instance, pose, target) triple from the default schematic.
pub fn planner_case(seed: u64) -> PlannerCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let instance = generate(&SchematicParams::with_buttons(n), rng.random()).expect("default schematic generates");
    let room = &instance.room;
    let pose = Pose::ground(
        rng.random_range(0.0..room.width),
        rng.random_range(0.0..room.depth),
        rng.random_range(0.0..360.0),
    );
    let pick = rng.random_range(0..=n);
    let target = if pick == n { MetaTarget::Exit } else { MetaTarget::Button(pick) };
    let region = target_region(&instance, target).unwrap();
    PlannerCase {
        instance,
        pose,
        target,
        region,
    }
}
