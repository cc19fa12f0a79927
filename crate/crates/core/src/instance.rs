//! Concrete, validated and serializable escape room instances.
//!
//! An instance is generated from [`SchematicParams`] and a seed. Sub-streams
//! for the DAG and the layout are derived from the seed (see [`crate::rng`]),
//! so generation is a pure function of `(params, seed)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ErdError, Result};
use crate::geometry::{RoomGeometry, Wall};
use crate::mdp::Pose;
use crate::puzzle::{
    generate_dag_with, solve_order, Button, ButtonDag, ButtonLayout, BUTTON_LIMIT,
    DEFAULT_EDGE_PROBABILITY, DEFAULT_MAX_BUTTONS,
};
use crate::rng::{derive_seed, stream_rng, Stream};

pub const SCHEMA_VERSION: u64 = 1;
pub const DEFAULT_MAX_EPISODE_STEPS: u32 = 1000;
/// Layout rejection-sampling budget.
pub const MAX_LAYOUT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub link_lengths: Vec<f64>,
    pub mount_height: f64,
    /// Buttons are pressed by the end effector instead of the base.
    pub press_with_effector: bool,
}

impl ArmConfig {
    pub fn uniform(num_joints: usize, link_length: f64) -> Self {
        ArmConfig {
            link_lengths: vec![link_length; num_joints],
            mount_height: 0.5,
            press_with_effector: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub schema_version: u64,
    pub instance_seed: u64,
    pub room: RoomGeometry,
    pub start_pose: Pose,
    /// Sample the start pose from the episode seed on every reset.
    pub randomize_start: bool,
    pub num_buttons: usize,
    pub dag: ButtonDag,
    pub layout: ButtonLayout,
    pub num_joints: usize,
    pub arm: ArmConfig,
    pub max_episode_steps: u32,
    pub step_reward: f64,
    pub exit_reward: f64,
    pub movement_noise_std: f64,
    pub dag_edge_probability: f64,
    /// Reserved for continuous puzzle dimensions; no shipped puzzle uses any.
    pub continuous_puzzle_dims: usize,
}

/// One failed check. `check` names the invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub check: String,
    pub detail: String,
}

impl Violation {
    fn new(check: impl Into<String>, detail: impl Into<String>) -> Self {
        Violation {
            check: check.into(),
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.check, self.detail)
    }
}

impl InstanceConfig {
    /// Short stable identifier: the first 16 hex digits of the SHA-256 of the
    /// serialized document.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(serialize(self).as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cheap consistency checks (everything but solvability and reachability).
    pub fn structural_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(Violation::new(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        for (field, msg) in self.room.problems() {
            out.push(Violation::new(field, msg));
        }
        let room_ok = self.room.problems().is_empty();

        if self.num_buttons == 0 || self.num_buttons > BUTTON_LIMIT {
            out.push(Violation::new(
                "num_buttons",
                format!("must be in 1..={BUTTON_LIMIT}, got {}", self.num_buttons),
            ));
        }
        if self.dag.num_buttons != self.num_buttons {
            out.push(Violation::new(
                "dag.num_buttons",
                format!("dag has {} buttons, instance has {}", self.dag.num_buttons, self.num_buttons),
            ));
        }
        if self.layout.len() != self.num_buttons {
            out.push(Violation::new(
                "layout.buttons",
                format!("layout has {} buttons, instance has {}", self.layout.len(), self.num_buttons),
            ));
        }
        for (check, msg) in self.dag.problems() {
            out.push(Violation::new(check, msg));
        }
        if self.arm.link_lengths.len() != self.num_joints {
            out.push(Violation::new(
                "arm.link_lengths",
                format!("{} links for {} joints", self.arm.link_lengths.len(), self.num_joints),
            ));
        }
        if self.arm.link_lengths.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            out.push(Violation::new("arm.link_lengths", "lengths must be finite and non-negative"));
        }
        if self.max_episode_steps < 1 {
            out.push(Violation::new("max_episode_steps", "must be at least 1"));
        }
        if !(self.exit_reward > 0.0 && self.step_reward < 0.0) {
            out.push(Violation::new(
                "rewards",
                format!(
                    "need exit_reward > 0 > step_reward, got {} and {}",
                    self.exit_reward, self.step_reward
                ),
            ));
        }
        if !(self.movement_noise_std.is_finite() && self.movement_noise_std >= 0.0) {
            out.push(Violation::new("movement_noise_std", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.dag_edge_probability) {
            out.push(Violation::new("dag_edge_probability", "must lie in [0, 1]"));
        }
        if self.continuous_puzzle_dims != 0 {
            out.push(Violation::new(
                "continuous_puzzle_dims",
                "no shipped puzzle has continuous dimensions",
            ));
        }

        if room_ok {
            let exit = self.room.exit_region();
            let p = &self.start_pose;
            if !self.room.contains(p.x, p.y) {
                out.push(Violation::new("start_pose", "start pose lies outside the room"));
            } else if exit.contains(p.x, p.y) {
                out.push(Violation::new("start_pose", "start pose lies in the exit strip"));
            }
            if !(0.0..360.0).contains(&p.heading) {
                out.push(Violation::new("start_pose", "heading must be in [0, 360)"));
            }
            for (i, b) in self.layout.buttons.iter().enumerate() {
                if !(b.radius.is_finite() && b.radius > 0.0) {
                    out.push(Violation::new("layout/radius", format!("button {i} radius must be positive")));
                }
                let inside = b.x > 0.0 && b.x < self.room.width && b.y > 0.0 && b.y < self.room.depth;
                if !inside {
                    out.push(Violation::new("layout/inside room", format!("button {i} centre is not inside the room")));
                }
                if exit.intersects_disc(b.x, b.y, b.radius) {
                    out.push(Violation::new("layout/exit overlap", format!("button {i} overlaps the exit strip")));
                }
                if b.contains(p.x, p.y) {
                    out.push(Violation::new("layout/start overlap", format!("button {i} covers the start pose")));
                }
                for (j, other) in self.layout.buttons.iter().enumerate().skip(i + 1) {
                    if (b.x - other.x).hypot(b.y - other.y) <= b.radius + other.radius {
                        out.push(Violation::new("layout/overlap", format!("buttons {i} and {j} overlap")));
                    }
                }
            }
        }
        out
    }

    /// First structural violation as a configuration error.
    pub fn check_structure(&self) -> Result<()> {
        match self.structural_violations().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(ErdError::config(v.check, v.detail)),
        }
    }
}

/// Every invariant of an instance, plus solvability (the DAG has a solve order)
/// and reachability (the planner's route through the solve order and out of
/// the exit fits within the episode cap). Empty means valid.
pub fn validate(instance: &InstanceConfig) -> Vec<Violation> {
    let mut out = instance.structural_violations();
    if !out.is_empty() {
        return out;
    }
    if let Err(e) = solve_order(&instance.dag) {
        out.push(Violation::new("solvability", e.to_string()));
        return out;
    }
    match crate::meta::optimal_route(instance) {
        Ok(route) if route.steps < instance.max_episode_steps => {}
        Ok(route) => out.push(Violation::new(
            "reachability",
            format!(
                "route needs {} steps, cap is {}",
                route.steps, instance.max_episode_steps
            ),
        )),
        Err(e) => out.push(Violation::new("reachability", e.to_string())),
    }
    out
}

/// Parameters of the domain schematic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchematicParams {
    pub num_buttons: usize,
    pub max_buttons: usize,
    pub room_width: f64,
    pub room_depth: f64,
    pub exit_wall: Wall,
    pub exit_half_width: f64,
    pub num_joints: usize,
    pub link_length: f64,
    pub press_with_effector: bool,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Keep button centres this far from every wall.
    pub margin: f64,
    pub dag_edge_probability: f64,
    pub max_episode_steps: u32,
    pub step_reward: f64,
    pub exit_reward: f64,
    pub movement_noise_std: f64,
    pub randomize_start: bool,
}

impl Default for SchematicParams {
    fn default() -> Self {
        SchematicParams {
            num_buttons: 1,
            max_buttons: DEFAULT_MAX_BUTTONS,
            room_width: 10.0,
            room_depth: 10.0,
            exit_wall: Wall::N,
            exit_half_width: 1.0,
            num_joints: 0,
            link_length: 0.5,
            press_with_effector: false,
            radius_min: 0.4,
            radius_max: 0.8,
            margin: 1.0,
            dag_edge_probability: DEFAULT_EDGE_PROBABILITY,
            max_episode_steps: DEFAULT_MAX_EPISODE_STEPS,
            step_reward: -1.0,
            exit_reward: 100.0,
            movement_noise_std: 0.0,
            randomize_start: false,
        }
    }
}

impl SchematicParams {
    pub fn with_buttons(num_buttons: usize) -> Self {
        SchematicParams {
            num_buttons,
            ..SchematicParams::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.num_buttons < 1 {
            return Err(ErdError::config("num_buttons", "at least one button is required"));
        }
        if !(self.room_width >= 4.0 && self.room_depth >= 4.0) {
            return Err(ErdError::config("room", "room must be at least 4 m x 4 m"));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return Err(ErdError::config("radius_min", "need 0 < radius_min <= radius_max"));
        }
        if !(self.margin >= 0.0 && 2.0 * self.margin < self.room_width.min(self.room_depth)) {
            return Err(ErdError::config("margin", "margin leaves no interior"));
        }
        Ok(())
    }
}

/// Generate one instance.
pub fn generate(params: &SchematicParams, seed: u64) -> Result<InstanceConfig> {
    params.check()?;
    let dag = generate_dag_with(
        params.num_buttons,
        derive_seed(seed, Stream::Dag, 0),
        params.dag_edge_probability,
        params.max_buttons,
    )?;
    let mut room = RoomGeometry::new(params.room_width, params.room_depth, params.exit_wall);
    room.exit_half_width = params.exit_half_width;
    room.exit_center_offset = 0.5 * room.wall_length(params.exit_wall);
    let start_pose = Pose::ground(0.5 * params.room_width, 0.5 * params.room_depth, 0.0);

    let mut rng = stream_rng(seed, Stream::Layout, 0);
    let exit = room.exit_region();
    let n = params.num_buttons;
    let mut layout = None;
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let buttons: Vec<Button> = (0..n)
            .map(|_| Button {
                x: rng.random_range(params.margin..=params.room_width - params.margin),
                y: rng.random_range(params.margin..=params.room_depth - params.margin),
                radius: rng.random_range(params.radius_min..=params.radius_max),
            })
            .collect();
        let ok = buttons.iter().enumerate().all(|(i, b)| {
            !exit.intersects_disc(b.x, b.y, b.radius)
                && (b.x - start_pose.x).hypot(b.y - start_pose.y) > b.radius
                && buttons[i + 1..]
                    .iter()
                    .all(|o| (b.x - o.x).hypot(b.y - o.y) > b.radius + o.radius)
        });
        if ok {
            layout = Some(ButtonLayout { buttons });
            break;
        }
    }
    let layout = layout.ok_or_else(|| {
        ErdError::Generation(format!(
            "no valid layout for {n} buttons after {MAX_LAYOUT_ATTEMPTS} attempts; use a larger room"
        ))
    })?;

    let instance = InstanceConfig {
        schema_version: SCHEMA_VERSION,
        instance_seed: seed,
        room,
        start_pose,
        randomize_start: params.randomize_start,
        num_buttons: n,
        dag,
        layout,
        num_joints: params.num_joints,
        arm: ArmConfig {
            press_with_effector: params.press_with_effector,
            ..ArmConfig::uniform(params.num_joints, params.link_length)
        },
        max_episode_steps: params.max_episode_steps,
        step_reward: params.step_reward,
        exit_reward: params.exit_reward,
        movement_noise_std: params.movement_noise_std,
        dag_edge_probability: params.dag_edge_probability,
        continuous_puzzle_dims: 0,
    };
    let violations = validate(&instance);
    if let Some(v) = violations.first() {
        return Err(ErdError::Generation(format!("generated instance is invalid: {v}")));
    }
    Ok(instance)
}

/// Pretty-printed JSON document with a trailing newline.
pub fn serialize(instance: &InstanceConfig) -> String {
    let mut text = serde_json::to_string_pretty(instance).expect("instances always serialize");
    text.push('\n');
    text
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u64>,
}

pub fn deserialize(text: &str) -> Result<InstanceConfig> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| ErdError::from_json(&e))?;
    match probe.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(found) => {
            return Err(ErdError::Version {
                found,
                expected: SCHEMA_VERSION,
            })
        }
        None => {
            return Err(ErdError::Parse {
                line: 1,
                column: 1,
                message: "missing field `schema_version`".into(),
            })
        }
    }
    serde_json::from_str(text).map_err(|e| ErdError::from_json(&e))
}

fn room_instance(size: f64, start: Pose, dag: ButtonDag, buttons: Vec<Button>) -> InstanceConfig {
    InstanceConfig {
        schema_version: SCHEMA_VERSION,
        instance_seed: 0,
        room: RoomGeometry::new(size, size, Wall::E),
        start_pose: start,
        randomize_start: false,
        num_buttons: buttons.len(),
        dag,
        layout: ButtonLayout { buttons },
        num_joints: 0,
        arm: ArmConfig::uniform(0, 0.5),
        max_episode_steps: DEFAULT_MAX_EPISODE_STEPS,
        step_reward: -1.0,
        exit_reward: 100.0,
        movement_noise_std: 0.0,
        dag_edge_probability: DEFAULT_EDGE_PROBABILITY,
        continuous_puzzle_dims: 0,
    }
}

/// Baseline instance: a 10 m x 10 m room, exit on the east wall, one button on
/// the straight line between the start and the exit. Optimal route: 8 steps.
pub fn canonical_one_button() -> InstanceConfig {
    room_instance(
        10.0,
        Pose::ground(1.0, 5.0, 0.0),
        ButtonDag {
            num_buttons: 1,
            edges: vec![],
            goal_index: 0,
        },
        vec![Button {
            x: 5.0,
            y: 5.0,
            radius: 0.5,
        }],
    )
}

/// Ordered two-button instance in a 30 m x 30 m hall: button 0, in the far
/// south-west corner, must be on before the goal button 1 can be pressed. The
/// start, goal button and exit repeat the one-button geometry at the east end.
pub fn canonical_two_button() -> InstanceConfig {
    room_instance(
        30.0,
        Pose::ground(21.0, 15.0, 0.0),
        ButtonDag {
            num_buttons: 2,
            edges: vec![(0, 1)],
            goal_index: 1,
        },
        vec![
            Button {
                x: 3.0,
                y: 3.0,
                radius: 0.4,
            },
            Button {
                x: 25.0,
                y: 15.0,
                radius: 0.5,
            },
        ],
    )
}

/// Named instances available to the CLI, configs and the session service.
pub fn canonical(name: &str) -> Option<InstanceConfig> {
    match name {
        "one-button" => Some(canonical_one_button()),
        "two-button" => Some(canonical_two_button()),
        _ => None,
    }
}
