//! State, actions and single-step dynamics of the escape room.
//!
//! Every function here is pure: the next state depends only on the current
//! state, the action and the instance. Movement noise, when enabled, is drawn
//! from a stream keyed by the episode seed and step index so that it too is a
//! function of the inputs.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ErdError, Result};
use crate::geometry::RoomGeometry;
use crate::instance::{ArmConfig, InstanceConfig};
use crate::meta::MetaTarget;
use crate::puzzle::{apply_press, eligible_unchecked, is_unlocked, PuzzleBits};
use crate::rng::{stream_rng, Stream};

/// Translation per move/strafe, meters.
pub const MOVE_DISTANCE: f64 = 1.0;
/// Rotation per turn, degrees.
pub const TURN_DEGREES: f64 = 10.0;
/// Joint increment, degrees.
pub const JOINT_DEGREES: f64 = 10.0;
pub const JOINT_LIMIT: f64 = 180.0;
/// Number of movement primitives; joint primitives follow.
pub const MOVEMENT_ACTIONS: usize = 6;

/// Agent pose. Heading 0 points along +x, positive is counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Pose {
    pub fn ground(x: f64, y: f64, heading: f64) -> Self {
        Pose {
            x,
            y,
            z: 0.0,
            heading: wrap_heading(heading),
            pitch: 0.0,
            roll: 0.0,
        }
    }

    pub fn xy(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Map any angle into `[0, 360)`.
pub fn wrap_heading(degrees: f64) -> f64 {
    let h = degrees.rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// Unit vector for a heading, exact on the four axes.
pub fn heading_vector(degrees: f64) -> (f64, f64) {
    match degrees {
        d if d == 0.0 => (1.0, 0.0),
        d if d == 90.0 => (0.0, 1.0),
        d if d == 180.0 => (-1.0, 0.0),
        d if d == 270.0 => (0.0, -1.0),
        d => {
            let (s, c) = d.to_radians().sin_cos();
            (c, s)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        JointVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveForward,
    MoveBack,
    StrafeLeft,
    StrafeRight,
    TurnLeft,
    TurnRight,
    JointInc(usize),
    JointDec(usize),
    Meta(MetaTarget),
}

impl Action {
    pub const MOVEMENTS: [Action; MOVEMENT_ACTIONS] = [
        Action::MoveForward,
        Action::MoveBack,
        Action::StrafeLeft,
        Action::StrafeRight,
        Action::TurnLeft,
        Action::TurnRight,
    ];

    pub fn is_movement(&self) -> bool {
        Action::MOVEMENTS.contains(self)
    }

    pub fn is_meta(&self) -> bool {
        matches!(self, Action::Meta(_))
    }

    /// Translation direction relative to the heading, in degrees, for the four
    /// translating primitives.
    pub fn translation_offset(&self) -> Option<f64> {
        match self {
            Action::MoveForward => Some(0.0),
            Action::StrafeLeft => Some(90.0),
            Action::MoveBack => Some(180.0),
            Action::StrafeRight => Some(270.0),
            _ => None,
        }
    }
}

/// Primitive action count for `num_joints` joints.
pub fn primitive_action_count(num_joints: usize) -> usize {
    MOVEMENT_ACTIONS + 2 * num_joints
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvState {
    pub pose: Pose,
    pub joints: JointVector,
    pub puzzle: PuzzleBits,
    pub steps_taken: u32,
    pub exited: bool,
    /// Seed of the current episode; keys the movement-noise stream.
    pub episode_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    #[serde(rename = "exit")]
    Exit,
    #[serde(rename = "step-cap")]
    StepCap,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Exit => "exit",
            Termination::StepCap => "step-cap",
        }
    }
}

/// Diagnostics attached to every transition.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepInfo {
    /// Primitive steps consumed (1 for a primitive, k for a meta-action).
    pub primitive_steps: u32,
    /// Buttons whose disc the pressing point entered.
    pub touched: Vec<usize>,
    /// Eligibility of each touched button at the moment it was entered.
    pub touched_eligible: Vec<bool>,
    /// Buttons that latched on.
    pub pressed: Vec<usize>,
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub next: EnvState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

pub fn is_done(state: &EnvState, instance: &InstanceConfig) -> bool {
    state.exited || state.steps_taken >= instance.max_episode_steps
}

/// Start a new episode.
pub fn reset(instance: &InstanceConfig, episode_seed: u64) -> Result<EnvState> {
    instance.check_structure()?;
    Ok(start_state(instance, episode_seed))
}

pub(crate) fn start_state(instance: &InstanceConfig, episode_seed: u64) -> EnvState {
    let pose = if instance.randomize_start {
        random_start(instance, episode_seed)
    } else {
        instance.start_pose
    };
    EnvState {
        pose,
        joints: JointVector::zeros(instance.num_joints),
        puzzle: PuzzleBits::new(instance.num_buttons),
        steps_taken: 0,
        exited: false,
        episode_seed,
    }
}

fn random_start(instance: &InstanceConfig, episode_seed: u64) -> Pose {
    use rand::Rng;
    let mut rng = stream_rng(episode_seed, Stream::Start, 0);
    let room = &instance.room;
    let exit = room.exit_region();
    for _ in 0..10_000 {
        let x = rng.random_range(1.0..=room.width - 1.0);
        let y = rng.random_range(1.0..=room.depth - 1.0);
        let blocked = exit.contains(x, y) || instance.layout.touch_mask(x, y) != 0;
        if !blocked {
            let heading = TURN_DEGREES * rng.random_range(0..36) as f64;
            return Pose::ground(x, y, heading);
        }
    }
    instance.start_pose
}

/// Apply one movement primitive with nominal displacement. Joint and meta
/// actions leave the pose unchanged.
pub fn apply_movement(pose: &Pose, action: Action, room: &RoomGeometry) -> Pose {
    move_by(pose, action, room, MOVE_DISTANCE)
}

pub(crate) fn move_by(pose: &Pose, action: Action, room: &RoomGeometry, distance: f64) -> Pose {
    let mut next = *pose;
    match action {
        Action::TurnLeft => next.heading = wrap_heading(pose.heading + TURN_DEGREES),
        Action::TurnRight => next.heading = wrap_heading(pose.heading - TURN_DEGREES),
        _ => {
            if let Some(offset) = action.translation_offset() {
                let (dx, dy) = heading_vector(wrap_heading(pose.heading + offset));
                let (x, y) = room.clamp(pose.x + distance * dx, pose.y + distance * dy);
                next.x = x;
                next.y = y;
            }
        }
    }
    next
}

/// Move joint `joint_index` by `direction` (±1) times the joint increment.
pub fn apply_joint(joints: &JointVector, joint_index: usize, direction: i32) -> Result<JointVector> {
    if joint_index >= joints.len() {
        return Err(ErdError::usage(format!(
            "joint {joint_index} out of range for {} joints",
            joints.len()
        )));
    }
    let mut out = joints.clone();
    let step = JOINT_DEGREES * direction.signum() as f64;
    out.0[joint_index] = (out.0[joint_index] + step).clamp(-JOINT_LIMIT, JOINT_LIMIT);
    Ok(out)
}

/// End-effector position of the arm.
///
/// The chain is mounted `arm.mount_height` above the agent base and moves in
/// the vertical plane that contains the heading. Joint angles are relative
/// elevations: each link's absolute elevation is the running sum of the angles
/// up to it, 0 being horizontal and pointing along the heading.
pub fn forward_kinematics(pose: &Pose, joints: &JointVector, arm: &ArmConfig) -> Result<[f64; 3]> {
    if arm.link_lengths.len() != joints.len() {
        return Err(ErdError::config(
            "arm.link_lengths",
            format!(
                "{} links for {} joints",
                arm.link_lengths.len(),
                joints.len()
            ),
        ));
    }
    let mut elevation = 0.0f64;
    let mut reach = 0.0f64;
    let mut height = 0.0f64;
    for (angle, length) in joints.0.iter().zip(&arm.link_lengths) {
        elevation += angle;
        let (s, c) = elevation.to_radians().sin_cos();
        reach += length * c;
        height += length * s;
    }
    let (hx, hy) = heading_vector(pose.heading);
    Ok([
        pose.x + reach * hx,
        pose.y + reach * hy,
        pose.z + arm.mount_height + height,
    ])
}

/// The point used for button contact: the effector when the instance presses
/// with the arm, the base otherwise.
pub(crate) fn pressing_point(pose: &Pose, joints: &JointVector, instance: &InstanceConfig) -> (f64, f64) {
    if instance.arm.press_with_effector {
        match forward_kinematics(pose, joints, &instance.arm) {
            Ok([x, y, _]) => (x, y),
            Err(_) => pose.xy(),
        }
    } else {
        pose.xy()
    }
}

/// Execute one primitive step.
///
/// Order: movement or joint update, then press detection on buttons whose
/// disc the pressing point entered, then the exit check. The reward is the
/// step reward plus the exit reward on the exiting step.
pub fn step(state: &EnvState, action: Action, instance: &InstanceConfig) -> Result<Transition> {
    if is_done(state, instance) {
        return Err(ErdError::usage("episode is over; reset before stepping"));
    }
    match action {
        Action::Meta(_) => Err(ErdError::usage(
            "meta-actions are executed with meta::execute_meta",
        )),
        Action::JointInc(j) | Action::JointDec(j) if j >= instance.num_joints => Err(
            ErdError::usage(format!("joint {j} out of range for {} joints", instance.num_joints)),
        ),
        _ => Ok(step_primitive(state, action, instance)),
    }
}

pub(crate) fn step_primitive(state: &EnvState, action: Action, instance: &InstanceConfig) -> Transition {
    let mut pose = state.pose;
    let mut joints = state.joints.clone();
    match action {
        Action::JointInc(j) | Action::JointDec(j) => {
            let dir = if matches!(action, Action::JointInc(_)) { 1.0 } else { -1.0 };
            joints.0[j] = (joints.0[j] + dir * JOINT_DEGREES).clamp(-JOINT_LIMIT, JOINT_LIMIT);
        }
        _ => {
            let distance = if instance.movement_noise_std > 0.0 && action.translation_offset().is_some() {
                noisy_distance(state, instance.movement_noise_std)
            } else {
                MOVE_DISTANCE
            };
            pose = move_by(&state.pose, action, &instance.room, distance);
        }
    }

    let mut info = StepInfo {
        primitive_steps: 1,
        ..StepInfo::default()
    };
    let mut puzzle = state.puzzle;
    let (px, py) = pressing_point(&state.pose, &state.joints, instance);
    let (nx, ny) = pressing_point(&pose, &joints, instance);
    let before = instance.layout.touch_mask(px, py);
    let mut entered = instance.layout.touch_mask(nx, ny) & !before;
    while entered != 0 {
        let b = entered.trailing_zeros() as usize;
        entered &= entered - 1;
        let eligible = eligible_unchecked(&instance.dag, &puzzle, b);
        info.touched.push(b);
        info.touched_eligible.push(eligible);
        if eligible {
            puzzle = apply_press(puzzle, b, &instance.dag);
            info.pressed.push(b);
        }
    }

    let exited = is_unlocked(&puzzle, &instance.dag)
        && instance.room.exit_region().contains(pose.x, pose.y);
    let steps_taken = state.steps_taken + 1;
    let mut reward = instance.step_reward;
    if exited {
        reward += instance.exit_reward;
        info.termination = Some(Termination::Exit);
    } else if steps_taken >= instance.max_episode_steps {
        info.termination = Some(Termination::StepCap);
    }
    let next = EnvState {
        pose,
        joints,
        puzzle,
        steps_taken,
        exited,
        episode_seed: state.episode_seed,
    };
    Transition {
        reward,
        done: info.termination.is_some(),
        next,
        info,
    }
}

fn noisy_distance(state: &EnvState, std: f64) -> f64 {
    let mut rng = stream_rng(state.episode_seed, Stream::Noise, u64::from(state.steps_taken));
    match Normal::new(MOVE_DISTANCE, std) {
        Ok(normal) => normal.sample(&mut rng).max(0.0),
        Err(_) => MOVE_DISTANCE,
    }
}

/// Bounds used to rescale an episode's return to a percentage.
///
/// The minimum is a capped episode with no exit; the maximum is an exit after
/// the planner's route length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnScale {
    pub min: f64,
    pub max: f64,
    pub optimal_steps: u32,
}

impl ReturnScale {
    pub fn new(instance: &InstanceConfig, optimal_steps: u32) -> Result<Self> {
        let min = instance.step_reward * f64::from(instance.max_episode_steps);
        let max = instance.exit_reward + instance.step_reward * f64::from(optimal_steps);
        if !(min < max) {
            return Err(ErdError::config(
                "max_episode_steps",
                format!("degenerate return range: min {min} >= max {max}"),
            ));
        }
        Ok(ReturnScale {
            min,
            max,
            optimal_steps,
        })
    }

    /// Uses the planner's route through the solve order as the optimum.
    pub fn for_instance(instance: &InstanceConfig) -> Result<Self> {
        let route = crate::meta::optimal_route(instance)?;
        ReturnScale::new(instance, route.steps)
    }

    pub fn normalize(&self, cumulative_reward: f64) -> f64 {
        (100.0 * (cumulative_reward - self.min) / (self.max - self.min)).clamp(0.0, 100.0)
    }
}

/// Percentage of the achievable return range, clamped to `[0, 100]`.
pub fn normalize_return(cumulative_reward: f64, instance: &InstanceConfig) -> Result<f64> {
    Ok(ReturnScale::for_instance(instance)?.normalize(cumulative_reward))
}
