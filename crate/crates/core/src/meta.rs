//! Navigation meta-actions: one per button and one for the exit.
//!
//! A meta-action plans a primitive sequence from the current pose when it is
//! invoked, runs it through [`crate::mdp::step`] and reports a single
//! transition whose reward is the sum of the primitive rewards.

use serde::{Deserialize, Serialize};

use crate::error::{ErdError, Result};
use crate::geometry::{Rect, RoomGeometry};
use crate::instance::InstanceConfig;
use crate::mdp::{
    apply_movement, forward_kinematics, heading_vector, is_done, start_state, step_primitive,
    wrap_heading, Action, EnvState, Pose, StepInfo, Transition, MOVE_DISTANCE, TURN_DEGREES,
};
use crate::puzzle::solve_order;

/// Heading error tolerated before the planner turns again: half a turn step.
pub const ALIGN_TOLERANCE_DEGREES: f64 = 5.0;
/// Replanning rounds when movement noise makes an executed plan fall short.
const MAX_REPLANS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaTarget {
    Button(usize),
    Exit,
}

impl MetaTarget {
    /// `meta-01`, `meta-02`, ..., `meta-exit`.
    pub fn label(&self) -> String {
        match self {
            MetaTarget::Button(i) => format!("meta-{:02}", i + 1),
            MetaTarget::Exit => "meta-exit".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaAction {
    pub target: MetaTarget,
    pub label: String,
}

/// Buttons in ascending order, then the exit.
pub fn meta_action_set(instance: &InstanceConfig) -> Vec<MetaAction> {
    (0..instance.num_buttons)
        .map(MetaTarget::Button)
        .chain(std::iter::once(MetaTarget::Exit))
        .map(|target| MetaAction {
            label: target.label(),
            target,
        })
        .collect()
}

/// Where a plan has to end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Disc { x: f64, y: f64, radius: f64 },
    Rect(Rect),
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Region::Disc { x: cx, y: cy, radius } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= radius * radius
            }
            Region::Rect(r) => r.contains(x, y),
        }
    }

    pub fn center(&self) -> (f64, f64) {
        match self {
            Region::Disc { x, y, .. } => (*x, *y),
            Region::Rect(r) => r.center(),
        }
    }

    /// Distance from a point to the region (0 inside).
    pub fn gap(&self, x: f64, y: f64) -> f64 {
        match self {
            Region::Disc { x: cx, y: cy, radius } => ((x - cx).hypot(y - cy) - radius).max(0.0),
            Region::Rect(r) => r.distance_to(x, y),
        }
    }

    /// Point to steer towards: the centre of a disc, or the point of a
    /// rectangle nearest to `(x, y)` pulled up to half a metre inside it.
    pub fn aim_point(&self, x: f64, y: f64) -> (f64, f64) {
        match self {
            Region::Disc { x, y, .. } => (*x, *y),
            Region::Rect(r) => {
                let mx = (0.5f64).min((r.max_x - r.min_x) / 2.0);
                let my = (0.5f64).min((r.max_y - r.min_y) / 2.0);
                (x.clamp(r.min_x + mx, r.max_x - mx), y.clamp(r.min_y + my, r.max_y - my))
            }
        }
    }

    fn intersects_room(&self, room: &RoomGeometry) -> bool {
        let (cx, cy) = self.center();
        let (qx, qy) = room.clamp(cx, cy);
        match self {
            Region::Disc { radius, .. } => (qx - cx).hypot(qy - cy) <= *radius,
            Region::Rect(r) => r.contains(qx, qy) || room.contains(cx, cy),
        }
    }
}

pub fn target_region(instance: &InstanceConfig, target: MetaTarget) -> Result<Region> {
    match target {
        MetaTarget::Exit => Ok(Region::Rect(instance.room.exit_region())),
        MetaTarget::Button(i) => {
            let b = instance.layout.buttons.get(i).ok_or_else(|| {
                ErdError::usage(format!(
                    "button {i} out of range for {} buttons",
                    instance.num_buttons
                ))
            })?;
            Ok(Region::Disc {
                x: b.x,
                y: b.y,
                radius: b.radius,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub actions: Vec<Action>,
    pub predicted_end_pose: Pose,
    pub length: usize,
}

/// Rotate-then-translate navigation.
///
/// A plan is the cheapest route of the form "turn, run, turn, run" when one
/// beats the greedy plan below, otherwise the greedy plan.
///
/// Each iteration picks the translation primitive (forward, back, strafe
/// left/right) whose direction is closest to the bearing of the target, turns
/// until that direction is within [`ALIGN_TOLERANCE_DEGREES`], then translates.
/// Once the target is within one move, a short search over "turn k times, then
/// one translation" finishes the approach; when a disc is closer than one move
/// but cannot be entered directly the planner sidesteps to open an angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Planner {
    /// Maximum plan length.
    pub budget: usize,
    /// Horizontal reach of the pressing point ahead of the base along the
    /// heading (0 when buttons are pressed by the base).
    pub probe_reach: f64,
}

impl Planner {
    pub fn new(budget: usize) -> Self {
        Planner {
            budget,
            probe_reach: 0.0,
        }
    }

    fn probe(&self, pose: &Pose) -> (f64, f64) {
        if self.probe_reach == 0.0 {
            return pose.xy();
        }
        let (hx, hy) = heading_vector(pose.heading);
        (pose.x + self.probe_reach * hx, pose.y + self.probe_reach * hy)
    }

    fn reached(&self, pose: &Pose, region: &Region) -> bool {
        let (x, y) = self.probe(pose);
        region.contains(x, y)
    }

    pub fn plan(&self, pose: &Pose, region: &Region, room: &RoomGeometry) -> Result<Plan> {
        if !region.intersects_room(room) {
            return Err(ErdError::Planning("target region lies outside the room".into()));
        }
        let greedy = self.greedy(pose, region, room)?;
        Ok(match self.two_segments(pose, region, room, greedy.length) {
            Some(actions) => {
                let mut p = *pose;
                for &a in &actions {
                    p = apply_movement(&p, a, room);
                }
                Plan {
                    length: actions.len(),
                    actions,
                    predicted_end_pose: p,
                }
            }
            None => greedy,
        })
    }

    /// Shortest "segment, then segment" route strictly cheaper than `bound`.
    fn two_segments(&self, pose: &Pose, region: &Region, room: &RoomGeometry, bound: usize) -> Option<Vec<Action>> {
        let (qx, qy) = self.probe(pose);
        let max_k = (region.gap(qx, qy) / MOVE_DISTANCE).ceil() as usize + 2;
        let half_turn = (180.0 / TURN_DEGREES) as usize;
        let mut bound = bound;
        let mut best = None;
        for turn in [Action::TurnLeft, Action::TurnRight] {
            let mut start = *pose;
            for j in 0..=half_turn {
                if j > 0 {
                    start = apply_movement(&start, turn, room);
                }
                for mv in TRANSLATIONS {
                    let mut run = Run::new(self, &start, mv);
                    for k in 1..=max_k {
                        if j + k + 1 >= bound || !run.advance(room) {
                            break;
                        }
                        let (px, py) = run.probe();
                        let lower = (region.gap(px, py) / MOVE_DISTANCE).ceil() as usize;
                        if j + k + lower.max(1) >= bound {
                            continue;
                        }
                        let p = Pose {
                            x: run.x,
                            y: run.y,
                            ..start
                        };
                        if let Some(rest) = self.best_segment(&p, region, room, bound - j - k) {
                            bound = j + k + rest.len();
                            let mut v = vec![turn; j];
                            v.extend(std::iter::repeat_n(mv, k));
                            v.extend(rest);
                            best = Some(v);
                        }
                    }
                }
            }
        }
        best
    }

    fn greedy(&self, pose: &Pose, region: &Region, room: &RoomGeometry) -> Result<Plan> {
        let mut actions = Vec::new();
        let mut p = *pose;
        while !self.reached(&p, region) {
            if actions.len() >= self.budget {
                return Err(ErdError::Planning(format!(
                    "no route within {} steps",
                    self.budget
                )));
            }
            let (qx, qy) = self.probe(&p);
            if let Some(segment) = self.best_segment(&p, region, room, usize::MAX) {
                for a in segment {
                    p = apply_movement(&p, a, room);
                    actions.push(a);
                }
                continue;
            }
            if region.gap(qx, qy) <= MOVE_DISTANCE {
                if let Some(finish) = self.finishing_moves(&p, region, room) {
                    for a in finish {
                        p = apply_movement(&p, a, room);
                        actions.push(a);
                    }
                    continue;
                }
            }
            let (cx, cy) = region.aim_point(qx, qy);
            let bearing = wrap_heading((cy - qy).atan2(cx - qx).to_degrees());
            let (axis, offset, err) = best_axis(p.heading, bearing);
            let turn = if self.probe_reach != 0.0 && err.abs() > ALIGN_TOLERANCE_DEGREES {
                self.turns_to_align(&p, region)
            } else {
                err
            };
            let action = if err.abs() > ALIGN_TOLERANCE_DEGREES && turn != 0.0 {
                if turn > 0.0 {
                    Action::TurnLeft
                } else {
                    Action::TurnRight
                }
            } else if matches!(region, Region::Disc { .. }) && (cx - qx).hypot(cy - qy) < MOVE_DISTANCE {
                axis_action(offset + 90.0)
            } else {
                axis
            };
            p = apply_movement(&p, action, room);
            actions.push(action);
        }
        Ok(Plan {
            length: actions.len(),
            actions,
            predicted_end_pose: p,
        })
    }

    /// Signed turn count towards the heading whose own probe position is best
    /// aligned with the target (turning swings the probe, so the bearing
    /// moves with the heading). 0 when the current heading is that heading.
    fn turns_to_align(&self, pose: &Pose, region: &Region) -> f64 {
        let half = (180.0 / TURN_DEGREES) as i32;
        let mut best: Option<(bool, f64, i32)> = None;
        for k in (1 - half)..=half {
            let mut q = *pose;
            q.heading = wrap_heading(pose.heading + TURN_DEGREES * f64::from(k));
            let (px, py) = self.probe(&q);
            let (cx, cy) = region.aim_point(px, py);
            let bearing = wrap_heading((cy - py).atan2(cx - px).to_degrees());
            let err = best_axis(q.heading, bearing).2.abs();
            let aligned = err <= ALIGN_TOLERANCE_DEGREES;
            let better = match best {
                None => true,
                Some((b_aligned, b_err, b_k)) => match (aligned, b_aligned) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => k.abs() < b_k.abs(),
                    (false, false) => err < b_err,
                },
            };
            if better {
                best = Some((aligned, err, k));
            }
        }
        best.map_or(0.0, |(_, _, k)| f64::from(k))
    }

    /// Movement primitive that takes the pressing point out of the region
    /// with the shortest way back in.
    pub fn step_out(&self, pose: &Pose, region: &Region, room: &RoomGeometry) -> Result<Action> {
        Action::MOVEMENTS
            .iter()
            .filter_map(|&a| {
                let out = apply_movement(pose, a, room);
                if self.reached(&out, region) {
                    return None;
                }
                self.plan(&out, region, room).ok().map(|p| (p.length, a))
            })
            .min_by_key(|&(len, _)| len)
            .map(|(_, a)| a)
            .ok_or_else(|| ErdError::Planning("cannot leave the target region".into()))
    }

    /// Cheapest single segment "turn j times one way, then k moves along one
    /// translation axis" that ends inside the region, by total length. Runs
    /// are limited to the gap plus two moves. Only segments shorter than
    /// `bound` are considered.
    fn best_segment(&self, pose: &Pose, region: &Region, room: &RoomGeometry, bound: usize) -> Option<Vec<Action>> {
        let (qx, qy) = self.probe(pose);
        let max_k = (region.gap(qx, qy) / MOVE_DISTANCE).ceil() as usize + 2;
        let half_turn = (180.0 / TURN_DEGREES) as usize;
        let mut best: Option<(usize, Action, usize, Action, usize)> = None;
        let limit = |best: &Option<(usize, Action, usize, Action, usize)>| best.map_or(bound, |b| b.0);
        for turn in [Action::TurnLeft, Action::TurnRight] {
            let mut start = *pose;
            for j in 0..=half_turn {
                if j > 0 {
                    start = apply_movement(&start, turn, room);
                }
                if limit(&best) <= j + 1 {
                    break;
                }
                for mv in TRANSLATIONS {
                    if self.run_misses(&start, mv, max_k, region, room) {
                        continue;
                    }
                    let mut run = Run::new(self, &start, mv);
                    for k in 1..=max_k {
                        if limit(&best) <= j + k || !run.advance(room) {
                            break;
                        }
                        let (px, py) = run.probe();
                        if region.contains(px, py) {
                            best = Some((j + k, turn, j, mv, k));
                            break;
                        }
                    }
                }
            }
        }
        best.map(|(_, turn, j, mv, k)| {
            let mut v = vec![turn; j];
            v.extend(std::iter::repeat_n(mv, k));
            v
        })
    }

    /// True when `k` moves along `mv` provably never put the pressing point in
    /// a disc: the unclamped run stays in the room and its straight path
    /// passes outside the disc.
    fn run_misses(&self, pose: &Pose, mv: Action, k: usize, region: &Region, room: &RoomGeometry) -> bool {
        let Region::Disc { x: cx, y: cy, radius } = *region else {
            return false;
        };
        let (dx, dy) = heading_vector(wrap_heading(pose.heading + mv.translation_offset().unwrap_or(0.0)));
        let len = k as f64 * MOVE_DISTANCE;
        if !room.contains(pose.x + len * dx, pose.y + len * dy) {
            return false;
        }
        let (qx, qy) = self.probe(pose);
        let t = ((cx - qx) * dx + (cy - qy) * dy).clamp(0.0, len);
        (qx + t * dx - cx).hypot(qy + t * dy - cy) > radius + 1e-9
    }

    /// Cheapest "turn k times (optionally), then one translation" that ends
    /// inside the region.
    fn finishing_moves(&self, pose: &Pose, region: &Region, room: &RoomGeometry) -> Option<Vec<Action>> {
        let half_turn = (180.0 / TURN_DEGREES) as usize;
        let mut left = vec![*pose];
        let mut right = vec![*pose];
        for k in 1..=half_turn {
            left.push(apply_movement(&left[k - 1], Action::TurnLeft, room));
            right.push(apply_movement(&right[k - 1], Action::TurnRight, room));
        }
        let build = |turn: Action, k: usize, last: Option<Action>| {
            let mut v = vec![turn; k];
            v.extend(last);
            v
        };
        for cost in 1..=half_turn + 1 {
            // turning alone (only moves the probe when it has reach)
            if self.probe_reach != 0.0 && cost <= half_turn {
                if self.reached(&left[cost], region) {
                    return Some(build(Action::TurnLeft, cost, None));
                }
                if self.reached(&right[cost], region) {
                    return Some(build(Action::TurnRight, cost, None));
                }
            }
            let k = cost - 1;
            for (turn, poses) in [(Action::TurnLeft, &left), (Action::TurnRight, &right)] {
                for mv in TRANSLATIONS {
                    let end = apply_movement(&poses[k], mv, room);
                    if self.reached(&end, region) {
                        return Some(build(turn, k, Some(mv)));
                    }
                }
                if k == 0 {
                    break;
                }
            }
        }
        None
    }
}

/// Straight run along one translation axis. The heading is fixed, so the
/// direction and probe offset are computed once; each step matches
/// `apply_movement` exactly.
struct Run {
    x: f64,
    y: f64,
    dx: f64,
    dy: f64,
    ox: f64,
    oy: f64,
}

impl Run {
    fn new(planner: &Planner, pose: &Pose, mv: Action) -> Self {
        let (dx, dy) = heading_vector(wrap_heading(pose.heading + mv.translation_offset().unwrap_or(0.0)));
        let (ox, oy) = if planner.probe_reach == 0.0 {
            (0.0, 0.0)
        } else {
            let (hx, hy) = heading_vector(pose.heading);
            (planner.probe_reach * hx, planner.probe_reach * hy)
        };
        Run {
            x: pose.x,
            y: pose.y,
            dx,
            dy,
            ox,
            oy,
        }
    }

    /// One move; false when a wall blocks it entirely.
    fn advance(&mut self, room: &RoomGeometry) -> bool {
        let (x, y) = room.clamp(self.x + MOVE_DISTANCE * self.dx, self.y + MOVE_DISTANCE * self.dy);
        if (x, y) == (self.x, self.y) {
            return false;
        }
        self.x = x;
        self.y = y;
        true
    }

    fn probe(&self) -> (f64, f64) {
        (self.x + self.ox, self.y + self.oy)
    }
}

const TRANSLATIONS: [Action; 4] = [
    Action::MoveForward,
    Action::MoveBack,
    Action::StrafeLeft,
    Action::StrafeRight,
];

/// Signed difference `to - from` in `(-180, 180]`.
fn angle_diff(to: f64, from: f64) -> f64 {
    let d = (to - from).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

fn axis_action(offset: f64) -> Action {
    match wrap_heading(offset).round() as i64 {
        0 => Action::MoveForward,
        90 => Action::StrafeLeft,
        180 => Action::MoveBack,
        _ => Action::StrafeRight,
    }
}

/// Translation primitive closest to `bearing`: `(action, offset, error)`.
fn best_axis(heading: f64, bearing: f64) -> (Action, f64, f64) {
    let mut best = (Action::MoveForward, 0.0, f64::INFINITY);
    for a in TRANSLATIONS {
        let offset = a.translation_offset().unwrap_or(0.0);
        let err = angle_diff(bearing, wrap_heading(heading + offset));
        if err.abs() < best.2.abs() {
            best = (a, offset, err);
        }
    }
    best
}

/// Convenience wrapper: plan towards a disc or rectangle with the default
/// budget of one episode.
pub fn plan(pose: &Pose, target: &Region, room: &RoomGeometry) -> Result<Plan> {
    Planner::new(crate::instance::DEFAULT_MAX_EPISODE_STEPS as usize).plan(pose, target, room)
}

/// Planner configured for the current state: the budget is the episode cap
/// (at least 1000), so plans longer than the remaining steps get truncated
/// and, for button targets pressed by the effector, the probe is the arm's
/// horizontal reach.
pub fn planner_for(state: &EnvState, instance: &InstanceConfig, target: MetaTarget) -> Planner {
    let mut planner = Planner::new((instance.max_episode_steps as usize).max(1000));
    if instance.arm.press_with_effector && matches!(target, MetaTarget::Button(_)) {
        if let Ok([x, y, _]) = forward_kinematics(&state.pose, &state.joints, &instance.arm) {
            planner.probe_reach = (x - state.pose.x).hypot(y - state.pose.y);
        }
    }
    planner
}

/// Whether the meta-action has nothing to do: the pressing point (or the base
/// for the exit) is already inside the target region, and for a button the
/// button is already on.
pub fn target_reached(state: &EnvState, instance: &InstanceConfig, target: MetaTarget) -> bool {
    let inside = match target_region(instance, target) {
        Ok(region) => planner_for(state, instance, target).reached(&state.pose, &region),
        Err(_) => false,
    };
    inside
        && match target {
            MetaTarget::Button(i) => state.puzzle.get(i),
            MetaTarget::Exit => true,
        }
}

struct Execution<'a> {
    instance: &'a InstanceConfig,
    current: EnvState,
    reward: f64,
    info: StepInfo,
    done: bool,
}

impl Execution<'_> {
    fn run(&mut self, action: Action) {
        let t = step_primitive(&self.current, action, self.instance);
        self.reward += t.reward;
        self.info.primitive_steps += 1;
        self.info.touched.extend(t.info.touched);
        self.info.touched_eligible.extend(t.info.touched_eligible);
        self.info.pressed.extend(t.info.pressed);
        self.info.termination = t.info.termination;
        self.current = t.next;
        self.done = t.done;
    }
}

/// Plan from the current pose and run the plan primitive by primitive.
///
/// The returned reward is the sum of the primitive rewards, `steps_taken`
/// advances by the number of primitives, and execution stops early when the
/// episode ends (exit or step cap). Presses fire on entry, so a button target
/// whose disc already holds the pressing point while the button is off is
/// left with one step and re-entered.
pub fn execute_meta(state: &EnvState, target: MetaTarget, instance: &InstanceConfig) -> Result<Transition> {
    if is_done(state, instance) {
        return Err(ErdError::usage("episode is over; reset before stepping"));
    }
    let region = target_region(instance, target)?;
    let planner = planner_for(state, instance, target);

    let mut exec = Execution {
        instance,
        current: state.clone(),
        reward: 0.0,
        info: StepInfo::default(),
        done: false,
    };
    if let MetaTarget::Button(i) = target {
        if !state.puzzle.get(i) && planner.reached(&state.pose, &region) {
            exec.run(planner.step_out(&state.pose, &region, &instance.room)?);
        }
    }
    for _ in 0..MAX_REPLANS {
        if exec.done {
            break;
        }
        let plan = planner.plan(&exec.current.pose, &region, &instance.room)?;
        if plan.actions.is_empty() {
            break;
        }
        for action in plan.actions {
            exec.run(action);
            if exec.done {
                break;
            }
        }
        if planner.reached(&exec.current.pose, &region) {
            break;
        }
    }
    Ok(Transition {
        next: exec.current,
        reward: exec.reward,
        done: exec.done,
        info: exec.info,
    })
}

/// The planner's route from the configured start pose: meta-actions through
/// the solve order, then the exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub steps: u32,
    pub reward: f64,
    pub targets: Vec<MetaTarget>,
}

pub fn optimal_route(instance: &InstanceConfig) -> Result<Route> {
    let mut noiseless = instance.clone();
    noiseless.movement_noise_std = 0.0;
    noiseless.randomize_start = false;
    let instance = &noiseless;

    let mut state = start_state(instance, 0);
    let mut reward = 0.0;
    let mut targets = Vec::new();
    for b in solve_order(&instance.dag)? {
        if state.puzzle.get(b) {
            continue;
        }
        let t = execute_meta(&state, MetaTarget::Button(b), instance)?;
        reward += t.reward;
        state = t.next;
        targets.push(MetaTarget::Button(b));
        if !state.puzzle.get(b) {
            return Err(ErdError::Planning(format!("route did not press button {b}")));
        }
        if t.done && !state.exited {
            return Err(ErdError::Planning("route hit the step cap".into()));
        }
    }
    if !state.exited {
        let t = execute_meta(&state, MetaTarget::Exit, instance)?;
        reward += t.reward;
        state = t.next;
        targets.push(MetaTarget::Exit);
    }
    if !state.exited {
        return Err(ErdError::Planning("route did not reach the exit".into()));
    }
    Ok(Route {
        steps: state.steps_taken,
        reward,
        targets,
    })
}
