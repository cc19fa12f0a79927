//! A stateful, Gym-style wrapper around the pure step functions.

use std::sync::Arc;

use crate::error::{ErdError, Result};
use crate::instance::InstanceConfig;
use crate::mdp::{self, Action, EnvState, Transition, MOVEMENT_ACTIONS};
use crate::meta::{self, MetaTarget};

/// Flat indexing of the action set: the six movement primitives, then
/// `JointInc(j)`/`JointDec(j)` pairs, then (when enabled) one meta-action per
/// button and the exit meta-action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace {
    pub num_joints: usize,
    pub num_buttons: usize,
    pub meta_enabled: bool,
}

impl ActionSpace {
    pub fn for_instance(instance: &InstanceConfig, meta_enabled: bool) -> Self {
        ActionSpace {
            num_joints: instance.num_joints,
            num_buttons: instance.num_buttons,
            meta_enabled,
        }
    }

    pub fn primitive_count(&self) -> usize {
        mdp::primitive_action_count(self.num_joints)
    }

    pub fn len(&self) -> usize {
        self.primitive_count() + if self.meta_enabled { self.num_buttons + 1 } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn action(&self, index: usize) -> Option<Action> {
        let prims = self.primitive_count();
        if index < MOVEMENT_ACTIONS {
            Some(Action::MOVEMENTS[index])
        } else if index < prims {
            let j = (index - MOVEMENT_ACTIONS) / 2;
            Some(if (index - MOVEMENT_ACTIONS) % 2 == 0 {
                Action::JointInc(j)
            } else {
                Action::JointDec(j)
            })
        } else if self.meta_enabled && index < self.len() {
            let m = index - prims;
            Some(Action::Meta(if m < self.num_buttons {
                MetaTarget::Button(m)
            } else {
                MetaTarget::Exit
            }))
        } else {
            None
        }
    }

    pub fn index_of(&self, action: Action) -> Option<usize> {
        let prims = self.primitive_count();
        match action {
            Action::JointInc(j) if j < self.num_joints => Some(MOVEMENT_ACTIONS + 2 * j),
            Action::JointDec(j) if j < self.num_joints => Some(MOVEMENT_ACTIONS + 2 * j + 1),
            Action::JointInc(_) | Action::JointDec(_) => None,
            Action::Meta(_) if !self.meta_enabled => None,
            Action::Meta(MetaTarget::Button(b)) => (b < self.num_buttons).then_some(prims + b),
            Action::Meta(MetaTarget::Exit) => Some(prims + self.num_buttons),
            movement => Action::MOVEMENTS.iter().position(|&a| a == movement),
        }
    }

    pub fn name(&self, index: usize) -> String {
        match self.action(index) {
            Some(Action::Meta(t)) => t.label(),
            Some(Action::JointInc(j)) => format!("joint_inc_{j}"),
            Some(Action::JointDec(j)) => format!("joint_dec_{j}"),
            Some(a) => serde_json::to_value(a)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            None => String::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Env {
    instance: Arc<InstanceConfig>,
    space: ActionSpace,
    state: EnvState,
}

impl Env {
    /// Fails with a configuration error when the instance is inconsistent.
    pub fn new(instance: InstanceConfig, meta_enabled: bool) -> Result<Self> {
        Env::from_shared(Arc::new(instance), meta_enabled)
    }

    pub fn from_shared(instance: Arc<InstanceConfig>, meta_enabled: bool) -> Result<Self> {
        instance.check_structure()?;
        let space = ActionSpace::for_instance(&instance, meta_enabled);
        let state = mdp::start_state(&instance, 0);
        Ok(Env {
            instance,
            space,
            state,
        })
    }

    pub fn instance(&self) -> &InstanceConfig {
        &self.instance
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        mdp::is_done(&self.state, &self.instance)
    }

    pub fn reset(&mut self, episode_seed: u64) -> &EnvState {
        self.state = mdp::start_state(&self.instance, episode_seed);
        &self.state
    }

    pub fn step(&mut self, action: Action) -> Result<Transition> {
        let t = match action {
            Action::Meta(target) => {
                if !self.space.meta_enabled {
                    return Err(ErdError::usage("meta-actions are disabled for this environment"));
                }
                meta::execute_meta(&self.state, target, &self.instance)?
            }
            primitive => mdp::step(&self.state, primitive, &self.instance)?,
        };
        self.state = t.next.clone();
        Ok(t)
    }

    pub fn step_index(&mut self, index: usize) -> Result<Transition> {
        let action = self.space.action(index).ok_or_else(|| {
            ErdError::usage(format!("action index {index} out of range 0..{}", self.space.len()))
        })?;
        self.step(action)
    }

    /// Indices of the actions that make progress from the current state:
    /// every primitive, plus each meta-action whose target does not already
    /// contain the agent (those would be zero-step no-ops).
    pub fn legal_actions(&self, out: &mut Vec<usize>) {
        out.clear();
        let prims = self.space.primitive_count();
        out.extend(0..prims);
        if self.space.meta_enabled {
            for i in prims..self.space.len() {
                if let Some(Action::Meta(t)) = self.space.action(i) {
                    if !meta::target_reached(&self.state, &self.instance, t) {
                        out.push(i);
                    }
                }
            }
        }
    }
}
