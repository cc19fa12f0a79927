//! Escape Room Domain: a seedable single-room puzzle MDP for hierarchical
//! reinforcement learning experiments.
//!
//! * [`instance`] generates, validates and (de)serializes room instances.
//! * [`mdp`] holds the state, the primitive actions and the step function.
//! * [`puzzle`] is the button dependency puzzle.
//! * [`meta`] plans and executes navigation meta-actions.
//! * [`env`] wraps it all in a stateful environment with flat action indices.
//! * [`agents`] and [`harness`] run tabular learning baselines and experiments.
//! * [`service`] exposes live sessions over HTTP and WebSocket.

pub mod agents;
pub mod env;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod instance;
pub mod mdp;
pub mod meta;
pub mod puzzle;
pub mod rng;
pub mod service;

pub use env::{ActionSpace, Env};
pub use error::{ErdError, Result};
pub use instance::{InstanceConfig, SchematicParams};
pub use mdp::{Action, EnvState, Pose, Transition};
pub use meta::MetaTarget;
