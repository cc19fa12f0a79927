//! Live environment sessions behind a message protocol.
//!
//! [`SessionManager::handle`] takes one JSON request and returns exactly one
//! JSON response; [`server`] carries those messages over WebSocket and HTTP.
//! The message schema is documented in `docs/protocol.md`.

pub mod server;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::env::Env;
use crate::error::ErdError;
use crate::geometry::{Rect, RoomGeometry};
use crate::instance::{self, InstanceConfig, SchematicParams};
use crate::mdp::{Action, EnvState, ReturnScale};
use crate::puzzle::{Button, ButtonDag};

pub use server::{router, serve, ServerConfig};

pub const PROTOCOL_VERSION: u32 = 1;

/// Error codes carried in `error` responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not JSON, or a required field is missing or mistyped.
    BadRequest,
    UnknownType,
    NotFound,
    InvalidInstance,
    InvalidAction,
    /// The episode is over; send `reset`.
    EpisodeOver,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub payload: Value,
    #[serde(default)]
    pub request_id: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(rename = "type")]
    pub kind: String,
    pub session_id: Option<String>,
    pub payload: Value,
    pub request_id: Value,
}

impl Response {
    fn error(request_id: Value, session_id: Option<String>, code: ErrorCode, message: impl Into<String>, details: Value) -> Self {
        Response {
            kind: "error".into(),
            session_id,
            payload: json!({ "code": code, "message": message.into(), "details": details }),
            request_id,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreatePayload {
    #[serde(default)]
    canonical: Option<String>,
    #[serde(default)]
    instance: Option<Value>,
    #[serde(default)]
    generate: Option<GeneratePayload>,
    #[serde(default)]
    meta_actions: bool,
    #[serde(default)]
    episode_seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratePayload {
    #[serde(default)]
    params: SchematicParams,
    seed: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResetPayload {
    #[serde(default)]
    episode_seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepPayload {
    #[serde(default)]
    action: Option<Action>,
    #[serde(default)]
    action_index: Option<usize>,
}

/// Static geometry a client needs to draw the room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub instance_id: String,
    pub room: RoomGeometry,
    pub exit_region: Rect,
    pub buttons: Vec<Button>,
    pub dag: ButtonDag,
    pub num_joints: usize,
    pub max_episode_steps: u32,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub state: EnvState,
    pub steps: u32,
    pub cumulative_reward: f64,
    pub normalized_return: f64,
    pub done: bool,
    pub exited: bool,
    pub legal_actions: Vec<usize>,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub env: Env,
    pub scale: ReturnScale,
    pub cumulative_reward: f64,
    /// Agent decisions in the current episode.
    pub history_len: usize,
    pub episodes_abandoned: usize,
    pub created_unix: u64,
}

impl Session {
    fn observation(&self) -> Observation {
        let mut legal = Vec::new();
        if !self.env.is_done() {
            self.env.legal_actions(&mut legal);
        }
        let state = self.env.state();
        Observation {
            state: state.clone(),
            steps: state.steps_taken,
            cumulative_reward: self.cumulative_reward,
            normalized_return: self.scale.normalize(self.cumulative_reward),
            done: self.env.is_done(),
            exited: state.exited,
            legal_actions: legal,
        }
    }

    fn geometry(&self) -> Geometry {
        let inst = self.env.instance();
        let space = self.env.action_space();
        Geometry {
            instance_id: inst.id(),
            room: inst.room.clone(),
            exit_region: inst.room.exit_region(),
            buttons: inst.layout.buttons.clone(),
            dag: inst.dag.clone(),
            num_joints: inst.num_joints,
            max_episode_steps: inst.max_episode_steps,
            actions: (0..space.len()).map(|i| space.name(i)).collect(),
        }
    }
}

type Failure = (ErrorCode, String, Value);

fn fail(code: ErrorCode, message: impl Into<String>) -> Failure {
    (code, message.into(), Value::Null)
}

fn payload<T: for<'de> Deserialize<'de> + Default>(value: &Value) -> Result<T, Failure> {
    if value.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(value.clone()).map_err(|e| fail(ErrorCode::BadRequest, format!("payload: {e}")))
}

/// All live sessions. Commands for one session are serialized by its lock;
/// different sessions proceed independently.
#[derive(Debug, Default)]
pub struct SessionManager {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl SessionManager {
    pub fn new() -> Self {
        SessionManager::default()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Handle one message; never panics on bad input.
    pub fn handle(&self, text: &str) -> String {
        let response = match serde_json::from_str::<Value>(text) {
            Err(e) => Response::error(Value::Null, None, ErrorCode::BadRequest, format!("malformed JSON: {e}"), Value::Null),
            Ok(value) => {
                let request_id = value.get("request_id").cloned().unwrap_or(Value::Null);
                match serde_json::from_value::<Request>(value) {
                    Err(e) => Response::error(request_id, None, ErrorCode::BadRequest, format!("bad message: {e}"), Value::Null),
                    Ok(req) => self.dispatch(req),
                }
            }
        };
        serde_json::to_string(&response).expect("responses serialize")
    }

    pub fn dispatch(&self, req: Request) -> Response {
        let session_id = req.session_id.clone();
        let result = match req.kind.as_str() {
            "create" => self.create(&req.payload),
            "reset" => self.with_session(&req, |s, p| {
                let p: ResetPayload = payload(p)?;
                if !s.env.is_done() && s.history_len > 0 {
                    s.episodes_abandoned += 1;
                }
                s.env.reset(p.episode_seed);
                s.cumulative_reward = 0.0;
                s.history_len = 0;
                Ok(("reset", json!({ "observation": s.observation(), "episodes_abandoned": s.episodes_abandoned })))
            }),
            "step" => self.with_session(&req, |s, p| step(s, p)),
            "state" => self.with_session(&req, |s, _| {
                Ok((
                    "state",
                    json!({
                        "observation": s.observation(),
                        "geometry": s.geometry(),
                        "history_len": s.history_len,
                        "created_unix": s.created_unix,
                    }),
                ))
            }),
            other => Err(fail(ErrorCode::UnknownType, format!("unknown message type `{other}`"))),
        };
        match result {
            Ok((kind, id, payload)) => Response {
                kind: kind.into(),
                session_id: id.or(session_id),
                payload,
                request_id: req.request_id,
            },
            Err((code, message, details)) => Response::error(req.request_id, session_id, code, message, details),
        }
    }

    fn with_session(
        &self,
        req: &Request,
        f: impl FnOnce(&mut Session, &Value) -> Result<(&'static str, Value), Failure>,
    ) -> Result<(&'static str, Option<String>, Value), Failure> {
        let id = req
            .session_id
            .as_deref()
            .ok_or_else(|| fail(ErrorCode::BadRequest, "session_id is required"))?;
        let session = self
            .sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| fail(ErrorCode::NotFound, format!("no session `{id}`")))?;
        let mut guard = session.lock().map_err(|_| fail(ErrorCode::Internal, "session lock poisoned"))?;
        let (kind, payload) = f(&mut guard, &req.payload)?;
        Ok((kind, None, payload))
    }

    fn create(&self, p: &Value) -> Result<(&'static str, Option<String>, Value), Failure> {
        let p: CreatePayload = payload(p)?;
        let instance = resolve_instance(&p)?;
        let violations = instance::validate(&instance);
        if !violations.is_empty() {
            return Err((
                ErrorCode::InvalidInstance,
                format!("instance failed {} check(s)", violations.len()),
                serde_json::to_value(&violations).unwrap_or(Value::Null),
            ));
        }
        let scale = ReturnScale::for_instance(&instance).map_err(|e| fail(ErrorCode::InvalidInstance, e.to_string()))?;
        let mut env = Env::new(instance, p.meta_actions).map_err(|e| fail(ErrorCode::InvalidInstance, e.to_string()))?;
        env.reset(p.episode_seed);
        let id = new_session_id();
        let session = Session {
            id: id.clone(),
            env,
            scale,
            cumulative_reward: 0.0,
            history_len: 0,
            episodes_abandoned: 0,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let body = json!({
            "protocol_version": PROTOCOL_VERSION,
            "geometry": session.geometry(),
            "observation": session.observation(),
        });
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(("create", Some(id), body))
    }
}

fn resolve_instance(p: &CreatePayload) -> Result<InstanceConfig, Failure> {
    let given = [p.canonical.is_some(), p.instance.is_some(), p.generate.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if given > 1 {
        return Err(fail(ErrorCode::BadRequest, "give at most one of canonical, instance, generate"));
    }
    let invalid = |e: ErdError| fail(ErrorCode::InvalidInstance, e.to_string());
    if let Some(doc) = &p.instance {
        return instance::deserialize(&doc.to_string()).map_err(invalid);
    }
    if let Some(g) = &p.generate {
        return instance::generate(&g.params, g.seed).map_err(invalid);
    }
    let name = p.canonical.as_deref().unwrap_or("one-button");
    instance::canonical(name).ok_or_else(|| fail(ErrorCode::InvalidInstance, format!("unknown canonical instance `{name}`")))
}

fn step(s: &mut Session, p: &Value) -> Result<(&'static str, Value), Failure> {
    let p: StepPayload = serde_json::from_value(p.clone()).map_err(|e| fail(ErrorCode::BadRequest, format!("payload: {e}")))?;
    if s.env.is_done() {
        return Err(fail(ErrorCode::EpisodeOver, "episode is over; send reset"));
    }
    let space = s.env.action_space();
    let index = match (p.action, p.action_index) {
        (Some(a), None) => space
            .index_of(a)
            .ok_or_else(|| fail(ErrorCode::InvalidAction, format!("action {a:?} is not available in this session")))?,
        (None, Some(i)) if i < space.len() => i,
        (None, Some(i)) => return Err(fail(ErrorCode::InvalidAction, format!("action_index {i} out of range 0..{}", space.len()))),
        _ => return Err(fail(ErrorCode::BadRequest, "give exactly one of action, action_index")),
    };
    let tr = s.env.step_index(index).map_err(|e| fail(ErrorCode::InvalidAction, e.to_string()))?;
    s.cumulative_reward += tr.reward;
    s.history_len += 1;
    let kind = if tr.done { "done" } else { "step" };
    Ok((
        kind,
        json!({
            "action": index,
            "action_name": space.name(index),
            "reward": tr.reward,
            "info": tr.info,
            "termination": tr.info.termination,
            "observation": s.observation(),
        }),
    ))
}

fn new_session_id() -> String {
    let bits: u128 = rand::rng().random();
    format!("{bits:032x}")
}
