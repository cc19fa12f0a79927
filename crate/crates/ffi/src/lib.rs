//! C ABI over `erd-core`.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns an [`ErdStatus`];
//! on failure `erd_last_error_message` describes the error for the calling
//! thread. Strings returned through `char **` out-parameters must be released
//! with `erd_string_free`. Panics never cross the boundary.
//!
//! The generated header is `include/erd.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use erd_core::env::Env;
use erd_core::instance::{self, InstanceConfig, SchematicParams};
use erd_core::mdp::{EnvState, Termination};
use erd_core::ErdError;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Parse = 4,
    Version = 5,
    Validation = 6,
    Generation = 7,
    Planning = 8,
    /// Misuse such as stepping a finished episode or an out-of-range action.
    Usage = 9,
    Io = 10,
    Panic = 11,
}

/// Why an episode ended.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErdTermination {
    None = 0,
    Exit = 1,
    StepCap = 2,
}

/// Opaque instance handle.
pub struct ErdInstance {
    inner: InstanceConfig,
}

/// Opaque environment handle.
pub struct ErdEnv {
    inner: Env,
}

/// Flat view of the environment state. Bit `i` of `puzzle_mask` is button `i`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErdObservation {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
    pub pitch: f64,
    pub roll: f64,
    pub puzzle_mask: u64,
    pub num_buttons: u32,
    pub num_joints: u32,
    pub steps_taken: u32,
    pub exited: bool,
    pub done: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErdStepResult {
    pub observation: ErdObservation,
    pub reward: f64,
    pub done: bool,
    pub primitive_steps: u32,
    pub termination: ErdTermination,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &ErdError) -> ErdStatus {
    match err {
        ErdError::Config { .. } => ErdStatus::Config,
        ErdError::Usage(_) => ErdStatus::Usage,
        ErdError::Planning(_) => ErdStatus::Planning,
        ErdError::Generation(_) => ErdStatus::Generation,
        ErdError::Validation(_) => ErdStatus::Validation,
        ErdError::Parse { .. } => ErdStatus::Parse,
        ErdError::Version { .. } => ErdStatus::Version,
        ErdError::Io(_) => ErdStatus::Io,
    }
}

struct Failure(ErdStatus, String);

impl From<ErdError> for Failure {
    fn from(e: ErdError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ErdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ErdStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ErdStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ErdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ErdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn string_out(s: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(ErdStatus::InvalidArgument, "string contains NUL".into()))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn observe(env: &Env) -> ErdObservation {
    let s: &EnvState = env.state();
    ErdObservation {
        x: s.pose.x,
        y: s.pose.y,
        z: s.pose.z,
        heading: s.pose.heading,
        pitch: s.pose.pitch,
        roll: s.pose.roll,
        puzzle_mask: s.puzzle.mask(),
        num_buttons: env.instance().num_buttons as u32,
        num_joints: env.instance().num_joints as u32,
        steps_taken: s.steps_taken,
        exited: s.exited,
        done: env.is_done(),
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn erd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn erd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn erd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Named instance: `one-button` or `two-button`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_instance_canonical(name: *const c_char, out: *mut *mut ErdInstance) -> ErdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = str_arg(name, "name")?;
        let inner = instance::canonical(name)
            .ok_or_else(|| Failure(ErdStatus::InvalidArgument, format!("unknown instance `{name}`")))?;
        *out = Box::into_raw(Box::new(ErdInstance { inner }));
        Ok(())
    })
}

/// Generate from the default schematic with `num_buttons` buttons.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_instance_generate(num_buttons: u32, seed: u64, out: *mut *mut ErdInstance) -> ErdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = instance::generate(&SchematicParams::with_buttons(num_buttons as usize), seed)?;
        *out = Box::into_raw(Box::new(ErdInstance { inner }));
        Ok(())
    })
}

/// Generate from schematic parameters given as JSON.
///
/// # Safety
/// `params_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_instance_generate_json(
    params_json: *const c_char,
    seed: u64,
    out: *mut *mut ErdInstance,
) -> ErdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(params_json, "params_json")?;
        let params: SchematicParams = serde_json::from_str(text)
            .map_err(|e| Failure(ErdStatus::Parse, format!("schematic parameters: {e}")))?;
        let inner = instance::generate(&params, seed)?;
        *out = Box::into_raw(Box::new(ErdInstance { inner }));
        Ok(())
    })
}

/// Parse an instance document. Structural problems are reported as
/// `ERD_STATUS_CONFIG`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_instance_from_json(json: *const c_char, out: *mut *mut ErdInstance) -> ErdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = instance::deserialize(str_arg(json, "json")?)?;
        inner.check_structure()?;
        *out = Box::into_raw(Box::new(ErdInstance { inner }));
        Ok(())
    })
}

/// Serialize to the instance document format.
///
/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_instance_to_json(inst: *const ErdInstance, out: *mut *mut c_char) -> ErdStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("inst"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        string_out(instance::serialize(&inst.inner), out)
    })
}

/// Full validation. Writes the number of violations; details go to the last
/// error message when there are any.
///
/// # Safety
/// `inst` must be a live handle and `num_violations` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_instance_validate(inst: *const ErdInstance, num_violations: *mut u32) -> ErdStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("inst"))?;
        if num_violations.is_null() {
            return Err(null("num_violations"));
        }
        let v = instance::validate(&inst.inner);
        *num_violations = v.len() as u32;
        if !v.is_empty() {
            let text: Vec<String> = v.iter().map(|v| format!("{}: {}", v.check, v.detail)).collect();
            set_error(text.join("; "));
        }
        Ok(())
    })
}

/// Stable 16-hex-digit instance id.
///
/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_instance_id(inst: *const ErdInstance, out: *mut *mut c_char) -> ErdStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("inst"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        string_out(inst.inner.id(), out)
    })
}

/// # Safety
/// `inst` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn erd_instance_free(inst: *mut ErdInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// New environment on a copy of the instance, reset with episode seed 0.
///
/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_env_new(inst: *const ErdInstance, meta_actions: bool, out: *mut *mut ErdEnv) -> ErdStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("inst"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut inner = Env::new(inst.inner.clone(), meta_actions)?;
        inner.reset(0);
        *out = Box::into_raw(Box::new(ErdEnv { inner }));
        Ok(())
    })
}

/// Size of the flat action index space.
///
/// # Safety
/// `env` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_env_num_actions(env: *const ErdEnv, out: *mut u32) -> ErdStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = env.inner.action_space().len() as u32;
        Ok(())
    })
}

/// Name of action `index` (e.g. `move_forward`, `meta-exit`).
///
/// # Safety
/// `env` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_env_action_name(env: *const ErdEnv, index: u32, out: *mut *mut c_char) -> ErdStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let space = env.inner.action_space();
        if index as usize >= space.len() {
            return Err(Failure(ErdStatus::Usage, format!("action index {index} out of range 0..{}", space.len())));
        }
        string_out(space.name(index as usize), out)
    })
}

/// Start a new episode. `out` may be NULL.
///
/// # Safety
/// `env` must be a live handle; `out` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn erd_env_reset(env: *mut ErdEnv, episode_seed: u64, out: *mut ErdObservation) -> ErdStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        env.inner.reset(episode_seed);
        if let Some(o) = out.as_mut() {
            *o = observe(&env.inner);
        }
        Ok(())
    })
}

/// Apply action `index`. Stepping a finished episode is `ERD_STATUS_USAGE`.
///
/// # Safety
/// `env` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_env_step(env: *mut ErdEnv, index: u32, out: *mut ErdStepResult) -> ErdStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let t = env.inner.step_index(index as usize)?;
        *out = ErdStepResult {
            observation: observe(&env.inner),
            reward: t.reward,
            done: t.done,
            primitive_steps: t.info.primitive_steps,
            termination: match t.info.termination {
                None => ErdTermination::None,
                Some(Termination::Exit) => ErdTermination::Exit,
                Some(Termination::StepCap) => ErdTermination::StepCap,
            },
        };
        Ok(())
    })
}

/// # Safety
/// `env` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_env_observe(env: *const ErdEnv, out: *mut ErdObservation) -> ErdStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = observe(&env.inner);
        Ok(())
    })
}

/// Full state (including joint angles) as JSON.
///
/// # Safety
/// `env` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn erd_env_state_json(env: *const ErdEnv, out: *mut *mut c_char) -> ErdStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = serde_json::to_string(env.inner.state())
            .map_err(|e| Failure(ErdStatus::Io, e.to_string()))?;
        string_out(text, out)
    })
}

/// # Safety
/// `env` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn erd_env_free(env: *mut ErdEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}
