//! C ABI for the asktmk engine.
//!
//! Conventions:
//! * Every fallible function returns an [`AsktmkStatus`]. On anything other
//!   than `ASKTMK_STATUS_OK`, [`asktmk_last_error`] describes the failure on
//!   the calling thread.
//! * Strings passed in are NUL-terminated UTF-8 and are only borrowed.
//! * Strings handed out through `char **` parameters are owned by the caller
//!   and must be released with [`asktmk_string_free`].
//! * Engines are opaque. Create with [`asktmk_engine_new`], release with
//!   [`asktmk_engine_free`]. An engine may be shared across threads.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use asktmk::config::EngineConfig;
use asktmk::pipeline::{Engine, Session};
use asktmk::tmk::{parse_model, validate};
use asktmk::trace::{derive_trace, to_outline, Selectors};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsktmkStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidModel = 4,
    InvalidConfig = 5,
    PipelineError = 6,
    TraceError = 7,
    Panic = 8,
}

/// Opaque engine handle.
pub struct AsktmkEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(AsktmkStatus, String);

impl Failure {
    fn new(status: AsktmkStatus, code: &str, message: impl std::fmt::Display) -> Self {
        Failure(status, format!("{code}: {message}"))
    }
}

/// Runs `f`, converting failures and panics into a status plus last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AsktmkStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AsktmkStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("PANIC: internal error");
            AsktmkStatus::Panic
        }
    }
}

/// Borrows a C string argument.
///
/// # Safety
/// `p` must be null or point to a NUL-terminated string that outlives the call.
unsafe fn arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(AsktmkStatus::NullArgument, "NULL_ARGUMENT", format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(AsktmkStatus::InvalidUtf8, "INVALID_UTF8", format!("{name}: {e}")))
}

fn out_ptr<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::new(AsktmkStatus::NullArgument, "NULL_ARGUMENT", format!("{name} is null")));
    }
    Ok(())
}

fn owned(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior NULs removed").into_raw()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn asktmk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn asktmk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asktmk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Validates a model given as JSON. `*out_report` receives `ok` or one line
/// per issue (`CODE path: message`). Returns `ASKTMK_STATUS_INVALID_MODEL`
/// when issues were found; the report is still written.
///
/// # Safety
/// `model_json` must be a valid C string; `out_report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asktmk_validate(model_json: *const c_char, out_report: *mut *mut c_char) -> AsktmkStatus {
    guard(|| {
        out_ptr(out_report, "out_report")?;
        *out_report = ptr::null_mut();
        let json = arg(model_json, "model_json")?;
        let model = parse_model(json.as_bytes()).map_err(|e| Failure::new(AsktmkStatus::ParseError, e.code(), &e))?;
        let report = validate(&model);
        *out_report = owned(report.to_string());
        if report.ok {
            Ok(())
        } else {
            let code = report.errors[0].code.as_str();
            Err(Failure::new(AsktmkStatus::InvalidModel, code, format!("{} issue(s)", report.errors.len())))
        }
    })
}

/// Builds an engine from a JSON model and an optional TOML configuration
/// (null for defaults: mock provider, hashing embedder, k = 4).
///
/// # Safety
/// `model_json` must be a valid C string; `config_toml` null or a valid C
/// string; `out_engine` writable.
#[no_mangle]
pub unsafe extern "C" fn asktmk_engine_new(
    model_json: *const c_char,
    config_toml: *const c_char,
    out_engine: *mut *mut AsktmkEngine,
) -> AsktmkStatus {
    guard(|| {
        out_ptr(out_engine, "out_engine")?;
        *out_engine = ptr::null_mut();
        let json = arg(model_json, "model_json")?;
        let config = if config_toml.is_null() {
            EngineConfig::default()
        } else {
            EngineConfig::from_toml(arg(config_toml, "config_toml")?, Path::new("<config>"))
                .map_err(|e| Failure::new(AsktmkStatus::InvalidConfig, e.code(), &e))?
        };
        let model = parse_model(json.as_bytes()).map_err(|e| Failure::new(AsktmkStatus::ParseError, e.code(), &e))?;
        let report = validate(&model);
        if !report.ok {
            return Err(Failure::new(AsktmkStatus::InvalidModel, report.errors[0].code.as_str(), &report));
        }
        let engine = config.build_engine(model).map_err(|e| Failure::new(AsktmkStatus::InvalidConfig, e.code(), &e))?;
        *out_engine = Box::into_raw(Box::new(AsktmkEngine { engine }));
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must be null or a handle from [`asktmk_engine_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asktmk_engine_free(engine: *mut AsktmkEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Answers one question in a fresh session. `k` of 0 means the configured
/// default. `*out_json` receives the full result as JSON.
///
/// # Safety
/// `engine` must be a live handle; `question` a valid C string; `out_json`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn asktmk_ask(
    engine: *const AsktmkEngine,
    question: *const c_char,
    k: u32,
    out_json: *mut *mut c_char,
) -> AsktmkStatus {
    guard(|| {
        out_ptr(out_json, "out_json")?;
        *out_json = ptr::null_mut();
        let engine = engine
            .as_ref()
            .ok_or_else(|| Failure::new(AsktmkStatus::NullArgument, "NULL_ARGUMENT", "engine is null"))?;
        let q = arg(question, "question")?;
        let k = (k > 0).then_some(k as usize);
        let result = engine
            .engine
            .ask(q, &mut Session::ephemeral(), k)
            .map_err(|e| Failure::new(AsktmkStatus::PipelineError, e.code(), format!("{} stage: {e}", e.stage())))?;
        *out_json = owned(serde_json::to_string(&result).expect("result serializes"));
        Ok(())
    })
}

/// Derives a trace with default selectors and writes its text outline.
/// `step_bound` of 0 means the default bound.
///
/// # Safety
/// `engine` must be a live handle; `task_id` a valid C string; `out_outline`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn asktmk_trace(
    engine: *const AsktmkEngine,
    task_id: *const c_char,
    step_bound: u32,
    out_outline: *mut *mut c_char,
) -> AsktmkStatus {
    guard(|| {
        out_ptr(out_outline, "out_outline")?;
        *out_outline = ptr::null_mut();
        let engine = engine
            .as_ref()
            .ok_or_else(|| Failure::new(AsktmkStatus::NullArgument, "NULL_ARGUMENT", "engine is null"))?;
        let task = arg(task_id, "task_id")?;
        let bound = if step_bound == 0 { asktmk::trace::DEFAULT_STEP_BOUND } else { step_bound as usize };
        let model = engine.engine.model();
        let trace = derive_trace(model, task, &BTreeMap::new(), &Selectors::default(), bound)
            .map_err(|e| Failure::new(AsktmkStatus::TraceError, e.code(), &e))?;
        *out_outline = owned(to_outline(model, &trace));
        Ok(())
    })
}
