//! C ABI over the dispatch engine.
//!
//! Tickets go in and decisions come out as JSON strings. Every call returns a
//! [`TdStatus`]; on failure the message is available from [`td_last_error`]
//! on the same thread until the next failing call.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde::Deserialize;
use ticket_dispatch::dispatcher::{dispatch, DispatchOptions};
use ticket_dispatch::ingestion::Ticket;
use ticket_dispatch::pipeline::Engine;
use ticket_dispatch::rules::{parse_rules, RuleSet};
use ticket_dispatch::{bundle, Error};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    BadBundle = 4,
    BadRules = 5,
    BadRequest = 6,
    Internal = 7,
}

/// Loaded model bundle plus the active rule set. Opaque to C.
pub struct TdEngine {
    engine: Engine,
    rules: RuleSet,
    options: DispatchOptions,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: TdStatus, message: impl Into<String>) -> TdStatus {
    let msg = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
    status
}

fn guarded(f: impl FnOnce() -> TdStatus) -> TdStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(TdStatus::Internal, "panic inside ticket-dispatch"))
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, TdStatus> {
    if p.is_null() {
        return Err(fail(TdStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(TdStatus::InvalidUtf8, "argument is not valid UTF-8"))
}

fn bundle_status(e: &Error) -> TdStatus {
    match e {
        Error::FileNotFound(_) | Error::Io { .. } => TdStatus::Io,
        _ => TdStatus::BadBundle,
    }
}

#[derive(Deserialize)]
struct TicketRequest {
    #[serde(default)]
    id: String,
    #[serde(default)]
    subject: String,
    #[serde(default)]
    body: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// Loads a model bundle. `rules_json` may be NULL for no rules.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` must be writable.
/// The handle written to `out` must be released with [`td_engine_free`].
#[no_mangle]
pub unsafe extern "C" fn td_engine_load(
    bundle_path: *const c_char,
    rules_json: *const c_char,
    out: *mut *mut TdEngine,
) -> TdStatus {
    guarded(|| {
        if out.is_null() {
            return fail(TdStatus::NullArgument, "null output pointer");
        }
        *out = ptr::null_mut();
        let path = match read_str(bundle_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let rules = if rules_json.is_null() {
            RuleSet::empty()
        } else {
            let text = match read_str(rules_json) {
                Ok(t) => t,
                Err(s) => return s,
            };
            match parse_rules(text) {
                Ok(r) => r,
                Err(e) => return fail(TdStatus::BadRules, e.to_string()),
            }
        };
        match bundle::load(path) {
            Ok(engine) => {
                *out = Box::into_raw(Box::new(TdEngine { engine, rules, options: DispatchOptions::default() }));
                TdStatus::Ok
            }
            Err(e) => fail(bundle_status(&e), e.to_string()),
        }
    })
}

/// Releases an engine. NULL is ignored.
///
/// # Safety
/// `engine` must come from [`td_engine_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn td_engine_free(engine: *mut TdEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Replaces the engine's rules with a JSON rule document.
///
/// # Safety
/// `engine` must be a live handle not used concurrently; `rules_json` must be
/// NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn td_engine_set_rules(engine: *mut TdEngine, rules_json: *const c_char) -> TdStatus {
    guarded(|| {
        let Some(engine) = engine.as_mut() else {
            return fail(TdStatus::NullArgument, "null engine");
        };
        let text = match read_str(rules_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_rules(text) {
            Ok(r) => {
                engine.rules = r;
                TdStatus::Ok
            }
            Err(e) => fail(TdStatus::BadRules, e.to_string()),
        }
    })
}

/// Routes one ticket given as JSON `{id, subject, body, metadata}` and writes
/// the decision JSON to `out`. Free it with [`td_string_free`].
///
/// # Safety
/// `engine` must be a live handle; `ticket_json` NUL-terminated; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn td_dispatch(
    engine: *const TdEngine,
    ticket_json: *const c_char,
    out: *mut *mut c_char,
) -> TdStatus {
    guarded(|| {
        if out.is_null() {
            return fail(TdStatus::NullArgument, "null output pointer");
        }
        *out = ptr::null_mut();
        let Some(engine) = engine.as_ref() else {
            return fail(TdStatus::NullArgument, "null engine");
        };
        let text = match read_str(ticket_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let req: TicketRequest = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(e) => return fail(TdStatus::BadRequest, format!("malformed ticket: {e}")),
        };
        if req.subject.is_empty() && req.body.is_empty() {
            return fail(TdStatus::BadRequest, "subject and body are both empty");
        }
        let mut ticket = Ticket::new(req.id, req.subject, req.body);
        ticket.metadata = req.metadata;
        let decision = match dispatch(&ticket, &engine.engine.router, &engine.rules, &engine.options) {
            Ok(d) => d,
            Err(e) => return fail(TdStatus::Internal, e.to_string()),
        };
        let json = serde_json::to_string(&decision).expect("decision serializes");
        match CString::new(json) {
            Ok(s) => {
                *out = s.into_raw();
                TdStatus::Ok
            }
            Err(_) => fail(TdStatus::Internal, "decision contains a NUL byte"),
        }
    })
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from [`td_dispatch`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn td_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn td_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn td_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
