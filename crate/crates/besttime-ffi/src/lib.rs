//! C ABI for the scheduling engine.
//!
//! The surface is handle-based: open an engine from a deployment config and
//! a store directory, feed it JSON-line scheduling requests, get JSON-line
//! plans back. All functions return a [`BesttimeStatus`]; on any non-OK
//! status the thread-local message from [`besttime_last_error_message`]
//! carries the detail. Strings returned through out-parameters are owned by
//! the caller and must be released with [`besttime_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;

use besttime::config::DeploymentConfig;
use besttime::error::Error;
use besttime::policy::SchedulingRequest;
use besttime::service::{handle_batch, ServiceState};
use besttime::store::SignalStore;

/// Status codes returned by every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BesttimeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    EmptyCandidates = 4,
    DegenerateAssembly = 5,
    NotFound = 6,
    Configuration = 7,
    UndefinedRatio = 8,
    PublishRejected = 9,
    Io = 10,
    Parse = 11,
    Internal = 12,
}

impl From<&Error> for BesttimeStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => BesttimeStatus::InvalidArgument,
            Error::EmptyCandidates(_) => BesttimeStatus::EmptyCandidates,
            Error::DegenerateAssembly => BesttimeStatus::DegenerateAssembly,
            Error::NotFound(_) => BesttimeStatus::NotFound,
            Error::Configuration(_) => BesttimeStatus::Configuration,
            Error::UndefinedRatio => BesttimeStatus::UndefinedRatio,
            Error::PublishRejected(_) => BesttimeStatus::PublishRejected,
            Error::Io(_) => BesttimeStatus::Io,
            Error::Parse(_) => BesttimeStatus::Parse,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<Vec<u8>>) {
    let message = CString::new(message).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn fail(status: BesttimeStatus, message: impl Into<Vec<u8>>) -> BesttimeStatus {
    set_last_error(message);
    status
}

fn fail_with(e: &Error) -> BesttimeStatus {
    let status = BesttimeStatus::from(e);
    set_last_error(e.to_string());
    status
}

/// Opaque engine handle (deployment config + open store).
pub struct BesttimeEngine {
    state: ServiceState,
}

/// # Safety
/// `ptr` must be non-null and point to a NUL-terminated string.
unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, BesttimeStatus> {
    if ptr.is_null() {
        return Err(fail(BesttimeStatus::NullPointer, "null string argument"));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail(BesttimeStatus::InvalidUtf8, "argument is not valid UTF-8"))
}

/// Open an engine from a deployment config (TOML path) and a store
/// directory. `store_dir` may be null to fall back to the `BESTTIME_STORE`
/// environment variable or the config's `store.path`.
///
/// On success writes the new handle to `out_engine`; release it with
/// [`besttime_engine_free`].
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string; `store_dir` may be
/// null or a valid NUL-terminated string; `out_engine` must be a valid
/// pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn besttime_engine_new(
    config_path: *const c_char,
    store_dir: *const c_char,
    out_engine: *mut *mut BesttimeEngine,
) -> BesttimeStatus {
    if out_engine.is_null() {
        return fail(BesttimeStatus::NullPointer, "null out_engine");
    }
    let config_path = match unsafe { cstr_arg(config_path) } {
        Ok(s) => s,
        Err(status) => return status,
    };
    let store_override = if store_dir.is_null() {
        None
    } else {
        match unsafe { cstr_arg(store_dir) } {
            Ok(s) => Some(PathBuf::from(s)),
            Err(status) => return status,
        }
    };

    let config = match DeploymentConfig::load(std::path::Path::new(config_path)) {
        Ok(c) => c,
        Err(e) => return fail_with(&e),
    };
    let dir = match SignalStore::resolve_dir(store_override, config.store.path.clone()) {
        Ok(d) => d,
        Err(e) => return fail_with(&e),
    };
    let store = match SignalStore::open(dir) {
        Ok(s) => s,
        Err(e) => return fail_with(&e),
    };
    let state = match ServiceState::new(config, store) {
        Ok(s) => s,
        Err(e) => return fail_with(&e),
    };
    let engine = Box::new(BesttimeEngine { state });
    unsafe { *out_engine = Box::into_raw(engine) };
    BesttimeStatus::Ok
}

/// Release an engine handle. Null is a no-op.
///
/// # Safety
/// `engine` must be null or a pointer returned by [`besttime_engine_new`]
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn besttime_engine_free(engine: *mut BesttimeEngine) {
    if !engine.is_null() {
        drop(unsafe { Box::from_raw(engine) });
    }
}

/// Schedule a batch of JSON-line requests (one request object per line).
///
/// The result written to `out_plans` is JSON lines too: an execution plan or
/// a per-request error record per input line, in order. Free it with
/// [`besttime_string_free`].
///
/// # Safety
/// `engine` must be a live handle from [`besttime_engine_new`];
/// `requests_jsonl` must be a valid NUL-terminated string; `out_plans` must
/// be a valid pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn besttime_engine_schedule_json(
    engine: *const BesttimeEngine,
    requests_jsonl: *const c_char,
    seed: u64,
    out_plans: *mut *mut c_char,
) -> BesttimeStatus {
    if engine.is_null() {
        return fail(BesttimeStatus::NullPointer, "null engine");
    }
    if out_plans.is_null() {
        return fail(BesttimeStatus::NullPointer, "null out_plans");
    }
    let engine = unsafe { &*engine };
    let requests_text = match unsafe { cstr_arg(requests_jsonl) } {
        Ok(s) => s,
        Err(status) => return status,
    };

    let mut requests = Vec::new();
    for (i, line) in requests_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SchedulingRequest>(line) {
            Ok(r) => requests.push(r),
            Err(e) => {
                return fail(
                    BesttimeStatus::Parse,
                    format!("request line {}: {e}", i + 1),
                )
            }
        }
    }

    let outcomes = handle_batch(&engine.state, &requests, seed);
    let mut out = String::new();
    for outcome in &outcomes {
        match serde_json::to_string(outcome) {
            Ok(line) => {
                out.push_str(&line);
                out.push('\n');
            }
            Err(e) => return fail(BesttimeStatus::Internal, e.to_string()),
        }
    }
    match CString::new(out) {
        Ok(s) => {
            unsafe { *out_plans = s.into_raw() };
            BesttimeStatus::Ok
        }
        Err(e) => fail(BesttimeStatus::Internal, e.to_string()),
    }
}

/// Publish a CSV of activity maps (`user,metric,slot_index,score`) into one
/// day partition (0 = Sunday .. 6 = Saturday) of the engine's store. Writes
/// the new store version to `out_version` when non-null.
///
/// # Safety
/// `engine` must be a live handle; `maps_csv` must be a valid NUL-terminated
/// string; `out_version` may be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn besttime_engine_publish_csv(
    engine: *const BesttimeEngine,
    day: u32,
    maps_csv: *const c_char,
    out_version: *mut u64,
) -> BesttimeStatus {
    if engine.is_null() {
        return fail(BesttimeStatus::NullPointer, "null engine");
    }
    let engine = unsafe { &*engine };
    let csv_text = match unsafe { cstr_arg(maps_csv) } {
        Ok(s) => s,
        Err(status) => return status,
    };
    let maps = match besttime::temporal::read_maps_csv(csv_text.as_bytes()) {
        Ok(m) => m,
        Err(e) => return fail_with(&e),
    };
    match engine.state.store.publish_maps(day as usize, maps) {
        Ok(version) => {
            if !out_version.is_null() {
                unsafe { *out_version = version };
            }
            BesttimeStatus::Ok
        }
        Err(e) => fail_with(&e),
    }
}

/// Free a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be null or a pointer obtained from a `besttime_*` out-parameter
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn besttime_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// The last error message recorded on this thread, or null if none. The
/// caller owns the returned string (free with [`besttime_string_free`]).
#[no_mangle]
pub extern "C" fn besttime_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(message) => message.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn besttime_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
