//! C ABI over `madroid_core`.
//!
//! Every function returns a [`MadroidStatus`]. On failure a message is kept
//! per thread and can be fetched with [`madroid_last_error`]. Strings handed
//! out through `char **` parameters belong to the caller and must be released
//! with [`madroid_string_free`]; handles with their matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use madroid_core::action::{parse_action, render_action, Action};
use madroid_core::eval::similarity;
use madroid_core::gateway::BackendConfig;
use madroid_core::orchestrator::{run, RunConfig};
use madroid_core::sim::{load_scenario, DeviceFarm, Scenario};
use madroid_core::{users, view};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MadroidStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    ScenarioInvalid = 4,
    SimError = 5,
    ConfigError = 6,
    RunError = 7,
    Panic = 8,
}

/// A loaded scenario. Opaque.
pub struct MadroidScenario {
    inner: Arc<Scenario>,
}

/// A set of simulated devices for one scenario. Opaque.
pub struct MadroidFarm {
    inner: DeviceFarm,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MadroidStatus, String);

fn fail<T>(status: MadroidStatus, message: impl ToString) -> Result<T, Failure> {
    Err(Failure(status, message.to_string()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MadroidStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(MadroidStatus::Panic, "internal panic"));
    match outcome {
        Ok(()) => MadroidStatus::Ok,
        Err(Failure(status, message)) => {
            let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
            LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
            status
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(MadroidStatus::NullArgument, format!("{what} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(MadroidStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn give(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return fail(MadroidStatus::NullArgument, "output pointer is null");
    }
    let c = CString::new(s).or_else(|_| fail(MadroidStatus::InvalidUtf8, "result contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(MadroidStatus::NullArgument, "output pointer is null".into()))
}

fn user_index(farm: &DeviceFarm, label: &str) -> Result<usize, Failure> {
    match users::index_of(label) {
        Some(u) if u < farm.user_count() => Ok(u),
        _ => fail(MadroidStatus::SimError, format!("unknown user {label:?}")),
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn madroid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn madroid_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Extracts the first action from `reply` and writes its canonical form.
///
/// # Safety
/// `reply` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn madroid_parse_action(reply: *const c_char, out: *mut *mut c_char) -> MadroidStatus {
    guard(|| {
        let action = parse_action(text(reply, "reply")?).or_else(|e| fail(MadroidStatus::ParseError, e))?;
        give(out, render_action(&action))
    })
}

/// Parses a raw hierarchy document, simplifies it and writes the prompt form.
///
/// # Safety
/// `raw` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn madroid_simplify_screen(raw: *const c_char, out: *mut *mut c_char) -> MadroidStatus {
    guard(|| {
        let tree = view::parse_screen(text(raw, "raw")?).or_else(|e| fail(MadroidStatus::ParseError, e))?;
        give(out, view::serialize_prompt(&view::simplify(&tree)))
    })
}

/// Action similarity of two traces given as arrays of action strings; each
/// entry is compared in canonical form.
///
/// # Safety
/// Each array must hold `len` valid C strings (it may be NULL when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn madroid_similarity(
    pred: *const *const c_char,
    pred_len: usize,
    truth: *const *const c_char,
    truth_len: usize,
    out: *mut f64,
) -> MadroidStatus {
    unsafe fn actions(items: *const *const c_char, len: usize) -> Result<Vec<Action>, Failure> {
        if len == 0 {
            return Ok(Vec::new());
        }
        if items.is_null() {
            return fail(MadroidStatus::NullArgument, "trace array is null");
        }
        std::slice::from_raw_parts(items, len)
            .iter()
            .map(|p| parse_action(text(*p, "trace entry")?).or_else(|e| fail(MadroidStatus::ParseError, e)))
            .collect()
    }
    guard(|| {
        let pred = actions(pred, pred_len)?;
        let truth = actions(truth, truth_len)?;
        *out_ptr(out)? = similarity(&pred, &truth);
        Ok(())
    })
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn madroid_scenario_load(path: *const c_char, out: *mut *mut MadroidScenario) -> MadroidStatus {
    guard(|| {
        let scenario = load_scenario(Path::new(text(path, "path")?)).or_else(|e| fail(MadroidStatus::ScenarioInvalid, e))?;
        *out_ptr(out)? = Box::into_raw(Box::new(MadroidScenario { inner: Arc::new(scenario) }));
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from [`madroid_scenario_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn madroid_scenario_free(scenario: *mut MadroidScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Starts one simulated device per user of `scenario`. The farm keeps its
/// own reference; the scenario may be freed afterwards.
///
/// # Safety
/// `scenario` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn madroid_farm_spawn(
    scenario: *const MadroidScenario,
    seed: u64,
    out: *mut *mut MadroidFarm,
) -> MadroidStatus {
    guard(|| {
        let scenario = scenario.as_ref().ok_or_else(|| Failure(MadroidStatus::NullArgument, "scenario is null".into()))?;
        let farm = DeviceFarm::spawn(Arc::clone(&scenario.inner), seed);
        *out_ptr(out)? = Box::into_raw(Box::new(MadroidFarm { inner: farm }));
        Ok(())
    })
}

/// # Safety
/// `farm` must come from [`madroid_farm_spawn`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn madroid_farm_free(farm: *mut MadroidFarm) {
    if !farm.is_null() {
        drop(Box::from_raw(farm));
    }
}

unsafe fn farm_mut<'a>(farm: *mut MadroidFarm) -> Result<&'a mut DeviceFarm, Failure> {
    farm.as_mut().map(|f| &mut f.inner).ok_or_else(|| Failure(MadroidStatus::NullArgument, "farm is null".into()))
}

/// Performs a device action (`[tap]`, `[input]`, `[back]`) for `user`.
/// `changed` (optional) receives 1 when the screen changed.
///
/// # Safety
/// `farm` must be a live handle; strings valid; `changed` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn madroid_farm_execute(
    farm: *mut MadroidFarm,
    user: *const c_char,
    action: *const c_char,
    changed: *mut c_int,
) -> MadroidStatus {
    guard(|| {
        let farm = farm_mut(farm)?;
        let user = user_index(farm, text(user, "user")?)?;
        let action = parse_action(text(action, "action")?).or_else(|e| fail(MadroidStatus::ParseError, e))?;
        let outcome = farm.execute(user, &action).or_else(|e| fail(MadroidStatus::SimError, e))?;
        if let Some(c) = changed.as_mut() {
            *c = c_int::from(outcome.changed);
        }
        Ok(())
    })
}

/// Writes the simplified prompt form of `user`'s current screen.
///
/// # Safety
/// `farm` must be a live handle; `user` valid; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn madroid_farm_screen(
    farm: *mut MadroidFarm,
    user: *const c_char,
    out: *mut *mut c_char,
) -> MadroidStatus {
    guard(|| {
        let farm = farm_mut(farm)?;
        let user = user_index(farm, text(user, "user")?)?;
        let tree = farm.screen_tree(user).or_else(|e| fail(MadroidStatus::SimError, e))?;
        give(out, view::serialize_prompt(&tree))
    })
}

/// Puts every device back in its initial state.
///
/// # Safety
/// `farm` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn madroid_farm_reset(farm: *mut MadroidFarm) -> MadroidStatus {
    guard(|| {
        farm_mut(farm)?.reset();
        Ok(())
    })
}

/// `out` receives 1 when the scenario's success condition holds.
///
/// # Safety
/// `farm` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn madroid_farm_success(farm: *mut MadroidFarm, out: *mut c_int) -> MadroidStatus {
    guard(|| {
        let ok = farm_mut(farm)?.check_success();
        *out_ptr(out)? = c_int::from(ok);
        Ok(())
    })
}

/// Runs one task end to end and writes the result as JSON.
///
/// `task` may be NULL to use the scenario's own description. `config_json`
/// may be NULL or an object with optional `backend` and `run` members using
/// the same keys as the configuration file; the default is the oracle backend.
///
/// # Safety
/// `scenario` must be a live handle; strings NULL or valid; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn madroid_run(
    scenario: *const MadroidScenario,
    task: *const c_char,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> MadroidStatus {
    guard(|| {
        let scenario = scenario.as_ref().ok_or_else(|| Failure(MadroidStatus::NullArgument, "scenario is null".into()))?;
        let task = if task.is_null() { scenario.inner.task_text() } else { text(task, "task")?.to_string() };
        let (backend, config) = if config_json.is_null() {
            (BackendConfig::oracle(), RunConfig::default())
        } else {
            let value: serde_json::Value =
                serde_json::from_str(text(config_json, "config")?).or_else(|e| fail(MadroidStatus::ConfigError, e))?;
            let part = |key: &str| value.get(key).cloned().unwrap_or_else(|| serde_json::json!({}));
            let backend: BackendConfig =
                serde_json::from_value(part("backend")).or_else(|e| fail(MadroidStatus::ConfigError, e))?;
            let config: RunConfig = serde_json::from_value(part("run")).or_else(|e| fail(MadroidStatus::ConfigError, e))?;
            (backend, config)
        };
        let result = run(&task, Arc::clone(&scenario.inner), &backend, &config).or_else(|e| fail(MadroidStatus::RunError, e))?;
        let json = serde_json::to_string(&result).or_else(|e| fail(MadroidStatus::RunError, e))?;
        give(out, json)
    })
}
