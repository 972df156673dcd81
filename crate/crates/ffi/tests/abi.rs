use std::ffi::{c_char, c_int, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use madroid_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn scenario_path(id: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/dataset").join(id).join("scenario.json");
    c(p.to_str().unwrap())
}

/// Takes ownership of a returned string.
unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    madroid_string_free(p);
    s
}

unsafe fn last_error() -> String {
    let p = madroid_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

#[test]
fn parse_action_canonicalises() {
    unsafe {
        let mut out = ptr::null_mut();
        let reply = c("I will now CLICK [click] [Join \\] group] and wait");
        assert_eq!(madroid_parse_action(reply.as_ptr(), &mut out), MadroidStatus::Ok);
        assert_eq!(take(out), "[tap] [Join \\] group]");

        let bad = c("no action here");
        assert_eq!(madroid_parse_action(bad.as_ptr(), &mut out), MadroidStatus::ParseError);
        assert!(last_error().contains("no recognizable action"));
        assert_eq!(madroid_parse_action(ptr::null(), &mut out), MadroidStatus::NullArgument);
    }
}

#[test]
fn simplify_and_similarity() {
    unsafe {
        let raw = c(r#"<hierarchy><node class="android.widget.FrameLayout" bounds="[0,0][9,9]"><node class="android.widget.Button" text="Go" clickable="true"/></node></hierarchy>"#);
        let mut out = ptr::null_mut();
        assert_eq!(madroid_simplify_screen(raw.as_ptr(), &mut out), MadroidStatus::Ok);
        assert_eq!(take(out), "#0 android.widget.Button text=\"Go\" clickable=true\n");

        let broken = c("<hierarchy><node>");
        assert_eq!(madroid_simplify_screen(broken.as_ptr(), &mut out), MadroidStatus::ParseError);

        let a = [c("[tap] [open]"), c("[tap] [pick]"), c("[back]")];
        let b = [c("[tap]   [open]"), c("[tap] [search]"), c("[tap] [pick]"), c("[back]")];
        let pa: Vec<_> = a.iter().map(|s| s.as_ptr()).collect();
        let pb: Vec<_> = b.iter().map(|s| s.as_ptr()).collect();
        let mut sim = 0.0;
        assert_eq!(madroid_similarity(pa.as_ptr(), pa.len(), pb.as_ptr(), pb.len(), &mut sim), MadroidStatus::Ok);
        assert_eq!(sim, 6.0 / 7.0);
        assert_eq!(madroid_similarity(ptr::null(), 0, ptr::null(), 0, &mut sim), MadroidStatus::Ok);
        assert_eq!(sim, 1.0);
    }
}

#[test]
fn farm_lifecycle() {
    unsafe {
        let mut scenario = ptr::null_mut();
        assert_eq!(madroid_scenario_load(scenario_path("invite_accept").as_ptr(), &mut scenario), MadroidStatus::Ok);
        let mut farm = ptr::null_mut();
        assert_eq!(madroid_farm_spawn(scenario, 0, &mut farm), MadroidStatus::Ok);
        madroid_scenario_free(scenario);

        let (a, b) = (c("user_A"), c("user_B"));
        let mut changed: c_int = -1;
        for action in ["[tap] [Watch together]", "[tap] [Bob]"] {
            let action = c(action);
            assert_eq!(madroid_farm_execute(farm, a.as_ptr(), action.as_ptr(), &mut changed), MadroidStatus::Ok);
            assert_eq!(changed, 1);
        }
        let mut screen = ptr::null_mut();
        assert_eq!(madroid_farm_screen(farm, b.as_ptr(), &mut screen), MadroidStatus::Ok);
        assert!(take(screen).contains("Accept"));
        let accept = c("[tap] [Accept]");
        assert_eq!(madroid_farm_execute(farm, b.as_ptr(), accept.as_ptr(), ptr::null_mut()), MadroidStatus::Ok);
        let mut ok: c_int = 0;
        assert_eq!(madroid_farm_success(farm, &mut ok), MadroidStatus::Ok);
        assert_eq!(ok, 1);

        let missing = c("[tap] [Nowhere]");
        assert_eq!(madroid_farm_execute(farm, a.as_ptr(), missing.as_ptr(), ptr::null_mut()), MadroidStatus::SimError);
        let ghost = c("user_Q");
        assert_eq!(madroid_farm_execute(farm, ghost.as_ptr(), accept.as_ptr(), ptr::null_mut()), MadroidStatus::SimError);

        assert_eq!(madroid_farm_reset(farm), MadroidStatus::Ok);
        assert_eq!(madroid_farm_success(farm, &mut ok), MadroidStatus::Ok);
        assert_eq!(ok, 0);
        madroid_farm_free(farm);
        assert_eq!(madroid_farm_reset(ptr::null_mut()), MadroidStatus::NullArgument);
    }
}

#[test]
fn bad_scenario_path() {
    unsafe {
        let mut scenario = ptr::null_mut();
        let path = c("/no/such/scenario.json");
        assert_eq!(madroid_scenario_load(path.as_ptr(), &mut scenario), MadroidStatus::ScenarioInvalid);
        assert!(scenario.is_null());
    }
}

#[test]
fn run_returns_result_json() {
    unsafe {
        let mut scenario = ptr::null_mut();
        assert_eq!(madroid_scenario_load(scenario_path("join_by_code").as_ptr(), &mut scenario), MadroidStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(madroid_run(scenario, ptr::null(), ptr::null(), &mut out), MadroidStatus::Ok);
        let result: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(result["success"], true);
        assert_eq!(result["restarts_used"], 0);

        let config = c(r#"{"backend": {"kind": "fault", "inner": {"kind": "oracle"}, "fault": {"user": "user_B", "step": 0, "action": "[back]"}}, "run": {"seed": 2}}"#);
        assert_eq!(madroid_run(scenario, ptr::null(), config.as_ptr(), &mut out), MadroidStatus::Ok);
        let result: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(result["success"], true);
        assert_eq!(result["restarts_used"], 1);

        let bad = c(r#"{"run": {"observer_cadence": "often"}}"#);
        assert_eq!(madroid_run(scenario, ptr::null(), bad.as_ptr(), &mut out), MadroidStatus::ConfigError);
        let remote = c(r#"{"backend": {"kind": "remote"}}"#);
        assert_eq!(madroid_run(scenario, ptr::null(), remote.as_ptr(), &mut out), MadroidStatus::RunError);
        madroid_scenario_free(scenario);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/madroid.h")).unwrap();
    for name in [
        "madroid_last_error", "madroid_string_free", "madroid_parse_action", "madroid_simplify_screen",
        "madroid_similarity", "madroid_scenario_load", "madroid_scenario_free", "madroid_farm_spawn",
        "madroid_farm_free", "madroid_farm_execute", "madroid_farm_screen", "madroid_farm_reset",
        "madroid_farm_success", "madroid_run", "typedef struct MadroidFarm MadroidFarm",
        "MADROID_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    // The header must compile as C when a compiler is around.
    if let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(dir.join("include/madroid.h"))
        .status()
    {
        assert!(status.success(), "header does not compile");
    }
}
