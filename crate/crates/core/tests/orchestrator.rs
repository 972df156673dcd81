use std::path::PathBuf;
use std::sync::Arc;

use madroid_core::action::Action;
use madroid_core::agents::{Phase, StepStatus, Verdict};
use madroid_core::gateway::{BackendConfig, FaultSpec, ScriptRule, Transcript};
use madroid_core::orchestrator::{replay_transcript, run, write_outputs, FailureReason, RunConfig, RunEvent};
use madroid_core::sim::{load_scenario, Scenario};

fn scenario(id: &str) -> Arc<Scenario> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("dataset").join(id).join("scenario.json");
    Arc::new(load_scenario(path).unwrap())
}

const IDS: [&str; 5] = ["invite_accept", "join_by_code", "group_call_decline", "host_join_by_code", "expiring_call"];

#[test]
fn oracle_runs_match_ground_truth() {
    for id in IDS {
        let sc = scenario(id);
        let config = RunConfig { seed: 5, ..Default::default() };
        let result = run(&sc.task_text(), Arc::clone(&sc), &BackendConfig::oracle(), &config).unwrap();
        assert!(result.success, "{id}: {:?} {:?}", result.failure_reason, result.detail);
        assert_eq!(result.restarts_used, 0);
        let script = sc.concrete_script(5).unwrap();
        let trace: Vec<_> = result.executed_trace.steps.iter().map(|s| (s.user.clone(), s.action.clone())).collect();
        let truth: Vec<_> = script.into_iter().map(|s| (s.user, s.action)).collect();
        assert_eq!(trace, truth, "{id}");
    }
}

#[test]
fn reviews_follow_cadence() {
    let sc = scenario("host_join_by_code");
    let result = run(&sc.task_text(), Arc::clone(&sc), &BackendConfig::oracle(), &RunConfig::default()).unwrap();
    let periodic: Vec<usize> =
        result.reviews.iter().filter(|r| r.phase == Phase::Periodic).map(|r| r.device_actions).collect();
    assert_eq!(periodic, [2, 4, 6]);
    assert_eq!(result.reviews.last().unwrap().phase, Phase::Final);
    assert_eq!(result.reviews.iter().filter(|r| r.phase == Phase::Final).count(), 1);
}

#[test]
fn wrong_tap_is_caught_and_recovered() {
    let sc = scenario("join_by_code");
    let spec = FaultSpec { user: "user_A".into(), step: 2, action: Action::tap("Join group") };
    let backend = BackendConfig::fault(BackendConfig::oracle(), spec);
    let result = run(&sc.task_text(), Arc::clone(&sc), &backend, &RunConfig::default()).unwrap();
    assert!(result.success, "{:?} {:?}", result.failure_reason, result.detail);
    assert_eq!(result.restarts_used, 1);
    let flagged: Vec<_> = result
        .reviews
        .iter()
        .filter_map(|r| match &r.verdict {
            Verdict::ErrorAt { step, .. } => Some((r.phase, r.device_actions, *step)),
            _ => None,
        })
        .collect();
    // The wrong tap is the third device action; the review after the fourth catches it.
    assert_eq!(flagged, [(Phase::Periodic, 4, 2)]);
    let restart = result.events.iter().find_map(|e| match e {
        RunEvent::Restart { error_index, .. } => Some(*error_index),
        _ => None,
    });
    assert_eq!(restart, Some(2));
    assert!(result.executed_trace.steps.iter().all(|s| s.action != Action::tap("Join group") || s.user == "user_B"));
    let feedback = result
        .transcript
        .records
        .iter()
        .filter(|r| r.role == "operator:user_A")
        .any(|r| r.text.contains("a previous action, [tap] [Join group], was incorrect"));
    assert!(feedback);
}

#[test]
fn user_count_mismatch_is_plan_error() {
    let sc = scenario("invite_accept");
    let backend = BackendConfig::scripted(vec![
        ScriptRule::new(Some("coordinator"), "how many", "3"),
        ScriptRule::new(Some("coordinator"), "segment", "[a] [b] [c]"),
        ScriptRule::new(Some("coordinator"), "first", "user_A"),
    ]);
    let result = run("x", sc, &backend, &RunConfig::default()).unwrap();
    assert!(!result.success);
    assert_eq!(result.failure_reason, Some(FailureReason::PlanError));
}

#[test]
fn missing_script_match_is_infra_error() {
    let sc = scenario("invite_accept");
    let backend = BackendConfig::scripted(vec![ScriptRule::new(Some("coordinator"), "how many", "2")]);
    let result = run("x", sc, &backend, &RunConfig::default()).unwrap();
    assert_eq!(result.failure_reason, Some(FailureReason::InfraError));
}

#[test]
fn restarts_are_capped() {
    // An operator that always taps the wrong thing and an observer that always objects.
    let sc = scenario("invite_accept");
    let backend = BackendConfig::scripted(vec![
        ScriptRule::new(Some("coordinator"), "how many", "2"),
        ScriptRule::new(Some("coordinator"), "segment", "[invite] [accept]"),
        ScriptRule::new(Some("coordinator"), "first", "user_A"),
        ScriptRule::new(Some("operator"), ".", "[tap] [Profile]"),
        ScriptRule::new(Some("observer"), ".", "error at step 0: wrong button"),
    ]);
    let config = RunConfig { max_restarts: 3, ..Default::default() };
    let result = run("x", sc, &backend, &config).unwrap();
    assert_eq!(result.failure_reason, Some(FailureReason::MaxRestarts));
    assert_eq!(result.restarts_used, 3);
}

#[test]
fn budget_is_enforced() {
    let sc = scenario("invite_accept");
    let backend = BackendConfig::scripted(vec![
        ScriptRule::new(Some("coordinator"), "how many", "2"),
        ScriptRule::new(Some("coordinator"), "segment", "[invite] [accept]"),
        ScriptRule::new(Some("coordinator"), "first", "user_A"),
        ScriptRule::new(Some("operator"), ".", "[tap] [Profile]"),
        ScriptRule::new(Some("observer"), ".", "ok"),
    ]);
    let config = RunConfig { max_actions_per_user: 5, ..Default::default() };
    let result = run("x", sc, &backend, &config).unwrap();
    assert_eq!(result.failure_reason, Some(FailureReason::BudgetExhausted));
    assert_eq!(result.executed_trace.device_count(), 5);
    assert!(result.executed_trace.steps.iter().all(|s| s.status == StepStatus::Ineffective));
}

#[test]
fn transcripts_replay_and_detect_edits() {
    let sc = scenario("join_by_code");
    let spec = FaultSpec { user: "user_B".into(), step: 1, action: Action::Back };
    let backend = BackendConfig::fault(BackendConfig::oracle(), spec);
    let mut result = run(&sc.task_text(), Arc::clone(&sc), &backend, &RunConfig { seed: 3, ..Default::default() }).unwrap();
    assert!(result.success);
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&mut result, dir.path()).unwrap();
    let path = result.transcript_path.clone().unwrap();
    assert!(dir.path().join("result.json").is_file());

    let loaded = Transcript::load(&path).unwrap();
    assert_eq!(loaded, result.transcript);
    let summary = replay_transcript(&loaded).unwrap();
    assert!(summary.success);
    assert_eq!(summary.restarts, 1);

    // Change the first tap into a different one: the next screen no longer matches.
    let mut edited = loaded.clone();
    let rec = edited.records.iter_mut().find(|r| r.session_id == "orchestrator" && r.text.contains("Face-to-face group")).unwrap();
    rec.text = rec.text.replace("Face-to-face group", "New chat");
    assert!(replay_transcript(&edited).is_err());
}
