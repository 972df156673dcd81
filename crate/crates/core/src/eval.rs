//! Scoring: LCS action similarity, success rates, dataset sweeps and reports.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionKind};
use crate::agents::ExecutionRecord;
use crate::gateway::BackendConfig;
use crate::orchestrator::{self, run_dir, write_outputs, FailureReason, RunConfig};
use crate::sim::{load_scenario, DeviceFarm, Scenario, TraceStep};
use crate::users;
use crate::view::{self, ViewNode, ViewTree};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Length of the longest common subsequence.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Numerator and denominator of the similarity: `2·M` and `|pred| + |truth|`.
pub fn similarity_parts<T: PartialEq>(pred: &[T], truth: &[T]) -> (usize, usize) {
    (2 * lcs_length(pred, truth), pred.len() + truth.len())
}

/// `2·M / (|pred| + |truth|)`; two empty traces count as identical.
pub fn similarity<T: PartialEq>(pred: &[T], truth: &[T]) -> f64 {
    match similarity_parts(pred, truth) {
        (_, 0) => 1.0,
        (num, den) => num as f64 / den as f64,
    }
}

/// An action reduced to what it did: who, what kind, which element
/// (resource id, else text, else description) and the typed value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormStep {
    pub user: String,
    pub kind: ActionKind,
    pub target: String,
    pub value: Option<String>,
}

fn node_key(node: &ViewNode) -> Option<String> {
    if !node.resource_id.is_empty() {
        return Some(node.resource_id.clone());
    }
    [&node.text, &node.content_desc].into_iter().find(|s| !s.is_empty()).map(|s| s.to_lowercase())
}

/// Normalizes a device action taken on `tree`; `None` for control tokens.
pub fn normalize_step(user: &str, action: &Action, tree: Option<&ViewTree>) -> Option<NormStep> {
    if !action.is_device_action() {
        return None;
    }
    let target = match action.target() {
        None => String::new(),
        Some(descriptor) => {
            let resolved = tree.and_then(|tree| {
                let eligible = |n: &ViewNode| match action.kind() {
                    ActionKind::Tap => n.clickable,
                    _ => n.is_editable(),
                };
                let id = view::resolve_element(tree, descriptor, eligible)
                    .or_else(|_| view::resolve_element(tree, descriptor, |_| true))
                    .ok()?;
                tree.node(id).and_then(node_key)
            });
            resolved.unwrap_or_else(|| descriptor.trim().to_lowercase())
        }
    };
    Some(NormStep {
        user: users::normalize(user).unwrap_or_else(|| user.to_string()),
        kind: action.kind(),
        target,
        value: action.value().map(|v| v.trim().to_string()),
    })
}

/// Device actions of a record, resolved against the screens they were taken on.
pub fn normalize_record(record: &ExecutionRecord) -> Vec<NormStep> {
    record
        .steps
        .iter()
        .filter_map(|s| {
            let tree = view::parse_prompt(&s.screen).ok().map(|root| ViewTree {
                root,
                source_user: s.user.clone(),
                raw_digest: s.screen_digest.clone(),
            });
            normalize_step(&s.user, &s.action, tree.as_ref())
        })
        .collect()
}

/// Replays device-only `truth` on a fresh farm (placeholders filled from the
/// farm as it goes) and normalizes every step against its screen.
pub fn normalize_truth(scenario: Arc<Scenario>, truth: &[TraceStep], seed: u64) -> Result<Vec<NormStep>, EvalError> {
    let mut farm = DeviceFarm::spawn(scenario, seed);
    let mut out = Vec::with_capacity(truth.len());
    for (i, step) in truth.iter().enumerate() {
        let bad = |m: String| EvalError::Dataset(format!("ground_truth[{i}]: {m}"));
        let user = users::index_of(&step.user)
            .filter(|u| *u < farm.user_count())
            .ok_or_else(|| bad(format!("unknown user {:?}", step.user)))?;
        let action = farm.substitute(&step.action).map_err(bad)?;
        if !action.is_device_action() {
            continue;
        }
        let tree = farm.screen_tree(user).map_err(|e| bad(e.to_string()))?;
        out.extend(normalize_step(&step.user, &action, Some(&tree)));
        farm.execute(user, &action).map_err(|e| bad(e.to_string()))?;
    }
    Ok(out)
}

/// `user_A:3/3;user_B:2/4` — per-user LCS length over per-user truth length.
pub fn actions_per_user(pred: &[NormStep], truth: &[NormStep]) -> String {
    let mut labels: Vec<&str> = truth.iter().chain(pred).map(|s| s.user.as_str()).collect();
    labels.sort();
    labels.dedup();
    labels
        .iter()
        .map(|u| {
            let p: Vec<_> = pred.iter().filter(|s| s.user == *u).collect();
            let t: Vec<_> = truth.iter().filter(|s| s.user == *u).collect();
            format!("{u}:{}/{}", lcs_length(&p, &t), t.len())
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn default_scenario() -> PathBuf {
    PathBuf::from("scenario.json")
}

/// `task.json` of a dataset entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub description: String,
    /// Relative to the task directory.
    #[serde(default = "default_scenario")]
    pub scenario: PathBuf,
    pub expected_users: usize,
    /// Device actions only, in global order.
    pub ground_truth: Vec<TraceStep>,
}

/// Reads and cross-checks a task directory.
pub fn load_task(dir: &Path) -> Result<(TaskSpec, Scenario), EvalError> {
    let path = dir.join("task.json");
    let text = std::fs::read_to_string(&path).map_err(|e| EvalError::Dataset(format!("{}: {e}", path.display())))?;
    let spec: TaskSpec =
        serde_json::from_str(&text).map_err(|e| EvalError::Dataset(format!("{}: {e}", path.display())))?;
    let scenario = load_scenario(dir.join(&spec.scenario)).map_err(|e| EvalError::Dataset(e.to_string()))?;
    let bad = |m: &str| Err(EvalError::Dataset(format!("{}: {m}", spec.task_id)));
    if spec.ground_truth.is_empty() {
        return bad("ground_truth is empty");
    }
    if spec.ground_truth.iter().any(|s| !s.action.is_device_action()) {
        return bad("ground_truth must hold device actions only");
    }
    if spec.expected_users != scenario.user_slots {
        return bad("expected_users does not match the scenario");
    }
    Ok((spec, scenario))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub task_id: String,
    pub run: usize,
    pub success: bool,
    pub similarity: f64,
    pub restarts: usize,
    pub actions_per_user: String,
    pub failure_reason: Option<FailureReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub runs: Vec<RunRow>,
    pub success_rate: f64,
    pub mean_similarity: f64,
    /// Set when the task could not be run at all.
    pub error: Option<String>,
}

impl TaskReport {
    /// Nothing useful came out: the task failed to load or every run hit
    /// an infrastructure error.
    pub fn infra_failed(&self) -> bool {
        self.error.is_some()
            || (!self.runs.is_empty()
                && self.runs.iter().all(|r| r.failure_reason == Some(FailureReason::InfraError)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub backend: String,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tasks: Vec<TaskReport>,
    pub average_success_rate: f64,
    pub average_similarity: f64,
    pub config: ReportConfig,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

impl Report {
    pub fn from_tasks(tasks: Vec<TaskReport>, config: ReportConfig) -> Self {
        let average_success_rate = mean(tasks.iter().map(|t| t.success_rate));
        let average_similarity = mean(tasks.iter().map(|t| t.mean_similarity));
        Report { tasks, average_success_rate, average_similarity, config }
    }

    /// `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
        #[derive(Serialize)]
        struct Row<'a> {
            task_id: &'a str,
            run: usize,
            success: bool,
            similarity: f64,
            restarts: usize,
            actions_per_user: &'a str,
        }
        let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
        if self.tasks.iter().all(|t| t.runs.is_empty()) {
            w.write_record(["task_id", "run", "success", "similarity", "restarts", "actions_per_user"])?;
        }
        for r in self.tasks.iter().flat_map(|t| &t.runs) {
            w.serialize(Row {
                task_id: &r.task_id,
                run: r.run,
                success: r.success,
                similarity: r.similarity,
                restarts: r.restarts,
                actions_per_user: &r.actions_per_user,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

fn evaluate_task(dir: &Path, backend: &BackendConfig, config: &RunConfig, out: Option<&Path>) -> TaskReport {
    let fallback_id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let failed = |task_id: String, e: String| TaskReport {
        task_id,
        runs: Vec::new(),
        success_rate: 0.0,
        mean_similarity: 0.0,
        error: Some(e),
    };
    let (spec, scenario) = match load_task(dir) {
        Ok(t) => t,
        Err(e) => return failed(fallback_id, e.to_string()),
    };
    let scenario = Arc::new(scenario);
    let rows: Result<Vec<RunRow>, String> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let run_config = RunConfig { seed: config.seed + run as u64, ..config.clone() };
            let truth = normalize_truth(Arc::clone(&scenario), &spec.ground_truth, run_config.seed)
                .map_err(|e| e.to_string())?;
            let mut result = orchestrator::run(&spec.description, Arc::clone(&scenario), backend, &run_config)
                .map_err(|e| e.to_string())?;
            if let Some(root) = out {
                if let Err(e) = write_outputs(&mut result, &run_dir(root, &spec.task_id, run)) {
                    log::warn!("{}/{run}: {e}", spec.task_id);
                }
            }
            let pred = normalize_record(&result.executed_trace);
            Ok(RunRow {
                task_id: spec.task_id.clone(),
                run,
                success: result.success,
                similarity: similarity(&pred, &truth),
                restarts: result.restarts_used,
                actions_per_user: actions_per_user(&pred, &truth),
                failure_reason: result.failure_reason,
            })
        })
        .collect();
    match rows {
        Ok(runs) => TaskReport {
            task_id: spec.task_id,
            success_rate: mean(runs.iter().map(|r| if r.success { 1.0 } else { 0.0 })),
            mean_similarity: mean(runs.iter().map(|r| r.similarity)),
            runs,
            error: None,
        },
        Err(e) => failed(spec.task_id, e),
    }
}

/// Runs every task directory under `dataset_dir` `config.runs` times (run r
/// uses seed `config.seed + r`). With `out`, per-run files go to
/// `out/<task_id>/<run>/` and the report next to them.
pub fn evaluate(
    dataset_dir: &Path,
    backend: &BackendConfig,
    config: &RunConfig,
    out: Option<&Path>,
) -> Result<Report, EvalError> {
    config.validate().map_err(|e| EvalError::Dataset(e.to_string()))?;
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dataset_dir)
        .map_err(|e| EvalError::Dataset(format!("{}: {e}", dataset_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("task.json").is_file())
        .collect();
    dirs.sort();
    let tasks: Vec<TaskReport> = dirs.par_iter().map(|d| evaluate_task(d, backend, config, out)).collect();
    let backend_kind = serde_json::to_value(backend.kind).ok().and_then(|v| v.as_str().map(str::to_string));
    let report = Report::from_tasks(
        tasks,
        ReportConfig { backend: backend_kind.unwrap_or_default(), run: config.clone() },
    );
    if let Some(dir) = out {
        report.write(dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lcs_basics() {
        assert_eq!(lcs_length(b"abcde", b"abcde"), 5);
        assert_eq!(lcs_length(b"abc", b"xyz"), 0);
        assert_eq!(lcs_length(b"", b"xyz"), 0);
        assert_eq!(similarity::<u8>(&[], &[]), 1.0);
    }
}
