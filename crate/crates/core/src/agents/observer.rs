use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{truncate_record, AgentError, ExecutionRecord, TaskPlan, Templates};
use crate::gateway::ChatSession;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Periodic,
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    ErrorAt { step: usize, reason: String },
    Complete,
    Incomplete { reason: String },
}

fn reason_after(reply: &str, end: usize) -> String {
    reply[end..].trim_start_matches([':', ' ', '-', '.', ',']).trim().to_string()
}

/// Keyword-first reading of an Observer reply. The earliest keyword wins;
/// `phase` decides which verdicts are acceptable, and an error must cite a
/// step present in `record_len`.
pub fn parse_verdict(reply: &str, phase: Phase, record_len: usize) -> Option<Verdict> {
    let re = Regex::new(r"(?i)\b(error at step\s+(\d+)|incomplete|complete|ok)\b").expect("static regex");
    let cap = re.captures(reply)?;
    let whole = cap.get(0).expect("group 0");
    let keyword = cap[1].to_lowercase();
    let verdict = if let Some(n) = cap.get(2) {
        let step: usize = n.as_str().parse().ok()?;
        if step >= record_len {
            return None;
        }
        Verdict::ErrorAt { step, reason: reason_after(reply, whole.end()) }
    } else if keyword == "incomplete" {
        Verdict::Incomplete { reason: reason_after(reply, whole.end()) }
    } else if keyword == "complete" {
        Verdict::Complete
    } else {
        Verdict::Ok
    };
    let allowed = matches!(
        (phase, &verdict),
        (_, Verdict::ErrorAt { .. })
            | (Phase::Periodic, Verdict::Ok)
            | (Phase::Final, Verdict::Complete | Verdict::Incomplete { .. })
    );
    allowed.then_some(verdict)
}

/// Shows the plan and the (truncated) record and reads back a verdict. A
/// reply that cannot be used is asked again once, then taken as `ok`
/// (periodic) or `incomplete` (final).
pub fn review(
    plan: &TaskPlan,
    record: &ExecutionRecord,
    phase: Phase,
    token_budget: usize,
    session: &mut ChatSession,
    templates: &Templates,
) -> Result<Verdict, AgentError> {
    let shown = truncate_record(&record.steps, token_budget);
    let rendered: String = if shown.is_empty() {
        "(no actions yet)\n".into()
    } else {
        shown.iter().map(|s| s.render()).collect()
    };
    let summary = plan.summary();
    let name = match phase {
        Phase::Periodic => "observer_periodic",
        Phase::Final => "observer_final",
    };
    let prompt = templates.render(name, &[("task", &plan.task), ("plan", &summary), ("record", rendered.trim_end())])?;
    let reply = session.ask(&prompt)?;
    if let Some(v) = parse_verdict(&reply, phase, record.len()) {
        return Ok(v);
    }
    let reask = templates.render("reask", &[("problem", "no usable verdict"), ("prompt", &prompt)])?;
    let reply = session.ask(&reask)?;
    Ok(parse_verdict(&reply, phase, record.len()).unwrap_or_else(|| {
        log::warn!("observer gave no usable verdict twice; falling back");
        match phase {
            Phase::Periodic => Verdict::Ok,
            Phase::Final => Verdict::Incomplete { reason: "observer reply could not be parsed".into() },
        }
    }))
}
