use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{Effect, Rule, Scenario, VarSource};
use super::SimError;
use crate::action::{Action, ActionKind};
use crate::users;
use crate::view::{self, ViewNode, ViewTree};

#[derive(Debug, Clone, PartialEq, Eq)]
struct Device {
    screen: String,
    history: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Timer {
    name: String,
    fires_at: u64,
    on_expiry: Vec<Effect>,
}

/// What one device action did.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StepOutcome {
    /// False when the action had no effect (no matching rule, back on the
    /// first screen, or an element that cannot take this action).
    pub changed: bool,
    pub notes: Vec<String>,
}

/// A set of simulated devices running one scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceFarm {
    scenario: Arc<Scenario>,
    seed: u64,
    devices: Vec<Device>,
    flags: BTreeMap<String, bool>,
    vars: BTreeMap<String, String>,
    timers: Vec<Timer>,
    rng: ChaCha8Rng,
    step: u64,
}

fn xml_attr(out: &mut String, key: &str, value: &str) {
    let _ = write!(out, " {key}=\"");
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
    out.push('"');
}

impl DeviceFarm {
    /// One device per user slot, each on its initial screen.
    pub fn spawn(scenario: Arc<Scenario>, seed: u64) -> Self {
        let devices = scenario
            .initial
            .iter()
            .map(|s| Device { screen: s.clone(), history: Vec::new() })
            .collect();
        DeviceFarm {
            scenario,
            seed,
            devices,
            flags: BTreeMap::new(),
            vars: BTreeMap::new(),
            timers: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
        }
    }

    /// Back to the freshly spawned state (same seed, same generated codes).
    pub fn reset(&mut self) {
        *self = DeviceFarm::spawn(Arc::clone(&self.scenario), self.seed);
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn user_count(&self) -> usize {
        self.devices.len()
    }

    /// Global step counter: one per executed device action.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn screen_id(&self, user: usize) -> Option<&str> {
        self.devices.get(user).map(|d| d.screen.as_str())
    }

    pub fn flag(&self, name: &str) -> bool {
        self.flags.get(name).copied().unwrap_or(false)
    }

    pub fn var(&self, name: &str) -> Option<&str> {
        self.vars.get(name).map(String::as_str)
    }

    pub fn active_timers(&self) -> Vec<(&str, u64)> {
        self.timers.iter().map(|t| (t.name.as_str(), t.fires_at)).collect()
    }

    fn check_user(&self, user: usize) -> Result<(), SimError> {
        if user < self.devices.len() {
            Ok(())
        } else {
            Err(SimError::UnknownUser(user))
        }
    }

    /// Replaces `${name}` with bound values; unbound names are an error.
    pub fn substitute_text(&self, text: &str) -> Result<String, String> {
        let mut out = String::with_capacity(text.len());
        let mut rest = text;
        while let Some(start) = rest.find("${") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find('}').ok_or_else(|| format!("unterminated placeholder in {text:?}"))?;
            let name = &after[..end];
            let value = self.vars.get(name).ok_or_else(|| format!("variable {name:?} is not bound"))?;
            out.push_str(value);
            rest = &after[end + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }

    fn display_text(&self, text: &str) -> String {
        // Unbound placeholders render empty, as an app would before the value exists.
        let mut out = String::new();
        let mut rest = text;
        while let Some(start) = rest.find("${") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find('}') {
                Some(end) => {
                    if let Some(v) = self.vars.get(&after[..end]) {
                        out.push_str(v);
                    }
                    rest = &after[end + 1..];
                }
                None => {
                    out.push_str(&rest[start..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        out
    }

    /// `${var}` substitution over every operand of an action.
    pub fn substitute(&self, action: &Action) -> Result<Action, String> {
        let mut err = None;
        let out = action.map_operands(|s| match self.substitute_text(s) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                s.to_string()
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// The raw hierarchy document for a user's current screen.
    pub fn device_screen(&self, user: usize) -> Result<String, SimError> {
        self.check_user(user)?;
        let device = &self.devices[user];
        let screen = &self.scenario.screens[&device.screen];
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<screen");
        xml_attr(&mut out, "user", &users::label(user));
        xml_attr(&mut out, "id", &device.screen);
        xml_attr(&mut out, "app", &self.scenario.app);
        out.push_str(">\n  <FrameLayout");
        xml_attr(&mut out, "resource-id", "android:id/content");
        out.push_str(">\n    <LinearLayout>\n");
        for el in &screen.elements {
            out.push_str("      <");
            out.push_str(&el.class_name);
            xml_attr(&mut out, "resource-id", &el.resource_id);
            xml_attr(&mut out, "text", &self.display_text(&el.text));
            xml_attr(&mut out, "content-desc", &self.display_text(&el.content_desc));
            xml_attr(&mut out, "clickable", if el.clickable { "true" } else { "false" });
            out.push_str("/>\n");
        }
        out.push_str("    </LinearLayout>\n  </FrameLayout>\n</screen>\n");
        Ok(out)
    }

    /// Parsed and simplified form of [`device_screen`](Self::device_screen).
    pub fn screen_tree(&self, user: usize) -> Result<ViewTree, SimError> {
        let raw = self.device_screen(user)?;
        let tree = view::parse_screen(&raw).map_err(|e| SimError::Render(e.to_string()))?;
        Ok(view::simplify(&tree))
    }

    /// Element index behind a node of the simplified screen. Elements are the
    /// leaves of the rendered tree, in order.
    fn element_of(&self, tree: &ViewTree, node_id: usize, user: usize) -> Option<usize> {
        let count = self.scenario.screens[&self.devices[user].screen].elements.len();
        if count == 0 {
            return None;
        }
        tree.root.preorder().filter(|n| n.children.is_empty()).position(|n| n.node_id == node_id)
    }

    fn value_matches(&self, pattern: Option<&str>, typed: Option<&str>) -> bool {
        match (pattern, typed) {
            (None, _) | (Some("*"), _) => true,
            (Some(p), Some(v)) => self.substitute_text(p).is_ok_and(|p| p.trim() == v.trim()),
            (Some(_), None) => false,
        }
    }

    fn find_rule(&self, user: usize, kind: ActionKind, element: Option<usize>, typed: Option<&str>) -> Option<&Rule> {
        let screen = &self.devices[user].screen;
        self.scenario.transitions.iter().find(|rule| {
            let w = &rule.when;
            w.screen == *screen
                && w.action == kind
                && (w.is_any_user() || users::index_of(&w.user) == Some(user))
                && (kind == ActionKind::Back || self.scenario.rule_element(rule) == element)
                && self.value_matches(w.value.as_deref(), typed)
        })
    }

    fn set_screen(&mut self, user: usize, screen: &str, how: &str, notes: &mut Vec<String>) {
        let device = &mut self.devices[user];
        if device.screen != screen {
            let old = std::mem::replace(&mut device.screen, screen.to_string());
            notes.push(format!("{}: {old} -> {screen}{how}", users::label(user)));
            device.history.push(old);
        }
    }

    fn apply(&mut self, effects: &[Effect], actor: Option<usize>, typed: Option<&str>, notes: &mut Vec<String>) {
        for effect in effects {
            match effect {
                Effect::SetScreen { user, screen } => {
                    let target = if user == "self" { actor } else { users::index_of(user) };
                    if let Some(t) = target.filter(|t| *t < self.devices.len()) {
                        self.set_screen(t, screen, "", notes);
                    }
                }
                Effect::InjectScreen { user, screen } => {
                    if let Some(t) = users::index_of(user).filter(|t| *t < self.devices.len()) {
                        self.set_screen(t, screen, " (injected)", notes);
                    }
                }
                Effect::SetFlag { name, value } => {
                    self.flags.insert(name.clone(), *value);
                }
                Effect::BindVar { name, from } => {
                    let value = match from {
                        VarSource::Input => typed.unwrap_or_default().to_string(),
                        VarSource::Digits(n) => {
                            let hi = 10u64.pow(*n);
                            let lo = if *n > 1 { hi / 10 } else { 0 };
                            self.rng.gen_range(lo..hi).to_string()
                        }
                    };
                    notes.push(format!("bound {name} = {value}"));
                    self.vars.insert(name.clone(), value);
                }
                Effect::StartTimer { name, ttl_steps, on_expiry } => {
                    self.timers.retain(|t| t.name != *name);
                    self.timers.push(Timer {
                        name: name.clone(),
                        fires_at: self.step + ttl_steps,
                        on_expiry: on_expiry.clone(),
                    });
                    notes.push(format!("timer {name} started ({ttl_steps} steps)"));
                }
                Effect::CancelTimer { name } => {
                    let before = self.timers.len();
                    self.timers.retain(|t| t.name != *name);
                    if self.timers.len() != before {
                        notes.push(format!("timer {name} cancelled"));
                    }
                }
            }
        }
    }

    fn advance_timers(&mut self, notes: &mut Vec<String>) {
        loop {
            let due = self
                .timers
                .iter()
                .enumerate()
                .filter(|(_, t)| t.fires_at <= self.step)
                .min_by_key(|(i, t)| (t.fires_at, *i))
                .map(|(i, _)| i);
            let Some(i) = due else { break };
            let timer = self.timers.remove(i);
            notes.push(format!("timer {} expired", timer.name));
            self.apply(&timer.on_expiry, None, None, notes);
        }
    }

    /// Runs one device action for `user`.
    pub fn execute(&mut self, user: usize, action: &Action) -> Result<StepOutcome, SimError> {
        self.check_user(user)?;
        let kind = action.kind();
        let mut notes = Vec::new();
        let mut element = None;
        let mut interactable = true;
        match action {
            Action::Tap { target } | Action::Input { target, .. } => {
                let tree = self.screen_tree(user)?;
                let eligible: fn(&ViewNode) -> bool = match kind {
                    ActionKind::Tap => |n| n.clickable,
                    _ => ViewNode::is_editable,
                };
                match view::resolve_element(&tree, target, eligible) {
                    Ok(id) => element = self.element_of(&tree, id, user),
                    Err(_) => match view::resolve_element(&tree, target, |_| true) {
                        Ok(_) => interactable = false,
                        Err(_) => {
                            return Err(SimError::TargetMissing {
                                user: users::label(user),
                                descriptor: target.clone(),
                            })
                        }
                    },
                }
                if element.is_none() {
                    interactable = false;
                }
            }
            Action::Back => {}
            other => return Err(SimError::NotADeviceAction(other.to_string())),
        }

        self.step += 1;
        let typed = action.value();
        let rule = if interactable { self.find_rule(user, kind, element, typed).cloned() } else { None };
        let changed = match rule {
            Some(rule) => {
                self.apply(&rule.then, Some(user), typed, &mut notes);
                true
            }
            None if kind == ActionKind::Back => match self.devices[user].history.pop() {
                Some(prev) => {
                    let old = std::mem::replace(&mut self.devices[user].screen, prev);
                    notes.push(format!("{}: {old} -> {} (back)", users::label(user), self.devices[user].screen));
                    true
                }
                None => {
                    notes.push("back: already on the first screen".into());
                    false
                }
            },
            None if !interactable => {
                notes.push(format!("element cannot take a {kind} action"));
                false
            }
            None => {
                notes.push("no effect".into());
                false
            }
        };
        self.advance_timers(&mut notes);
        Ok(StepOutcome { changed, notes })
    }

    /// Evaluates the scenario's success predicate.
    pub fn check_success(&self) -> bool {
        let cond = &self.scenario.success_when;
        let screens_ok = cond.screens.iter().all(|(label, screen)| {
            users::index_of(label).and_then(|i| self.screen_id(i)) == Some(screen.as_str())
        });
        screens_ok && cond.flags.iter().all(|(name, want)| self.flag(name) == *want)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expiring() -> Arc<Scenario> {
        let v = serde_json::json!({
            "name": "ring", "app": "Dialer", "user_slots": 2,
            "screens": {
                "home": {"elements": [
                    {"class": "android.widget.Button", "text": "Call", "clickable": true},
                    {"class": "android.widget.TextView", "text": "Idle"}
                ]},
                "ringing": {"elements": [{"class": "android.widget.Button", "text": "Answer", "clickable": true}]},
                "calling": {"elements": [
                    {"class": "android.widget.TextView", "text": "Code ${code}"},
                    {"class": "android.widget.EditText", "content_desc": "Note", "clickable": true, "editable": true}
                ]},
                "talking": {"elements": [{"class": "android.widget.TextView", "text": "Talking"}]}
            },
            "initial": ["home", "home"],
            "transitions": [
                {"when": {"user": "user_A", "screen": "home", "action": "tap", "target": "Call"},
                 "then": [
                    {"bind_var": {"name": "code", "from": {"digits": 4}}},
                    {"set_screen": {"screen": "calling"}},
                    {"inject_screen": {"user": "user_B", "screen": "ringing"}},
                    {"start_timer": {"name": "ring", "ttl_steps": 3, "on_expiry": [
                        {"set_screen": {"user": "user_A", "screen": "home"}},
                        {"set_screen": {"user": "user_B", "screen": "home"}},
                        {"set_flag": {"name": "missed", "value": true}}
                    ]}}
                 ]},
                {"when": {"user": "user_B", "screen": "ringing", "action": "tap", "target": "Answer"},
                 "then": [{"cancel_timer": {"name": "ring"}}, {"set_screen": {"screen": "talking"}},
                          {"inject_screen": {"user": "user_A", "screen": "talking"}}]}
            ],
            "success_when": {"screens": {"user_A": "talking", "user_B": "talking"}},
            "ground_truth": [
                {"user": "user_A", "action": "[tap] [Call]"},
                {"user": "user_B", "action": "[tap] [Answer]"}
            ]
        });
        Arc::new(Scenario::from_json(&v.to_string()).unwrap())
    }

    #[test]
    fn timer_fires_after_ttl_steps() {
        let mut farm = DeviceFarm::spawn(expiring(), 7);
        farm.execute(0, &Action::tap("Call")).unwrap();
        assert_eq!(farm.active_timers(), vec![("ring", 4)]);
        // Two more steps: still ringing.
        for _ in 0..2 {
            farm.execute(0, &Action::input("Note", "hi")).unwrap();
        }
        assert_eq!(farm.screen_id(1), Some("ringing"));
        // The third step after the start lets it expire.
        let out = farm.execute(0, &Action::input("Note", "hi")).unwrap();
        assert!(out.notes.iter().any(|n| n == "timer ring expired"));
        assert_eq!(farm.screen_id(0), Some("home"));
        assert_eq!(farm.screen_id(1), Some("home"));
        assert!(farm.flag("missed"));
        assert!(farm.active_timers().is_empty());
    }

    #[test]
    fn cancelled_timer_never_fires() {
        let mut farm = DeviceFarm::spawn(expiring(), 7);
        farm.execute(0, &Action::tap("Call")).unwrap();
        farm.execute(1, &Action::tap("Answer")).unwrap();
        for _ in 0..5 {
            farm.execute(1, &Action::Back).unwrap();
        }
        assert!(!farm.flag("missed"));
    }

    #[test]
    fn reset_restores_spawn_state_and_codes() {
        let mut farm = DeviceFarm::spawn(expiring(), 42);
        let fresh = farm.clone();
        farm.execute(0, &Action::tap("Call")).unwrap();
        let code = farm.var("code").unwrap().to_string();
        assert_eq!(code.len(), 4);
        assert!(farm.device_screen(0).unwrap().contains(&format!("Code {code}")));
        farm.reset();
        assert_eq!(farm, fresh);
        farm.execute(0, &Action::tap("Call")).unwrap();
        assert_eq!(farm.var("code"), Some(code.as_str()));
    }

    #[test]
    fn unbound_placeholder_renders_empty_and_substitution_fails() {
        let farm = DeviceFarm::spawn(expiring(), 1);
        assert!(farm.substitute(&Action::input("x", "${code}")).is_err());
        assert_eq!(farm.substitute(&Action::tap("plain")).unwrap(), Action::tap("plain"));
    }

    #[test]
    fn ineffective_and_missing_targets() {
        let mut farm = DeviceFarm::spawn(expiring(), 1);
        // Present but not clickable: a step passes without effect.
        let out = farm.execute(0, &Action::tap("Idle")).unwrap();
        assert!(!out.changed);
        assert_eq!(farm.step(), 1);
        // Absent: an error, and time does not move.
        assert!(matches!(farm.execute(0, &Action::tap("Nowhere")), Err(SimError::TargetMissing { .. })));
        assert_eq!(farm.step(), 1);
        assert!(matches!(farm.execute(0, &Action::EndTask), Err(SimError::NotADeviceAction(_))));
        assert!(!farm.execute(0, &Action::Back).unwrap().changed);
    }

    #[test]
    fn back_pops_history() {
        let mut farm = DeviceFarm::spawn(expiring(), 1);
        farm.execute(0, &Action::tap("Call")).unwrap();
        assert!(farm.execute(0, &Action::Back).unwrap().changed);
        assert_eq!(farm.screen_id(0), Some("home"));
    }
}
