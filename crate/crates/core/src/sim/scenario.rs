use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::farm::DeviceFarm;
use super::SimError;
use crate::action::{Action, ActionKind};
use crate::users;

/// One element of a simulated screen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementDef {
    #[serde(rename = "class")]
    pub class_name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub resource_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub content_desc: String,
    #[serde(default)]
    pub clickable: bool,
    #[serde(default)]
    pub editable: bool,
}

impl ElementDef {
    /// Whether a rule target names this element (text, description,
    /// resource id or its last segment; case-insensitive).
    pub fn answers_to(&self, target: &str) -> bool {
        let t = target.trim().to_lowercase();
        let eq = |s: &str| !s.is_empty() && s.to_lowercase() == t;
        let suffix = self.resource_id.rsplit(['/', ':', '.']).next().unwrap_or_default();
        eq(&self.text) || eq(&self.content_desc) || eq(&self.resource_id) || eq(suffix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenDef {
    #[serde(default)]
    pub elements: Vec<ElementDef>,
}

fn any_user() -> String {
    "any".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    /// A user label, or `any`.
    #[serde(default = "any_user")]
    pub user: String,
    pub screen: String,
    pub action: ActionKind,
    /// Element the action must land on (tap and input).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// Input value: literal, `*` for anything, `${var}` placeholders allowed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarSource {
    /// The value typed by the triggering input action.
    Input,
    /// A fresh decimal code with this many digits from the farm's seeded generator.
    Digits(u32),
}

fn self_user() -> String {
    "self".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    SetScreen {
        #[serde(default = "self_user")]
        user: String,
        screen: String,
    },
    SetFlag {
        name: String,
        value: bool,
    },
    BindVar {
        name: String,
        from: VarSource,
    },
    InjectScreen {
        user: String,
        screen: String,
    },
    StartTimer {
        name: String,
        ttl_steps: u64,
        #[serde(default)]
        on_expiry: Vec<Effect>,
    },
    CancelTimer {
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub when: Trigger,
    pub then: Vec<Effect>,
}

impl Trigger {
    pub fn is_any_user(&self) -> bool {
        self.user.eq_ignore_ascii_case("any")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessWhen {
    #[serde(default)]
    pub screens: BTreeMap<String, String>,
    #[serde(default)]
    pub flags: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub user: String,
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_count: Option<usize>,
    #[serde(default)]
    pub sub_tasks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_user: Option<String>,
}

/// A declarative multi-device app model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub app: String,
    pub user_slots: usize,
    pub screens: BTreeMap<String, ScreenDef>,
    pub initial: Vec<String>,
    #[serde(default)]
    pub transitions: Vec<Rule>,
    pub success_when: SuccessWhen,
    pub ground_truth: Vec<TraceStep>,
    #[serde(default)]
    pub metadata: Metadata,
}

/// Where an effect list runs: in a rule fired by a user (`None` when the rule
/// fires for any user) or in a timer expiry, which has no actor.
#[derive(Debug, Clone, Copy)]
enum EffectScope {
    Rule(Option<usize>),
    Expiry,
}

/// Seed used when replaying the ground truth at load time.
const VALIDATION_SEED: u64 = 0;

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| SimError::ScenarioInvalid(format!("parse: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn user_labels(&self) -> Vec<String> {
        (0..self.user_slots).map(users::label).collect()
    }

    /// Task description from the metadata, or the scenario name.
    pub fn task_text(&self) -> String {
        self.metadata.task.clone().unwrap_or_else(|| self.name.clone())
    }

    /// Labels of the users `rule` may fire for.
    fn rule_users(&self, rule: &Rule) -> BTreeSet<usize> {
        match users::index_of(&rule.when.user) {
            Some(i) if !rule.when.is_any_user() => BTreeSet::from([i]),
            _ => (0..self.user_slots).collect(),
        }
    }

    fn invalid(msg: impl Into<String>) -> SimError {
        SimError::ScenarioInvalid(msg.into())
    }

    fn check_user(&self, label: &str, context: &str) -> Result<usize, SimError> {
        match users::index_of(label) {
            Some(i) if i < self.user_slots => Ok(i),
            _ => Err(Self::invalid(format!("{context}: unknown user {label:?}"))),
        }
    }

    fn check_screen(&self, screen: &str, context: &str) -> Result<(), SimError> {
        if self.screens.contains_key(screen) {
            Ok(())
        } else {
            Err(Self::invalid(format!("{context}: unknown screen {screen:?}")))
        }
    }

    fn check_effects(&self, effects: &[Effect], scope: EffectScope, context: &str) -> Result<(), SimError> {
        for effect in effects {
            match effect {
                Effect::SetScreen { user, screen } => {
                    self.check_screen(screen, context)?;
                    match (scope, user.as_str()) {
                        (EffectScope::Expiry, "self") => {
                            return Err(Self::invalid(format!("{context}: expiry set_screen needs an explicit user")))
                        }
                        (_, "self") => {}
                        (EffectScope::Expiry, label) => {
                            self.check_user(label, context)?;
                        }
                        (EffectScope::Rule(actor), label) => {
                            if actor != Some(self.check_user(label, context)?) {
                                return Err(Self::invalid(format!(
                                    "{context}: set_screen may only target the acting user; use inject_screen"
                                )));
                            }
                        }
                    }
                }
                Effect::InjectScreen { user, screen } => {
                    self.check_screen(screen, context)?;
                    let target = self.check_user(user, context)?;
                    match scope {
                        EffectScope::Rule(None) => {
                            return Err(Self::invalid(format!(
                                "{context}: inject_screen needs a rule bound to a specific user"
                            )))
                        }
                        EffectScope::Rule(Some(actor)) if actor == target => {
                            return Err(Self::invalid(format!("{context}: inject_screen must target another user")))
                        }
                        _ => {}
                    }
                }
                Effect::StartTimer { name, ttl_steps, on_expiry } => {
                    if *ttl_steps == 0 {
                        return Err(Self::invalid(format!("{context}: timer {name:?} has ttl 0")));
                    }
                    self.check_effects(on_expiry, EffectScope::Expiry, &format!("{context} (timer {name})"))?;
                }
                Effect::BindVar { from: VarSource::Digits(n), name } if *n == 0 || *n > 18 => {
                    return Err(Self::invalid(format!("{context}: var {name:?} needs 1..=18 digits")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Index of the element `rule` targets on its screen.
    pub(crate) fn rule_element(&self, rule: &Rule) -> Option<usize> {
        let target = rule.when.target.as_deref()?;
        self.screens.get(&rule.when.screen)?.elements.iter().position(|e| e.answers_to(target))
    }

    fn values_overlap(a: &Option<String>, b: &Option<String>) -> bool {
        match (a, b) {
            (Some(x), Some(y)) => x == "*" || y == "*" || x.contains("${") || y.contains("${") || x == y,
            _ => true,
        }
    }

    /// Structural checks plus a replay of the ground truth.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.user_slots == 0 || self.user_slots > 26 {
            return Err(Self::invalid("user_slots must be in 1..=26"));
        }
        if self.initial.len() != self.user_slots {
            return Err(Self::invalid(format!(
                "initial lists {} screens for {} users",
                self.initial.len(),
                self.user_slots
            )));
        }
        for s in &self.initial {
            self.check_screen(s, "initial")?;
        }
        for (id, screen) in &self.screens {
            for el in &screen.elements {
                let valid_name = el.class_name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                    && el.class_name.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c));
                if !valid_name {
                    return Err(Self::invalid(format!("screen {id}: bad element class {:?}", el.class_name)));
                }
                let node = crate::view::ViewNode { class_name: el.class_name.clone(), ..Default::default() };
                if el.editable && !node.is_editable() {
                    return Err(Self::invalid(format!(
                        "screen {id}: editable element must use an edit-text class, got {:?}",
                        el.class_name
                    )));
                }
            }
        }

        for (i, rule) in self.transitions.iter().enumerate() {
            let ctx = format!("transition {i}");
            self.check_screen(&rule.when.screen, &ctx)?;
            let actor = if rule.when.is_any_user() {
                None
            } else {
                Some(self.check_user(&rule.when.user, &ctx)?)
            };
            match rule.when.action {
                ActionKind::Tap | ActionKind::Input => {
                    if rule.when.target.is_none() {
                        return Err(Self::invalid(format!("{ctx}: {} rule needs a target", rule.when.action)));
                    }
                    if self.rule_element(rule).is_none() {
                        return Err(Self::invalid(format!(
                            "{ctx}: target {:?} is not on screen {:?}",
                            rule.when.target.as_deref().unwrap_or_default(),
                            rule.when.screen
                        )));
                    }
                }
                ActionKind::Back => {}
                other => return Err(Self::invalid(format!("{ctx}: {other} is not a device action"))),
            }
            self.check_effects(&rule.then, EffectScope::Rule(actor), &ctx)?;
        }

        for (i, a) in self.transitions.iter().enumerate() {
            for (j, b) in self.transitions.iter().enumerate().skip(i + 1) {
                let same_trigger = a.when.screen == b.when.screen
                    && a.when.action == b.when.action
                    && self.rule_element(a) == self.rule_element(b)
                    && !self.rule_users(a).is_disjoint(&self.rule_users(b))
                    && Self::values_overlap(&a.when.value, &b.when.value);
                if same_trigger {
                    return Err(Self::invalid(format!("transitions {i} and {j} match the same trigger")));
                }
            }
        }

        for (label, screen) in &self.success_when.screens {
            self.check_user(label, "success_when")?;
            self.check_screen(screen, "success_when")?;
        }
        if let Some(n) = self.metadata.user_count {
            if n != self.user_slots {
                return Err(Self::invalid(format!("metadata.user_count {n} != user_slots {}", self.user_slots)));
            }
        }
        if !self.metadata.sub_tasks.is_empty() && self.metadata.sub_tasks.len() != self.user_slots {
            return Err(Self::invalid("metadata.sub_tasks must list one entry per user"));
        }
        if let Some(first) = &self.metadata.first_user {
            self.check_user(first, "metadata.first_user")?;
        }
        if self.ground_truth.is_empty() {
            return Err(Self::invalid("ground_truth is empty"));
        }
        self.concrete_script(VALIDATION_SEED)?;
        Ok(())
    }

    /// Replays the ground truth on a fresh farm and returns it with every
    /// `${var}` substituted by the value bound at that point.
    pub fn concrete_script(&self, seed: u64) -> Result<Vec<TraceStep>, SimError> {
        let mut farm = DeviceFarm::spawn(std::sync::Arc::new(self.clone()), seed);
        let mut script = Vec::with_capacity(self.ground_truth.len());
        let last = self.ground_truth.len() - 1;
        for (i, step) in self.ground_truth.iter().enumerate() {
            let ctx = format!("ground_truth[{i}]");
            let user = self.check_user(&step.user, &ctx)?;
            let action = farm.substitute(&step.action).map_err(|e| Self::invalid(format!("{ctx}: {e}")))?;
            match &action {
                Action::SwitchUser { user: to, .. } => {
                    let to = self.check_user(to, &ctx)?;
                    if to == user {
                        return Err(Self::invalid(format!("{ctx}: switch to the acting user")));
                    }
                }
                Action::EndTask if i != last => {
                    return Err(Self::invalid(format!("{ctx}: end_task before the end of the trace")));
                }
                Action::EndTask => {}
                device => {
                    let outcome = farm
                        .execute(user, device)
                        .map_err(|e| Self::invalid(format!("{ctx}: replay failed: {e}")))?;
                    if !outcome.changed {
                        return Err(Self::invalid(format!("{ctx}: {device} has no effect")));
                    }
                }
            }
            script.push(TraceStep { user: users::label(user), action });
        }
        if !farm.check_success() {
            return Err(Self::invalid("ground_truth replay ends without success"));
        }
        Ok(script)
    }

    /// Device actions of the ground truth only.
    pub fn device_truth(&self) -> Vec<TraceStep> {
        self.ground_truth.iter().filter(|s| s.action.is_device_action()).cloned().collect()
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, SimError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::ScenarioInvalid(format!("{}: {e}", path.display())))?;
    Scenario::from_json(&text).map_err(|e| match e {
        SimError::ScenarioInvalid(m) => SimError::ScenarioInvalid(format!("{}: {m}", path.display())),
        other => other,
    })
}
