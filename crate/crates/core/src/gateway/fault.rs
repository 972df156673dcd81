use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{Backend, Exchange, FaultSpec, GatewayError};
use crate::action::render_action;
use crate::users;

/// Delegates to `inner`, except that the operator prompt number `spec.step`
/// (0-based, counted per user across all of that user's sessions) gets
/// `spec.action` instead. Fires at most once.
pub struct FaultBackend {
    inner: Arc<dyn Backend>,
    spec: FaultSpec,
    state: Mutex<FaultState>,
}

#[derive(Default)]
struct FaultState {
    asks: HashMap<String, usize>,
    fired: bool,
}

impl FaultBackend {
    pub fn new(inner: Arc<dyn Backend>, spec: FaultSpec) -> Self {
        FaultBackend { inner, spec, state: Mutex::new(FaultState::default()) }
    }

    pub fn fired(&self) -> bool {
        self.state.lock().expect("fault state poisoned").fired
    }
}

impl Backend for FaultBackend {
    fn reply(&self, ex: &Exchange<'_>) -> Result<String, GatewayError> {
        if let Some(user) = ex.role.user().and_then(users::normalize) {
            let mut state = self.state.lock().expect("fault state poisoned");
            let count = state.asks.entry(user.clone()).or_insert(0);
            let step = *count;
            *count += 1;
            if !state.fired && users::normalize(&self.spec.user).as_deref() == Some(user.as_str()) && step == self.spec.step
            {
                state.fired = true;
                log::info!("fault injected for {user} at prompt {step}");
                return Ok(render_action(&self.spec.action));
            }
        }
        self.inner.reply(ex)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Action;
    use crate::gateway::Role;

    struct Fixed;
    impl Backend for Fixed {
        fn reply(&self, _: &Exchange<'_>) -> Result<String, GatewayError> {
            Ok("[back]".into())
        }
    }

    #[test]
    fn injects_exactly_once() {
        let spec = FaultSpec { user: "user_B".into(), step: 1, action: Action::tap("Decline") };
        let b = FaultBackend::new(Arc::new(Fixed), spec);
        let role_b = Role::Operator("user_B".into());
        let role_a = Role::Operator("user_A".into());
        let ask = |role: &Role| b.reply(&Exchange { session_id: "s", role, history: &[], prompt: "p" }).unwrap();
        assert_eq!(ask(&role_a), "[back]");
        assert_eq!(ask(&role_a), "[back]");
        assert_eq!(ask(&role_b), "[back]");
        assert_eq!(ask(&role_b), "[tap] [Decline]");
        assert!(b.fired());
        for _ in 0..5 {
            assert_eq!(ask(&role_b), "[back]");
        }
    }
}
