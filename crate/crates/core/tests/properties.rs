use std::sync::Arc;

use proptest::prelude::*;

use madroid_core::action::{parse_action, render_action, Action};
use madroid_core::agents::{step_cost, truncate_record, RecordStep, StepStatus};
use madroid_core::gateway::{Backend, Exchange, Gateway, GatewayError, Role, Speaker};
use madroid_core::view::{parse_prompt, parse_screen, serialize_prompt, simplify, ViewNode};

// ---- screens -------------------------------------------------------------

#[derive(Debug, Clone)]
struct GenNode {
    class: String,
    rid: String,
    text: String,
    desc: String,
    clickable: bool,
    bounds: bool,
    children: Vec<GenNode>,
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('"', "&quot;")
}

fn to_xml(n: &GenNode, out: &mut String) {
    out.push_str(&format!(
        "<node class=\"{}\" resource-id=\"{}\" text=\"{}\" content-desc=\"{}\" clickable=\"{}\" package=\"com.x\"",
        n.class,
        n.rid,
        xml_escape(&n.text),
        xml_escape(&n.desc),
        n.clickable
    ));
    if n.bounds {
        out.push_str(" bounds=\"[0,0][10,10]\"");
    }
    if n.children.is_empty() {
        out.push_str("/>");
    } else {
        out.push('>');
        for c in &n.children {
            to_xml(c, out);
        }
        out.push_str("</node>");
    }
}

fn label() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => Just(String::new()),
        2 => "[A-Za-z][A-Za-z &<\"']{0,8}",
    ]
}

fn gen_tree() -> impl Strategy<Value = GenNode> {
    let leaf = (
        prop::sample::select(vec!["android.widget.FrameLayout", "android.widget.LinearLayout", "android.widget.Button", "android.widget.EditText", "android.widget.TextView"]),
        prop_oneof![Just(String::new()), "com\\.x:id/[a-z]{1,5}"],
        label(),
        label(),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(class, rid, text, desc, clickable, bounds)| GenNode {
            class: class.to_string(),
            rid,
            text,
            desc,
            clickable,
            bounds,
            children: Vec::new(),
        });
    leaf.prop_recursive(5, 48, 4, |inner| {
        (inner.clone(), prop::collection::vec(inner, 1..4)).prop_map(|(mut node, children)| {
            // Bias towards bare wrappers so collapsing actually happens.
            if children.len() == 1 {
                node.text.clear();
                node.desc.clear();
                node.clickable = false;
            }
            node.children = children;
            node
        })
    })
}

fn semantic_signature(root: &ViewNode) -> Vec<(String, String, String, String, bool)> {
    root.preorder()
        .filter(|n| n.is_semantic())
        .map(|n| (n.class_name.clone(), n.resource_id.clone(), n.text.clone(), n.content_desc.clone(), n.clickable))
        .collect()
}

fn gen_semantic_signature(n: &GenNode, out: &mut Vec<(String, String, String, String, bool)>) {
    if n.clickable || !n.text.is_empty() || !n.desc.is_empty() {
        out.push((n.class.clone(), n.rid.clone(), n.text.clone(), n.desc.clone(), n.clickable));
    }
    for c in &n.children {
        gen_semantic_signature(c, out);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn simplification_invariants(tree in gen_tree()) {
        let mut xml = String::from("<hierarchy user=\"user_A\">");
        to_xml(&tree, &mut xml);
        xml.push_str("</hierarchy>");
        let full = parse_screen(&xml).unwrap();
        let simple = simplify(&full);

        for (i, n) in simple.root.preorder().enumerate() {
            prop_assert!(n.extra.is_empty(), "non-whitelisted attribute kept on #{}", i);
            prop_assert_eq!(n.node_id, i);
            prop_assert!(n.children.len() != 1 || n.is_semantic(), "bare single-child container #{}", i);
        }
        // Only bare containers go away; every semantic node survives in order.
        let mut expected = Vec::new();
        gen_semantic_signature(&tree, &mut expected);
        prop_assert_eq!(semantic_signature(&simple.root), expected);
        prop_assert_eq!(simplify(&simple), simple.clone());
        prop_assert_eq!(parse_prompt(&serialize_prompt(&simple)).unwrap(), simple.root);
    }
}

// ---- action grammar ------------------------------------------------------

fn operand() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9 ]{1,12}",
        "[a-z\\[\\]\\\\ ]{1,10}",
        "[\\PC]{1,8}",
        "[éüß漢字🙂\\] ]{1,6}",
    ]
    .prop_filter("operands must not be blank", |s| !s.trim().is_empty())
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        operand().prop_map(Action::tap),
        (operand(), prop_oneof![Just(String::new()), operand()]).prop_map(|(t, v)| Action::input(t, v)),
        Just(Action::Back),
        (operand(), prop_oneof![Just(String::new()), operand()]).prop_map(|(u, m)| Action::switch(u, m)),
        Just(Action::EndTask),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn canonical_form_round_trips(a in action(), prefix in "[a-z .:]{0,12}", suffix in "[a-z .]{0,12}") {
        let text = render_action(&a);
        prop_assert_eq!(parse_action(&text).unwrap(), a.clone());
        // Chatter around the action does not change what is extracted.
        let wrapped = format!("{prefix}{text}{suffix}");
        prop_assert_eq!(parse_action(&wrapped).unwrap(), a);
    }
}

#[test]
fn arbitrary_bytes_never_panic() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let alphabet: &[u8] = b"[]\\ tapinputbackswitchend_task\n\"x";
    for _ in 0..10_000 {
        let len = rng.gen_range(0..40);
        let bytes: Vec<u8> = (0..len)
            .map(|_| if rng.gen_bool(0.7) { alphabet[rng.gen_range(0..alphabet.len())] } else { rng.gen() })
            .collect();
        let text = String::from_utf8_lossy(&bytes);
        if let Ok(a) = parse_action(&text) {
            assert_eq!(parse_action(&render_action(&a)).unwrap(), a, "input {text:?}");
        }
    }
}

// ---- sessions ------------------------------------------------------------

/// Replies with the number of entries it was shown, tagged by session.
struct Echo;

impl Backend for Echo {
    fn reply(&self, ex: &Exchange<'_>) -> Result<String, GatewayError> {
        Ok(format!("{}#{}:{}", ex.session_id, ex.history.len(), ex.prompt))
    }
}

proptest! {
    #[test]
    fn sessions_never_share_history(order in prop::collection::vec(0usize..3, 1..60)) {
        let gateway = Gateway::with_backend(Arc::new(Echo));
        let mut sessions = [
            gateway.open_session(Role::Coordinator, "c"),
            gateway.open_session(Role::Operator("user_A".into()), "a"),
            gateway.open_session(Role::Operator("user_B".into()), "b"),
        ];
        let mut sent: Vec<Vec<String>> = vec![Vec::new(); 3];
        for (i, s) in order.iter().enumerate() {
            let prompt = format!("p{i}");
            let reply = sessions[*s].ask(&prompt).unwrap();
            let id = sessions[*s].id().to_string();
            let tag = format!("{id}#");
            prop_assert!(reply.starts_with(&tag));
            sent[*s].push(prompt);
        }
        for (s, session) in sessions.iter().enumerate() {
            let prompts: Vec<&str> = session
                .history()
                .iter()
                .filter(|e| e.speaker == Speaker::Prompt)
                .map(|e| e.text.as_str())
                .collect();
            prop_assert_eq!(prompts, sent[s].iter().map(String::as_str).collect::<Vec<_>>());
            let tag = format!("{}#", session.id());
            for e in session.history().iter().filter(|e| e.speaker == Speaker::Reply) {
                prop_assert!(e.text.starts_with(&tag));
            }
        }
    }
}

// ---- record truncation -----------------------------------------------------

fn record_step(index: usize, screen_lines: usize) -> RecordStep {
    RecordStep {
        index,
        user: "user_A".into(),
        action: Action::tap(format!("Button {index}")),
        screen: (0..screen_lines).map(|l| format!("#{l} TextView text=\"line {l}\" clickable=false\n")).collect(),
        screen_digest: String::new(),
        status: StepStatus::Changed,
    }
}

proptest! {
    #[test]
    fn truncation_keeps_longest_fitting_suffix(lines in prop::collection::vec(0usize..6, 0..12), budget in 0usize..400) {
        let steps: Vec<RecordStep> = lines.iter().enumerate().map(|(i, l)| record_step(i, *l)).collect();
        let kept = truncate_record(&steps, budget);
        // Oracle: try every suffix length from longest down.
        let cost = |s: &RecordStep| s.render().chars().count().div_ceil(4);
        let best = (0..=steps.len())
            .rev()
            .find(|k| steps[steps.len() - k..].iter().map(cost).sum::<usize>() <= budget)
            .unwrap();
        let expected = if steps.is_empty() { 0 } else { best.max(1) };
        prop_assert_eq!(kept.len(), expected);
        prop_assert!(kept.iter().zip(&steps[steps.len() - kept.len()..]).all(|(a, b)| a == b));
        prop_assert!(kept.iter().all(|s| step_cost(s) == cost(s)));
    }
}
