//! Screen hierarchy handling.
//!
//! Raw view-hierarchy dumps are parsed into a [`ViewTree`], reduced to the
//! attributes an agent needs by [`simplify`], rendered one line per node by
//! [`serialize_prompt`], and free-text element descriptors coming back from an
//! agent are mapped onto nodes with [`resolve_element`].
//!
//! Two input dialects are accepted:
//!
//! * UIAutomator dumps: `<hierarchy>` wrapper, `<node class=".." ...>` elements.
//! * The simulator dialect: `<screen user=".." id="..">` wrapper whose elements
//!   are named after their class (`<Button text="Call" clickable="true"/>`).
//!
//! Both use the attribute names `resource-id`, `class`, `clickable`, `text`
//! and `content-desc`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ViewError {
    #[error("malformed hierarchy document: {0}")]
    MalformedDocument(String),
    #[error("no element matches descriptor {0:?}")]
    NoMatch(String),
    #[error("element descriptor is empty")]
    EmptyDescriptor,
    #[error("prompt form line {line}: {message}")]
    PromptSyntax { line: usize, message: String },
}

/// One element of a screen.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ViewNode {
    pub node_id: usize,
    pub class_name: String,
    pub resource_id: String,
    pub text: String,
    pub content_desc: String,
    pub clickable: bool,
    /// Attributes outside the whitelist (bounds, package, ime options...).
    /// Always empty after [`simplify`].
    pub extra: BTreeMap<String, String>,
    pub children: Vec<ViewNode>,
}

impl ViewNode {
    /// A node is semantic when an agent could refer to or act on it.
    pub fn is_semantic(&self) -> bool {
        self.clickable || !self.text.is_empty() || !self.content_desc.is_empty()
    }

    pub fn is_editable(&self) -> bool {
        let simple = self.class_name.rsplit('.').next().unwrap_or_default();
        simple.contains("EditText") || simple.contains("AutoComplete") || simple.ends_with("TextField")
    }

    /// Pre-order traversal of this subtree.
    pub fn preorder(&self) -> Preorder<'_> {
        Preorder { stack: vec![self] }
    }

    fn renumber(&mut self, next: &mut usize) {
        self.node_id = *next;
        *next += 1;
        for child in &mut self.children {
            child.renumber(next);
        }
    }
}

pub struct Preorder<'a> {
    stack: Vec<&'a ViewNode>,
}

impl<'a> Iterator for Preorder<'a> {
    type Item = &'a ViewNode;

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewTree {
    pub root: ViewNode,
    /// User label of the device the dump came from (may be empty).
    pub source_user: String,
    /// Hex SHA-256 of the raw document.
    pub raw_digest: String,
}

impl ViewTree {
    pub fn node(&self, node_id: usize) -> Option<&ViewNode> {
        self.root.preorder().find(|n| n.node_id == node_id)
    }

    pub fn node_count(&self) -> usize {
        self.root.preorder().count()
    }
}

/// Hex SHA-256 of a raw screen document.
pub fn digest(raw: &str) -> String {
    hex::encode(Sha256::digest(raw.as_bytes()))
}

const WRAPPERS: [&str; 2] = ["hierarchy", "screen"];

struct RawElement {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<RawElement>,
}

fn read_element(start: &BytesStart<'_>) -> Result<RawElement, ViewError> {
    let name = start.name().as_ref().to_string();
    let mut attrs = Vec::new();
    for attr in start.attributes() {
        let attr = attr.map_err(|e| ViewError::MalformedDocument(e.to_string()))?;
        let key = attr.key.as_ref().to_string();
        let value = attr
            .normalized_value(XmlVersion::Implicit1_0)
            .map_err(|e| ViewError::MalformedDocument(e.to_string()))?
            .into_owned();
        attrs.push((key, value));
    }
    Ok(RawElement { name, attrs, children: Vec::new() })
}

fn to_node(el: RawElement) -> ViewNode {
    let mut node = ViewNode::default();
    let mut class_attr = None;
    for (key, value) in el.attrs {
        match key.as_str() {
            "class" => class_attr = Some(value),
            "resource-id" => node.resource_id = value,
            "text" => node.text = value,
            "content-desc" => node.content_desc = value,
            "clickable" => node.clickable = value.trim().eq_ignore_ascii_case("true"),
            _ => {
                node.extra.insert(key, value);
            }
        }
    }
    node.class_name = match class_attr {
        Some(c) => c,
        None if el.name == "node" => String::new(),
        None => el.name,
    };
    node.children = el.children.into_iter().map(to_node).collect();
    node
}

/// Parses a raw hierarchy document into a full (unsimplified) tree.
pub fn parse_screen(raw: &str) -> Result<ViewTree, ViewError> {
    let mut reader = Reader::from_str(raw);
    reader.config_mut().check_end_names = true;

    let mut stack: Vec<RawElement> = Vec::new();
    let mut roots: Vec<RawElement> = Vec::new();
    loop {
        let event = reader.read_event().map_err(|e| {
            ViewError::MalformedDocument(format!("at byte {}: {e}", reader.error_position()))
        })?;
        match event {
            Event::Start(start) => stack.push(read_element(&start)?),
            Event::Empty(start) => {
                let el = read_element(&start)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None => roots.push(el),
                }
            }
            Event::End(_) => {
                let el = stack
                    .pop()
                    .ok_or_else(|| ViewError::MalformedDocument("unexpected closing tag".into()))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None => roots.push(el),
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if let Some(open) = stack.last() {
        return Err(ViewError::MalformedDocument(format!("unclosed element <{}>", open.name)));
    }
    let mut root = match roots.len() {
        0 => return Err(ViewError::MalformedDocument("no root element".into())),
        1 => roots.pop().unwrap(),
        n => return Err(ViewError::MalformedDocument(format!("{n} top-level elements"))),
    };

    let mut source_user = String::new();
    if WRAPPERS.contains(&root.name.as_str()) {
        if let Some((_, user)) = root.attrs.iter().find(|(k, _)| k == "user") {
            source_user = user.clone();
        }
        root = match root.children.len() {
            0 => return Err(ViewError::MalformedDocument(format!("empty <{}>", root.name))),
            1 => root.children.pop().unwrap(),
            _ => RawElement { name: root.name, attrs: Vec::new(), children: root.children },
        };
    }

    let mut node = to_node(root);
    node.renumber(&mut 0);
    Ok(ViewTree { root: node, source_user, raw_digest: digest(raw) })
}

fn collapse(mut node: ViewNode) -> ViewNode {
    node.extra.clear();
    node.children = std::mem::take(&mut node.children).into_iter().map(collapse).collect();
    if node.children.len() == 1 && !node.is_semantic() {
        node.children.pop().unwrap()
    } else {
        node
    }
}

/// Drops non-whitelisted attributes and collapses every non-semantic
/// container with exactly one child into that child. Node ids are reassigned
/// in pre-order afterwards.
pub fn simplify(tree: &ViewTree) -> ViewTree {
    let mut root = collapse(tree.root.clone());
    root.renumber(&mut 0);
    ViewTree { root, source_user: tree.source_user.clone(), raw_digest: tree.raw_digest.clone() }
}

fn needs_quotes(s: &str) -> bool {
    s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '"' || c == '\\')
}

fn push_quoted(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn serialize_node(node: &ViewNode, depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("  ");
    }
    let _ = write!(out, "#{} ", node.node_id);
    if needs_quotes(&node.class_name) {
        push_quoted(out, &node.class_name);
    } else {
        out.push_str(&node.class_name);
    }
    if !node.resource_id.is_empty() {
        out.push_str(" id=");
        if needs_quotes(&node.resource_id) {
            push_quoted(out, &node.resource_id);
        } else {
            out.push_str(&node.resource_id);
        }
    }
    if !node.text.is_empty() {
        out.push_str(" text=");
        push_quoted(out, &node.text);
    }
    if !node.content_desc.is_empty() {
        out.push_str(" desc=");
        push_quoted(out, &node.content_desc);
    }
    let _ = write!(out, " clickable={}", node.clickable);
    out.push('\n');
    for child in &node.children {
        serialize_node(child, depth + 1, out);
    }
}

/// Renders a tree one node per line, indented two spaces per level.
pub fn serialize_prompt(tree: &ViewTree) -> String {
    let mut out = String::new();
    serialize_node(&tree.root, 0, &mut out);
    out
}

struct LineCursor<'a> {
    rest: &'a str,
    line: usize,
}

impl<'a> LineCursor<'a> {
    fn err(&self, message: impl Into<String>) -> ViewError {
        ViewError::PromptSyntax { line: self.line, message: message.into() }
    }

    fn skip_spaces(&mut self) {
        self.rest = self.rest.trim_start_matches(' ');
    }

    fn token(&mut self) -> &'a str {
        let end = self.rest.find(' ').unwrap_or(self.rest.len());
        let (tok, rest) = self.rest.split_at(end);
        self.rest = rest;
        tok
    }

    fn value(&mut self) -> Result<String, ViewError> {
        if !self.rest.starts_with('"') {
            return Ok(self.token().to_string());
        }
        let mut out = String::new();
        let mut chars = self.rest[1..].char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.rest = &self.rest[i + 2..];
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, 'n')) => out.push('\n'),
                    Some((_, 'r')) => out.push('\r'),
                    Some((_, 't')) => out.push('\t'),
                    Some((_, c)) => out.push(c),
                    None => break,
                },
                c => out.push(c),
            }
        }
        Err(self.err("unterminated quoted value"))
    }
}

fn parse_prompt_line(body: &str, line: usize) -> Result<ViewNode, ViewError> {
    let mut cur = LineCursor { rest: body, line };
    let id = cur.token();
    let node_id = id
        .strip_prefix('#')
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| cur.err(format!("bad node reference {id:?}")))?;
    cur.skip_spaces();
    let mut node = ViewNode { node_id, class_name: cur.value()?, ..Default::default() };
    loop {
        cur.skip_spaces();
        if cur.rest.is_empty() {
            break;
        }
        let eq = cur.rest.find('=').ok_or_else(|| cur.err("expected key=value"))?;
        let key = &cur.rest[..eq];
        cur.rest = &cur.rest[eq + 1..];
        let value = cur.value()?;
        match key {
            "id" => node.resource_id = value,
            "text" => node.text = value,
            "desc" => node.content_desc = value,
            "clickable" => node.clickable = value == "true",
            other => return Err(cur.err(format!("unknown key {other:?}"))),
        }
    }
    Ok(node)
}

/// Reads the [`serialize_prompt`] form back into a node tree.
pub fn parse_prompt(text: &str) -> Result<ViewNode, ViewError> {
    // (depth, node) for the open path from the root.
    let mut path: Vec<(usize, ViewNode)> = Vec::new();
    let mut root: Option<ViewNode> = None;

    fn close_to(path: &mut Vec<(usize, ViewNode)>, depth: usize, root: &mut Option<ViewNode>) {
        while path.last().is_some_and(|(d, _)| *d >= depth) {
            let (_, node) = path.pop().unwrap();
            match path.last_mut() {
                Some((_, parent)) => parent.children.push(node),
                None => *root = Some(node),
            }
        }
    }

    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let indent = line.len() - line.trim_start_matches(' ').len();
        let err = |m: &str| ViewError::PromptSyntax { line: idx + 1, message: m.to_string() };
        if indent % 2 != 0 {
            return Err(err("odd indentation"));
        }
        let depth = indent / 2;
        let node = parse_prompt_line(&line[indent..], idx + 1)?;
        close_to(&mut path, depth, &mut root);
        if root.is_some() {
            return Err(err("more than one root"));
        }
        let expected = path.last().map_or(0, |(d, _)| d + 1);
        if depth != expected {
            return Err(err("indentation skips a level"));
        }
        path.push((depth, node));
    }
    close_to(&mut path, 0, &mut root);
    root.ok_or(ViewError::PromptSyntax { line: 0, message: "empty prompt form".into() })
}

fn clean_descriptor(descriptor: &str) -> &str {
    let mut d = descriptor.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”')] {
        if d.len() >= 2 && d.starts_with(open) && d.ends_with(close) {
            d = d[open.len_utf8()..d.len() - close.len_utf8()].trim();
        }
    }
    d
}

fn id_suffix(resource_id: &str) -> &str {
    resource_id.rsplit(['/', ':', '.']).next().unwrap_or(resource_id)
}

/// Maps an agent's element descriptor to a node id.
///
/// Match tiers, first hit wins: `#<n>` reference, exact text, exact
/// content description, resource-id (full or last segment), then substring of
/// text or content description. Comparisons ignore case; within a tier the
/// smallest node id wins. Only nodes accepted by `eligible` are considered.
pub fn resolve_element<F>(tree: &ViewTree, descriptor: &str, eligible: F) -> Result<usize, ViewError>
where
    F: Fn(&ViewNode) -> bool,
{
    let d = clean_descriptor(descriptor);
    if d.is_empty() {
        return Err(ViewError::EmptyDescriptor);
    }
    let candidates: Vec<&ViewNode> = tree.root.preorder().filter(|n| eligible(n)).collect();
    let first = |pred: &dyn Fn(&ViewNode) -> bool| candidates.iter().find(|n| pred(n)).map(|n| n.node_id);

    if let Some(n) = d.strip_prefix('#').and_then(|n| n.parse::<usize>().ok()) {
        if let Some(id) = first(&|node| node.node_id == n) {
            return Ok(id);
        }
    }
    let lower = d.to_lowercase();
    let tiers: [&dyn Fn(&ViewNode) -> bool; 4] = [
        &|n| !n.text.is_empty() && n.text.to_lowercase() == lower,
        &|n| !n.content_desc.is_empty() && n.content_desc.to_lowercase() == lower,
        &|n| {
            !n.resource_id.is_empty()
                && (n.resource_id.to_lowercase() == lower || id_suffix(&n.resource_id).to_lowercase() == lower)
        },
        &|n| n.text.to_lowercase().contains(&lower) || n.content_desc.to_lowercase().contains(&lower),
    ];
    tiers
        .iter()
        .find_map(|tier| first(tier))
        .ok_or_else(|| ViewError::NoMatch(descriptor.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CALL: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<hierarchy rotation="0"><node index="0" class="android.widget.Button" resource-id="com.app:id/call" text="Call" content-desc="" clickable="true" bounds="[0,0][10,10]"/></hierarchy>"#;

    fn nest() -> &'static str {
        r#"<hierarchy>
  <node class="android.widget.FrameLayout" clickable="false">
    <node class="android.widget.LinearLayout" clickable="false" resource-id="com.app:id/wrapper">
      <node class="android.widget.Button" text="Join" clickable="true"/>
    </node>
  </node>
</hierarchy>"#
    }

    #[test]
    fn single_button() {
        let tree = parse_screen(CALL).unwrap();
        assert_eq!(tree.node_count(), 1);
        assert!(tree.root.clickable);
        assert_eq!(tree.root.text, "Call");
        assert_eq!(tree.root.extra.get("bounds").map(String::as_str), Some("[0,0][10,10]"));
    }

    #[test]
    fn nested_structure_preserved() {
        let tree = parse_screen(nest()).unwrap();
        assert_eq!(tree.node_count(), 3);
        assert_eq!(tree.root.class_name, "android.widget.FrameLayout");
        let button = &tree.root.children[0].children[0];
        assert_eq!(button.text, "Join");
        assert_eq!(button.node_id, 2);
    }

    #[test]
    fn truncated_is_malformed() {
        let raw = r#"<hierarchy><node class="A"><node class="B"/></hierarchy>"#;
        assert!(matches!(parse_screen(raw), Err(ViewError::MalformedDocument(_))));
        let raw = r#"<hierarchy><node class="A"><node class="B"/>"#;
        assert!(matches!(parse_screen(raw), Err(ViewError::MalformedDocument(_))));
        assert!(matches!(parse_screen(""), Err(ViewError::MalformedDocument(_))));
        assert!(matches!(parse_screen("<a/><b/>"), Err(ViewError::MalformedDocument(_))));
    }

    #[test]
    fn simulator_dialect() {
        let raw = r#"<screen user="user_B" id="incoming"><FrameLayout><Button text="Answer" clickable="true"/><TextView text="Alice is calling"/></FrameLayout></screen>"#;
        let tree = parse_screen(raw).unwrap();
        assert_eq!(tree.source_user, "user_B");
        assert_eq!(tree.root.class_name, "FrameLayout");
        assert_eq!(tree.root.children[0].class_name, "Button");
        assert!(!tree.root.children[1].clickable);
    }

    #[test]
    fn missing_attributes_default() {
        let tree = parse_screen(r#"<node class="X"/>"#).unwrap();
        assert_eq!(tree.root.text, "");
        assert!(!tree.root.clickable);
    }

    #[test]
    fn chain_collapses_to_button() {
        let tree = simplify(&parse_screen(nest()).unwrap());
        assert_eq!(tree.node_count(), 1);
        assert_eq!(tree.root.text, "Join");
        assert_eq!(tree.root.node_id, 0);
    }

    #[test]
    fn semantic_single_child_kept() {
        let raw = r#"<node class="Toolbar" content-desc="toolbar"><node class="Button" text="Back" clickable="true"/></node>"#;
        let tree = simplify(&parse_screen(raw).unwrap());
        assert_eq!(tree.node_count(), 2);
        assert_eq!(tree.root.content_desc, "toolbar");
    }

    #[test]
    fn serialize_single_button() {
        let tree = simplify(&parse_screen(r#"<node class="Button" text="Call" clickable="true"/>"#).unwrap());
        assert_eq!(serialize_prompt(&tree), "#0 Button text=\"Call\" clickable=true\n");
    }

    #[test]
    fn serialize_parent_child() {
        let raw = r#"<node class="List" content-desc="contacts"><node class="Item" text="Bob" clickable="true"/></node>"#;
        let tree = simplify(&parse_screen(raw).unwrap());
        let out = serialize_prompt(&tree);
        assert_eq!(out, "#0 List desc=\"contacts\" clickable=false\n  #1 Item text=\"Bob\" clickable=true\n");
        assert_eq!(out, serialize_prompt(&tree.clone()));
    }

    #[test]
    fn prompt_form_round_trip() {
        let raw = r#"<node class="Frame"><node class="EditText" resource-id="a b" text="say &quot;hi&quot;&#10;there" clickable="true"/><node class="" text="x\y"/></node>"#;
        let tree = simplify(&parse_screen(raw).unwrap());
        let back = parse_prompt(&serialize_prompt(&tree)).unwrap();
        assert_eq!(back, tree.root);
    }

    fn buttons() -> ViewTree {
        let raw = r#"<node class="Frame">
            <node class="TextView" text="Menu"/>
            <node class="Button" text="Watch Together" clickable="true"/>
            <node class="Button" text="Add" clickable="true"/>
            <node class="ImageButton" content-desc="Settings" resource-id="com.app:id/settings_btn" clickable="true"/>
            <node class="Frame"><node class="TextView" text="x"/><node class="Button" text="Add" clickable="true"/></node>
            <node class="EditText" resource-id="com.app:id/code" text="Enter code" clickable="true"/>
        </node>"#;
        simplify(&parse_screen(raw).unwrap())
    }

    #[test]
    fn resolve_text_case_insensitive() {
        let tree = buttons();
        assert_eq!(resolve_element(&tree, "watch together", ViewNode::is_semantic).unwrap(), 2);
    }

    #[test]
    fn resolve_numeric_reference() {
        let tree = buttons();
        assert_eq!(resolve_element(&tree, "#4", |_| true).unwrap(), 4);
    }

    #[test]
    fn resolve_tie_breaks_to_smallest_id() {
        let tree = buttons();
        let id = resolve_element(&tree, "Add", |n| n.clickable).unwrap();
        assert_eq!(id, 3);
        assert_eq!(tree.node(7).unwrap().text, "Add");
    }

    #[test]
    fn resolve_tiers() {
        let tree = buttons();
        assert_eq!(resolve_element(&tree, "settings", |n| n.clickable).unwrap(), 4);
        assert_eq!(resolve_element(&tree, "settings_btn", |n| n.clickable).unwrap(), 4);
        assert_eq!(resolve_element(&tree, "code", ViewNode::is_editable).unwrap(), 8);
        assert_eq!(resolve_element(&tree, "\"watch\"", |n| n.clickable).unwrap(), 2);
        assert_eq!(resolve_element(&tree, "Menu", |n| n.clickable), Err(ViewError::NoMatch("Menu".into())));
        assert_eq!(resolve_element(&tree, "  ", |_| true), Err(ViewError::EmptyDescriptor));
    }
}
