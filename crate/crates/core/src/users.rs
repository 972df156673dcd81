//! User labels: `user_A`, `user_B`, ... indexed from zero.

/// Label for the user at `index` (0 → `user_A`).
pub fn label(index: usize) -> String {
    assert!(index < 26, "at most 26 users are supported");
    format!("user_{}", (b'A' + index as u8) as char)
}

/// Parses `user_B`, `User B`, `userb`, `B` (any case) to an index.
pub fn index_of(label: &str) -> Option<usize> {
    let lower = label.trim().to_ascii_lowercase();
    let rest = lower.strip_prefix("user").unwrap_or(&lower);
    let rest = rest.trim_start_matches(['_', ' ', '-']);
    let mut chars = rest.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_lowercase() => Some((c as u8 - b'a') as usize),
        _ => None,
    }
}

/// Canonical form of a label, if it parses.
pub fn normalize(label: &str) -> Option<String> {
    index_of(label).map(self::label)
}
