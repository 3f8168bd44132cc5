use super::Tag;

/// Repair table: (closing slash present, normalized tag name) -> canonical tag.
const REPAIRS: &[(bool, &str, Tag)] = &[
    (false, "SCENARIO_SETUP", Tag::SetupOpen),
    (true, "SCENARIO_SETUP", Tag::SetupClose),
    (false, "DISCUSSION_START", Tag::DiscussionStart),
    (true, "DISCUSSION_START", Tag::DiscussionEnd),
    (false, "DISCUSSION_END", Tag::DiscussionEnd),
    (true, "DISCUSSION_END", Tag::DiscussionEnd),
    (false, "AI_APPEARED", Tag::AiOpen),
    (true, "AI_APPEARED", Tag::AiClose),
    (false, "AI_DISAPPEARED", Tag::AiClose),
    (true, "AI_DISAPPEARED", Tag::AiClose),
];

fn is_fence(trimmed: &str) -> bool {
    trimmed
        .strip_prefix("```")
        .is_some_and(|rest| rest.chars().all(|c| c.is_ascii_alphanumeric()))
}

fn repair_tag(line: &str) -> Option<Tag> {
    let inner = line
        .trim()
        .trim_start_matches(['*', '`', '#', ' ', '\t'])
        .trim_end_matches(['*', '`', ' ', '\t']);
    let inner = inner.strip_prefix('[')?.strip_suffix(']')?.trim();
    let (closing, name) = match inner.strip_prefix('/') {
        Some(rest) => (true, rest.trim()),
        None => (false, inner),
    };
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphabetic() || matches!(c, '_' | ' ' | '-')) {
        return None;
    }
    let key = name
        .split(['_', ' ', '-'])
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_uppercase)
        .collect::<Vec<_>>()
        .join("_");
    REPAIRS.iter().find(|(c, k, _)| *c == closing && *k == key).map(|(_, _, t)| *t)
}

/// Canonicalize tag lines in generator output.
///
/// Drops markdown fence lines, strips trailing carriage returns, and rewrites
/// recognizable tag variants (case, spacing, decoration, and the symmetric
/// `[/AI_APPEARED]` closer) into canonical form. Other lines pass through
/// untouched. Idempotent.
pub fn normalize_headers(raw: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    for line in raw.split('\n') {
        let line = line.trim_end_matches('\r');
        if is_fence(line.trim()) {
            continue;
        }
        match repair_tag(line) {
            Some(tag) => out.push(tag.as_str()),
            None => out.push(line),
        }
    }
    out.join("\n")
}
