//! Strict parsers for the three agent outputs. Code fences and surrounding
//! prose are scrubbed before JSON parsing; trait names outside the closed
//! ten-trait set are hard errors, never silently dropped.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::domain::{
    parse_trait_name, Confidence, DomainError, FeedbackPool, RevisionResult, Score, ScoreRevision,
    Trait, TraitScoreVector,
};

/// A stage-output parse problem. `OutOfRange` is split out because the
/// reflective stage reports it as its own error rather than retrying.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseIssue {
    Malformed(String),
    OutOfRange { trait_: Trait, value: i64 },
}

impl std::fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseIssue::Malformed(reason) => f.write_str(reason),
            ParseIssue::OutOfRange { trait_, value } => {
                write!(f, "score {value} for {trait_} outside 0..=5")
            }
        }
    }
}

fn malformed(reason: impl Into<String>) -> ParseIssue {
    ParseIssue::Malformed(reason.into())
}

/// Extracts a JSON value from raw model text: direct parse, then the first
/// fenced code block, then the first balanced object or array.
pub fn extract_json(text: &str) -> Result<Value, ParseIssue> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(malformed("empty response"));
    }
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Ok(v);
    }
    if let Some(block) = fenced_block(trimmed) {
        if let Ok(v) = serde_json::from_str::<Value>(block.trim()) {
            return Ok(v);
        }
    }
    if let Some(slice) = balanced_json(trimmed) {
        if let Ok(v) = serde_json::from_str::<Value>(slice) {
            return Ok(v);
        }
    }
    Err(malformed(format!(
        "no parseable JSON in response starting {:?}",
        trimmed.chars().take(60).collect::<String>()
    )))
}

/// Content of the first ``` fence, tolerating a language tag after the
/// opening backticks.
fn fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(&body[..end])
}

/// First balanced `{...}` or `[...]` region, string-aware.
fn balanced_json(text: &str) -> Option<&str> {
    let start = text.find(['{', '['])?;
    let bytes = text.as_bytes();
    let mut stack: Vec<u8> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(&text[start..start + offset + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn as_object(value: &Value, what: &str) -> Result<serde_json::Map<String, Value>, ParseIssue> {
    value
        .as_object()
        .cloned()
        .ok_or_else(|| malformed(format!("{what} is not a JSON object")))
}

fn int_field(obj: &serde_json::Map<String, Value>, key: &str, ctx: &str) -> Result<Option<i64>, ParseIssue> {
    match obj.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_i64()
            .map(Some)
            .ok_or_else(|| malformed(format!("{ctx}: {key} is not an integer"))),
    }
}

/// Parses the initial scorer's JSON: an object keyed by trait display name,
/// each value an object with `score` and optional `confidence`. All ten
/// traits must be present exactly once; range violations are parse failures
/// at this stage (the repair retry may fix them).
pub fn parse_initial_response(text: &str) -> Result<TraitScoreVector, ParseIssue> {
    let root = as_object(&extract_json(text)?, "response")?;
    let mut scores: BTreeMap<Trait, Score> = BTreeMap::new();
    let mut confidences: BTreeMap<Trait, Confidence> = BTreeMap::new();
    for (name, value) in &root {
        let trait_ = parse_trait_name(name)
            .map_err(|_| malformed(format!("unknown trait name {name:?}")))?;
        let entry = as_object(value, &format!("entry for {trait_}"))?;
        let raw_score = int_field(&entry, "score", &format!("entry for {trait_}"))?
            .ok_or_else(|| malformed(format!("entry for {trait_} has no score")))?;
        let score = Score::for_trait(trait_, raw_score)
            .map_err(|_| malformed(format!("score {raw_score} for {trait_} outside 0..=5")))?;
        if scores.insert(trait_, score).is_some() {
            return Err(malformed(format!("duplicate trait {trait_}")));
        }
        if let Some(raw_conf) = int_field(&entry, "confidence", &format!("entry for {trait_}"))? {
            let conf = Confidence::new(raw_conf)
                .map_err(|_| malformed(format!("confidence {raw_conf} for {trait_} outside 1..=10")))?;
            confidences.insert(trait_, conf);
        }
    }
    let mut vector = TraitScoreVector::new(&scores).map_err(|e| match e {
        DomainError::MissingTrait(ts) => malformed(format!(
            "missing traits: {}",
            ts.iter().map(|t| t.display_name()).collect::<Vec<_>>().join(", ")
        )),
        other => malformed(other.to_string()),
    })?;
    for (t, c) in confidences {
        vector.set_confidence(t, c);
    }
    Ok(vector)
}

/// Parses the feedback manager's tag-delimited text: each section opens with
/// a line holding exactly `[<Trait Display Name>]`, body runs to the next
/// tag. Order-free, but all ten traits must appear exactly once. Prose
/// before the first tag is ignored.
pub fn parse_feedback_response(text: &str) -> Result<FeedbackPool, ParseIssue> {
    let mut sections: BTreeMap<Trait, String> = BTreeMap::new();
    let mut current: Option<(Trait, String)> = None;

    let commit = |slot: Option<(Trait, String)>, sections: &mut BTreeMap<Trait, String>| {
        if let Some((t, body)) = slot {
            sections.insert(t, body.trim().to_string());
        }
    };

    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(tag) = trimmed.strip_prefix('[').and_then(|rest| rest.strip_suffix(']')) {
            let trait_ = parse_trait_name(tag)
                .map_err(|_| malformed(format!("unknown feedback tag [{tag}]")))?;
            if sections.contains_key(&trait_)
                || current.as_ref().is_some_and(|(t, _)| *t == trait_)
            {
                return Err(malformed(format!("duplicate feedback tag [{trait_}]")));
            }
            commit(current.take(), &mut sections);
            current = Some((trait_, String::new()));
        } else if let Some((_, body)) = current.as_mut() {
            if !body.is_empty() {
                body.push('\n');
            }
            body.push_str(line);
        }
    }
    commit(current.take(), &mut sections);

    let missing: Vec<&str> = Trait::ALL
        .into_iter()
        .filter(|t| !sections.contains_key(t))
        .map(|t| t.display_name())
        .collect();
    if !missing.is_empty() {
        return Err(malformed(format!("missing feedback sections: {}", missing.join(", "))));
    }
    for (t, body) in &sections {
        if body.trim().is_empty() {
            return Err(malformed(format!("empty feedback section for {t}")));
        }
    }
    FeedbackPool::new(sections).map_err(|e| malformed(e.to_string()))
}

/// Parses the reflective scorer's JSON: `revise` flag plus an optional
/// `modified_scores` object of `{score, reason}` overrides. A modified score
/// outside 0..=5 is reported as `OutOfRange`, not a malformed response.
pub fn parse_reflective_response(text: &str) -> Result<RevisionResult, ParseIssue> {
    let root = as_object(&extract_json(text)?, "response")?;
    let revise = root
        .get("revise")
        .ok_or_else(|| malformed("missing revise flag"))?
        .as_bool()
        .ok_or_else(|| malformed("revise is not a boolean"))?;

    for key in root.keys() {
        if key != "revise" && key != "modified_scores" {
            return Err(malformed(format!("unexpected top-level key {key:?}")));
        }
    }

    let mut modified = BTreeMap::new();
    match root.get("modified_scores") {
        None | Some(Value::Null) => {}
        Some(value) => {
            let entries = as_object(value, "modified_scores")?;
            for (name, entry) in &entries {
                let trait_ = parse_trait_name(name)
                    .map_err(|_| malformed(format!("unknown trait name {name:?}")))?;
                let obj = as_object(entry, &format!("modified entry for {trait_}"))?;
                let raw = int_field(&obj, "score", &format!("modified entry for {trait_}"))?
                    .ok_or_else(|| malformed(format!("modified entry for {trait_} has no score")))?;
                let score = Score::for_trait(trait_, raw)
                    .map_err(|_| ParseIssue::OutOfRange { trait_, value: raw })?;
                let reason = obj
                    .get("reason")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string();
                if modified.insert(trait_, ScoreRevision { score, reason }).is_some() {
                    return Err(malformed(format!("duplicate modified trait {trait_}")));
                }
            }
        }
    }
    Ok(RevisionResult { revise, modified })
}
