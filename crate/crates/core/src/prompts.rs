//! Assembles the three agent prompts, substituting rubrics, topic, images,
//! essay, and (for reflection) prior scores and feedback.
//!
//! Templates live under `data/prompts/` with `{placeholder}` slots. Images
//! are never inlined into prompt text: the `{image}` slot marks where image
//! segments are spliced into the message, and the transport layer encodes
//! them.

use std::fmt::Write as _;

use crate::domain::{EssayItem, FeedbackPool, ImageRef, TraitScoreVector, Trait};
use crate::rubrics::render_rubrics;

const INITIAL_TEMPLATE: &str = include_str!("../data/prompts/initial_scorer.txt");
const FEEDBACK_TEMPLATE: &str = include_str!("../data/prompts/feedback_manager.txt");
const REFLECTIVE_TEMPLATE: &str = include_str!("../data/prompts/reflective_scorer.txt");

/// One piece of the user message: literal text or an image reference.
#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Text(String),
    Image(ImageRef),
}

/// A fully assembled prompt: the task definition plus ordered user segments.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub task_text: String,
    pub segments: Vec<Segment>,
}

impl PromptBundle {
    /// All textual content, task definition first. Image segments are
    /// skipped; used for logging, tests, and the mock provider.
    pub fn text(&self) -> String {
        let mut out = self.task_text.clone();
        for seg in &self.segments {
            if let Segment::Text(t) = seg {
                out.push_str("\n\n");
                out.push_str(t);
            }
        }
        out
    }

    pub fn image_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s, Segment::Image(_)))
            .count()
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRef> + '_ {
        self.segments.iter().filter_map(|s| match s {
            Segment::Image(img) => Some(img),
            Segment::Text(_) => None,
        })
    }

    /// Returns a copy with an extra trailing text segment. Used for the
    /// one-shot format-repair retry.
    pub fn with_appended_text(&self, text: &str) -> PromptBundle {
        let mut out = self.clone();
        out.segments.push(Segment::Text(text.to_string()));
        out
    }
}

/// Builds the initial-scorer prompt: examiner task, all ten rubrics, topic,
/// one image segment per item image, essay, and the strict-JSON instruction.
pub fn build_initial_prompt(item: &EssayItem) -> PromptBundle {
    render(INITIAL_TEMPLATE, item, None, None)
}

/// Builds the feedback prompt: tag-delimited natural-language output over
/// the same rubric block as the initial prompt.
pub fn build_feedback_prompt(item: &EssayItem) -> PromptBundle {
    render(FEEDBACK_TEMPLATE, item, None, None)
}

/// Builds the reflective prompt carrying the serialized original scores and,
/// unless the feedback stage was ablated, the tagged feedback report.
pub fn build_reflective_prompt(
    item: &EssayItem,
    initial: &TraitScoreVector,
    feedback: Option<&FeedbackPool>,
) -> PromptBundle {
    render(REFLECTIVE_TEMPLATE, item, Some(initial), feedback)
}

/// Serializes a score vector as the canonical JSON object keyed by display
/// name, in canonical trait order. This is exactly the shape the initial
/// scorer is asked to produce, so parsing it back yields the input.
pub fn serialize_scores(vector: &TraitScoreVector) -> String {
    let mut out = String::from("{");
    for (i, (t, s)) in vector.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write!(out, "\"{}\": {{\"score\": {}", t.display_name(), s.value()).expect("string write");
        if let Some(c) = vector.confidence(t) {
            write!(out, ", \"confidence\": {}", c.value()).expect("string write");
        }
        out.push('}');
    }
    out.push('}');
    out
}

/// Renders a feedback pool as the tagged report format, one `[Trait Name]`
/// section per trait in canonical order.
pub fn render_feedback_report(pool: &FeedbackPool) -> String {
    let mut out = String::new();
    for (i, (t, text)) in pool.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        write!(out, "[{}]\n{}", t.display_name(), text).expect("string write");
    }
    out
}

const SLOTS: [&str; 6] = ["{rubrics}", "{image}", "{question}", "{essay}", "{score}", "{feedback}"];

enum Token<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

/// Splits a template into literal runs and known `{slot}` markers. Braces
/// that are not a known slot (e.g. the JSON example block) pass through as
/// literals.
fn tokenize(template: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut rest = template;
    loop {
        let next = SLOTS
            .iter()
            .filter_map(|slot| rest.find(slot).map(|pos| (pos, *slot)))
            .min_by_key(|(pos, _)| *pos);
        match next {
            Some((pos, slot)) => {
                if pos > 0 {
                    tokens.push(Token::Literal(&rest[..pos]));
                }
                tokens.push(Token::Slot(slot));
                rest = &rest[pos + slot.len()..];
            }
            None => {
                if !rest.is_empty() {
                    tokens.push(Token::Literal(rest));
                }
                return tokens;
            }
        }
    }
}

fn render(
    template: &str,
    item: &EssayItem,
    initial: Option<&TraitScoreVector>,
    feedback: Option<&FeedbackPool>,
) -> PromptBundle {
    let (task_text, body) = template
        .split_once("\n\n")
        .expect("template has a task definition paragraph");

    // Under the no-feedback ablation the whole report line disappears, not
    // just the slot value.
    let body = if template.contains("{feedback}") && feedback.is_none() {
        body.lines()
            .filter(|line| !line.contains("{feedback}"))
            .collect::<Vec<_>>()
            .join("\n")
    } else {
        body.to_string()
    };

    let rubric_block = render_rubrics(&Trait::ALL).expect("full trait list renders");

    let mut segments = Vec::new();
    let mut current = String::new();
    for token in tokenize(&body) {
        match token {
            Token::Literal(text) => current.push_str(text),
            Token::Slot("{rubrics}") => current.push_str(&rubric_block),
            Token::Slot("{question}") => current.push_str(&item.topic_text),
            Token::Slot("{essay}") => current.push_str(&item.essay_text),
            Token::Slot("{score}") => {
                let initial = initial.expect("score slot only in reflective template");
                current.push_str(&serialize_scores(initial));
            }
            Token::Slot("{feedback}") => {
                let pool = feedback.expect("feedback slot filtered when absent");
                current.push_str(&render_feedback_report(pool));
            }
            Token::Slot("{image}") => {
                if !current.is_empty() {
                    segments.push(Segment::Text(std::mem::take(&mut current)));
                }
                for img in &item.images {
                    segments.push(Segment::Image(img.clone()));
                }
            }
            Token::Slot(other) => unreachable!("unhandled slot {other}"),
        }
    }
    if !current.is_empty() {
        segments.push(Segment::Text(current));
    }

    PromptBundle { task_text: task_text.trim_end().to_string(), segments }
}
