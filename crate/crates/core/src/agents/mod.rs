//! The three pipeline stages — initial scoring, feedback extraction, and
//! reflective revision — plus the per-item driver that chains them.

pub mod parse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EssayItem, FeedbackPool, RevisionResult, Trait, TraitScoreVector};
use crate::prompts::{
    build_feedback_prompt, build_initial_prompt, build_reflective_prompt, PromptBundle,
};
use crate::provider::{fingerprint, ChatProvider, ChatRequest, ModelEndpoint, ProviderError};
use parse::ParseIssue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initial,
    Feedback,
    Reflect,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Initial => f.write_str("initial"),
            Stage::Feedback => f.write_str("feedback"),
            Stage::Reflect => f.write_str("reflect"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Reflect without the feedback pool.
    NoFeedback,
    /// One model plays both student and teacher.
    SameModel,
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Ablation::None => f.write_str("none"),
            Ablation::NoFeedback => f.write_str("no-feedback"),
            Ablation::SameModel => f.write_str("same-model"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub student: ModelEndpoint,
    pub teacher: ModelEndpoint,
    pub ablation: Ablation,
    /// Format-repair retries per stage after the first attempt.
    pub parse_retry_limit: u32,
}

impl PipelineConfig {
    /// Under the same-model ablation the teacher endpoint is forced equal to
    /// the student at construction.
    pub fn new(student: ModelEndpoint, teacher: ModelEndpoint, ablation: Ablation) -> Self {
        let teacher = if ablation == Ablation::SameModel { student.clone() } else { teacher };
        PipelineConfig { student, teacher, ablation, parse_retry_limit: 1 }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{stage} stage: unparseable response after retries: {reason}")]
    ParseFailure { stage: Stage, reason: String, raw_text: String },
    #[error("revised score {value} for {trait_} outside 0..=5")]
    OutOfRange { trait_: Trait, value: i64 },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// A stage error with the stage it happened in, as reported per item.
#[derive(Debug, Error)]
#[error("{stage} stage failed: {error}")]
pub struct StageFailure {
    pub stage: Stage,
    #[source]
    pub error: AgentError,
}

/// What was said on the wire for one stage, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTranscript {
    pub prompt_fingerprint: String,
    pub prompt_text: String,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcripts {
    pub initial: StageTranscript,
    pub feedback: Option<StageTranscript>,
    pub reflect: StageTranscript,
}

/// Full outcome for one essay: initial scores, feedback, the revision, and
/// the merged final scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineResult {
    pub item_id: String,
    pub initial: TraitScoreVector,
    pub feedback: Option<FeedbackPool>,
    pub revision: Option<RevisionResult>,
    #[serde(rename = "final")]
    pub final_scores: TraitScoreVector,
    pub transcripts: Transcripts,
}

pub(crate) const JSON_REPAIR_NOTE: &str = "Format reminder: respond with raw JSON only, with no code \
fences and no commentary, exactly in the requested shape.";
pub(crate) const INITIAL_REPAIR_NOTE: &str = "Format reminder: respond with raw JSON only, with no code \
fences and no commentary, and include all ten traits exactly as named, each with an integer \
score from 0 to 5.";
pub(crate) const FEEDBACK_REPAIR_NOTE: &str = "Format reminder: plain text only, starting each of the ten \
dimensions with its bracketed tag exactly as listed, one section per trait.";

/// Sends a bundle and parses the reply; on a malformed reply, retries once
/// (by default) with a repair note appended to the prompt. Range violations
/// from the reflective parser abort immediately.
fn call_stage<T>(
    provider: &dyn ChatProvider,
    endpoint: &ModelEndpoint,
    bundle: PromptBundle,
    stage: Stage,
    repair_note: &str,
    retry_limit: u32,
    parse: impl Fn(&str) -> Result<T, ParseIssue>,
) -> Result<(T, StageTranscript), AgentError> {
    let mut bundle = bundle;
    let mut attempt = 0;
    loop {
        let req = ChatRequest { endpoint: endpoint.clone(), bundle: bundle.clone() };
        let prompt_fingerprint = fingerprint(&req)?;
        let response = provider.send_chat(&req)?;
        match parse(&response.text) {
            Ok(value) => {
                let transcript = StageTranscript {
                    prompt_fingerprint,
                    prompt_text: bundle.text(),
                    raw_response: response.text,
                };
                return Ok((value, transcript));
            }
            Err(ParseIssue::OutOfRange { trait_, value }) => {
                return Err(AgentError::OutOfRange { trait_, value });
            }
            Err(ParseIssue::Malformed(reason)) => {
                if attempt >= retry_limit {
                    return Err(AgentError::ParseFailure {
                        stage,
                        reason,
                        raw_text: response.text,
                    });
                }
                attempt += 1;
                bundle = bundle.with_appended_text(repair_note);
            }
        }
    }
}

/// Initial scoring: builds the examiner prompt and asks the student model
/// for all ten trait scores.
pub fn initial_score(
    item: &EssayItem,
    cfg: &PipelineConfig,
    provider: &dyn ChatProvider,
) -> Result<TraitScoreVector, AgentError> {
    initial_score_with_transcript(item, cfg, provider).map(|(v, _)| v)
}

pub(crate) fn initial_score_with_transcript(
    item: &EssayItem,
    cfg: &PipelineConfig,
    provider: &dyn ChatProvider,
) -> Result<(TraitScoreVector, StageTranscript), AgentError> {
    call_stage(
        provider,
        &cfg.student,
        build_initial_prompt(item),
        Stage::Initial,
        INITIAL_REPAIR_NOTE,
        cfg.parse_retry_limit,
        parse::parse_initial_response,
    )
}

/// Positive-feedback extraction by the teacher model: one tagged section per
/// trait. Callers must not invoke this under the no-feedback ablation.
pub fn generate_feedback(
    item: &EssayItem,
    cfg: &PipelineConfig,
    provider: &dyn ChatProvider,
) -> Result<FeedbackPool, AgentError> {
    generate_feedback_with_transcript(item, cfg, provider).map(|(p, _)| p)
}

pub(crate) fn generate_feedback_with_transcript(
    item: &EssayItem,
    cfg: &PipelineConfig,
    provider: &dyn ChatProvider,
) -> Result<(FeedbackPool, StageTranscript), AgentError> {
    debug_assert!(cfg.ablation != Ablation::NoFeedback);
    call_stage(
        provider,
        &cfg.teacher,
        build_feedback_prompt(item),
        Stage::Feedback,
        FEEDBACK_REPAIR_NOTE,
        cfg.parse_retry_limit,
        parse::parse_feedback_response,
    )
}

/// Reflective revision by the teacher model over the initial scores and
/// (unless ablated) the feedback pool.
pub fn reflect(
    item: &EssayItem,
    initial: &TraitScoreVector,
    feedback: Option<&FeedbackPool>,
    cfg: &PipelineConfig,
    provider: &dyn ChatProvider,
) -> Result<RevisionResult, AgentError> {
    reflect_with_transcript(item, initial, feedback, cfg, provider).map(|(r, _)| r)
}

pub(crate) fn reflect_with_transcript(
    item: &EssayItem,
    initial: &TraitScoreVector,
    feedback: Option<&FeedbackPool>,
    cfg: &PipelineConfig,
    provider: &dyn ChatProvider,
) -> Result<(RevisionResult, StageTranscript), AgentError> {
    call_stage(
        provider,
        &cfg.teacher,
        build_reflective_prompt(item, initial, feedback),
        Stage::Reflect,
        JSON_REPAIR_NOTE,
        cfg.parse_retry_limit,
        parse::parse_reflective_response,
    )
}

/// Applies a revision to the initial scores. The revise flag is
/// authoritative: when false the output is the input, whatever
/// `modified` says. Confidences carry over unchanged.
pub fn merge_revision(initial: &TraitScoreVector, rev: &RevisionResult) -> TraitScoreVector {
    let mut out = initial.clone();
    if !rev.revise {
        return out;
    }
    for (t, change) in &rev.modified {
        out.set(*t, change.score);
    }
    out
}

/// Runs the three stages for one item, strictly in order, capturing
/// transcripts. Any stage error aborts this item with stage attribution.
pub fn run_pipeline(
    item: &EssayItem,
    cfg: &PipelineConfig,
    provider: &dyn ChatProvider,
) -> Result<PipelineResult, StageFailure> {
    let (initial, initial_transcript) = initial_score_with_transcript(item, cfg, provider)
        .map_err(|error| StageFailure { stage: Stage::Initial, error })?;

    let (feedback, feedback_transcript) = if cfg.ablation == Ablation::NoFeedback {
        (None, None)
    } else {
        let (pool, transcript) = generate_feedback_with_transcript(item, cfg, provider)
            .map_err(|error| StageFailure { stage: Stage::Feedback, error })?;
        (Some(pool), Some(transcript))
    };

    let (revision, reflect_transcript) =
        reflect_with_transcript(item, &initial, feedback.as_ref(), cfg, provider)
            .map_err(|error| StageFailure { stage: Stage::Reflect, error })?;

    let final_scores = merge_revision(&initial, &revision);

    Ok(PipelineResult {
        item_id: item.id.clone(),
        initial,
        feedback,
        revision: Some(revision),
        final_scores,
        transcripts: Transcripts {
            initial: initial_transcript,
            feedback: feedback_transcript,
            reflect: reflect_transcript,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ImageRef, ImageSource, Score, ScoreRevision};
    use crate::provider::{MockFallback, MockProvider};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeMap;

    fn test_item() -> EssayItem {
        let img = ImageRef {
            source: ImageSource::Url { url: "https://example.invalid/chart.png".into() },
            media_type: "image/png".into(),
        };
        EssayItem::new("item-1", "Describe the chart.", vec![img], "Essay body.").unwrap()
    }

    fn mock_config() -> PipelineConfig {
        PipelineConfig::new(
            ModelEndpoint::mock("student-mock"),
            ModelEndpoint::mock("teacher-mock"),
            Ablation::None,
        )
    }

    fn score(v: i64) -> Score {
        Score::new(v).unwrap()
    }

    #[test]
    fn same_model_forces_teacher_equal_student() {
        let cfg = PipelineConfig::new(
            ModelEndpoint::mock("student-mock"),
            ModelEndpoint::mock("teacher-mock"),
            Ablation::SameModel,
        );
        assert_eq!(cfg.student, cfg.teacher);
    }

    #[test]
    fn merge_revise_false_is_identity() {
        let initial = TraitScoreVector::uniform(score(3));
        let mut modified = BTreeMap::new();
        modified.insert(
            Trait::Coherence,
            ScoreRevision { score: score(5), reason: "ignored".into() },
        );
        let rev = RevisionResult { revise: false, modified };
        assert_eq!(merge_revision(&initial, &rev), initial);
    }

    #[test]
    fn merge_applies_only_modified_traits() {
        let initial = TraitScoreVector::uniform(score(3));
        let mut modified = BTreeMap::new();
        modified.insert(Trait::Coherence, ScoreRevision { score: score(4), reason: "x".into() });
        let rev = RevisionResult { revise: true, modified };
        let merged = merge_revision(&initial, &rev);
        assert_eq!(merged.get(Trait::Coherence).value(), 4);
        for t in Trait::ALL {
            if t != Trait::Coherence {
                assert_eq!(merged.get(t).value(), 3);
            }
        }
    }

    #[test]
    fn merge_empty_modified_is_identity() {
        let initial = TraitScoreVector::uniform(score(2));
        let rev = RevisionResult { revise: true, modified: BTreeMap::new() };
        assert_eq!(merge_revision(&initial, &rev), initial);
    }

    #[test]
    fn merge_laws_randomized() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..1000 {
            let mut initial = TraitScoreVector::uniform(score(0));
            for t in Trait::ALL {
                initial.set(t, score(rng.gen_range(0..=5)));
            }
            let revise: bool = rng.gen();
            let mut modified = BTreeMap::new();
            for t in Trait::ALL {
                if rng.gen_bool(0.3) {
                    modified.insert(
                        t,
                        ScoreRevision { score: score(rng.gen_range(0..=5)), reason: String::new() },
                    );
                }
            }
            let rev = RevisionResult { revise, modified };
            let once = merge_revision(&initial, &rev);
            // Identity when revise is false.
            if !rev.revise {
                assert_eq!(once, initial);
            }
            // Idempotence.
            assert_eq!(merge_revision(&once, &rev), once);
            // Untouched traits preserved.
            for t in Trait::ALL {
                if !(rev.revise && rev.modified.contains_key(&t)) {
                    assert_eq!(once.get(t), initial.get(t));
                }
            }
        }
    }

    #[test]
    fn pipeline_with_echo_scores_is_deterministic() {
        let item = test_item();
        let cfg = mock_config();
        let provider = MockProvider::echo_scores(3);
        let a = run_pipeline(&item, &cfg, &provider).unwrap();
        let b = run_pipeline(&item, &cfg, &provider).unwrap();
        assert_eq!(a, b);
        // Echo-scores reflect declines revision, so final equals initial.
        assert_eq!(a.initial, a.final_scores);
        assert!(a.feedback.is_some());
    }

    #[test]
    fn pipeline_no_feedback_ablation() {
        let item = test_item();
        let cfg = PipelineConfig::new(
            ModelEndpoint::mock("student-mock"),
            ModelEndpoint::mock("teacher-mock"),
            Ablation::NoFeedback,
        );
        let provider = MockProvider::echo_scores(0);
        let result = run_pipeline(&item, &cfg, &provider).unwrap();
        assert!(result.feedback.is_none());
        assert!(result.transcripts.feedback.is_none());
        assert!(!result.transcripts.reflect.prompt_text.contains("Feedback Report"));
    }

    #[test]
    fn parse_failure_after_repair_retry_names_stage() {
        let item = test_item();
        let cfg = mock_config();
        let provider =
            MockProvider::new(Default::default(), MockFallback::Fixed { text: "not json".into() });
        let err = run_pipeline(&item, &cfg, &provider).unwrap_err();
        assert_eq!(err.stage, Stage::Initial);
        assert!(matches!(err.error, AgentError::ParseFailure { stage: Stage::Initial, .. }));
        // First attempt plus exactly one repair retry.
        assert_eq!(provider.call_count(), 2);
    }

    #[test]
    fn repair_retry_recovers_from_fenced_first_answer() {
        let item = test_item();
        let cfg = mock_config();
        let mut provider = MockProvider::echo_scores(1);

        // Script the first attempt to be malformed; the repair retry (with
        // the appended note) falls through to schema-valid synthesis.
        let first = ChatRequest {
            endpoint: cfg.student.clone(),
            bundle: build_initial_prompt(&item),
        };
        provider.script_response(&first, "sorry, I cannot help with that").unwrap();

        let (scores, transcript) =
            initial_score_with_transcript(&item, &cfg, &provider).unwrap();
        assert_eq!(scores.iter().count(), 10);
        assert!(transcript.prompt_text.contains("Format reminder"));
        assert_eq!(provider.call_count(), 2);
    }

    #[test]
    fn scripted_revision_changes_exactly_named_traits() {
        let item = test_item();
        let cfg = mock_config();
        let mut provider = MockProvider::echo_scores(5);

        // Determine what the echo-scores student will answer, then script
        // the teacher to raise GD and LD by one (clamped to 5).
        let initial = initial_score(&item, &cfg, &provider).unwrap();
        let feedback =
            generate_feedback(&item, &cfg, &provider).unwrap();
        let bundle = build_reflective_prompt(&item, &initial, Some(&feedback));
        let req = ChatRequest { endpoint: cfg.teacher.clone(), bundle };
        let bump = |t: Trait| match initial.get(t).value() {
            5 => 4,
            v => v + 1,
        };
        provider
            .script_response(
                &req,
                format!(
                    r#"{{"revise": true, "modified_scores": {{
                        "Grammatical Diversity": {{"score": {}, "reason": "varied clauses"}},
                        "Lexical Diversity": {{"score": {}, "reason": "wide vocabulary"}}
                    }}}}"#,
                    bump(Trait::GrammaticalDiversity),
                    bump(Trait::LexicalDiversity)
                ),
            )
            .unwrap();

        let result = run_pipeline(&item, &cfg, &provider).unwrap();
        let changed: Vec<Trait> = Trait::ALL
            .into_iter()
            .filter(|t| result.final_scores.get(*t) != result.initial.get(*t))
            .collect();
        assert_eq!(changed, vec![Trait::LexicalDiversity, Trait::GrammaticalDiversity]);
    }

    #[test]
    fn reflective_out_of_range_is_not_retried() {
        let item = test_item();
        let cfg = mock_config();
        let initial = TraitScoreVector::uniform(score(3));
        let provider = MockProvider::new(
            Default::default(),
            MockFallback::Fixed {
                text: r#"{"revise": true, "modified_scores": {"Coherence": {"score": 9, "reason": "x"}}}"#
                    .into(),
            },
        );
        let err = reflect(&item, &initial, None, &cfg, &provider).unwrap_err();
        assert!(matches!(err, AgentError::OutOfRange { trait_: Trait::Coherence, value: 9 }));
        assert_eq!(provider.call_count(), 1);
    }
}
