//! Canonical types shared by every other module: traits, scores, essays,
//! score vectors, feedback pools, and revisions.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// The ten scoring dimensions. The set is closed; the variant order here is
/// the canonical report order (lexical, sentence, discourse level).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Trait {
    LexicalAccuracy,
    LexicalDiversity,
    Coherence,
    GrammaticalAccuracy,
    GrammaticalDiversity,
    PunctuationAccuracy,
    ArgumentClarity,
    JustifyingPersuasiveness,
    OrganizationalStructure,
    EssayLength,
}

impl Trait {
    /// All ten traits in canonical order: LA, LD, CH, GA, GD, PA, AC, JP, OS, EL.
    pub const ALL: [Trait; 10] = [
        Trait::LexicalAccuracy,
        Trait::LexicalDiversity,
        Trait::Coherence,
        Trait::GrammaticalAccuracy,
        Trait::GrammaticalDiversity,
        Trait::PunctuationAccuracy,
        Trait::ArgumentClarity,
        Trait::JustifyingPersuasiveness,
        Trait::OrganizationalStructure,
        Trait::EssayLength,
    ];

    pub const COUNT: usize = 10;

    /// Position in canonical order.
    pub fn index(self) -> usize {
        Trait::ALL.iter().position(|t| *t == self).expect("closed set")
    }

    /// Canonical display name, matching the feedback-prompt trait list.
    pub fn display_name(self) -> &'static str {
        match self {
            Trait::LexicalAccuracy => "Lexical Accuracy",
            Trait::LexicalDiversity => "Lexical Diversity",
            Trait::Coherence => "Coherence",
            Trait::GrammaticalAccuracy => "Grammatical Accuracy",
            Trait::GrammaticalDiversity => "Grammatical Diversity",
            Trait::PunctuationAccuracy => "Punctuation Accuracy",
            Trait::ArgumentClarity => "Argument Clarity",
            Trait::JustifyingPersuasiveness => "Justifying Persuasiveness",
            Trait::OrganizationalStructure => "Organizational Structure",
            Trait::EssayLength => "Essay Length",
        }
    }

    /// Two-letter column code used in tables.
    pub fn code(self) -> &'static str {
        match self {
            Trait::LexicalAccuracy => "LA",
            Trait::LexicalDiversity => "LD",
            Trait::Coherence => "CH",
            Trait::GrammaticalAccuracy => "GA",
            Trait::GrammaticalDiversity => "GD",
            Trait::PunctuationAccuracy => "PA",
            Trait::ArgumentClarity => "AC",
            Trait::JustifyingPersuasiveness => "JP",
            Trait::OrganizationalStructure => "OS",
            Trait::EssayLength => "EL",
        }
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// Resolves a trait from its display name, trimming and case-folding.
/// Matching is exact otherwise: no fuzzy lookup, a near-miss is an error.
pub fn parse_trait_name(name: &str) -> Result<Trait, DomainError> {
    let wanted = name.trim().to_lowercase();
    Trait::ALL
        .into_iter()
        .find(|t| t.display_name().to_lowercase() == wanted)
        .ok_or_else(|| DomainError::UnknownTrait(name.trim().to_string()))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("unknown trait name: {0:?}")]
    UnknownTrait(String),
    #[error("missing traits: {}", format_trait_list(.0))]
    MissingTrait(Vec<Trait>),
    #[error("score {value} for {trait_} outside 0..=5")]
    OutOfRange { trait_: Trait, value: i64 },
    #[error("confidence {0} outside 1..=10")]
    ConfidenceOutOfRange(i64),
    #[error("duplicate trait: {0}")]
    DuplicateTrait(Trait),
    #[error("feedback for {0} is empty")]
    EmptyFeedback(Trait),
    #[error("essay item {0:?} has no images")]
    NoImages(String),
}

fn format_trait_list(traits: &[Trait]) -> String {
    traits.iter().map(|t| t.code()).collect::<Vec<_>>().join(", ")
}

/// An integer trait score in 0..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Score(u8);

impl Score {
    pub const MIN: u8 = 0;
    pub const MAX: u8 = 5;
    /// Number of score levels (0 through 5).
    pub const CATEGORIES: usize = 6;

    pub fn new(value: i64) -> Result<Self, DomainError> {
        if (0..=5).contains(&value) {
            Ok(Score(value as u8))
        } else {
            // Callers that know the trait wrap this into OutOfRange themselves.
            Err(DomainError::OutOfRange { trait_: Trait::LexicalAccuracy, value })
        }
    }

    pub fn for_trait(trait_: Trait, value: i64) -> Result<Self, DomainError> {
        Score::new(value).map_err(|_| DomainError::OutOfRange { trait_, value })
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(deserializer)?;
        Score::new(v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Self-reported certainty in 1..=10. Collected from the initial scorer but
/// never consumed downstream; carried for audit only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Confidence(u8);

impl Confidence {
    pub fn new(value: i64) -> Result<Self, DomainError> {
        if (1..=10).contains(&value) {
            Ok(Confidence(value as u8))
        } else {
            Err(DomainError::ConfidenceOutOfRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl<'de> Deserialize<'de> for Confidence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(deserializer)?;
        Confidence::new(v).map_err(serde::de::Error::custom)
    }
}

/// A total assignment of scores to all ten traits, with optional per-trait
/// confidences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraitScoreVector {
    scores: [Score; 10],
    confidences: [Option<Confidence>; 10],
}

impl TraitScoreVector {
    /// Builds a vector from a total map. Fails if any trait is missing.
    pub fn new(scores: &BTreeMap<Trait, Score>) -> Result<Self, DomainError> {
        let missing: Vec<Trait> = Trait::ALL
            .into_iter()
            .filter(|t| !scores.contains_key(t))
            .collect();
        if !missing.is_empty() {
            return Err(DomainError::MissingTrait(missing));
        }
        let mut arr = [Score(0); 10];
        for t in Trait::ALL {
            arr[t.index()] = scores[&t];
        }
        Ok(TraitScoreVector { scores: arr, confidences: [None; 10] })
    }

    /// Every trait at the same score. Handy for tests and synthetic data.
    pub fn uniform(score: Score) -> Self {
        TraitScoreVector { scores: [score; 10], confidences: [None; 10] }
    }

    pub fn get(&self, trait_: Trait) -> Score {
        self.scores[trait_.index()]
    }

    pub fn set(&mut self, trait_: Trait, score: Score) {
        self.scores[trait_.index()] = score;
    }

    pub fn confidence(&self, trait_: Trait) -> Option<Confidence> {
        self.confidences[trait_.index()]
    }

    pub fn set_confidence(&mut self, trait_: Trait, confidence: Confidence) {
        self.confidences[trait_.index()] = Some(confidence);
    }

    pub fn has_confidences(&self) -> bool {
        self.confidences.iter().any(Option::is_some)
    }

    /// Iterates all ten (trait, score) entries in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (Trait, Score)> + '_ {
        Trait::ALL.into_iter().map(|t| (t, self.get(t)))
    }
}

impl Serialize for TraitScoreVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(10))?;
        for (t, s) in self.iter() {
            map.serialize_entry(t.display_name(), &s)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for TraitScoreVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct VecVisitor;

        impl<'de> Visitor<'de> for VecVisitor {
            type Value = TraitScoreVector;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of the ten trait display names to integer scores")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut raw = BTreeMap::new();
                while let Some((key, value)) = access.next_entry::<String, i64>()? {
                    raw.insert(key, value);
                }
                score_vector_from_map(&raw).map_err(serde::de::Error::custom)
            }
        }

        deserializer.deserialize_map(VecVisitor)
    }
}

/// Canonicalizes a string-keyed score map into a total vector. Keys resolve
/// through [`parse_trait_name`]; values must land in 0..=5.
pub fn score_vector_from_map(raw: &BTreeMap<String, i64>) -> Result<TraitScoreVector, DomainError> {
    let mut scores: BTreeMap<Trait, Score> = BTreeMap::new();
    for (name, value) in raw {
        let trait_ = parse_trait_name(name)?;
        let score = Score::for_trait(trait_, *value)?;
        if scores.insert(trait_, score).is_some() {
            return Err(DomainError::DuplicateTrait(trait_));
        }
    }
    TraitScoreVector::new(&scores)
}

/// Reference to one image attached to an essay topic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageSource {
    Path { path: PathBuf },
    Url { url: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    #[serde(flatten)]
    pub source: ImageSource,
    pub media_type: String,
}

/// Whether a topic carries one image or several.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    Single,
    Multi,
}

impl fmt::Display for ImageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageKind::Single => f.write_str("single"),
            ImageKind::Multi => f.write_str("multi"),
        }
    }
}

/// One scoring task: topic, images, the essay, and optional gold ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct EssayItem {
    pub id: String,
    pub topic_text: String,
    pub images: Vec<ImageRef>,
    pub essay_text: String,
    pub gold: Option<TraitScoreVector>,
    /// Free-form chart tag, e.g. "flow", "bar", "table", "line", "pie",
    /// "map", "composite".
    pub chart_type: Option<String>,
}

impl EssayItem {
    pub fn new(
        id: impl Into<String>,
        topic_text: impl Into<String>,
        images: Vec<ImageRef>,
        essay_text: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let id = id.into();
        if images.is_empty() {
            return Err(DomainError::NoImages(id));
        }
        Ok(EssayItem {
            id,
            topic_text: topic_text.into(),
            images,
            essay_text: essay_text.into(),
            gold: None,
            chart_type: None,
        })
    }

    pub fn image_kind(&self) -> ImageKind {
        if self.images.len() == 1 {
            ImageKind::Single
        } else {
            ImageKind::Multi
        }
    }
}

/// Per-trait positive feedback, total over all ten traits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeedbackPool {
    entries: BTreeMap<Trait, String>,
}

impl FeedbackPool {
    pub fn new(entries: BTreeMap<Trait, String>) -> Result<Self, DomainError> {
        let missing: Vec<Trait> = Trait::ALL
            .into_iter()
            .filter(|t| !entries.contains_key(t))
            .collect();
        if !missing.is_empty() {
            return Err(DomainError::MissingTrait(missing));
        }
        for (t, text) in &entries {
            if text.trim().is_empty() {
                return Err(DomainError::EmptyFeedback(*t));
            }
        }
        Ok(FeedbackPool { entries })
    }

    pub fn get(&self, trait_: Trait) -> &str {
        &self.entries[&trait_]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Trait, &str)> + '_ {
        Trait::ALL.into_iter().map(|t| (t, self.get(t)))
    }
}

/// One revised trait entry from the reflective pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScoreRevision {
    pub score: Score,
    pub reason: String,
}

/// Outcome of the reflective pass: a revise flag gating a sparse set of
/// per-trait overrides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RevisionResult {
    pub revise: bool,
    pub modified: BTreeMap<Trait, ScoreRevision>,
}

impl RevisionResult {
    pub fn unchanged() -> Self {
        RevisionResult { revise: false, modified: BTreeMap::new() }
    }
}

// Trait serializes as its display name so JSON artifacts read naturally.
impl Serialize for Trait {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.display_name())
    }
}

impl<'de> Deserialize<'de> for Trait {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        parse_trait_name(&name).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trait_set_is_ten_in_canonical_order() {
        let codes: Vec<&str> = Trait::ALL.iter().map(|t| t.code()).collect();
        assert_eq!(codes, ["LA", "LD", "CH", "GA", "GD", "PA", "AC", "JP", "OS", "EL"]);
        for (i, t) in Trait::ALL.into_iter().enumerate() {
            assert_eq!(t.index(), i);
        }
    }

    #[test]
    fn parse_trait_name_handles_spec_examples() {
        assert_eq!(parse_trait_name("Argument Clarity").unwrap(), Trait::ArgumentClarity);
        assert_eq!(parse_trait_name("  lexical diversity ").unwrap(), Trait::LexicalDiversity);
        assert!(matches!(
            parse_trait_name("Style"),
            Err(DomainError::UnknownTrait(name)) if name == "Style"
        ));
    }

    #[test]
    fn parse_trait_name_inverts_display_name() {
        for t in Trait::ALL {
            assert_eq!(parse_trait_name(t.display_name()).unwrap(), t);
        }
    }

    #[test]
    fn score_vector_from_map_total() {
        let raw: BTreeMap<String, i64> =
            Trait::ALL.iter().map(|t| (t.display_name().to_string(), 3)).collect();
        let v = score_vector_from_map(&raw).unwrap();
        for (_, s) in v.iter() {
            assert_eq!(s.value(), 3);
        }
        assert_eq!(v.iter().count(), 10);
    }

    #[test]
    fn score_vector_from_map_missing_trait() {
        let mut raw: BTreeMap<String, i64> =
            Trait::ALL.iter().map(|t| (t.display_name().to_string(), 3)).collect();
        raw.remove("Essay Length");
        match score_vector_from_map(&raw) {
            Err(DomainError::MissingTrait(ts)) => assert_eq!(ts, vec![Trait::EssayLength]),
            other => panic!("expected MissingTrait, got {other:?}"),
        }
    }

    #[test]
    fn score_vector_from_map_out_of_range() {
        let mut raw: BTreeMap<String, i64> =
            Trait::ALL.iter().map(|t| (t.display_name().to_string(), 3)).collect();
        raw.insert("Coherence".to_string(), 7);
        match score_vector_from_map(&raw) {
            Err(DomainError::OutOfRange { trait_, value }) => {
                assert_eq!(trait_, Trait::Coherence);
                assert_eq!(value, 7);
            }
            other => panic!("expected OutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn score_vector_from_map_duplicate_after_canonicalization() {
        let mut raw = BTreeMap::new();
        for t in Trait::ALL {
            raw.insert(t.display_name().to_string(), 3);
        }
        raw.insert("coherence ".to_string(), 2);
        assert_eq!(
            score_vector_from_map(&raw),
            Err(DomainError::DuplicateTrait(Trait::Coherence))
        );
    }

    #[test]
    fn essay_item_requires_images() {
        assert!(matches!(
            EssayItem::new("e1", "topic", vec![], "essay"),
            Err(DomainError::NoImages(_))
        ));
    }

    #[test]
    fn image_kind_derivation() {
        let img = ImageRef {
            source: ImageSource::Url { url: "https://x/y.png".into() },
            media_type: "image/png".into(),
        };
        let one = EssayItem::new("a", "t", vec![img.clone()], "e").unwrap();
        assert_eq!(one.image_kind(), ImageKind::Single);
        let two = EssayItem::new("b", "t", vec![img.clone(), img], "e").unwrap();
        assert_eq!(two.image_kind(), ImageKind::Multi);
    }

    #[test]
    fn feedback_pool_rejects_blank_entries() {
        let mut entries: BTreeMap<Trait, String> =
            Trait::ALL.iter().map(|t| (*t, "good".to_string())).collect();
        entries.insert(Trait::Coherence, "   ".to_string());
        assert_eq!(FeedbackPool::new(entries), Err(DomainError::EmptyFeedback(Trait::Coherence)));
    }

    #[test]
    fn trait_score_vector_serde_round_trip() {
        let mut v = TraitScoreVector::uniform(Score::new(2).unwrap());
        v.set(Trait::EssayLength, Score::new(5).unwrap());
        let json = serde_json::to_string(&v).unwrap();
        assert!(json.starts_with("{\"Lexical Accuracy\":2"));
        let back: TraitScoreVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    proptest! {
        #[test]
        fn score_construction_rejects_out_of_range(value in -10i64..=10) {
            let result = Score::new(value);
            if (0..=5).contains(&value) {
                prop_assert_eq!(result.unwrap().value() as i64, value);
            } else {
                prop_assert!(result.is_err());
            }
        }

        #[test]
        fn confidence_bounds(value in -5i64..=15) {
            let result = Confidence::new(value);
            prop_assert_eq!(result.is_ok(), (1..=10).contains(&value));
        }
    }
}
