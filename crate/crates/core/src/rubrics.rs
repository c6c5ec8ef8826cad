//! The ten trait rubrics (six score levels each) and their rendering for
//! prompt inclusion.
//!
//! Rubric text ships as data files under `data/rubrics/`, one per trait,
//! with sections delimited by `## score: <n>` lines. The embedded copies are
//! the default; [`RubricSet::load_dir`] reads the same format from disk for
//! runtime overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use thiserror::Error;

use crate::domain::{DomainError, Trait};

#[derive(Debug, Error)]
pub enum RubricError {
    #[error("rubric for {trait_}: {reason}")]
    Malformed { trait_: Trait, reason: String },
    #[error("duplicate trait in rubric rendering: {0}")]
    DuplicateTrait(Trait),
    #[error("rubric rendering needs at least one trait")]
    EmptyTraitList,
    #[error("reading rubric file: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Scoring criteria for one trait, one criterion per score level 0..=5,
/// stored level-0-first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rubric {
    pub trait_: Trait,
    criteria: [String; 6],
}

impl Rubric {
    /// Criterion text for a score level.
    pub fn criterion(&self, level: u8) -> &str {
        &self.criteria[level as usize]
    }

    /// Parses the `## score: <n>` sectioned format. All six levels must be
    /// present exactly once with nonempty text.
    pub fn parse(trait_: Trait, text: &str) -> Result<Self, RubricError> {
        let malformed = |reason: String| RubricError::Malformed { trait_, reason };
        let mut criteria: [Option<String>; 6] = Default::default();
        let mut current: Option<(usize, String)> = None;

        let mut commit = |slot: Option<(usize, String)>| -> Result<(), RubricError> {
            if let Some((level, body)) = slot {
                let body = body.trim().to_string();
                if body.is_empty() {
                    return Err(malformed(format!("empty criterion for score {level}")));
                }
                if criteria[level].replace(body).is_some() {
                    return Err(malformed(format!("duplicate section for score {level}")));
                }
            }
            Ok(())
        };

        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("## score:") {
                let level: usize = rest
                    .trim()
                    .parse()
                    .map_err(|_| malformed(format!("bad section header {line:?}")))?;
                if level > 5 {
                    return Err(malformed(format!("score level {level} outside 0..=5")));
                }
                commit(current.take())?;
                current = Some((level, String::new()));
            } else if let Some((_, body)) = current.as_mut() {
                if !body.is_empty() {
                    body.push('\n');
                }
                body.push_str(line);
            } else if !line.trim().is_empty() {
                return Err(malformed(format!("text before first section: {line:?}")));
            }
        }
        commit(current.take())?;

        let mut out: Vec<String> = Vec::with_capacity(6);
        for (level, slot) in criteria.into_iter().enumerate() {
            out.push(slot.ok_or_else(|| malformed(format!("missing section for score {level}")))?);
        }
        Ok(Rubric { trait_, criteria: out.try_into().expect("six entries") })
    }
}

/// A full set of rubrics, total over the ten traits.
#[derive(Debug, Clone)]
pub struct RubricSet {
    rubrics: BTreeMap<Trait, Rubric>,
}

const EMBEDDED: [(Trait, &str); 10] = [
    (Trait::LexicalAccuracy, include_str!("../data/rubrics/lexical_accuracy.txt")),
    (Trait::LexicalDiversity, include_str!("../data/rubrics/lexical_diversity.txt")),
    (Trait::Coherence, include_str!("../data/rubrics/coherence.txt")),
    (Trait::GrammaticalAccuracy, include_str!("../data/rubrics/grammatical_accuracy.txt")),
    (Trait::GrammaticalDiversity, include_str!("../data/rubrics/grammatical_diversity.txt")),
    (Trait::PunctuationAccuracy, include_str!("../data/rubrics/punctuation_accuracy.txt")),
    (Trait::ArgumentClarity, include_str!("../data/rubrics/argument_clarity.txt")),
    (Trait::JustifyingPersuasiveness, include_str!("../data/rubrics/justifying_persuasiveness.txt")),
    (Trait::OrganizationalStructure, include_str!("../data/rubrics/organizational_structure.txt")),
    (Trait::EssayLength, include_str!("../data/rubrics/essay_length.txt")),
];

impl RubricSet {
    /// The rubric files compiled into the crate.
    pub fn embedded() -> &'static RubricSet {
        static SET: OnceLock<RubricSet> = OnceLock::new();
        SET.get_or_init(|| {
            let rubrics = EMBEDDED
                .into_iter()
                .map(|(t, text)| (t, Rubric::parse(t, text).expect("embedded rubric file")))
                .collect();
            RubricSet { rubrics }
        })
    }

    /// Loads `<snake_case_display_name>.txt` for every trait from a directory.
    pub fn load_dir(dir: &Path) -> Result<RubricSet, RubricError> {
        let mut rubrics = BTreeMap::new();
        for t in Trait::ALL {
            let file = dir.join(format!("{}.txt", t.display_name().to_lowercase().replace(' ', "_")));
            let text = std::fs::read_to_string(&file)?;
            rubrics.insert(t, Rubric::parse(t, &text)?);
        }
        Ok(RubricSet { rubrics })
    }

    pub fn get(&self, trait_: Trait) -> &Rubric {
        &self.rubrics[&trait_]
    }
}

/// Returns the embedded rubric for a trait; total over all ten.
pub fn rubric_for(trait_: Trait) -> &'static Rubric {
    RubricSet::embedded().get(trait_)
}

/// Renders a plain-text rubric block for the given traits, in order, each
/// with its six criteria from "Score 5:" down to "Score 0:".
pub fn render_rubrics(traits: &[Trait]) -> Result<String, RubricError> {
    render_rubrics_from(RubricSet::embedded(), traits)
}

pub fn render_rubrics_from(set: &RubricSet, traits: &[Trait]) -> Result<String, RubricError> {
    if traits.is_empty() {
        return Err(RubricError::EmptyTraitList);
    }
    let mut seen = [false; 10];
    let mut out = String::new();
    for (i, t) in traits.iter().enumerate() {
        if std::mem::replace(&mut seen[t.index()], true) {
            return Err(RubricError::DuplicateTrait(*t));
        }
        if i > 0 {
            out.push('\n');
        }
        let rubric = set.get(*t);
        writeln!(out, "{}:", t.display_name()).expect("string write");
        for level in (0..=5u8).rev() {
            writeln!(out, "Score {}: {}", level, rubric.criterion(level)).expect("string write");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_trait_has_six_levels() {
        for t in Trait::ALL {
            let r = rubric_for(t);
            for level in 0..=5u8 {
                assert!(!r.criterion(level).is_empty(), "{t} level {level}");
            }
        }
    }

    #[test]
    fn spec_anchor_lines() {
        assert!(rubric_for(Trait::ArgumentClarity)
            .criterion(5)
            .starts_with("The central argument is clear"));
        assert!(rubric_for(Trait::PunctuationAccuracy)
            .criterion(0)
            .starts_with("Punctuation is completely incorrect"));
    }

    #[test]
    fn render_single_trait() {
        let block = render_rubrics(&[Trait::ArgumentClarity]).unwrap();
        assert!(block.contains("Score 5:"));
        assert!(block.contains("No central argument is presented"));
        // Descending order.
        let five = block.find("Score 5:").unwrap();
        let zero = block.find("Score 0:").unwrap();
        assert!(five < zero);
    }

    #[test]
    fn render_all_ten_names_exactly_once() {
        let block = render_rubrics(&Trait::ALL).unwrap();
        for t in Trait::ALL {
            assert_eq!(
                block.matches(t.display_name()).count(),
                1,
                "{} should appear exactly once",
                t.display_name()
            );
        }
    }

    #[test]
    fn render_rejects_duplicates() {
        assert!(matches!(
            render_rubrics(&[Trait::Coherence, Trait::Coherence]),
            Err(RubricError::DuplicateTrait(Trait::Coherence))
        ));
    }

    #[test]
    fn render_rejects_empty_list() {
        assert!(matches!(render_rubrics(&[]), Err(RubricError::EmptyTraitList)));
    }

    #[test]
    fn render_is_deterministic() {
        let a = render_rubrics(&Trait::ALL).unwrap();
        let b = render_rubrics(&Trait::ALL).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parse_rejects_missing_level() {
        let text = "## score: 5\nfive\n## score: 4\nfour\n";
        assert!(Rubric::parse(Trait::Coherence, text).is_err());
    }

    #[test]
    fn load_dir_round_trips_with_embedded() {
        let dir = tempfile::tempdir().unwrap();
        for (t, text) in EMBEDDED {
            let name = t.display_name().to_lowercase().replace(' ', "_");
            std::fs::write(dir.path().join(format!("{name}.txt")), text).unwrap();
        }
        let set = RubricSet::load_dir(dir.path()).unwrap();
        for t in Trait::ALL {
            assert_eq!(set.get(t), rubric_for(t));
        }
    }
}
