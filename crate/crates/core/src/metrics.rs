//! Agreement and summary statistics: quadratic weighted kappa, per-trait
//! tables, deltas, and mean-score comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Score, Trait, TraitScoreVector};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("pred has {pred} entries but gold has {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("rating {value} outside 0..{num_categories}")]
    CategoryOutOfRange { value: usize, num_categories: usize },
}

/// Paired ratings over a fixed category count (six levels for scores 0..=5).
#[derive(Debug, Clone)]
pub struct RatingPairs {
    pred: Vec<usize>,
    gold: Vec<usize>,
    num_categories: usize,
}

impl RatingPairs {
    pub const DEFAULT_CATEGORIES: usize = Score::CATEGORIES;

    pub fn new(pred: Vec<usize>, gold: Vec<usize>, num_categories: usize) -> Result<Self, MetricsError> {
        if pred.is_empty() || gold.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        if pred.len() != gold.len() {
            return Err(MetricsError::LengthMismatch { pred: pred.len(), gold: gold.len() });
        }
        for &v in pred.iter().chain(gold.iter()) {
            if v >= num_categories {
                return Err(MetricsError::CategoryOutOfRange { value: v, num_categories });
            }
        }
        Ok(RatingPairs { pred, gold, num_categories })
    }

    pub fn from_scores(pred: &[Score], gold: &[Score]) -> Result<Self, MetricsError> {
        RatingPairs::new(
            pred.iter().map(|s| s.value() as usize).collect(),
            gold.iter().map(|s| s.value() as usize).collect(),
            Self::DEFAULT_CATEGORIES,
        )
    }

    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }
}

/// Quadratic weighted kappa: `1 - Σ(w∘O) / Σ(w∘E)` with weights
/// `w[i][j] = (i-j)² / (N-1)²`, observed counts `O`, and expected counts `E`
/// from the outer product of the marginal histograms scaled to the same
/// total as `O`.
///
/// Degenerate case: when both raters are constant, `Σ(w∘E)` is zero and the
/// formula is 0/0; returns 1.0 if pred equals gold elementwise, else 0.0.
pub fn qwk(pairs: &RatingPairs) -> f64 {
    let n_cat = pairs.num_categories;
    let total = pairs.len() as f64;

    let mut observed = vec![vec![0f64; n_cat]; n_cat];
    let mut pred_hist = vec![0f64; n_cat];
    let mut gold_hist = vec![0f64; n_cat];
    for (&p, &g) in pairs.pred.iter().zip(&pairs.gold) {
        observed[p][g] += 1.0;
        pred_hist[p] += 1.0;
        gold_hist[g] += 1.0;
    }

    let denom = ((n_cat - 1) * (n_cat - 1)) as f64;
    let mut weighted_observed = 0.0;
    let mut weighted_expected = 0.0;
    for i in 0..n_cat {
        for j in 0..n_cat {
            let weight = ((i as f64 - j as f64) * (i as f64 - j as f64)) / denom;
            weighted_observed += weight * observed[i][j];
            weighted_expected += weight * pred_hist[i] * gold_hist[j] / total;
        }
    }

    if weighted_expected == 0.0 {
        let identical = pairs.pred == pairs.gold;
        return if identical { 1.0 } else { 0.0 };
    }
    1.0 - weighted_observed / weighted_expected
}

/// Per-trait QWK over (prediction, gold) vector pairs.
pub fn per_trait_qwk(
    results: &[(TraitScoreVector, TraitScoreVector)],
) -> Result<BTreeMap<Trait, f64>, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut out = BTreeMap::new();
    for t in Trait::ALL {
        let pred: Vec<Score> = results.iter().map(|(p, _)| p.get(t)).collect();
        let gold: Vec<Score> = results.iter().map(|(_, g)| g.get(t)).collect();
        out.insert(t, qwk(&RatingPairs::from_scores(&pred, &gold)?));
    }
    Ok(out)
}

/// Delta between a baseline and a reflected metric value. `relative` is
/// `delta / |baseline|`, absent when the baseline is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub delta: f64,
    pub relative: Option<f64>,
}

pub fn improvement(baseline: f64, reflected: f64) -> Improvement {
    let delta = reflected - baseline;
    let relative = if baseline == 0.0 { None } else { Some(delta / baseline.abs()) };
    Improvement { delta, relative }
}

/// Arithmetic mean score per trait.
pub fn mean_trait_scores(
    vectors: &[TraitScoreVector],
) -> Result<BTreeMap<Trait, f64>, MetricsError> {
    if vectors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = vectors.len() as f64;
    Ok(Trait::ALL
        .into_iter()
        .map(|t| (t, vectors.iter().map(|v| v.get(t).value() as f64).sum::<f64>() / n))
        .collect())
}

/// Baseline vs reflected QWK for one trait.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitAgreement {
    pub baseline_qwk: f64,
    pub reflected_qwk: f64,
    pub delta: f64,
}

/// Per-trait agreement table with means, optionally labeled with the group
/// it was computed over (e.g. `image_kind=single`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub per_trait: BTreeMap<Trait, TraitAgreement>,
    pub mean_baseline: f64,
    pub mean_reflected: f64,
    pub mean_delta: f64,
    pub group: Option<String>,
    /// Number of items the table was computed over.
    pub items: usize,
}

impl AgreementTable {
    pub fn compute(
        baseline: &[(TraitScoreVector, TraitScoreVector)],
        reflected: &[(TraitScoreVector, TraitScoreVector)],
        group: Option<String>,
    ) -> Result<Self, MetricsError> {
        let base = per_trait_qwk(baseline)?;
        let refl = per_trait_qwk(reflected)?;
        let mut per_trait = BTreeMap::new();
        for t in Trait::ALL {
            let b = base[&t];
            let r = refl[&t];
            per_trait.insert(t, TraitAgreement { baseline_qwk: b, reflected_qwk: r, delta: r - b });
        }
        let n = Trait::COUNT as f64;
        let mean_baseline = per_trait.values().map(|a| a.baseline_qwk).sum::<f64>() / n;
        let mean_reflected = per_trait.values().map(|a| a.reflected_qwk).sum::<f64>() / n;
        Ok(AgreementTable {
            per_trait,
            mean_baseline,
            mean_reflected,
            mean_delta: mean_reflected - mean_baseline,
            group,
            items: baseline.len(),
        })
    }
}
