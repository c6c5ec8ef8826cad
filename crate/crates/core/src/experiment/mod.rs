//! Dataset ingestion, cached batch execution of the pipeline over a
//! manifest, grouped evaluation, and report emission.

pub mod cache;
mod emit;
pub mod exec;

pub use emit::{
    compare_runs, emit_report, report_markdown, ComparisonRow, RunComparison, QWK_CSV_HEADER,
};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{run_pipeline, Ablation, PipelineConfig, PipelineResult, Stage};
use crate::domain::{score_vector_from_map, EssayItem, ImageKind, ImageRef, ImageSource, TraitScoreVector};
use crate::metrics::{AgreementTable, MetricsError};
use crate::provider::spec::{build_router, parse_model_spec, Role};
use crate::provider::{ChatProvider, ModelEndpoint, Router};
use cache::CachedProvider;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("manifest line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("manifest has no items")]
    EmptyManifest,
    #[error("config: {0}")]
    Config(String),
    #[error("need at least two reports to compare, got {0}")]
    NotEnoughReports(usize),
    #[error("report has no overall agreement table (run without gold scores?)")]
    MissingAgreementTable,
    #[error("agreement table does not cover all ten traits")]
    MismatchedTraits,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A loaded dataset: validated items plus where they came from.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub items: Vec<EssayItem>,
    pub source_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestStats {
    pub total: usize,
    pub single_image: usize,
    pub multi_image: usize,
    pub with_gold: usize,
    pub by_chart_type: BTreeMap<String, usize>,
}

impl Manifest {
    pub fn stats(&self) -> ManifestStats {
        let mut by_chart_type: BTreeMap<String, usize> = BTreeMap::new();
        let mut single = 0;
        let mut with_gold = 0;
        for item in &self.items {
            if item.image_kind() == ImageKind::Single {
                single += 1;
            }
            if item.gold.is_some() {
                with_gold += 1;
            }
            if let Some(ct) = &item.chart_type {
                *by_chart_type.entry(ct.clone()).or_default() += 1;
            }
        }
        ManifestStats {
            total: self.items.len(),
            single_image: single,
            multi_image: self.items.len() - single,
            with_gold,
            by_chart_type,
        }
    }
}

#[derive(Deserialize)]
struct ManifestLine {
    id: String,
    topic_text: String,
    images: Vec<ImageRef>,
    essay_text: String,
    #[serde(default)]
    chart_type: Option<String>,
    #[serde(default)]
    gold: Option<BTreeMap<String, i64>>,
}

/// Parses a JSON-Lines manifest, one essay item per line. Relative image
/// paths resolve against the manifest's directory. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<Manifest, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut items = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let schema_err =
            |reason: String| ExperimentError::Schema { line, reason };
        let wire: ManifestLine =
            serde_json::from_str(raw_line).map_err(|e| schema_err(e.to_string()))?;
        if !seen.insert(wire.id.clone()) {
            return Err(ExperimentError::DuplicateId(wire.id));
        }

        let images: Vec<ImageRef> = wire
            .images
            .into_iter()
            .map(|mut img| {
                if let ImageSource::Path { path } = &img.source {
                    if path.is_relative() {
                        img.source = ImageSource::Path { path: base.join(path) };
                    }
                }
                img
            })
            .collect();

        let mut item = EssayItem::new(wire.id, wire.topic_text, images, wire.essay_text)
            .map_err(|e| schema_err(e.to_string()))?;
        item.chart_type = wire.chart_type;
        if let Some(gold) = wire.gold {
            let vector = score_vector_from_map(&gold)
                .map_err(|e| schema_err(format!("gold: {e}")))?;
            item.gold = Some(vector);
        }
        items.push(item);
    }

    Ok(Manifest { items, source_path: path.to_path_buf() })
}

/// Report breakdown dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    ImageKind,
    ChartType,
}

impl Grouping {
    pub fn name(self) -> &'static str {
        match self {
            Grouping::ImageKind => "image_kind",
            Grouping::ChartType => "chart_type",
        }
    }
}

/// Parses grouping names; `none` stands alone and means no breakdowns.
pub fn parse_groupings(names: &[String]) -> Result<BTreeSet<Grouping>, ExperimentError> {
    let mut out = BTreeSet::new();
    for name in names {
        match name.as_str() {
            "image_kind" => {
                out.insert(Grouping::ImageKind);
            }
            "chart_type" => {
                out.insert(Grouping::ChartType);
            }
            "none" => {
                if names.len() > 1 {
                    return Err(ExperimentError::Config(
                        "grouping \"none\" cannot be combined with others".into(),
                    ));
                }
                return Ok(BTreeSet::new());
            }
            other => {
                return Err(ExperimentError::Config(format!("unknown grouping {other:?}")))
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub concurrency: usize,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub groupings: BTreeSet<Grouping>,
    /// Feeds mock echo-scores synthesis only; real endpoints ignore it.
    pub seed: u64,
    /// When on, per-item per-stage transcripts are written under
    /// `<output_dir>/transcripts/`.
    pub audit: bool,
}

impl RunConfig {
    pub fn snapshot(&self) -> ConfigSnapshot {
        ConfigSnapshot {
            student: EndpointSnapshot::of(&self.pipeline.student),
            teacher: EndpointSnapshot::of(&self.pipeline.teacher),
            ablation: self.pipeline.ablation,
            parse_retry_limit: self.pipeline.parse_retry_limit,
            concurrency: self.concurrency,
            groupings: self.groupings.iter().map(|g| g.name().to_string()).collect(),
            seed: self.seed,
        }
    }
}

/// The part of the run configuration that is reproducibility-relevant and
/// safe to persist (key *names*, never key values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub student: EndpointSnapshot,
    pub teacher: EndpointSnapshot,
    pub ablation: Ablation,
    pub parse_retry_limit: u32,
    pub concurrency: usize,
    pub groupings: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSnapshot {
    pub base_url: String,
    pub model_id: String,
    pub api_key_ref: Option<String>,
    pub temperature: f64,
}

impl EndpointSnapshot {
    fn of(ep: &ModelEndpoint) -> Self {
        EndpointSnapshot {
            base_url: ep.base_url.clone(),
            model_id: ep.model_id.clone(),
            api_key_ref: ep.api_key_ref.clone(),
            temperature: ep.temperature,
        }
    }
}

/// Scores for one successfully processed item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub id: String,
    pub initial: TraitScoreVector,
    #[serde(rename = "final")]
    pub final_scores: TraitScoreVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub item_id: String,
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ConfigSnapshot,
    pub results: Vec<ItemOutcome>,
    pub tables: Vec<AgreementTable>,
    pub failures: Vec<FailureRecord>,
    pub notices: Vec<String>,
}

impl RunReport {
    pub fn overall_table(&self) -> Option<&AgreementTable> {
        self.tables.iter().find(|t| t.group.is_none())
    }

    pub fn load(path: &Path) -> Result<RunReport, ExperimentError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!(
            "report {}: {e}",
            path.display()
        )))
    }
}

/// Executes the pipeline over every manifest item with bounded concurrency.
/// Every provider call goes through the content-addressed cache, so warm
/// re-runs replay without touching the backend. Per-item failures are
/// recorded, never abort the batch; only cache/output I/O is fatal.
pub fn run_experiment(
    manifest: &Manifest,
    cfg: &RunConfig,
    provider: &dyn ChatProvider,
) -> Result<RunReport, ExperimentError> {
    if manifest.items.is_empty() {
        return Err(ExperimentError::EmptyManifest);
    }
    let cached = CachedProvider::new(provider, &cfg.cache_dir)?;

    let outcomes = exec::map_bounded(&manifest.items, cfg.concurrency, |item| {
        run_pipeline(item, &cfg.pipeline, &cached)
    });

    let mut results: Vec<PipelineResult> = Vec::new();
    let mut failures: Vec<FailureRecord> = Vec::new();
    for (item, outcome) in manifest.items.iter().zip(outcomes) {
        match outcome {
            Ok(result) => results.push(result),
            Err(failure) => failures.push(FailureRecord {
                item_id: item.id.clone(),
                stage: failure.stage,
                error: failure.error.to_string(),
            }),
        }
    }
    results.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    failures.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    debug_assert_eq!(results.len() + failures.len(), manifest.items.len());

    if cfg.audit {
        write_transcripts(&cfg.output_dir, &results)?;
    }

    let by_id: BTreeMap<&str, &EssayItem> =
        manifest.items.iter().map(|i| (i.id.as_str(), i)).collect();

    let mut notices = Vec::new();
    let golded: Vec<(&EssayItem, &PipelineResult)> = results
        .iter()
        .filter_map(|r| {
            let item = by_id[r.item_id.as_str()];
            item.gold.as_ref().map(|_| (item, r))
        })
        .collect();

    let mut tables = Vec::new();
    if golded.is_empty() {
        notices.push(
            "no gold scores available; agreement tables omitted (scoring-only mode)".to_string(),
        );
    } else {
        if golded.len() < results.len() {
            notices.push(format!(
                "{} of {} scored items lack gold scores and are excluded from agreement tables",
                results.len() - golded.len(),
                results.len()
            ));
        }
        tables.push(compute_table(&golded, None)?);
        for grouping in &cfg.groupings {
            match grouping {
                Grouping::ImageKind => {
                    for kind in [ImageKind::Single, ImageKind::Multi] {
                        let subset: Vec<_> = golded
                            .iter()
                            .copied()
                            .filter(|(item, _)| item.image_kind() == kind)
                            .collect();
                        if !subset.is_empty() {
                            tables.push(compute_table(&subset, Some(format!("image_kind={kind}")))?);
                        }
                    }
                }
                Grouping::ChartType => {
                    let mut buckets: BTreeMap<String, Vec<(&EssayItem, &PipelineResult)>> =
                        BTreeMap::new();
                    for (item, result) in golded.iter().copied() {
                        let key = item.chart_type.clone().unwrap_or_else(|| "unspecified".into());
                        buckets.entry(key).or_default().push((item, result));
                    }
                    for (key, subset) in buckets {
                        tables.push(compute_table(&subset, Some(format!("chart_type={key}")))?);
                    }
                }
            }
        }
    }
    if !failures.is_empty() {
        notices.push(format!(
            "{} item(s) failed and are excluded from agreement tables",
            failures.len()
        ));
    }

    Ok(RunReport {
        config: cfg.snapshot(),
        results: results
            .into_iter()
            .map(|r| ItemOutcome { id: r.item_id, initial: r.initial, final_scores: r.final_scores })
            .collect(),
        tables,
        failures,
        notices,
    })
}

fn compute_table(
    subset: &[(&EssayItem, &PipelineResult)],
    group: Option<String>,
) -> Result<AgreementTable, ExperimentError> {
    let baseline: Vec<(TraitScoreVector, TraitScoreVector)> = subset
        .iter()
        .map(|(item, r)| (r.initial.clone(), item.gold.clone().expect("golded subset")))
        .collect();
    let reflected: Vec<(TraitScoreVector, TraitScoreVector)> = subset
        .iter()
        .map(|(item, r)| (r.final_scores.clone(), item.gold.clone().expect("golded subset")))
        .collect();
    Ok(AgreementTable::compute(&baseline, &reflected, group)?)
}

fn write_transcripts(output_dir: &Path, results: &[PipelineResult]) -> Result<(), ExperimentError> {
    let dir = output_dir.join("transcripts");
    std::fs::create_dir_all(&dir)?;
    for result in results {
        let id = sanitize_id(&result.item_id);
        let mut entries = vec![(
            Stage::Initial,
            &result.transcripts.initial,
            serde_json::to_value(&result.initial).expect("serializable"),
        )];
        if let (Some(t), Some(pool)) = (&result.transcripts.feedback, &result.feedback) {
            entries.push((Stage::Feedback, t, serde_json::to_value(pool).expect("serializable")));
        }
        if let Some(revision) = &result.revision {
            entries.push((
                Stage::Reflect,
                &result.transcripts.reflect,
                serde_json::to_value(revision).expect("serializable"),
            ));
        }
        for (stage, transcript, parsed) in entries {
            let record = serde_json::json!({
                "stage": stage,
                "prompt_fingerprint": transcript.prompt_fingerprint,
                "raw_response": transcript.raw_response,
                "parsed": parsed,
            });
            let path = dir.join(format!("{id}.{stage}.json"));
            let bytes = serde_json::to_vec_pretty(&record).expect("serializable record");
            std::fs::write(path, bytes)?;
        }
    }
    Ok(())
}

fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Flat key/value run configuration file (TOML), mirroring [`RunConfig`].
/// Student and teacher take the same model-spec strings as the CLI flags.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub student: String,
    pub teacher: String,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default = "default_parse_retry_limit")]
    pub parse_retry_limit: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub groupings: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub audit: bool,
}

fn default_parse_retry_limit() -> u32 {
    1
}

fn default_concurrency() -> usize {
    4
}

/// A run configuration resolved into endpoints and a provider router.
pub struct LoadedRun {
    pub config: RunConfig,
    pub router: Router,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<RunConfigFile, ExperimentError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Resolves specs and relative paths against `base_dir` (normally the
    /// config file's directory).
    pub fn resolve(self, base_dir: &Path) -> Result<LoadedRun, ExperimentError> {
        if self.concurrency == 0 {
            return Err(ExperimentError::Config("concurrency must be >= 1".into()));
        }
        let student = parse_model_spec(&self.student, Role::Student, Some(base_dir))
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        let teacher = parse_model_spec(&self.teacher, Role::Teacher, Some(base_dir))
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        let (router, mut endpoints) = build_router(vec![student, teacher], self.seed);
        let teacher_ep = endpoints.pop().expect("two endpoints");
        let student_ep = endpoints.pop().expect("two endpoints");
        let pipeline = PipelineConfig {
            parse_retry_limit: self.parse_retry_limit,
            ..PipelineConfig::new(student_ep, teacher_ep, self.ablation)
        };

        let resolve_dir = |p: PathBuf| if p.is_relative() { base_dir.join(p) } else { p };
        let groupings = match &self.groupings {
            Some(names) => parse_groupings(names)?,
            None => BTreeSet::from([Grouping::ImageKind, Grouping::ChartType]),
        };
        let config = RunConfig {
            pipeline,
            concurrency: self.concurrency,
            cache_dir: resolve_dir(
                self.cache_dir.unwrap_or_else(|| PathBuf::from(".examiner-cache")),
            ),
            output_dir: resolve_dir(self.output_dir.unwrap_or_else(|| PathBuf::from("out"))),
            groupings,
            seed: self.seed,
            audit: self.audit,
        };
        Ok(LoadedRun { config, router })
    }
}
