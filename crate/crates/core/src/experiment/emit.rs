//! Report artifacts: full-precision JSON, table CSVs rounded to two
//! decimals, a human-readable markdown summary, and cross-run comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::Trait;
use crate::metrics::AgreementTable;

use super::{ExperimentError, RunReport};

/// CSV header shared by the QWK tables: metric column then the ten trait
/// codes in canonical order.
pub const QWK_CSV_HEADER: &str = "metric,LA,LD,CH,GA,GD,PA,AC,JP,OS,EL";

/// Writes the five report artifacts into `dir` and returns their paths:
/// `report.json`, `qwk_table.csv`, `improvements_by_trait.csv`,
/// `by_image_kind.csv`, `report.md`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, bytes: Vec<u8>| -> Result<(), ExperimentError> {
        let path = dir.join(name);
        std::fs::write(&path, bytes)?;
        written.push(path);
        Ok(())
    };

    emit("report.json", report_json_bytes(report)?)?;
    emit("qwk_table.csv", qwk_table_csv(report).into_bytes())?;
    emit("improvements_by_trait.csv", improvements_csv(report).into_bytes())?;
    emit("by_image_kind.csv", by_image_kind_csv(report).into_bytes())?;
    emit("report.md", report_markdown(report).into_bytes())?;
    Ok(written)
}

/// Full-precision JSON, stable byte-for-byte for identical reports.
pub fn report_json_bytes(report: &RunReport) -> Result<Vec<u8>, ExperimentError> {
    let mut bytes = serde_json::to_vec_pretty(report)
        .map_err(|e| ExperimentError::Config(format!("serializing report: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn row(metric: &str, values: impl Iterator<Item = f64>) -> String {
    let mut line = metric.to_string();
    for v in values {
        write!(line, ",{v:.2}").expect("string write");
    }
    line.push('\n');
    line
}

fn table_rows(table: &AgreementTable, prefix: &str) -> String {
    let mut out = String::new();
    out.push_str(&row(
        &format!("{prefix}baseline"),
        Trait::ALL.iter().map(|t| table.per_trait[t].baseline_qwk),
    ));
    out.push_str(&row(
        &format!("{prefix}reflected"),
        Trait::ALL.iter().map(|t| table.per_trait[t].reflected_qwk),
    ));
    out.push_str(&row(
        &format!("{prefix}improvement"),
        Trait::ALL.iter().map(|t| table.per_trait[t].delta),
    ));
    out
}

/// Overall baseline/reflected/improvement rows, Table-2 column order.
pub fn qwk_table_csv(report: &RunReport) -> String {
    let mut out = format!("{QWK_CSV_HEADER}\n");
    if let Some(table) = report.overall_table() {
        out.push_str(&table_rows(table, ""));
    }
    out
}

/// Long-form per-trait deltas, ready for radar plotting.
pub fn improvements_csv(report: &RunReport) -> String {
    let mut out = String::from("trait,code,improvement\n");
    if let Some(table) = report.overall_table() {
        for t in Trait::ALL {
            writeln!(out, "{},{},{:.2}", t.display_name(), t.code(), table.per_trait[&t].delta)
                .expect("string write");
        }
    }
    out
}

/// Per-image-kind rows (single then multi), same metric layout as the
/// overall table.
pub fn by_image_kind_csv(report: &RunReport) -> String {
    let mut out = format!("group,{}\n", QWK_CSV_HEADER);
    for kind in ["single", "multi"] {
        let label = format!("image_kind={kind}");
        if let Some(table) = report.tables.iter().find(|t| t.group.as_deref() == Some(&label)) {
            out.push_str(&table_rows(table, &format!("{kind},")));
        }
    }
    out
}

fn markdown_table(table: &AgreementTable) -> String {
    let mut out = String::from("| metric |");
    for t in Trait::ALL {
        write!(out, " {} |", t.code()).expect("string write");
    }
    out.push_str(" mean |\n|---|");
    out.push_str(&"---|".repeat(11));
    out.push('\n');
    let mut line = |name: &str, get: &dyn Fn(Trait) -> f64, mean: f64| {
        write!(out, "| {name} |").expect("string write");
        for t in Trait::ALL {
            write!(out, " {:.2} |", get(t)).expect("string write");
        }
        writeln!(out, " {mean:.2} |").expect("string write");
    };
    line("baseline", &|t| table.per_trait[&t].baseline_qwk, table.mean_baseline);
    line("reflected", &|t| table.per_trait[&t].reflected_qwk, table.mean_reflected);
    line("improvement", &|t| table.per_trait[&t].delta, table.mean_delta);
    out
}

/// Human-readable run summary.
pub fn report_markdown(report: &RunReport) -> String {
    let cfg = &report.config;
    let mut out = String::from("# Run report\n\n");
    writeln!(out, "- student: `{}` at `{}`", cfg.student.model_id, cfg.student.base_url)
        .expect("string write");
    writeln!(out, "- teacher: `{}` at `{}`", cfg.teacher.model_id, cfg.teacher.base_url)
        .expect("string write");
    writeln!(out, "- ablation: {}", cfg.ablation).expect("string write");
    writeln!(out, "- concurrency: {}", cfg.concurrency).expect("string write");
    writeln!(out, "- seed: {}", cfg.seed).expect("string write");
    writeln!(out, "- items scored: {}", report.results.len()).expect("string write");
    writeln!(out, "- failures: {}", report.failures.len()).expect("string write");
    out.push('\n');

    match report.overall_table() {
        Some(table) => {
            writeln!(out, "## Overall QWK ({} items)\n", table.items).expect("string write");
            out.push_str(&markdown_table(table));
            out.push('\n');
        }
        None => out.push_str("No agreement tables (run without gold scores).\n\n"),
    }

    for table in report.tables.iter().filter(|t| t.group.is_some()) {
        writeln!(
            out,
            "## {} ({} items)\n",
            table.group.as_deref().unwrap_or_default(),
            table.items
        )
        .expect("string write");
        out.push_str(&markdown_table(table));
        out.push('\n');
    }

    if !report.failures.is_empty() {
        out.push_str("## Failures\n\n");
        for f in &report.failures {
            writeln!(out, "- `{}` at {} stage: {}", f.item_id, f.stage, f.error)
                .expect("string write");
        }
        out.push('\n');
    }

    if !report.notices.is_empty() {
        out.push_str("## Notices\n\n");
        for n in &report.notices {
            writeln!(out, "- {n}").expect("string write");
        }
    }
    out
}

/// One metric row of a cross-run comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub metric: String,
    pub per_trait: std::collections::BTreeMap<Trait, f64>,
    pub mean: f64,
}

/// Aligned per-trait QWK across runs, baseline and reflected per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub rows: Vec<ComparisonRow>,
}

impl RunComparison {
    pub fn to_csv(&self) -> String {
        let mut out = format!("run,{},mean\n", QWK_CSV_HEADER);
        for r in &self.rows {
            let mut line = format!("{},{}", r.run, r.metric);
            for t in Trait::ALL {
                write!(line, ",{:.2}", r.per_trait[&t]).expect("string write");
            }
            writeln!(out, "{line},{:.2}", r.mean).expect("string write");
        }
        out
    }
}

/// Aligns overall per-trait QWK across two or more run reports for
/// cross-model and scaling comparisons.
pub fn compare_runs(reports: &[RunReport]) -> Result<RunComparison, ExperimentError> {
    if reports.len() < 2 {
        return Err(ExperimentError::NotEnoughReports(reports.len()));
    }
    let mut rows = Vec::new();
    for (i, report) in reports.iter().enumerate() {
        let table = report.overall_table().ok_or(ExperimentError::MissingAgreementTable)?;
        if table.per_trait.len() != Trait::COUNT {
            return Err(ExperimentError::MismatchedTraits);
        }
        let mut label = format!("run{}:{}", i + 1, report.config.student.model_id);
        if report.config.ablation != crate::agents::Ablation::None {
            write!(label, "+{}", report.config.ablation).expect("string write");
        }
        rows.push(ComparisonRow {
            run: label.clone(),
            metric: "baseline".into(),
            per_trait: table.per_trait.iter().map(|(t, a)| (*t, a.baseline_qwk)).collect(),
            mean: table.mean_baseline,
        });
        rows.push(ComparisonRow {
            run: label,
            metric: "reflected".into(),
            per_trait: table.per_trait.iter().map(|(t, a)| (*t, a.reflected_qwk)).collect(),
            mean: table.mean_reflected,
        });
    }
    Ok(RunComparison { rows })
}
