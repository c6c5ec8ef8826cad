//! Command-line driver: single-essay scoring, batch runs over a manifest,
//! offline QWK evaluation, and cross-run comparison.
//!
//! Machine-readable output (JSON, CSV) goes to stdout or files; everything
//! human-readable goes to stderr. Exit codes: 0 success, 1 runtime failure,
//! 2 flag errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use examiner_core::agents::{run_pipeline, Ablation, PipelineConfig};
use examiner_core::domain::{
    score_vector_from_map, EssayItem, ImageRef, ImageSource, Trait, TraitScoreVector,
};
use examiner_core::experiment::{
    compare_runs, emit_report, load_manifest, report_markdown, run_experiment, RunConfigFile,
    RunReport, QWK_CSV_HEADER,
};
use examiner_core::metrics::per_trait_qwk;
use examiner_core::provider::spec::{build_router, parse_model_spec, Role};
use examiner_core::provider::ChatProvider;

#[derive(Parser)]
#[command(name = "examiner", version, about = "Trait-level essay scoring pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score one essay through the three-stage pipeline
    Score(ScoreArgs),
    /// Run the pipeline over a JSONL manifest and emit report artifacts
    Run(RunArgs),
    /// Per-trait QWK between prediction and gold JSONL score files
    Eval(EvalArgs),
    /// Compare overall QWK across two or more run reports
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    NoFeedback,
    SameModel,
}

impl From<AblationArg> for Ablation {
    fn from(value: AblationArg) -> Self {
        match value {
            AblationArg::NoFeedback => Ablation::NoFeedback,
            AblationArg::SameModel => Ablation::SameModel,
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    /// File holding the essay text
    #[arg(long)]
    essay: PathBuf,
    /// File holding the topic text
    #[arg(long)]
    topic: PathBuf,
    /// Image path or URL; repeat for multi-image topics
    #[arg(long = "image", required = true)]
    images: Vec<String>,
    /// Student model spec: provider=...,model=...[,key-env=...] or mock[:script]
    #[arg(long)]
    student: String,
    /// Teacher model spec, same grammar as --student
    #[arg(long)]
    teacher: String,
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
    /// Seed for mock echo-scores synthesis
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Format-repair retries per stage
    #[arg(long, default_value_t = 1)]
    parse_retries: u32,
}

#[derive(Args)]
struct RunArgs {
    /// JSONL manifest of essay items
    #[arg(long)]
    manifest: PathBuf,
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report artifacts
    #[arg(long)]
    out: PathBuf,
    /// Override the configured worker count
    #[arg(long)]
    concurrency: Option<usize>,
    /// Override the configured response-cache directory
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// JSONL of {id, scores} predictions
    #[arg(long)]
    pred: PathBuf,
    /// JSONL of {id, scores} gold ratings
    #[arg(long)]
    gold: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Path to a run's report.json; repeat for each run (at least two)
    #[arg(long = "report", required = true)]
    reports: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Score(args) => cmd_score(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn media_type_for(path: &str) -> &'static str {
    let lower = path.to_lowercase();
    if lower.ends_with(".png") {
        "image/png"
    } else if lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
        "image/jpeg"
    } else if lower.ends_with(".gif") {
        "image/gif"
    } else if lower.ends_with(".webp") {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}

fn image_ref(spec: &str) -> ImageRef {
    let media_type = media_type_for(spec).to_string();
    if spec.starts_with("http://") || spec.starts_with("https://") {
        ImageRef { source: ImageSource::Url { url: spec.to_string() }, media_type }
    } else {
        ImageRef { source: ImageSource::Path { path: PathBuf::from(spec) }, media_type }
    }
}

fn cmd_score(args: ScoreArgs) -> anyhow::Result<()> {
    let essay = std::fs::read_to_string(&args.essay)
        .with_context(|| format!("reading essay {}", args.essay.display()))?;
    let topic = std::fs::read_to_string(&args.topic)
        .with_context(|| format!("reading topic {}", args.topic.display()))?;
    let images: Vec<ImageRef> = args.images.iter().map(|s| image_ref(s)).collect();

    let student = parse_model_spec(&args.student, Role::Student, None)?;
    let teacher = parse_model_spec(&args.teacher, Role::Teacher, None)?;
    let (router, mut endpoints) = build_router(vec![student, teacher], args.seed);
    let teacher_ep = endpoints.pop().expect("two endpoints");
    let student_ep = endpoints.pop().expect("two endpoints");

    let ablation = args.ablation.map(Ablation::from).unwrap_or_default();
    let cfg = PipelineConfig {
        parse_retry_limit: args.parse_retries,
        ..PipelineConfig::new(student_ep, teacher_ep, ablation)
    };

    let item = EssayItem::new("cli-item", topic.trim_end(), images, essay.trim_end())?;
    let result = match run_pipeline(&item, &cfg, &router) {
        Ok(r) => r,
        Err(failure) => {
            bail!("pipeline failed at {} stage: {}", failure.stage, failure.error);
        }
    };

    let output = serde_json::json!({
        "config": {
            "student": {"base_url": cfg.student.base_url, "model_id": cfg.student.model_id},
            "teacher": {"base_url": cfg.teacher.base_url, "model_id": cfg.teacher.model_id},
            "ablation": cfg.ablation,
        },
        "item_id": result.item_id,
        "initial": result.initial,
        "feedback": result.feedback,
        "revision": result.revision,
        "final": result.final_scores,
    });
    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(())
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let config_dir = args
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let file = RunConfigFile::load(&args.config)
        .with_context(|| format!("loading config {}", args.config.display()))?;
    let loaded = file.resolve(&config_dir)?;
    let mut config = loaded.config;
    let router = loaded.router;

    config.output_dir = args.out.clone();
    if let Some(c) = args.concurrency {
        if c == 0 {
            bail!("--concurrency must be >= 1");
        }
        config.concurrency = c;
    }
    if let Some(dir) = args.cache_dir {
        config.cache_dir = dir;
    }

    let manifest = load_manifest(&args.manifest)
        .with_context(|| format!("loading manifest {}", args.manifest.display()))?;
    let stats = manifest.stats();
    eprintln!(
        "manifest: {} items ({} single-image, {} multi-image, {} with gold)",
        stats.total, stats.single_image, stats.multi_image, stats.with_gold
    );

    let calls_before = router.call_count();
    let report = run_experiment(&manifest, &config, &router)?;
    let calls = router.call_count() - calls_before;

    let paths = emit_report(&report, &config.output_dir)?;
    for p in &paths {
        eprintln!("wrote {}", p.display());
    }
    eprintln!("provider calls: {calls}");
    eprintln!("failures: {}", report.failures.len());
    eprint!("{}", report_markdown(&report));
    Ok(())
}

#[derive(serde::Deserialize)]
struct ScoreLine {
    id: String,
    scores: BTreeMap<String, i64>,
}

fn load_score_file(path: &Path) -> anyhow::Result<BTreeMap<String, TraitScoreVector>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ScoreLine = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", path.display(), idx + 1))?;
        let vector = score_vector_from_map(&parsed.scores)
            .with_context(|| format!("{} line {} scores", path.display(), idx + 1))?;
        if out.insert(parsed.id.clone(), vector).is_some() {
            bail!("{} line {}: duplicate id {:?}", path.display(), idx + 1, parsed.id);
        }
    }
    Ok(out)
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let pred = load_score_file(&args.pred)?;
    let gold = load_score_file(&args.gold)?;

    let mut pairs = Vec::new();
    for (id, p) in &pred {
        match gold.get(id) {
            Some(g) => pairs.push((p.clone(), g.clone())),
            None => eprintln!("warning: id {id:?} present in pred but not in gold"),
        }
    }
    for id in gold.keys() {
        if !pred.contains_key(id) {
            eprintln!("warning: id {id:?} present in gold but not in pred");
        }
    }
    if pairs.is_empty() {
        bail!("no common ids between pred and gold");
    }

    let table = per_trait_qwk(&pairs)?;
    let mean: f64 = table.values().sum::<f64>() / table.len() as f64;

    println!("{QWK_CSV_HEADER},mean");
    let mut line = String::from("qwk");
    for t in Trait::ALL {
        line.push_str(&format!(",{:.2}", table[&t]));
    }
    println!("{line},{mean:.2}");

    eprintln!("items compared: {}", pairs.len());
    for t in Trait::ALL {
        eprintln!("  {:<26} {:>6.2}", t.display_name(), table[&t]);
    }
    eprintln!("  {:<26} {:>6.2}", "mean", mean);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let mut reports = Vec::new();
    for path in &args.reports {
        reports
            .push(RunReport::load(path).with_context(|| format!("loading {}", path.display()))?);
    }
    let comparison = compare_runs(&reports)?;
    print!("{}", comparison.to_csv());
    eprintln!("compared {} runs", reports.len());
    Ok(())
}
