//! The `diagplan` command line.
//!
//! Exit status is 0 on success, 1 when the input is readable but wrong
//! (invalid plan, failed generation, missing file) and 2 on bad usage.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diagplan_core::audit::audit_plan;
use diagplan_core::eval::{evaluate, questions_from_gt, EvalConfig};
use diagplan_core::export::{export_script, Dialect, ExportOptions};
use diagplan_core::icon::{IconProvider, NoIcons};
use diagplan_core::llm::{CompletionClient, InContextExample, DEFAULT_EXAMPLE_COUNT};
use diagplan_core::plan::DiagramPlan;
use diagplan_core::planner::{AuditorMode, LoopConfig, Planner, RefinerMode, Termination};
use diagplan_core::render::{render_svg, RenderOptions, RenderStyle};
use serde_json::{json, Value};

use crate::dataset::{load_records, record_to_plan, select_examples};
use crate::icons::{bundled_pack_dir, IconSearch};
use crate::io::{plan_from_str, plan_to_string, read_plan, read_text, write_atomic, PlanFormat, PlanIoError};
use crate::llm_client::{HttpClient, RecordingClient, ReplayClient};
use crate::service::{self, AppState, Backend, SessionStore};

#[derive(Parser, Debug)]
#[command(name = "diagplan", version, about = "Plan, check, render and export diagrams from captions")]
pub struct Cli {
    /// Print errors on stderr as JSON objects.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a plan to canonical JSON (or back to the DSL).
    Parse {
        input: PathBuf,
        #[command(flatten)]
        out: PlanOut,
        #[arg(long, default_value = "")]
        caption: String,
    },
    /// Check that a plan is structurally valid.
    Validate { input: PathBuf },
    /// Run the rule-based auditor and print its report.
    Audit {
        input: PathBuf,
        #[command(flatten)]
        audit: AuditOpts,
    },
    /// Generate a plan for a caption, optionally refining it.
    Plan {
        #[arg(long)]
        caption: String,
        #[arg(long, default_value = "")]
        topic: String,
        #[command(flatten)]
        llm: LlmOpts,
        /// Run the audit/revise loop on the generated plan.
        #[arg(long)]
        refine: bool,
        #[command(flatten)]
        refine_opts: RefineOpts,
        #[command(flatten)]
        out: PlanOut,
    },
    /// Run the audit/revise loop on an existing plan.
    Refine {
        input: PathBuf,
        #[arg(long, default_value = "")]
        topic: String,
        #[command(flatten)]
        llm: LlmOpts,
        #[command(flatten)]
        refine_opts: RefineOpts,
        #[command(flatten)]
        out: PlanOut,
    },
    /// Render a plan to SVG.
    Render {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 512)]
        size: u32,
        #[command(flatten)]
        icons: IconOpts,
    },
    /// Write a script that rebuilds the diagram in an editor.
    Export {
        input: PathBuf,
        #[arg(long, value_enum)]
        dialect: DialectArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Canvas side in points (office) or pixels (inkscape).
        #[arg(long, default_value_t = 540)]
        size: u32,
        #[command(flatten)]
        icons: IconOpts,
    },
    /// Score a candidate plan against a ground-truth plan.
    Eval { candidate: PathBuf, gt: PathBuf },
    /// Read an annotated dataset and convert its records to plans.
    Ingest {
        dataset: PathBuf,
        /// Write one `<record id>.plan` per record here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Write selected in-context examples to this JSON file.
        #[arg(long)]
        examples_out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_EXAMPLE_COUNT)]
        examples: usize,
        #[arg(long)]
        topic: Option<String>,
    },
    /// Start the plan-editing HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Keep one JSON snapshot per session here.
        #[arg(long)]
        snapshots: Option<PathBuf>,
        /// Serve the editor's static files from this directory.
        #[arg(long)]
        ui: Option<PathBuf>,
        #[command(flatten)]
        llm: LlmOpts,
        #[command(flatten)]
        refine_opts: RefineOpts,
        #[command(flatten)]
        icons: IconOpts,
    },
}

#[derive(Args, Debug)]
struct PlanOut {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct AuditOpts {
    /// IoU above which two objects count as overlapping.
    #[arg(long)]
    overlap_iou: Option<f64>,
    /// Terms the plan must mention; repeatable.
    #[arg(long = "require")]
    required: Vec<String>,
}

#[derive(Args, Debug)]
struct LlmOpts {
    /// Replay completions from this transcript instead of calling the model.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Call the model and append each exchange to `--transcript`.
    #[arg(long, requires = "transcript")]
    record: bool,
    /// Annotated dataset to draw in-context examples from.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of in-context examples (at most the size of the train split).
    #[arg(long)]
    examples: Option<usize>,
}

#[derive(Args, Debug)]
struct RefineOpts {
    #[arg(long, default_value_t = diagplan_core::planner::DEFAULT_MAX_ITERATIONS)]
    max_iterations: u32,
    #[arg(long, value_enum)]
    auditor: Option<AuditorArg>,
    #[arg(long, value_enum)]
    refiner: Option<RefinerArg>,
    /// Write the loop trace as JSON here.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IconOpts {
    /// Draw icons instead of placeholder boxes.
    #[arg(long)]
    icons: bool,
    #[arg(long)]
    icon_pack: Option<PathBuf>,
    #[arg(long)]
    icon_cache: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Json,
    Dsl,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DialectArg {
    Office,
    Inkscape,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AuditorArg {
    Llm,
    Rules,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum RefinerArg {
    Llm,
    Rules,
}

/// A failure to report. `details` carries machine-readable context for
/// `--json`.
#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
    details: Value,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into(), details: Value::Null }
    }

    fn with(mut self, details: Value) -> Self {
        self.details = details;
        self
    }
}

impl From<PlanIoError> for CliError {
    fn from(e: PlanIoError) -> Self {
        match &e {
            PlanIoError::Invalid(v) => CliError::new("invalid_plan", e.to_string()).with(json!({ "violations": v })),
            PlanIoError::Parse(p) => CliError::new("parse", e.to_string()).with(json!({ "line": p.line() })),
            PlanIoError::Json(_) => CliError::new("parse", e.to_string()),
            PlanIoError::Read { .. } | PlanIoError::Write { .. } => CliError::new("io", e.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let json_errors = cli.json;
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            if json_errors {
                eprintln!("{}", json!({ "error": e.kind, "message": e.message, "details": e.details }));
            } else {
                eprintln!("error: {}", e.message);
                if let Some(v) = e.details.get("violations").and_then(Value::as_array) {
                    for v in v {
                        eprintln!("  {}", v);
                    }
                }
            }
            1
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => Ok(write_atomic(path, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_plan(plan: &DiagramPlan, out: &PlanOut) -> CliResult {
    let format = match out.format {
        FormatArg::Json => PlanFormat::Json,
        FormatArg::Dsl => PlanFormat::Dsl,
    };
    emit(out.out.as_deref(), &plan_to_string(plan, format)?)
}

fn emit_json(out: Option<&Path>, value: &impl serde::Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("io", e.to_string()))?;
    emit(out, &(text + "\n"))
}

fn icon_provider(opts: &IconOpts) -> Arc<dyn IconProvider> {
    if !opts.icons {
        return Arc::new(NoIcons);
    }
    let pack = opts.icon_pack.clone().unwrap_or_else(bundled_pack_dir);
    Arc::new(IconSearch::from_env(opts.icon_cache.as_deref(), Some(&pack)))
}

fn style(opts: &IconOpts) -> RenderStyle {
    if opts.icons {
        RenderStyle::Icons
    } else {
        RenderStyle::Placeholder
    }
}

fn client(opts: &LlmOpts) -> Result<Option<Arc<dyn CompletionClient>>, CliError> {
    let live = HttpClient::from_env;
    let transcript_err = |e: crate::llm_client::TranscriptError| CliError::new("transcript", e.to_string());
    Ok(match (&opts.transcript, opts.record) {
        (Some(path), false) => Some(Arc::new(ReplayClient::open(path).map_err(transcript_err)?)),
        (Some(path), true) => {
            let inner = live().ok_or_else(|| {
                CliError::new("config", format!("--record needs {} to be set", crate::llm_client::ENDPOINT_VAR))
            })?;
            Some(Arc::new(RecordingClient::create(inner, path).map_err(transcript_err)?))
        }
        (None, _) => live().map(|c| Arc::new(c) as Arc<dyn CompletionClient>),
    })
}

fn require_client(opts: &LlmOpts) -> Result<Arc<dyn CompletionClient>, CliError> {
    client(opts)?.ok_or_else(|| {
        CliError::new(
            "config",
            format!("no model configured: pass --transcript or set {}", crate::llm_client::ENDPOINT_VAR),
        )
    })
}

fn examples(opts: &LlmOpts, topic: &str) -> Result<Vec<InContextExample>, CliError> {
    let Some(path) = &opts.dataset else {
        if opts.examples.is_some_and(|n| n > 0) {
            return Err(CliError::new("config", "--examples needs --dataset"));
        }
        return Ok(Vec::new());
    };
    let data = load_records(path).map_err(|e| CliError::new("dataset", e.to_string()))?;
    let train = data.records.iter().filter(|r| r.split == crate::dataset::Split::Train).count();
    let n = opts.examples.unwrap_or(DEFAULT_EXAMPLE_COUNT.min(train));
    let topic = (!topic.is_empty()).then_some(topic);
    select_examples(&data.records, n, topic).map_err(|e| CliError::new("dataset", e.to_string()))
}

fn loop_config(opts: &RefineOpts, has_client: bool) -> LoopConfig {
    let mut config = if has_client { LoopConfig::default() } else { LoopConfig::offline() };
    config.max_iterations = opts.max_iterations;
    if let Some(a) = opts.auditor {
        config.auditor_mode = match a {
            AuditorArg::Llm => AuditorMode::Llm,
            AuditorArg::Rules => AuditorMode::Rules,
            AuditorArg::Both => AuditorMode::Both,
        };
    }
    if let Some(r) = opts.refiner {
        config.refiner_mode = match r {
            RefinerArg::Llm => RefinerMode::Llm,
            RefinerArg::Rules => RefinerMode::Rules,
        };
    }
    config
}

fn run_loop(planner: &Planner<'_>, plan: DiagramPlan, topic: &str, opts: &RefineOpts) -> Result<DiagramPlan, CliError> {
    let config = loop_config(opts, planner.client.is_some());
    let (plan, trace) = planner.refine_loop(plan, topic, &config);
    if let Some(path) = &opts.trace_out {
        emit_json(Some(path), &trace)?;
    }
    match &trace.termination {
        Some(Termination::Error { message }) if trace.entries.is_empty() => {
            Err(CliError::new("refine", message.clone()))
        }
        Some(Termination::Error { message }) => {
            log::warn!("refinement stopped early: {message}; keeping the last good plan");
            Ok(plan)
        }
        Some(Termination::MaxIterations) => {
            log::info!("stopped after {} revisions without approval", trace.revisions());
            Ok(plan)
        }
        _ => Ok(plan),
    }
}

fn execute(command: Command) -> CliResult {
    match command {
        Command::Parse { input, out, caption } => emit_plan(&read_plan(&input, &caption)?, &out),
        Command::Validate { input } => {
            let (plan, warnings) = plan_from_str(&read_text(&input)?, "")?;
            for w in &warnings {
                eprintln!("warning: line {}: {}", w.line, w.message);
            }
            println!("ok: {} entities, {} relationships", plan.entities.len(), plan.relationships.len());
            Ok(())
        }
        Command::Audit { input, audit } => {
            let plan = read_plan(&input, "")?;
            let mut config = LoopConfig::default().audit;
            if let Some(t) = audit.overlap_iou {
                config.overlap_iou = t;
            }
            config.required_terms = audit.required;
            let report = audit_plan(&plan, &config).map_err(|e| PlanIoError::Invalid(e.0))?;
            emit_json(None, &report)
        }
        Command::Plan { caption, topic, llm, refine, refine_opts, out } => {
            let client = require_client(&llm)?;
            let examples = examples(&llm, &topic)?;
            let planner = Planner::new(client.as_ref(), &examples);
            let plan = planner.generate(&caption, &topic).map_err(|e| CliError::new("generation", e.to_string()))?;
            let plan = if refine { run_loop(&planner, plan, &topic, &refine_opts)? } else { plan };
            emit_plan(&plan, &out)
        }
        Command::Refine { input, topic, llm, refine_opts, out } => {
            let plan = read_plan(&input, "")?;
            let client = client(&llm)?;
            let examples = examples(&llm, &topic)?;
            let planner = match &client {
                Some(c) => Planner::new(c.as_ref(), &examples),
                None => Planner::offline(),
            };
            let plan = run_loop(&planner, plan, &topic, &refine_opts)?;
            emit_plan(&plan, &out)
        }
        Command::Render { input, out, size, icons } => {
            let plan = read_plan(&input, "")?;
            let options = RenderOptions { canvas_side: size, style: style(&icons), ..Default::default() };
            let doc = render_svg(&plan, &options, icon_provider(&icons).as_ref())
                .map_err(|e| CliError::new("render", e.to_string()))?;
            for w in &doc.warnings {
                log::warn!("{}", serde_json::to_string(w).unwrap_or_default());
            }
            emit(out.as_deref(), &doc.text)
        }
        Command::Export { input, dialect, out, size, icons } => {
            let plan = read_plan(&input, "")?;
            let dialect = match dialect {
                DialectArg::Office => Dialect::OfficeAutomation,
                DialectArg::Inkscape => Dialect::InkscapeScripting,
            };
            let options = ExportOptions { canvas_side: size, style: style(&icons), ..Default::default() };
            let script = export_script(&plan, dialect, &options, icon_provider(&icons).as_ref())
                .map_err(|e| CliError::new("export", e.to_string()))?;
            emit(out.as_deref(), &script.text)
        }
        Command::Eval { candidate, gt } => {
            let candidate = read_plan(&candidate, "")?;
            let gt = read_plan(&gt, "")?;
            let config = EvalConfig::default();
            let report = evaluate(&candidate, &questions_from_gt(&gt, &config), &config);
            print!("{}", report.table());
            Ok(())
        }
        Command::Ingest { dataset, out_dir, examples_out, examples, topic } => {
            let data = load_records(&dataset).map_err(|e| CliError::new("dataset", e.to_string()))?;
            if let Some(dir) = &out_dir {
                std::fs::create_dir_all(dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?;
                for r in &data.records {
                    let text = plan_to_string(&record_to_plan(r), PlanFormat::Dsl)?;
                    write_atomic(&dir.join(format!("{}.plan", file_stem(&r.id))), text.as_bytes())?;
                }
            }
            if let Some(path) = &examples_out {
                let chosen = select_examples(&data.records, examples, topic.as_deref())
                    .map_err(|e| CliError::new("dataset", e.to_string()))?;
                emit_json(Some(path), &chosen)?;
            }
            let summary = json!({
                "records": data.records.len(),
                "train": data.records.iter().filter(|r| r.split == crate::dataset::Split::Train).count(),
                "skipped": data.skipped,
            });
            emit_json(None, &summary)
        }
        Command::Serve { bind, snapshots, ui, llm, refine_opts, icons } => {
            let client = client(&llm)?;
            let backend = Backend {
                loop_config: loop_config(&refine_opts, client.is_some()),
                examples: examples(&llm, "")?,
                client,
                icons: icon_provider(&IconOpts { icons: true, ..icons }),
                render: RenderOptions::default(),
                export: ExportOptions::default(),
            };
            let store = match &snapshots {
                Some(dir) => SessionStore::with_snapshots(dir)
                    .map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?,
                None => SessionStore::in_memory(),
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new("io", e.to_string()))?;
            runtime
                .block_on(service::serve(bind, AppState::new(store, backend), ui.as_deref()))
                .map_err(|e| CliError::new("io", format!("{bind}: {e}")))
        }
    }
}

/// Record ids as file names, with anything outside `[A-Za-z0-9._-]`
/// replaced.
fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}
