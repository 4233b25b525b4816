//! `convlens`: structure an export, print statistics, view the outline,
//! and write reports.
//!
//! Exit status is 0 on success, 2 when the result is partial (it carries
//! warnings), and 1 on any failure, including usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use convlens_core::artifacts::{register_artifacts, DatasetManifest, EchoRunner, ExecutionLimits, ProcessRunner, Runner};
use convlens_core::composition::{
    build_summary_prompt, generate_summary, serialize_composition, Composition, CompositionError, SummaryParams,
};
use convlens_core::ingest::{ingest_export, IngestError};
use convlens_core::ingest::stats::{compute_stats, state_stats};
use convlens_core::llm::{HttpBackend, LlmBackend, LlmConfig, ReplayBackend, Transcript};
use convlens_core::model::{Conversation, ElementRef};
use convlens_core::pipeline::build_state;
use convlens_core::state::{ResolveError, StructuredState};
use convlens_core::view::{structure_view, FilterSpec};

#[derive(Parser)]
#[command(name = "convlens", version, about = "Structure LLM data-analysis conversations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Structure an export and write state.json plus artifact files.
    Structure(StructureArgs),
    /// Print counts and decile histograms.
    Stats(StatsArgs),
    /// Print the outline view as JSON.
    View(ViewArgs),
    /// Serialize a selection of elements and, unless --no-llm, summarize it.
    Report(ReportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Live,
    Replay,
    Fallback,
}

#[derive(Args)]
struct BackendArgs {
    /// Defaults to replay when a transcript is given, else fallback.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Recorded transcript for replay; repeat to merge several.
    #[arg(long)]
    transcript: Vec<PathBuf>,
    /// Skip every model call.
    #[arg(long)]
    no_llm: bool,
}

#[derive(Args)]
struct StructureArgs {
    #[arg(long)]
    export: PathBuf,
    /// JSON object mapping dataset file names to local paths.
    #[arg(long)]
    datasets: Option<PathBuf>,
    /// `none`, `echo`, or a runner command line.
    #[arg(long, default_value = "none")]
    runner: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct StatsArgs {
    /// A state.json, or the directory holding one.
    #[arg(long, conflicts_with = "export", required_unless_present = "export")]
    state: Option<PathBuf>,
    /// Count directly from an export: static artifacts only, no execution.
    #[arg(long)]
    export: Option<PathBuf>,
    /// Also write the statistics as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ViewArgs {
    #[arg(long)]
    state: PathBuf,
    /// e.g. `speech_acts:fact_finding;artifact_kinds:code`
    #[arg(long, default_value = "")]
    filters: String,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    state: PathBuf,
    /// Element as `kind:target`, e.g. `turn:5` or `artifact:viz-0`, in report order.
    #[arg(long = "ref", required = true)]
    refs: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    length: u8,
    #[arg(long, default_value_t = 2)]
    technical: u8,
    #[arg(long, default_value_t = 2)]
    formality: u8,
    #[command(flatten)]
    backend: BackendArgs,
}

enum Outcome {
    Done,
    Partial,
}

type Result<T> = std::result::Result<T, String>;

fn make_backend(args: &BackendArgs) -> Result<Option<Box<dyn LlmBackend>>> {
    if args.no_llm {
        return Ok(None);
    }
    let kind = args.backend.unwrap_or(if args.transcript.is_empty() {
        BackendKind::Fallback
    } else {
        BackendKind::Replay
    });
    match kind {
        BackendKind::Fallback => Ok(None),
        BackendKind::Replay => {
            if args.transcript.is_empty() {
                return Err("replay mode requires --transcript".into());
            }
            let mut merged = Transcript::new();
            for path in &args.transcript {
                let t = Transcript::load(path).map_err(|e| format!("cannot read transcript {}: {e}", path.display()))?;
                merged.entries.extend(t.entries);
            }
            Ok(Some(Box::new(ReplayBackend::new(merged))))
        }
        BackendKind::Live => {
            let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
            let mut config = LlmConfig::default();
            if let Some(e) = var("CONVLENS_LLM_ENDPOINT") {
                config.endpoint = e;
            }
            if let Some(m) = var("CONVLENS_LLM_MODEL") {
                config.model = m;
            }
            config.api_key = var("CONVLENS_LLM_API_KEY").or_else(|| var("OPENAI_API_KEY"));
            Ok(Some(Box::new(HttpBackend::new(config))))
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
    }
    std::fs::write(path, bytes).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn pretty<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

fn load_state(path: &Path) -> Result<StructuredState> {
    let path = if path.is_dir() { path.join("state.json") } else { path.to_path_buf() };
    serde_json::from_slice(&read(&path)?).map_err(|e| format!("{} is not a structured state: {e}", path.display()))
}

fn structure(args: StructureArgs) -> Result<Outcome> {
    let conv = ingest_export(&read(&args.export)?).map_err(|e| e.to_string())?;
    let manifest = match &args.datasets {
        Some(p) => DatasetManifest::load(p).map_err(|e| format!("cannot read dataset manifest {}: {e}", p.display()))?,
        None => DatasetManifest::new(),
    };
    let backend = make_backend(&args.backend)?;
    let sandbox = args.out.join("sandbox");
    let mut runner: Option<Box<dyn Runner>> = match args.runner.as_str() {
        "none" => None,
        "echo" => Some(Box::new(EchoRunner::new(&sandbox))),
        cmd => Some(Box::new(ProcessRunner::spawn_command(cmd, &sandbox).map_err(|e| e.to_string())?)),
    };
    let build = build_state(
        conv,
        &manifest,
        backend.as_deref(),
        runner.as_mut().map(|r| r.as_mut() as &mut dyn Runner),
        ExecutionLimits::default(),
    )
    .map_err(|e| format!("MissingDataset: {e}"))?;
    drop(runner);
    for (path, bytes) in &build.files {
        let rel = path.trim_start_matches('/');
        if rel.split(['/', '\\']).any(|c| c == "..") {
            return Err(format!("artifact path {path:?} leaves the output directory"));
        }
        write(&args.out.join(rel), bytes)?;
    }
    write(&args.out.join("state.json"), &pretty(&build.state))?;
    let s = &build.state;
    println!(
        "{} turns, {} threads, {} speech acts, {} insights, {} artifacts",
        s.conversation.turns.len(),
        s.thread_forest.nodes.len(),
        s.speech_acts.len(),
        s.insights.len(),
        s.artifact_registry.len()
    );
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if build.is_partial() { Outcome::Partial } else { Outcome::Done })
}

fn stats(args: StatsArgs) -> Result<Outcome> {
    let stats = match (&args.state, &args.export) {
        (Some(state), _) => state_stats(&load_state(state)?),
        (None, Some(export)) => {
            let conv = match ingest_export(&read(export)?) {
                Ok(conv) => conv,
                Err(IngestError::EmptyConversation) => Conversation {
                    conversation_id: String::new(),
                    title: String::new(),
                    turns: Vec::new(),
                    source_export_digest: String::new(),
                    preamble: Vec::new(),
                    validation_flags: Vec::new(),
                },
                Err(e) => return Err(e.to_string()),
            };
            compute_stats(&conv, &register_artifacts(&conv, &[]).registry)
        }
        (None, None) => unreachable!("clap requires one of --state and --export"),
    };
    print!("{}", stats.render_text());
    if let Some(out) = &args.out {
        write(out, &pretty(&stats))?;
    }
    Ok(Outcome::Done)
}

fn view(args: ViewArgs) -> Result<Outcome> {
    let state = load_state(&args.state)?;
    let filter: FilterSpec = args.filters.parse().map_err(|e: convlens_core::view::FilterParseError| e.to_string())?;
    print!("{}", String::from_utf8(pretty(&structure_view(&state, &filter))).expect("utf-8"));
    Ok(Outcome::Done)
}

fn error_name(e: &CompositionError) -> &'static str {
    match e {
        CompositionError::Resolve(ResolveError::UnknownRef(_)) => "UnknownRef",
        CompositionError::Resolve(ResolveError::KindMismatch(_)) => "KindMismatch",
        CompositionError::InvalidPosition(_) => "InvalidPosition",
        CompositionError::CycleMove(_) => "CycleMove",
        CompositionError::UnknownBlock(_) => "UnknownBlock",
    }
}

fn report(args: ReportArgs) -> Result<Outcome> {
    let state = load_state(&args.state)?;
    let mut c = Composition::new("report");
    for raw in &args.refs {
        let r: ElementRef = raw.parse()?;
        c.add_block(&state, &r, None).map_err(|e| format!("{}: {raw}: {e}", error_name(&e)))?;
    }
    let markdown = serialize_composition(&c, &state).map_err(|e| e.to_string())?;
    let mut doc = markdown.clone();
    let mut outcome = Outcome::Done;
    if !args.backend.no_llm {
        let params = SummaryParams::new(args.length, args.technical, args.formality).map_err(|e| e.to_string())?;
        let backend = make_backend(&args.backend)?
            .ok_or("a summary needs the live or replay backend; pass --no-llm to skip it")?;
        let request = build_summary_prompt(&markdown, params).map_err(|e| e.to_string())?;
        let summary = generate_summary(&request, &markdown, backend.as_ref()).map_err(|e| e.to_string())?;
        for w in &summary.warnings {
            eprintln!("warning: {w}");
            outcome = Outcome::Partial;
        }
        doc.push_str("\n\n");
        doc.push_str(&summary.text);
    }
    match &args.out {
        Some(path) => write(path, doc.as_bytes())?,
        None => print!("{doc}"),
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Structure(a) => structure(a),
        Command::Stats(a) => stats(a),
        Command::View(a) => view(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("convlens: {e}");
            ExitCode::from(1)
        }
    }
}
