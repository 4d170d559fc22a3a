//! Command-line front end. `main.rs` only forwards to [`run_cli`].

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::backend::{
    parse_fixture, ChatBackend, LiveBackend, RecordingBackend, ReplayBackend, ReplayMode,
};
use crate::config::{BackendMode, EngineConfig, FileConfig};
use crate::engine::SprintEngine;
use crate::graph::CodeGraphGenerator;
use crate::tokens::CharEstimate;
use crate::workspace::{ChangedFileSet, RelPath, SourceFilter, WorkspaceSnapshot};

/// Exit status for bad invocations and unusable configuration.
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "agilecoder", version, about = "Sprint-driven multi-agent code generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full workflow on a requirement.
    Run(RunArgs),
    /// Print the dependency graph of a workspace.
    Graph {
        workspace: PathBuf,
    },
    /// Print test targets and testing order for a set of changed files.
    Plan {
        workspace: PathBuf,
        /// Changed file, relative to the workspace. Repeatable.
        #[arg(long = "changed", required = true)]
        changed: Vec<String>,
    },
    /// Check that a `.chatlog` fixture is well formed.
    ReplayVerify {
        fixture: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "requirement_file")]
    pub requirement: Option<String>,
    #[arg(long)]
    pub requirement_file: Option<PathBuf>,
    /// Directory the generated project is written to.
    #[arg(long)]
    pub workspace: Option<PathBuf>,
    /// live, replay or record.
    #[arg(long)]
    pub backend: Option<BackendMode>,
    /// Fixture read in replay mode, written in record mode.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Fail on prompt drift instead of replaying by position.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub sprint_cap: Option<u32>,
    #[arg(long)]
    pub token_budget: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Graph { workspace } => graph(&workspace),
        Command::Plan { workspace, changed } => plan(&workspace, &changed),
        Command::ReplayVerify { fixture } => replay_verify(&fixture),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("agilecoder: {msg}");
            EXIT_USAGE
        }
    }
}

fn run(a: RunArgs) -> Result<i32, String> {
    let file = match &a.config {
        Some(p) => FileConfig::load(p).map_err(|e| e.to_string())?,
        None => FileConfig::default(),
    };
    // Relative paths in a config file are taken from the file's directory.
    let base = a
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let from_file = |p: &Option<PathBuf>| p.as_ref().map(|p| base.join(p));

    let mut config = EngineConfig::default();
    file.apply_to(&mut config).map_err(|e| e.to_string())?;
    if let Some(p) = &config.prompt_dir {
        config.prompt_dir = Some(base.join(p));
    }
    if let Some(m) = a.model {
        config.model = m;
    }
    if let Some(c) = a.sprint_cap {
        config.sprint_cap = c;
    }
    if let Some(b) = a.token_budget {
        config.token_budget = b;
    }
    if let Some(t) = a.timeout_secs {
        config.timeout = Duration::from_secs(t);
    }
    config.validate().map_err(|e| e.to_string())?;

    let requirement = match (&a.requirement, &a.requirement_file) {
        (Some(r), _) => r.clone(),
        (None, Some(p)) => read(p)?,
        (None, None) => match (&file.requirement, from_file(&file.requirement_file)) {
            (Some(r), _) => r.clone(),
            (None, Some(p)) => read(&p)?,
            (None, None) => return Err("no requirement given (use --requirement or --requirement-file)".into()),
        },
    };
    if requirement.trim().is_empty() {
        return Err("requirement is empty".into());
    }
    let workspace = a
        .workspace
        .or_else(|| from_file(&file.workspace))
        .ok_or("no workspace given (use --workspace)")?;
    let mode = a.backend.or(file.backend.mode).unwrap_or_default();
    let fixture = a.fixture.or_else(|| from_file(&file.backend.fixture));
    let strict = a.strict || file.backend.strict.unwrap_or(false);

    let backend: Box<dyn ChatBackend> = match mode {
        BackendMode::Live => Box::new(LiveBackend::from_env().map_err(|e| e.to_string())?),
        BackendMode::Replay => {
            let path = fixture.ok_or("replay mode needs --fixture")?;
            let mode = if strict { ReplayMode::Strict } else { ReplayMode::Lenient };
            Box::new(ReplayBackend::from_path(&path, mode).map_err(|e| format!("{}: {e}", path.display()))?)
        }
        BackendMode::Record => {
            let path = fixture.ok_or("record mode needs --fixture")?;
            let live = LiveBackend::from_env().map_err(|e| e.to_string())?;
            Box::new(RecordingBackend::create(live, &path).map_err(|e| e.to_string())?)
        }
    };

    let counter = CharEstimate;
    let engine = SprintEngine::new(config, backend.as_ref(), &counter, &workspace).map_err(|e| e.to_string())?;
    let report = engine.run(&requirement).map_err(|e| e.to_string())?;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "final decision: {}", report.final_decision);
    let _ = write!(out, "{}", report.metrics.render(true));
    Ok(report.final_decision.exit_code())
}

fn read(p: &Path) -> Result<String, String> {
    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn load_graph(
    workspace: &Path,
) -> Result<(WorkspaceSnapshot, crate::graph::CodeDependencyGraph), String> {
    let snap = WorkspaceSnapshot::capture(workspace, 0, &SourceFilter::default()).map_err(|e| e.to_string())?;
    let graph = CodeGraphGenerator::default().build(&snap).map_err(|e| e.to_string())?;
    Ok((snap, graph))
}

fn graph(workspace: &Path) -> Result<i32, String> {
    let (_, g) = load_graph(workspace)?;
    print!("{}", g.export_text());
    Ok(0)
}

fn plan(workspace: &Path, changed: &[String]) -> Result<i32, String> {
    let (snap, g) = load_graph(workspace)?;
    let mut set = ChangedFileSet::default();
    for c in changed {
        let p = RelPath::new(c).map_err(|e| e.to_string())?;
        if snap.contains(&p) {
            set.modified.insert(p);
        } else {
            set.removed.insert(p);
        }
    }
    let targets = g.test_targets(&set);
    let plan = g.testing_order(&targets);
    for t in &plan.ordered_targets {
        println!("{t} {}", plan.per_target_scripts[t]);
    }
    Ok(0)
}

fn replay_verify(fixture: &Path) -> Result<i32, String> {
    let text = read(fixture)?;
    match parse_fixture(&text) {
        Ok(records) => {
            let with_digest = records.iter().filter(|r| r.digest.is_some()).count();
            println!("{} records, {with_digest} with digests", records.len());
            Ok(0)
        }
        Err(e) => {
            eprintln!("agilecoder: {}: {e}", fixture.display());
            Ok(1)
        }
    }
}
