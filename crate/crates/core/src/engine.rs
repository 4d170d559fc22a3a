//! The sprint workflow: product planning, then sprints of planning,
//! development, testing and review until delivery or the sprint cap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rust_decimal::Decimal;
use thiserror::Error;

use crate::backend::{ChatBackend, UsageLedger, UsageTotals};
use crate::chat::{ChatError, ChatRuntime, ChatSettings, SessionOutcome, SessionSpec, TerminatedBy, Terminator};
use crate::config::{ConfigError, EngineConfig};
use crate::exec::{check_launch, run_command, ExecError, ExecOptions, ExecResult};
use crate::graph::{CodeDependencyGraph, CodeGraphGenerator, GraphError};
use crate::pool::{MessagePool, PoolError, PoolKey, ScopeTable};
use crate::review::{precheck, render_findings, three_step_review, ReviewError, ReviewInputs};
use crate::roles::parsers::{
    format_backlog, parse_backlog, parse_classification, parse_commands, parse_file_blocks,
    parse_sprint_selection, unknown_ids, CONSENSUS,
};
use crate::roles::{
    BacklogTask, Classification, Phase, RoleError, RoleRegistry, Severity, TaskState, TestFailure,
    TestReport,
};
use crate::tokens::{clip_to_budget, TokenCounter};
use crate::workspace::{diff, ChangedFileSet, FilePayload, RelPath, SourceFilter, WorkspaceError, WorkspaceSnapshot};

pub const RUN_REPORT_FILE: &str = "run-report.txt";
const LOG_DIR: &str = ".logs";
const POOL_DIR: &str = ".pool";
/// Lines of failure output kept when nothing more structured is available.
const FAILURE_TAIL_LINES: usize = 40;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("requirement is empty")]
    EmptyRequirement,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error(transparent)]
    Role(#[from] RoleError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("product planning ended without an approved backlog")]
    PlanningFailed,
    #[error("sprint {0} planning ended without a valid selection")]
    SelectionFailed(u32),
    #[error("phase order violated: {from:?} -> {to:?}")]
    PhaseOrder { from: SprintPhase, to: SprintPhase },
    #[error("maintained graph diverged from a fresh build of the workspace")]
    StaleGraph,
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<ReviewError> for EngineError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::Chat(e) => EngineError::Chat(e),
            ReviewError::Role(e) => EngineError::Role(e),
            ReviewError::Pool(e) => EngineError::Pool(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SprintPhase {
    Planning,
    Development,
    Testing,
    Review,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Deliver,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SprintState {
    pub sprint_tag: u32,
    pub phase: SprintPhase,
    pub sprint_backlog: Vec<String>,
    pub decision: Option<Decision>,
}

impl SprintState {
    fn advance(&mut self, to: SprintPhase) -> Result<(), EngineError> {
        let ok = matches!(
            (self.phase, to),
            (SprintPhase::Planning, SprintPhase::Development)
                | (SprintPhase::Development, SprintPhase::Testing)
                | (SprintPhase::Testing, SprintPhase::Review)
        ) || (self.phase == SprintPhase::Planning
            && to == SprintPhase::Review
            && self.sprint_backlog.is_empty());
        if !ok {
            return Err(EngineError::PhaseOrder { from: self.phase, to });
        }
        self.phase = to;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FinalDecision {
    Deliver,
    SprintCapReached,
    Aborted(String),
}

impl FinalDecision {
    pub fn exit_code(&self) -> i32 {
        match self {
            FinalDecision::Deliver => 0,
            FinalDecision::Aborted(_) => 1,
            FinalDecision::SprintCapReached => 2,
        }
    }
}

impl fmt::Display for FinalDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FinalDecision::Deliver => f.write_str("deliver"),
            FinalDecision::SprintCapReached => f.write_str("sprint_cap_reached"),
            FinalDecision::Aborted(reason) => write!(f, "aborted ({reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SprintSummary {
    pub sprint_tag: u32,
    pub selected: Vec<String>,
    pub files_changed: usize,
    pub checks_passed: usize,
    pub checks_failed: usize,
    pub bug_fix_sessions: usize,
    pub decision: Decision,
    pub start_tree: String,
    pub end_tree: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metrics {
    pub sprints: u32,
    pub usage: UsageTotals,
    /// `None` when some model used has no price configured.
    pub cost: Option<Decimal>,
    /// Failing checks in the last testing phase.
    pub errors: usize,
    /// Prompts sent over the token budget.
    pub exceeding_context: usize,
    pub wall_time: Duration,
}

impl Metrics {
    /// The metrics block. `with_wall_time = false` keeps it reproducible.
    pub fn render(&self, with_wall_time: bool) -> String {
        let cost = self
            .cost
            .map_or_else(|| "unpriced".to_string(), |c| c.normalize().to_string());
        let wall = if with_wall_time {
            format!("{:.2}s", self.wall_time.as_secs_f64())
        } else {
            format!("see {LOG_DIR}/timing.txt")
        };
        format!(
            "#Sprints: {}\nToken usage: {} (prompt {}, completion {}, calls {})\nExpenses (USD): {cost}\nWall time: {wall}\n#Errors: {}\n#ExceedingCL: {}\n",
            self.sprints,
            self.usage.total_tokens(),
            self.usage.prompt_tokens,
            self.usage.completion_tokens,
            self.usage.calls,
            self.errors,
            self.exceeding_context,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub sprints_run: u32,
    pub final_decision: FinalDecision,
    pub task_outcomes: BTreeMap<String, TaskState>,
    pub sprints: Vec<SprintSummary>,
    pub metrics: Metrics,
}

impl RunReport {
    /// Text for `run-report.txt`: fixed field order, no wall-clock values.
    pub fn render(&self) -> String {
        let mut out = format!(
            "sprints_run: {}\nfinal_decision: {}\n\n[tasks]\n",
            self.sprints_run, self.final_decision
        );
        for (id, state) in &self.task_outcomes {
            let _ = writeln!(out, "{id}: {state}");
        }
        for s in &self.sprints {
            let _ = write!(
                out,
                "\n[sprint {}]\nselected: {}\nfiles_changed: {}\nchecks_passed: {}\nchecks_failed: {}\nbug_fix_sessions: {}\ndecision: {}\nstart_tree: {}\nend_tree: {}\n",
                s.sprint_tag,
                if s.selected.is_empty() { "-".to_string() } else { s.selected.join(", ") },
                s.files_changed,
                s.checks_passed,
                s.checks_failed,
                s.bug_fix_sessions,
                match s.decision {
                    Decision::Continue => "continue",
                    Decision::Deliver => "deliver",
                },
                s.start_tree,
                s.end_tree,
            );
        }
        out.push_str("\n[metrics]\n");
        out.push_str(&self.metrics.render(false));
        out
    }
}

/// Result of the development phase.
#[derive(Debug, Clone, Default)]
pub struct DevelopmentOutcome {
    pub changed: ChangedFileSet,
    /// Blockers still open after the last correction round.
    pub open_blockers: Vec<crate::roles::ReviewFinding>,
    pub produced_code: bool,
}

enum Check {
    Script { target: RelPath, script: RelPath },
    Command(String),
}

impl Check {
    fn label(&self) -> String {
        match self {
            Check::Script { script, .. } => script.to_string(),
            Check::Command(c) => format!("command: {c}"),
        }
    }
}

pub struct SprintEngine<'a> {
    config: EngineConfig,
    registry: RoleRegistry,
    generator: CodeGraphGenerator,
    rt: ChatRuntime<'a>,
    pool: MessagePool,
    root: PathBuf,
    snapshot: WorkspaceSnapshot,
    graph: CodeDependencyGraph,
    backlog: Vec<BacklogTask>,
    exec_opts: ExecOptions,
    exec_runs: usize,
    bug_fix_sessions: usize,
    last_failures: usize,
    sprint_reports: Vec<String>,
}

impl<'a> SprintEngine<'a> {
    /// Prepares an engine on `root`, picking up any source already there.
    pub fn new(
        config: EngineConfig,
        backend: &'a dyn ChatBackend,
        counter: &'a dyn TokenCounter,
        root: &Path,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let registry = match &config.prompt_dir {
            Some(dir) => RoleRegistry::with_overrides(dir)?,
            None => RoleRegistry::builtin(),
        };
        registry.validate(&Phase::ALL)?;
        let mut scope = ScopeTable::default();
        scope.apply_overrides(&config.scope_overrides)?;

        std::fs::create_dir_all(root).map_err(|source| EngineError::Io {
            path: root.display().to_string(),
            source,
        })?;
        let generator = CodeGraphGenerator::default();
        let snapshot = WorkspaceSnapshot::capture(root, 0, &SourceFilter::default())?;
        let graph = generator.build(&snapshot)?;

        let settings = ChatSettings {
            model: config.model.clone(),
            prompt_budget: config.token_budget,
            retry: config.retry,
            ..ChatSettings::default()
        };
        let rt = ChatRuntime::new(backend, counter, settings, UsageLedger::new(config.prices.clone()))
            .with_transcripts(&root.join(LOG_DIR));

        let mut exec_opts = ExecOptions::default()
            .with_timeout(config.timeout)
            .with_env("PYTHONPATH", ".")
            .with_env("PYTHONDONTWRITEBYTECODE", "1");
        if let Some(display) = &config.headless_display {
            exec_opts = exec_opts.with_env("DISPLAY", display);
        }

        Ok(SprintEngine {
            pool: MessagePool::new(scope).persist_to(&root.join(POOL_DIR)),
            config,
            registry,
            generator,
            rt,
            root: root.to_path_buf(),
            snapshot,
            graph,
            backlog: Vec::new(),
            exec_opts,
            exec_runs: 0,
            bug_fix_sessions: 0,
            last_failures: 0,
            sprint_reports: Vec::new(),
        })
    }

    pub fn pool(&self) -> &MessagePool {
        &self.pool
    }

    pub fn graph(&self) -> &CodeDependencyGraph {
        &self.graph
    }

    pub fn snapshot(&self) -> &WorkspaceSnapshot {
        &self.snapshot
    }

    pub fn ledger(&self) -> &UsageLedger {
        self.rt.ledger()
    }

    pub fn exceeding_count(&self) -> usize {
        self.rt.exceeding_count()
    }

    pub fn backlog(&self) -> &[BacklogTask] {
        &self.backlog
    }

    /// Runs the whole workflow and writes `run-report.txt`.
    pub fn run(mut self, requirement: &str) -> Result<RunReport, EngineError> {
        let started = Instant::now();
        let mut sprints = Vec::new();
        let final_decision = match self.drive(requirement, &mut sprints) {
            Ok(d) => d,
            Err(EngineError::EmptyRequirement) => return Err(EngineError::EmptyRequirement),
            Err(e) => {
                log::error!("run aborted: {e}");
                FinalDecision::Aborted(e.to_string())
            }
        };
        let wall_time = started.elapsed();
        let ledger = self.rt.ledger();
        let report = RunReport {
            sprints_run: sprints.len() as u32,
            final_decision,
            task_outcomes: self
                .pool
                .statuses()
                .into_iter()
                .map(|(id, s)| (id.to_string(), s))
                .collect(),
            metrics: Metrics {
                sprints: sprints.len() as u32,
                usage: ledger.totals(),
                cost: ledger.cost().ok(),
                errors: self.last_failures,
                exceeding_context: self.rt.exceeding_count(),
                wall_time,
            },
            sprints,
        };
        self.write_file(Path::new(RUN_REPORT_FILE), &report.render())?;
        self.write_file(
            &Path::new(LOG_DIR).join("timing.txt"),
            &format!("wall_time: {:.3}s\n", wall_time.as_secs_f64()),
        )?;
        Ok(report)
    }

    fn drive(&mut self, requirement: &str, sprints: &mut Vec<SprintSummary>) -> Result<FinalDecision, EngineError> {
        self.plan_product(requirement)?;
        for tag in 1..=self.config.sprint_cap {
            log::info!("sprint {tag}: planning");
            let start = self.snapshot.clone();
            let mut state = self.plan_sprint(tag)?;
            let fixes_before = self.bug_fix_sessions;
            let mut reports = Vec::new();
            if !state.sprint_backlog.is_empty() {
                state.advance(SprintPhase::Development)?;
                log::info!("sprint {tag}: development");
                let dev = self.run_development(&state)?;
                state.advance(SprintPhase::Testing)?;
                log::info!("sprint {tag}: testing");
                let changed = diff(&start, &self.snapshot);
                reports = self.run_testing(&state, &changed, &dev)?;
            }
            state.advance(SprintPhase::Review)?;
            log::info!("sprint {tag}: review");
            let decision = self.run_review(&mut state, &reports)?;
            self.snapshot.with_sprint_tag(tag).archive()?;
            sprints.push(SprintSummary {
                sprint_tag: tag,
                selected: state.sprint_backlog.clone(),
                files_changed: diff(&start, &self.snapshot).len(),
                checks_passed: reports.iter().map(|r| r.passed).sum(),
                checks_failed: reports.iter().map(|r| r.failed).sum(),
                bug_fix_sessions: self.bug_fix_sessions - fixes_before,
                decision,
                start_tree: start.tree_digest(),
                end_tree: self.snapshot.tree_digest(),
            });
            if decision == Decision::Deliver {
                return Ok(FinalDecision::Deliver);
            }
        }
        Ok(FinalDecision::SprintCapReached)
    }

    fn seed(
        &self,
        phase: Phase,
        extras: &BTreeMap<&str, String>,
        code: Option<&str>,
    ) -> Result<String, EngineError> {
        let role = phase.owner();
        let slice = self.pool.view_with_code(
            role,
            phase,
            self.config.context_budget(),
            self.rt.counter(),
            code,
        )?;
        Ok(self.registry.render_prompt(role, phase, &slice.rendered, extras)?)
    }

    fn session(
        &mut self,
        phase: Phase,
        extras: &BTreeMap<&str, String>,
        code: Option<&str>,
        terminator: Terminator,
    ) -> Result<SessionOutcome, EngineError> {
        let seed = self.seed(phase, extras, code)?;
        let spec = SessionSpec::for_phase(&self.registry, phase, seed, terminator, self.config.max_turns);
        Ok(self.rt.run_session(&spec)?)
    }

    /// PM drafts the backlog, SM reviews it until approval.
    pub fn plan_product(&mut self, requirement: &str) -> Result<Vec<BacklogTask>, EngineError> {
        let requirement = requirement.trim();
        if requirement.is_empty() {
            return Err(EngineError::EmptyRequirement);
        }
        let extras = BTreeMap::from([("requirement", requirement.to_string())]);
        let outcome = self.session(Phase::ProductPlanning, &extras, None, Terminator::ApprovedBacklog)?;
        let tasks = parse_backlog(&outcome.final_message).map_err(|e| {
            log::warn!("no usable backlog: {e}");
            EngineError::PlanningFailed
        })?;
        self.pool.publish(PoolKey::ProductBacklog, 0, &format_backlog(&tasks))?;
        self.pool.register_tasks(tasks.iter().map(|t| t.task_id.as_str()));
        self.backlog = tasks.clone();
        Ok(tasks)
    }

    fn pending_tasks(&self) -> Vec<BacklogTask> {
        self.backlog
            .iter()
            .filter(|t| self.pool.status(&t.task_id).unwrap_or_default() != TaskState::Completed)
            .cloned()
            .collect()
    }

    fn tasks_by_id(&self, ids: &[String]) -> Vec<BacklogTask> {
        ids.iter()
            .filter_map(|id| self.backlog.iter().find(|t| &t.task_id == id).cloned())
            .collect()
    }

    /// Selects the sprint backlog from tasks not yet completed. With nothing
    /// pending no session is held and the selection is empty.
    pub fn plan_sprint(&mut self, sprint_tag: u32) -> Result<SprintState, EngineError> {
        let pending = self.pending_tasks();
        let mut state = SprintState {
            sprint_tag,
            phase: SprintPhase::Planning,
            sprint_backlog: Vec::new(),
            decision: None,
        };
        if pending.is_empty() {
            return Ok(state);
        }
        let known: BTreeSet<String> = pending.iter().map(|t| t.task_id.clone()).collect();
        let extras = BTreeMap::from([
            ("sprint", sprint_tag.to_string()),
            ("pending_tasks", format_backlog(&pending)),
        ]);
        let outcome = self.session(
            Phase::SprintPlanning,
            &extras,
            None,
            Terminator::SprintSelection { known: known.clone() },
        )?;
        let selection = parse_sprint_selection(&outcome.final_message)
            .ok()
            .filter(|ids| unknown_ids(ids, &known).is_empty())
            .ok_or(EngineError::SelectionFailed(sprint_tag))?;
        // Backlog order, not selection order.
        state.sprint_backlog = pending
            .iter()
            .map(|t| t.task_id.clone())
            .filter(|id| selection.contains(id))
            .collect();
        let body = if state.sprint_backlog.is_empty() {
            "(no tasks selected)\n".to_string()
        } else {
            format_backlog(&self.tasks_by_id(&state.sprint_backlog))
        };
        self.pool.publish(PoolKey::SprintBacklog, sprint_tag, &body)?;
        Ok(state)
    }

    /// Writes payloads to disk and brings the graph up to date.
    fn apply(&mut self, payloads: &[FilePayload]) -> Result<ChangedFileSet, EngineError> {
        let (next, changes) = self.snapshot.apply(payloads);
        next.write_changes(&changes)?;
        self.graph = self.generator.update(&self.graph, &changes, &next)?;
        self.snapshot = next;
        Ok(changes)
    }

    fn code_context(&self, focus: &[RelPath]) -> String {
        self.graph
            .assemble_context(focus, &self.snapshot, self.config.context_budget(), self.rt.counter())
            .render()
    }

    fn all_source(&self) -> Vec<RelPath> {
        self.graph.nodes().iter().cloned().collect()
    }

    /// Developer implements the sprint backlog; review rounds follow until no
    /// blockers remain or the correction cap is hit.
    pub fn run_development(&mut self, state: &SprintState) -> Result<DevelopmentOutcome, EngineError> {
        if state.phase != SprintPhase::Development {
            return Err(EngineError::PhaseOrder {
                from: state.phase,
                to: SprintPhase::Development,
            });
        }
        let start = self.snapshot.clone();
        let code = self.code_context(&self.all_source());
        let extras = BTreeMap::from([("sprint", state.sprint_tag.to_string())]);
        let outcome = self.session(Phase::Development, &extras, Some(&code), Terminator::FileBlocks)?;
        let payloads = parse_file_blocks(&outcome.final_message).unwrap_or_default();
        if payloads.is_empty() {
            log::warn!("sprint {}: developer produced no files", state.sprint_tag);
            for id in &state.sprint_backlog {
                self.pool.set_status(id, TaskState::Failed)?;
            }
            return Ok(DevelopmentOutcome::default());
        }
        self.apply(&payloads)?;

        let mut open = Vec::new();
        for round in 0..=self.config.correction_rounds {
            let findings = self.review(state.sprint_tag)?;
            let blockers: Vec<_> = findings
                .into_iter()
                .filter(|f| f.severity == Severity::Blocker)
                .collect();
            if blockers.is_empty() {
                break;
            }
            if round == self.config.correction_rounds {
                log::warn!(
                    "sprint {}: {} blocker(s) left after {round} correction round(s)",
                    state.sprint_tag,
                    blockers.len()
                );
                open = blockers;
                break;
            }
            let code = self.code_context(&self.all_source());
            let extras = BTreeMap::from([("findings", render_findings(&blockers))]);
            let outcome = self.session(Phase::Correction, &extras, Some(&code), Terminator::FileBlocks)?;
            let payloads = parse_file_blocks(&outcome.final_message).unwrap_or_default();
            self.apply(&payloads)?;
        }
        self.publish_code_index(state.sprint_tag)?;
        Ok(DevelopmentOutcome {
            changed: diff(&start, &self.snapshot),
            open_blockers: open,
            produced_code: true,
        })
    }

    fn review(&mut self, sprint_tag: u32) -> Result<Vec<crate::roles::ReviewFinding>, EngineError> {
        let pre = precheck(&self.snapshot, &self.graph, &self.generator);
        let code = self.code_context(&self.all_source());
        let inputs = ReviewInputs {
            registry: &self.registry,
            sprint_tag,
            code: &code,
            precheck: &pre,
            max_turns: self.config.max_turns,
            context_budget: self.config.context_budget(),
            single_step: self.config.single_step_review,
        };
        Ok(three_step_review(&mut self.rt, &mut self.pool, &inputs)?)
    }

    fn publish_code_index(&mut self, sprint_tag: u32) -> Result<(), EngineError> {
        let mut index = String::new();
        for (path, entry) in self.snapshot.files() {
            let _ = writeln!(index, "{path} {}", &entry.digest.to_string()[..12]);
        }
        if index.is_empty() {
            index.push_str("(empty workspace)\n");
        }
        self.pool.publish(PoolKey::SourceCodeIndex, sprint_tag, &index)?;
        Ok(())
    }

    /// Tests the changed files and everything depending on them, dependencies
    /// first, with a bug-fix loop per failing check.
    pub fn run_testing(
        &mut self,
        state: &SprintState,
        changed: &ChangedFileSet,
        dev: &DevelopmentOutcome,
    ) -> Result<Vec<TestReport>, EngineError> {
        if state.phase != SprintPhase::Testing {
            return Err(EngineError::PhaseOrder {
                from: state.phase,
                to: SprintPhase::Testing,
            });
        }
        if !self.graph.same_structure(&self.generator.build(&self.snapshot)?) {
            return Err(EngineError::StaleGraph);
        }
        let targets = self.graph.test_targets(changed);
        let mut plan = self.graph.testing_order(&targets);
        let mut reports = Vec::new();

        if !plan.ordered_targets.is_empty() {
            let scripts: Vec<String> = plan
                .ordered_targets
                .iter()
                .map(|t| plan.per_target_scripts[t].to_string())
                .collect();
            let extras = BTreeMap::from([
                ("targets", list(plan.ordered_targets.iter().map(|t| t.to_string()))),
                ("scripts", list(scripts.iter().cloned())),
            ]);
            let code = self.code_context(&plan.ordered_targets);
            let outcome = self.session(
                Phase::Testing,
                &extras,
                Some(&code),
                Terminator::TestScripts {
                    expected: scripts.iter().cloned().collect(),
                },
            )?;
            let test_dir = self.generator.test_dir().to_string();
            let payloads: Vec<FilePayload> = parse_file_blocks(&outcome.final_message)
                .unwrap_or_default()
                .into_iter()
                .filter(|p| {
                    let keep = p.path.starts_with_dir(&test_dir);
                    if !keep {
                        log::warn!("tester wrote {} outside {test_dir}/; ignored", p.path);
                    }
                    keep
                })
                .collect();
            self.apply(&payloads)?;
            plan.final_commands = parse_commands(&outcome.final_message);

            let mut checks: Vec<Check> = plan
                .ordered_targets
                .iter()
                .map(|t| Check::Script {
                    target: t.clone(),
                    script: plan.per_target_scripts[t].clone(),
                })
                .collect();
            checks.extend(plan.final_commands.iter().cloned().map(Check::Command));
            for check in checks {
                let report = self.run_check(&check)?;
                reports.push(report);
            }
        }

        if !dev.open_blockers.is_empty() {
            reports.push(TestReport {
                script: "review".to_string(),
                passed: 0,
                failed: dev.open_blockers.len(),
                failures: dev
                    .open_blockers
                    .iter()
                    .map(|f| TestFailure {
                        case: format!("step {} {}", f.step, f.file),
                        detail: f.message.clone(),
                    })
                    .collect(),
            });
        }

        let body = if reports.is_empty() {
            "no checks were run\n".to_string()
        } else {
            reports.iter().map(TestReport::render).collect::<Vec<_>>().join("\n")
        };
        self.pool.publish(PoolKey::TestReport, state.sprint_tag, &body)?;
        self.last_failures = reports.iter().map(|r| r.failed).sum();
        Ok(reports)
    }

    fn execute(&mut self, check: &Check) -> Result<ExecResult, EngineError> {
        let command = match check {
            Check::Script { script, .. } => self.config.test_command.replace("{script}", script.as_str()),
            Check::Command(c) => c.clone(),
        };
        let result = match (check, self.config.launch_grace) {
            (Check::Command(_), Some(grace)) => check_launch(&command, &self.root, grace, &self.exec_opts)?,
            _ => run_command(&command, &self.root, &self.exec_opts)?,
        };
        self.exec_runs += 1;
        let log = format!(
            "command: {}\nexit: {:?}\nwall_time: {:.3}s\n--- stdout ---\n{}\n--- stderr ---\n{}\n",
            result.command,
            result.exit_code,
            result.wall_time.as_secs_f64(),
            result.stdout,
            result.stderr
        );
        self.write_file(&Path::new(LOG_DIR).join(format!("exec-{}.txt", self.exec_runs)), &log)?;
        Ok(result)
    }

    /// Runs one check, handing failures to the Developer up to `fix_cap`
    /// times.
    fn run_check(&mut self, check: &Check) -> Result<TestReport, EngineError> {
        let label = check.label();
        if let Check::Script { script, .. } = check {
            if !self.snapshot.contains(script) {
                return Ok(TestReport {
                    script: label,
                    passed: 0,
                    failed: 1,
                    failures: vec![TestFailure {
                        case: script.to_string(),
                        detail: "test script was not written".to_string(),
                    }],
                });
            }
        }
        let mut result = self.execute(check)?;
        let mut report = self.summarize(&label, &result);
        for attempt in 1..=self.config.fix_cap {
            if report.failed == 0 {
                break;
            }
            log::info!("{label}: failing, bug fix {attempt}/{}", self.config.fix_cap);
            let tb = result.traceback();
            let mut bundle = self.graph.traceback_context(
                &tb,
                &self.snapshot,
                self.config.context_budget(),
                self.rt.counter(),
            );
            if bundle.is_empty() {
                let focus: Vec<RelPath> = match check {
                    Check::Script { target, script } => vec![script.clone(), target.clone()],
                    Check::Command(_) => self.all_source(),
                };
                bundle = self.graph.assemble_context(
                    &focus,
                    &self.snapshot,
                    self.config.context_budget(),
                    self.rt.counter(),
                );
            }
            let failure = failure_text(&report);
            let failure = clip_to_budget(&failure, self.config.context_budget() / 4, self.rt.counter()).to_string();
            let extras = BTreeMap::from([("script", label.clone()), ("failure", failure)]);
            let outcome = self.session(Phase::BugFix, &extras, Some(&bundle.render()), Terminator::FileBlocks)?;
            self.bug_fix_sessions += 1;
            let payloads = parse_file_blocks(&outcome.final_message).unwrap_or_default();
            self.apply(&payloads)?;
            result = self.execute(check)?;
            report = self.summarize(&label, &result);
        }
        Ok(report)
    }

    /// Removes run-specific noise (workspace location, timings) from
    /// interpreter output so prompts stay reproducible.
    fn sanitize(&self, text: &str) -> String {
        let mut out = text.to_string();
        let mut roots = vec![self.root.display().to_string()];
        if let Ok(c) = self.root.canonicalize() {
            roots.push(c.display().to_string());
        }
        roots.sort_by_key(|r| std::cmp::Reverse(r.len()));
        for r in roots {
            out = out.replace(&format!("{r}/"), "");
        }
        out.lines()
            .map(|l| match (l.starts_with("Ran "), l.rfind(" in ")) {
                (true, Some(i)) if l.ends_with('s') => &l[..i],
                _ => l,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn summarize(&self, label: &str, result: &ExecResult) -> TestReport {
        if result.timed_out() {
            return TestReport {
                script: label.to_string(),
                passed: 0,
                failed: 1,
                failures: vec![TestFailure {
                    case: label.to_string(),
                    detail: format!(
                        "Timeout: did not finish within {}s",
                        self.config.timeout.as_secs_f64()
                    ),
                }],
            };
        }
        let stderr = self.sanitize(&result.stderr);
        let mut report = parse_unittest(label, &stderr, result.success());
        if report.failed > 0 && report.failures.iter().all(|f| f.detail.is_empty()) {
            let stdout = self.sanitize(&result.stdout);
            let source = if stderr.trim().is_empty() { &stdout } else { &stderr };
            for f in &mut report.failures {
                f.detail = tail(source, FAILURE_TAIL_LINES);
                if f.detail.is_empty() {
                    f.detail = format!("exit status {:?}", result.exit_code);
                }
            }
        }
        report
    }

    /// PM classifies the sprint's tasks; the decision follows mechanically.
    pub fn run_review(&mut self, state: &mut SprintState, reports: &[TestReport]) -> Result<Decision, EngineError> {
        if state.phase != SprintPhase::Review {
            return Err(EngineError::PhaseOrder {
                from: state.phase,
                to: SprintPhase::Review,
            });
        }
        let tag = state.sprint_tag;
        let mut classified = BTreeMap::new();
        if !state.sprint_backlog.is_empty() {
            let tasks = self.tasks_by_id(&state.sprint_backlog);
            let extras = BTreeMap::from([
                ("sprint", tag.to_string()),
                ("sprint_tasks", format_backlog(&tasks)),
            ]);
            let expected: BTreeSet<String> = state.sprint_backlog.iter().cloned().collect();
            let outcome = self.session(
                Phase::SprintReview,
                &extras,
                None,
                Terminator::Classification { expected },
            )?;
            let parsed = match outcome.terminated_by {
                TerminatedBy::Consensus => parse_classification(&outcome.final_message).unwrap_or_default(),
                TerminatedBy::TurnLimit => BTreeMap::new(),
            };
            for id in &state.sprint_backlog {
                let c = parsed.get(id).copied().unwrap_or(Classification::Incomplete);
                self.pool.set_status(id, c.task_state())?;
                classified.insert(id.clone(), c);
            }
        }

        let failures: usize = reports.iter().map(|r| r.failed).sum();
        let all_done = self
            .backlog
            .iter()
            .all(|t| self.pool.status(&t.task_id).ok() == Some(TaskState::Completed));
        let decision = if all_done && failures == 0 && self.last_failures == 0 {
            Decision::Deliver
        } else {
            Decision::Continue
        };
        state.decision = Some(decision);

        let mut report = format!("Sprint {tag}\n");
        for (id, c) in &classified {
            let _ = writeln!(report, "{id}: {}", c.as_str());
        }
        if classified.is_empty() {
            report.push_str("no tasks selected\n");
        }
        let passed: usize = reports.iter().map(|r| r.passed).sum();
        let _ = writeln!(report, "checks: {passed} passed, {failures} failed");
        let _ = writeln!(
            report,
            "decision: {}",
            if decision == Decision::Deliver { "deliver" } else { "continue" }
        );
        self.pool.publish(PoolKey::SprintReport, tag, &report)?;
        self.sprint_reports.push(report);
        self.pool.publish(PoolKey::OverallReport, tag, &self.sprint_reports.join("\n"))?;

        if decision == Decision::Deliver {
            self.document(tag)?;
        }
        Ok(decision)
    }

    /// SM writes the README once the product is delivered.
    fn document(&mut self, tag: u32) -> Result<(), EngineError> {
        let externals = self.graph.all_externals();
        let extras = BTreeMap::from([(
            "externals",
            if externals.is_empty() {
                "none (standard library only)\n".to_string()
            } else {
                list(externals.into_iter())
            },
        )]);
        let code = self.code_context(&self.all_source());
        let outcome = self.session(Phase::Documentation, &extras, Some(&code), Terminator::Consensus)?;
        let doc: String = outcome
            .final_message
            .lines()
            .filter(|l| l.trim() != CONSENSUS)
            .collect::<Vec<_>>()
            .join("\n");
        let doc = format!("{}\n", doc.trim_end());
        self.pool.publish(PoolKey::Documentation, tag, &doc)?;
        self.write_file(Path::new("README.md"), &doc)
    }

    fn write_file(&self, rel: &Path, text: &str) -> Result<(), EngineError> {
        let path = self.root.join(rel);
        let io = |source| EngineError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(&path, text).map_err(io)
    }
}

fn list(items: impl Iterator<Item = String>) -> String {
    items.map(|i| format!("- {i}\n")).collect()
}

fn tail(text: &str, lines: usize) -> String {
    let all: Vec<&str> = text.lines().collect();
    all[all.len().saturating_sub(lines)..].join("\n").trim().to_string()
}

fn failure_text(report: &TestReport) -> String {
    let mut out = String::new();
    for f in &report.failures {
        let _ = writeln!(out, "{}:\n{}\n", f.case, f.detail);
    }
    out
}

/// Reads unittest's summary from stderr. Without one, the whole check is a
/// single case named after `label`.
pub fn parse_unittest(label: &str, stderr: &str, success: bool) -> TestReport {
    let mut ran: Option<usize> = None;
    let mut failures: Vec<TestFailure> = Vec::new();
    let mut in_failure = false;
    let rule = |l: &str, c: char| l.len() >= 20 && l.chars().all(|x| x == c);
    let lines: Vec<&str> = stderr.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if let Some(case) = line.strip_prefix("FAIL: ").or_else(|| line.strip_prefix("ERROR: ")) {
            failures.push(TestFailure {
                case: case.trim().to_string(),
                detail: String::new(),
            });
            in_failure = true;
            // A test docstring, if any, sits between the header and the rule.
            if let Some(k) = (1..=3).find(|k| lines.get(i + k).is_some_and(|l| rule(l, '-'))) {
                i += k;
            }
        } else if rule(line, '=') || rule(line, '-') {
            in_failure = false;
        } else if let Some(rest) = line.strip_prefix("Ran ") {
            ran = rest.split_whitespace().next().and_then(|n| n.parse().ok());
            in_failure = false;
        } else if in_failure {
            let f = failures.last_mut().expect("in_failure implies a case");
            if !f.detail.is_empty() {
                f.detail.push('\n');
            }
            f.detail.push_str(line);
        }
        i += 1;
    }
    for f in &mut failures {
        f.detail = f.detail.trim_end().to_string();
    }
    match ran {
        Some(n) if success || !failures.is_empty() => TestReport {
            script: label.to_string(),
            passed: n.saturating_sub(failures.len()),
            failed: failures.len(),
            failures,
        },
        _ if success => TestReport {
            script: label.to_string(),
            passed: 1,
            failed: 0,
            failures: Vec::new(),
        },
        _ => TestReport {
            script: label.to_string(),
            passed: 0,
            failed: 1,
            failures: vec![TestFailure {
                case: label.to_string(),
                detail: String::new(),
            }],
        },
    }
}
