//! Parsers for every structured artifact agents emit.
//!
//! All artifacts except review findings live in fenced blocks. The first
//! line of the block (or the fence's info string) names the artifact:
//!
//! ```text
//! ```BACKLOG
//! TASK: T1 | Implement addition
//!   AC: add(2, 3) returns 5
//! ```
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::workspace::{FilePayload, RelPath};

/// Sentinel line closing free-form negotiations.
pub const CONSENSUS: &str = "<CONSENSUS>";
/// Sentinel line for a review step with nothing to report.
pub const NO_FINDINGS: &str = "NO_FINDINGS";
/// First line of a fenced block carrying a file.
pub const FILE_MARKER: &str = "# FILE:";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no {0} block found")]
    MissingBlock(&'static str),
    #[error("{0} block is empty")]
    EmptyBlock(&'static str),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate task id `{0}`")]
    DuplicateTask(String),
    #[error("task `{0}` has no acceptance criteria")]
    NoCriteria(String),
    #[error("duplicate file `{0}` in one message")]
    DuplicateFile(String),
    #[error("invalid file path `{path}`: {reason}")]
    BadPath { path: String, reason: String },
    #[error("report for {script}: failed = {failed} but {listed} failures listed")]
    InconsistentReport {
        script: String,
        failed: usize,
        listed: usize,
    },
}

/// A fenced block: the fence info string and the lines between fences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock<'a> {
    pub info: &'a str,
    pub lines: Vec<&'a str>,
}

impl<'a> FencedBlock<'a> {
    /// Artifact header: the info string, or the first line if there is none.
    fn into_header(mut self) -> (&'a str, Vec<&'a str>) {
        if !self.info.is_empty() || self.lines.is_empty() {
            return (self.info, self.lines);
        }
        let first = self.lines.remove(0);
        (first.trim(), self.lines)
    }
}

/// Every fenced block in `text`. An unclosed fence runs to the end.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock<'_>> {
    let mut blocks = Vec::new();
    let mut current: Option<FencedBlock> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        match current.take() {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    current = Some(FencedBlock {
                        info: info.trim(),
                        lines: Vec::new(),
                    });
                }
            }
            Some(mut block) => {
                if trimmed.trim_end() == "```" {
                    blocks.push(block);
                } else {
                    block.lines.push(line);
                    current = Some(block);
                }
            }
        }
    }
    blocks.extend(current);
    blocks
}

/// Lines of the first block headed `name` (case-insensitive).
fn named_block<'a>(text: &'a str, name: &'static str) -> Option<Vec<&'a str>> {
    fenced_blocks(text).into_iter().find_map(|b| {
        let (header, body) = b.into_header();
        header.eq_ignore_ascii_case(name).then_some(body)
    })
}

pub fn has_consensus(text: &str) -> bool {
    text.lines().any(|l| l.trim() == CONSENSUS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum TaskState {
    #[default]
    Pending,
    Completed,
    Failed,
}

impl TaskState {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskState::Pending => "pending",
            TaskState::Completed => "completed",
            TaskState::Failed => "failed",
        }
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BacklogTask {
    pub task_id: String,
    pub description: String,
    pub acceptance_criteria: Vec<String>,
    pub status: TaskState,
}

fn valid_task_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
}

/// Tasks from the `BACKLOG` block, in order. Tasks without an id get
/// `T<position>`.
pub fn parse_backlog(text: &str) -> Result<Vec<BacklogTask>, ParseError> {
    let body = named_block(text, "BACKLOG").ok_or(ParseError::MissingBlock("BACKLOG"))?;
    let mut tasks: Vec<BacklogTask> = Vec::new();
    for (i, line) in body.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("TASK:") {
            let rest = rest.trim();
            let (id, desc) = match rest.split_once('|') {
                Some((id, desc)) if valid_task_id(id.trim()) => (id.trim().to_string(), desc.trim()),
                _ => (format!("T{}", tasks.len() + 1), rest),
            };
            if desc.is_empty() {
                return Err(ParseError::Malformed {
                    line: i + 1,
                    reason: "task without description".into(),
                });
            }
            if tasks.iter().any(|t| t.task_id == id) {
                return Err(ParseError::DuplicateTask(id));
            }
            tasks.push(BacklogTask {
                task_id: id,
                description: desc.to_string(),
                acceptance_criteria: Vec::new(),
                status: TaskState::Pending,
            });
        } else if let Some(ac) = trimmed.strip_prefix("AC:") {
            let task = tasks.last_mut().ok_or_else(|| ParseError::Malformed {
                line: i + 1,
                reason: "acceptance criterion before any task".into(),
            })?;
            task.acceptance_criteria.push(ac.trim().to_string());
        } else {
            return Err(ParseError::Malformed {
                line: i + 1,
                reason: format!("expected TASK: or AC:, found `{trimmed}`"),
            });
        }
    }
    if tasks.is_empty() {
        return Err(ParseError::EmptyBlock("BACKLOG"));
    }
    if let Some(t) = tasks.iter().find(|t| t.acceptance_criteria.is_empty()) {
        return Err(ParseError::NoCriteria(t.task_id.clone()));
    }
    Ok(tasks)
}

pub fn format_backlog(tasks: &[BacklogTask]) -> String {
    let mut out = String::from("```BACKLOG\n");
    for t in tasks {
        let _ = writeln!(out, "TASK: {} | {}", t.task_id, t.description);
        for ac in &t.acceptance_criteria {
            let _ = writeln!(out, "  AC: {ac}");
        }
    }
    out.push_str("```\n");
    out
}

/// Task ids from the `SPRINT` block. An empty block is a valid empty
/// selection.
pub fn parse_sprint_selection(text: &str) -> Result<Vec<String>, ParseError> {
    let body = named_block(text, "SPRINT").ok_or(ParseError::MissingBlock("SPRINT"))?;
    let mut ids = Vec::new();
    for (i, line) in body.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let id = trimmed
            .strip_prefix("TASK:")
            .map(str::trim)
            .filter(|id| valid_task_id(id))
            .ok_or_else(|| ParseError::Malformed {
                line: i + 1,
                reason: format!("expected `TASK: <id>`, found `{trimmed}`"),
            })?;
        if !ids.iter().any(|x| x == id) {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}

pub fn format_sprint_selection(ids: &[String]) -> String {
    let mut out = String::from("```SPRINT\n");
    for id in ids {
        let _ = writeln!(out, "TASK: {id}");
    }
    out.push_str("```\n");
    out
}

/// A sprint task's outcome as judged in review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Classification {
    Completed,
    Failed,
    Incomplete,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Completed => "completed",
            Classification::Failed => "failed",
            Classification::Incomplete => "incomplete",
        }
    }

    pub fn task_state(self) -> TaskState {
        match self {
            Classification::Completed => TaskState::Completed,
            Classification::Failed => TaskState::Failed,
            Classification::Incomplete => TaskState::Pending,
        }
    }
}

/// `T1: completed` lines from the `STATUS` block.
pub fn parse_classification(text: &str) -> Result<BTreeMap<String, Classification>, ParseError> {
    let body = named_block(text, "STATUS").ok_or(ParseError::MissingBlock("STATUS"))?;
    let mut out = BTreeMap::new();
    for (i, line) in body.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let malformed = || ParseError::Malformed {
            line: i + 1,
            reason: format!("expected `<id>: completed|failed|incomplete`, found `{trimmed}`"),
        };
        let (id, state) = trimmed.split_once(':').ok_or_else(malformed)?;
        let state = match state.trim().to_ascii_lowercase().as_str() {
            "completed" => Classification::Completed,
            "failed" => Classification::Failed,
            "incomplete" => Classification::Incomplete,
            _ => return Err(malformed()),
        };
        let id = id.trim();
        if !valid_task_id(id) {
            return Err(malformed());
        }
        out.insert(id.to_string(), state);
    }
    Ok(out)
}

pub fn format_classification(map: &BTreeMap<String, Classification>) -> String {
    let mut out = String::from("```STATUS\n");
    for (id, c) in map {
        let _ = writeln!(out, "{id}: {}", c.as_str());
    }
    out.push_str("```\n");
    out
}

/// Files from fenced blocks whose first line is `# FILE: <path>`.
pub fn parse_file_blocks(text: &str) -> Result<Vec<FilePayload>, ParseError> {
    let mut out: Vec<FilePayload> = Vec::new();
    for block in fenced_blocks(text) {
        let Some((first, rest)) = block.lines.split_first() else {
            continue;
        };
        let Some(raw) = first.trim().strip_prefix(FILE_MARKER) else {
            continue;
        };
        let raw = raw.trim();
        let path = RelPath::new(raw).map_err(|e| ParseError::BadPath {
            path: raw.to_string(),
            reason: e.to_string(),
        })?;
        if out.iter().any(|p| p.path == path) {
            return Err(ParseError::DuplicateFile(path.to_string()));
        }
        let mut content = rest.join("\n");
        if !content.is_empty() {
            content.push('\n');
        }
        out.push(FilePayload { path, content });
    }
    Ok(out)
}

pub fn format_file_block(payload: &FilePayload) -> String {
    let mut out = format!("```python\n{FILE_MARKER} {}\n", payload.path);
    out.push_str(&payload.content);
    if !payload.content.is_empty() && !payload.content.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("```\n");
    out
}

/// Shell commands from the `COMMANDS` block, if any.
pub fn parse_commands(text: &str) -> Vec<String> {
    named_block(text, "COMMANDS")
        .unwrap_or_default()
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    /// Gates development: triggers a correction round.
    Blocker,
    Advisory,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Blocker => "blocker",
            Severity::Advisory => "advisory",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewFinding {
    pub step: u8,
    pub severity: Severity,
    pub file: String,
    pub message: String,
}

impl ReviewFinding {
    pub fn to_line(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.step,
            self.severity.as_str(),
            self.file,
            self.message
        )
    }
}

fn parse_finding(line: &str) -> Option<ReviewFinding> {
    let mut parts = line.splitn(4, '|');
    let step: u8 = parts.next()?.trim().parse().ok()?;
    if !(1..=3).contains(&step) {
        return None;
    }
    let severity = match parts.next()?.trim().to_ascii_lowercase().as_str() {
        "blocker" => Severity::Blocker,
        "advisory" => Severity::Advisory,
        _ => return None,
    };
    let file = parts.next()?.trim().to_string();
    let message = parts.next()?.trim().to_string();
    if file.is_empty() || message.is_empty() {
        return None;
    }
    Some(ReviewFinding {
        step,
        severity,
        file,
        message,
    })
}

/// `STEP|SEVERITY|FILE|MESSAGE` lines anywhere in the text, or the
/// `NO_FINDINGS` sentinel. A line that starts like a finding (digit then `|`)
/// but does not parse is an error in strict mode and skipped otherwise.
pub fn parse_review(text: &str, strict: bool) -> Result<Vec<ReviewFinding>, ParseError> {
    let mut findings = Vec::new();
    let mut sentinel = false;
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed == NO_FINDINGS {
            sentinel = true;
            continue;
        }
        let looks_like = trimmed
            .split_once('|')
            .is_some_and(|(head, _)| !head.is_empty() && head.trim().chars().all(|c| c.is_ascii_digit()));
        if !looks_like {
            continue;
        }
        match parse_finding(trimmed) {
            Some(f) => findings.push(f),
            None if strict => {
                return Err(ParseError::Malformed {
                    line: i + 1,
                    reason: format!("bad finding line `{trimmed}`"),
                })
            }
            None => {}
        }
    }
    if findings.is_empty() && !sentinel {
        return Err(ParseError::MissingBlock("findings"));
    }
    Ok(findings)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestFailure {
    pub case: String,
    /// Traceback text or a plain message.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestReport {
    pub script: String,
    pub passed: usize,
    pub failed: usize,
    pub failures: Vec<TestFailure>,
}

impl TestReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "TEST_REPORT {}\npassed: {}\nfailed: {}\n",
            self.script, self.passed, self.failed
        );
        for f in &self.failures {
            let _ = writeln!(out, "FAILURE {}", f.case);
            for line in f.detail.lines() {
                let _ = writeln!(out, "  {line}");
            }
        }
        out
    }
}

/// Every `TEST_REPORT` block in the text.
pub fn parse_test_reports(text: &str) -> Result<Vec<TestReport>, ParseError> {
    let mut reports: Vec<TestReport> = Vec::new();
    let mut counts_seen = (false, false);
    let finish = |r: &TestReport, seen: (bool, bool), line: usize| -> Result<(), ParseError> {
        if !(seen.0 && seen.1) {
            return Err(ParseError::Malformed {
                line,
                reason: format!("report for {} lacks passed/failed counts", r.script),
            });
        }
        if r.failed != r.failures.len() {
            return Err(ParseError::InconsistentReport {
                script: r.script.clone(),
                failed: r.failed,
                listed: r.failures.len(),
            });
        }
        Ok(())
    };
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if let Some(script) = line.strip_prefix("TEST_REPORT ") {
            if let Some(prev) = reports.last() {
                finish(prev, counts_seen, i + 1)?;
            }
            reports.push(TestReport {
                script: script.trim().to_string(),
                passed: 0,
                failed: 0,
                failures: Vec::new(),
            });
            counts_seen = (false, false);
            continue;
        }
        let Some(report) = reports.last_mut() else {
            continue;
        };
        let count = |v: &str| {
            v.trim().parse::<usize>().map_err(|_| ParseError::Malformed {
                line: i + 1,
                reason: format!("bad count `{}`", v.trim()),
            })
        };
        if let Some(v) = line.strip_prefix("passed:") {
            report.passed = count(v)?;
            counts_seen.0 = true;
        } else if let Some(v) = line.strip_prefix("failed:") {
            report.failed = count(v)?;
            counts_seen.1 = true;
        } else if let Some(case) = line.strip_prefix("FAILURE ") {
            report.failures.push(TestFailure {
                case: case.trim().to_string(),
                detail: String::new(),
            });
        } else if let Some(detail) = line.strip_prefix("  ") {
            if let Some(f) = report.failures.last_mut() {
                if !f.detail.is_empty() {
                    f.detail.push('\n');
                }
                f.detail.push_str(detail);
            }
        }
    }
    match reports.last() {
        Some(last) => finish(last, counts_seen, lines.len())?,
        None => return Err(ParseError::MissingBlock("TEST_REPORT")),
    }
    Ok(reports)
}

/// The single report in `text`.
pub fn parse_test_report(text: &str) -> Result<TestReport, ParseError> {
    let mut reports = parse_test_reports(text)?;
    Ok(reports.swap_remove(0))
}

/// Ids in `selection` that are not in `known`.
pub fn unknown_ids<'a>(selection: &'a [String], known: &BTreeSet<String>) -> Vec<&'a str> {
    selection
        .iter()
        .filter(|id| !known.contains(*id))
        .map(String::as_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO_TASKS: &str = "Here is the backlog.\n\n```BACKLOG\nTASK: T1 | Add numbers\n  AC: add(2, 3) == 5\n  AC: add(-1, 1) == 0\nTASK: T2 | Divide numbers\n  AC: divide(6, 3) == 2\n  AC: divide by zero raises ValueError\n```\n";

    #[test]
    fn backlog_two_tasks_two_criteria() {
        let tasks = parse_backlog(TWO_TASKS).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].task_id, "T1");
        assert_eq!(tasks[1].description, "Divide numbers");
        assert!(tasks.iter().all(|t| t.acceptance_criteria.len() == 2));
    }

    #[test]
    fn backlog_empty_block_and_missing_block() {
        assert_eq!(parse_backlog("```BACKLOG\n```"), Err(ParseError::EmptyBlock("BACKLOG")));
        assert_eq!(parse_backlog("no block"), Err(ParseError::MissingBlock("BACKLOG")));
    }

    #[test]
    fn backlog_duplicate_id_named() {
        let text = "```BACKLOG\nTASK: A | x\n  AC: y\nTASK: A | z\n  AC: w\n```";
        assert_eq!(parse_backlog(text), Err(ParseError::DuplicateTask("A".into())));
    }

    #[test]
    fn backlog_assigns_sequential_ids() {
        let text = "```\nBACKLOG\nTASK: first thing\n  AC: a\nTASK: second | thing\n  AC: b\n```";
        let tasks = parse_backlog(text).unwrap();
        assert_eq!(tasks[0].task_id, "T1");
        assert_eq!(tasks[0].description, "first thing");
        assert_eq!(tasks[1].task_id, "second");
    }

    #[test]
    fn backlog_requires_criteria() {
        let text = "```BACKLOG\nTASK: T1 | x\n```";
        assert_eq!(parse_backlog(text), Err(ParseError::NoCriteria("T1".into())));
    }

    #[test]
    fn file_block_marked() {
        let text = "```python\n# FILE: user.py\nclass User:\n    pass\n```";
        let files = parse_file_blocks(text).unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(files[0].path.as_str(), "user.py");
        assert_eq!(files[0].content, "class User:\n    pass\n");
    }

    #[test]
    fn file_blocks_none_and_unmarked() {
        assert!(parse_file_blocks("just prose").unwrap().is_empty());
        let text = "```python\nprint(1)\n```\n\n```python\n# FILE: a.py\nx = 1\n```\n";
        let files = parse_file_blocks(text).unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(files[0].path.as_str(), "a.py");
    }

    #[test]
    fn file_blocks_reject_duplicates_and_traversal() {
        let dup = "```\n# FILE: a.py\n```\n```\n# FILE: ./a.py\n```";
        assert_eq!(parse_file_blocks(dup), Err(ParseError::DuplicateFile("a.py".into())));
        let escape = "```\n# FILE: ../etc/passwd\nroot\n```";
        assert!(matches!(parse_file_blocks(escape), Err(ParseError::BadPath { .. })));
        let abs = "```\n# FILE: /etc/passwd\nroot\n```";
        assert!(matches!(parse_file_blocks(abs), Err(ParseError::BadPath { .. })));
    }

    #[test]
    fn review_single_blocker() {
        let f = parse_review("1|blocker|user.py|empty method body", true).unwrap();
        assert_eq!(
            f,
            vec![ReviewFinding {
                step: 1,
                severity: Severity::Blocker,
                file: "user.py".into(),
                message: "empty method body".into()
            }]
        );
    }

    #[test]
    fn review_sentinel_and_order() {
        assert_eq!(parse_review("Looks fine.\nNO_FINDINGS\n", true).unwrap(), vec![]);
        let text = "1|advisory|a.py|one\n2|blocker|b.py|two\n3|advisory|c.py|three | with pipe";
        let f = parse_review(text, true).unwrap();
        assert_eq!(f.iter().map(|x| x.step).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(f[2].message, "three | with pipe");
    }

    #[test]
    fn review_malformed_strict_vs_lenient() {
        let text = "4|blocker|a.py|bad step\n2|advisory|b.py|fine";
        assert!(matches!(parse_review(text, true), Err(ParseError::Malformed { line: 1, .. })));
        assert_eq!(parse_review(text, false).unwrap().len(), 1);
        assert!(parse_review("nothing here", false).is_err());
    }

    #[test]
    fn test_report_consistent_and_not() {
        let ok = parse_test_report("TEST_REPORT tests/test_a.py\npassed: 3\nfailed: 0\n").unwrap();
        assert_eq!((ok.passed, ok.failed, ok.failures.len()), (3, 0, 0));

        let one = "TEST_REPORT t.py\npassed: 1\nfailed: 1\nFAILURE test_div\n  Traceback (most recent call last):\n    File \"calc.py\", line 3, in div\n  ZeroDivisionError: division by zero\n";
        let r = parse_test_report(one).unwrap();
        assert_eq!(r.failures.len(), 1);
        assert!(r.failures[0].detail.contains("ZeroDivisionError"));

        let bad = "TEST_REPORT t.py\npassed: 0\nfailed: 2\nFAILURE a\n";
        assert!(matches!(
            parse_test_report(bad),
            Err(ParseError::InconsistentReport { failed: 2, listed: 1, .. })
        ));
    }

    #[test]
    fn sprint_selection_and_status() {
        let sel = parse_sprint_selection("```SPRINT\nTASK: T1\nTASK: T3\n```").unwrap();
        assert_eq!(sel, vec!["T1", "T3"]);
        assert!(parse_sprint_selection("```SPRINT\n```").unwrap().is_empty());
        let st = parse_classification("```STATUS\nT1: completed\nT2: Incomplete\n```").unwrap();
        assert_eq!(st["T1"], Classification::Completed);
        assert_eq!(st["T2"], Classification::Incomplete);
        assert!(parse_classification("```STATUS\nT1: done\n```").is_err());
    }

    #[test]
    fn commands_block() {
        let text = "```COMMANDS\n# comment\npython3 main.py 2 + 3\n\n```";
        assert_eq!(parse_commands(text), vec!["python3 main.py 2 + 3"]);
        assert!(parse_commands("none").is_empty());
    }

    fn task_strategy() -> impl Strategy<Value = (String, Vec<String>)> {
        (
            "[A-Za-z][A-Za-z0-9 ,.()=]{0,30}",
            prop::collection::vec("[A-Za-z0-9][A-Za-z0-9 ,.()=|]{0,30}", 1..4),
        )
    }

    proptest! {
        #[test]
        fn backlog_round_trip(raw in prop::collection::vec(task_strategy(), 1..6)) {
            let tasks: Vec<BacklogTask> = raw
                .into_iter()
                .enumerate()
                .map(|(i, (d, acs))| BacklogTask {
                    task_id: format!("T{}", i + 1),
                    description: d.trim().to_string(),
                    acceptance_criteria: acs.iter().map(|a| a.trim().to_string()).collect(),
                    status: TaskState::Pending,
                })
                .filter(|t| !t.description.is_empty())
                .collect();
            prop_assume!(!tasks.is_empty());
            let parsed = parse_backlog(&format_backlog(&tasks)).unwrap();
            prop_assert_eq!(parsed, tasks);
        }

        #[test]
        fn file_blocks_stay_inside_root(path in "[a-z./]{1,12}", body in "[a-z =\n]{0,40}") {
            let text = format!("```\n# FILE: {path}\n{body}\n```");
            if let Ok(files) = parse_file_blocks(&text) {
                for f in files {
                    prop_assert!(!f.path.as_str().split('/').any(|c| c == ".." || c.is_empty()));
                    prop_assert!(!f.path.as_str().starts_with('/'));
                }
            }
        }
    }
}
