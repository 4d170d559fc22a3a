//! Global message pool: session outputs and task statuses, served to agents
//! as role-scoped slices that fit a token budget.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::roles::{Phase, RoleId, TaskState};
use crate::tokens::{clip_to_budget, TokenCounter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PoolKey {
    ProductBacklog,
    SprintBacklog,
    SourceCodeIndex,
    ReviewFeedback,
    TestReport,
    SprintReport,
    OverallReport,
    Documentation,
}

impl PoolKey {
    pub const ALL: [PoolKey; 8] = [
        PoolKey::ProductBacklog,
        PoolKey::SprintBacklog,
        PoolKey::SourceCodeIndex,
        PoolKey::ReviewFeedback,
        PoolKey::TestReport,
        PoolKey::SprintReport,
        PoolKey::OverallReport,
        PoolKey::Documentation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolKey::ProductBacklog => "product_backlog",
            PoolKey::SprintBacklog => "sprint_backlog",
            PoolKey::SourceCodeIndex => "source_code_index",
            PoolKey::ReviewFeedback => "review_feedback",
            PoolKey::TestReport => "test_report",
            PoolKey::SprintReport => "sprint_report",
            PoolKey::OverallReport => "overall_report",
            PoolKey::Documentation => "documentation",
        }
    }
}

impl fmt::Display for PoolKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolKey {
    type Err = PoolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PoolKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PoolError::BadScope(format!("unknown pool key `{s}`")))
    }
}

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("{key} entry for sprint {sprint_tag} has an empty body")]
    EmptyBody { key: PoolKey, sprint_tag: u32 },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("no scope rule for {role}/{phase}")]
    NoScope { role: RoleId, phase: Phase },
    #[error("scope table: {0}")]
    BadScope(String),
    #[error("persisting pool entry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolEntry {
    pub key: PoolKey,
    pub sprint_tag: u32,
    pub body: String,
    /// Publish sequence number; later publishes get larger values.
    pub created_at: u64,
}

/// One element of a scope row, highest priority first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScopeItem {
    /// Every sprint's entry for the key, newest first.
    Entries(PoolKey),
    /// Only the newest entry for the key.
    Latest(PoolKey),
    TaskStatuses,
    /// Code supplied by the caller of [`MessagePool::view_with_code`].
    CodeContext,
}

impl FromStr for ScopeItem {
    type Err = PoolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "task_statuses" => Ok(ScopeItem::TaskStatuses),
            "code" => Ok(ScopeItem::CodeContext),
            other => match other.split_once(':') {
                Some(("latest", key)) => Ok(ScopeItem::Latest(key.parse()?)),
                Some(("all", key)) => Ok(ScopeItem::Entries(key.parse()?)),
                _ => Err(PoolError::BadScope(format!(
                    "bad scope item `{other}` (expected latest:<key>, all:<key>, task_statuses or code)"
                ))),
            },
        }
    }
}

/// Which pool data each (role, phase) sees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopeTable {
    rows: BTreeMap<(RoleId, Phase), Vec<ScopeItem>>,
}

impl Default for ScopeTable {
    fn default() -> Self {
        use PoolKey::*;
        use ScopeItem::*;
        let review = vec![Latest(SprintBacklog), CodeContext];
        let rows = [
            (Phase::ProductPlanning, vec![Latest(ProductBacklog)]),
            (
                Phase::SprintPlanning,
                vec![Latest(ProductBacklog), TaskStatuses, Latest(SprintReport)],
            ),
            (Phase::Development, vec![Latest(SprintBacklog), CodeContext]),
            (Phase::ReviewBasics, review.clone()),
            (Phase::ReviewBacklog, review.clone()),
            (Phase::ReviewCriteria, review.clone()),
            (Phase::ReviewCombined, review),
            (
                Phase::Correction,
                vec![Latest(ReviewFeedback), CodeContext, Latest(SprintBacklog)],
            ),
            (Phase::Testing, vec![Latest(SprintBacklog), CodeContext]),
            (Phase::BugFix, vec![CodeContext, Latest(TestReport)]),
            (
                Phase::SprintReview,
                vec![
                    Latest(SprintBacklog),
                    Latest(TestReport),
                    Latest(ReviewFeedback),
                    Latest(ProductBacklog),
                    TaskStatuses,
                ],
            ),
            (
                Phase::Documentation,
                vec![Latest(ProductBacklog), Latest(SourceCodeIndex), Latest(OverallReport), CodeContext],
            ),
        ];
        ScopeTable {
            rows: rows
                .into_iter()
                .map(|(phase, items)| ((phase.owner(), phase), items))
                .collect(),
        }
    }
}

impl ScopeTable {
    pub fn empty() -> Self {
        ScopeTable {
            rows: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, role: RoleId, phase: Phase, items: Vec<ScopeItem>) {
        self.rows.insert((role, phase), items);
    }

    pub fn row(&self, role: RoleId, phase: Phase) -> Option<&[ScopeItem]> {
        self.rows.get(&(role, phase)).map(Vec::as_slice)
    }

    /// Applies overrides keyed `"<Role>/<phase>"`.
    pub fn apply_overrides(&mut self, rows: &BTreeMap<String, Vec<String>>) -> Result<(), PoolError> {
        for (key, items) in rows {
            let (role, phase) = key
                .split_once('/')
                .ok_or_else(|| PoolError::BadScope(format!("row key `{key}` is not Role/phase")))?;
            let role: RoleId = role.parse().map_err(|e| PoolError::BadScope(format!("{e}")))?;
            let phase: Phase = phase.parse().map_err(|e| PoolError::BadScope(format!("{e}")))?;
            let items = items.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
            self.set(role, phase, items);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSlice {
    pub rendered: String,
    pub included_keys: Vec<(PoolKey, u32)>,
    pub token_estimate: usize,
}

impl ContextSlice {
    pub fn empty() -> Self {
        ContextSlice {
            rendered: String::new(),
            included_keys: Vec::new(),
            token_estimate: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MessagePool {
    entries: BTreeMap<(PoolKey, u32), PoolEntry>,
    /// Task id -> every state ever set, oldest first. Empty means pending.
    statuses: BTreeMap<String, Vec<TaskState>>,
    next_seq: u64,
    scope: ScopeTable,
    persist_dir: Option<PathBuf>,
}

impl Default for MessagePool {
    fn default() -> Self {
        MessagePool::new(ScopeTable::default())
    }
}

impl MessagePool {
    pub fn new(scope: ScopeTable) -> Self {
        MessagePool {
            entries: BTreeMap::new(),
            statuses: BTreeMap::new(),
            next_seq: 0,
            scope,
            persist_dir: None,
        }
    }

    /// Mirror every publish to `<dir>/<key>-<sprint>.txt`.
    pub fn persist_to(mut self, dir: &Path) -> Self {
        self.persist_dir = Some(dir.to_path_buf());
        self
    }

    pub fn scope(&self) -> &ScopeTable {
        &self.scope
    }

    pub fn publish(&mut self, key: PoolKey, sprint_tag: u32, body: &str) -> Result<(), PoolError> {
        if body.trim().is_empty() {
            return Err(PoolError::EmptyBody { key, sprint_tag });
        }
        if let Some(dir) = &self.persist_dir {
            let path = dir.join(format!("{key}-{sprint_tag}.txt"));
            let io = |source| PoolError::Io {
                path: path.display().to_string(),
                source,
            };
            std::fs::create_dir_all(dir).map_err(io)?;
            std::fs::write(&path, body).map_err(io)?;
        }
        self.next_seq += 1;
        self.entries.insert(
            (key, sprint_tag),
            PoolEntry {
                key,
                sprint_tag,
                body: body.to_string(),
                created_at: self.next_seq,
            },
        );
        Ok(())
    }

    pub fn get(&self, key: PoolKey, sprint_tag: u32) -> Option<&PoolEntry> {
        self.entries.get(&(key, sprint_tag))
    }

    pub fn latest(&self, key: PoolKey) -> Option<&PoolEntry> {
        self.entries.range((key, 0)..=(key, u32::MAX)).next_back().map(|(_, e)| e)
    }

    /// Entries for `key`, newest sprint first.
    pub fn entries_for(&self, key: PoolKey) -> impl Iterator<Item = &PoolEntry> {
        self.entries.range((key, 0)..=(key, u32::MAX)).rev().map(|(_, e)| e)
    }

    /// Declares the product backlog's task ids. Existing history is kept.
    pub fn register_tasks<'a>(&mut self, ids: impl IntoIterator<Item = &'a str>) {
        for id in ids {
            self.statuses.entry(id.to_string()).or_default();
        }
    }

    pub fn known_tasks(&self) -> BTreeSet<String> {
        self.statuses.keys().cloned().collect()
    }

    pub fn set_status(&mut self, task_id: &str, state: TaskState) -> Result<(), PoolError> {
        self.statuses
            .get_mut(task_id)
            .ok_or_else(|| PoolError::UnknownTask(task_id.to_string()))?
            .push(state);
        Ok(())
    }

    pub fn status(&self, task_id: &str) -> Result<TaskState, PoolError> {
        self.statuses
            .get(task_id)
            .map(|h| h.last().copied().unwrap_or_default())
            .ok_or_else(|| PoolError::UnknownTask(task_id.to_string()))
    }

    pub fn status_history(&self, task_id: &str) -> Result<&[TaskState], PoolError> {
        self.statuses
            .get(task_id)
            .map(Vec::as_slice)
            .ok_or_else(|| PoolError::UnknownTask(task_id.to_string()))
    }

    pub fn statuses(&self) -> BTreeMap<&str, TaskState> {
        self.statuses
            .iter()
            .map(|(id, h)| (id.as_str(), h.last().copied().unwrap_or_default()))
            .collect()
    }

    fn render_statuses(&self) -> String {
        let mut out = String::new();
        for (id, state) in self.statuses() {
            let _ = writeln!(out, "{id}: {state}");
        }
        out
    }

    pub fn view(
        &self,
        role: RoleId,
        phase: Phase,
        budget: usize,
        counter: &dyn TokenCounter,
    ) -> Result<ContextSlice, PoolError> {
        self.view_with_code(role, phase, budget, counter, None)
    }

    /// Renders the scope row for (role, phase) within `budget` tokens.
    /// Sections are added in priority order; the first one that does not fit
    /// is clipped and everything after it dropped.
    pub fn view_with_code(
        &self,
        role: RoleId,
        phase: Phase,
        budget: usize,
        counter: &dyn TokenCounter,
        code: Option<&str>,
    ) -> Result<ContextSlice, PoolError> {
        let row = self
            .scope
            .row(role, phase)
            .ok_or(PoolError::NoScope { role, phase })?;

        let mut sections: Vec<(Option<(PoolKey, u32)>, String)> = Vec::new();
        let entry_section = |e: &PoolEntry| {
            (
                Some((e.key, e.sprint_tag)),
                format!("## {} (sprint {})\n{}\n", e.key, e.sprint_tag, e.body.trim_end()),
            )
        };
        for item in row {
            match *item {
                ScopeItem::Entries(key) => sections.extend(self.entries_for(key).map(entry_section)),
                ScopeItem::Latest(key) => sections.extend(self.latest(key).map(entry_section)),
                ScopeItem::TaskStatuses if !self.statuses.is_empty() => {
                    sections.push((None, format!("## task_statuses\n{}", self.render_statuses())))
                }
                ScopeItem::CodeContext => {
                    if let Some(code) = code.filter(|c| !c.is_empty()) {
                        sections.push((None, format!("## code\n{code}")));
                    }
                }
                ScopeItem::TaskStatuses => {}
            }
        }

        let mut slice = ContextSlice::empty();
        for (key, text) in sections {
            let candidate = format!("{}{}{text}", slice.rendered, if slice.rendered.is_empty() { "" } else { "\n" });
            if counter.count(&candidate) <= budget {
                slice.rendered = candidate;
                slice.included_keys.extend(key);
                continue;
            }
            let clipped = clip_to_budget(&candidate, budget, counter);
            if clipped.len() > slice.rendered.len() + 1 {
                slice.rendered = clipped.to_string();
                slice.included_keys.extend(key);
            }
            break;
        }
        slice.token_estimate = counter.count(&slice.rendered);
        Ok(slice)
    }
}
