//! The code dependency graph.
//!
//! Nodes are workspace source files and an edge `a -> b` means `a` imports
//! `b` (dependent to dependency). The graph answers the questions the sprint
//! engine asks after every change:
//!
//! * which files must be retested ([`CodeDependencyGraph::test_targets`]),
//! * in which order ([`CodeDependencyGraph::testing_order`]),
//! * which files to show a developer fixing a failure
//!   ([`CodeDependencyGraph::traceback_context`]).
//!
//! Graphs are values. [`CodeGraphGenerator::update`] returns a new graph and
//! re-parses only the files named in the change set.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::exec::Traceback;
use crate::imports::{resolve, GrammarProfile, ImportError, ImportRef, PythonProfile, ResolvedTarget};
use crate::tokens::TokenCounter;
use crate::workspace::{ChangedFileSet, RelPath, WorkspaceSnapshot};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Import {
        path: RelPath,
        #[source]
        source: ImportError,
    },

    #[error("`{0}` is not a node of the dependency graph")]
    UnknownNode(String),

    #[error("change set does not match snapshot at `{path}`: {reason}")]
    Inconsistent { path: RelPath, reason: &'static str },
}

/// Directory holding generated test scripts. Never part of the graph.
pub const DEFAULT_TEST_DIR: &str = "tests";

/// Builds and updates graphs for one grammar profile.
#[derive(Debug, Clone)]
pub struct CodeGraphGenerator {
    profile: Arc<dyn GrammarProfile>,
    strict: bool,
    test_dir: String,
}

impl Default for CodeGraphGenerator {
    fn default() -> Self {
        CodeGraphGenerator::new(Arc::new(PythonProfile))
    }
}

impl CodeGraphGenerator {
    pub fn new(profile: Arc<dyn GrammarProfile>) -> Self {
        CodeGraphGenerator {
            profile,
            strict: false,
            test_dir: DEFAULT_TEST_DIR.to_string(),
        }
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn with_test_dir(mut self, dir: &str) -> Self {
        self.test_dir = dir.trim_matches('/').to_string();
        self
    }

    pub fn profile(&self) -> &Arc<dyn GrammarProfile> {
        &self.profile
    }

    pub fn test_dir(&self) -> &str {
        &self.test_dir
    }

    /// Source file of this profile outside the test directory.
    pub fn is_node_path(&self, path: &RelPath) -> bool {
        path.as_str().ends_with(self.profile.module_suffix()) && !path.starts_with_dir(&self.test_dir)
    }

    pub fn build(&self, snapshot: &WorkspaceSnapshot) -> Result<CodeDependencyGraph, GraphError> {
        let mut graph = CodeDependencyGraph {
            nodes: BTreeSet::new(),
            deps: BTreeMap::new(),
            dependents: BTreeMap::new(),
            externals: BTreeMap::new(),
            imports: BTreeMap::new(),
            module_suffix: self.profile.module_suffix().to_string(),
            test_dir: self.test_dir.clone(),
            generation: 0,
        };
        for (path, entry) in snapshot.files() {
            if self.is_node_path(path) {
                graph.nodes.insert(path.clone());
                graph.imports.insert(path.clone(), self.parse(path, &entry.content)?);
            }
        }
        let all: Vec<RelPath> = graph.nodes.iter().cloned().collect();
        for path in &all {
            graph.resolve_node(path, snapshot);
        }
        Ok(graph)
    }

    /// Applies `changes` (which must transform the graph's snapshot into
    /// `snapshot`). Only added and modified files are re-parsed; importers of
    /// appearing or vanishing modules are re-resolved from cached imports.
    pub fn update(
        &self,
        graph: &CodeDependencyGraph,
        changes: &ChangedFileSet,
        snapshot: &WorkspaceSnapshot,
    ) -> Result<CodeDependencyGraph, GraphError> {
        let changes = changes.filtered(|p| self.is_node_path(p));
        self.validate(graph, &changes, snapshot)?;

        let mut next = graph.clone();
        next.generation += 1;

        for path in &changes.removed {
            next.nodes.remove(path);
            next.imports.remove(path);
            next.externals.remove(path);
            for dep in next.deps.remove(path).unwrap_or_default() {
                if let Some(set) = next.dependents.get_mut(&dep) {
                    set.remove(path);
                }
            }
        }
        for path in changes.present() {
            let content = snapshot.content(path).expect("validated above");
            next.nodes.insert(path.clone());
            next.imports.insert(path.clone(), self.parse(path, content)?);
        }

        // Modules whose existence changed may flip importers between internal
        // and external resolution.
        let flipped: BTreeSet<String> = changes
            .added
            .iter()
            .chain(&changes.removed)
            .filter_map(|p| next.module_name(p))
            .collect();
        let mut affected: BTreeSet<RelPath> = changes.present().cloned().collect();
        if !flipped.is_empty() {
            for (path, refs) in &next.imports {
                if refs.iter().any(|r| flipped.contains(r.first_segment())) {
                    affected.insert(path.clone());
                }
            }
        }
        for path in &affected {
            next.resolve_node(path, snapshot);
        }
        Ok(next)
    }

    fn parse(&self, path: &RelPath, content: &str) -> Result<Vec<ImportRef>, GraphError> {
        self.profile
            .extract_imports(content, self.strict)
            .map_err(|source| GraphError::Import {
                path: path.clone(),
                source,
            })
    }

    fn validate(
        &self,
        graph: &CodeDependencyGraph,
        changes: &ChangedFileSet,
        snapshot: &WorkspaceSnapshot,
    ) -> Result<(), GraphError> {
        let fail = |path: &RelPath, reason| {
            Err(GraphError::Inconsistent {
                path: path.clone(),
                reason,
            })
        };
        for path in &changes.added {
            if !snapshot.contains(path) {
                return fail(path, "added file missing from snapshot");
            }
            if graph.nodes.contains(path) {
                return fail(path, "added file is already a node");
            }
        }
        for path in &changes.modified {
            if !snapshot.contains(path) {
                return fail(path, "modified file missing from snapshot");
            }
            if !graph.nodes.contains(path) {
                return fail(path, "modified file is not a node");
            }
        }
        for path in &changes.removed {
            if snapshot.contains(path) {
                return fail(path, "removed file still in snapshot");
            }
            if !graph.nodes.contains(path) {
                return fail(path, "removed file is not a node");
            }
        }
        let expected = graph
            .nodes
            .iter()
            .filter(|p| !changes.removed.contains(*p))
            .chain(&changes.added);
        for path in expected {
            if !snapshot.contains(path) {
                return fail(path, "node missing from snapshot");
            }
        }
        for path in snapshot.paths().filter(|p| self.is_node_path(p)) {
            if !graph.nodes.contains(path) && !changes.added.contains(path) {
                return fail(path, "snapshot file neither a node nor added");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CodeDependencyGraph {
    nodes: BTreeSet<RelPath>,
    /// Out-edges: dependent -> dependencies.
    deps: BTreeMap<RelPath, BTreeSet<RelPath>>,
    /// In-edges: dependency -> dependents.
    dependents: BTreeMap<RelPath, BTreeSet<RelPath>>,
    externals: BTreeMap<RelPath, BTreeSet<String>>,
    imports: BTreeMap<RelPath, Vec<ImportRef>>,
    module_suffix: String,
    test_dir: String,
    generation: u64,
}

/// Ordered test targets with the script that covers each one.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TestingPlan {
    pub ordered_targets: Vec<RelPath>,
    pub per_target_scripts: BTreeMap<RelPath, RelPath>,
    pub final_commands: Vec<String>,
}

/// Files handed to an agent repairing a failure.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContextBundle {
    pub focus_files: Vec<(RelPath, String)>,
    pub neighbor_files: Vec<(RelPath, String)>,
    pub truncated: bool,
}

impl ContextBundle {
    pub fn is_empty(&self) -> bool {
        self.focus_files.is_empty() && self.neighbor_files.is_empty()
    }

    pub fn render(&self) -> String {
        render_files(self.focus_files.iter().chain(&self.neighbor_files))
    }

    pub fn paths(&self) -> impl Iterator<Item = &RelPath> {
        self.focus_files
            .iter()
            .chain(&self.neighbor_files)
            .map(|(p, _)| p)
    }
}

fn render_files<'a>(files: impl Iterator<Item = &'a (RelPath, String)>) -> String {
    let mut out = String::new();
    for (path, content) in files {
        let _ = writeln!(out, "==> {path} <==");
        out.push_str(content);
        if !content.ends_with('\n') {
            out.push('\n');
        }
    }
    out
}

impl CodeDependencyGraph {
    pub fn nodes(&self) -> &BTreeSet<RelPath> {
        &self.nodes
    }

    pub fn contains(&self, path: &RelPath) -> bool {
        self.nodes.contains(path)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn edges(&self) -> impl Iterator<Item = (&RelPath, &RelPath)> {
        self.deps
            .iter()
            .flat_map(|(from, tos)| tos.iter().map(move |to| (from, to)))
    }

    pub fn edge_set(&self) -> BTreeSet<(RelPath, RelPath)> {
        self.edges().map(|(a, b)| (a.clone(), b.clone())).collect()
    }

    pub fn dependencies(&self, path: &RelPath) -> impl Iterator<Item = &RelPath> {
        self.deps.get(path).into_iter().flatten()
    }

    pub fn dependents(&self, path: &RelPath) -> impl Iterator<Item = &RelPath> {
        self.dependents.get(path).into_iter().flatten()
    }

    /// External package names per file; files without any are omitted.
    pub fn externals(&self) -> &BTreeMap<RelPath, BTreeSet<String>> {
        &self.externals
    }

    pub fn all_externals(&self) -> BTreeSet<String> {
        self.externals.values().flatten().cloned().collect()
    }

    pub fn imports_of(&self, path: &RelPath) -> &[ImportRef] {
        self.imports.get(path).map(Vec::as_slice).unwrap_or_default()
    }

    /// Same nodes, edges, and externals. Generation is ignored.
    pub fn same_structure(&self, other: &CodeDependencyGraph) -> bool {
        self.nodes == other.nodes && self.deps == other.deps && self.externals == other.externals
    }

    fn module_name(&self, path: &RelPath) -> Option<String> {
        if !path.is_root_level() {
            return None;
        }
        path.as_str()
            .strip_suffix(self.module_suffix.as_str())
            .map(str::to_string)
    }

    fn resolve_node(&mut self, path: &RelPath, snapshot: &WorkspaceSnapshot) {
        let mut deps = BTreeSet::new();
        let mut externals = BTreeSet::new();
        for import in self.imports.get(path).into_iter().flatten() {
            match resolve(import, snapshot, &self.module_suffix) {
                ResolvedTarget::Internal(target) if &target != path && self.nodes.contains(&target) => {
                    deps.insert(target);
                }
                ResolvedTarget::Internal(_) => {}
                ResolvedTarget::External(name) => {
                    externals.insert(name);
                }
            }
        }
        for old in self.deps.get(path).into_iter().flatten() {
            if let Some(set) = self.dependents.get_mut(old) {
                set.remove(path);
            }
        }
        for new in &deps {
            self.dependents
                .entry(new.clone())
                .or_default()
                .insert(path.clone());
        }
        self.dependents.retain(|_, set| !set.is_empty());
        if deps.is_empty() {
            self.deps.remove(path);
        } else {
            self.deps.insert(path.clone(), deps);
        }
        if externals.is_empty() {
            self.externals.remove(path);
        } else {
            self.externals.insert(path.clone(), externals);
        }
    }

    /// Transitive dependents of `node`, excluding `node` itself.
    pub fn ancestors(&self, node: &RelPath) -> Result<BTreeSet<RelPath>, GraphError> {
        if !self.nodes.contains(node) {
            return Err(GraphError::UnknownNode(node.to_string()));
        }
        Ok(self.ancestors_of_many(std::iter::once(node)))
    }

    fn ancestors_of_many<'a>(&self, seeds: impl Iterator<Item = &'a RelPath>) -> BTreeSet<RelPath> {
        let seeds: Vec<&RelPath> = seeds.collect();
        let mut seen: BTreeSet<RelPath> = BTreeSet::new();
        let mut queue: VecDeque<&RelPath> = seeds.iter().copied().collect();
        while let Some(cur) = queue.pop_front() {
            for parent in self.dependents(cur) {
                if seen.insert(parent.clone()) {
                    queue.push_back(parent);
                }
            }
        }
        // a seed inside a cycle reaches itself
        if seeds.len() == 1 {
            seen.remove(seeds[0]);
        }
        seen
    }

    /// Changed files plus everything that transitively depends on them.
    ///
    /// A removed file contributes only its former dependents: the nodes whose
    /// cached imports still name its module (when the graph is already
    /// updated), or its ancestors (when it is still a node).
    pub fn test_targets(&self, changed: &ChangedFileSet) -> BTreeSet<RelPath> {
        let mut targets = BTreeSet::new();
        for path in changed.present().filter(|p| self.nodes.contains(*p)) {
            targets.insert(path.clone());
            targets.extend(self.ancestors_of_many(std::iter::once(path)));
        }
        for path in &changed.removed {
            if self.nodes.contains(path) {
                targets.extend(self.ancestors_of_many(std::iter::once(path)));
                continue;
            }
            let Some(module) = self.module_name(path) else {
                continue;
            };
            let direct: Vec<&RelPath> = self
                .imports
                .iter()
                .filter(|(_, refs)| refs.iter().any(|r| r.first_segment() == module))
                .map(|(p, _)| p)
                .collect();
            for importer in direct {
                targets.insert(importer.clone());
                targets.extend(self.ancestors_of_many(std::iter::once(importer)));
            }
        }
        targets.retain(|p| self.nodes.contains(p));
        targets
    }

    /// Script path covering `target`: `<test_dir>/test_<stem>.<suffix>` with
    /// directory separators flattened to `_`.
    pub fn script_for(&self, target: &RelPath) -> RelPath {
        let stem = target
            .as_str()
            .strip_suffix(self.module_suffix.as_str())
            .unwrap_or(target.as_str())
            .replace('/', "_");
        RelPath::new(&format!("{}/test_{stem}{}", self.test_dir, self.module_suffix))
            .expect("derived from a valid path")
    }

    /// Dependencies before dependents. Cycles are condensed and their members
    /// listed lexicographically; independent components are ordered by their
    /// smallest path.
    pub fn testing_order(&self, targets: &BTreeSet<RelPath>) -> TestingPlan {
        let members: Vec<&RelPath> = targets.iter().filter(|p| self.nodes.contains(*p)).collect();
        let index: BTreeMap<&RelPath, usize> = members.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let adjacency: Vec<Vec<usize>> = members
            .iter()
            .map(|p| self.dependencies(p).filter_map(|d| index.get(d).copied()).collect())
            .collect();

        let components = strongly_connected(&adjacency);
        let mut comp_of = vec![0usize; members.len()];
        for (c, comp) in components.iter().enumerate() {
            for &v in comp {
                comp_of[v] = c;
            }
        }
        // unmet[c] = dependency components not yet emitted
        let mut unmet = vec![BTreeSet::new(); components.len()];
        let mut waiting: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); components.len()];
        for (u, outs) in adjacency.iter().enumerate() {
            for &v in outs {
                let (cu, cv) = (comp_of[u], comp_of[v]);
                if cu != cv {
                    unmet[cu].insert(cv);
                    waiting[cv].insert(cu);
                }
            }
        }
        // members are indexed in path order, so the smallest index is the smallest path
        let key = |c: usize| *components[c].iter().min().expect("components are non-empty");
        let mut ready: BTreeSet<(usize, usize)> = (0..components.len())
            .filter(|&c| unmet[c].is_empty())
            .map(|c| (key(c), c))
            .collect();
        let mut ordered = Vec::with_capacity(members.len());
        while let Some((_, c)) = ready.pop_first() {
            let mut group: Vec<usize> = components[c].clone();
            group.sort_unstable();
            ordered.extend(group.into_iter().map(|v| members[v].clone()));
            for &dependent in &waiting[c] {
                unmet[dependent].remove(&c);
                if unmet[dependent].is_empty() {
                    ready.insert((key(dependent), dependent));
                }
            }
        }
        let per_target_scripts = ordered
            .iter()
            .map(|t| (t.clone(), self.script_for(t)))
            .collect();
        TestingPlan {
            ordered_targets: ordered,
            per_target_scripts,
            final_commands: Vec::new(),
        }
    }

    /// Files relevant to a failure: workspace files named by the traceback
    /// (deepest frame first), then their direct graph neighbors in path order,
    /// all within `budget` tokens of the rendered bundle.
    pub fn traceback_context(
        &self,
        tb: &Traceback,
        snapshot: &WorkspaceSnapshot,
        budget: usize,
        counter: &dyn TokenCounter,
    ) -> ContextBundle {
        let mut focus: Vec<RelPath> = Vec::new();
        for frame in tb.frames.iter().rev() {
            if let Some(path) = workspace_path(&frame.file, snapshot) {
                if !focus.contains(&path) {
                    focus.push(path);
                }
            }
        }
        self.assemble_context(&focus, snapshot, budget, counter)
    }

    /// Same budgeting as [`traceback_context`](Self::traceback_context) for an
    /// explicit focus list.
    pub fn assemble_context(
        &self,
        focus: &[RelPath],
        snapshot: &WorkspaceSnapshot,
        budget: usize,
        counter: &dyn TokenCounter,
    ) -> ContextBundle {
        let mut bundle = ContextBundle::default();
        for path in focus {
            let Some(content) = snapshot.content(path) else {
                continue;
            };
            match fit(&bundle, path, content, budget, counter, true) {
                Fit::Whole => bundle.focus_files.push((path.clone(), content.to_string())),
                Fit::Clipped(prefix) => {
                    bundle.focus_files.push((path.clone(), prefix));
                    bundle.truncated = true;
                    return bundle;
                }
                Fit::No => {
                    bundle.truncated = true;
                    return bundle;
                }
            }
        }
        let focus_set: BTreeSet<&RelPath> = bundle.focus_files.iter().map(|(p, _)| p).collect();
        let neighbors: BTreeSet<&RelPath> = focus_set
            .iter()
            .flat_map(|p| self.dependencies(p).chain(self.dependents(p)))
            .filter(|n| !focus_set.contains(n))
            .collect();
        for path in neighbors {
            let Some(content) = snapshot.content(path) else {
                continue;
            };
            match fit(&bundle, path, content, budget, counter, false) {
                Fit::Whole => bundle.neighbor_files.push((path.clone(), content.to_string())),
                _ => {
                    bundle.truncated = true;
                    break;
                }
            }
        }
        bundle
    }

    /// Deterministic text form: node lines, then `dependent -> dependency`
    /// lines, each block sorted.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        for node in &self.nodes {
            let _ = writeln!(out, "{node}");
        }
        for (from, to) in self.edges() {
            let _ = writeln!(out, "{from} -> {to}");
        }
        out
    }
}

enum Fit {
    Whole,
    Clipped(String),
    No,
}

fn fit(
    bundle: &ContextBundle,
    path: &RelPath,
    content: &str,
    budget: usize,
    counter: &dyn TokenCounter,
    allow_clip: bool,
) -> Fit {
    let cost = |text: &str| {
        let entry = (path.clone(), text.to_string());
        counter.count(&render_files(
            bundle
                .focus_files
                .iter()
                .chain(&bundle.neighbor_files)
                .chain(std::iter::once(&entry)),
        ))
    };
    if cost(content) <= budget {
        return Fit::Whole;
    }
    if !allow_clip || cost("") > budget {
        return Fit::No;
    }
    let bounds: Vec<usize> = content
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(content.len()))
        .collect();
    let (mut lo, mut hi) = (0usize, bounds.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if cost(&content[..bounds[mid]]) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Fit::Clipped(content[..bounds[lo]].to_string())
}

/// Maps a traceback frame path to a workspace file, if it is one.
fn workspace_path(file: &str, snapshot: &WorkspaceSnapshot) -> Option<RelPath> {
    let path = Path::new(file);
    let rel = if path.is_absolute() {
        let root = snapshot.root();
        let canonical = root.canonicalize().ok();
        let stripped = path
            .strip_prefix(root)
            .ok()
            .or_else(|| canonical.as_deref().and_then(|c| path.strip_prefix(c).ok()))?;
        RelPath::new(stripped.to_str()?).ok()?
    } else {
        RelPath::new(file).ok()?
    };
    snapshot.contains(&rel).then_some(rel)
}

/// Tarjan's algorithm, iterative. Returns components as vertex lists.
fn strongly_connected(adjacency: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adjacency.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut components = Vec::new();

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        // (vertex, next edge position)
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if let Some(&w) = adjacency[v].get(*pos) {
                *pos += 1;
                if index[w] == usize::MAX {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                components.push(comp);
            }
        }
    }
    components
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Frame;
    use crate::tokens::{estimate_tokens, CharEstimate};
    use crate::workspace::FilePayload;

    fn p(s: &str) -> RelPath {
        RelPath::new(s).unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<RelPath> {
        items.iter().map(|s| p(s)).collect()
    }

    fn user_pair() -> WorkspaceSnapshot {
        WorkspaceSnapshot::from_files(
            "/ws",
            0,
            [
                ("user.py", "class User:\n    \"\"\"A user.\"\"\"\n"),
                ("user_manager.py", "import user\n\nclass UserManager:\n    pass\n"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn build_user_pair_edge() {
        let g = CodeGraphGenerator::default().build(&user_pair()).unwrap();
        assert_eq!(g.edge_set(), BTreeSet::from([(p("user_manager.py"), p("user.py"))]));
        assert_eq!(g.export_text(), "user.py\nuser_manager.py\nuser_manager.py -> user.py\n");
    }

    #[test]
    fn build_from_import_edge() {
        let snap = WorkspaceSnapshot::from_files(
            "/ws",
            0,
            [("book.py", "class Book: ...\n"), ("library.py", "from book import Book\n")],
        )
        .unwrap();
        let g = CodeGraphGenerator::default().build(&snap).unwrap();
        assert_eq!(g.edge_set(), BTreeSet::from([(p("library.py"), p("book.py"))]));
    }

    #[test]
    fn build_empty() {
        let g = CodeGraphGenerator::default()
            .build(&WorkspaceSnapshot::empty("/ws", 0))
            .unwrap();
        assert!(g.nodes().is_empty());
        assert_eq!(g.edges().count(), 0);
    }

    #[test]
    fn externals_self_imports_and_test_dir() {
        let snap = WorkspaceSnapshot::from_files(
            "/ws",
            0,
            [
                ("game.py", "import pygame\nimport game\nimport os.path\n"),
                ("tests/test_game.py", "import game\nimport unittest\n"),
            ],
        )
        .unwrap();
        let g = CodeGraphGenerator::default().build(&snap).unwrap();
        assert_eq!(g.nodes(), &set(&["game.py"]));
        assert_eq!(g.edges().count(), 0);
        assert_eq!(
            g.externals()[&p("game.py")],
            BTreeSet::from(["os".to_string(), "pygame".to_string()])
        );
    }

    #[test]
    fn strict_build_propagates_parse_error() {
        let snap = WorkspaceSnapshot::from_files("/ws", 0, [("bad.py", "from import x\n")]).unwrap();
        assert!(CodeGraphGenerator::default().build(&snap).is_ok());
        let err = CodeGraphGenerator::default().strict(true).build(&snap).unwrap_err();
        assert!(matches!(err, GraphError::Import { ref path, .. } if path.as_str() == "bad.py"));
    }

    #[test]
    fn update_empty_changes_bumps_generation() {
        let gen = CodeGraphGenerator::default();
        let g = gen.build(&user_pair()).unwrap();
        let g2 = gen.update(&g, &ChangedFileSet::default(), &user_pair()).unwrap();
        assert!(g2.same_structure(&g));
        assert_eq!(g2.generation(), g.generation() + 1);
    }

    #[test]
    fn update_adds_user_pair_edge() {
        let gen = CodeGraphGenerator::default();
        let base = WorkspaceSnapshot::from_files("/ws", 0, [("user.py", "class User: ...\n")]).unwrap();
        let g = gen.build(&base).unwrap();
        let (next, changes) = base.apply(&[FilePayload::new("user_manager.py", "import user\n").unwrap()]);
        let g2 = gen.update(&g, &changes, &next).unwrap();
        assert_eq!(g2.edge_set(), BTreeSet::from([(p("user_manager.py"), p("user.py"))]));
        assert!(g2.same_structure(&gen.build(&next).unwrap()));
    }

    #[test]
    fn update_flips_importers_when_module_appears_and_vanishes() {
        let gen = CodeGraphGenerator::default();
        let base = WorkspaceSnapshot::from_files("/ws", 0, [("app.py", "import helpers\n")]).unwrap();
        let g = gen.build(&base).unwrap();
        assert!(g.externals()[&p("app.py")].contains("helpers"));

        let (s1, c1) = base.apply(&[FilePayload::new("helpers.py", "X = 1\n").unwrap()]);
        let g1 = gen.update(&g, &c1, &s1).unwrap();
        assert_eq!(g1.edge_set(), BTreeSet::from([(p("app.py"), p("helpers.py"))]));
        assert!(g1.externals().get(&p("app.py")).is_none());

        let (s2, c2) = s1.remove(&[p("helpers.py")]);
        let g2 = gen.update(&g1, &c2, &s2).unwrap();
        assert!(g2.same_structure(&g));
        assert_eq!(g2.test_targets(&c2), set(&["app.py"]));
    }

    #[test]
    fn update_rejects_inconsistent_changes() {
        let gen = CodeGraphGenerator::default();
        let g = gen.build(&user_pair()).unwrap();
        let mut bogus = ChangedFileSet::default();
        bogus.modified.insert(p("ghost.py"));
        assert!(matches!(
            gen.update(&g, &bogus, &user_pair()),
            Err(GraphError::Inconsistent { .. })
        ));
        let mut missing = ChangedFileSet::default();
        missing.added.insert(p("user.py"));
        assert!(gen.update(&g, &missing, &user_pair()).is_err());
        // a new file not declared in the change set
        let (s, _) = user_pair().apply(&[FilePayload::new("x.py", "").unwrap()]);
        assert!(gen.update(&g, &ChangedFileSet::default(), &s).is_err());
    }

    #[test]
    fn ancestors_user_pair() {
        let g = CodeGraphGenerator::default().build(&user_pair()).unwrap();
        assert_eq!(g.ancestors(&p("user.py")).unwrap(), set(&["user_manager.py"]));
        assert!(g.ancestors(&p("user_manager.py")).unwrap().is_empty());
        assert_eq!(
            g.ancestors(&p("nope.py")),
            Err(GraphError::UnknownNode("nope.py".into()))
        );
    }

    #[test]
    fn ancestors_in_cycle_exclude_self() {
        let snap = WorkspaceSnapshot::from_files("/ws", 0, [("a.py", "import b\n"), ("b.py", "import a\n")])
            .unwrap();
        let g = CodeGraphGenerator::default().build(&snap).unwrap();
        assert_eq!(g.ancestors(&p("a.py")).unwrap(), set(&["b.py"]));
    }

    #[test]
    fn test_targets_user_pair() {
        let g = CodeGraphGenerator::default().build(&user_pair()).unwrap();
        let changed = |path: &str| ChangedFileSet {
            modified: set(&[path]),
            ..Default::default()
        };
        assert_eq!(g.test_targets(&changed("user_manager.py")), set(&["user_manager.py"]));
        assert_eq!(g.test_targets(&changed("user.py")), set(&["user.py", "user_manager.py"]));
        assert!(g.test_targets(&ChangedFileSet::default()).is_empty());
    }

    #[test]
    fn testing_order_user_pair_and_singleton() {
        let g = CodeGraphGenerator::default().build(&user_pair()).unwrap();
        let plan = g.testing_order(&set(&["user.py", "user_manager.py"]));
        assert_eq!(plan.ordered_targets, vec![p("user.py"), p("user_manager.py")]);
        assert_eq!(plan.per_target_scripts[&p("user.py")], p("tests/test_user.py"));
        let single = g.testing_order(&set(&["user_manager.py"]));
        assert_eq!(single.ordered_targets, vec![p("user_manager.py")]);
    }

    #[test]
    fn testing_order_condenses_cycles() {
        let snap = WorkspaceSnapshot::from_files(
            "/ws",
            0,
            [
                ("base.py", ""),
                ("c.py", "import b\nimport base\n"),
                ("b.py", "import c\n"),
                ("top.py", "import b\n"),
                ("alone.py", ""),
            ],
        )
        .unwrap();
        let g = CodeGraphGenerator::default().build(&snap).unwrap();
        let all: BTreeSet<RelPath> = g.nodes().clone();
        let order: Vec<String> = g
            .testing_order(&all)
            .ordered_targets
            .iter()
            .map(|p| p.to_string())
            .collect();
        assert_eq!(order, ["alone.py", "base.py", "b.py", "c.py", "top.py"]);
    }

    #[test]
    fn script_names_flatten_dirs() {
        let g = CodeGraphGenerator::default().build(&user_pair()).unwrap();
        assert_eq!(g.script_for(&p("pkg/mod.py")), p("tests/test_pkg_mod.py"));
    }

    fn frame(file: &str, line: usize) -> Frame {
        Frame {
            file: file.into(),
            line,
            symbol: "<module>".into(),
        }
    }

    #[test]
    fn traceback_context_user_pair() {
        let snap = user_pair();
        let g = CodeGraphGenerator::default().build(&snap).unwrap();
        let tb = Traceback {
            frames: vec![frame("/ws/user_manager.py", 3)],
            error_type: "NameError".into(),
            error_message: "x".into(),
        };
        let b = g.traceback_context(&tb, &snap, 10_000, &CharEstimate);
        assert_eq!(b.focus_files.len(), 1);
        assert_eq!(b.focus_files[0].0, p("user_manager.py"));
        assert_eq!(b.neighbor_files.len(), 1);
        assert_eq!(b.neighbor_files[0].0, p("user.py"));
        assert!(!b.truncated);
    }

    #[test]
    fn traceback_context_deepest_first_and_external_frames() {
        let snap = user_pair();
        let g = CodeGraphGenerator::default().build(&snap).unwrap();
        let tb = Traceback {
            frames: vec![
                frame("user_manager.py", 3),
                frame("/usr/lib/python3/json/__init__.py", 10),
                frame("/ws/user.py", 1),
            ],
            ..Default::default()
        };
        let b = g.traceback_context(&tb, &snap, 10_000, &CharEstimate);
        let focus: Vec<_> = b.focus_files.iter().map(|(p, _)| p.as_str()).collect();
        assert_eq!(focus, ["user.py", "user_manager.py"]);
        assert!(b.neighbor_files.is_empty());

        let external_only = Traceback {
            frames: vec![frame("/usr/lib/python3/json/__init__.py", 10)],
            ..Default::default()
        };
        let b = g.traceback_context(&external_only, &snap, 10_000, &CharEstimate);
        assert!(b.is_empty());
        assert!(!b.truncated);
    }

    #[test]
    fn traceback_context_clips_focus_tail_first() {
        let big = "x = 1\n".repeat(200);
        let snap = WorkspaceSnapshot::from_files("/ws", 0, [("big.py", big.as_str()), ("dep.py", "")])
            .unwrap();
        let g = CodeGraphGenerator::default().build(&snap).unwrap();
        let tb = Traceback {
            frames: vec![frame("big.py", 1)],
            ..Default::default()
        };
        let budget = 50;
        let b = g.traceback_context(&tb, &snap, budget, &CharEstimate);
        assert!(b.truncated);
        let rendered = b.render();
        assert!(estimate_tokens(&rendered) <= budget);
        assert!(big.starts_with(&b.focus_files[0].1));
        assert!(b.focus_files[0].1.len() < big.len());
    }
}
