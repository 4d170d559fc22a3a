//! Random Python workspaces with their import ground truth.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use agilecoder::workspace::WorkspaceSnapshot;

/// Module names files may import. Only some exist as files.
pub const MODULES: &[&str] = &[
    "user", "store", "api", "util", "model", "view", "cache", "auth", "db", "log", "cli", "core",
    "io_helpers", "parse", "render", "net", "queue", "task", "job", "main", "os", "sys", "json",
    "pygame", "numpy", "requests",
];

#[derive(Debug, Clone, Default)]
pub struct RandomWorkspace {
    pub files: BTreeMap<String, String>,
    /// First segment of every module each file really imports.
    pub imports: BTreeMap<String, BTreeSet<String>>,
}

impl RandomWorkspace {
    pub fn snapshot(&self) -> WorkspaceSnapshot {
        WorkspaceSnapshot::from_files(
            "/ws",
            0,
            self.files.iter().map(|(p, c)| (p.as_str(), c.as_str())),
        )
        .unwrap()
    }

    /// Graph nodes: Python files outside the test directory.
    pub fn nodes(&self) -> BTreeSet<String> {
        self.files
            .keys()
            .filter(|p| p.ends_with(".py") && !p.starts_with("tests/"))
            .cloned()
            .collect()
    }

    /// Edges by exhaustive pairwise check over the ground truth.
    pub fn oracle_edges(&self) -> BTreeSet<(String, String)> {
        let nodes = self.nodes();
        let mut edges = BTreeSet::new();
        for from in &nodes {
            let wanted = self.imports.get(from).cloned().unwrap_or_default();
            for to in &nodes {
                if from == to || to.contains('/') {
                    continue;
                }
                let module = to.trim_end_matches(".py");
                if wanted.contains(module) {
                    edges.insert((from.clone(), to.clone()));
                }
            }
        }
        edges
    }

    pub fn oracle_externals(&self) -> BTreeMap<String, BTreeSet<String>> {
        let root: BTreeSet<String> = self
            .nodes()
            .into_iter()
            .filter(|p| !p.contains('/'))
            .map(|p| p.trim_end_matches(".py").to_string())
            .collect();
        let mut out = BTreeMap::new();
        for node in self.nodes() {
            let ext: BTreeSet<String> = self
                .imports
                .get(&node)
                .into_iter()
                .flatten()
                .filter(|m| !root.contains(*m))
                .cloned()
                .collect();
            if !ext.is_empty() {
                out.insert(node, ext);
            }
        }
        out
    }
}

/// Transitive dependents by Floyd-Warshall over the oracle edges.
pub fn oracle_ancestors(nodes: &BTreeSet<String>, edges: &BTreeSet<(String, String)>) -> BTreeMap<String, BTreeSet<String>> {
    let idx: Vec<&String> = nodes.iter().collect();
    let pos = |s: &String| idx.iter().position(|x| *x == s).unwrap();
    let n = idx.len();
    let mut reach = vec![vec![false; n]; n];
    for (a, b) in edges {
        reach[pos(a)][pos(b)] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                let via = reach[k].clone();
                for (cell, &hop) in reach[i].iter_mut().zip(&via) {
                    *cell |= hop;
                }
            }
        }
    }
    idx.iter()
        .enumerate()
        .map(|(t, name)| {
            let anc = (0..n)
                .filter(|&i| i != t && reach[i][t])
                .map(|i| idx[i].clone())
                .collect();
            ((*name).clone(), anc)
        })
        .collect()
}

fn import_statement<R: Rng>(rng: &mut R, module: &str) -> String {
    match rng.gen_range(0..8) {
        0 => format!("import {module}"),
        1 => format!("import {module}.sub"),
        2 => format!("import {module} as alias_{module}"),
        3 => format!("from {module} import thing"),
        4 => format!("from {module}.inner import (\n    a,\n    b,\n)"),
        5 => format!("x = 1; import {module}"),
        6 => format!("def load_{module}():\n    import {module}\n    return {module}"),
        _ => format!("import json, {module}"),
    }
}

const NOISE: &[&str] = &[
    "# import ghost",
    "TEXT = 'import ghost'",
    "\"\"\"Docstring that mentions\nimport ghost\n\"\"\"",
    "def helper():\n    return 1",
    "important = 3",
];

/// Generates one file body importing `modules`, returning the truth set.
pub fn file_body<R: Rng>(rng: &mut R, modules: &[&str]) -> (String, BTreeSet<String>) {
    let mut parts = Vec::new();
    let mut truth = BTreeSet::new();
    for m in modules {
        let stmt = import_statement(rng, m);
        if stmt.starts_with("import json,") {
            truth.insert("json".to_string());
        }
        truth.insert(m.to_string());
        parts.push(stmt);
    }
    for _ in 0..rng.gen_range(0..3) {
        parts.push(NOISE.choose(rng).unwrap().to_string());
    }
    parts.shuffle(rng);
    (parts.join("\n") + "\n", truth)
}

fn random_path<R: Rng>(rng: &mut R) -> String {
    let m = MODULES[rng.gen_range(0..20)];
    match rng.gen_range(0..10) {
        0 => format!("pkg/{m}.py"),
        1 => format!("tests/test_{m}.py"),
        2 => format!("{m}.txt"),
        _ => format!("{m}.py"),
    }
}

pub fn random_imports<R: Rng>(rng: &mut R) -> Vec<&'static str> {
    let k = rng.gen_range(0..5);
    MODULES.choose_multiple(rng, k).copied().collect()
}

/// Up to `max_files` files, imports drawn freely (cycles possible).
pub fn random_workspace<R: Rng>(rng: &mut R, max_files: usize) -> RandomWorkspace {
    let mut ws = RandomWorkspace::default();
    let count = rng.gen_range(1..=max_files);
    for _ in 0..count {
        let path = random_path(rng);
        set_random_file(rng, &mut ws, &path);
    }
    ws
}

pub fn set_random_file<R: Rng>(rng: &mut R, ws: &mut RandomWorkspace, path: &str) {
    let modules = random_imports(rng);
    let (body, truth) = file_body(rng, &modules);
    ws.files.insert(path.to_string(), body);
    if path.ends_with(".py") {
        ws.imports.insert(path.to_string(), truth);
    } else {
        ws.imports.remove(path);
    }
}

/// Root-level modules `m0..mN` where `mi` only imports `mj` with `j < i`.
pub fn random_dag<R: Rng>(rng: &mut R, max_files: usize) -> RandomWorkspace {
    let mut ws = RandomWorkspace::default();
    let n = rng.gen_range(1..=max_files);
    for i in 0..n {
        let names: Vec<String> = (0..i).filter(|_| rng.gen_bool(0.3)).map(|j| format!("m{j}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let (body, truth) = file_body(rng, &refs);
        ws.files.insert(format!("m{i}.py"), body);
        ws.imports.insert(format!("m{i}.py"), truth);
    }
    ws
}
