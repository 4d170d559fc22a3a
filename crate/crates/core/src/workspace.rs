//! Versioned on-disk project state.
//!
//! A [`WorkspaceSnapshot`] is an immutable map of workspace-relative paths to
//! file contents and their SHA-256 digests. Agents never touch the disk
//! directly: their output is turned into [`FilePayload`]s, applied to a
//! snapshot, and only then written out. Every application reports a
//! [`ChangedFileSet`], which is what drives graph updates and test selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{0} is not a UTF-8 text file")]
    Encoding(String),

    #[error("invalid workspace path `{path}`: {reason}")]
    InvalidPath { path: String, reason: &'static str },
}

impl WorkspaceError {
    fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        WorkspaceError::Io {
            path: path.into(),
            source,
        }
    }
}

/// A normalized, workspace-relative path using `/` separators.
///
/// Construction rejects absolute paths and any `..` component, so a `RelPath`
/// can never escape the workspace root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelPath(String);

impl RelPath {
    pub fn new(raw: &str) -> Result<Self, WorkspaceError> {
        let invalid = |reason| WorkspaceError::InvalidPath {
            path: raw.to_string(),
            reason,
        };
        let unified = raw.trim().replace('\\', "/");
        if unified.starts_with('/') || unified.as_bytes().get(1) == Some(&b':') {
            return Err(invalid("absolute paths are not allowed"));
        }
        let mut parts = Vec::new();
        for part in unified.split('/') {
            match part {
                "" | "." => {}
                ".." => return Err(invalid("parent-directory components are not allowed")),
                p if p.chars().any(char::is_control) => {
                    return Err(invalid("control characters are not allowed"))
                }
                p => parts.push(p),
            }
        }
        if parts.is_empty() {
            return Err(invalid("path is empty"));
        }
        Ok(RelPath(parts.join("/")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Final path component.
    pub fn file_name(&self) -> &str {
        self.0.rsplit('/').next().unwrap_or(&self.0)
    }

    /// True when the file sits directly under the workspace root.
    pub fn is_root_level(&self) -> bool {
        !self.0.contains('/')
    }

    pub fn starts_with_dir(&self, dir: &str) -> bool {
        self.0
            .strip_prefix(dir)
            .is_some_and(|rest| rest.starts_with('/'))
    }

    pub fn to_path(&self, root: &Path) -> PathBuf {
        self.0.split('/').fold(root.to_path_buf(), |p, c| p.join(c))
    }
}

impl fmt::Display for RelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for RelPath {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl TryFrom<&str> for RelPath {
    type Error = WorkspaceError;

    fn try_from(value: &str) -> Result<Self, Self::Error> {
        RelPath::new(value)
    }
}

/// SHA-256 of a file's bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentDigest([u8; 32]);

impl ContentDigest {
    pub fn of(bytes: &[u8]) -> Self {
        ContentDigest(Sha256::digest(bytes).into())
    }
}

impl fmt::Display for ContentDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for ContentDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentDigest({})", &hex::encode(self.0)[..12])
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct FileEntry {
    pub content: String,
    pub digest: ContentDigest,
}

impl FileEntry {
    pub fn new(content: String) -> Self {
        let digest = ContentDigest::of(content.as_bytes());
        FileEntry { content, digest }
    }
}

/// A file write produced by an agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilePayload {
    pub path: RelPath,
    pub content: String,
}

impl FilePayload {
    pub fn new(path: &str, content: impl Into<String>) -> Result<Self, WorkspaceError> {
        Ok(FilePayload {
            path: RelPath::new(path)?,
            content: content.into(),
        })
    }
}

/// Which files belong in a snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFilter {
    pub suffixes: Vec<String>,
}

impl Default for SourceFilter {
    fn default() -> Self {
        SourceFilter {
            suffixes: vec![".py".to_string()],
        }
    }
}

impl SourceFilter {
    pub fn matches(&self, path: &str) -> bool {
        self.suffixes.iter().any(|s| path.ends_with(s.as_str()))
    }
}

/// Directories never walked: engine state (`.pool`, `.logs`, `.sprints`) and
/// interpreter caches.
fn is_skipped_dir(name: &str) -> bool {
    name.starts_with('.') || name == "__pycache__"
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ChangedFileSet {
    pub added: BTreeSet<RelPath>,
    pub modified: BTreeSet<RelPath>,
    pub removed: BTreeSet<RelPath>,
}

impl ChangedFileSet {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.modified.is_empty() && self.removed.is_empty()
    }

    /// Added and modified paths, i.e. files that exist after the change.
    pub fn present(&self) -> impl Iterator<Item = &RelPath> {
        self.added.iter().chain(self.modified.iter())
    }

    pub fn len(&self) -> usize {
        self.added.len() + self.modified.len() + self.removed.len()
    }

    /// Restricts every set to paths accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&RelPath) -> bool) -> ChangedFileSet {
        let pick = |s: &BTreeSet<RelPath>| s.iter().filter(|p| keep(p)).cloned().collect();
        ChangedFileSet {
            added: pick(&self.added),
            modified: pick(&self.modified),
            removed: pick(&self.removed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkspaceSnapshot {
    root: PathBuf,
    files: BTreeMap<RelPath, Arc<FileEntry>>,
    sprint_tag: u32,
}

impl WorkspaceSnapshot {
    pub fn empty(root: impl Into<PathBuf>, sprint_tag: u32) -> Self {
        WorkspaceSnapshot {
            root: root.into(),
            files: BTreeMap::new(),
            sprint_tag,
        }
    }

    /// Builds a snapshot from in-memory contents. Used by tests and by callers
    /// that never touch disk.
    pub fn from_files<'a>(
        root: impl Into<PathBuf>,
        sprint_tag: u32,
        files: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, WorkspaceError> {
        let mut snap = WorkspaceSnapshot::empty(root, sprint_tag);
        for (path, content) in files {
            snap.files
                .insert(RelPath::new(path)?, Arc::new(FileEntry::new(content.to_string())));
        }
        Ok(snap)
    }

    /// Reads every regular file under `root` accepted by `filter`.
    pub fn capture(
        root: &Path,
        sprint_tag: u32,
        filter: &SourceFilter,
    ) -> Result<Self, WorkspaceError> {
        let meta = fs::metadata(root).map_err(|e| WorkspaceError::io(root, e))?;
        if !meta.is_dir() {
            return Err(WorkspaceError::io(
                root,
                io::Error::new(io::ErrorKind::NotADirectory, "workspace root is not a directory"),
            ));
        }
        let mut files = BTreeMap::new();
        let walker = WalkDir::new(root)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| {
                e.depth() == 0
                    || !e.file_type().is_dir()
                    || !is_skipped_dir(&e.file_name().to_string_lossy())
            });
        for entry in walker {
            let entry = entry.map_err(|e| {
                let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.into());
                WorkspaceError::io(path, e.into())
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry
                .path()
                .strip_prefix(root)
                .expect("walkdir yields paths under root");
            let rel_str = rel
                .to_str()
                .ok_or_else(|| WorkspaceError::Encoding(rel.to_string_lossy().into_owned()))?;
            if !filter.matches(rel_str) {
                continue;
            }
            let rel_path = RelPath::new(rel_str)?;
            let bytes = fs::read(entry.path()).map_err(|e| WorkspaceError::io(entry.path(), e))?;
            if bytes.contains(&0) {
                return Err(WorkspaceError::Encoding(rel_path.to_string()));
            }
            let content = String::from_utf8(bytes)
                .map_err(|_| WorkspaceError::Encoding(rel_path.to_string()))?;
            files.insert(rel_path, Arc::new(FileEntry::new(content)));
        }
        Ok(WorkspaceSnapshot {
            root: root.to_path_buf(),
            files,
            sprint_tag,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn sprint_tag(&self) -> u32 {
        self.sprint_tag
    }

    pub fn with_sprint_tag(&self, sprint_tag: u32) -> Self {
        WorkspaceSnapshot {
            sprint_tag,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn contains(&self, path: &RelPath) -> bool {
        self.files.contains_key(path)
    }

    pub fn get(&self, path: &RelPath) -> Option<&FileEntry> {
        self.files.get(path).map(Arc::as_ref)
    }

    pub fn content(&self, path: &RelPath) -> Option<&str> {
        self.get(path).map(|e| e.content.as_str())
    }

    pub fn paths(&self) -> impl Iterator<Item = &RelPath> {
        self.files.keys()
    }

    pub fn files(&self) -> impl Iterator<Item = (&RelPath, &FileEntry)> {
        self.files.iter().map(|(p, e)| (p, e.as_ref()))
    }

    /// Digest map, the comparison key for "same workspace".
    pub fn digests(&self) -> BTreeMap<RelPath, ContentDigest> {
        self.files.iter().map(|(p, e)| (p.clone(), e.digest)).collect()
    }

    /// Applies agent writes and classifies each one. Byte-identical rewrites
    /// are not reported.
    pub fn apply(&self, payloads: &[FilePayload]) -> (WorkspaceSnapshot, ChangedFileSet) {
        let mut next = self.clone();
        for payload in payloads {
            next.files.insert(
                payload.path.clone(),
                Arc::new(FileEntry::new(payload.content.clone())),
            );
        }
        let changes = diff(self, &next);
        (next, changes)
    }

    /// Drops the given paths. Missing paths are ignored.
    pub fn remove(&self, paths: &[RelPath]) -> (WorkspaceSnapshot, ChangedFileSet) {
        let mut next = self.clone();
        for p in paths {
            next.files.remove(p);
        }
        let changes = diff(self, &next);
        (next, changes)
    }

    /// Writes the listed files under `self.root()`, creating directories as
    /// needed, and deletes the `removed` ones.
    pub fn write_changes(&self, changes: &ChangedFileSet) -> Result<(), WorkspaceError> {
        for path in changes.present() {
            if let Some(entry) = self.files.get(path) {
                write_file(&path.to_path(&self.root), &entry.content)?;
            }
        }
        for path in &changes.removed {
            let target = path.to_path(&self.root);
            match fs::remove_file(&target) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(WorkspaceError::io(target, e)),
            }
        }
        Ok(())
    }

    /// One digest for the whole tree: SHA-256 over sorted (path, digest) pairs.
    pub fn tree_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (path, entry) in &self.files {
            hasher.update(path.as_str().as_bytes());
            hasher.update([0u8]);
            hasher.update(entry.digest.0);
        }
        hex::encode(hasher.finalize())
    }

    /// Writes every file of the snapshot under `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<(), WorkspaceError> {
        for (path, entry) in &self.files {
            write_file(&path.to_path(dir), &entry.content)?;
        }
        Ok(())
    }

    /// Copies the snapshot to `<root>/.sprints/<tag>/`.
    pub fn archive(&self) -> Result<PathBuf, WorkspaceError> {
        let dir = self
            .root
            .join(".sprints")
            .join(self.sprint_tag.to_string());
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| WorkspaceError::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| WorkspaceError::io(&dir, e))?;
        self.write_all(&dir)?;
        Ok(dir)
    }
}

fn write_file(target: &Path, content: &str) -> Result<(), WorkspaceError> {
    if let Some(parent) = target.parent() {
        fs::create_dir_all(parent).map_err(|e| WorkspaceError::io(parent, e))?;
    }
    fs::write(target, content).map_err(|e| WorkspaceError::io(target, e))
}

/// Added = only in `b`, removed = only in `a`, modified = shared with a
/// different digest.
pub fn diff(a: &WorkspaceSnapshot, b: &WorkspaceSnapshot) -> ChangedFileSet {
    let mut out = ChangedFileSet::default();
    for (path, entry) in &b.files {
        match a.files.get(path) {
            None => {
                out.added.insert(path.clone());
            }
            Some(old) if old.digest != entry.digest => {
                out.modified.insert(path.clone());
            }
            Some(_) => {}
        }
    }
    for path in a.files.keys() {
        if !b.files.contains_key(path) {
            out.removed.insert(path.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> RelPath {
        RelPath::new(s).unwrap()
    }

    #[test]
    fn relpath_normalizes() {
        assert_eq!(p("./a//b.py").as_str(), "a/b.py");
        assert_eq!(p("a\\b.py").as_str(), "a/b.py");
        assert!(p("user.py").is_root_level());
        assert!(!p("tests/test_user.py").is_root_level());
        assert!(p("tests/test_user.py").starts_with_dir("tests"));
        assert!(!p("testsuite.py").starts_with_dir("tests"));
    }

    #[test]
    fn relpath_rejects_escapes() {
        for bad in ["../x.py", "a/../../x.py", "/etc/passwd", "C:/x.py", "", "./", "a/\0.py"] {
            assert!(
                matches!(RelPath::new(bad), Err(WorkspaceError::InvalidPath { .. })),
                "{bad:?} accepted"
            );
        }
    }

    #[test]
    fn capture_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        let snap = WorkspaceSnapshot::capture(dir.path(), 0, &SourceFilter::default()).unwrap();
        assert!(snap.is_empty());
    }

    #[test]
    fn capture_lists_source_files_only() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("user.py"), "class User:\n    pass\n").unwrap();
        fs::write(dir.path().join("user_manager.py"), "import user\n").unwrap();
        fs::write(dir.path().join("notes.md"), "# notes\n").unwrap();
        fs::create_dir_all(dir.path().join(".pool")).unwrap();
        fs::write(dir.path().join(".pool/hidden.py"), "x = 1\n").unwrap();
        fs::create_dir_all(dir.path().join("__pycache__")).unwrap();
        fs::write(dir.path().join("__pycache__/user.py"), "x = 1\n").unwrap();
        let snap = WorkspaceSnapshot::capture(dir.path(), 1, &SourceFilter::default()).unwrap();
        let paths: Vec<_> = snap.paths().map(RelPath::as_str).collect();
        assert_eq!(paths, ["user.py", "user_manager.py"]);
        assert_eq!(snap.sprint_tag(), 1);
    }

    #[test]
    fn capture_nested_matches_directory_walk() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("a/deeper")).unwrap();
        fs::write(dir.path().join("a/b.src"), "x\n").unwrap();
        fs::write(dir.path().join("a/deeper/c.src"), "y\n").unwrap();
        fs::write(dir.path().join("top.src"), "z\n").unwrap();
        let filter = SourceFilter {
            suffixes: vec![".src".into()],
        };
        let snap = WorkspaceSnapshot::capture(dir.path(), 0, &filter).unwrap();

        // Independent walk with std::fs as the oracle.
        fn walk(base: &Path, dir: &Path, out: &mut Vec<String>) {
            for e in fs::read_dir(dir).unwrap() {
                let e = e.unwrap();
                if e.file_type().unwrap().is_dir() {
                    walk(base, &e.path(), out);
                } else {
                    let rel = e.path().strip_prefix(base).unwrap().to_owned();
                    out.push(rel.components().map(|c| c.as_os_str().to_str().unwrap()).collect::<Vec<_>>().join("/"));
                }
            }
        }
        let mut expected = Vec::new();
        walk(dir.path(), dir.path(), &mut expected);
        expected.sort();
        let got: Vec<_> = snap.paths().map(|p| p.to_string()).collect();
        assert_eq!(got, expected);
        assert!(got.contains(&"a/b.src".to_string()));
    }

    #[test]
    fn capture_rejects_binary() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("blob.py"), [0x66u8, 0x00, 0xff]).unwrap();
        let err = WorkspaceSnapshot::capture(dir.path(), 0, &SourceFilter::default()).unwrap_err();
        assert!(matches!(err, WorkspaceError::Encoding(ref p) if p == "blob.py"));
    }

    #[test]
    fn capture_missing_root_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = WorkspaceSnapshot::capture(&dir.path().join("nope"), 0, &SourceFilter::default())
            .unwrap_err();
        assert!(matches!(err, WorkspaceError::Io { .. }));
    }

    #[test]
    fn apply_empty_is_identity() {
        let snap = WorkspaceSnapshot::from_files("/ws", 0, [("user.py", "x = 1\n")]).unwrap();
        let (next, changes) = snap.apply(&[]);
        assert!(changes.is_empty());
        assert_eq!(next.digests(), snap.digests());
    }

    #[test]
    fn apply_classifies_added_and_skips_identical() {
        let snap = WorkspaceSnapshot::from_files("/ws", 0, [("user.py", "class User: ...\n")]).unwrap();
        let (next, changes) = snap.apply(&[
            FilePayload::new("user_manager.py", "import user\n").unwrap(),
            FilePayload::new("user.py", "class User: ...\n").unwrap(),
        ]);
        assert_eq!(changes.added, BTreeSet::from([p("user_manager.py")]));
        assert!(changes.modified.is_empty());
        assert_eq!(
            next.get(&p("user.py")).unwrap().digest,
            snap.get(&p("user.py")).unwrap().digest
        );
    }

    #[test]
    fn diff_reflexive_and_added() {
        let a = WorkspaceSnapshot::from_files("/ws", 0, [("user.py", "x\n")]).unwrap();
        assert!(diff(&a, &a).is_empty());
        let b = WorkspaceSnapshot::from_files("/ws", 0, [("user.py", "x\n"), ("user_manager.py", "import user\n")])
            .unwrap();
        assert_eq!(diff(&a, &b).added, BTreeSet::from([p("user_manager.py")]));
        assert_eq!(diff(&b, &a).removed, BTreeSet::from([p("user_manager.py")]));
    }

    #[test]
    fn write_and_recapture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let snap = WorkspaceSnapshot::from_files(
            dir.path(),
            3,
            [("a.py", "print('a')\n"), ("pkg/b.py", "import a\n")],
        )
        .unwrap();
        snap.write_all(dir.path()).unwrap();
        let back = WorkspaceSnapshot::capture(dir.path(), 3, &SourceFilter::default()).unwrap();
        assert_eq!(back.digests(), snap.digests());
        let archived = snap.archive().unwrap();
        assert!(archived.join("pkg/b.py").is_file());
    }

    fn snapshot_strategy() -> impl Strategy<Value = BTreeMap<String, String>> {
        proptest::collection::btree_map("[a-e]{1,2}\\.py", "[xy]{0,3}", 0..8)
    }

    fn snap_of(files: &BTreeMap<String, String>) -> WorkspaceSnapshot {
        WorkspaceSnapshot::from_files("/ws", 0, files.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .unwrap()
    }

    proptest! {
        #[test]
        fn diff_matches_set_algebra(a in snapshot_strategy(), b in snapshot_strategy()) {
            let d = diff(&snap_of(&a), &snap_of(&b));
            let set = |it: Vec<&String>| it.into_iter().map(|s| p(s)).collect::<BTreeSet<_>>();
            prop_assert_eq!(&d.added, &set(b.keys().filter(|k| !a.contains_key(*k)).collect()));
            prop_assert_eq!(&d.removed, &set(a.keys().filter(|k| !b.contains_key(*k)).collect()));
            prop_assert_eq!(&d.modified, &set(a.keys().filter(|k| b.get(*k).is_some_and(|v| v != &a[*k])).collect()));
            prop_assert!(d.added.is_disjoint(&d.modified) && d.added.is_disjoint(&d.removed) && d.modified.is_disjoint(&d.removed));

            let r = diff(&snap_of(&b), &snap_of(&a));
            prop_assert_eq!(&r.added, &d.removed);
            prop_assert_eq!(&r.removed, &d.added);
            prop_assert_eq!(&r.modified, &d.modified);
        }

        #[test]
        fn apply_then_diff_reproduces_changes(a in snapshot_strategy(), writes in snapshot_strategy()) {
            let base = snap_of(&a);
            let payloads: Vec<_> = writes.iter().map(|(k, v)| FilePayload::new(k, v.clone()).unwrap()).collect();
            let (next, changes) = base.apply(&payloads);
            prop_assert_eq!(diff(&base, &next), changes.clone());
            prop_assert!(changes.removed.is_empty());
        }
    }
}
