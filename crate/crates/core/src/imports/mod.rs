//! Import extraction and resolution.
//!
//! This is the only source of edges for the code dependency graph. Grammar
//! support is pluggable through [`GrammarProfile`]; the shipped profile is
//! [`PythonProfile`].

mod python;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::workspace::{RelPath, WorkspaceSnapshot};

pub use python::PythonProfile;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImportError {
    #[error("unknown grammar profile `{0}`")]
    UnknownProfile(String),

    #[error("line {line}: unparseable import statement `{text}`")]
    Parse { line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImportKind {
    /// `import X`
    WholeModule,
    /// `from X import ...`
    FromModule,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImportRef {
    /// Dotted module path as written, without leading dots.
    pub raw_module: String,
    pub kind: ImportKind,
    /// 1-based.
    pub line: usize,
    /// Written with leading dots (`from . import x`, `from .x import y`).
    pub relative: bool,
}

impl ImportRef {
    pub fn first_segment(&self) -> &str {
        self.raw_module.split('.').next().unwrap_or(&self.raw_module)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ResolvedTarget {
    Internal(RelPath),
    External(String),
}

/// A function or method definition found by a profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    /// Line of the `def` keyword, 1-based.
    pub line: usize,
    pub has_docstring: bool,
    /// Body holds nothing but a no-op or not-implemented statement
    /// (after an optional docstring).
    pub placeholder_only: bool,
}

/// Language-specific source analysis.
pub trait GrammarProfile: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;

    /// Suffix that maps a module name to a file, e.g. `.py`.
    fn module_suffix(&self) -> &str;

    /// Every import statement in source order, duplicates preserved. In strict
    /// mode a statement that starts like an import but does not parse is an
    /// error; otherwise it is skipped.
    fn extract_imports(&self, source: &str, strict: bool) -> Result<Vec<ImportRef>, ImportError>;

    fn functions(&self, source: &str) -> Vec<FunctionDef>;
}

#[derive(Debug, Clone)]
pub struct ProfileRegistry {
    profiles: BTreeMap<String, Arc<dyn GrammarProfile>>,
}

impl Default for ProfileRegistry {
    fn default() -> Self {
        let mut reg = ProfileRegistry {
            profiles: BTreeMap::new(),
        };
        reg.register(Arc::new(PythonProfile));
        reg
    }
}

impl ProfileRegistry {
    pub fn register(&mut self, profile: Arc<dyn GrammarProfile>) {
        self.profiles.insert(profile.id().to_string(), profile);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn GrammarProfile>, ImportError> {
        self.profiles
            .get(id)
            .cloned()
            .ok_or_else(|| ImportError::UnknownProfile(id.to_string()))
    }

    pub fn extract_imports(
        &self,
        source: &str,
        profile: &str,
        strict: bool,
    ) -> Result<Vec<ImportRef>, ImportError> {
        self.get(profile)?.extract_imports(source, strict)
    }
}

/// Extracts imports with the default registry.
pub fn extract_imports(source: &str, profile: &str) -> Result<Vec<ImportRef>, ImportError> {
    ProfileRegistry::default().extract_imports(source, profile, false)
}

/// Maps the first dotted segment to `<segment><suffix>` at the workspace
/// root. Anything else is an external package.
pub fn resolve(import: &ImportRef, snapshot: &WorkspaceSnapshot, suffix: &str) -> ResolvedTarget {
    let first = import.first_segment();
    match RelPath::new(&format!("{first}{suffix}")) {
        Ok(candidate) if candidate.is_root_level() && snapshot.contains(&candidate) => {
            ResolvedTarget::Internal(candidate)
        }
        _ => ResolvedTarget::External(first.to_string()),
    }
}
