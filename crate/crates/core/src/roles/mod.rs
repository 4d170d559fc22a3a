//! The five agent roles, their prompt templates, and artifact parsers.
//!
//! Templates are plain text with `{{name}}` placeholders. Built-in copies
//! live in `prompts/` and are compiled in; a directory given at startup can
//! replace any of them file by file.

pub mod parsers;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

pub use parsers::{
    BacklogTask, Classification, ParseError, ReviewFinding, Severity, TaskState, TestFailure,
    TestReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RoleId {
    ProductManager,
    ScrumMaster,
    Developer,
    SeniorDeveloper,
    Tester,
}

impl RoleId {
    pub const ALL: [RoleId; 5] = [
        RoleId::ProductManager,
        RoleId::ScrumMaster,
        RoleId::Developer,
        RoleId::SeniorDeveloper,
        RoleId::Tester,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleId::ProductManager => "ProductManager",
            RoleId::ScrumMaster => "ScrumMaster",
            RoleId::Developer => "Developer",
            RoleId::SeniorDeveloper => "SeniorDeveloper",
            RoleId::Tester => "Tester",
        }
    }

    /// Stem of the template files for this role.
    pub fn file_stem(self) -> &'static str {
        match self {
            RoleId::ProductManager => "product_manager",
            RoleId::ScrumMaster => "scrum_master",
            RoleId::Developer => "developer",
            RoleId::SeniorDeveloper => "senior_developer",
            RoleId::Tester => "tester",
        }
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoleId {
    type Err = RoleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RoleId::ALL
            .into_iter()
            .find(|r| r.as_str() == s || r.file_stem() == s)
            .ok_or_else(|| RoleError::UnknownRole(s.to_string()))
    }
}

/// Every kind of conversation the engine holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    ProductPlanning,
    SprintPlanning,
    Development,
    ReviewBasics,
    ReviewBacklog,
    ReviewCriteria,
    /// All three review steps in one session (ablation mode).
    ReviewCombined,
    Correction,
    Testing,
    BugFix,
    SprintReview,
    Documentation,
}

impl Phase {
    pub const ALL: [Phase; 12] = [
        Phase::ProductPlanning,
        Phase::SprintPlanning,
        Phase::Development,
        Phase::ReviewBasics,
        Phase::ReviewBacklog,
        Phase::ReviewCriteria,
        Phase::ReviewCombined,
        Phase::Correction,
        Phase::Testing,
        Phase::BugFix,
        Phase::SprintReview,
        Phase::Documentation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::ProductPlanning => "product_planning",
            Phase::SprintPlanning => "sprint_planning",
            Phase::Development => "development",
            Phase::ReviewBasics => "review_basics",
            Phase::ReviewBacklog => "review_backlog",
            Phase::ReviewCriteria => "review_criteria",
            Phase::ReviewCombined => "review_combined",
            Phase::Correction => "correction",
            Phase::Testing => "testing",
            Phase::BugFix => "bug_fix",
            Phase::SprintReview => "sprint_review",
            Phase::Documentation => "documentation",
        }
    }

    /// (instructor, assistant) of the session held in this phase.
    pub fn participants(self) -> (RoleId, RoleId) {
        use RoleId::*;
        match self {
            Phase::ProductPlanning | Phase::SprintPlanning | Phase::Documentation => {
                (ProductManager, ScrumMaster)
            }
            Phase::Development => (ProductManager, Developer),
            Phase::ReviewBasics
            | Phase::ReviewBacklog
            | Phase::ReviewCriteria
            | Phase::ReviewCombined => (Developer, SeniorDeveloper),
            Phase::Correction => (SeniorDeveloper, Developer),
            Phase::Testing => (Developer, Tester),
            Phase::BugFix => (Tester, Developer),
            Phase::SprintReview => (ScrumMaster, ProductManager),
        }
    }

    /// Role whose template seeds the session and whose pool view it gets.
    pub fn owner(self) -> RoleId {
        use RoleId::*;
        match self {
            Phase::ProductPlanning | Phase::SprintPlanning | Phase::SprintReview => ProductManager,
            Phase::Documentation => ScrumMaster,
            Phase::Development | Phase::Correction | Phase::BugFix => Developer,
            Phase::ReviewBasics
            | Phase::ReviewBacklog
            | Phase::ReviewCriteria
            | Phase::ReviewCombined => SeniorDeveloper,
            Phase::Testing => Tester,
        }
    }

    /// Placeholders a template for this phase may use.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            Phase::ProductPlanning => &["requirement", "context"],
            Phase::SprintPlanning => &["sprint", "pending_tasks", "context"],
            Phase::Development => &["sprint", "context"],
            Phase::ReviewBasics | Phase::ReviewCombined => &["precheck", "context"],
            Phase::ReviewBacklog | Phase::ReviewCriteria => &["context"],
            Phase::Correction => &["findings", "context"],
            Phase::Testing => &["targets", "scripts", "context"],
            Phase::BugFix => &["script", "failure", "context"],
            Phase::SprintReview => &["sprint", "sprint_tasks", "context"],
            Phase::Documentation => &["externals", "context"],
        }
    }

    /// Template file name under the prompt directory.
    pub fn template_file(self) -> String {
        format!("{}-{}.txt", self.owner().file_stem(), self.as_str())
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = RoleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| RoleError::UnknownPhase(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum RoleError {
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("unknown phase `{0}`")]
    UnknownPhase(String),
    #[error("no template for {role}/{phase}")]
    MissingTemplate { role: RoleId, phase: Phase },
    #[error("template {template}: placeholder `{{{{{name}}}}}` is not available")]
    UnresolvedPlaceholder { template: String, name: String },
    #[error("template {template}: unterminated placeholder")]
    Unterminated { template: String },
    #[error("reading prompt override {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

macro_rules! builtin {
    ($($file:literal),* $(,)?) => {
        &[$(($file, include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/prompts/", $file)))),*]
    };
}

const BUILTIN_PROMPTS: &[(&str, &str)] = builtin![
    "product_manager.txt",
    "scrum_master.txt",
    "developer.txt",
    "senior_developer.txt",
    "tester.txt",
    "product_manager-product_planning.txt",
    "product_manager-sprint_planning.txt",
    "product_manager-sprint_review.txt",
    "developer-development.txt",
    "developer-correction.txt",
    "developer-bug_fix.txt",
    "senior_developer-review_basics.txt",
    "senior_developer-review_backlog.txt",
    "senior_developer-review_criteria.txt",
    "senior_developer-review_combined.txt",
    "tester-testing.txt",
    "scrum_master-documentation.txt",
];

/// Preambles and phase templates, immutable once built.
#[derive(Debug, Clone)]
pub struct RoleRegistry {
    preambles: BTreeMap<RoleId, String>,
    templates: BTreeMap<Phase, String>,
}

impl Default for RoleRegistry {
    fn default() -> Self {
        RoleRegistry::builtin()
    }
}

impl RoleRegistry {
    pub fn builtin() -> Self {
        let files: BTreeMap<&str, &str> = BUILTIN_PROMPTS.iter().copied().collect();
        let mut reg = RoleRegistry {
            preambles: BTreeMap::new(),
            templates: BTreeMap::new(),
        };
        for role in RoleId::ALL {
            if let Some(text) = files.get(format!("{}.txt", role.file_stem()).as_str()) {
                reg.preambles.insert(role, text.to_string());
            }
        }
        for phase in Phase::ALL {
            if let Some(text) = files.get(phase.template_file().as_str()) {
                reg.templates.insert(phase, text.to_string());
            }
        }
        reg
    }

    /// Built-ins, with any same-named file in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, RoleError> {
        let mut reg = RoleRegistry::builtin();
        let read = |name: &str| -> Result<Option<String>, RoleError> {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(text) => Ok(Some(text)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(source) => Err(RoleError::Io {
                    path: path.display().to_string(),
                    source,
                }),
            }
        };
        for role in RoleId::ALL {
            if let Some(text) = read(&format!("{}.txt", role.file_stem()))? {
                reg.preambles.insert(role, text);
            }
        }
        for phase in Phase::ALL {
            if let Some(text) = read(&phase.template_file())? {
                reg.templates.insert(phase, text);
            }
        }
        Ok(reg)
    }

    pub fn set_template(&mut self, phase: Phase, text: impl Into<String>) {
        self.templates.insert(phase, text.into());
    }

    pub fn preamble(&self, role: RoleId) -> &str {
        self.preambles.get(&role).map_or("", String::as_str)
    }

    pub fn template(&self, phase: Phase) -> Option<&str> {
        self.templates.get(&phase).map(String::as_str)
    }

    /// Startup check: each phase has a template using only its placeholders.
    pub fn validate(&self, phases: &[Phase]) -> Result<(), RoleError> {
        for &phase in phases {
            let template = self.template(phase).ok_or(RoleError::MissingTemplate {
                role: phase.owner(),
                phase,
            })?;
            for name in placeholders(template, &phase.template_file())? {
                if !phase.placeholders().contains(&name) {
                    return Err(RoleError::UnresolvedPlaceholder {
                        template: phase.template_file(),
                        name: name.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Seed prompt for `phase`: the template with `{{context}}` bound to the
    /// rendered pool slice and other placeholders bound from `extras`.
    pub fn render_prompt(
        &self,
        role: RoleId,
        phase: Phase,
        context: &str,
        extras: &BTreeMap<&str, String>,
    ) -> Result<String, RoleError> {
        let template = self
            .template(phase)
            .filter(|_| role == phase.owner())
            .ok_or(RoleError::MissingTemplate { role, phase })?;
        render_template(template, &phase.template_file(), |name| {
            if name == "context" {
                Some(context)
            } else {
                extras.get(name).map(String::as_str)
            }
        })
    }
}

fn placeholders<'a>(template: &'a str, label: &str) -> Result<BTreeSet<&'a str>, RoleError> {
    let mut out = BTreeSet::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| RoleError::Unterminated {
            template: label.to_string(),
        })?;
        out.insert(after[..end].trim());
        rest = &after[end + 2..];
    }
    Ok(out)
}

/// Substitutes `{{name}}` placeholders. Text without placeholders comes back
/// verbatim.
pub fn render_template<'a>(
    template: &str,
    label: &str,
    lookup: impl Fn(&str) -> Option<&'a str>,
) -> Result<String, RoleError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| RoleError::Unterminated {
            template: label.to_string(),
        })?;
        let name = after[..end].trim();
        let value = lookup(name).ok_or_else(|| RoleError::UnresolvedPlaceholder {
            template: label.to_string(),
            name: name.to_string(),
        })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extras(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn builtin_registry_is_complete() {
        let reg = RoleRegistry::builtin();
        reg.validate(&Phase::ALL).unwrap();
        for role in RoleId::ALL {
            assert!(!reg.preamble(role).is_empty(), "{role}");
        }
    }

    #[test]
    fn development_prompt_demands_docstrings() {
        let reg = RoleRegistry::builtin();
        let prompt = reg
            .render_prompt(
                RoleId::Developer,
                Phase::Development,
                "```BACKLOG\nTASK: T1 | add\n  AC: works\n```",
                &extras(&[("sprint", "1")]),
            )
            .unwrap();
        assert!(prompt.contains("docstring"));
        assert!(prompt.contains("TASK: T1 | add"));
        assert!(!prompt.contains("{{"));
    }

    #[test]
    fn zero_placeholders_verbatim() {
        let text = "No placeholders { here } at all.\n";
        assert_eq!(render_template(text, "t", |_| None).unwrap(), text);
    }

    #[test]
    fn unresolved_placeholder_named() {
        let err = render_template("hi {{who}}", "t", |_| None).unwrap_err();
        assert!(matches!(err, RoleError::UnresolvedPlaceholder { ref name, .. } if name == "who"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let reg = RoleRegistry::builtin();
        let ex = extras(&[("requirement", "Build a calculator.")]);
        let a = reg
            .render_prompt(RoleId::ProductManager, Phase::ProductPlanning, "", &ex)
            .unwrap();
        let b = reg
            .render_prompt(RoleId::ProductManager, Phase::ProductPlanning, "", &ex)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_owner_rejected() {
        let reg = RoleRegistry::builtin();
        let err = reg
            .render_prompt(RoleId::Tester, Phase::Development, "", &BTreeMap::new())
            .unwrap_err();
        assert!(matches!(err, RoleError::MissingTemplate { .. }));
    }

    #[test]
    fn override_dir_replaces_single_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("developer-development.txt"),
            "Sprint {{sprint}} only.\n",
        )
        .unwrap();
        let reg = RoleRegistry::with_overrides(dir.path()).unwrap();
        let p = reg
            .render_prompt(RoleId::Developer, Phase::Development, "", &extras(&[("sprint", "2")]))
            .unwrap();
        assert_eq!(p, "Sprint 2 only.\n");
        assert_eq!(reg.preamble(RoleId::Tester), RoleRegistry::builtin().preamble(RoleId::Tester));
    }

    #[test]
    fn validation_catches_foreign_placeholder() {
        let mut reg = RoleRegistry::builtin();
        reg.set_template(Phase::Testing, "{{requirement}}");
        assert!(reg.validate(&[Phase::Testing]).is_err());
        assert!(reg.validate(&[Phase::Development]).is_ok());
    }

    #[test]
    fn ids_round_trip() {
        for r in RoleId::ALL {
            assert_eq!(r.as_str().parse::<RoleId>().unwrap(), r);
        }
        for p in Phase::ALL {
            assert_eq!(p.as_str().parse::<Phase>().unwrap(), p);
        }
    }
}
