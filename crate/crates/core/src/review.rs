//! Code review: deterministic prechecks, then three Senior-Developer review
//! sessions (basic checks, backlog compliance, criteria and bugs).

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::chat::{ChatError, ChatRuntime, SessionSpec, TerminatedBy, Terminator};
use crate::graph::{CodeDependencyGraph, CodeGraphGenerator};
use crate::imports::{resolve, ResolvedTarget};
use crate::pool::{MessagePool, PoolError, PoolKey};
use crate::roles::parsers::{parse_review, NO_FINDINGS};
use crate::roles::{Phase, ReviewFinding, RoleError, RoleRegistry, Severity};
use crate::workspace::{RelPath, WorkspaceSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PrecheckKind {
    EmptyMethod,
    MissingDocstring,
    UnresolvedImport,
}

impl PrecheckKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PrecheckKind::EmptyMethod => "empty_method",
            PrecheckKind::MissingDocstring => "missing_docstring",
            PrecheckKind::UnresolvedImport => "unresolved_import",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PrecheckFinding {
    pub file: RelPath,
    pub line: usize,
    pub kind: PrecheckKind,
    pub detail: String,
}

impl fmt::Display for PrecheckFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{} {}: {}", self.file, self.line, self.kind.as_str(), self.detail)
    }
}

/// Flags placeholder-only functions, functions without docstrings, and
/// imports that look internal but resolve to no workspace file. Sorted by
/// (file, line).
///
/// An import looks internal when it is relative, or when its first segment
/// is the stem of some workspace file outside the root (which the resolver
/// cannot reach).
pub fn precheck(
    snapshot: &WorkspaceSnapshot,
    graph: &CodeDependencyGraph,
    generator: &CodeGraphGenerator,
) -> Vec<PrecheckFinding> {
    let profile = generator.profile();
    let suffix = profile.module_suffix();
    let stems: BTreeMap<&str, &RelPath> = snapshot
        .paths()
        .filter(|p| !p.is_root_level())
        .filter_map(|p| p.file_name().strip_suffix(suffix).map(|stem| (stem, p)))
        .collect();

    let mut out = Vec::new();
    for path in graph.nodes() {
        let Some(source) = snapshot.content(path) else {
            continue;
        };
        for func in profile.functions(source) {
            if func.placeholder_only {
                out.push(PrecheckFinding {
                    file: path.clone(),
                    line: func.line,
                    kind: PrecheckKind::EmptyMethod,
                    detail: format!("`{}` has only a placeholder body", func.name),
                });
            }
            if !func.has_docstring {
                out.push(PrecheckFinding {
                    file: path.clone(),
                    line: func.line,
                    kind: PrecheckKind::MissingDocstring,
                    detail: format!("`{}` has no docstring", func.name),
                });
            }
        }
        for import in graph.imports_of(path) {
            if let ResolvedTarget::Internal(_) = resolve(import, snapshot, suffix) {
                continue;
            }
            let detail = if import.relative {
                format!("relative import `{}` matches no workspace module", import.raw_module)
            } else if let Some(found) = stems.get(import.first_segment()) {
                format!(
                    "`{}` is not importable from the project root (found {found})",
                    import.raw_module
                )
            } else {
                continue;
            };
            out.push(PrecheckFinding {
                file: path.clone(),
                line: import.line,
                kind: PrecheckKind::UnresolvedImport,
                detail,
            });
        }
    }
    out.sort();
    out
}

pub fn render_precheck(findings: &[PrecheckFinding]) -> String {
    if findings.is_empty() {
        return "none\n".to_string();
    }
    let mut out = String::new();
    for f in findings {
        let _ = writeln!(out, "{f}");
    }
    out
}

pub fn render_findings(findings: &[ReviewFinding]) -> String {
    if findings.is_empty() {
        return format!("{NO_FINDINGS}\n");
    }
    let mut out = String::new();
    for f in findings {
        let _ = writeln!(out, "{}", f.to_line());
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error(transparent)]
    Role(#[from] RoleError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

/// Everything a review needs besides the chat runtime.
pub struct ReviewInputs<'a> {
    pub registry: &'a RoleRegistry,
    pub sprint_tag: u32,
    /// Rendered code handed to the reviewer.
    pub code: &'a str,
    pub precheck: &'a [PrecheckFinding],
    pub max_turns: usize,
    pub context_budget: usize,
    /// One combined session instead of three.
    pub single_step: bool,
}

/// Runs the review sessions in step order and publishes the combined
/// findings as this sprint's `review_feedback`. A step that never produces
/// parseable output contributes one advisory finding saying so.
pub fn three_step_review(
    rt: &mut ChatRuntime<'_>,
    pool: &mut MessagePool,
    inputs: &ReviewInputs<'_>,
) -> Result<Vec<ReviewFinding>, ReviewError> {
    let steps: &[(Phase, Option<u8>)] = if inputs.single_step {
        &[(Phase::ReviewCombined, None)]
    } else {
        &[
            (Phase::ReviewBasics, Some(1)),
            (Phase::ReviewBacklog, Some(2)),
            (Phase::ReviewCriteria, Some(3)),
        ]
    };
    let precheck_text = render_precheck(inputs.precheck);
    let mut all = Vec::new();
    for &(phase, step) in steps {
        let role = phase.owner();
        let slice = pool.view_with_code(
            role,
            phase,
            inputs.context_budget,
            rt.counter(),
            Some(inputs.code),
        )?;
        let mut extras = BTreeMap::new();
        extras.insert("precheck", precheck_text.clone());
        let seed = inputs.registry.render_prompt(role, phase, &slice.rendered, &extras)?;
        let spec = SessionSpec::for_phase(inputs.registry, phase, seed, Terminator::Findings, inputs.max_turns);
        let outcome = rt.run_session(&spec)?;
        let parsed = match outcome.terminated_by {
            TerminatedBy::Consensus => parse_review(&outcome.final_message, false).ok(),
            TerminatedBy::TurnLimit => None,
        };
        match parsed {
            Some(findings) => all.extend(findings.into_iter().map(|mut f| {
                if let Some(step) = step {
                    f.step = step;
                }
                f
            })),
            None => all.push(ReviewFinding {
                step: step.unwrap_or(1),
                severity: Severity::Advisory,
                file: "-".to_string(),
                message: format!("{phase} produced no parseable findings within {} turns", inputs.max_turns),
            }),
        }
    }
    pool.publish(PoolKey::ReviewFeedback, inputs.sprint_tag, &render_findings(&all))?;
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ReplayBackend, UsageLedger};
    use crate::chat::{ChatSettings, RetryPolicy};
    use crate::tokens::CharEstimate;
    use std::time::Duration;

    fn snap(files: &[(&str, &str)]) -> WorkspaceSnapshot {
        WorkspaceSnapshot::from_files("/ws", 1, files.iter().copied()).unwrap()
    }

    fn run_precheck(files: &[(&str, &str)]) -> Vec<PrecheckFinding> {
        let s = snap(files);
        let generator = CodeGraphGenerator::default();
        let g = generator.build(&s).unwrap();
        precheck(&s, &g, &generator)
    }

    #[test]
    fn one_empty_method() {
        let f = run_precheck(&[(
            "user.py",
            "class User:\n    \"\"\"A user.\"\"\"\n\n    def save(self):\n        \"\"\"Persist.\"\"\"\n        pass\n",
        )]);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, PrecheckKind::EmptyMethod);
        assert_eq!(f[0].line, 4);
    }

    #[test]
    fn clean_workspace() {
        let f = run_precheck(&[
            ("user.py", "def name():\n    \"\"\"Name.\"\"\"\n    return 'x'\n"),
            ("app.py", "import os\nimport user\n\ndef main():\n    \"\"\"Run.\"\"\"\n    print(user.name(), os.sep)\n"),
        ]);
        assert!(f.is_empty(), "{f:?}");
    }

    #[test]
    fn three_seeded_defects() {
        let f = run_precheck(&[
            ("app.py", "import helpers\n\n\ndef main():\n    \"\"\"Run.\"\"\"\n    return helpers.go()\n"),
            ("lib/helpers.py", "def go():\n    \"\"\"Go.\"\"\"\n    return 1\n"),
            (
                "calc.py",
                "def add(a, b):\n    return a + b\n\n\ndef sub(a, b):\n    \"\"\"Subtract.\"\"\"\n    raise NotImplementedError\n",
            ),
        ]);
        let got: Vec<(&str, usize, PrecheckKind)> =
            f.iter().map(|x| (x.file.as_str(), x.line, x.kind)).collect();
        assert_eq!(
            got,
            vec![
                ("app.py", 1, PrecheckKind::UnresolvedImport),
                ("calc.py", 1, PrecheckKind::MissingDocstring),
                ("calc.py", 5, PrecheckKind::EmptyMethod),
            ]
        );
    }

    #[test]
    fn relative_dangling_import() {
        let f = run_precheck(&[("a.py", "from .missing import x\n")]);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, PrecheckKind::UnresolvedImport);
    }

    fn rt(backend: &ReplayBackend) -> ChatRuntime<'_> {
        let settings = ChatSettings {
            retry: RetryPolicy {
                attempts: 1,
                base_delay: Duration::ZERO,
            },
            ..ChatSettings::default()
        };
        ChatRuntime::new(backend, &CharEstimate, settings, UsageLedger::default())
    }

    fn inputs<'a>(reg: &'a RoleRegistry, pre: &'a [PrecheckFinding]) -> ReviewInputs<'a> {
        ReviewInputs {
            registry: reg,
            sprint_tag: 1,
            code: "==> calc.py <==\n",
            precheck: pre,
            max_turns: 2,
            context_budget: 2000,
            single_step: false,
        }
    }

    #[test]
    fn all_steps_clean() {
        let backend = ReplayBackend::scripted(["check", NO_FINDINGS, "check", NO_FINDINGS, "check", NO_FINDINGS]);
        let reg = RoleRegistry::builtin();
        let mut pool = MessagePool::default();
        let out = three_step_review(&mut rt(&backend), &mut pool, &inputs(&reg, &[])).unwrap();
        assert!(out.is_empty());
        assert_eq!(pool.latest(PoolKey::ReviewFeedback).unwrap().body, "NO_FINDINGS\n");
    }

    #[test]
    fn step_two_blocker_and_step_field() {
        let backend = ReplayBackend::scripted([
            "check",
            NO_FINDINGS,
            "check",
            "2|blocker|calc.py|missing feature X",
            "check",
            NO_FINDINGS,
        ]);
        let reg = RoleRegistry::builtin();
        let mut pool = MessagePool::default();
        let out = three_step_review(&mut rt(&backend), &mut pool, &inputs(&reg, &[])).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].step, out[0].severity), (2, Severity::Blocker));
        assert_eq!(out[0].message, "missing feature X");
    }

    #[test]
    fn unparseable_step_becomes_advisory() {
        let backend = ReplayBackend::scripted([
            "check", NO_FINDINGS, "check", "hmm", "check", "still thinking", "check", NO_FINDINGS,
        ]);
        let reg = RoleRegistry::builtin();
        let mut pool = MessagePool::default();
        let out = three_step_review(&mut rt(&backend), &mut pool, &inputs(&reg, &[])).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].step, out[0].severity), (2, Severity::Advisory));
    }

    #[test]
    fn step_one_prompt_carries_precheck() {
        struct Spy(std::sync::Mutex<Vec<String>>);
        impl crate::backend::ChatBackend for Spy {
            fn complete(
                &self,
                r: &crate::backend::ChatRequest,
            ) -> Result<crate::backend::ChatResponse, crate::backend::BackendError> {
                self.0.lock().unwrap().push(r.messages[1].content.clone());
                Ok(crate::backend::ChatResponse {
                    content: NO_FINDINGS.into(),
                    usage: Default::default(),
                })
            }
        }
        let pre = vec![PrecheckFinding {
            file: RelPath::new("user.py").unwrap(),
            line: 4,
            kind: PrecheckKind::EmptyMethod,
            detail: "`save` has only a placeholder body".into(),
        }];
        let spy = Spy(Default::default());
        let reg = RoleRegistry::builtin();
        let mut pool = MessagePool::default();
        let mut runtime = ChatRuntime::new(&spy, &CharEstimate, ChatSettings::default(), UsageLedger::default());
        three_step_review(&mut runtime, &mut pool, &inputs(&reg, &pre)).unwrap();
        let seeds = spy.0.into_inner().unwrap();
        assert!(seeds[0].contains("user.py:4 empty_method"));
        assert!(!seeds[2].contains("user.py:4"));
    }
}
