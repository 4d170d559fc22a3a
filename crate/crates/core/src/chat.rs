//! Dual-agent sessions: an instructor and an assistant take turns over a
//! shared message stream until the assistant's message satisfies the
//! session's terminator or the turn cap is reached.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::backend::{
    BackendError, ChatBackend, ChatMessage, ChatRequest, UsageEntry, UsageLedger,
};
use crate::roles::parsers::{self, has_consensus};
use crate::roles::{Phase, RoleId, RoleRegistry};
use crate::tokens::{clip_to_budget, TokenCounter};

/// Per-message framing overhead assumed when budgeting a prompt.
pub const MESSAGE_OVERHEAD_TOKENS: usize = 4;
pub const DEFAULT_MAX_TURNS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatTurn {
    pub index: usize,
    pub instructor_message: String,
    pub assistant_message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageStream {
    pub turns: Vec<ChatTurn>,
}

impl MessageStream {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    fn push(&mut self, instructor_message: String, assistant_message: String) {
        self.turns.push(ChatTurn {
            index: self.turns.len() + 1,
            instructor_message,
            assistant_message,
        });
    }
}

/// Acceptance test applied to each assistant message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Terminator {
    /// A line reading exactly `<CONSENSUS>`.
    Consensus,
    /// A parseable backlog plus the consensus line.
    ApprovedBacklog,
    Backlog,
    /// A `SPRINT` block naming only known task ids.
    SprintSelection { known: BTreeSet<String> },
    /// At least one `# FILE:` block, all valid.
    FileBlocks,
    /// Finding lines or `NO_FINDINGS`.
    Findings,
    /// File blocks covering every expected script path.
    TestScripts { expected: BTreeSet<String> },
    /// A `STATUS` block classifying every expected task.
    Classification { expected: BTreeSet<String> },
}

impl Terminator {
    /// Terminators that need no parameters, by identifier.
    pub fn from_id(id: &str) -> Result<Terminator, ChatError> {
        match id {
            "consensus" => Ok(Terminator::Consensus),
            "approved_backlog" => Ok(Terminator::ApprovedBacklog),
            "backlog" => Ok(Terminator::Backlog),
            "file_blocks" => Ok(Terminator::FileBlocks),
            "findings" => Ok(Terminator::Findings),
            other => Err(ChatError::UnknownTerminator(other.to_string())),
        }
    }
}

pub fn check_termination(terminator: &Terminator, message: &str) -> bool {
    if message.trim().is_empty() {
        return false;
    }
    match terminator {
        Terminator::Consensus => has_consensus(message),
        Terminator::ApprovedBacklog => {
            has_consensus(message) && parsers::parse_backlog(message).is_ok()
        }
        Terminator::Backlog => parsers::parse_backlog(message).is_ok(),
        Terminator::SprintSelection { known } => parsers::parse_sprint_selection(message)
            .is_ok_and(|ids| parsers::unknown_ids(&ids, known).is_empty()),
        Terminator::FileBlocks => parsers::parse_file_blocks(message).is_ok_and(|f| !f.is_empty()),
        Terminator::Findings => parsers::parse_review(message, false).is_ok(),
        Terminator::TestScripts { expected } => {
            parsers::parse_file_blocks(message).is_ok_and(|files| {
                let got: BTreeSet<&str> = files.iter().map(|f| f.path.as_str()).collect();
                expected.iter().all(|e| got.contains(e.as_str()))
            })
        }
        Terminator::Classification { expected } => parsers::parse_classification(message)
            .is_ok_and(|map| expected.iter().all(|id| map.contains_key(id))),
    }
}

#[derive(Debug, Clone)]
pub struct SessionSpec {
    pub phase: Phase,
    pub instructor: RoleId,
    pub assistant: RoleId,
    pub instructor_preamble: String,
    pub assistant_preamble: String,
    /// Rendered phase template, context slice included.
    pub seed_prompt: String,
    pub terminator: Terminator,
    pub max_turns: usize,
}

impl SessionSpec {
    /// Spec for `phase` with the registry's preambles for both participants.
    pub fn for_phase(
        registry: &RoleRegistry,
        phase: Phase,
        seed_prompt: String,
        terminator: Terminator,
        max_turns: usize,
    ) -> Self {
        let (instructor, assistant) = phase.participants();
        SessionSpec {
            phase,
            instructor,
            assistant,
            instructor_preamble: registry.preamble(instructor).to_string(),
            assistant_preamble: registry.preamble(assistant).to_string(),
            seed_prompt,
            terminator,
            max_turns,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminatedBy {
    Consensus,
    TurnLimit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionOutcome {
    pub session_id: String,
    pub final_message: String,
    pub stream: MessageStream,
    pub terminated_by: TerminatedBy,
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("unknown terminator `{0}`")]
    UnknownTerminator(String),
    #[error("invalid session: {0}")]
    InvalidSpec(String),
    #[error("session {session_id}: backend failed after {attempts} attempt(s) with {turns} complete turn(s): {source}")]
    Backend {
        session_id: String,
        attempts: usize,
        turns: usize,
        partial: MessageStream,
        #[source]
        source: BackendError,
    },
    #[error("session {session_id}: backend returned an empty completion")]
    EmptyCompletion {
        session_id: String,
        partial: MessageStream,
    },
    #[error("writing transcript {path}: {source}")]
    Transcript {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChatSettings {
    pub model: String,
    /// Token budget for every prompt sent.
    pub prompt_budget: usize,
    pub max_output_tokens: u32,
    pub retry: RetryPolicy,
}

impl Default for ChatSettings {
    fn default() -> Self {
        ChatSettings {
            model: "gpt-3.5-turbo".to_string(),
            prompt_budget: 12_000,
            max_output_tokens: crate::backend::DEFAULT_MAX_OUTPUT_TOKENS,
            retry: RetryPolicy::default(),
        }
    }
}

/// Runs sessions against one backend and keeps the run's accounting: the
/// usage ledger and the count of prompts that exceeded the budget.
pub struct ChatRuntime<'a> {
    backend: &'a dyn ChatBackend,
    counter: &'a dyn TokenCounter,
    settings: ChatSettings,
    ledger: UsageLedger,
    exceeding: usize,
    sessions: usize,
    log_dir: Option<PathBuf>,
}

impl<'a> ChatRuntime<'a> {
    pub fn new(
        backend: &'a dyn ChatBackend,
        counter: &'a dyn TokenCounter,
        settings: ChatSettings,
        ledger: UsageLedger,
    ) -> Self {
        ChatRuntime {
            backend,
            counter,
            settings,
            ledger,
            exceeding: 0,
            sessions: 0,
            log_dir: None,
        }
    }

    /// Write each session's transcript under `dir`.
    pub fn with_transcripts(mut self, dir: &Path) -> Self {
        self.log_dir = Some(dir.to_path_buf());
        self
    }

    pub fn settings(&self) -> &ChatSettings {
        &self.settings
    }

    pub fn counter(&self) -> &dyn TokenCounter {
        self.counter
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> UsageLedger {
        self.ledger
    }

    /// Prompts sent whose estimate exceeded the budget even after fitting.
    pub fn exceeding_count(&self) -> usize {
        self.exceeding
    }

    pub fn sessions_run(&self) -> usize {
        self.sessions
    }

    pub fn run_session(&mut self, spec: &SessionSpec) -> Result<SessionOutcome, ChatError> {
        if spec.max_turns == 0 {
            return Err(ChatError::InvalidSpec("max_turns must be at least 1".into()));
        }
        if let Terminator::SprintSelection { known } = &spec.terminator {
            if known.is_empty() {
                return Err(ChatError::InvalidSpec("sprint selection with no known tasks".into()));
            }
        }
        self.sessions += 1;
        let session_id = format!("{}-{}", spec.phase, self.sessions);
        let mut stream = MessageStream::default();
        let result = self.converse(spec, &session_id, &mut stream);
        self.write_transcript(spec, &session_id, &stream, result.as_ref().err())?;
        let terminated_by = result?;
        let final_message = stream
            .turns
            .last()
            .map(|t| t.assistant_message.clone())
            .unwrap_or_default();
        Ok(SessionOutcome {
            session_id,
            final_message,
            stream,
            terminated_by,
        })
    }

    fn converse(
        &mut self,
        spec: &SessionSpec,
        session_id: &str,
        stream: &mut MessageStream,
    ) -> Result<TerminatedBy, ChatError> {
        for _ in 0..spec.max_turns {
            let instructor_prompt = self.fit(instructor_messages(spec, stream));
            let instruction = self.call(spec.phase, session_id, instructor_prompt, stream)?;

            let assistant_prompt = self.fit(assistant_messages(spec, stream, &instruction));
            let answer = self.call(spec.phase, session_id, assistant_prompt, stream)?;

            let done = check_termination(&spec.terminator, &answer);
            stream.push(instruction, answer);
            log::debug!("{session_id}: turn {} done={done}", stream.len());
            if done {
                return Ok(TerminatedBy::Consensus);
            }
        }
        Ok(TerminatedBy::TurnLimit)
    }

    fn call(
        &mut self,
        phase: Phase,
        session_id: &str,
        messages: Vec<ChatMessage>,
        stream: &MessageStream,
    ) -> Result<String, ChatError> {
        let mut request = ChatRequest::new(self.settings.model.clone(), messages);
        request.max_output_tokens = self.settings.max_output_tokens;
        let attempts = self.settings.retry.attempts.max(1);
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            match self.backend.complete(&request) {
                Ok(r) => break r,
                Err(e) if e.is_retryable() && attempt < attempts => {
                    let delay = self.settings.retry.base_delay * (1u32 << (attempt - 1).min(16));
                    log::warn!("{session_id}: attempt {attempt} failed ({e}), retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                Err(source) => {
                    return Err(ChatError::Backend {
                        session_id: session_id.to_string(),
                        attempts: attempt,
                        turns: stream.len(),
                        partial: stream.clone(),
                        source,
                    })
                }
            }
        };
        self.ledger.record(UsageEntry {
            session_id: session_id.to_string(),
            phase: phase.to_string(),
            model: self.settings.model.clone(),
            prompt_tokens: response.usage.prompt_tokens,
            completion_tokens: response.usage.completion_tokens,
        });
        if response.content.trim().is_empty() {
            return Err(ChatError::EmptyCompletion {
                session_id: session_id.to_string(),
                partial: stream.clone(),
            });
        }
        Ok(response.content)
    }

    fn estimate(&self, messages: &[ChatMessage]) -> usize {
        messages
            .iter()
            .map(|m| self.counter.count(&m.content) + MESSAGE_OVERHEAD_TOKENS)
            .sum()
    }

    /// Shrinks a prompt to the budget: drop the oldest history, then clip the
    /// seed, then the preamble, then the newest message. Layout is
    /// `[system, seed, history.., last]`.
    fn fit(&mut self, mut messages: Vec<ChatMessage>) -> Vec<ChatMessage> {
        let budget = self.settings.prompt_budget;
        while self.estimate(&messages) > budget && messages.len() > 3 {
            messages.drain(2..4.min(messages.len() - 1));
        }
        for index in [1, 0, messages.len() - 1] {
            let total = self.estimate(&messages);
            if total <= budget {
                break;
            }
            let own = self.counter.count(&messages[index].content);
            let allowed = own.saturating_sub(total - budget);
            let clipped = clip_to_budget(&messages[index].content, allowed, self.counter).to_string();
            messages[index].content = clipped;
        }
        if self.estimate(&messages) > budget {
            self.exceeding += 1;
        }
        messages
    }

    fn write_transcript(
        &self,
        spec: &SessionSpec,
        session_id: &str,
        stream: &MessageStream,
        error: Option<&ChatError>,
    ) -> Result<(), ChatError> {
        let Some(dir) = &self.log_dir else {
            return Ok(());
        };
        let mut text = format!(
            "session {session_id}\ninstructor: {}\nassistant: {}\n\n=== seed ===\n{}\n",
            spec.instructor, spec.assistant, spec.seed_prompt
        );
        for turn in &stream.turns {
            let _ = write!(
                text,
                "\n=== turn {} ===\n--- {} ---\n{}\n--- {} ---\n{}\n",
                turn.index,
                spec.instructor,
                turn.instructor_message,
                spec.assistant,
                turn.assistant_message
            );
        }
        if let Some(e) = error {
            let _ = write!(text, "\n=== error ===\n{e}\n");
        }
        let path = dir.join(format!("session-{session_id}.txt"));
        let io = |source| ChatError::Transcript {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(&path, text).map_err(io)
    }
}

/// Instructor's view: its own messages are `assistant`, the partner's `user`.
fn instructor_messages(spec: &SessionSpec, stream: &MessageStream) -> Vec<ChatMessage> {
    let mut messages = vec![
        ChatMessage::system(&spec.instructor_preamble),
        ChatMessage::user(&spec.seed_prompt),
    ];
    for turn in &stream.turns {
        messages.push(ChatMessage::assistant(&turn.instructor_message));
        messages.push(ChatMessage::user(&turn.assistant_message));
    }
    messages
}

fn assistant_messages(spec: &SessionSpec, stream: &MessageStream, instruction: &str) -> Vec<ChatMessage> {
    let mut messages = vec![
        ChatMessage::system(&spec.assistant_preamble),
        ChatMessage::user(&spec.seed_prompt),
    ];
    for turn in &stream.turns {
        messages.push(ChatMessage::user(&turn.instructor_message));
        messages.push(ChatMessage::assistant(&turn.assistant_message));
    }
    messages.push(ChatMessage::user(instruction));
    messages
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatResponse, ReplayBackend, Usage};
    use crate::tokens::CharEstimate;
    use std::sync::Mutex;

    fn spec(terminator: Terminator, max_turns: usize) -> SessionSpec {
        SessionSpec {
            phase: Phase::ProductPlanning,
            instructor: RoleId::ProductManager,
            assistant: RoleId::ScrumMaster,
            instructor_preamble: "You are PM.".into(),
            assistant_preamble: "You are SM.".into(),
            seed_prompt: "Plan a calculator.".into(),
            terminator,
            max_turns,
        }
    }

    fn fast() -> ChatSettings {
        ChatSettings {
            retry: RetryPolicy {
                attempts: 3,
                base_delay: Duration::ZERO,
            },
            ..ChatSettings::default()
        }
    }

    fn script(pairs: &[(&str, &str)]) -> ReplayBackend {
        ReplayBackend::scripted(pairs.iter().flat_map(|(i, a)| [*i, *a]))
    }

    #[test]
    fn immediate_consensus() {
        let backend = script(&[("draft", "ok\n<CONSENSUS>")]);
        let mut rt = ChatRuntime::new(&backend, &CharEstimate, fast(), UsageLedger::default());
        let out = rt.run_session(&spec(Terminator::Consensus, 5)).unwrap();
        assert_eq!(out.stream.len(), 1);
        assert_eq!(out.terminated_by, TerminatedBy::Consensus);
        assert_eq!(out.final_message, "ok\n<CONSENSUS>");
        assert_eq!(rt.ledger().totals().calls, 2);
    }

    #[test]
    fn turn_limit() {
        let backend = ReplayBackend::scripted(vec!["msg"; 10]);
        let mut rt = ChatRuntime::new(&backend, &CharEstimate, fast(), UsageLedger::default());
        let out = rt.run_session(&spec(Terminator::Consensus, 5)).unwrap();
        assert_eq!(out.stream.len(), 5);
        assert_eq!(out.terminated_by, TerminatedBy::TurnLimit);
        let idx: Vec<usize> = out.stream.turns.iter().map(|t| t.index).collect();
        assert_eq!(idx, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn consensus_at_turn_three() {
        let backend = script(&[("i1", "a1"), ("i2", "a2"), ("i3", "a3\n<CONSENSUS>"), ("i4", "a4")]);
        let mut rt = ChatRuntime::new(&backend, &CharEstimate, fast(), UsageLedger::default());
        let out = rt.run_session(&spec(Terminator::Consensus, 5)).unwrap();
        assert_eq!(out.stream.len(), 3);
        assert_eq!(out.final_message, "a3\n<CONSENSUS>");
        assert_eq!(backend.remaining(), 2);
    }

    #[test]
    fn termination_predicates() {
        assert!(!check_termination(&Terminator::Consensus, ""));
        assert!(!check_termination(&Terminator::Backlog, ""));
        assert!(check_termination(&Terminator::Consensus, "fine\n<CONSENSUS>\n"));
        assert!(!check_termination(&Terminator::Consensus, "not <CONSENSUS> yet"));
        let backlog = "```BACKLOG\nTASK: T1 | x\n  AC: y\n```";
        assert!(check_termination(&Terminator::Backlog, backlog));
        assert!(!check_termination(&Terminator::ApprovedBacklog, backlog));
        assert!(check_termination(&Terminator::ApprovedBacklog, &format!("{backlog}\n<CONSENSUS>")));
        let known: BTreeSet<String> = ["T1".to_string()].into();
        assert!(check_termination(
            &Terminator::SprintSelection { known: known.clone() },
            "```SPRINT\nTASK: T1\n```"
        ));
        assert!(!check_termination(
            &Terminator::SprintSelection { known },
            "```SPRINT\nTASK: T7\n```"
        ));
        assert!(Terminator::from_id("nope").is_err());
        assert_eq!(Terminator::from_id("findings").unwrap(), Terminator::Findings);
    }

    #[test]
    fn prompts_follow_stream_roles() {
        struct Spy(Mutex<Vec<Vec<ChatMessage>>>);
        impl ChatBackend for Spy {
            fn complete(&self, r: &ChatRequest) -> Result<ChatResponse, BackendError> {
                let mut seen = self.0.lock().unwrap();
                seen.push(r.messages.clone());
                Ok(ChatResponse {
                    content: format!("m{}", seen.len()),
                    usage: Usage::default(),
                })
            }
        }
        let spy = Spy(Mutex::new(Vec::new()));
        let mut rt = ChatRuntime::new(&spy, &CharEstimate, fast(), UsageLedger::default());
        rt.run_session(&spec(Terminator::Consensus, 2)).unwrap();
        let seen = spy.0.into_inner().unwrap();
        assert_eq!(seen.len(), 4);
        // Turn 2 instructor: system, seed, own i1 as assistant, a1 as user.
        let roles: Vec<_> = seen[2].iter().map(|m| (m.role, m.content.as_str())).collect();
        use crate::backend::MessageRole::*;
        assert_eq!(
            roles,
            vec![(System, "You are PM."), (User, "Plan a calculator."), (Assistant, "m1"), (User, "m2")]
        );
        // Turn 2 assistant ends with i2.
        let last = seen[3].last().unwrap();
        assert_eq!((last.role, last.content.as_str()), (User, "m3"));
        assert_eq!(seen[3][0].content, "You are SM.");
    }

    #[test]
    fn retries_then_succeeds_and_gives_up() {
        struct Flaky(Mutex<usize>, usize);
        impl ChatBackend for Flaky {
            fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, BackendError> {
                let mut n = self.0.lock().unwrap();
                *n += 1;
                if *n <= self.1 {
                    return Err(BackendError::Transport("reset".into()));
                }
                Ok(ChatResponse {
                    content: "<CONSENSUS>".into(),
                    usage: Usage::default(),
                })
            }
        }
        let ok = Flaky(Mutex::new(0), 2);
        let mut rt = ChatRuntime::new(&ok, &CharEstimate, fast(), UsageLedger::default());
        assert!(rt.run_session(&spec(Terminator::Consensus, 1)).is_ok());

        let bad = Flaky(Mutex::new(0), 3);
        let mut rt = ChatRuntime::new(&bad, &CharEstimate, fast(), UsageLedger::default());
        let err = rt.run_session(&spec(Terminator::Consensus, 1)).unwrap_err();
        assert!(matches!(err, ChatError::Backend { attempts: 3, turns: 0, .. }));
    }

    #[test]
    fn empty_completion_is_protocol_error() {
        let backend = ReplayBackend::scripted(["i1", "  "]);
        let mut rt = ChatRuntime::new(&backend, &CharEstimate, fast(), UsageLedger::default());
        assert!(matches!(
            rt.run_session(&spec(Terminator::Consensus, 3)),
            Err(ChatError::EmptyCompletion { .. })
        ));
    }

    #[test]
    fn prompts_fit_budget() {
        struct Check(usize, Mutex<usize>);
        impl ChatBackend for Check {
            fn complete(&self, r: &ChatRequest) -> Result<ChatResponse, BackendError> {
                let est: usize = r
                    .messages
                    .iter()
                    .map(|m| crate::tokens::estimate_tokens(&m.content) + MESSAGE_OVERHEAD_TOKENS)
                    .sum();
                assert!(est <= self.0, "{est} > {}", self.0);
                *self.1.lock().unwrap() += 1;
                Ok(ChatResponse {
                    content: "x".repeat(300),
                    usage: Usage::default(),
                })
            }
        }
        let budget = 200;
        let backend = Check(budget, Mutex::new(0));
        let settings = ChatSettings {
            prompt_budget: budget,
            ..fast()
        };
        let mut rt = ChatRuntime::new(&backend, &CharEstimate, settings, UsageLedger::default());
        let mut s = spec(Terminator::Consensus, 4);
        s.seed_prompt = "seed ".repeat(400);
        rt.run_session(&s).unwrap();
        assert_eq!(rt.exceeding_count(), 0);
        assert_eq!(*backend.1.lock().unwrap(), 8);
    }

    #[test]
    fn transcript_written() {
        let dir = tempfile::tempdir().unwrap();
        let backend = script(&[("go", "done\n<CONSENSUS>")]);
        let mut rt = ChatRuntime::new(&backend, &CharEstimate, fast(), UsageLedger::default())
            .with_transcripts(dir.path());
        rt.run_session(&spec(Terminator::Consensus, 2)).unwrap();
        let text = std::fs::read_to_string(dir.path().join("session-product_planning-1.txt")).unwrap();
        assert!(text.contains("=== turn 1 ==="));
        assert!(text.contains("done\n<CONSENSUS>"));
    }
}
