//! Child-process execution for test scripts and executability checks.
//!
//! Every command runs through `sh -c` in its own process group with a scrubbed
//! environment. On timeout the whole group is killed, so interpreters that
//! spawn helpers do not outlive the check.

use std::collections::BTreeMap;
use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("failed to spawn `{command}` in {workdir}: {source}")]
    Spawn {
        command: String,
        workdir: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("waiting on child failed: {0}")]
    Wait(#[source] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Code(i32),
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecResult {
    pub command: String,
    pub exit_code: ExitCode,
    pub stdout: String,
    pub stderr: String,
    pub wall_time: Duration,
}

impl ExecResult {
    pub fn success(&self) -> bool {
        self.exit_code == ExitCode::Code(0)
    }

    pub fn timed_out(&self) -> bool {
        self.exit_code == ExitCode::Timeout
    }

    /// Traceback for a failed run. Timeouts get a synthetic one.
    pub fn traceback(&self) -> Traceback {
        if self.timed_out() {
            return Traceback {
                frames: Vec::new(),
                error_type: TIMEOUT_ERROR_TYPE.to_string(),
                error_message: format!(
                    "command did not finish within {:.1}s",
                    self.wall_time.as_secs_f64()
                ),
            };
        }
        parse_traceback(&self.stderr)
    }
}

/// `error_type` of the synthetic traceback attached to timed-out runs.
pub const TIMEOUT_ERROR_TYPE: &str = "Timeout";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub file: String,
    pub line: usize,
    pub symbol: String,
}

/// A runtime failure, frames outermost first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Traceback {
    pub frames: Vec<Frame>,
    pub error_type: String,
    pub error_message: String,
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub timeout: Duration,
    /// Parent environment variables passed through unchanged.
    pub env_allowlist: Vec<String>,
    /// Variables set on every child, after the allowlist.
    pub extra_env: BTreeMap<String, String>,
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            timeout: DEFAULT_TIMEOUT,
            env_allowlist: ["PATH", "LANG", "LC_ALL", "LC_CTYPE"]
                .map(String::from)
                .to_vec(),
            extra_env: BTreeMap::new(),
        }
    }
}

impl ExecOptions {
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_env(mut self, key: &str, value: &str) -> Self {
        self.extra_env.insert(key.to_string(), value.to_string());
        self
    }
}

const POLL_INTERVAL: Duration = Duration::from_millis(10);

pub fn run_command(command: &str, workdir: &Path, opts: &ExecOptions) -> Result<ExecResult, ExecError> {
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(command)
        .current_dir(workdir)
        .env_clear()
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    for key in &opts.env_allowlist {
        if let Ok(value) = std::env::var(key) {
            cmd.env(key, value);
        }
    }
    cmd.envs(&opts.extra_env);

    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|source| ExecError::Spawn {
        command: command.to_string(),
        workdir: workdir.to_path_buf(),
        source,
    })?;
    let pgid = child.id() as libc::pid_t;
    let stdout = drain(child.stdout.take());
    let stderr = drain(child.stderr.take());

    let deadline = start + opts.timeout;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(ExecError::Wait)? {
            break Some(status);
        }
        if Instant::now() >= deadline {
            break None;
        }
        thread::sleep(POLL_INTERVAL);
    };
    let exit_code = match status {
        Some(status) => ExitCode::Code(
            status
                .code()
                .or_else(|| status.signal().map(|s| 128 + s))
                .unwrap_or(-1),
        ),
        None => {
            // SAFETY: killpg only sends a signal; pgid is the group we created.
            unsafe {
                libc::killpg(pgid, libc::SIGKILL);
            }
            child.wait().map_err(ExecError::Wait)?;
            ExitCode::Timeout
        }
    };
    let wall_time = start.elapsed();
    Ok(ExecResult {
        command: command.to_string(),
        exit_code,
        stdout: stdout.join().unwrap_or_default(),
        stderr: stderr.join().unwrap_or_default(),
        wall_time,
    })
}

fn drain<R: Read + Send + 'static>(stream: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut s) = stream {
            let _ = s.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Launch check for long-running (interactive or GUI) programs: passes if the
/// process exits cleanly or is still alive when `grace` expires.
pub fn check_launch(
    command: &str,
    workdir: &Path,
    grace: Duration,
    opts: &ExecOptions,
) -> Result<ExecResult, ExecError> {
    let mut result = run_command(command, workdir, &opts.clone().with_timeout(grace))?;
    if result.timed_out() {
        result.exit_code = ExitCode::Code(0);
    }
    Ok(result)
}

const TRACEBACK_HEADER: &str = "Traceback (most recent call last):";

/// Parses the interpreter's standard traceback format. Uses the last
/// traceback block in the text; without one, frames are empty and the message
/// is the last non-empty line.
pub fn parse_traceback(stderr: &str) -> Traceback {
    let lines: Vec<&str> = stderr.lines().collect();
    let Some(start) = lines.iter().rposition(|l| l.trim() == TRACEBACK_HEADER) else {
        return Traceback {
            frames: Vec::new(),
            error_type: String::new(),
            error_message: stderr
                .lines()
                .rev()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .unwrap_or_default()
                .to_string(),
        };
    };
    let mut frames = Vec::new();
    let mut error_line = None;
    for line in &lines[start + 1..] {
        if let Some(frame) = parse_frame(line) {
            frames.push(frame);
            continue;
        }
        // source excerpts and caret markers are indented
        if line.starts_with(' ') || line.starts_with('\t') || line.trim().is_empty() {
            continue;
        }
        error_line = Some(line.trim());
        break;
    }
    let (error_type, error_message) = match error_line {
        Some(l) => match l.split_once(':') {
            Some((t, m)) if is_exception_name(t) => (t.trim().to_string(), m.trim().to_string()),
            _ if is_exception_name(l) => (l.to_string(), String::new()),
            _ => (String::new(), l.to_string()),
        },
        None => (String::new(), String::new()),
    };
    Traceback {
        frames,
        error_type,
        error_message,
    }
}

fn is_exception_name(s: &str) -> bool {
    !s.is_empty()
        && s.split('.')
            .all(|p| !p.is_empty() && p.chars().all(|c| c.is_alphanumeric() || c == '_'))
}

/// `  File "path", line N, in symbol` (the `in` part is absent for syntax errors).
fn parse_frame(line: &str) -> Option<Frame> {
    let rest = line.trim_start().strip_prefix("File \"")?;
    let (file, rest) = rest.split_once('"')?;
    let rest = rest.strip_prefix(", line ")?;
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    let line_no: usize = digits.parse().ok().filter(|&n| n >= 1)?;
    let symbol = rest[digits.len()..]
        .strip_prefix(", in ")
        .map(|s| s.trim().to_string())
        .unwrap_or_default();
    Some(Frame {
        file: file.to_string(),
        line: line_no,
        symbol,
    })
}
