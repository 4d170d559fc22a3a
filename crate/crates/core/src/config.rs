//! Run configuration: engine limits and a TOML file format for them.
//!
//! ```toml
//! model = "gpt-3.5-turbo"
//! requirement_file = "requirement.txt"
//! workspace = "out"
//!
//! [backend]
//! mode = "replay"            # live | replay | record
//! fixture = "fixtures/calculator.chatlog"
//!
//! [limits]
//! sprint_cap = 5
//! token_budget = 12000
//!
//! [prices."gpt-3.5-turbo"]
//! input = "0.0005"
//! output = "0.0015"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rust_decimal::Decimal;
use serde::Deserialize;
use thiserror::Error;

use crate::backend::PriceTable;
use crate::chat::{RetryPolicy, DEFAULT_MAX_TURNS};
use crate::exec::DEFAULT_TIMEOUT;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Toml {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("{field} must be at least 1")]
    ZeroLimit { field: &'static str },
    #[error("bad price for model `{model}`: {reason}")]
    BadPrice { model: String, reason: String },
    #[error("test_command must contain `{{script}}`")]
    BadTestCommand,
    #[error("{0}")]
    Invalid(String),
}

/// Everything the sprint engine needs besides the requirement and backend.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub model: String,
    pub sprint_cap: u32,
    pub max_turns: usize,
    pub correction_rounds: usize,
    pub fix_cap: usize,
    /// Budget for every prompt sent to the backend.
    pub token_budget: usize,
    pub timeout: Duration,
    /// Run final commands as launch checks with this grace period.
    pub launch_grace: Option<Duration>,
    pub headless_display: Option<String>,
    /// Shell command running one test script; `{script}` is replaced.
    pub test_command: String,
    pub single_step_review: bool,
    pub retry: RetryPolicy,
    pub prices: PriceTable,
    /// Scope-table rows keyed `"<Role>/<phase>"`.
    pub scope_overrides: BTreeMap<String, Vec<String>>,
    pub prompt_dir: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            model: "gpt-3.5-turbo".to_string(),
            sprint_cap: 5,
            max_turns: DEFAULT_MAX_TURNS,
            correction_rounds: 3,
            fix_cap: 3,
            token_budget: 12_000,
            timeout: DEFAULT_TIMEOUT,
            launch_grace: None,
            headless_display: None,
            test_command: "python3 {script}".to_string(),
            single_step_review: false,
            retry: RetryPolicy::default(),
            prices: PriceTable::default(),
            scope_overrides: BTreeMap::new(),
            prompt_dir: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let limits = [
            ("sprint_cap", self.sprint_cap as usize),
            ("max_turns", self.max_turns),
            ("fix_cap", self.fix_cap),
            ("token_budget", self.token_budget),
            ("retry.attempts", self.retry.attempts),
        ];
        for (field, value) in limits {
            if value == 0 {
                return Err(ConfigError::ZeroLimit { field });
            }
        }
        if self.timeout.is_zero() {
            return Err(ConfigError::ZeroLimit { field: "timeout" });
        }
        if !self.test_command.contains("{script}") {
            return Err(ConfigError::BadTestCommand);
        }
        Ok(())
    }

    /// Share of the prompt budget given to the pool slice in a seed prompt.
    pub fn context_budget(&self) -> usize {
        self.token_budget / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    #[default]
    Replay,
    Record,
}

impl FromStr for BackendMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendMode::Live),
            "replay" => Ok(BackendMode::Replay),
            "record" => Ok(BackendMode::Record),
            other => Err(ConfigError::Invalid(format!(
                "unknown backend mode `{other}` (expected live, replay or record)"
            ))),
        }
    }
}

/// A config file as written. Every field is optional; command-line flags
/// override whatever is set here.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub requirement: Option<String>,
    pub requirement_file: Option<PathBuf>,
    pub workspace: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub limits: LimitsSection,
    #[serde(default)]
    pub exec: ExecSection,
    #[serde(default)]
    pub review: ReviewSection,
    #[serde(default)]
    pub retry: RetrySection,
    #[serde(default)]
    pub prices: BTreeMap<String, PriceSection>,
    #[serde(default)]
    pub scope: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub mode: Option<BackendMode>,
    pub fixture: Option<PathBuf>,
    pub strict: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSection {
    pub sprint_cap: Option<u32>,
    pub max_turns: Option<usize>,
    pub correction_rounds: Option<usize>,
    pub fix_cap: Option<usize>,
    pub token_budget: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecSection {
    pub timeout_secs: Option<u64>,
    pub launch_grace_secs: Option<u64>,
    pub headless_display: Option<String>,
    pub test_command: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewSection {
    pub single_step: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrySection {
    pub attempts: Option<usize>,
    pub base_delay_ms: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSection {
    /// Decimal string, price per 1000 prompt tokens.
    pub input: String,
    pub output: String,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, label: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Toml {
            path: label.to_string(),
            source,
        })
    }

    /// Overlays the file's settings onto `base`.
    pub fn apply_to(&self, base: &mut EngineConfig) -> Result<(), ConfigError> {
        if let Some(m) = &self.model {
            base.model = m.clone();
        }
        let l = &self.limits;
        set(&mut base.sprint_cap, l.sprint_cap);
        set(&mut base.max_turns, l.max_turns);
        set(&mut base.correction_rounds, l.correction_rounds);
        set(&mut base.fix_cap, l.fix_cap);
        set(&mut base.token_budget, l.token_budget);
        let e = &self.exec;
        if let Some(t) = e.timeout_secs {
            base.timeout = Duration::from_secs(t);
        }
        if let Some(g) = e.launch_grace_secs {
            base.launch_grace = Some(Duration::from_secs(g));
        }
        if let Some(d) = &e.headless_display {
            base.headless_display = Some(d.clone());
        }
        if let Some(c) = &e.test_command {
            base.test_command = c.clone();
        }
        set(&mut base.single_step_review, self.review.single_step);
        set(&mut base.retry.attempts, self.retry.attempts);
        if let Some(ms) = self.retry.base_delay_ms {
            base.retry.base_delay = Duration::from_millis(ms);
        }
        for (model, price) in &self.prices {
            let parse = |s: &str| {
                Decimal::from_str(s.trim()).map_err(|e| ConfigError::BadPrice {
                    model: model.clone(),
                    reason: format!("`{s}`: {e}"),
                })
            };
            let (input, output) = (parse(&price.input)?, parse(&price.output)?);
            if input.is_sign_negative() || output.is_sign_negative() {
                return Err(ConfigError::BadPrice {
                    model: model.clone(),
                    reason: "prices must not be negative".into(),
                });
            }
            base.prices.insert(model, input, output);
        }
        base.scope_overrides.extend(self.scope.clone());
        if let Some(p) = &self.prompts {
            base.prompt_dir = Some(p.clone());
        }
        Ok(())
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
