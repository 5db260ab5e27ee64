//! Declarative scenario documents.
//!
//! A scenario carries everything the prompts and the rule-based phases need:
//! the ordered task list, the digit-indexed command table, the customer
//! speech-type table used for turn-taking, and the intro/closing scripts.
//! Documents are JSON with a `schema: 1` marker; unknown keys are rejected.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Only schema version understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_HISTORY_WINDOW: usize = 20;
pub const DEFAULT_MAX_CONSECUTIVE_HOLDS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub id: String,
    pub title: String,
    pub constraints: Vec<String>,
    pub tasks: Vec<Task>,
    pub spot_requirements: Vec<String>,
    pub command_table: Vec<CommandSpec>,
    pub command_timing_notes: Vec<String>,
    pub turn_class_table: Vec<TurnClassSpec>,
    pub intro_script: Vec<String>,
    pub closing_script: Vec<String>,
    /// Session budget in seconds.
    pub session_budget: u64,
    /// Number of most recent turns rendered into prompts.
    #[serde(default = "default_history_window")]
    pub history_window: usize,
    #[serde(default = "default_max_holds")]
    pub max_consecutive_holds: u32,
}

fn default_history_window() -> usize {
    DEFAULT_HISTORY_WINDOW
}

fn default_max_holds() -> u32 {
    DEFAULT_MAX_CONSECUTIVE_HOLDS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub ordinal: u32,
    pub instruction: String,
    /// Set on entries that fill gaps in a partially known source prompt.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reconstructed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSpec {
    pub digit: u8,
    pub description: String,
    pub effect: EffectKind,
}

/// The closed set of engine effects a command digit can be bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EffectKind {
    EndDialogue,
    FinalizePlan,
    ShowImages,
    ProposePlan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnClassSpec {
    pub digit: u8,
    pub description: String,
    pub floor_action: FloorAction,
}

/// What the system does with the floor once a speech type is assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum FloorAction {
    HoldFloor { extension_ms: u64 },
    TakeTurn,
}

impl Scenario {
    pub fn budget_ms(&self) -> u64 {
        self.session_budget.saturating_mul(1000)
    }

    pub fn command(&self, digit: u8) -> Option<&CommandSpec> {
        self.command_table.iter().find(|c| c.digit == digit)
    }

    pub fn turn_class(&self, digit: u8) -> Option<&TurnClassSpec> {
        self.turn_class_table.iter().find(|c| c.digit == digit)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// A single broken invariant, located by a JSON-path-like string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("malformed scenario document: {0}")]
    MalformedDocument(String),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("invariant violation at {}", .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvariantViolation(Vec<Violation>),
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ScenarioError {
    /// Path of the offending field, when the error is located.
    pub fn path(&self) -> Option<&str> {
        match self {
            ScenarioError::SchemaViolation { path, .. } => Some(path),
            ScenarioError::InvariantViolation(v) => v.first().map(|v| v.path.as_str()),
            _ => None,
        }
    }
}

/// Parse and validate a scenario document.
pub fn parse_scenario(document: &str) -> Result<Scenario, ScenarioError> {
    let value: serde_json::Value = serde_json::from_str(document)
        .map_err(|e| ScenarioError::MalformedDocument(e.to_string()))?;

    let scenario: Scenario = serde_path_to_error::deserialize(&value).map_err(|e| {
        let path = e.path().to_string();
        ScenarioError::SchemaViolation {
            path: if path == "." { "$".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })?;

    if scenario.schema != SCHEMA_VERSION {
        return Err(ScenarioError::SchemaViolation {
            path: "schema".into(),
            message: format!(
                "unsupported schema version {}, expected {SCHEMA_VERSION}",
                scenario.schema
            ),
        });
    }

    let violations = validate_scenario(&scenario);
    if violations.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::InvariantViolation(violations))
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

/// Check every scenario invariant. Returns an empty list iff the scenario is valid.
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();

    if s.id.trim().is_empty() {
        out.push(Violation::new("id", "must be nonempty"));
    }

    if s.tasks.is_empty() {
        out.push(Violation::new("tasks", "at least one task is required"));
    }
    let mut prev_ordinal = 0;
    for (i, task) in s.tasks.iter().enumerate() {
        if i == 0 && task.ordinal != 1 {
            out.push(Violation::new(
                format!("tasks[{i}].ordinal"),
                "first task ordinal must be 1",
            ));
        } else if i > 0 && task.ordinal <= prev_ordinal {
            out.push(Violation::new(
                format!("tasks[{i}].ordinal"),
                format!(
                    "ordinal {} must be greater than {prev_ordinal}",
                    task.ordinal
                ),
            ));
        }
        if task.instruction.trim().is_empty() {
            out.push(Violation::new(
                format!("tasks[{i}].instruction"),
                "must be nonempty",
            ));
        }
        prev_ordinal = task.ordinal;
    }

    let mut seen = HashSet::new();
    for (i, cmd) in s.command_table.iter().enumerate() {
        if cmd.digit > 9 {
            out.push(Violation::new(
                format!("command_table[{i}].digit"),
                format!("{} is not a single decimal digit", cmd.digit),
            ));
        } else if !seen.insert(cmd.digit) {
            out.push(Violation::new(
                format!("command_table[{i}].digit"),
                format!("duplicate command digit {}", cmd.digit),
            ));
        }
        if cmd.description.trim().is_empty() {
            out.push(Violation::new(
                format!("command_table[{i}].description"),
                "must be nonempty",
            ));
        }
    }

    let mut seen = HashSet::new();
    for (i, class) in s.turn_class_table.iter().enumerate() {
        if class.digit > 9 {
            out.push(Violation::new(
                format!("turn_class_table[{i}].digit"),
                format!("{} is not a single decimal digit", class.digit),
            ));
        } else if !seen.insert(class.digit) {
            out.push(Violation::new(
                format!("turn_class_table[{i}].digit"),
                format!("duplicate turn-class digit {}", class.digit),
            ));
        }
        if class.description.trim().is_empty() {
            out.push(Violation::new(
                format!("turn_class_table[{i}].description"),
                "must be nonempty",
            ));
        }
        if let FloorAction::HoldFloor { extension_ms: 0 } = class.floor_action {
            out.push(Violation::new(
                format!("turn_class_table[{i}].floor_action.extension_ms"),
                "hold extension must be positive",
            ));
        }
    }

    if s.session_budget == 0 {
        out.push(Violation::new("session_budget", "must be positive"));
    }
    if s.history_window == 0 {
        out.push(Violation::new("history_window", "must be positive"));
    }
    check_script(&mut out, "intro_script", &s.intro_script);
    check_script(&mut out, "closing_script", &s.closing_script);

    out
}

fn check_script(out: &mut Vec<Violation>, name: &str, lines: &[String]) {
    if lines.is_empty() {
        out.push(Violation::new(name, "must contain at least one line"));
    }
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            out.push(Violation::new(format!("{name}[{i}]"), "must be nonempty"));
        }
    }
}
