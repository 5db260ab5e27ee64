//! Deterministic rendering of the dialogue-flow and turn-taking prompts.
//!
//! Both prompts are plain text using `# Heading` sections. Rendering is a
//! pure function of the scenario and history, so identical inputs always
//! produce byte-identical bodies.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scenario::Scenario;
use crate::state::{Annotation, Speaker, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    #[serde(rename = "DFCP")]
    Dfcp,
    #[serde(rename = "TTCP")]
    Ttcp,
}

impl std::fmt::Display for Purpose {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Purpose::Dfcp => "DFCP",
            Purpose::Ttcp => "TTCP",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub purpose: Purpose,
    pub body: String,
    pub line_count: usize,
    pub char_count: usize,
}

impl PromptText {
    fn new(purpose: Purpose, body: String) -> Self {
        Self {
            purpose,
            line_count: body.lines().count(),
            char_count: body.chars().count(),
            body,
        }
    }

    pub fn stats(&self) -> PromptStats {
        let digest = Sha256::digest(self.body.as_bytes());
        PromptStats {
            purpose: self.purpose,
            lines: self.line_count,
            chars: self.char_count,
            sha256: hex::encode(&digest[..8]),
        }
    }
}

/// Compact audit record of a rendered prompt, carried in transcript events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStats {
    pub purpose: Purpose,
    pub lines: usize,
    pub chars: usize,
    /// First 8 bytes of the SHA-256 of the body, hex encoded.
    pub sha256: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("latest user utterance is empty")]
    EmptyUtterance,
}

pub const DFCP_COMMAND_PREAMBLE: [&str; 3] = [
    "Before you speak, always decide whether or not to execute the following \"Command-List.\"",
    "If you think it is necessary, select a command from the list and output only a single digit number.",
    "The command is automatically executed when a single digit number is output.",
];

const TTCP_HEADER: &str = "The following conditions must be obeyed.";

const TTCP_CONSTRAINTS: [&str; 5] = [
    "The customer has spoken,",
    "but may be about to continue speaking.",
    "Judge from the dialog history below.",
    "Will the customer keep speaking?",
    "Choose one of the speech types.",
];

const TTCP_OUTPUT_CONDITION: [&str; 2] = ["Output a single digit number.", "Output nothing else."];

const CUSTOMER_LABEL: &str = "Customer";
const AGENT_LABEL: &str = "You";

/// Render the dialogue-flow control prompt.
pub fn render_dfcp(s: &Scenario, history: &[Turn]) -> PromptText {
    render_dfcp_with_directive(s, history, None)
}

/// Render the dialogue-flow control prompt, appending a one-line directive
/// after the history when one is pending.
pub fn render_dfcp_with_directive(
    s: &Scenario,
    history: &[Turn],
    directive: Option<&str>,
) -> PromptText {
    let mut body = String::new();

    section(&mut body, "# Constraints", &s.constraints);

    header(&mut body, "# Task");
    for task in &s.tasks {
        let _ = writeln!(body, "  {}: {}", task.ordinal, task.instruction);
    }

    section(
        &mut body,
        "# Requirements for sightseeing spots",
        &s.spot_requirements,
    );

    body.push('\n');
    for line in DFCP_COMMAND_PREAMBLE {
        body.push_str(line);
        body.push('\n');
    }
    body.push_str("# Command-List\n");
    for cmd in &s.command_table {
        let _ = writeln!(body, "  {}: {}", cmd.digit, cmd.description);
    }
    section(
        &mut body,
        "# When to execute the \"Command-List\"",
        &s.command_timing_notes,
    );

    header(&mut body, "# Dialog History");
    for turn in window(history, s.history_window) {
        history_line(&mut body, turn);
    }

    if let Some(directive) = directive {
        header(&mut body, "# Directive");
        let _ = writeln!(body, "  {directive}");
    }

    PromptText::new(Purpose::Dfcp, body)
}

/// Render the turn-taking control prompt for the utterance that just ended.
pub fn render_ttcp(
    s: &Scenario,
    history: &[Turn],
    latest_user_utterance: &str,
) -> Result<PromptText, PromptError> {
    let latest = latest_user_utterance.trim();
    if latest.is_empty() {
        return Err(PromptError::EmptyUtterance);
    }

    let mut body = String::new();
    body.push_str(TTCP_HEADER);
    body.push('\n');
    section(&mut body, "# Constraints", &TTCP_CONSTRAINTS);
    section(&mut body, "# Output condition", &TTCP_OUTPUT_CONDITION);

    header(&mut body, "# Dialog History");
    for turn in window(history, s.history_window) {
        history_line(&mut body, turn);
    }
    let _ = writeln!(body, "  {CUSTOMER_LABEL}: {}", one_line(latest));

    header(&mut body, "# List of Customer Speech Types");
    for class in &s.turn_class_table {
        let _ = writeln!(body, "  {}: {}", class.digit, class.description);
    }

    Ok(PromptText::new(Purpose::Ttcp, body))
}

/// Sections after the first are separated by one blank line.
fn header(body: &mut String, header: &str) {
    if !body.is_empty() && !body.ends_with("\n\n") {
        body.push('\n');
    }
    body.push_str(header);
    body.push('\n');
}

fn section<S: AsRef<str>>(body: &mut String, title: &str, lines: &[S]) {
    header(body, title);
    for line in lines {
        let _ = writeln!(body, "  {}", line.as_ref());
    }
}

fn window(history: &[Turn], size: usize) -> &[Turn] {
    &history[history.len().saturating_sub(size)..]
}

fn history_line(body: &mut String, turn: &Turn) {
    if turn.is_command_marker() {
        let _ = writeln!(body, "  {}", turn.text);
        return;
    }
    let label = match turn.speaker {
        Speaker::User => CUSTOMER_LABEL,
        Speaker::System => AGENT_LABEL,
    };
    let _ = write!(body, "  {label}: {}", one_line(&turn.text));
    if turn.annotation == Some(Annotation::BargeIn) {
        body.push_str(" [interrupted]");
    }
    body.push('\n');
}

/// Collapse embedded newlines so every turn occupies exactly one line.
fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
