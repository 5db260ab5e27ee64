//! Classification of raw LLM completions under the single-digit protocol.
//!
//! A completion that is exactly one digit from the command table invokes
//! that command; anything else is an utterance to be spoken. Turn-taking
//! completions must reduce to one digit from the speech-type table.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{CommandSpec, TurnClassSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    /// Also accepts a digit echoed with its option text, e.g. `3: Propose a plan.`
    Lenient,
}

impl std::str::FromStr for ParseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(ParseMode::Strict),
            "lenient" => Ok(ParseMode::Lenient),
            other => Err(format!(
                "unknown parse mode `{other}` (expected strict|lenient)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DfcpOutcome {
    Utterance(String),
    CommandInvocation(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpretError {
    #[error("completion is empty")]
    EmptyOutput,
    #[error("digit {0} is not in the command table")]
    UnknownCommand(u8),
    #[error("completion is not a speech-type digit: {0:?}")]
    Unparseable(String),
    #[error("digit {0} is not in the speech-type table")]
    UnknownClass(u8),
}

/// Split `raw` into a leading digit and whatever follows, when the trimmed
/// text starts with an ASCII digit.
fn leading_digit(trimmed: &str) -> Option<(u8, &str)> {
    let first = trimmed.chars().next()?;
    let d = first.to_digit(10)?;
    Some((d as u8, &trimmed[first.len_utf8()..]))
}

/// Lenient echo form: `d`, `d.`, or `d:` optionally followed by a prefix of
/// the option's description. Returns the digit when the shape matches.
fn echo_digit<'a>(trimmed: &str, describe: impl Fn(u8) -> Option<&'a str>) -> Option<u8> {
    let (d, rest) = leading_digit(trimmed)?;
    if rest.is_empty() {
        return Some(d);
    }
    let rest = rest.strip_prefix(['.', ':'])?;
    let echoed = rest.trim_start();
    if echoed.is_empty() {
        return Some(d);
    }
    let description = describe(d)?;
    description.starts_with(echoed).then_some(d)
}

pub fn classify_dfcp_output(
    raw: &str,
    table: &[CommandSpec],
    mode: ParseMode,
) -> Result<DfcpOutcome, InterpretError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(InterpretError::EmptyOutput);
    }
    let known = |d: u8| table.iter().any(|c| c.digit == d);

    let candidate = match mode {
        ParseMode::Strict => match leading_digit(trimmed) {
            Some((d, "")) => Some(d),
            _ => None,
        },
        ParseMode::Lenient => echo_digit(trimmed, |d| {
            table
                .iter()
                .find(|c| c.digit == d)
                .map(|c| c.description.as_str())
        }),
    };

    match candidate {
        Some(d) if known(d) => Ok(DfcpOutcome::CommandInvocation(d)),
        Some(d) => Err(InterpretError::UnknownCommand(d)),
        None => Ok(DfcpOutcome::Utterance(trimmed.to_string())),
    }
}

pub fn parse_ttcp_output(
    raw: &str,
    table: &[TurnClassSpec],
    mode: ParseMode,
) -> Result<u8, InterpretError> {
    let trimmed = raw.trim();
    let candidate = match mode {
        ParseMode::Strict => match leading_digit(trimmed) {
            Some((d, "")) => Some(d),
            _ => None,
        },
        ParseMode::Lenient => echo_digit(trimmed, |d| {
            table
                .iter()
                .find(|c| c.digit == d)
                .map(|c| c.description.as_str())
        }),
    };
    match candidate {
        Some(d) if table.iter().any(|c| c.digit == d) => Ok(d),
        Some(d) => Err(InterpretError::UnknownClass(d)),
        None => Err(InterpretError::Unparseable(trimmed.to_string())),
    }
}
