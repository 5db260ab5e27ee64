//! Scripted completions for tests and deterministic replay.
//!
//! A script is JSON Lines, one `{purpose, match?, output, delay_ms?}` object
//! per line. Entries are consumed in file order per purpose; an entry with
//! `match` is only eligible when that substring occurs in the prompt.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CompletionRequest, LlmBackend, LlmError};
use crate::prompt::Purpose;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub purpose: Purpose,
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub match_text: Option<String>,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
}

impl ScriptEntry {
    pub fn new(purpose: Purpose, output: impl Into<String>) -> Self {
        Self {
            purpose,
            match_text: None,
            output: output.into(),
            delay_ms: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed script line {line}: {message}")]
    MalformedScript { line: usize, message: String },
}

#[derive(Debug, Default)]
struct Queues {
    dfcp: VecDeque<ScriptEntry>,
    ttcp: VecDeque<ScriptEntry>,
}

impl Queues {
    fn get_mut(&mut self, purpose: Purpose) -> &mut VecDeque<ScriptEntry> {
        match purpose {
            Purpose::Dfcp => &mut self.dfcp,
            Purpose::Ttcp => &mut self.ttcp,
        }
    }
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<Queues>,
}

impl ScriptedBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut queues = Queues::default();
        for e in entries {
            queues.get_mut(e.purpose).push_back(e);
        }
        Self {
            queues: Mutex::new(queues),
        }
    }

    pub fn len(&self, purpose: Purpose) -> usize {
        self.queues.lock().unwrap().get_mut(purpose).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len(Purpose::Dfcp) == 0 && self.len(Purpose::Ttcp) == 0
    }

    /// Remove and return the first eligible entry for this purpose.
    pub fn take(&self, purpose: Purpose, prompt: &str) -> Result<ScriptEntry, LlmError> {
        let mut queues = self.queues.lock().unwrap();
        let queue = queues.get_mut(purpose);
        let idx = queue
            .iter()
            .position(|e| e.match_text.as_deref().is_none_or(|m| prompt.contains(m)))
            .ok_or(LlmError::ScriptExhausted(purpose))?;
        Ok(queue.remove(idx).expect("index from position"))
    }
}

#[async_trait]
impl LlmBackend for ScriptedBackend {
    async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let entry = self.take(req.purpose, &req.prompt.body)?;
        if let Some(ms) = entry.delay_ms {
            tokio::time::sleep(Duration::from_millis(ms)).await;
        }
        Ok(entry.output)
    }
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptEntry>, ScriptError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ScriptError::MalformedScript {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_script(path: impl AsRef<Path>) -> Result<ScriptedBackend, ScriptError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(ScriptedBackend::from_entries(parse_script(&text)?))
}
