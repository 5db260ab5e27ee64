//! Deterministic offline sessions driven by a scripted LLM and a scripted
//! user.
//!
//! The user script is JSON Lines. Each line is either an utterance
//! `{"text", "pre_silence_ms"?, "post_silence_ms"?}` or a directive that
//! holds back the following lines until a condition is met:
//!
//! | line | waits until |
//! |---|---|
//! | `{"directive":"await_system_turn"}` | a system utterance has ended since the directive became current and the floor is open |
//! | `{"directive":"await_system_speaking"}` | system playback is in progress |
//! | `{"directive":"await_phase","phase":"Closing"}` | the session reached that phase or a later one |
//! | `{"directive":"wait","ms":1500}` | the given time has passed |
//!
//! Lines are consumed in order, and a line after an utterance waits for that
//! utterance's final recognition result. Once closing has begun every
//! directive is satisfied immediately.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::AssetCatalog;
use crate::event::{EventKind, SessionEvent, SessionSummary};
use crate::llm::{ScriptEntry, ScriptedBackend, ScriptedPort};
use crate::scenario::Scenario;
use crate::session::{Engine, EngineSettings, Input};
use crate::state::Phase;
use crate::transcript::{EventSink, StorageError, TranscriptHeader, TranscriptWriter};
use crate::turn::FloorState;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedUtterance {
    pub text: String,
    #[serde(default)]
    pub pre_silence_ms: u64,
    #[serde(default)]
    pub post_silence_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "directive", rename_all = "snake_case", deny_unknown_fields)]
pub enum Directive {
    AwaitSystemTurn,
    AwaitSystemSpeaking,
    AwaitPhase { phase: Phase },
    Wait { ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UserScriptEntry {
    Utterance(ScriptedUtterance),
    Directive(Directive),
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed user script line {line}: {message}")]
    MalformedScript { line: usize, message: String },
    #[error("session did not end within {ticks} ticks")]
    LoopCap { ticks: u64 },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

pub fn parse_user_script(text: &str) -> Result<Vec<UserScriptEntry>, ReplayError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| ReplayError::MalformedScript {
            line: i + 1,
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(line).map_err(malformed)?;
        let entry = if value.get("directive").is_some() {
            UserScriptEntry::Directive(serde_json::from_value(value).map_err(malformed)?)
        } else {
            UserScriptEntry::Utterance(serde_json::from_value(value).map_err(malformed)?)
        };
        if let UserScriptEntry::Utterance(u) = &entry {
            if u.text.trim().is_empty() {
                return Err(ReplayError::MalformedScript {
                    line: i + 1,
                    message: "utterance text is empty".into(),
                });
            }
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn load_user_script(path: impl AsRef<Path>) -> Result<Vec<UserScriptEntry>, ReplayError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ReplayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_user_script(&text)
}

#[derive(Debug, Clone)]
pub struct ReplayConfig {
    pub scenario: Scenario,
    pub catalog: AssetCatalog,
    pub settings: EngineSettings,
    pub llm_script: Vec<ScriptEntry>,
    pub user_script: Vec<UserScriptEntry>,
    /// Defaults to enough ticks for the budget plus ten minutes of closing.
    pub max_ticks: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub header: TranscriptHeader,
    pub events: Vec<SessionEvent>,
    pub summary: SessionSummary,
    pub ended_at_ms: u64,
}

impl ReplayOutcome {
    /// Full JSON Lines transcript, header first.
    pub fn transcript(&self) -> String {
        let mut w =
            TranscriptWriter::new(Vec::new(), &self.header).expect("writing to memory cannot fail");
        for e in &self.events {
            w.persist(e).expect("writing to memory cannot fail");
        }
        String::from_utf8(w.into_inner()).expect("serde_json emits UTF-8")
    }

    /// Transcript lines after the header; identical across runs of the same inputs.
    pub fn event_lines(&self) -> String {
        crate::transcript::strip_header(&self.transcript()).to_string()
    }
}

struct Cursor {
    entries: Vec<UserScriptEntry>,
    idx: usize,
    activated_at: Option<u64>,
    ends_at_activation: usize,
    pushed: usize,
    finals: usize,
    ends: usize,
}

impl Cursor {
    /// Inputs released at `now`, given the engine's state after the previous tick.
    fn release(&mut self, now: u64, engine: &Engine) -> Vec<Input> {
        let mut inputs = Vec::new();
        while let Some(entry) = self.entries.get(self.idx) {
            if self.finals < self.pushed {
                break;
            }
            let activated_at = match self.activated_at {
                Some(t) => t,
                None => {
                    self.activated_at = Some(now);
                    self.ends_at_activation = self.ends;
                    now
                }
            };
            let ready = match entry {
                UserScriptEntry::Utterance(u) => {
                    inputs.push(Input::Utterance {
                        text: u.text.clone(),
                        pre_silence_ms: u.pre_silence_ms,
                        post_silence_ms: u.post_silence_ms,
                    });
                    self.pushed += 1;
                    true
                }
                UserScriptEntry::Directive(_) if engine.phase() >= Phase::Closing => true,
                UserScriptEntry::Directive(d) => match d {
                    Directive::AwaitSystemTurn => {
                        self.ends > self.ends_at_activation
                            && engine.floor() == FloorState::OpenFloor
                    }
                    Directive::AwaitSystemSpeaking => engine.floor() == FloorState::SystemSpeaking,
                    Directive::AwaitPhase { phase } => engine.phase() >= *phase,
                    Directive::Wait { ms } => now >= activated_at + ms,
                },
            };
            if !ready {
                break;
            }
            self.idx += 1;
            self.activated_at = None;
        }
        inputs
    }

    fn observe(&mut self, events: &[SessionEvent]) {
        for e in events {
            match e.kind {
                EventKind::UserFinal { .. } => self.finals += 1,
                EventKind::SystemUtteranceEnd { .. } => self.ends += 1,
                _ => {}
            }
        }
    }
}

/// Run one session to completion on logical time.
pub fn replay_run(config: ReplayConfig) -> Result<ReplayOutcome, ReplayError> {
    let tick = config.settings.tick_ms.max(1);
    let budget_ms = config
        .settings
        .budget_ms
        .unwrap_or_else(|| config.scenario.budget_ms());
    let max_ticks = config.max_ticks.unwrap_or((budget_ms + 600_000) / tick + 1);

    let port = ScriptedPort::new(ScriptedBackend::from_entries(config.llm_script));
    let mut engine = Engine::new(
        config.scenario,
        config.catalog,
        config.settings,
        Box::new(port),
    );
    let header = TranscriptHeader::new(engine.scenario().id.clone(), engine.config_hash());

    let mut cursor = Cursor {
        entries: config.user_script,
        idx: 0,
        activated_at: None,
        ends_at_activation: 0,
        pushed: 0,
        finals: 0,
        ends: 0,
    };
    let mut events = engine.start(0);
    cursor.observe(&events);

    let mut now = 0;
    let mut ticks = 0;
    while !engine.is_ended() {
        if ticks >= max_ticks {
            return Err(ReplayError::LoopCap { ticks });
        }
        let inputs = cursor.release(now, &engine);
        let batch = engine.step(now, &inputs);
        cursor.observe(&batch);
        events.extend(batch);
        now += tick;
        ticks += 1;
    }

    Ok(ReplayOutcome {
        header,
        summary: engine.summary().clone(),
        ended_at_ms: engine.now(),
        events,
    })
}
