//! The uniform session event envelope persisted to transcripts and streamed
//! to clients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dispatch::Effect;
use crate::prompt::{PromptStats, Purpose};
use crate::state::{Phase, TransitionCause};
use crate::turn::{FloorState, TurnDecision, UtteranceSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub at_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    UserPartial {
        text: String,
    },
    UserFinal {
        text: String,
        silence_ms: u64,
        started_at_ms: u64,
    },
    SystemUtteranceStart {
        text: String,
        source: UtteranceSource,
        duration_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        generation: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt: Option<PromptStats>,
    },
    SystemUtteranceEnd {
        spoken_text: String,
        truncated: bool,
    },
    CommandIssued {
        digit: u8,
        generation: u64,
        prompt: PromptStats,
    },
    EffectExecuted {
        digit: u8,
        effect: Effect,
    },
    TurnClassAssigned {
        digit: u8,
        decision: TurnDecision,
        prompt: PromptStats,
    },
    PhaseChanged {
        from: Phase,
        to: Phase,
        cause: TransitionCause,
    },
    BargeIn {
        during: FloorState,
        /// False when the system kept speaking (the closing script does not yield).
        yielded: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spoken_prefix: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cancelled_generation: Option<u64>,
    },
    ProtocolBreach {
        purpose: Purpose,
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        raw: Option<String>,
        action: BreachAction,
    },
    SessionEnded(SessionSummary),
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::UserPartial { .. } => "UserPartial",
            EventKind::UserFinal { .. } => "UserFinal",
            EventKind::SystemUtteranceStart { .. } => "SystemUtteranceStart",
            EventKind::SystemUtteranceEnd { .. } => "SystemUtteranceEnd",
            EventKind::CommandIssued { .. } => "CommandIssued",
            EventKind::EffectExecuted { .. } => "EffectExecuted",
            EventKind::TurnClassAssigned { .. } => "TurnClassAssigned",
            EventKind::PhaseChanged { .. } => "PhaseChanged",
            EventKind::BargeIn { .. } => "BargeIn",
            EventKind::ProtocolBreach { .. } => "ProtocolBreach",
            EventKind::SessionEnded(_) => "SessionEnded",
        }
    }
}

/// What the engine did after a protocol breach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreachAction {
    /// The dialogue-flow completion is requested once more.
    Retry,
    /// No system response this turn.
    SkipTurn,
    /// Turn-taking fell back to taking the turn.
    TakeTurn,
}

/// End-of-session counters, also used as the replay exit summary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub final_phase: Option<Phase>,
    /// Executed command counts keyed by digit.
    pub commands: BTreeMap<String, u32>,
    pub barge_ins: u32,
    pub breaches: u32,
    pub hold_decisions: u32,
    pub goal_achieved: bool,
    pub persistence_degraded: bool,
}
