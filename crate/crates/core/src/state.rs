//! Per-session mutable state: phase machine, dialogue history, clock, floor.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Instant, SystemTime};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::turn::FloorState;

/// Coarse dialogue stage. Phases only ever move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Introduction,
    MetaControlled,
    Closing,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionCause {
    IntroDone,
    Command0,
    BudgetExceeded,
    ClosingDone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    User,
    System,
}

/// Extra information attached to a turn after the fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "digit")]
pub enum Annotation {
    Command(u8),
    TurnClass(u8),
    BargeIn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub started_at: u64,
    pub ended_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<Annotation>,
}

impl Turn {
    pub fn user(text: impl Into<String>, started_at: u64, ended_at: u64) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
            started_at,
            ended_at,
            annotation: None,
        }
    }

    pub fn system(text: impl Into<String>, started_at: u64, ended_at: u64) -> Self {
        Self {
            speaker: Speaker::System,
            text: text.into(),
            started_at,
            ended_at,
            annotation: None,
        }
    }

    /// Marker turn recording that a command was executed.
    pub fn command_marker(digit: u8, at: u64) -> Self {
        Self {
            speaker: Speaker::System,
            text: format!("[command {digit} executed]"),
            started_at: at,
            ended_at: at,
            annotation: Some(Annotation::Command(digit)),
        }
    }

    pub fn is_command_marker(&self) -> bool {
        matches!(self.annotation, Some(Annotation::Command(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionClock {
    pub started_at: SystemTime,
    pub budget_ms: u64,
}

impl SessionClock {
    pub fn new(budget_ms: u64) -> Self {
        assert!(budget_ms > 0, "session budget must be positive");
        Self {
            started_at: SystemTime::now(),
            budget_ms,
        }
    }
}

/// Source of logical milliseconds since session start.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Wall-clock time since construction.
#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn start() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
}

/// Manually advanced clock for replay and tests.
#[derive(Debug, Default)]
pub struct ScriptedClock {
    now: AtomicU64,
}

impl ScriptedClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, ms: u64) {
        self.now.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) -> u64 {
        self.now.fetch_add(ms, Ordering::SeqCst) + ms
    }
}

impl Clock for ScriptedClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("{speaker:?} turn starts at {started_at} ms before previous {speaker:?} turn ended at {last_ended_at} ms")]
    TimestampRegression {
        speaker: Speaker,
        started_at: u64,
        last_ended_at: u64,
    },
    #[error("turn ends at {ended_at} ms before it starts at {started_at} ms")]
    InvertedTurn { started_at: u64, ended_at: u64 },
    #[error("illegal phase transition {from:?} -> {to:?}")]
    IllegalTransition { from: Phase, to: Phase },
}

/// Signal that the session budget has run out while the dialogue is still open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForceClosing {
    pub elapsed_ms: u64,
}

/// Record of an applied phase change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseTransition {
    pub from: Phase,
    pub to: Phase,
    pub cause: TransitionCause,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub phase: Phase,
    pub history: Vec<Turn>,
    pub clock: SessionClock,
    pub floor: FloorState,
    pub goal_achieved: bool,
}

impl SessionState {
    pub fn new(budget_ms: u64) -> Self {
        Self {
            phase: Phase::Introduction,
            history: Vec::new(),
            clock: SessionClock::new(budget_ms),
            floor: FloorState::OpenFloor,
            goal_achieved: false,
        }
    }

    fn last_ended(&self, speaker: Speaker) -> Option<u64> {
        self.history
            .iter()
            .rev()
            .find(|t| t.speaker == speaker)
            .map(|t| t.ended_at)
    }

    /// Append a completed turn. The turn may not start before the previous
    /// turn of the same speaker ended.
    pub fn append_turn(&mut self, turn: Turn) -> Result<(), StateError> {
        if turn.ended_at < turn.started_at {
            return Err(StateError::InvertedTurn {
                started_at: turn.started_at,
                ended_at: turn.ended_at,
            });
        }
        if let Some(last_ended_at) = self.last_ended(turn.speaker) {
            if turn.started_at < last_ended_at {
                return Err(StateError::TimestampRegression {
                    speaker: turn.speaker,
                    started_at: turn.started_at,
                    last_ended_at,
                });
            }
        }
        self.history.push(turn);
        Ok(())
    }

    /// Move the phase machine forward. A transition to the current phase is a no-op
    /// and returns `None`.
    pub fn transition_phase(
        &mut self,
        to: Phase,
        cause: TransitionCause,
    ) -> Result<Option<PhaseTransition>, StateError> {
        let from = self.phase;
        if to < from {
            return Err(StateError::IllegalTransition { from, to });
        }
        if to == from {
            return Ok(None);
        }
        self.phase = to;
        Ok(Some(PhaseTransition { from, to, cause }))
    }

    pub fn check_budget(&self, now_ms: u64) -> Option<ForceClosing> {
        check_budget(self.phase, self.clock.budget_ms, now_ms)
    }

    pub fn last_user_turn_mut(&mut self) -> Option<&mut Turn> {
        self.history
            .iter_mut()
            .rev()
            .find(|t| t.speaker == Speaker::User)
    }
}

/// `ForceClosing` iff the budget is spent and closing has not started yet.
pub fn check_budget(phase: Phase, budget_ms: u64, elapsed_ms: u64) -> Option<ForceClosing> {
    (elapsed_ms >= budget_ms && phase < Phase::Closing).then_some(ForceClosing { elapsed_ms })
}
