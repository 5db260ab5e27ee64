//! Turn-taking: floor state, speech-type decisions, hold extensions and
//! barge-in handling.

use serde::{Deserialize, Serialize};

use crate::interpret::{parse_ttcp_output, ParseMode};
use crate::llm::LlmError;
use crate::prompt::{render_ttcp, PromptError, PromptText};
use crate::scenario::{FloorAction, Scenario};
use crate::state::{Annotation, SessionState, Speaker, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FloorState {
    UserSpeaking,
    SystemSpeaking,
    OpenFloor,
    /// A turn-taking or dialogue-flow completion is in flight.
    Deliberating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TurnDecision {
    HoldFloor { extension_ms: u64 },
    TakeTurn,
}

impl From<FloorAction> for TurnDecision {
    fn from(a: FloorAction) -> Self {
        match a {
            FloorAction::HoldFloor { extension_ms } => TurnDecision::HoldFloor { extension_ms },
            FloorAction::TakeTurn => TurnDecision::TakeTurn,
        }
    }
}

/// Result of one turn-taking classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TtcpVerdict {
    pub decision: TurnDecision,
    /// Assigned speech-type digit; `None` when classification failed.
    pub class: Option<u8>,
    /// Why classification failed, when it did. Failures always take the turn.
    pub breach: Option<String>,
}

/// Map a raw turn-taking completion to a floor decision. Any failure takes
/// the turn so the dialogue never stalls in silence.
pub fn resolve_ttcp(
    raw: Result<String, LlmError>,
    scenario: &Scenario,
    mode: ParseMode,
) -> TtcpVerdict {
    let fail = |reason: String| TtcpVerdict {
        decision: TurnDecision::TakeTurn,
        class: None,
        breach: Some(reason),
    };
    let raw = match raw {
        Ok(raw) => raw,
        Err(e) => return fail(e.to_string()),
    };
    match parse_ttcp_output(&raw, &scenario.turn_class_table, mode) {
        Ok(digit) => {
            let class = scenario
                .turn_class(digit)
                .expect("parser only returns digits from the table");
            TtcpVerdict {
                decision: class.floor_action.into(),
                class: Some(digit),
                breach: None,
            }
        }
        Err(e) => fail(e.to_string()),
    }
}

/// Render the turn-taking prompt for the most recent user turn. The pending
/// utterance is rendered last and excluded from the preceding history.
pub fn render_ttcp_for_latest(
    state: &SessionState,
    scenario: &Scenario,
    final_text: &str,
) -> Result<PromptText, PromptError> {
    let history = match state.history.last() {
        Some(t) if t.speaker == Speaker::User && t.text == final_text => {
            &state.history[..state.history.len() - 1]
        }
        _ => &state.history[..],
    };
    render_ttcp(scenario, history, final_text)
}

/// Classify whether the user will keep talking and decide what to do with
/// the floor. The assigned class is annotated onto the latest user turn.
pub fn decide_turn(
    final_text: &str,
    state: &mut SessionState,
    scenario: &Scenario,
    mode: ParseMode,
    complete: impl FnOnce(&PromptText) -> Result<String, LlmError>,
) -> TtcpVerdict {
    let prompt = match render_ttcp_for_latest(state, scenario, final_text) {
        Ok(p) => p,
        Err(e) => {
            return TtcpVerdict {
                decision: TurnDecision::TakeTurn,
                class: None,
                breach: Some(e.to_string()),
            }
        }
    };
    let verdict = resolve_ttcp(complete(&prompt), scenario, mode);
    if let Some(class) = verdict.class {
        annotate_latest_user_turn(state, class);
    }
    verdict
}

pub fn annotate_latest_user_turn(state: &mut SessionState, class: u8) {
    if let Some(turn) = state.last_user_turn_mut() {
        turn.annotation = Some(Annotation::TurnClass(class));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfterHold {
    /// The user resumed speaking; wait for their next final result.
    Defer,
    TakeTurn,
}

/// Decide what happens once a hold window ends, or is broken by new speech.
pub fn on_extension_elapsed(
    had_new_speech: bool,
    holds_so_far: u32,
    max_consecutive_holds: u32,
) -> AfterHold {
    if holds_so_far >= max_consecutive_holds {
        AfterHold::TakeTurn
    } else if had_new_speech {
        AfterHold::Defer
    } else {
        AfterHold::TakeTurn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceSource {
    Intro,
    Dfcp,
    Clarify,
    Closing,
}

/// A system utterance being "spoken" by simulated playback.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Playback {
    pub text: String,
    pub started_at: u64,
    pub duration_ms: u64,
    pub source: UtteranceSource,
    pub generation: Option<u64>,
}

/// Simulated speaking time: whole seconds at `chars_per_second`, rounded up.
pub fn speaking_duration_ms(text: &str, chars_per_second: u32) -> u64 {
    let chars = text.chars().count() as u64;
    chars.div_ceil(chars_per_second.max(1) as u64) * 1000
}

impl Playback {
    pub fn new(
        text: impl Into<String>,
        started_at: u64,
        chars_per_second: u32,
        source: UtteranceSource,
        generation: Option<u64>,
    ) -> Self {
        let text = text.into();
        Self {
            duration_ms: speaking_duration_ms(&text, chars_per_second),
            text,
            started_at,
            source,
            generation,
        }
    }

    pub fn ends_at(&self) -> u64 {
        self.started_at + self.duration_ms
    }

    /// Portion of the text already spoken at `now`, proportional to elapsed time.
    pub fn spoken_prefix(&self, now: u64) -> &str {
        let total = self.text.chars().count() as u64;
        let elapsed = now.saturating_sub(self.started_at).min(self.duration_ms);
        let spoken = (total * elapsed)
            .checked_div(self.duration_ms)
            .unwrap_or(total);
        match self.text.char_indices().nth(spoken as usize) {
            Some((idx, _)) => &self.text[..idx],
            None => &self.text,
        }
    }
}

/// What a barge-in did to the system side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BargeIn {
    /// Playback was cut; `spoken` is what the user actually heard.
    Truncated { playback: Playback, spoken: String },
    /// The in-flight completion with this generation must be cancelled.
    Cancelled { generation: Option<u64> },
}

/// Apply user speech arriving while the system holds the floor. Returns
/// `None` when the floor was not held by the system (normal turn start).
pub fn handle_barge_in(
    state: &mut SessionState,
    playback: &mut Option<Playback>,
    in_flight: Option<u64>,
    now: u64,
) -> Option<BargeIn> {
    let prior = state.floor;
    state.floor = FloorState::UserSpeaking;
    match prior {
        FloorState::SystemSpeaking => {
            let playback = playback.take()?;
            let spoken = playback.spoken_prefix(now).trim_end().to_string();
            if !spoken.is_empty() {
                let mut turn = Turn::system(spoken.clone(), playback.started_at, now);
                turn.annotation = Some(Annotation::BargeIn);
                // Cannot regress: the previous system turn ended before this playback began.
                let _ = state.append_turn(turn);
            }
            Some(BargeIn::Truncated { playback, spoken })
        }
        FloorState::Deliberating => Some(BargeIn::Cancelled {
            generation: in_flight,
        }),
        FloorState::OpenFloor | FloorState::UserSpeaking => None,
    }
}
