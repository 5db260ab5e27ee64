//! The session engine: one serialized loop per session on logical time.
//!
//! Callers advance the engine with [`Engine::step`] at a fixed tick,
//! passing any user input that arrived since the previous tick. The engine
//! runs the recognizer, reacts to its results, polls outstanding
//! completions and drives simulated playback. Every observable change is
//! emitted as a [`SessionEvent`], persisted through the configured sink and
//! returned to the caller.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asr::{AsrEvent, AsrSim, RecognizerConfig, TypingEvent};
use crate::dispatch::{dispatch_command, AssetCatalog, FollowUp};
use crate::event::{BreachAction, EventKind, SessionEvent, SessionSummary};
use crate::interpret::{classify_dfcp_output, DfcpOutcome, ParseMode};
use crate::llm::{Completion, LlmParams, LlmPort};
use crate::prompt::{render_dfcp_with_directive, PromptStats, Purpose};
use crate::scenario::Scenario;
use crate::state::{Phase, SessionState, TransitionCause, Turn};
use crate::transcript::{EventSink, NullSink};
use crate::turn::{
    annotate_latest_user_turn, handle_barge_in, on_extension_elapsed, render_ttcp_for_latest,
    resolve_ttcp, AfterHold, BargeIn, FloorState, Playback, TurnDecision, UtteranceSource,
};

pub const DEFAULT_TICK_MS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSettings {
    pub tick_ms: u64,
    /// Simulated speaking rate for system playback.
    pub chars_per_second: u32,
    pub parse_mode: ParseMode,
    pub llm: LlmParams,
    pub recognizer: RecognizerConfig,
    /// Completions allowed in one system turn before it is abandoned.
    pub max_chain: u32,
    /// Overrides the scenario's budget when set.
    pub budget_ms: Option<u64>,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            tick_ms: DEFAULT_TICK_MS,
            chars_per_second: 15,
            parse_mode: ParseMode::Strict,
            llm: LlmParams::default(),
            recognizer: RecognizerConfig::default(),
            max_chain: 4,
            budget_ms: None,
        }
    }
}

/// Stable digest of everything that shapes a session besides its inputs.
pub fn config_hash(
    scenario: &Scenario,
    catalog: &AssetCatalog,
    settings: &EngineSettings,
) -> String {
    let doc = serde_json::json!({
        "scenario": scenario,
        "assets": catalog.assets(),
        "settings": settings,
    });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    hex::encode(&digest[..8])
}

/// User input delivered to the engine between ticks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Input {
    /// One keystroke; keystrokes stand in for speech.
    Typing {
        #[serde(rename = "char")]
        ch: String,
    },
    /// A whole utterance released on a fixed schedule.
    Utterance {
        text: String,
        #[serde(default)]
        pre_silence_ms: u64,
        #[serde(default)]
        post_silence_ms: u64,
    },
    /// Explicit silence. Silence is the absence of keystrokes, so this only
    /// keeps a connection alive.
    Pause,
}

#[derive(Debug, Clone)]
enum PendingKind {
    Ttcp,
    Dfcp { directive: Option<&'static str> },
}

#[derive(Debug, Clone)]
struct Pending {
    generation: u64,
    stats: PromptStats,
    kind: PendingKind,
}

pub struct Engine {
    scenario: Scenario,
    catalog: AssetCatalog,
    settings: EngineSettings,
    state: SessionState,
    asr: AsrSim,
    llm: Box<dyn LlmPort>,
    sink: Box<dyn EventSink>,
    started_ms: u64,
    now: u64,
    seq: u64,
    next_generation: u64,
    pending: Option<Pending>,
    playback: Option<Playback>,
    intro_idx: usize,
    closing_idx: usize,
    user_final_seen: bool,
    segment_started_at: Option<u64>,
    hold_until: Option<u64>,
    holds: u32,
    force_take_turn: bool,
    dfcp_failures: u32,
    chain: u32,
    summary: SessionSummary,
    out: Vec<SessionEvent>,
    started: bool,
    ended: bool,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("scenario", &self.scenario.id)
            .field("phase", &self.state.phase)
            .field("floor", &self.state.floor)
            .field("now", &self.now)
            .field("seq", &self.seq)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(
        scenario: Scenario,
        catalog: AssetCatalog,
        settings: EngineSettings,
        llm: Box<dyn LlmPort>,
    ) -> Self {
        let budget_ms = settings.budget_ms.unwrap_or_else(|| scenario.budget_ms());
        Self {
            state: SessionState::new(budget_ms),
            asr: AsrSim::new(settings.recognizer),
            scenario,
            catalog,
            settings,
            llm,
            sink: Box::new(NullSink),
            started_ms: 0,
            now: 0,
            seq: 0,
            next_generation: 1,
            pending: None,
            playback: None,
            intro_idx: 0,
            closing_idx: 0,
            user_final_seen: false,
            segment_started_at: None,
            hold_until: None,
            holds: 0,
            force_take_turn: false,
            dfcp_failures: 0,
            chain: 0,
            summary: SessionSummary::default(),
            out: Vec::new(),
            started: false,
            ended: false,
        }
    }

    pub fn with_sink(mut self, sink: Box<dyn EventSink>) -> Self {
        self.sink = sink;
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn floor(&self) -> FloorState {
        self.state.floor
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn summary(&self) -> &SessionSummary {
        &self.summary
    }

    pub fn playback(&self) -> Option<&Playback> {
        self.playback.as_ref()
    }

    /// Generation of the completion currently awaited, if any.
    pub fn pending_generation(&self) -> Option<u64> {
        self.pending.as_ref().map(|p| p.generation)
    }

    /// Whether scripted recognizer results are still waiting to be released.
    pub fn has_scheduled_speech(&self) -> bool {
        self.asr.has_scheduled()
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.scenario, &self.catalog, &self.settings)
    }

    /// Begin the session at `now_ms`: the first intro line starts playing.
    pub fn start(&mut self, now_ms: u64) -> Vec<SessionEvent> {
        if !self.started {
            self.started = true;
            self.started_ms = now_ms;
            self.now = now_ms;
            self.advance_scripts();
        }
        std::mem::take(&mut self.out)
    }

    /// Advance to `now_ms`, applying `inputs` first.
    pub fn step(&mut self, now_ms: u64, inputs: &[Input]) -> Vec<SessionEvent> {
        if !self.started {
            self.start(now_ms);
        }
        if self.ended {
            return std::mem::take(&mut self.out);
        }
        self.now = self.now.max(now_ms);

        let elapsed = self.now - self.started_ms;
        if self.state.check_budget(elapsed).is_some() {
            self.enter_closing(TransitionCause::BudgetExceeded);
        }

        if self
            .playback
            .as_ref()
            .is_some_and(|p| p.ends_at() <= self.now)
        {
            self.finish_playback();
        }
        for input in inputs {
            self.apply_input(input);
        }
        for ev in self.asr.tick(self.now) {
            self.on_asr(ev);
        }

        loop {
            let mut progressed = false;
            for c in self.llm.poll(self.now) {
                progressed = true;
                self.on_completion(c);
            }
            if self.hold_until.is_some_and(|t| t <= self.now) {
                progressed = true;
                self.hold_until = None;
                if on_extension_elapsed(false, self.holds, self.scenario.max_consecutive_holds)
                    == AfterHold::TakeTurn
                {
                    self.take_turn();
                }
            }
            if !progressed || self.ended {
                break;
            }
        }

        while self
            .playback
            .as_ref()
            .is_some_and(|p| p.ends_at() <= self.now)
        {
            self.finish_playback();
            self.advance_scripts();
        }
        self.advance_scripts();

        std::mem::take(&mut self.out)
    }

    fn emit(&mut self, kind: EventKind) {
        let event = SessionEvent {
            seq: self.seq,
            at_ms: self.now,
            kind,
        };
        self.seq += 1;
        if let Err(e) = self.sink.persist(&event) {
            if !self.summary.persistence_degraded {
                tracing::warn!(error = %e, "transcript persistence degraded");
            }
            self.summary.persistence_degraded = true;
        }
        self.out.push(event);
    }

    fn breach(
        &mut self,
        purpose: Purpose,
        reason: String,
        raw: Option<String>,
        action: BreachAction,
    ) {
        self.summary.breaches += 1;
        self.emit(EventKind::ProtocolBreach {
            purpose,
            reason,
            raw,
            action,
        });
    }

    fn append(&mut self, turn: Turn) {
        if let Err(e) = self.state.append_turn(turn) {
            tracing::warn!(error = %e, "turn not recorded");
        }
    }

    fn apply_input(&mut self, input: &Input) {
        let result = match input {
            Input::Typing { ch } => self.asr.push_typing(TypingEvent {
                ch: ch.clone(),
                at_ms: self.now,
            }),
            Input::Utterance {
                text,
                pre_silence_ms,
                post_silence_ms,
            } => self
                .asr
                .push_scripted_utterance(text, *pre_silence_ms, *post_silence_ms, self.now)
                .map(|_| ()),
            Input::Pause => Ok(()),
        };
        if let Err(e) = result {
            tracing::debug!(error = %e, "input ignored");
        }
    }

    fn on_asr(&mut self, ev: AsrEvent) {
        let during = self.state.floor;
        if matches!(
            during,
            FloorState::SystemSpeaking | FloorState::Deliberating
        ) {
            self.on_barge_in(during);
        }
        match ev {
            AsrEvent::Partial { text, at_ms } => {
                self.segment_started_at.get_or_insert(at_ms);
                self.emit(EventKind::UserPartial { text });
                if self.state.phase >= Phase::Closing {
                    return;
                }
                self.state.floor = FloorState::UserSpeaking;
                if self.hold_until.take().is_some() {
                    let after =
                        on_extension_elapsed(true, self.holds, self.scenario.max_consecutive_holds);
                    if after == AfterHold::TakeTurn {
                        self.force_take_turn = true;
                    }
                }
            }
            AsrEvent::Final {
                text,
                silence_ms,
                at_ms,
            } => {
                let started_at = self.segment_started_at.take().unwrap_or(at_ms);
                self.emit(EventKind::UserFinal {
                    text: text.clone(),
                    silence_ms,
                    started_at_ms: started_at,
                });
                self.append(Turn::user(text.clone(), started_at, at_ms));
                if self.state.phase < Phase::Terminated {
                    self.asr.open_segment();
                }
                self.on_user_final(text);
            }
        }
    }

    fn on_barge_in(&mut self, during: FloorState) {
        self.summary.barge_ins += 1;
        if self.state.phase >= Phase::Closing {
            self.emit(EventKind::BargeIn {
                during,
                yielded: false,
                spoken_prefix: None,
                cancelled_generation: None,
            });
            return;
        }
        let in_flight = self.pending_generation();
        match handle_barge_in(&mut self.state, &mut self.playback, in_flight, self.now) {
            Some(BargeIn::Truncated { spoken, .. }) => {
                self.emit(EventKind::BargeIn {
                    during,
                    yielded: true,
                    spoken_prefix: Some(spoken.clone()),
                    cancelled_generation: None,
                });
                self.emit(EventKind::SystemUtteranceEnd {
                    spoken_text: spoken,
                    truncated: true,
                });
            }
            Some(BargeIn::Cancelled { generation }) => {
                if let Some(g) = generation {
                    self.llm.cancel(g);
                }
                self.pending = None;
                self.emit(EventKind::BargeIn {
                    during,
                    yielded: true,
                    spoken_prefix: None,
                    cancelled_generation: generation,
                });
            }
            None => {}
        }
    }

    fn on_user_final(&mut self, text: String) {
        match self.state.phase {
            Phase::Introduction => {
                self.user_final_seen = true;
                self.state.floor = FloorState::OpenFloor;
                if self.intro_exhausted() {
                    self.enter_meta_control();
                    self.decide(text);
                }
            }
            Phase::MetaControlled => {
                self.hold_until = None;
                if let Some(p) = self.pending.take() {
                    self.llm.cancel(p.generation);
                }
                self.decide(text);
            }
            Phase::Closing | Phase::Terminated => {}
        }
    }

    fn intro_exhausted(&self) -> bool {
        self.intro_idx >= self.scenario.intro_script.len() && self.playback.is_none()
    }

    fn enter_meta_control(&mut self) {
        if let Ok(Some(t)) = self
            .state
            .transition_phase(Phase::MetaControlled, TransitionCause::IntroDone)
        {
            self.emit(EventKind::PhaseChanged {
                from: t.from,
                to: t.to,
                cause: t.cause,
            });
        }
    }

    fn next_generation(&mut self) -> u64 {
        let g = self.next_generation;
        self.next_generation += 1;
        g
    }

    /// Turn-taking for a finished user utterance.
    fn decide(&mut self, final_text: String) {
        if std::mem::take(&mut self.force_take_turn) {
            self.take_turn();
            return;
        }
        let prompt = match render_ttcp_for_latest(&self.state, &self.scenario, &final_text) {
            Ok(p) => p,
            Err(e) => {
                self.breach(Purpose::Ttcp, e.to_string(), None, BreachAction::TakeTurn);
                self.take_turn();
                return;
            }
        };
        let generation = self.next_generation();
        let stats = prompt.stats();
        self.llm
            .submit(self.settings.llm.request(prompt, generation), self.now);
        self.pending = Some(Pending {
            generation,
            stats,
            kind: PendingKind::Ttcp,
        });
        self.state.floor = FloorState::Deliberating;
    }

    fn take_turn(&mut self) {
        self.chain = 0;
        self.dfcp_failures = 0;
        self.submit_dfcp(None);
    }

    fn submit_dfcp(&mut self, directive: Option<&'static str>) {
        let prompt = render_dfcp_with_directive(&self.scenario, &self.state.history, directive);
        let generation = self.next_generation();
        let stats = prompt.stats();
        self.llm
            .submit(self.settings.llm.request(prompt, generation), self.now);
        self.pending = Some(Pending {
            generation,
            stats,
            kind: PendingKind::Dfcp { directive },
        });
        self.state.floor = FloorState::Deliberating;
    }

    fn on_completion(&mut self, c: Completion) {
        let pending = match &self.pending {
            Some(p) if p.generation == c.generation => self.pending.take().expect("checked"),
            _ => {
                tracing::debug!(generation = c.generation, "stale completion dropped");
                return;
            }
        };
        match pending.kind {
            PendingKind::Ttcp => self.on_ttcp(c, pending.stats),
            PendingKind::Dfcp { directive } => self.on_dfcp(c, pending.stats, directive),
        }
    }

    fn on_ttcp(&mut self, c: Completion, stats: PromptStats) {
        let raw = c.result.as_ref().ok().cloned();
        let verdict = resolve_ttcp(c.result, &self.scenario, self.settings.parse_mode);
        if let Some(class) = verdict.class {
            annotate_latest_user_turn(&mut self.state, class);
            self.emit(EventKind::TurnClassAssigned {
                digit: class,
                decision: verdict.decision,
                prompt: stats,
            });
        }
        if let Some(reason) = verdict.breach {
            self.breach(Purpose::Ttcp, reason, raw, BreachAction::TakeTurn);
        }
        match verdict.decision {
            TurnDecision::HoldFloor { extension_ms } => {
                self.holds += 1;
                self.summary.hold_decisions += 1;
                self.hold_until = Some(self.now + extension_ms);
                self.state.floor = FloorState::UserSpeaking;
            }
            TurnDecision::TakeTurn => self.take_turn(),
        }
    }

    fn on_dfcp(&mut self, c: Completion, stats: PromptStats, directive: Option<&'static str>) {
        let raw = match c.result {
            Ok(raw) => raw,
            Err(e) => return self.dfcp_failed(e.to_string(), None, directive),
        };
        let outcome = match classify_dfcp_output(
            &raw,
            &self.scenario.command_table,
            self.settings.parse_mode,
        ) {
            Ok(o) => o,
            Err(e) => return self.dfcp_failed(e.to_string(), Some(raw), directive),
        };
        match outcome {
            DfcpOutcome::Utterance(text) => {
                self.start_playback(text, UtteranceSource::Dfcp, Some(c.generation), Some(stats))
            }
            DfcpOutcome::CommandInvocation(digit) => self.run_command(digit, c.generation, stats),
        }
    }

    fn dfcp_failed(
        &mut self,
        reason: String,
        raw: Option<String>,
        directive: Option<&'static str>,
    ) {
        self.dfcp_failures += 1;
        if self.dfcp_failures == 1 {
            self.breach(Purpose::Dfcp, reason, raw, BreachAction::Retry);
            self.submit_dfcp(directive);
        } else {
            self.breach(Purpose::Dfcp, reason, raw, BreachAction::SkipTurn);
            self.state.floor = FloorState::OpenFloor;
        }
    }

    fn run_command(&mut self, digit: u8, generation: u64, stats: PromptStats) {
        self.chain += 1;
        if self.chain > self.settings.max_chain {
            self.breach(
                Purpose::Dfcp,
                format!("more than {} commands in one turn", self.settings.max_chain),
                Some(digit.to_string()),
                BreachAction::SkipTurn,
            );
            self.state.floor = FloorState::OpenFloor;
            return;
        }
        let (effects, delta) =
            match dispatch_command(digit, &self.state, &self.scenario, &self.catalog) {
                Ok(r) => r,
                Err(e) => {
                    return self.dfcp_failed(e.to_string(), Some(digit.to_string()), None);
                }
            };
        self.emit(EventKind::CommandIssued {
            digit,
            generation,
            prompt: stats,
        });
        *self.summary.commands.entry(digit.to_string()).or_default() += 1;
        for effect in effects {
            self.emit(EventKind::EffectExecuted { digit, effect });
        }
        self.append(Turn::command_marker(digit, self.now));
        if let Some(goal) = delta.goal_achieved {
            self.state.goal_achieved = goal;
        }
        if let Some((Phase::Closing, cause)) = delta.phase {
            self.enter_closing(cause);
            return;
        }
        match delta.follow_up {
            FollowUp::None => self.state.floor = FloorState::OpenFloor,
            FollowUp::Request { directive } => self.submit_dfcp(directive),
            FollowUp::Clarify(line) => {
                self.start_playback(line.to_string(), UtteranceSource::Clarify, None, None)
            }
        }
    }

    fn start_playback(
        &mut self,
        text: String,
        source: UtteranceSource,
        generation: Option<u64>,
        prompt: Option<PromptStats>,
    ) {
        let playback = Playback::new(
            text,
            self.now,
            self.settings.chars_per_second,
            source,
            generation,
        );
        self.emit(EventKind::SystemUtteranceStart {
            text: playback.text.clone(),
            source,
            duration_ms: playback.duration_ms,
            generation,
            prompt,
        });
        self.playback = Some(playback);
        self.state.floor = FloorState::SystemSpeaking;
        self.holds = 0;
        self.force_take_turn = false;
    }

    fn finish_playback(&mut self) {
        let Some(p) = self.playback.take() else {
            return;
        };
        self.emit(EventKind::SystemUtteranceEnd {
            spoken_text: p.text.clone(),
            truncated: false,
        });
        let ends_at = p.ends_at();
        self.append(Turn::system(p.text, p.started_at, ends_at));
        self.state.floor = FloorState::OpenFloor;
    }

    /// Start the next scripted line, or hand over once a script is used up.
    fn advance_scripts(&mut self) {
        if self.playback.is_some() || self.ended {
            return;
        }
        match self.state.phase {
            Phase::Introduction => {
                if self.state.floor != FloorState::OpenFloor {
                    return;
                }
                if let Some(line) = self.scenario.intro_script.get(self.intro_idx).cloned() {
                    self.intro_idx += 1;
                    self.start_playback(line, UtteranceSource::Intro, None, None);
                } else if self.user_final_seen {
                    self.enter_meta_control();
                    self.take_turn();
                }
            }
            Phase::Closing => {
                if let Some(line) = self.scenario.closing_script.get(self.closing_idx).cloned() {
                    self.closing_idx += 1;
                    self.start_playback(line, UtteranceSource::Closing, None, None);
                } else {
                    self.terminate();
                }
            }
            Phase::MetaControlled | Phase::Terminated => {}
        }
    }

    fn enter_closing(&mut self, cause: TransitionCause) {
        if self.state.phase >= Phase::Closing {
            return;
        }
        if let Some(p) = self.pending.take() {
            self.llm.cancel(p.generation);
        }
        self.hold_until = None;
        self.force_take_turn = false;
        if let Some(p) = self.playback.take() {
            let spoken = p.spoken_prefix(self.now).trim_end().to_string();
            if !spoken.is_empty() {
                self.append(Turn::system(spoken.clone(), p.started_at, self.now));
            }
            self.emit(EventKind::SystemUtteranceEnd {
                spoken_text: spoken,
                truncated: true,
            });
        }
        if let Ok(Some(t)) = self.state.transition_phase(Phase::Closing, cause) {
            self.emit(EventKind::PhaseChanged {
                from: t.from,
                to: t.to,
                cause: t.cause,
            });
        }
        self.state.floor = FloorState::OpenFloor;
        self.advance_scripts();
    }

    fn terminate(&mut self) {
        if let Ok(Some(t)) = self
            .state
            .transition_phase(Phase::Terminated, TransitionCause::ClosingDone)
        {
            self.emit(EventKind::PhaseChanged {
                from: t.from,
                to: t.to,
                cause: t.cause,
            });
        }
        self.state.floor = FloorState::OpenFloor;
        self.summary.final_phase = Some(self.state.phase);
        self.summary.goal_achieved = self.state.goal_achieved;
        // Counted before the event so a failed write of this very line is reported.
        let summary = self.summary.clone();
        self.emit(EventKind::SessionEnded(summary));
        self.asr.close_segment();
        self.ended = true;
    }
}
