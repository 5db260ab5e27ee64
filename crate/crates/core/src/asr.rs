//! Simulated speech recognizer.
//!
//! Keystrokes stand in for ongoing speech and pauses for silence. The
//! recognizer emits partial results while the buffer grows and a final
//! result once silence reaches the endpoint threshold (plus any active
//! extension). Scripted utterances bypass typing and are released at fixed
//! logical times, which keeps replay runs deterministic.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    pub endpoint_ms: u64,
    pub partial_interval_ms: u64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            endpoint_ms: 800,
            partial_interval_ms: 500,
        }
    }
}

impl RecognizerConfig {
    pub fn validate(&self) -> Result<(), AsrError> {
        if self.endpoint_ms == 0 || self.partial_interval_ms == 0 {
            return Err(AsrError::InvalidConfig("intervals must be positive"));
        }
        if self.partial_interval_ms > self.endpoint_ms {
            return Err(AsrError::InvalidConfig(
                "partial interval must not exceed the endpoint threshold",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypingEvent {
    pub ch: String,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum AsrEvent {
    Partial {
        text: String,
        at_ms: u64,
    },
    Final {
        text: String,
        silence_ms: u64,
        at_ms: u64,
    },
}

impl AsrEvent {
    pub fn at_ms(&self) -> u64 {
        match self {
            AsrEvent::Partial { at_ms, .. } | AsrEvent::Final { at_ms, .. } => *at_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsrError {
    #[error("recognizer segment is closed")]
    SegmentClosed,
    #[error("scripted utterance is empty")]
    EmptyUtterance,
    #[error("keystroke at {at_ms} ms precedes previous keystroke at {last_ms} ms")]
    TimeRegression { at_ms: u64, last_ms: u64 },
    #[error("invalid recognizer config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone)]
pub struct AsrSim {
    config: RecognizerConfig,
    open: bool,
    buffer: String,
    last_key_at: Option<u64>,
    last_partial_at: Option<u64>,
    partial_len: usize,
    extension_ms: u64,
    scheduled: VecDeque<AsrEvent>,
    last_scheduled_at: Option<u64>,
}

impl AsrSim {
    pub fn new(config: RecognizerConfig) -> Self {
        Self {
            config,
            open: true,
            buffer: String::new(),
            last_key_at: None,
            last_partial_at: None,
            partial_len: 0,
            extension_ms: 0,
            scheduled: VecDeque::new(),
            last_scheduled_at: None,
        }
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn open_segment(&mut self) {
        self.open = true;
    }

    pub fn close_segment(&mut self) {
        self.open = false;
    }

    /// Lengthen the endpoint window of the current segment.
    pub fn set_extension(&mut self, extension_ms: u64) {
        self.extension_ms = extension_ms;
    }

    pub fn clear_extension(&mut self) {
        self.extension_ms = 0;
    }

    pub fn effective_endpoint_ms(&self) -> u64 {
        self.config.endpoint_ms + self.extension_ms
    }

    pub fn buffer(&self) -> &str {
        &self.buffer
    }

    pub fn push_typing(&mut self, evt: TypingEvent) -> Result<(), AsrError> {
        if !self.open {
            return Err(AsrError::SegmentClosed);
        }
        if let Some(last_ms) = self.last_key_at {
            if evt.at_ms < last_ms {
                return Err(AsrError::TimeRegression {
                    at_ms: evt.at_ms,
                    last_ms,
                });
            }
        }
        self.buffer.push_str(&evt.ch);
        self.last_key_at = Some(evt.at_ms);
        Ok(())
    }

    /// Schedule one partial and one final result for a whole utterance.
    /// The partial lands `pre_silence_ms` after `now` (or after the last
    /// scheduled event); the final follows after the trailing silence, which
    /// is raised to the effective endpoint when shorter.
    pub fn push_scripted_utterance(
        &mut self,
        text: &str,
        pre_silence_ms: u64,
        post_silence_ms: u64,
        now: u64,
    ) -> Result<Vec<AsrEvent>, AsrError> {
        if text.trim().is_empty() {
            return Err(AsrError::EmptyUtterance);
        }
        let base = self.last_scheduled_at.map_or(now, |t| t.max(now));
        let mut partial_at = base + pre_silence_ms;
        if let Some(last) = self.last_scheduled_at {
            if partial_at <= last {
                partial_at = last + 1;
            }
        }
        let silence_ms = post_silence_ms.max(self.effective_endpoint_ms());
        let final_at = partial_at + silence_ms;
        let events = vec![
            AsrEvent::Partial {
                text: text.to_string(),
                at_ms: partial_at,
            },
            AsrEvent::Final {
                text: text.to_string(),
                silence_ms,
                at_ms: final_at,
            },
        ];
        self.scheduled.extend(events.iter().cloned());
        self.last_scheduled_at = Some(final_at);
        Ok(events)
    }

    /// Whether scripted events are still waiting to be released.
    pub fn has_scheduled(&self) -> bool {
        !self.scheduled.is_empty()
    }

    pub fn tick(&mut self, now: u64) -> Vec<AsrEvent> {
        let mut out = Vec::new();
        while self.scheduled.front().is_some_and(|e| e.at_ms() <= now) {
            out.extend(self.scheduled.pop_front());
        }

        if self.buffer.is_empty() {
            return out;
        }
        let last_key = self.last_key_at.unwrap_or(now);
        let silence = now.saturating_sub(last_key);
        let growing = self.buffer.len() > self.partial_len;
        let interval_due = self
            .last_partial_at
            .is_none_or(|t| now.saturating_sub(t) >= self.config.partial_interval_ms);

        if silence >= self.effective_endpoint_ms() {
            if self.last_partial_at.is_none() || growing {
                out.push(AsrEvent::Partial {
                    text: self.buffer.clone(),
                    at_ms: now,
                });
            }
            out.push(AsrEvent::Final {
                text: std::mem::take(&mut self.buffer),
                silence_ms: silence,
                at_ms: now,
            });
            self.last_key_at = None;
            self.last_partial_at = None;
            self.partial_len = 0;
            self.extension_ms = 0;
            self.open = false;
        } else if growing && interval_due {
            out.push(AsrEvent::Partial {
                text: self.buffer.clone(),
                at_ms: now,
            });
            self.last_partial_at = Some(now);
            self.partial_len = self.buffer.len();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(ch: &str, at_ms: u64) -> TypingEvent {
        TypingEvent {
            ch: ch.into(),
            at_ms,
        }
    }

    fn finals(events: &[AsrEvent]) -> usize {
        events
            .iter()
            .filter(|e| matches!(e, AsrEvent::Final { .. }))
            .count()
    }

    /// Run ticks every 100 ms over `[from, to]`, collecting everything emitted.
    fn run(sim: &mut AsrSim, from: u64, to: u64) -> Vec<AsrEvent> {
        (from..=to).step_by(100).flat_map(|t| sim.tick(t)).collect()
    }

    #[test]
    fn typing_accumulates_without_final() {
        let mut sim = AsrSim::new(RecognizerConfig::default());
        sim.push_typing(key("h", 0)).unwrap();
        sim.push_typing(key("i", 100)).unwrap();
        let events = run(&mut sim, 100, 500);
        assert_eq!(sim.buffer(), "hi");
        assert_eq!(finals(&events), 0);
    }

    #[test]
    fn closed_segment_rejects_keys() {
        let mut sim = AsrSim::new(RecognizerConfig::default());
        sim.close_segment();
        assert_eq!(sim.push_typing(key("x", 0)), Err(AsrError::SegmentClosed));
    }

    #[test]
    fn pause_below_endpoint_keeps_segment() {
        let mut sim = AsrSim::new(RecognizerConfig::default());
        sim.push_typing(key("a", 0)).unwrap();
        let mut events = run(&mut sim, 0, 700);
        sim.push_typing(key("b", 700)).unwrap();
        events.extend(run(&mut sim, 800, 1400));
        assert_eq!(finals(&events), 0);
        assert_eq!(sim.buffer(), "ab");
    }

    #[test]
    fn final_after_endpoint_silence() {
        let mut sim = AsrSim::new(RecognizerConfig::default());
        for (i, c) in "hello".chars().enumerate() {
            sim.push_typing(key(&c.to_string(), i as u64 * 100))
                .unwrap();
        }
        let events = run(&mut sim, 400, 1200);
        let last = events.last().unwrap();
        assert_eq!(
            *last,
            AsrEvent::Final {
                text: "hello".into(),
                silence_ms: 800,
                at_ms: 1200
            }
        );
        assert!(!sim.is_open());
        assert_eq!(finals(&events), 1);
    }

    #[test]
    fn continuous_typing_emits_partials() {
        let mut sim = AsrSim::new(RecognizerConfig::default());
        let mut events = Vec::new();
        for t in (0..=1600).step_by(100) {
            sim.push_typing(key("x", t)).unwrap();
            events.extend(sim.tick(t));
        }
        let partials = events
            .iter()
            .filter(|e| matches!(e, AsrEvent::Partial { .. }))
            .count();
        assert!(partials >= 3, "{partials}");
        assert_eq!(finals(&events), 0);
    }

    #[test]
    fn extension_delays_final() {
        let mut sim = AsrSim::new(RecognizerConfig::default());
        sim.set_extension(4000);
        sim.push_typing(key("a", 0)).unwrap();
        let early = run(&mut sim, 0, 4700);
        assert_eq!(finals(&early), 0);
        let late = run(&mut sim, 4800, 4800);
        assert_eq!(
            late.last(),
            Some(&AsrEvent::Final {
                text: "a".into(),
                silence_ms: 4800,
                at_ms: 4800
            })
        );
    }

    #[test]
    fn final_is_always_preceded_by_partial() {
        let mut sim = AsrSim::new(RecognizerConfig::default());
        sim.push_typing(key("a", 0)).unwrap();
        // First tick arrives only after the endpoint has passed.
        let events = sim.tick(5000);
        assert!(matches!(events[0], AsrEvent::Partial { .. }));
        assert!(matches!(events[1], AsrEvent::Final { .. }));
    }

    #[test]
    fn scripted_utterance_events() {
        let mut sim = AsrSim::new(RecognizerConfig::default());
        let events = sim
            .push_scripted_utterance("I like temples", 0, 1000, 0)
            .unwrap();
        assert_eq!(
            events,
            vec![
                AsrEvent::Partial {
                    text: "I like temples".into(),
                    at_ms: 0
                },
                AsrEvent::Final {
                    text: "I like temples".into(),
                    silence_ms: 1000,
                    at_ms: 1000
                },
            ]
        );
        assert_eq!(sim.tick(999).len(), 1);
        assert_eq!(sim.tick(1000).len(), 1);
        assert!(!sim.has_scheduled());
    }

    #[test]
    fn scripted_empty_rejected() {
        let mut sim = AsrSim::new(RecognizerConfig::default());
        assert_eq!(
            sim.push_scripted_utterance(" ", 0, 0, 0),
            Err(AsrError::EmptyUtterance)
        );
    }

    #[test]
    fn scripted_times_strictly_increase() {
        let mut sim = AsrSim::new(RecognizerConfig::default());
        let mut all = sim.push_scripted_utterance("one", 0, 0, 0).unwrap();
        all.extend(sim.push_scripted_utterance("two", 0, 0, 0).unwrap());
        let times: Vec<_> = all.iter().map(AsrEvent::at_ms).collect();
        assert!(times.windows(2).all(|w| w[0] < w[1]), "{times:?}");
        // Short trailing silence is raised to the endpoint.
        assert!(matches!(
            all[1],
            AsrEvent::Final {
                silence_ms: 800,
                ..
            }
        ));
    }

    #[test]
    fn config_validation() {
        assert!(RecognizerConfig::default().validate().is_ok());
        assert!(RecognizerConfig {
            endpoint_ms: 400,
            partial_interval_ms: 500
        }
        .validate()
        .is_err());
    }
}
