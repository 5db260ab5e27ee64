mod common;

use std::io;
use std::sync::{Arc, Mutex};

use metactl_core::event::{EventKind, SessionEvent};
use metactl_core::llm::{ScriptedBackend, ScriptedPort};
use metactl_core::replay::replay_run;
use metactl_core::session::{Engine, EngineSettings, Input};
use metactl_core::state::Phase;
use metactl_core::transcript::{read_transcript, EventSink, StorageError, TranscriptWriter};

#[test]
fn happy_path_reaches_the_goal() {
    let out = replay_run(common::config("happy-llm.jsonl", "happy-user.jsonl")).unwrap();
    let s = &out.summary;
    assert_eq!(s.final_phase, Some(Phase::Terminated));
    assert!(s.goal_achieved);
    for digit in ["0", "1", "2", "3"] {
        assert_eq!(s.commands.get(digit), Some(&1), "command {digit}");
    }
    assert_eq!(s.hold_decisions, 1);
    assert_eq!(s.breaches, 0);
    assert!(matches!(
        out.events.last().unwrap().kind,
        EventKind::SessionEnded(_)
    ));
    let seqs: Vec<u64> = out.events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (0..out.events.len() as u64).collect::<Vec<_>>());
}

#[test]
fn transcript_file_round_trips() {
    let out = replay_run(common::config("bargein-llm.jsonl", "bargein-user.jsonl")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/session.jsonl");
    let mut w = TranscriptWriter::create(&path, &out.header).unwrap();
    for e in &out.events {
        w.persist(e).unwrap();
    }
    drop(w);
    let (header, events) = read_transcript(&path).unwrap();
    assert_eq!(header, out.header);
    assert_eq!(events, out.events);
    assert_eq!(
        std::fs::read_to_string(&path).unwrap().lines().count(),
        out.events.len() + 1
    );
}

#[test]
fn empty_scripts_still_terminate_on_budget() {
    let mut cfg = common::config("happy-llm.jsonl", "happy-user.jsonl");
    cfg.llm_script.clear();
    cfg.user_script.clear();
    cfg.settings.budget_ms = Some(10_000);
    let out = replay_run(cfg).unwrap();
    assert_eq!(out.summary.final_phase, Some(Phase::Terminated));
    assert!(out.events.iter().any(|e| matches!(
        e.kind,
        EventKind::PhaseChanged {
            to: Phase::Closing,
            cause: metactl_core::state::TransitionCause::BudgetExceeded,
            ..
        }
    )));
}

#[test]
fn empty_llm_script_breaches_but_terminates() {
    let mut cfg = common::config("happy-llm.jsonl", "happy-user.jsonl");
    cfg.llm_script.clear();
    cfg.settings.budget_ms = Some(30_000);
    let out = replay_run(cfg).unwrap();
    assert!(out.summary.breaches > 0);
    assert_eq!(out.summary.final_phase, Some(Phase::Terminated));
}

#[test]
fn always_taking_the_turn_never_holds() {
    let mut cfg = common::config("happy-llm.jsonl", "happy-user.jsonl");
    for e in cfg.llm_script.iter_mut() {
        if e.purpose == metactl_core::prompt::Purpose::Ttcp {
            e.output = "3".into();
        }
    }
    let out = replay_run(cfg).unwrap();
    assert_eq!(out.summary.hold_decisions, 0);
    assert_eq!(out.summary.final_phase, Some(Phase::Terminated));
}

/// Accepts a fixed number of events, then fails like a full disk.
struct Flaky {
    left: usize,
    kept: Arc<Mutex<Vec<SessionEvent>>>,
}

impl EventSink for Flaky {
    fn persist(&mut self, event: &SessionEvent) -> Result<(), StorageError> {
        if self.left == 0 {
            return Err(io::Error::other("disk full").into());
        }
        self.left -= 1;
        self.kept.lock().unwrap().push(event.clone());
        Ok(())
    }
}

#[test]
fn storage_failure_degrades_without_stopping_the_session() {
    let kept = Arc::default();
    let port = ScriptedPort::new(ScriptedBackend::from_entries(common::llm_script(
        "happy-llm.jsonl",
    )));
    let mut engine = Engine::new(
        common::kyoto(),
        common::assets(),
        EngineSettings {
            budget_ms: Some(20_000),
            ..EngineSettings::default()
        },
        Box::new(port),
    )
    .with_sink(Box::new(Flaky {
        left: 3,
        kept: Arc::clone(&kept),
    }));
    let mut events = engine.start(0);
    let mut now = 0;
    while !engine.is_ended() && now < 60_000 {
        now += 100;
        let inputs = if now == 7_500 {
            vec![Input::Utterance {
                text: "Hello".into(),
                pre_silence_ms: 0,
                post_silence_ms: 0,
            }]
        } else {
            vec![]
        };
        events.extend(engine.step(now, &inputs));
    }
    assert!(engine.is_ended());
    assert!(engine.summary().persistence_degraded);
    assert_eq!(kept.lock().unwrap().len(), 3);
    assert!(events.len() > 3, "live events keep flowing");
}
