//! Properties every session must satisfy, whatever the scripts say.

mod common;

use proptest::prelude::*;

use metactl_core::event::{EventKind, SessionEvent};
use metactl_core::llm::ScriptEntry;
use metactl_core::prompt::Purpose;
use metactl_core::replay::{
    replay_run, Directive, ReplayConfig, ScriptedUtterance, UserScriptEntry,
};
use metactl_core::session::EngineSettings;
use metactl_core::state::Phase;

fn llm_entry() -> impl Strategy<Value = ScriptEntry> {
    (
        prop_oneof![Just(Purpose::Dfcp), Just(Purpose::Ttcp)],
        prop_oneof![
            "[0-9]",
            "[a-z ]{0,30}",
            Just(String::new()),
            Just(" 3 ".to_string()),
        ],
        proptest::option::of(0u64..6_000),
    )
        .prop_map(|(purpose, output, delay)| {
            let mut e = ScriptEntry::new(purpose, output);
            e.delay_ms = delay;
            e
        })
}

fn user_entry() -> impl Strategy<Value = UserScriptEntry> {
    prop_oneof![
        Just(UserScriptEntry::Directive(Directive::AwaitSystemTurn)),
        Just(UserScriptEntry::Directive(Directive::AwaitSystemSpeaking)),
        (0u64..5_000).prop_map(|ms| UserScriptEntry::Directive(Directive::Wait { ms })),
        ("[a-z]{1,8}( [a-z]{1,8}){0,5}", 0u64..3_000, 0u64..3_000).prop_map(|(text, pre, post)| {
            UserScriptEntry::Utterance(ScriptedUtterance {
                text,
                pre_silence_ms: pre,
                post_silence_ms: post,
            })
        }),
    ]
}

fn run(
    llm: Vec<ScriptEntry>,
    user: Vec<UserScriptEntry>,
    budget_s: u64,
) -> metactl_core::replay::ReplayOutcome {
    replay_run(ReplayConfig {
        scenario: common::kyoto(),
        catalog: common::assets(),
        settings: EngineSettings {
            budget_ms: Some(budget_s * 1_000),
            ..EngineSettings::default()
        },
        llm_script: llm,
        user_script: user,
        max_ticks: None,
    })
    .unwrap()
}

fn phase_of(e: &SessionEvent) -> Option<(Phase, Phase)> {
    match e.kind {
        EventKind::PhaseChanged { from, to, .. } => Some((from, to)),
        _ => None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn envelope_and_phase_invariants(
        llm in proptest::collection::vec(llm_entry(), 0..16),
        user in proptest::collection::vec(user_entry(), 0..12),
        budget_s in 5u64..40,
    ) {
        let out = run(llm, user, budget_s);
        let events = &out.events;

        // Sequence numbers are dense and time never goes backwards.
        for (i, pair) in events.windows(2).enumerate() {
            prop_assert_eq!(pair[1].seq, pair[0].seq + 1, "at {}", i);
            prop_assert!(pair[1].at_ms >= pair[0].at_ms);
        }

        // Phases only move forward, ending in Terminated.
        let changes: Vec<_> = events.iter().filter_map(phase_of).collect();
        for (from, to) in &changes {
            prop_assert!(from < to, "{:?} -> {:?}", from, to);
        }
        prop_assert_eq!(changes.last().map(|c| c.1), Some(Phase::Terminated));
        prop_assert!(matches!(events.last().unwrap().kind, EventKind::SessionEnded(_)));

        // Every start is matched by an end before the next start.
        let mut open = false;
        for e in events {
            match e.kind {
                EventKind::SystemUtteranceStart { .. } => { prop_assert!(!open); open = true; }
                EventKind::SystemUtteranceEnd { .. } => { prop_assert!(open); open = false; }
                _ => {}
            }
        }
        prop_assert!(!open);

        // Each line of the transcript parses back to the same event.
        for line in out.event_lines().lines() {
            let back: SessionEvent = serde_json::from_str(line).unwrap();
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), line);
        }
    }
}
