use std::path::Path;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

use metactl::{router, AppState, LlmChoice, ServiceConfig};
use metactl_core::dispatch::AssetCatalog;
use metactl_core::event::{EventKind, SessionEvent};
use metactl_core::llm::parse_script;
use metactl_core::scenario::load_scenario;
use metactl_core::session::EngineSettings;
use metactl_core::state::{Phase, TransitionCause};
use metactl_core::turn::UtteranceSource;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures");

async fn start(transcript_dir: &Path) -> String {
    let llm = std::fs::read_to_string(format!("{FIXTURES}/replay/happy-llm.jsonl")).unwrap();
    let state = AppState::new(ServiceConfig {
        scenario: load_scenario(format!("{FIXTURES}/kyoto-travel.json")).unwrap(),
        catalog: AssetCatalog::load(format!("{FIXTURES}/assets.json")).unwrap(),
        settings: EngineSettings::default(),
        llm: LlmChoice::Scripted(parse_script(&llm).unwrap()),
        transcript_dir: transcript_dir.to_path_buf(),
        wall_tick: Some(Duration::from_millis(1)),
    });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    format!("127.0.0.1:{}", addr.port())
}

async fn create(addr: &str, body: Value) -> String {
    let resp = reqwest::Client::new()
        .post(format!("http://{addr}/sessions"))
        .json(&body)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 201);
    resp.json::<Value>().await.unwrap()["session_id"]
        .as_str()
        .unwrap()
        .to_string()
}

type Socket =
    tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn connect(addr: &str, id: &str, from_seq: u64) -> Socket {
    let url = format!("ws://{addr}/sessions/{id}/events?from_seq={from_seq}");
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

/// Read events until the server closes the socket, calling `on_event` for each.
async fn drain(
    ws: &mut Socket,
    mut on_event: impl FnMut(&SessionEvent) -> Option<Value>,
) -> Vec<SessionEvent> {
    let mut events = Vec::new();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(20);
    loop {
        let msg = tokio::time::timeout_at(deadline, ws.next())
            .await
            .expect("session did not end in time");
        match msg {
            Some(Ok(Message::Text(t))) => {
                let e: SessionEvent = serde_json::from_str(&t).unwrap();
                if let Some(reply) = on_event(&e) {
                    ws.send(Message::Text(reply.to_string().into()))
                        .await
                        .unwrap();
                }
                events.push(e);
            }
            Some(Ok(Message::Close(_))) | None => return events,
            Some(Ok(_)) => {}
            Some(Err(e)) => panic!("{e}"),
        }
    }
}

#[tokio::test]
async fn health_reports_ok() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(dir.path()).await;
    let body: Value = reqwest::get(format!("http://{addr}/health"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(body, json!({"status": "ok"}));
}

#[tokio::test]
async fn silent_session_closes_on_budget_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(dir.path()).await;
    let id = create(&addr, json!({"budget_seconds": 5})).await;
    let mut ws = connect(&addr, &id, 0).await;
    let events = drain(&mut ws, |_| None).await;

    assert!(matches!(
        &events[0].kind,
        EventKind::SystemUtteranceStart { text, .. } if text == "Hello, and welcome to our travel agency."
    ));
    let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (0..events.len() as u64).collect::<Vec<_>>());
    let closing = events
        .iter()
        .find(|e| {
            matches!(
                e.kind,
                EventKind::PhaseChanged {
                    to: Phase::Closing,
                    ..
                }
            )
        })
        .unwrap();
    assert!(matches!(
        closing.kind,
        EventKind::PhaseChanged {
            cause: TransitionCause::BudgetExceeded,
            ..
        }
    ));
    assert!((5_000..=5_100).contains(&closing.at_ms));
    assert!(matches!(
        events.last().unwrap().kind,
        EventKind::SessionEnded(_)
    ));

    let resp = reqwest::get(format!("http://{addr}/sessions/{id}/transcript"))
        .await
        .unwrap();
    assert_eq!(resp.headers()["content-type"], "application/x-ndjson");
    let text = resp.text().await.unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), events.len() + 1);
    let header: Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(header["scenario_id"], "kyoto-travel");
    assert_eq!(header["schema_version"], 1);

    let on_disk = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
    assert_eq!(on_disk, text);
}

#[tokio::test]
async fn reconnect_resumes_from_seq() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(dir.path()).await;
    let id = create(&addr, json!({"budget_seconds": 5})).await;
    let all = drain(&mut connect(&addr, &id, 0).await, |_| None).await;
    let tail = drain(&mut connect(&addr, &id, 5).await, |_| None).await;
    assert_eq!(tail.as_slice(), &all[5..]);
}

#[tokio::test]
async fn utterances_and_typing_reach_the_engine() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(dir.path()).await;
    let id = create(
        &addr,
        json!({"budget_seconds": 20, "parse_mode": "lenient"}),
    )
    .await;
    let mut ws = connect(&addr, &id, 0).await;

    let mut intro_ends = 0;
    let mut typed = false;
    let events = drain(&mut ws, |e| match &e.kind {
        EventKind::SystemUtteranceEnd { .. } if intro_ends < 2 => {
            intro_ends += 1;
            (intro_ends == 2).then(|| json!({"type": "utterance", "text": "Hi, nice to meet you."}))
        }
        EventKind::SystemUtteranceStart {
            source: UtteranceSource::Dfcp,
            ..
        } if !typed => {
            typed = true;
            Some(json!({"type": "typing", "char": "x"}))
        }
        _ => None,
    })
    .await;

    let finals: Vec<&str> = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::UserFinal { text, .. } => Some(text.as_str()),
            _ => None,
        })
        .collect();
    assert_eq!(finals.first(), Some(&"Hi, nice to meet you."));
    assert!(events.iter().any(|e| matches!(
        e.kind,
        EventKind::PhaseChanged {
            to: Phase::MetaControlled,
            ..
        }
    )));
    assert!(events
        .iter()
        .any(|e| matches!(e.kind, EventKind::TurnClassAssigned { .. })));
    assert!(events
        .iter()
        .any(|e| matches!(&e.kind, EventKind::UserPartial { text } if text == "x")));
}

#[tokio::test]
async fn unknown_session_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(dir.path()).await;
    let resp = reqwest::get(format!("http://{addr}/sessions/nope/transcript"))
        .await
        .unwrap();
    assert_eq!(resp.status(), 404);
    let err = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/nope/events"))
        .await
        .unwrap_err();
    assert!(err.to_string().contains("404"), "{err}");
}

#[tokio::test]
async fn bad_overrides_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(dir.path()).await;
    let client = reqwest::Client::new();
    for body in [json!({"budget_seconds": 0}), json!({"budget": 5})] {
        let resp = client
            .post(format!("http://{addr}/sessions"))
            .json(&body)
            .send()
            .await
            .unwrap();
        assert!(resp.status().is_client_error(), "{body}: {}", resp.status());
    }
    let resp = client
        .post(format!("http://{addr}/sessions"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 201, "an empty body uses the defaults");
}

#[tokio::test]
async fn unwritable_transcript_dir_is_unavailable() {
    let file = tempfile::NamedTempFile::new().unwrap();
    let addr = start(&file.path().join("sub")).await;
    let resp = reqwest::Client::new()
        .post(format!("http://{addr}/sessions"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 503);
    let body: Value = resp.json().await.unwrap();
    assert!(body["error"].as_str().unwrap().contains("unavailable"));
}
