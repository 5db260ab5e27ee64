//! One live session: the engine, its tick loop, and the fan-out of events to
//! any number of subscribers.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use metactl_core::event::{EventKind, SessionEvent};
use metactl_core::session::{Engine, Input};
use metactl_core::transcript::TranscriptHeader;
use tokio::sync::{broadcast, mpsc};
use tokio::time::MissedTickBehavior;

const BROADCAST_CAPACITY: usize = 1024;

pub struct SessionHandle {
    pub header: TranscriptHeader,
    log: Mutex<Vec<SessionEvent>>,
    events: broadcast::Sender<SessionEvent>,
    inputs: mpsc::UnboundedSender<Input>,
}

impl SessionHandle {
    /// Spawn the tick loop. `wall_tick` is how long one engine tick takes in
    /// real time; live sessions use the engine tick itself.
    pub fn spawn(engine: Engine, header: TranscriptHeader, wall_tick: Duration) -> Arc<Self> {
        let (events, _) = broadcast::channel(BROADCAST_CAPACITY);
        let (inputs, rx) = mpsc::unbounded_channel();
        let handle = Arc::new(Self {
            header,
            log: Mutex::new(Vec::new()),
            events,
            inputs,
        });
        tokio::spawn(run(engine, handle.clone(), rx, wall_tick));
        handle
    }

    /// Queue input for the next tick. Returns false once the session has ended.
    pub fn send(&self, input: Input) -> bool {
        self.inputs.send(input).is_ok()
    }

    /// Events from `from_seq` on, plus a receiver for everything after them.
    pub fn subscribe(
        &self,
        from_seq: u64,
    ) -> (Vec<SessionEvent>, broadcast::Receiver<SessionEvent>) {
        let log = self.log.lock().unwrap();
        let rx = self.events.subscribe();
        (backlog(&log, from_seq), rx)
    }

    pub fn events_from(&self, from_seq: u64) -> Vec<SessionEvent> {
        backlog(&self.log.lock().unwrap(), from_seq)
    }

    pub fn is_ended(&self) -> bool {
        self.log
            .lock()
            .unwrap()
            .last()
            .is_some_and(|e| matches!(e.kind, EventKind::SessionEnded(_)))
    }

    /// Header line followed by one line per event.
    pub fn transcript(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in self.log.lock().unwrap().iter() {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    fn publish(&self, batch: Vec<SessionEvent>) {
        // Holding the log lock while broadcasting keeps subscribe() gap-free.
        let mut log = self.log.lock().unwrap();
        for e in batch {
            let _ = self.events.send(e.clone());
            log.push(e);
        }
    }
}

fn backlog(log: &[SessionEvent], from_seq: u64) -> Vec<SessionEvent> {
    let start = log.partition_point(|e| e.seq < from_seq);
    log[start..].to_vec()
}

async fn run(
    mut engine: Engine,
    handle: Arc<SessionHandle>,
    mut inputs: mpsc::UnboundedReceiver<Input>,
    wall_tick: Duration,
) {
    let tick_ms = engine.settings().tick_ms;
    let mut interval = tokio::time::interval(wall_tick);
    interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
    interval.tick().await;

    handle.publish(engine.start(0));
    let mut now = 0;
    let mut batch = Vec::new();
    while !engine.is_ended() {
        interval.tick().await;
        now += tick_ms;
        while let Ok(input) = inputs.try_recv() {
            batch.push(input);
        }
        handle.publish(engine.step(now, &batch));
        batch.clear();
    }
    tracing::info!(
        scenario = %handle.header.scenario_id,
        ended_at_ms = now,
        "session ended"
    );
}
