//! JSON Lines transcripts: one metadata header line, then one line per event.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::SessionEvent;

pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub schema_version: u32,
    pub scenario_id: String,
    pub config_hash: String,
    /// Wall-clock creation time; the only nondeterministic field.
    pub created_at_unix_ms: u64,
}

impl TranscriptHeader {
    pub fn new(scenario_id: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Self {
            schema_version: TRANSCRIPT_SCHEMA_VERSION,
            scenario_id: scenario_id.into(),
            config_hash: config_hash.into(),
            created_at_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("transcript storage unavailable: {0}")]
    StorageUnavailable(#[from] io::Error),
}

/// Destination for session events.
pub trait EventSink: Send {
    fn persist(&mut self, event: &SessionEvent) -> Result<(), StorageError>;
}

/// Keeps nothing. Used when a caller only wants the returned event batches.
#[derive(Debug, Default)]
pub struct NullSink;

impl EventSink for NullSink {
    fn persist(&mut self, _event: &SessionEvent) -> Result<(), StorageError> {
        Ok(())
    }
}

/// Writes the header on creation and one flushed line per event.
#[derive(Debug)]
pub struct TranscriptWriter<W: Write> {
    out: W,
}

impl TranscriptWriter<File> {
    pub fn create(path: impl AsRef<Path>, header: &TranscriptHeader) -> Result<Self, StorageError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        Self::new(File::create(path)?, header)
    }
}

impl<W: Write> TranscriptWriter<W> {
    pub fn new(mut out: W, header: &TranscriptHeader) -> Result<Self, StorageError> {
        serde_json::to_writer(&mut out, header).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write + Send> EventSink for TranscriptWriter<W> {
    fn persist(&mut self, event: &SessionEvent) -> Result<(), StorageError> {
        let mut line = serde_json::to_vec(event).map_err(io::Error::from)?;
        line.push(b'\n');
        self.out.write_all(&line)?;
        self.out.flush()?;
        Ok(())
    }
}

impl<S: EventSink + ?Sized> EventSink for Box<S> {
    fn persist(&mut self, event: &SessionEvent) -> Result<(), StorageError> {
        (**self).persist(event)
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("transcript line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("transcript is empty")]
    MissingHeader,
}

pub fn read_transcript(
    path: impl AsRef<Path>,
) -> Result<(TranscriptHeader, Vec<SessionEvent>), ReadError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or(ReadError::MissingHeader)??;
    let header = serde_json::from_str(&header_line).map_err(|e| ReadError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(
            serde_json::from_str(&line).map_err(|e| ReadError::Malformed {
                line: i + 2,
                message: e.to_string(),
            })?,
        );
    }
    Ok((header, events))
}

/// Transcript text without the metadata header line.
pub fn strip_header(transcript: &str) -> &str {
    transcript.split_once('\n').map_or("", |(_, rest)| rest)
}
