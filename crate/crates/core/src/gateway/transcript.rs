//! JSON Lines transcripts: a header line, then one record per history entry.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatSession, GatewayError, Speaker};

pub const TRANSCRIPT_FORMAT: &str = "madroid-transcript";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub format: String,
    pub version: u32,
    pub task: String,
    pub seed: u64,
    /// The scenario the run used, embedded so a transcript replays on its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<serde_json::Value>,
}

impl TranscriptHeader {
    pub fn new(task: &str, seed: u64, scenario: Option<serde_json::Value>) -> Self {
        TranscriptHeader { format: TRANSCRIPT_FORMAT.into(), version: VERSION, task: task.into(), seed, scenario }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub session_id: String,
    pub role: String,
    pub seq: usize,
    pub speaker: Speaker,
    pub text: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn new(header: TranscriptHeader) -> Self {
        Transcript { header, records: Vec::new() }
    }

    /// Appends every history entry of `session`, numbered from 0.
    pub fn add_session(&mut self, session: &ChatSession) {
        for (seq, entry) in session.history().iter().enumerate() {
            self.records.push(TranscriptRecord {
                session_id: session.id().to_string(),
                role: session.role().to_string(),
                seq,
                speaker: entry.speaker,
                text: entry.text.clone(),
                timestamp: entry.timestamp_ms,
            });
        }
    }

    /// Records of one session, in order.
    pub fn session<'a>(&'a self, session_id: &'a str) -> impl Iterator<Item = &'a TranscriptRecord> + 'a {
        self.records.iter().filter(move |r| r.session_id == session_id)
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), GatewayError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        let encode = |e: serde_json::Error| GatewayError::Format(e.to_string());
        writeln!(out, "{}", serde_json::to_string(&self.header).map_err(encode)?)?;
        for record in &self.records {
            writeln!(out, "{}", serde_json::to_string(record).map_err(encode)?)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let (_, first) = lines.next().ok_or_else(|| GatewayError::Format("empty file, no header".into()))?;
        let header: TranscriptHeader =
            serde_json::from_str(&first?).map_err(|e| GatewayError::Format(format!("header: {e}")))?;
        if header.format != TRANSCRIPT_FORMAT {
            return Err(GatewayError::Format(format!("not a transcript (format {:?})", header.format)));
        }
        let mut records = Vec::new();
        for (n, line) in lines {
            let record =
                serde_json::from_str(&line?).map_err(|e| GatewayError::Format(format!("line {}: {e}", n + 1)))?;
            records.push(record);
        }
        Ok(Transcript { header, records })
    }
}
