//! Append-only JSON-lines event log.
//!
//! The log is the only persistent state. On open, every complete line is
//! replayed; an unterminated final line (a write torn by a crash) is cut off
//! so later appends start on a clean boundary.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ecb_core::corpus::{Country, RatingRecord, YesNo};
use serde::{Deserialize, Serialize};

use crate::types::{RaterSession, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldOutcome {
    pub question: String,
    pub expected: YesNo,
    pub answer: YesNo,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub session_id: String,
    pub task_id: String,
    pub idempotency_key: String,
    /// Position of the submission in the log.
    pub sequence: u64,
    pub stored_records: usize,
    pub gold_passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub session_id: String,
    pub rater_id: String,
    pub country: Country,
    pub task_id: String,
    pub model: String,
    pub kind: TaskKind,
    /// Corrections are appended with a higher version; the highest wins.
    pub version: u32,
    pub idempotency_key: String,
    pub ratings: Vec<RatingRecord>,
    pub gold: Option<GoldOutcome>,
    pub submitted_at: u64,
    pub ack: Ack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Session(RaterSession),
    Submission(Submission),
}

#[derive(Debug)]
pub struct Store {
    file: Option<File>,
    path: Option<PathBuf>,
    len: u64,
}

impl Store {
    pub fn in_memory() -> Store {
        Store { file: None, path: None, len: 0 }
    }

    /// Opens (or creates) the log and returns the events already in it.
    pub fn open(path: &Path) -> io::Result<(Store, Vec<LogEvent>)> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e),
        };
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        let mut events = Vec::new();
        for (i, line) in text[..complete].lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1)))?;
            events.push(e);
        }
        let file = OpenOptions::new().create(true).append(true).read(true).open(path)?;
        if complete < text.len() {
            file.set_len(complete as u64)?;
        }
        let store = Store { file: Some(file), path: Some(path.to_path_buf()), len: events.len() as u64 };
        Ok((store, events))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Number of events written so far, including replayed ones.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends one event and syncs it; returns its sequence number.
    pub fn append(&mut self, event: &LogEvent) -> io::Result<u64> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_string(event).map_err(io::Error::other)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        let seq = self.len;
        self.len += 1;
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(id: &str) -> LogEvent {
        LogEvent::Session(RaterSession {
            session_id: id.into(),
            rater_id: "r".into(),
            country: Country::India,
            consent_at: 1,
            model_order: vec![],
            assigned_tasks: vec![],
            completed: Default::default(),
        })
    }

    #[test]
    fn reopen_replays_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let (mut s, events) = Store::open(&path).unwrap();
        assert!(events.is_empty());
        assert_eq!(s.append(&session("a")).unwrap(), 0);
        assert_eq!(s.append(&session("b")).unwrap(), 1);
        drop(s);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"event\":\"sess").unwrap();
        drop(f);

        let (mut s, events) = Store::open(&path).unwrap();
        assert_eq!(events, vec![session("a"), session("b")]);
        assert_eq!(s.append(&session("c")).unwrap(), 2);
        drop(s);
        let (_, events) = Store::open(&path).unwrap();
        assert_eq!(events.len(), 3);
    }
}
