use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use eaml::elicitation::ExpertAssessment;
use serde::{Deserialize, Serialize};

use crate::{Result, ServiceError};

/// One line of the log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Session {
        session_id: String,
        expert_id: String,
        order: Vec<String>,
        started_at: DateTime<Utc>,
    },
    Assessment {
        session_id: String,
        position: usize,
        record: ExpertAssessment,
    },
}

/// Append-only JSONL log with a single serialized writer.
///
/// Each event is encoded in full and handed to one `write_all` on an
/// `O_APPEND` handle followed by `sync_data`, so a crash leaves at most a
/// torn final line, which replay discards.
pub struct Store {
    path: PathBuf,
    file: Mutex<File>,
}

impl Store {
    /// Opens (creating if absent) and returns the replayed events.
    pub fn open(path: impl AsRef<Path>) -> Result<(Store, Vec<Event>)> {
        let path = path.as_ref().to_path_buf();
        let events = if path.exists() { replay(&path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((Store { path, file: Mutex::new(file) }, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }
}

fn replay(path: &Path) -> Result<Vec<Event>> {
    let mut text = std::fs::read_to_string(path)?;
    // a missing final newline means the last write was interrupted
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
        text.truncate(keep);
    }
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(line).map_err(|e| ServiceError::Corrupt {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}
