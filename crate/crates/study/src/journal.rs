//! Append-only JSON-lines log of everything that changes study state.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, StudyError};
use crate::session::{Recorded, StudySession};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum Event {
    Created { session: StudySession },
    Submitted { session: String, item: usize, recorded: Recorded },
}

pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line)
            .map_err(|e| StudyError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(ev);
    }
    Ok(out)
}

/// Rebuilds every session from its events.
pub fn replay(events: &[Event]) -> Result<BTreeMap<String, StudySession>> {
    let mut sessions = BTreeMap::new();
    for ev in events {
        match ev {
            Event::Created { session } => {
                sessions.insert(session.id.clone(), session.clone());
            }
            Event::Submitted { session, item, recorded } => {
                let s: &mut StudySession = sessions
                    .get_mut(session)
                    .ok_or_else(|| StudyError::NotFound { what: "session", id: session.clone() })?;
                if *item != s.cursor {
                    return Err(StudyError::Conflict { expected: s.cursor, got: *item });
                }
                s.apply(recorded.clone());
            }
        }
    }
    Ok(sessions)
}
