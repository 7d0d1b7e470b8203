use std::collections::BTreeMap;
use std::path::Path;

use hierdial::corpus::{ContextClass, Dialogue};

use crate::error::{Result, StudyError};
use crate::journal::{read_events, replay, Event, Journal};
use crate::session::{Ack, CandidateSource, ItemView, Protocol, Report, StudySession, Submission};

pub const JOURNAL_FILE: &str = "journal.jsonl";

/// All sessions, backed by the journal. Every mutation is journaled
/// before it is applied.
pub struct StudyStore {
    journal: Journal,
    sessions: BTreeMap<String, StudySession>,
}

impl StudyStore {
    /// Opens (or creates) the journal in `dir` and replays it.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(JOURNAL_FILE);
        let sessions = replay(&read_events(&path)?)?;
        Ok(Self { journal: Journal::open(&path)?, sessions })
    }

    pub fn journal_path(&self) -> &Path {
        self.journal.path()
    }

    pub fn create(
        &mut self,
        protocol: Protocol,
        dialogues: &[Dialogue],
        sources: &[&dyn CandidateSource],
        items: usize,
        seed: u64,
        class: Option<ContextClass>,
    ) -> Result<&StudySession> {
        let id = format!("{}-{:04}", protocol_tag(protocol), self.sessions.len() + 1);
        let session = StudySession::create(id.clone(), protocol, dialogues, sources, items, seed, class)?;
        self.journal.append(&Event::Created { session: session.clone() })?;
        Ok(self.sessions.entry(id).or_insert(session))
    }

    pub fn get(&self, id: &str) -> Result<&StudySession> {
        self.sessions.get(id).ok_or_else(|| StudyError::NotFound { what: "session", id: id.to_string() })
    }

    pub fn view(&self, id: &str, index: usize) -> Result<ItemView> {
        self.get(id)?.view(index)
    }

    pub fn submit(&mut self, id: &str, index: usize, sub: &Submission) -> Result<Ack> {
        let recorded = self.get(id)?.check(index, sub)?;
        self.journal.append(&Event::Submitted { session: id.to_string(), item: index, recorded: recorded.clone() })?;
        let s = self.sessions.get_mut(id).expect("checked above");
        s.apply(recorded);
        s.ack()
    }

    pub fn report(&self, id: &str) -> Result<Report> {
        self.get(id)?.report()
    }

    pub fn sessions(&self) -> impl Iterator<Item = &StudySession> {
        self.sessions.values()
    }
}

fn protocol_tag(p: Protocol) -> &'static str {
    match p {
        Protocol::Rating => "rating",
        Protocol::Preference => "preference",
    }
}
