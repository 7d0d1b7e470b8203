//! Human-evaluation studies for dialogue models.
//!
//! Two protocols are supported: *rating*, where a rater scores fluency and
//! relevancy (0–4) of four model responses shown next to the ground truth,
//! and *preference*, where a rater picks the better of two responses or
//! neither. Candidate order is shuffled per item and model identities never
//! leave the server until the report. Every change is appended to a
//! JSON-lines journal from which the full state can be replayed.

mod error;
pub mod journal;
pub mod server;
mod session;
mod store;

pub use error::{Result, StudyError};
pub use session::{
    classify, preference_report, rating_report, Ack, Candidate, CandidateSource, Choice, ItemView, Protocol, Recorded,
    Report, SlotScore, StudyItem, StudySession, Submission, RATING_CANDIDATES,
};
pub use store::{StudyStore, JOURNAL_FILE};

use hierdial::generation::{respond, GenConfig};
use hierdial::training::Checkpoint;

/// A trained checkpoint answering with a fixed decoding configuration.
pub struct CheckpointSource {
    pub name: String,
    pub checkpoint: Checkpoint,
    pub config: GenConfig,
}

impl CandidateSource for CheckpointSource {
    fn name(&self) -> &str {
        &self.name
    }

    fn respond(&self, context: &[String]) -> hierdial::Result<String> {
        Ok(respond(&self.checkpoint, context, &self.config)?.text)
    }
}
