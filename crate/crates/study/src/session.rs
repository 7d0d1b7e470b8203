use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use hierdial::corpus::{tokenize, ContextClass, Dialogue};
use hierdial::evaluation::{
    preference_stats, rating_stats, render_table3, PreferenceRecord, PreferenceStats, RatingRecord, RatingSummary,
    Vote,
};
use hierdial::numerics::RngStream;

use crate::error::{Result, StudyError};

/// Candidates per rating item.
pub const RATING_CANDIDATES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Rate fluency and relevancy of four responses next to the ground truth.
    Rating,
    /// Pick the better of two responses, or neither.
    Preference,
}

/// Something that can answer a dialogue context.
pub trait CandidateSource: Send + Sync {
    fn name(&self) -> &str;
    fn respond(&self, context: &[String]) -> hierdial::Result<String>;
}

/// A response shown to raters under an opaque slot label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub slot: String,
    pub text: String,
}

/// One study item including the server-side unblinding key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyItem {
    pub context_id: String,
    pub context: Vec<String>,
    pub ground_truth: Option<String>,
    pub class: ContextClass,
    /// In display order.
    pub candidates: Vec<Candidate>,
    /// `models[i]` produced `candidates[i]`; never sent to raters.
    pub models: Vec<String>,
}

/// What a rater sees of one item. Carries no model identities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub session: String,
    pub protocol: Protocol,
    pub index: usize,
    pub total: usize,
    pub context: Vec<String>,
    pub ground_truth: Option<String>,
    pub candidates: Vec<Candidate>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotScore {
    pub slot: String,
    pub fluency: u8,
    pub relevancy: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    First,
    Second,
    Neither,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "lowercase")]
pub enum Submission {
    Rating { rater: String, scores: Vec<SlotScore> },
    Preference { rater: String, choice: Choice },
}

/// Records produced by one accepted submission.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Recorded {
    Ratings { records: Vec<RatingRecord> },
    Preference { record: PreferenceRecord },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: usize,
    pub done: bool,
    pub next: Option<ItemView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySession {
    pub id: String,
    pub protocol: Protocol,
    pub seed: u64,
    pub items: Vec<StudyItem>,
    pub cursor: usize,
    pub ratings: Vec<RatingRecord>,
    pub preferences: Vec<PreferenceRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "lowercase")]
pub enum Report {
    Rating { per_model: BTreeMap<String, RatingSummary>, table: String },
    Preference { stats: Vec<PreferenceStats>, table: String },
}

/// Classifies a context, preferring `Long`; `None` if it is too short for
/// either class.
pub fn classify(context: &[String]) -> Option<ContextClass> {
    let toks: Vec<Vec<String>> = context.iter().map(|t| tokenize(t)).collect();
    [ContextClass::Long, ContextClass::Short].into_iter().find(|c| c.matches(&toks))
}

const SLOTS: [&str; 4] = ["A", "B", "C", "D"];

impl StudySession {
    /// Builds a session: picks contexts, generates one candidate per model
    /// and shuffles candidates per item with a stream derived from `seed`.
    pub fn create(
        id: String,
        protocol: Protocol,
        dialogues: &[Dialogue],
        sources: &[&dyn CandidateSource],
        items: usize,
        seed: u64,
        class: Option<ContextClass>,
    ) -> Result<Self> {
        let want = match protocol {
            Protocol::Rating => RATING_CANDIDATES,
            Protocol::Preference => 2,
        };
        if sources.len() != want {
            return Err(StudyError::Validation(format!(
                "{protocol:?} sessions need exactly {want} models, got {}",
                sources.len()
            )));
        }
        if items == 0 {
            return Err(StudyError::Validation("a session needs at least one item".into()));
        }
        let mut out = Vec::with_capacity(items);
        for d in dialogues.iter().filter(|d| d.turns.len() >= 2) {
            if out.len() == items {
                break;
            }
            let context = d.turns[..d.turns.len() - 1].to_vec();
            let cls = match (classify(&context), class) {
                (_, Some(want)) => {
                    let toks: Vec<Vec<String>> = context.iter().map(|t| tokenize(t)).collect();
                    if !want.matches(&toks) {
                        continue;
                    }
                    want
                }
                (Some(c), None) => c,
                (None, None) => ContextClass::Short,
            };
            let mut rng = RngStream::derive(seed, out.len() as u64);
            let mut order: Vec<usize> = (0..sources.len()).collect();
            rng.shuffle(&mut order);
            let mut candidates = Vec::with_capacity(want);
            let mut models = Vec::with_capacity(want);
            for (pos, &i) in order.iter().enumerate() {
                let slot = match protocol {
                    Protocol::Rating => SLOTS[pos].to_string(),
                    Protocol::Preference => (pos + 1).to_string(),
                };
                candidates.push(Candidate { slot, text: sources[i].respond(&context)? });
                models.push(sources[i].name().to_string());
            }
            out.push(StudyItem {
                context_id: d.id.clone(),
                context,
                ground_truth: (protocol == Protocol::Rating).then(|| d.turns[d.turns.len() - 1].clone()),
                class: cls,
                candidates,
                models,
            });
        }
        if out.len() < items {
            return Err(StudyError::Validation(format!("only {} eligible contexts for {items} items", out.len())));
        }
        Ok(Self { id, protocol, seed, items: out, cursor: 0, ratings: Vec::new(), preferences: Vec::new() })
    }

    pub fn done(&self) -> bool {
        self.cursor == self.items.len()
    }

    pub fn view(&self, index: usize) -> Result<ItemView> {
        let item = self
            .items
            .get(index)
            .ok_or_else(|| StudyError::NotFound { what: "item", id: format!("{}/{index}", self.id) })?;
        Ok(ItemView {
            session: self.id.clone(),
            protocol: self.protocol,
            index,
            total: self.items.len(),
            context: item.context.clone(),
            ground_truth: item.ground_truth.clone(),
            candidates: item.candidates.clone(),
        })
    }

    /// Validates a submission for item `index` and turns it into records
    /// without changing the session.
    pub fn check(&self, index: usize, sub: &Submission) -> Result<Recorded> {
        if index >= self.items.len() {
            return Err(StudyError::NotFound { what: "item", id: format!("{}/{index}", self.id) });
        }
        if index != self.cursor {
            return Err(StudyError::Conflict { expected: self.cursor, got: index });
        }
        let item = &self.items[index];
        match (self.protocol, sub) {
            (Protocol::Rating, Submission::Rating { rater, scores }) => {
                if scores.len() != item.candidates.len() {
                    return Err(StudyError::Validation(format!(
                        "expected {} scores, got {}",
                        item.candidates.len(),
                        scores.len()
                    )));
                }
                let mut records = Vec::with_capacity(scores.len());
                for (cand, model) in item.candidates.iter().zip(&item.models) {
                    let matching: Vec<&SlotScore> = scores.iter().filter(|s| s.slot == cand.slot).collect();
                    let [s] = matching[..] else {
                        return Err(StudyError::Validation(format!("slot {} must be scored exactly once", cand.slot)));
                    };
                    let rec = RatingRecord {
                        context_id: item.context_id.clone(),
                        model: model.clone(),
                        fluency: s.fluency,
                        relevancy: s.relevancy,
                        rater: rater.clone(),
                    };
                    rec.validate().map_err(|e| StudyError::Validation(e.to_string()))?;
                    records.push(rec);
                }
                Ok(Recorded::Ratings { records })
            }
            (Protocol::Preference, Submission::Preference { choice, .. }) => Ok(Recorded::Preference {
                record: PreferenceRecord {
                    context_id: item.context_id.clone(),
                    model_a: item.models[0].clone(),
                    model_b: item.models[1].clone(),
                    vote: match choice {
                        Choice::First => Vote::A,
                        Choice::Second => Vote::B,
                        Choice::Neither => Vote::Neither,
                    },
                    class: item.class,
                },
            }),
            _ => Err(StudyError::Validation(format!("submission does not match the {:?} protocol", self.protocol))),
        }
    }

    /// Applies checked records and advances the cursor.
    pub fn apply(&mut self, rec: Recorded) {
        match rec {
            Recorded::Ratings { records } => self.ratings.extend(records),
            Recorded::Preference { record } => self.preferences.push(record),
        }
        self.cursor += 1;
    }

    pub fn ack(&self) -> Result<Ack> {
        Ok(Ack {
            accepted: self.cursor,
            done: self.done(),
            next: if self.done() { None } else { Some(self.view(self.cursor)?) },
        })
    }

    /// Models compared in this session, in first-item display order
    /// canonicalised alphabetically.
    pub fn models(&self) -> Vec<String> {
        let mut m = self.items.first().map(|i| i.models.clone()).unwrap_or_default();
        m.sort();
        m
    }

    pub fn report(&self) -> Result<Report> {
        match self.protocol {
            Protocol::Rating => rating_report(&self.ratings),
            Protocol::Preference => {
                let models = self.models();
                preference_report(&self.preferences, (&models[0], &models[1]))
            }
        }
    }
}

pub fn rating_report(records: &[RatingRecord]) -> Result<Report> {
    if records.is_empty() {
        return Err(StudyError::Validation("no ratings recorded yet".into()));
    }
    let per_model = rating_stats(records)?;
    let mut table = format!("{:<24} | {:>13} | {:>15}\n", "Model", "Human Fluency", "Human Relevancy");
    for (m, s) in &per_model {
        table += &format!("{m:<24} | {:>13.2} | {:>15.2}\n", s.fluency, s.relevancy);
    }
    Ok(Report::Rating { per_model, table })
}

/// Statistics for `pair.0` against `pair.1`, per context class present and
/// overall.
pub fn preference_report(records: &[PreferenceRecord], pair: (&str, &str)) -> Result<Report> {
    if records.is_empty() {
        return Err(StudyError::Validation("no preferences recorded yet".into()));
    }
    let mut stats = Vec::new();
    for class in [Some(ContextClass::Short), Some(ContextClass::Long), None] {
        if class.is_none_or(|c| records.iter().any(|r| r.class == c)) {
            stats.push(preference_stats(records, pair, class)?);
        }
    }
    let table = render_table3(&stats);
    Ok(Report::Preference { stats, table })
}
