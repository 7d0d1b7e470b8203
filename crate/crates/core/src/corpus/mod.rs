//! Dialogue data model, tokenization, vocabularies, JSON-lines corpus I/O and
//! the synthetic help-desk corpus generator.

mod io;
mod synth;
mod tokenize;
mod vocab;

use serde::{Deserialize, Serialize};

pub use io::{load_corpus, load_lexicon_file, parse_corpus, save_corpus, write_corpus};
pub use synth::{generate_synthetic, SynthSpec, SyntheticCorpus, DEFAULT_ACTIVITIES, DEFAULT_ENTITIES, FILLER_WORDS};
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, EOU, PAD, RESERVED, SOT, UNK};

/// Ground-truth (activity, entity) pair for one turn.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Annotation {
    pub activity: String,
    pub entity: String,
}

/// A dialogue as stored on disk: raw turn text plus optional per-turn
/// annotations (`None` for turns without a ground-truth pair).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<Option<Annotation>>>,
}

impl Dialogue {
    pub fn new(id: impl Into<String>, turns: Vec<String>) -> Self {
        Self { id: id.into(), turns, annotations: None }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.turns.len() < 2 {
            return Err(format!("dialogue {:?} has {} turn(s); at least 2 required", self.id, self.turns.len()));
        }
        if let Some(i) = self.turns.iter().position(|t| tokenize(t).is_empty()) {
            return Err(format!("dialogue {:?} turn {i} is empty", self.id));
        }
        if let Some(a) = &self.annotations {
            if a.len() != self.turns.len() {
                return Err(format!(
                    "dialogue {:?} has {} annotations for {} turns",
                    self.id,
                    a.len(),
                    self.turns.len()
                ));
            }
        }
        Ok(())
    }

    pub fn tokenized(&self) -> Vec<Vec<String>> {
        self.turns.iter().map(|t| tokenize(t)).collect()
    }
}

/// One encoded turn. `tokens` always ends with [`EOU`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub tokens: Vec<u32>,
    pub raw: String,
}

impl Utterance {
    /// Tokens without the trailing end-of-utterance marker.
    pub fn content(&self) -> &[u32] {
        match self.tokens.split_last() {
            Some((&EOU, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

/// A dialogue whose turns have been mapped through a [`Vocabulary`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedDialogue {
    pub id: String,
    pub turns: Vec<Utterance>,
}

/// Which size class a dialogue context belongs to for the preference study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextClass {
    Short,
    Long,
}

impl ContextClass {
    /// Short contexts hold at least 20 tokens; long ones at least 80
    /// distinct tokens. A context can qualify for both.
    pub fn matches(self, context: &[Vec<String>]) -> bool {
        match self {
            ContextClass::Short => context.iter().map(Vec::len).sum::<usize>() >= 20,
            ContextClass::Long => {
                let unique: std::collections::HashSet<&String> = context.iter().flatten().collect();
                unique.len() >= 80
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContextClass::Short => "short",
            ContextClass::Long => "long",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_turn_dialogue_is_invalid() {
        assert!(Dialogue::new("a", vec!["hi".into()]).validate().is_err());
        assert!(Dialogue::new("a", vec!["hi".into(), "  ".into()]).validate().is_err());
        assert!(Dialogue::new("a", vec!["hi".into(), "yo".into()]).validate().is_ok());
    }

    #[test]
    fn context_classes() {
        let short: Vec<Vec<String>> = vec![vec!["a".to_string(); 12], vec!["b".to_string(); 8]];
        assert!(ContextClass::Short.matches(&short));
        assert!(!ContextClass::Long.matches(&short));
        let long: Vec<Vec<String>> = vec![(0..80).map(|i| format!("w{i}")).collect()];
        assert!(ContextClass::Long.matches(&long));
        assert!(!ContextClass::Long.matches(&[(0..79).map(|i| format!("w{i}")).collect()]));
    }
}
