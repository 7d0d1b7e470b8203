//! Coarse token sequences for the multiresolution model: noun sequences
//! and activity-entity pairs, extracted with lexicons.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_lexicon_file, tokenize, Dialogue, SynthSpec, Vocabulary, EOU, RESERVED};
use crate::error::{Error, Result};

pub const NOCOARSE: &str = "<nocoarse>";
pub const NONE_ENTITY: &str = "<none-entity>";
pub const COARSE_RESERVED: [&str; 6] = [RESERVED[0], RESERVED[1], RESERVED[2], RESERVED[3], NOCOARSE, NONE_ENTITY];

const DEFAULT_ACTIVITIES: &str = include_str!("../data/lexicons/activities.txt");
const DEFAULT_ENTITIES: &str = include_str!("../data/lexicons/entities.txt");
const DEFAULT_NOUNS: &str = include_str!("../data/lexicons/nouns.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoarseKind {
    Noun,
    ActivityEntity,
}

impl std::str::FromStr for CoarseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noun" => Ok(CoarseKind::Noun),
            "activity-entity" | "act-ent" => Ok(CoarseKind::ActivityEntity),
            _ => Err(Error::Invalid(format!("unknown coarse kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseLexicons {
    pub nouns: BTreeSet<String>,
    /// surface verb → canonical activity
    pub activities: BTreeMap<String, String>,
    pub entities: BTreeSet<String>,
    /// Drop repeated nouns within one utterance.
    #[serde(default = "yes")]
    pub dedup_nouns: bool,
}

fn yes() -> bool {
    true
}

fn parse_lexicon(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let mut it = l.split_whitespace();
            let tok = it.next().unwrap_or_default().to_string();
            let canon = it.next().map_or_else(|| tok.clone(), str::to_string);
            (tok, canon)
        })
        .collect()
}

impl CoarseLexicons {
    /// Lexicons shipped with the crate (Ubuntu-flavoured).
    pub fn builtin() -> Self {
        Self {
            nouns: parse_lexicon(DEFAULT_NOUNS).into_keys().collect(),
            activities: parse_lexicon(DEFAULT_ACTIVITIES),
            entities: parse_lexicon(DEFAULT_ENTITIES).into_keys().collect(),
            dedup_nouns: true,
        }
    }

    /// Lexicons matching a synthetic corpus's pools: nouns are the entities.
    pub fn for_synth(spec: &SynthSpec) -> Self {
        Self {
            nouns: spec.entities.iter().cloned().collect(),
            activities: spec.activities.iter().map(|a| (a.clone(), a.clone())).collect(),
            entities: spec.entities.iter().cloned().collect(),
            dedup_nouns: true,
        }
    }

    /// Reads `activities.txt`, `entities.txt` and `nouns.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let activities = load_lexicon_file(&dir.join("activities.txt"))?;
        let entities = load_lexicon_file(&dir.join("entities.txt"))?.into_keys().collect();
        let nouns = load_lexicon_file(&dir.join("nouns.txt"))?.into_keys().collect();
        Ok(Self { nouns, activities, entities, dedup_nouns: true })
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let acts: String = self
            .activities
            .iter()
            .map(|(s, c)| if s == c { format!("{s}\n") } else { format!("{s} {c}\n") })
            .collect();
        std::fs::write(dir.join("activities.txt"), acts)?;
        std::fs::write(dir.join("entities.txt"), self.entities.iter().map(|e| format!("{e}\n")).collect::<String>())?;
        std::fs::write(dir.join("nouns.txt"), self.nouns.iter().map(|e| format!("{e}\n")).collect::<String>())?;
        Ok(())
    }

    pub fn canonical_activities(&self) -> BTreeSet<&str> {
        self.activities.values().map(String::as_str).collect()
    }

    /// Canonical activities mentioned anywhere in `tokens`.
    pub fn activity_set(&self, tokens: &[String]) -> BTreeSet<String> {
        tokens.iter().filter_map(|t| self.activities.get(t).cloned()).collect()
    }

    /// Entities mentioned anywhere in `tokens`.
    pub fn entity_set(&self, tokens: &[String]) -> BTreeSet<String> {
        tokens.iter().filter(|t| self.entities.contains(*t)).cloned().collect()
    }
}

/// Coarse tokens of one utterance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseSequence {
    pub kind: CoarseKind,
    pub tokens: Vec<String>,
    pub source_turn: usize,
}

impl CoarseSequence {
    pub fn is_empty_marker(&self) -> bool {
        self.tokens.len() == 1 && self.tokens[0] == NOCOARSE
    }

    /// Coarse ids followed by `<eou>`.
    pub fn encode(&self, vocab: &Vocabulary) -> Vec<u32> {
        let mut ids: Vec<u32> = self.tokens.iter().map(|t| vocab.id_or_unk(t)).collect();
        ids.push(EOU);
        ids
    }
}

fn or_nocoarse(tokens: Vec<String>) -> Vec<String> {
    if tokens.is_empty() {
        vec![NOCOARSE.to_string()]
    } else {
        tokens
    }
}

/// Noun-lexicon hits in order of first appearance.
pub fn extract_nouns(tokens: &[String], lex: &CoarseLexicons, source_turn: usize) -> CoarseSequence {
    let mut seen = BTreeSet::new();
    let hits = tokens
        .iter()
        .filter(|t| lex.nouns.contains(*t))
        .filter(|t| !lex.dedup_nouns || seen.insert(t.as_str()))
        .cloned()
        .collect();
    CoarseSequence { kind: CoarseKind::Noun, tokens: or_nocoarse(hits), source_turn }
}

/// Each activity hit (canonicalized) paired with the nearest entity hit that
/// follows it, or `<none-entity>` when there is none.
pub fn extract_activity_entities(tokens: &[String], lex: &CoarseLexicons, source_turn: usize) -> CoarseSequence {
    let mut out = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        let Some(canon) = lex.activities.get(t) else { continue };
        let entity = tokens[i + 1..].iter().find(|u| lex.entities.contains(*u));
        out.push(canon.clone());
        out.push(entity.map_or_else(|| NONE_ENTITY.to_string(), Clone::clone));
    }
    CoarseSequence { kind: CoarseKind::ActivityEntity, tokens: or_nocoarse(out), source_turn }
}

pub fn extract(kind: CoarseKind, tokens: &[String], lex: &CoarseLexicons, source_turn: usize) -> CoarseSequence {
    match kind {
        CoarseKind::Noun => extract_nouns(tokens, lex, source_turn),
        CoarseKind::ActivityEntity => extract_activity_entities(tokens, lex, source_turn),
    }
}

/// Coarse sequences for every turn of a dialogue.
pub fn extract_dialogue(kind: CoarseKind, d: &Dialogue, lex: &CoarseLexicons) -> Vec<CoarseSequence> {
    d.turns.iter().enumerate().map(|(i, t)| extract(kind, &tokenize(t), lex, i)).collect()
}

/// Vocabulary over all coarse tokens of `corpus`, with the coarse reserved
/// tokens first.
pub fn coarse_vocab(corpus: &[Dialogue], lex: &CoarseLexicons, kind: CoarseKind) -> Vocabulary {
    let seqs: Vec<CoarseSequence> = corpus.iter().flat_map(|d| extract_dialogue(kind, d, lex)).collect();
    Vocabulary::from_stream(
        &COARSE_RESERVED,
        seqs.iter().flat_map(|s| s.tokens.iter().map(String::as_str)),
        usize::MAX,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> CoarseLexicons {
        CoarseLexicons::builtin()
    }

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn noun_examples() {
        let l = lex();
        assert_eq!(extract_nouns(&toks("install firefox on ubuntu"), &l, 0).tokens, ["firefox", "ubuntu"]);
        assert_eq!(extract_nouns(&toks("how do i do that ?"), &l, 0).tokens, [NOCOARSE]);
        assert_eq!(extract_nouns(&toks("ubuntu ubuntu firefox"), &l, 0).tokens, ["ubuntu", "firefox"]);
        let keep = CoarseLexicons { dedup_nouns: false, ..l };
        assert_eq!(extract_nouns(&toks("ubuntu ubuntu firefox"), &keep, 0).tokens, ["ubuntu", "ubuntu", "firefox"]);
    }

    #[test]
    fn activity_entity_examples() {
        let l = lex();
        assert_eq!(extract_activity_entities(&toks("please install firefox"), &l, 0).tokens, ["install", "firefox"]);
        assert_eq!(
            extract_activity_entities(&toks("download and install firefox"), &l, 0).tokens,
            ["download", "firefox", "install", "firefox"]
        );
        assert_eq!(extract_activity_entities(&toks("remove it"), &l, 0).tokens, ["remove", NONE_ENTITY]);
        assert_eq!(extract_activity_entities(&toks("uninstall vlc"), &l, 0).tokens, ["remove", "vlc"]);
        assert!(extract_activity_entities(&toks("thanks"), &l, 3).is_empty_marker());
    }

    #[test]
    fn empty_lexicons_give_reserved_only_vocab() {
        let d = vec![Dialogue::new("a", vec!["install firefox".into(), "ok".into()])];
        let v = coarse_vocab(&d, &CoarseLexicons::default(), CoarseKind::ActivityEntity);
        assert_eq!(v.tokens(), COARSE_RESERVED);
        let v = coarse_vocab(&d, &CoarseLexicons::default(), CoarseKind::Noun);
        assert_eq!(v.len(), COARSE_RESERVED.len());
    }

    #[test]
    fn builtin_lexicons_load() {
        let l = CoarseLexicons::builtin();
        assert_eq!(l.entities.len(), 50);
        assert_eq!(l.canonical_activities().len(), 6);
        assert_eq!(l.activities["uninstall"], "remove");
    }

    #[test]
    fn save_and_load_dir() {
        let dir = tempfile::tempdir().unwrap();
        let l = CoarseLexicons::builtin();
        l.save_dir(dir.path()).unwrap();
        assert_eq!(CoarseLexicons::load_dir(dir.path()).unwrap(), l);
    }
}
