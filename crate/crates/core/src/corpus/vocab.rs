use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{tokenize, Dialogue, EncodedDialogue, Utterance};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const EOU: u32 = 2;
pub const SOT: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<eou>", "<sot>"];

/// Token/id bijection with a fixed reserved prefix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    reserved: usize,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    reserved: usize,
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_tokens(r.tokens, r.reserved)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr { reserved: v.reserved, tokens: v.tokens }
    }
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, reserved: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, reserved, index }
    }

    /// Reserved tokens first, then the most frequent of `stream` (ties broken
    /// lexicographically) until `max_size` entries exist.
    pub fn from_stream<'a>(
        reserved: &[&str],
        stream: impl IntoIterator<Item = &'a str>,
        max_size: usize,
    ) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in stream {
            if !reserved.contains(&t) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let keep = max_size.saturating_sub(reserved.len());
        let tokens = reserved
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(keep).map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens, reserved.len())
    }

    /// Word vocabulary over every turn of `corpus`.
    pub fn build(corpus: &[Dialogue], max_size: usize) -> Result<Self> {
        if max_size < 5 {
            return Err(Error::Invalid(format!("vocabulary max_size {max_size} < 5")));
        }
        let toks: Vec<Vec<String>> = corpus.iter().flat_map(|d| d.turns.iter().map(|t| tokenize(t))).collect();
        Ok(Self::from_stream(&RESERVED, toks.iter().flatten().map(String::as_str), max_size))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn reserved_count(&self) -> usize {
        self.reserved
    }

    pub fn is_reserved(&self, id: u32) -> bool {
        (id as usize) < self.reserved
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Encodes token strings, returning ids plus the positions that fell
    /// back to `<unk>`.
    pub fn encode(&self, tokens: &[String]) -> (Vec<u32>, Vec<usize>) {
        let mut unk = Vec::new();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                self.id(t).unwrap_or_else(|| {
                    unk.push(i);
                    UNK
                })
            })
            .collect();
        (ids, unk)
    }

    /// Tokenizes and encodes one turn, appending `<eou>`.
    pub fn encode_utterance(&self, raw: &str) -> Utterance {
        let (mut tokens, _) = self.encode(&tokenize(raw));
        tokens.push(EOU);
        Utterance { tokens, raw: raw.to_string() }
    }

    pub fn encode_dialogue(&self, d: &Dialogue) -> EncodedDialogue {
        EncodedDialogue { id: d.id.clone(), turns: d.turns.iter().map(|t| self.encode_utterance(t)).collect() }
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Whitespace-joined text of `ids`, dropping a trailing `<eou>`.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let ids = match ids.split_last() {
            Some((&EOU, rest)) => rest,
            _ => ids,
        };
        self.decode(ids).join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<Dialogue> {
        vec![Dialogue::new("d", lines.iter().map(|s| s.to_string()).collect())]
    }

    #[test]
    fn reserved_then_frequency() {
        let v = Vocabulary::build(&corpus(&["a a b", "c"]), 5).unwrap();
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<sot>"), Some(SOT));
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.len(), 5);
        assert_eq!(v.id_or_unk("b"), UNK);
    }

    #[test]
    fn lexicographic_tie_break() {
        let v = Vocabulary::build(&corpus(&["y x y x z", "q"]), 10).unwrap();
        assert_eq!(v.id("x"), Some(4));
        assert_eq!(v.id("y"), Some(5));
        assert!(v.id("q").unwrap() < v.id("z").unwrap());
    }

    #[test]
    fn max_size_floor() {
        assert!(Vocabulary::build(&corpus(&["a", "b"]), 4).is_err());
    }

    #[test]
    fn encode_records_unknowns_and_appends_eou() {
        let v = Vocabulary::build(&corpus(&["a a b b c", "a"]), 6).unwrap();
        let (ids, unk) = v.encode(&["a".into(), "zzz".into(), "b".into()]);
        assert_eq!(ids, [4, UNK, 5]);
        assert_eq!(unk, [1]);
        let u = v.encode_utterance("A b");
        assert_eq!(u.tokens, [4, 5, EOU]);
        assert_eq!(u.content(), [4, 5]);
        assert_eq!(v.detokenize(&u.tokens), "a b");
    }

    #[test]
    fn serde_rebuilds_index() {
        let v = Vocabulary::build(&corpus(&["x y", "z"]), 10).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("z"), v.id("z"));
    }
}
