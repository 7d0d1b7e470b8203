use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::Dialogue;
use crate::error::{Error, Result};

/// Reads a JSON-lines corpus. Blank lines are skipped; any malformed or
/// invariant-violating line is reported with its 1-based line number.
pub fn load_corpus(path: &Path) -> Result<Vec<Dialogue>> {
    let file = fs::File::open(path)?;
    parse_corpus(BufReader::new(file), path)
}

pub fn parse_corpus(reader: impl BufRead, path: &Path) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let d: Dialogue = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        d.validate().map_err(err)?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_corpus(dialogues: &[Dialogue], mut w: impl Write) -> Result<()> {
    for d in dialogues {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(dialogues: &[Dialogue], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_corpus(dialogues, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a lexicon file: one lowercase token per line, optionally followed
/// by a canonical form (`installing install`). `#` starts a comment line.
/// Returns token → canonical (the token itself when no canonical is given).
pub fn load_lexicon_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tok = parts.next().unwrap_or_default();
        let canon = parts.next().unwrap_or(tok);
        if parts.next().is_some() || tok != tok.to_lowercase() || canon != canon.to_lowercase() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected a lowercase token and optional canonical form".into(),
            });
        }
        out.insert(tok.to_string(), canon.to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_valid_line() {
        let src = r#"{"id": "d1", "turns": ["hello there", "hi"]}"#;
        let ds = parse_corpus(src.as_bytes(), Path::new("x.jsonl")).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].turns[1], "hi");
        assert!(ds[0].annotations.is_none());
    }

    #[test]
    fn rejects_single_turn_with_line_number() {
        let src = "{\"id\": \"a\", \"turns\": [\"x\", \"y\"]}\n\n{\"id\": \"b\", \"turns\": [\"x\"]}\n";
        let err = parse_corpus(src.as_bytes(), Path::new("c.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn rejects_malformed_json() {
        let err = parse_corpus("{\"id\": 1".as_bytes(), Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn annotation_length_must_match() {
        let src = r#"{"id": "a", "turns": ["x", "y"], "annotations": [null]}"#;
        assert!(parse_corpus(src.as_bytes(), Path::new("c")).is_err());
        let ok = r#"{"id": "a", "turns": ["x", "y"], "annotations": [null, {"activity": "install", "entity": "vim"}]}"#;
        let d = parse_corpus(ok.as_bytes(), Path::new("c")).unwrap();
        assert_eq!(d[0].annotations.as_ref().unwrap()[1].as_ref().unwrap().entity, "vim");
    }

    #[test]
    fn lexicon_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.txt");
        fs::write(&p, "# activities\ninstall\ninstalling install\n\n").unwrap();
        let lex = load_lexicon_file(&p).unwrap();
        assert_eq!(lex["installing"], "install");
        assert_eq!(lex["install"], "install");
        fs::write(&p, "Install\n").unwrap();
        assert!(load_lexicon_file(&p).is_err());
    }
}
