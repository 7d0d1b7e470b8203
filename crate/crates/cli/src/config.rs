//! `key = value` config files overlaid by command-line flags.
//!
//! Keys are long flag names (`beam-width` or `beam_width`). A key given on
//! the command line is ignored in the file. Boolean flags take `true` or
//! `false`; repeatable flags may appear on several lines.

use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, CommandFactory, Parser};

use crate::Cli;

#[derive(Debug)]
pub enum ParseError {
    Clap(clap::Error),
    Config(String),
}

impl From<clap::Error> for ParseError {
    fn from(e: clap::Error) -> Self {
        ParseError::Clap(e)
    }
}

/// `(line number, key, value)` triples of a config file.
pub fn read_pairs(text: &str, path: &Path) -> Result<Vec<(usize, String, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("{}:{}: expected `key = value`", path.display(), i + 1));
        };
        let v = v.trim();
        let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
        out.push((i + 1, k.trim().replace('_', "-"), v.to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn on_command_line(args: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&format!("{flag}="))
    })
}

pub fn parse<I, T>(args: I) -> Result<Cli, ParseError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let Some(path) = config_path(&args) else {
        return Ok(Cli::try_parse_from(&args)?);
    };
    let cmd = Cli::command();
    let sub = args
        .get(1)
        .and_then(|name| cmd.find_subcommand(name))
        .ok_or_else(|| ParseError::Config("--config must follow a subcommand".into()))?;
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| ParseError::Config(format!("{}: {e}", path.display())))?;
    let pairs = read_pairs(&text, path).map_err(ParseError::Config)?;

    let mut extra: Vec<OsString> = Vec::new();
    for (line, key, value) in pairs {
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            return Err(ParseError::Config(format!("{}:{line}: unknown key {key:?}", path.display())));
        };
        if key == "config" {
            return Err(ParseError::Config(format!("{}:{line}: config files do not nest", path.display())));
        }
        if on_command_line(&args, &key) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" => extra.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(ParseError::Config(format!("{}:{line}: {key} must be true or false", path.display()))),
            },
            _ => extra.push(format!("--{key}={value}").into()),
        }
    }
    let merged: Vec<OsString> = args[..2].iter().cloned().chain(extra).chain(args[2..].iter().cloned()).collect();
    Ok(Cli::try_parse_from(merged)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Command;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn flags_override_file() {
        let f = write("# defaults\nepochs = 3\nlr=0.01\nseparate_embeddings = true\nout = from-file\n");
        let p = f.path().to_str().unwrap();
        let cli = parse(["hierdial", "train", "--config", p, "--model", "hred", "--corpus", "c", "--lr", "0.5"]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!((a.epochs, a.lr, a.separate_embeddings), (3, 0.5, true));
        assert_eq!(a.out, Path::new("from-file"));
    }

    #[test]
    fn unknown_keys_and_bad_lines_rejected() {
        let f = write("nonsense = 1\n");
        let p = f.path().to_str().unwrap().to_string();
        assert!(matches!(parse(["hierdial", "synth", "--out", "x", "--config", &p]), Err(ParseError::Config(_))));
        let f = write("just words\n");
        let p = f.path().to_str().unwrap().to_string();
        assert!(matches!(parse(["hierdial", "synth", "--out", "x", "--config", &p]), Err(ParseError::Config(_))));
        assert!(matches!(parse(["hierdial", "synth", "--out", "x", "--bogus"]), Err(ParseError::Clap(_))));
    }
}
