use std::io::{BufRead, Write};

use anyhow::Result;

use hierdial::generation::{ChatSession, GenConfig};
use hierdial::training::Checkpoint;

use crate::commands::load_checkpoint;
use crate::ChatArgs;

pub fn chat(a: &ChatArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(&a.model_dir)?;
    chat_loop(&ckpt, a.generation.gen_config(), input, out)
}

/// Reads user lines until `/quit` or end of input, answering each one.
pub fn chat_loop(ckpt: &Checkpoint, cfg: GenConfig, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let mut session = ChatSession::new(ckpt, cfg.clone())?;
    writeln!(out, "{} ready. /reset starts over, /quit exits.", ckpt.model.kind().label())?;
    loop {
        write!(out, "you> ")?;
        out.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            writeln!(out)?;
            return Ok(());
        }
        match line.trim() {
            "/quit" => return Ok(()),
            "/reset" => {
                session = ChatSession::new(ckpt, cfg.clone())?;
                writeln!(out, "(new conversation)")?;
            }
            cmd if cmd.starts_with('/') => writeln!(out, "unknown command {cmd}; try /reset or /quit")?,
            text => {
                if let Some(r) = session.step(text)? {
                    writeln!(out, "bot> {}", r.text)?;
                }
            }
        }
    }
}
