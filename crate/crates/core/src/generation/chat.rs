use super::{generate, ContextCache, GenConfig, Response};
use crate::corpus::tokenize;
use crate::error::Result;
use crate::numerics::RngStream;
use crate::training::Checkpoint;

/// An interactive dialogue. Each user turn and each reply costs exactly
/// one context update; nothing is re-encoded.
#[derive(Clone, Debug)]
pub struct ChatSession<'a> {
    ckpt: &'a Checkpoint,
    cfg: GenConfig,
    turns: Vec<String>,
    cache: ContextCache,
}

impl<'a> ChatSession<'a> {
    pub fn new(ckpt: &'a Checkpoint, cfg: GenConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { ckpt, cfg, turns: Vec::new(), cache: ContextCache::empty(ckpt) })
    }

    /// Replies to `user`. Input without any tokens is ignored and yields
    /// `None`.
    pub fn step(&mut self, user: &str) -> Result<Option<Response>> {
        if tokenize(user).is_empty() {
            return Ok(None);
        }
        let mut cache = self.cache.clone();
        cache.push(self.ckpt, user)?;
        let mut rng = RngStream::derive(self.cfg.seed, cache.consumed as u64);
        let reply = generate(self.ckpt, &cache, &self.cfg, &mut rng, None)?;
        cache.push(self.ckpt, &reply.text)?;
        self.turns.push(user.to_string());
        self.turns.push(reply.text.clone());
        self.cache = cache;
        Ok(Some(reply))
    }

    pub fn turns(&self) -> &[String] {
        &self.turns
    }

    pub fn cache(&self) -> &ContextCache {
        &self.cache
    }
}
