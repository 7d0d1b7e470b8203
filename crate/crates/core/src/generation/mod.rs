//! Response generation: greedy, beam and sampled decoding, the two-stage
//! MrRNN procedure, and incremental chat sessions.

mod chat;
mod decode;

use serde::{Deserialize, Serialize};

pub use chat::ChatSession;
pub use decode::{beam_decode, greedy_decode, mask_log_probs, sample_decode, Hypothesis, StepModel};

use crate::coarse::{CoarseSequence, NOCOARSE};
use crate::corpus::{EOU, PAD, SOT, UNK};
use crate::error::{Error, Result};
use crate::models::{baseline_context, Bound, DecoderState, StepDecoder};
use crate::numerics::{RngStream, Tape, Tensor};
use crate::training::Checkpoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam,
    Sample,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "beam" => Ok(Strategy::Beam),
            "sample" => Ok(Strategy::Sample),
            _ => Err(Error::Invalid(format!("unknown strategy {s:?} (greedy, beam, sample)"))),
        }
    }
}

/// How VHRED picks its latent at generation time. Both use the prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentChoice {
    Sample,
    Mean,
}

impl std::str::FromStr for LatentChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(LatentChoice::Sample),
            "mean" => Ok(LatentChoice::Mean),
            _ => Err(Error::Invalid(format!("unknown latent choice {s:?} (sample, mean)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
    /// Keep `<unk>` out of generated text.
    pub mask_unk: bool,
    pub latent: LatentChoice,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            beam_width: 5,
            temperature: 1.0,
            max_tokens: 30,
            seed: 0,
            mask_unk: true,
            latent: LatentChoice::Sample,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_tokens == 0 {
            return Err(Error::Invalid("beam width and max tokens must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Invalid(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }

    fn mask(&self) -> Vec<u32> {
        if self.mask_unk {
            vec![PAD, UNK, SOT]
        } else {
            vec![PAD, SOT]
        }
    }
}

/// A [`StepDecoder`] driven on a scratch tape.
struct TapeStepper<'t> {
    tape: &'t mut Tape,
    dec: StepDecoder,
    mask: Vec<u32>,
}

impl StepModel for TapeStepper<'_> {
    type State = DecoderState;

    fn log_probs(&self, s: &DecoderState) -> Vec<f64> {
        mask_log_probs(self.tape.value(s.log_probs).data(), &self.mask)
    }

    fn advance(&mut self, s: &DecoderState, token: u32) -> Result<DecoderState> {
        self.dec.advance(self.tape, s.h, token)
    }
}

fn run<M: StepModel>(m: &mut M, start: M::State, cfg: &GenConfig, rng: &mut RngStream) -> Result<Hypothesis> {
    match cfg.strategy {
        Strategy::Greedy => greedy_decode(m, start, cfg.max_tokens),
        Strategy::Beam => beam_decode(m, start, cfg.beam_width, cfg.max_tokens),
        Strategy::Sample => sample_decode(m, start, cfg.temperature, cfg.max_tokens, rng),
    }
}

/// The coarse stage of an MrRNN response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseOutput {
    /// Coarse ids ending in `<eou>`.
    pub ids: Vec<u32>,
    pub sequence: CoarseSequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    /// Token ids ending in `<eou>`.
    pub tokens: Vec<u32>,
    pub text: String,
    pub score: f64,
    pub coarse: Option<CoarseOutput>,
}

/// Everything the model remembers about a dialogue so far.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextCache {
    /// Utterances consumed so far.
    pub consumed: usize,
    pub state: CacheState,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CacheState {
    /// The baseline re-reads its (windowed) token history.
    Tokens(Vec<Vec<u32>>),
    /// Context-RNN state; MrRNN also keeps its coarse context state.
    States { nl: Tensor, coarse: Option<Tensor> },
}

impl ContextCache {
    pub fn empty(ckpt: &Checkpoint) -> Self {
        let cfg = ckpt.model.config();
        let state = if cfg.kind.is_hierarchical() {
            CacheState::States {
                nl: Tensor::zeros(&[cfg.context_hidden]),
                coarse: cfg.kind.coarse_kind().map(|_| Tensor::zeros(&[cfg.context_hidden])),
            }
        } else {
            CacheState::Tokens(Vec::new())
        };
        ContextCache { consumed: 0, state }
    }

    /// One context update with the next utterance.
    pub fn push(&mut self, ckpt: &Checkpoint, raw: &str) -> Result<()> {
        let ids = ckpt.vocab.encode_utterance(raw).tokens;
        let turn = self.consumed;
        match &mut self.state {
            CacheState::Tokens(turns) => turns.push(ids),
            CacheState::States { nl, coarse } => {
                let mut tape = Tape::new();
                let (_, bound) = ckpt.model.bind(&mut tape)?;
                let h = bound.nl().ok_or_else(|| Error::Invalid("model has no context RNN".into()))?;
                let c = tape.leaf(nl.clone());
                let e = h.encode(&mut tape, &ids)?;
                let c = h.context_step(&mut tape, c, e)?;
                *nl = tape.value(c).clone();
                if let (Some(cc), Bound::Mrrnn { coarse: ch, .. }) = (coarse.as_mut(), &bound) {
                    let spec = ckpt.coarse.as_ref().ok_or_else(|| Error::Invalid("checkpoint lacks coarse data".into()))?;
                    let c = tape.leaf(cc.clone());
                    let e = ch.encode(&mut tape, &spec.encode_text(raw, turn))?;
                    let c = ch.context_step(&mut tape, c, e)?;
                    *cc = tape.value(c).clone();
                }
            }
        }
        self.consumed += 1;
        Ok(())
    }

    pub fn from_turns(ckpt: &Checkpoint, turns: &[String]) -> Result<Self> {
        let mut cache = Self::empty(ckpt);
        for t in turns {
            cache.push(ckpt, t)?;
        }
        Ok(cache)
    }
}

/// Generates the next turn after `context`. The random stream is derived
/// from `cfg.seed` and the context length, so a chat session and a
/// from-scratch call agree.
pub fn respond(ckpt: &Checkpoint, context: &[String], cfg: &GenConfig) -> Result<Response> {
    let cache = ContextCache::from_turns(ckpt, context)?;
    generate(ckpt, &cache, cfg, &mut RngStream::derive(cfg.seed, context.len() as u64), None)
}

/// Two-stage MrRNN response with an optional forced coarse sequence (ids
/// ending in `<eou>`).
pub fn mrrnn_respond(
    ckpt: &Checkpoint,
    context: &[String],
    cfg: &GenConfig,
    forced_coarse: Option<&[u32]>,
) -> Result<Response> {
    if ckpt.model.kind().coarse_kind().is_none() {
        return Err(Error::Invalid(format!("{} has no coarse stage", ckpt.model.kind())));
    }
    let cache = ContextCache::from_turns(ckpt, context)?;
    generate(ckpt, &cache, cfg, &mut RngStream::derive(cfg.seed, context.len() as u64), forced_coarse)
}

/// Log-probability of `target` (ids ending in `<eou>`) as the next turn,
/// without masking. MrRNN uses `forced_coarse` when given and otherwise
/// decodes its coarse stage per `cfg`.
pub fn score_continuation(
    ckpt: &Checkpoint,
    context: &[String],
    target: &[u32],
    cfg: &GenConfig,
    forced_coarse: Option<&[u32]>,
) -> Result<f64> {
    let cache = ContextCache::from_turns(ckpt, context)?;
    let mut rng = RngStream::derive(cfg.seed, context.len() as u64);
    let mut tape = Tape::new();
    let (dec, mut state, _) = start_decoder(ckpt, &cache, cfg, &mut rng, forced_coarse, &mut tape)?;
    let mut score = 0.0;
    for (i, &t) in target.iter().enumerate() {
        score += tape.value(state.log_probs).data()[t as usize];
        if i + 1 < target.len() {
            state = dec.advance(&mut tape, state.h, t)?;
        }
    }
    Ok(score)
}

pub fn generate(
    ckpt: &Checkpoint,
    cache: &ContextCache,
    cfg: &GenConfig,
    rng: &mut RngStream,
    forced_coarse: Option<&[u32]>,
) -> Result<Response> {
    cfg.validate()?;
    let mut tape = Tape::new();
    let (dec, start, coarse) = start_decoder(ckpt, cache, cfg, rng, forced_coarse, &mut tape)?;
    let mut stepper = TapeStepper { tape: &mut tape, dec, mask: cfg.mask() };
    let hyp = run(&mut stepper, start, cfg, rng)?;
    Ok(Response { text: ckpt.vocab.detokenize(&hyp.tokens), tokens: hyp.tokens, score: hyp.score, coarse })
}

/// The word decoder for the next turn, primed and ready to emit.
fn start_decoder(
    ckpt: &Checkpoint,
    cache: &ContextCache,
    cfg: &GenConfig,
    rng: &mut RngStream,
    forced_coarse: Option<&[u32]>,
    tape: &mut Tape,
) -> Result<(StepDecoder, DecoderState, Option<CoarseOutput>)> {
    let mcfg = ckpt.model.config();
    let (_, bound) = ckpt.model.bind(tape)?;
    let mut coarse_out = None;
    let (dec, start) = match (&bound, &cache.state) {
        (Bound::Baseline { emb, gru, output }, CacheState::Tokens(turns)) => {
            let ctx = baseline_context(turns, mcfg.baseline_window);
            let h = crate::models::baseline_read(tape, *emb, gru, &ctx)?;
            let dec = StepDecoder::unconditioned(*emb, gru.clone(), *output);
            let s = dec.state_at(tape, h)?;
            (dec, s)
        }
        (Bound::Hred { nl }, CacheState::States { nl: c, .. }) => {
            let c = tape.leaf(c.clone());
            nl.decoder(tape, c)?
        }
        (Bound::Vhred { nl, prior, .. }, CacheState::States { nl: c, .. }) => {
            let c = tape.leaf(c.clone());
            let p = prior.forward(tape, c)?.value(tape);
            let z = match cfg.latent {
                LatentChoice::Sample => crate::models::sample_latent(&p, &rng.normals(p.dim()))?,
                LatentChoice::Mean => p.mean.clone(),
            };
            let z = tape.leaf(Tensor::vector(z));
            let cond = tape.concat(&[c, z])?;
            nl.decoder(tape, cond)?
        }
        (Bound::Mrrnn { coarse, coarse_encoder, coarse_emb, nl }, CacheState::States { nl: c, coarse: Some(cc) }) => {
            let spec = ckpt.coarse.as_ref().ok_or_else(|| Error::Invalid("checkpoint lacks coarse data".into()))?;
            let ids = match forced_coarse {
                Some(ids) => ids.to_vec(),
                None => {
                    let cc = tape.leaf(cc.clone());
                    let (cdec, cs) = coarse.decoder(tape, cc)?;
                    let mut stepper = TapeStepper { tape: &mut *tape, dec: cdec, mask: cfg.mask() };
                    run(&mut stepper, cs, cfg, rng)?.tokens
                }
            };
            let words = spec.vocab.decode(ids.strip_suffix(&[EOU]).unwrap_or(&ids));
            let tokens = if words.is_empty() { vec![NOCOARSE.to_string()] } else { words };
            let summary = crate::models::encode_coarse_target(tape, coarse_encoder, *coarse_emb, &ids)?;
            coarse_out = Some(CoarseOutput {
                ids,
                sequence: CoarseSequence { kind: spec.kind, tokens, source_turn: cache.consumed },
            });
            let c = tape.leaf(c.clone());
            let cond = tape.concat(&[c, summary])?;
            nl.decoder(tape, cond)?
        }
        _ => return Err(Error::Invalid("context cache does not match the model".into())),
    };
    Ok((dec, start, coarse_out))
}

#[cfg(test)]
mod tests;
