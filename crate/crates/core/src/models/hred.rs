use crate::corpus::SOT;
use crate::error::Result;
use crate::numerics::{NodeId, RngStream, Tape};
use crate::params::{Binding, ParamSet};
use crate::rnn::{Embedding, EmbeddingNodes, GruCondition, GruLayer, GruNodes, Linear, LinearNodes};

/// Sizes shared by every hierarchical stack.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StackDims {
    pub vocab: usize,
    pub embed: usize,
    pub encoder: usize,
    pub context: usize,
    pub decoder: usize,
}

/// Encoder, context and decoder RNNs over one token stream.
#[derive(Clone, Debug)]
pub(crate) struct HredLayers {
    emb: Embedding,
    dec_emb: Option<Embedding>,
    encoder: GruLayer,
    context: GruLayer,
    dec_init: Linear,
    decoder: GruLayer,
    output: Linear,
}

impl HredLayers {
    /// `cond` is the size of the decoder's conditioning vector (the context
    /// state plus whatever the model appends to it).
    pub fn new(prefix: &str, d: StackDims, cond: usize, share_embeddings: bool) -> Self {
        Self {
            emb: Embedding::new(format!("{prefix}.emb"), d.vocab, d.embed),
            dec_emb: (!share_embeddings).then(|| Embedding::new(format!("{prefix}.dec_emb"), d.vocab, d.embed)),
            encoder: GruLayer::new(format!("{prefix}.encoder"), d.embed, d.encoder),
            context: GruLayer::new(format!("{prefix}.context"), d.encoder, d.context),
            dec_init: Linear::new(format!("{prefix}.dec_init"), cond, d.decoder),
            decoder: GruLayer::conditioned(format!("{prefix}.decoder"), d.embed, cond, d.decoder),
            output: Linear::new(format!("{prefix}.output"), d.decoder, d.vocab),
        }
    }

    pub fn init(&self, p: &mut ParamSet, rng: &mut RngStream) -> Result<()> {
        self.emb.init(p, rng)?;
        if let Some(e) = &self.dec_emb {
            e.init(p, rng)?;
        }
        self.encoder.init(p, rng)?;
        self.context.init(p, rng)?;
        self.dec_init.init(p, rng)?;
        self.decoder.init(p, rng)?;
        self.output.init(p, rng)
    }

    pub fn bind(&self, b: &Binding) -> Result<HredNodes> {
        let emb = self.emb.bind(b)?;
        Ok(HredNodes {
            emb,
            dec_emb: match &self.dec_emb {
                Some(e) => e.bind(b)?,
                None => emb,
            },
            encoder: self.encoder.bind(b)?,
            context: self.context.bind(b)?,
            dec_init: self.dec_init.bind(b)?,
            decoder: self.decoder.bind(b)?,
            output: self.output.bind(b)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct HredNodes {
    emb: EmbeddingNodes,
    dec_emb: EmbeddingNodes,
    encoder: GruNodes,
    context: GruNodes,
    dec_init: LinearNodes,
    decoder: GruNodes,
    output: LinearNodes,
}

impl HredNodes {
    /// Final encoder state after reading `tokens`.
    pub fn encode(&self, tape: &mut Tape, tokens: &[u32]) -> Result<NodeId> {
        let mut h = self.encoder.zero_state(tape);
        for &t in tokens {
            let x = self.emb.lookup(tape, t)?;
            h = self.encoder.step(tape, x, h)?;
        }
        Ok(h)
    }

    pub fn context_start(&self, tape: &mut Tape) -> NodeId {
        self.context.zero_state(tape)
    }

    /// One context update per consumed utterance.
    pub fn context_step(&self, tape: &mut Tape, c: NodeId, encoding: NodeId) -> Result<NodeId> {
        self.context.step(tape, encoding, c)
    }

    /// Context states `c_1..c_T`, one per utterance.
    pub fn context_states(&self, tape: &mut Tape, turns: &[Vec<u32>]) -> Result<Vec<NodeId>> {
        let mut c = self.context_start(tape);
        let mut out = Vec::with_capacity(turns.len());
        for t in turns {
            let e = self.encode(tape, t)?;
            c = self.context_step(tape, c, e)?;
            out.push(c);
        }
        Ok(out)
    }

    /// Decoder conditioned on `cond`, primed with `<sot>`.
    pub fn decoder(&self, tape: &mut Tape, cond: NodeId) -> Result<(StepDecoder, DecoderState)> {
        let pre = self.dec_init.forward(tape, cond)?;
        let h0 = tape.tanh(pre)?;
        let dec = StepDecoder {
            emb: self.dec_emb,
            gru: self.decoder.clone(),
            output: self.output,
            cond: Some(self.decoder.condition(tape, cond)?),
        };
        let state = dec.advance(tape, h0, SOT)?;
        Ok((dec, state))
    }
}

/// Decoder hidden state and the log-distribution it assigns to the next token.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: NodeId,
    pub log_probs: NodeId,
}

/// Token-at-a-time decoder used both for teacher forcing and generation.
#[derive(Clone, Debug)]
pub struct StepDecoder {
    emb: EmbeddingNodes,
    gru: GruNodes,
    output: LinearNodes,
    cond: Option<GruCondition>,
}

impl StepDecoder {
    pub fn unconditioned(emb: EmbeddingNodes, gru: GruNodes, output: LinearNodes) -> Self {
        Self { emb, gru, output, cond: None }
    }

    pub fn state_at(&self, tape: &mut Tape, h: NodeId) -> Result<DecoderState> {
        Ok(DecoderState { h, log_probs: self.output.log_probs(tape, h)? })
    }

    /// Feeds `token` and returns the next state.
    pub fn advance(&self, tape: &mut Tape, h: NodeId, token: u32) -> Result<DecoderState> {
        let x = self.emb.lookup(tape, token)?;
        let h = match &self.cond {
            Some(c) => self.gru.step_conditioned(tape, x, h, c)?,
            None => self.gru.step(tape, x, h)?,
        };
        self.state_at(tape, h)
    }

    /// Log-distributions for each position of `target` under teacher forcing.
    pub fn teacher_force(&self, tape: &mut Tape, start: DecoderState, target: &[u32]) -> Result<Vec<NodeId>> {
        let mut out = Vec::with_capacity(target.len());
        let mut state = start;
        for (i, &tok) in target.iter().enumerate() {
            out.push(state.log_probs);
            if i + 1 < target.len() {
                state = self.advance(tape, state.h, tok)?;
            }
        }
        Ok(out)
    }
}
