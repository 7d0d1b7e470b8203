//! The four response models: a single-GRU language-model baseline, HRED,
//! VHRED (HRED plus a per-turn Gaussian latent) and MrRNN (a coarse-token
//! HRED whose predicted sequence conditions a natural-language HRED).

mod hred;
mod latent;

use serde::{Deserialize, Serialize};

use crate::coarse::{extract, CoarseKind, CoarseLexicons};
use crate::corpus::{EncodedDialogue, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{NodeId, RngStream, Tape};
use crate::params::{Binding, ParamSet};
use crate::rnn::{Embedding, EmbeddingNodes, GruLayer, GruNodes, Linear, LinearNodes};

pub use hred::{DecoderState, HredNodes, StepDecoder};
use hred::{HredLayers, StackDims};
pub use latent::{
    kl_gaussian, sample_latent, GaussianHead, GaussianHeadNodes, GaussianLatent, LatentNodes, VARIANCE_FLOOR,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Baseline,
    Hred,
    Vhred,
    MrrnnNoun,
    MrrnnActEnt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::Baseline, ModelKind::Hred, ModelKind::Vhred, ModelKind::MrrnnNoun, ModelKind::MrrnnActEnt];

    pub fn coarse_kind(self) -> Option<CoarseKind> {
        match self {
            ModelKind::MrrnnNoun => Some(CoarseKind::Noun),
            ModelKind::MrrnnActEnt => Some(CoarseKind::ActivityEntity),
            _ => None,
        }
    }

    pub fn is_hierarchical(self) -> bool {
        self != ModelKind::Baseline
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Hred => "hred",
            ModelKind::Vhred => "vhred",
            ModelKind::MrrnnNoun => "mrrnn-noun",
            ModelKind::MrrnnActEnt => "mrrnn-act-ent",
        }
    }

    /// Row label for reports.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Baseline => "LSTM-style baseline",
            ModelKind::Hred => "HRED",
            ModelKind::Vhred => "VHRED",
            ModelKind::MrrnnNoun => "MrRNN Noun",
            ModelKind::MrrnnActEnt => "MrRNN Act.-Ent.",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown model kind {s:?}")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub vocab_size: usize,
    /// Zero unless the model is an MrRNN.
    pub coarse_vocab_size: usize,
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub context_hidden: usize,
    pub decoder_hidden: usize,
    pub latent_dim: usize,
    pub share_embeddings: bool,
    /// Context tokens the baseline keeps (most recent).
    pub baseline_window: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, vocab_size: usize, coarse_vocab_size: usize) -> Self {
        Self {
            kind,
            vocab_size,
            coarse_vocab_size,
            embed_dim: 32,
            encoder_hidden: 64,
            context_hidden: 64,
            decoder_hidden: 64,
            latent_dim: 16,
            share_embeddings: true,
            baseline_window: 128,
        }
    }

    /// Tiny dimensions for gradient checks.
    pub fn toy(kind: ModelKind, vocab_size: usize, coarse_vocab_size: usize) -> Self {
        Self {
            embed_dim: 6,
            encoder_hidden: 8,
            context_hidden: 8,
            decoder_hidden: 8,
            latent_dim: 4,
            ..Self::new(kind, vocab_size, coarse_vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.vocab_size, self.embed_dim, self.encoder_hidden, self.context_hidden, self.decoder_hidden];
        if dims.contains(&0) {
            return Err(Error::Invalid("model dimensions must be positive".into()));
        }
        if self.kind == ModelKind::Vhred && self.latent_dim == 0 {
            return Err(Error::Invalid("VHRED needs a positive latent dimension".into()));
        }
        if self.kind.coarse_kind().is_some() && self.coarse_vocab_size == 0 {
            return Err(Error::Invalid("MrRNN needs a coarse vocabulary".into()));
        }
        if self.kind == ModelKind::Baseline && self.baseline_window == 0 {
            return Err(Error::Invalid("baseline window must be positive".into()));
        }
        Ok(())
    }

    fn stack(&self, vocab: usize) -> StackDims {
        StackDims {
            vocab,
            embed: self.embed_dim,
            encoder: self.encoder_hidden,
            context: self.context_hidden,
            decoder: self.decoder_hidden,
        }
    }
}

#[derive(Clone, Debug)]
enum Layers {
    Baseline { emb: Embedding, gru: GruLayer, output: Linear },
    Hred { nl: HredLayers },
    Vhred { nl: HredLayers, prior: GaussianHead, posterior: GaussianHead },
    Mrrnn { coarse: HredLayers, coarse_encoder: GruLayer, nl: HredLayers },
}

impl Layers {
    fn new(c: &ModelConfig) -> Self {
        let share = c.share_embeddings;
        match c.kind {
            ModelKind::Baseline => Layers::Baseline {
                emb: Embedding::new("lm.emb", c.vocab_size, c.embed_dim),
                gru: GruLayer::new("lm.gru", c.embed_dim, c.decoder_hidden),
                output: Linear::new("lm.output", c.decoder_hidden, c.vocab_size),
            },
            ModelKind::Hred => Layers::Hred { nl: HredLayers::new("nl", c.stack(c.vocab_size), c.context_hidden, share) },
            ModelKind::Vhred => Layers::Vhred {
                nl: HredLayers::new("nl", c.stack(c.vocab_size), c.context_hidden + c.latent_dim, share),
                prior: GaussianHead::new("prior", c.context_hidden, c.context_hidden, c.latent_dim),
                posterior: GaussianHead::new(
                    "posterior",
                    c.context_hidden + c.encoder_hidden,
                    c.context_hidden,
                    c.latent_dim,
                ),
            },
            ModelKind::MrrnnNoun | ModelKind::MrrnnActEnt => Layers::Mrrnn {
                coarse: HredLayers::new("coarse", c.stack(c.coarse_vocab_size), c.context_hidden, share),
                coarse_encoder: GruLayer::new("coarse.target_encoder", c.embed_dim, c.encoder_hidden),
                nl: HredLayers::new("nl", c.stack(c.vocab_size), c.context_hidden + c.encoder_hidden, share),
            },
        }
    }

    fn init(&self, p: &mut ParamSet, rng: &mut RngStream) -> Result<()> {
        match self {
            Layers::Baseline { emb, gru, output } => {
                emb.init(p, rng)?;
                gru.init(p, rng)?;
                output.init(p, rng)
            }
            Layers::Hred { nl } => nl.init(p, rng),
            Layers::Vhred { nl, prior, posterior } => {
                nl.init(p, rng)?;
                prior.init(p, rng)?;
                posterior.init(p, rng)
            }
            Layers::Mrrnn { coarse, coarse_encoder, nl } => {
                coarse.init(p, rng)?;
                coarse_encoder.init(p, rng)?;
                nl.init(p, rng)
            }
        }
    }
}

/// A model: its configuration and parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    layers: Layers,
    pub params: ParamSet,
}

/// Parameters of one model bound onto a tape.
#[derive(Clone, Debug)]
pub enum Bound {
    Baseline { emb: EmbeddingNodes, gru: GruNodes, output: LinearNodes },
    Hred { nl: HredNodes },
    Vhred { nl: HredNodes, prior: GaussianHeadNodes, posterior: GaussianHeadNodes },
    Mrrnn { coarse: HredNodes, coarse_encoder: GruNodes, coarse_emb: EmbeddingNodes, nl: HredNodes },
}

impl Model {
    /// Fresh model: weights uniform in ±0.08, biases zero, drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layers = Layers::new(&config);
        let mut params = ParamSet::new();
        layers.init(&mut params, &mut RngStream::new(seed))?;
        Ok(Self { config, layers, params })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let template = Model::new(config.clone(), 0)?;
        let expected: Vec<(&str, &[usize])> = template.params.iter().map(|(k, v)| (k, v.shape())).collect();
        let got: Vec<(&str, &[usize])> = params.iter().map(|(k, v)| (k, v.shape())).collect();
        if expected != got {
            return Err(Error::Checkpoint("parameter names or shapes do not match the model configuration".into()));
        }
        Ok(Self { config, layers: template.layers, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<(Binding, Bound)> {
        let b = self.params.bind(tape);
        let bound = self.bind_with(&b)?;
        Ok((b, bound))
    }

    /// Builds the layer view over an existing binding.
    pub fn bind_with(&self, b: &Binding) -> Result<Bound> {
        let b = b.clone();
        let bound = match &self.layers {
            Layers::Baseline { emb, gru, output } => {
                Bound::Baseline { emb: emb.bind(&b)?, gru: gru.bind(&b)?, output: output.bind(&b)? }
            }
            Layers::Hred { nl } => Bound::Hred { nl: nl.bind(&b)? },
            Layers::Vhred { nl, prior, posterior } => {
                Bound::Vhred { nl: nl.bind(&b)?, prior: prior.bind(&b)?, posterior: posterior.bind(&b)? }
            }
            Layers::Mrrnn { coarse, coarse_encoder, nl } => Bound::Mrrnn {
                coarse: coarse.bind(&b)?,
                coarse_encoder: coarse_encoder.bind(&b)?,
                coarse_emb: Embedding::new("coarse.emb", self.config.coarse_vocab_size, self.config.embed_dim)
                    .bind(&b)?,
                nl: nl.bind(&b)?,
            },
        };
        Ok(bound)
    }

    /// Builds the training/evaluation view of a dialogue for this model.
    pub fn example(&self, d: &EncodedDialogue, coarse: Option<&CoarseSpec>) -> Result<Example> {
        Example::new(d, self.kind().coarse_kind().map(|_| coarse).flatten())
    }
}

/// What an MrRNN needs to derive coarse sequences from text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseSpec {
    pub kind: CoarseKind,
    pub lexicons: CoarseLexicons,
    pub vocab: Vocabulary,
}

impl CoarseSpec {
    /// Coarse ids (ending in `<eou>`) for one utterance's text.
    pub fn encode_text(&self, raw: &str, turn: usize) -> Vec<u32> {
        extract(self.kind, &crate::corpus::tokenize(raw), &self.lexicons, turn).encode(&self.vocab)
    }
}

/// A dialogue as the models consume it: per-turn token ids ending in
/// `<eou>`, plus coarse ids per turn for MrRNN.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub turns: Vec<Vec<u32>>,
    pub coarse: Option<Vec<Vec<u32>>>,
}

impl Example {
    pub fn new(d: &EncodedDialogue, coarse: Option<&CoarseSpec>) -> Result<Self> {
        if d.turns.len() < 2 {
            return Err(Error::Invalid(format!("dialogue {} has fewer than 2 turns", d.id)));
        }
        Ok(Self {
            turns: d.turns.iter().map(|u| u.tokens.clone()).collect(),
            coarse: coarse.map(|c| d.turns.iter().enumerate().map(|(i, u)| c.encode_text(&u.raw, i)).collect()),
        })
    }

    pub fn from_ids(turns: Vec<Vec<u32>>, coarse: Option<Vec<Vec<u32>>>) -> Self {
        Self { turns, coarse }
    }
}

/// Teacher-forced outputs for one target turn.
#[derive(Clone, Debug)]
pub struct TurnOutput {
    pub turn: usize,
    pub log_probs: Vec<NodeId>,
    pub targets: Vec<u32>,
    /// `KL(posterior ‖ prior)` for VHRED.
    pub kl: Option<NodeId>,
    pub coarse_log_probs: Vec<NodeId>,
    pub coarse_targets: Vec<u32>,
}

/// Where VHRED draws its latent sample from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentMode {
    Posterior,
    Prior,
}

/// Which turns of an [`Example`] to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Targets {
    /// Every turn after the first.
    All,
    /// Only the final turn.
    Last,
}

impl Bound {
    pub fn nl(&self) -> Option<&HredNodes> {
        match self {
            Bound::Baseline { .. } => None,
            Bound::Hred { nl } | Bound::Vhred { nl, .. } | Bound::Mrrnn { nl, .. } => Some(nl),
        }
    }

    /// Teacher-forced forward over `ex`. `noise[t]` is the standard-normal
    /// draw for turn `t`'s latent (VHRED only).
    pub fn forward(
        &self,
        tape: &mut Tape,
        config: &ModelConfig,
        ex: &Example,
        targets: Targets,
        noise: &[Vec<f64>],
        mode: LatentMode,
    ) -> Result<Vec<TurnOutput>> {
        let n = ex.turns.len();
        if n < 2 {
            return Err(Error::Invalid("need a nonempty prefix and a target".into()));
        }
        let first = match targets {
            Targets::All => 1,
            Targets::Last => n - 1,
        };
        match self {
            Bound::Baseline { emb, gru, output } => {
                baseline_forward(tape, *emb, gru, *output, config.baseline_window, &ex.turns, first)
            }
            Bound::Hred { nl } => {
                let encs = encode_all(tape, nl, &ex.turns[..n - 1])?;
                let ctx = contexts(tape, nl, &encs)?;
                (first..n)
                    .map(|t| {
                        let (dec, s0) = nl.decoder(tape, ctx[t - 1])?;
                        let lp = dec.teacher_force(tape, s0, &ex.turns[t])?;
                        Ok(TurnOutput::plain(t, lp, &ex.turns[t]))
                    })
                    .collect()
            }
            Bound::Vhred { nl, prior, posterior } => {
                let encs = encode_all(tape, nl, &ex.turns)?;
                let ctx = contexts(tape, nl, &encs[..n - 1])?;
                (first..n)
                    .map(|t| {
                        let c = ctx[t - 1];
                        let eps = noise.get(t).ok_or_else(|| Error::Invalid(format!("no latent noise for turn {t}")))?;
                        let p = prior.forward(tape, c)?;
                        let q_in = tape.concat(&[c, encs[t]])?;
                        let q = posterior.forward(tape, q_in)?;
                        let z = match mode {
                            LatentMode::Posterior => q.sample(tape, eps)?,
                            LatentMode::Prior => p.sample(tape, eps)?,
                        };
                        let kl = q.kl(tape, &p)?;
                        let cond = tape.concat(&[c, z])?;
                        let (dec, s0) = nl.decoder(tape, cond)?;
                        let lp = dec.teacher_force(tape, s0, &ex.turns[t])?;
                        Ok(TurnOutput { kl: Some(kl), ..TurnOutput::plain(t, lp, &ex.turns[t]) })
                    })
                    .collect()
            }
            Bound::Mrrnn { coarse, coarse_encoder, coarse_emb, nl } => {
                let cseq = ex.coarse.as_ref().ok_or_else(|| Error::Invalid("MrRNN needs coarse targets".into()))?;
                if cseq.len() != n {
                    return Err(Error::Invalid("coarse sequence count differs from turn count".into()));
                }
                let c_encs = encode_all(tape, coarse, &cseq[..n - 1])?;
                let c_ctx = contexts(tape, coarse, &c_encs)?;
                let encs = encode_all(tape, nl, &ex.turns[..n - 1])?;
                let ctx = contexts(tape, nl, &encs)?;
                (first..n)
                    .map(|t| {
                        let (cdec, cs0) = coarse.decoder(tape, c_ctx[t - 1])?;
                        let clp = cdec.teacher_force(tape, cs0, &cseq[t])?;
                        let summary = encode_coarse_target(tape, coarse_encoder, *coarse_emb, &cseq[t])?;
                        let cond = tape.concat(&[ctx[t - 1], summary])?;
                        let (dec, s0) = nl.decoder(tape, cond)?;
                        let lp = dec.teacher_force(tape, s0, &ex.turns[t])?;
                        Ok(TurnOutput {
                            coarse_log_probs: clp,
                            coarse_targets: cseq[t].clone(),
                            ..TurnOutput::plain(t, lp, &ex.turns[t])
                        })
                    })
                    .collect()
            }
        }
    }

    /// Context-RNN states for `turns` (coarse and NL for MrRNN).
    pub fn context_states(&self, tape: &mut Tape, ex: &Example) -> Result<ContextStates> {
        match self {
            Bound::Baseline { .. } => Err(Error::Invalid("the baseline has no context RNN".into())),
            Bound::Hred { nl } | Bound::Vhred { nl, .. } => {
                Ok(ContextStates { nl: nl.context_states(tape, &ex.turns)?, coarse: Vec::new() })
            }
            Bound::Mrrnn { coarse, nl, .. } => {
                let cseq = ex.coarse.as_ref().ok_or_else(|| Error::Invalid("MrRNN needs coarse sequences".into()))?;
                Ok(ContextStates { nl: nl.context_states(tape, &ex.turns)?, coarse: coarse.context_states(tape, cseq)? })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ContextStates {
    pub nl: Vec<NodeId>,
    pub coarse: Vec<NodeId>,
}

impl TurnOutput {
    fn plain(turn: usize, log_probs: Vec<NodeId>, targets: &[u32]) -> Self {
        Self {
            turn,
            log_probs,
            targets: targets.to_vec(),
            kl: None,
            coarse_log_probs: Vec::new(),
            coarse_targets: Vec::new(),
        }
    }
}

fn encode_all(tape: &mut Tape, h: &HredNodes, turns: &[Vec<u32>]) -> Result<Vec<NodeId>> {
    turns.iter().map(|t| h.encode(tape, t)).collect()
}

/// `ctx[i]` is the context state after consuming utterance `i`.
fn contexts(tape: &mut Tape, h: &HredNodes, encs: &[NodeId]) -> Result<Vec<NodeId>> {
    let mut c = h.context_start(tape);
    let mut out = Vec::with_capacity(encs.len());
    for &e in encs {
        c = h.context_step(tape, c, e)?;
        out.push(c);
    }
    Ok(out)
}

/// Final state of the coarse-target encoder over one coarse sequence.
pub fn encode_coarse_target(
    tape: &mut Tape,
    gru: &GruNodes,
    emb: EmbeddingNodes,
    coarse: &[u32],
) -> Result<NodeId> {
    let mut h = gru.zero_state(tape);
    for &t in coarse {
        let x = emb.lookup(tape, t)?;
        h = gru.step(tape, x, h)?;
    }
    Ok(h)
}

/// Most recent `window` tokens of the concatenated turns.
pub fn baseline_context(turns: &[Vec<u32>], window: usize) -> Vec<u32> {
    let flat: Vec<u32> = turns.iter().flatten().copied().collect();
    flat[flat.len().saturating_sub(window)..].to_vec()
}

/// GRU state after reading `context` from zero.
pub fn baseline_read(tape: &mut Tape, emb: EmbeddingNodes, gru: &GruNodes, context: &[u32]) -> Result<NodeId> {
    let mut h = gru.zero_state(tape);
    for &t in context {
        let x = emb.lookup(tape, t)?;
        h = gru.step(tape, x, h)?;
    }
    Ok(h)
}

fn baseline_forward(
    tape: &mut Tape,
    emb: EmbeddingNodes,
    gru: &GruNodes,
    output: LinearNodes,
    window: usize,
    turns: &[Vec<u32>],
    first: usize,
) -> Result<Vec<TurnOutput>> {
    let dec = StepDecoder::unconditioned(emb, gru.clone(), output);
    let prefix_len: usize = turns[..turns.len() - 1].iter().map(Vec::len).sum();
    let mut out = Vec::new();
    if prefix_len <= window && first == 1 {
        // No context is ever truncated: one pass over the dialogue serves
        // every target turn.
        let mut h = gru.zero_state(tape);
        let read = |tape: &mut Tape, h: &mut NodeId, toks: &[u32]| -> Result<()> {
            for &t in toks {
                let x = emb.lookup(tape, t)?;
                *h = gru.step(tape, x, *h)?;
            }
            Ok(())
        };
        read(tape, &mut h, &turns[0])?;
        for t in 1..turns.len() {
            let s0 = dec.state_at(tape, h)?;
            let lp = dec.teacher_force(tape, s0, &turns[t])?;
            out.push(TurnOutput::plain(t, lp, &turns[t]));
            if t + 1 < turns.len() {
                read(tape, &mut h, &turns[t])?;
            }
        }
        return Ok(out);
    }
    for t in first..turns.len() {
        let ctx = baseline_context(&turns[..t], window);
        let h = baseline_read(tape, emb, gru, &ctx)?;
        let s0 = dec.state_at(tape, h)?;
        let lp = dec.teacher_force(tape, s0, &turns[t])?;
        out.push(TurnOutput::plain(t, lp, &turns[t]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradient_check;

    fn toy_example(kind: ModelKind) -> Example {
        let turns = vec![vec![4, 5, 2], vec![6, 7, 8, 2], vec![9, 2], vec![10, 11, 4, 2]];
        let coarse = kind.coarse_kind().map(|_| vec![vec![4, 2], vec![5, 2], vec![2], vec![6, 7, 2]]);
        Example::from_ids(turns, coarse)
    }

    fn toy_model(kind: ModelKind) -> Model {
        let coarse = if kind.coarse_kind().is_some() { 9 } else { 0 };
        Model::new(ModelConfig::toy(kind, 12, coarse), 11).unwrap()
    }

    fn noise(config: &ModelConfig, turns: usize) -> Vec<Vec<f64>> {
        let mut rng = RngStream::new(5);
        (0..turns).map(|_| rng.normals(config.latent_dim)).collect()
    }

    fn total_nll(tape: &mut Tape, outs: &[TurnOutput]) -> Result<NodeId> {
        let mut terms = Vec::new();
        for o in outs {
            for (&lp, &t) in o.log_probs.iter().zip(&o.targets).chain(o.coarse_log_probs.iter().zip(&o.coarse_targets)) {
                terms.push(tape.pick(lp, t as usize)?);
            }
            if let Some(kl) = o.kl {
                terms.push(tape.scale(kl, -1.0)?);
            }
        }
        let s = tape.add_all(&terms)?;
        tape.scale(s, -1.0)
    }

    fn loss_value(m: &Model, ex: &Example, targets: Targets, mode: LatentMode) -> f64 {
        let mut tape = Tape::new();
        let (_, bound) = m.bind(&mut tape).unwrap();
        let outs = bound.forward(&mut tape, m.config(), ex, targets, &noise(m.config(), ex.turns.len()), mode).unwrap();
        let root = total_nll(&mut tape, &outs).unwrap();
        tape.value(root).item()
    }

    #[test]
    fn zero_parameters_give_uniform_predictions() {
        for kind in ModelKind::ALL {
            let mut m = toy_model(kind);
            m.params = m.params.zeros_like();
            let ex = toy_example(kind);
            let mut tape = Tape::new();
            let (_, bound) = m.bind(&mut tape).unwrap();
            let outs = bound
                .forward(&mut tape, m.config(), &ex, Targets::All, &noise(m.config(), 4), LatentMode::Posterior)
                .unwrap();
            assert_eq!(outs.len(), 3, "{kind}");
            for o in &outs {
                assert_eq!(o.log_probs.len(), o.targets.len());
                for &lp in &o.log_probs {
                    for &v in tape.value(lp).data() {
                        assert!((v + 12f64.ln()).abs() < 1e-12, "{kind}: {v}");
                    }
                }
                for &lp in &o.coarse_log_probs {
                    for &v in tape.value(lp).data() {
                        assert!((v + 9f64.ln()).abs() < 1e-12);
                    }
                }
                if let Some(kl) = o.kl {
                    assert!(tape.value(kl).item().abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in ModelKind::ALL {
            let m = toy_model(kind);
            let ex = toy_example(kind);
            let eps_noise = noise(m.config(), 4);
            let tensors: Vec<_> = m.params.iter().map(|(_, t)| t.clone()).collect();
            let worst = gradient_check(
                |tape, ids| {
                    let b = Binding::from_nodes(&m.params, ids)?;
                    let bound = m.bind_with(&b)?;
                    let outs = bound.forward(tape, m.config(), &ex, Targets::All, &eps_noise, LatentMode::Posterior)?;
                    total_nll(tape, &outs)
                },
                &tensors,
                1e-5,
            )
            .unwrap();
            assert!(worst < 1e-4, "{kind}: {worst}");
        }
    }

    #[test]
    fn baseline_single_pass_matches_windowed_reads() {
        let m = toy_model(ModelKind::Baseline);
        let ex = toy_example(ModelKind::Baseline);
        let all = loss_value(&m, &ex, Targets::All, LatentMode::Posterior);
        let by_turn: f64 = (2..=4)
            .map(|n| loss_value(&m, &Example::from_ids(ex.turns[..n].to_vec(), None), Targets::Last, LatentMode::Posterior))
            .sum();
        assert!((all - by_turn).abs() < 1e-9, "{all} vs {by_turn}");
    }

    #[test]
    fn baseline_window_truncates_context() {
        let mut cfg = ModelConfig::toy(ModelKind::Baseline, 12, 0);
        let full = Model::new(cfg.clone(), 3).unwrap();
        cfg.baseline_window = 2;
        let short = Model::from_params(cfg, full.params.clone()).unwrap();
        let ex = toy_example(ModelKind::Baseline);
        let a = loss_value(&full, &ex, Targets::Last, LatentMode::Posterior);
        let b = loss_value(&short, &ex, Targets::Last, LatentMode::Posterior);
        assert!((a - b).abs() > 1e-9);
        assert_eq!(baseline_context(&ex.turns[..2], 2), vec![8, 2]);
    }

    #[test]
    fn hred_last_target_equals_its_term_of_all_targets() {
        let m = toy_model(ModelKind::Hred);
        let ex = toy_example(ModelKind::Hred);
        let last = loss_value(&m, &ex, Targets::Last, LatentMode::Posterior);
        let shorter = Example::from_ids(ex.turns[..3].to_vec(), None);
        let all = loss_value(&m, &ex, Targets::All, LatentMode::Posterior);
        let all_short = loss_value(&m, &shorter, Targets::All, LatentMode::Posterior);
        assert!((all - all_short - last).abs() < 1e-9);
    }

    #[test]
    fn vhred_prior_and_posterior_modes_differ() {
        let m = toy_model(ModelKind::Vhred);
        let ex = toy_example(ModelKind::Vhred);
        let a = loss_value(&m, &ex, Targets::All, LatentMode::Posterior);
        let b = loss_value(&m, &ex, Targets::All, LatentMode::Prior);
        assert!(a.is_finite() && b.is_finite() && (a - b).abs() > 1e-12);
    }

    #[test]
    fn mrrnn_requires_coarse_sequences() {
        let m = toy_model(ModelKind::MrrnnNoun);
        let ex = toy_example(ModelKind::Hred);
        let mut tape = Tape::new();
        let (_, bound) = m.bind(&mut tape).unwrap();
        assert!(bound.forward(&mut tape, m.config(), &ex, Targets::All, &[], LatentMode::Posterior).is_err());
    }

    #[test]
    fn context_states_one_per_turn() {
        let m = toy_model(ModelKind::MrrnnActEnt);
        let ex = toy_example(ModelKind::MrrnnActEnt);
        let mut tape = Tape::new();
        let (_, bound) = m.bind(&mut tape).unwrap();
        let cs = bound.context_states(&mut tape, &ex).unwrap();
        assert_eq!((cs.nl.len(), cs.coarse.len()), (4, 4));
    }

    #[test]
    fn from_params_rejects_mismatched_shapes() {
        let m = toy_model(ModelKind::Hred);
        let other = ModelConfig { decoder_hidden: 9, ..m.config().clone() };
        assert!(Model::from_params(other, m.params.clone()).is_err());
        assert!("mrrnn-act-ent".parse::<ModelKind>().is_ok());
        assert!("lstm".parse::<ModelKind>().is_err());
    }
}
