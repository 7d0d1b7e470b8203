//! Objectives, optimizer, training loop and checkpoints.

mod adam;
mod checkpoint;
mod loss;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState};
pub use checkpoint::{stored_precision, Checkpoint, Manifest, TensorEntry, FORMAT_VERSION, MANIFEST_FILE, PAYLOAD_FILE};
pub use loss::{
    elbo_loss, kl_weight, mrrnn_loss, nll_loss, pair_loss, tape_nll, Elbo, JointLoss, Nll, PairLoss,
};

use crate::coarse::{coarse_vocab, CoarseLexicons};
use crate::corpus::{Dialogue, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{CoarseSpec, Example, LatentMode, Model, ModelConfig, ModelKind, Targets};
use crate::numerics::{RngStream, Tape};
use crate::params::ParamSet;

/// Stream key separating latent noise from every other use of the seed.
const NOISE_KEY: u64 = 0x6e6f_6973_6500_0000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    /// Dialogues per update.
    pub batch_size: usize,
    pub epochs: usize,
    /// Updates over which the KL weight rises linearly from 0 to 1.
    pub kl_anneal_steps: u64,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub vocab_max: usize,
    pub baseline_window: usize,
    pub share_embeddings: bool,
    /// Stop after this many updates even if epochs remain.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            model: ModelKind::Hred,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            clip_norm: 1.0,
            batch_size: 8,
            epochs: 1,
            kl_anneal_steps: 1000,
            seed: 1,
            embed_dim: 32,
            hidden_dim: 64,
            latent_dim: 16,
            vocab_max: 10_000,
            baseline_window: 128,
            share_embeddings: true,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Invalid(format!("clip norm must be > 0, got {}", self.clip_norm)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Invalid("Adam betas must lie in [0, 1) and eps must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn model_config(&self, vocab_size: usize, coarse_vocab_size: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            encoder_hidden: self.hidden_dim,
            context_hidden: self.hidden_dim,
            decoder_hidden: self.hidden_dim,
            latent_dim: self.latent_dim,
            share_embeddings: self.share_embeddings,
            baseline_window: self.baseline_window,
            ..ModelConfig::new(self.model, vocab_size, coarse_vocab_size)
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    /// Mean over pairs of the per-pair objective.
    pub loss: f64,
    /// Mean over pairs of the (unweighted) KL term.
    pub kl: f64,
    pub lambda: f64,
}

pub fn write_metrics(metrics: &[StepMetrics], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for m in metrics {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Vocabularies and model-ready examples for a corpus.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub coarse: Option<CoarseSpec>,
    pub examples: Vec<Example>,
}

pub fn prepare(config: &TrainConfig, corpus: &[Dialogue], lexicons: &CoarseLexicons) -> Result<Prepared> {
    for d in corpus {
        d.validate().map_err(|m| Error::Invalid(format!("dialogue {}: {m}", d.id)))?;
    }
    let vocab = Vocabulary::build(corpus, config.vocab_max)?;
    let coarse = config.model.coarse_kind().map(|kind| CoarseSpec {
        kind,
        lexicons: lexicons.clone(),
        vocab: coarse_vocab(corpus, lexicons, kind),
    });
    let examples = examples_for(&vocab, coarse.as_ref(), corpus)?;
    Ok(Prepared { vocab, coarse, examples })
}

pub fn examples_for(vocab: &Vocabulary, coarse: Option<&CoarseSpec>, corpus: &[Dialogue]) -> Result<Vec<Example>> {
    corpus.iter().map(|d| Example::new(&vocab.encode_dialogue(d), coarse)).collect()
}

/// Standard-normal latent noise per turn for one dialogue.
pub fn latent_noise(rng: &mut RngStream, turns: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..turns).map(|_| rng.normals(dim)).collect()
}

/// Summed objective, KL and pair count of one dialogue, with gradients.
struct DialogueGrad {
    loss: f64,
    kl: f64,
    pairs: usize,
    grads: ParamSet,
}

fn dialogue_grad(model: &Model, ex: &Example, noise: &[Vec<f64>], lambda: f64) -> Result<DialogueGrad> {
    let mut tape = Tape::new();
    let (binding, bound) = model.bind(&mut tape)?;
    let outs = bound.forward(&mut tape, model.config(), ex, Targets::All, noise, LatentMode::Posterior)?;
    let mut totals = Vec::with_capacity(outs.len());
    let mut kl = 0.0;
    for o in &outs {
        let l = pair_loss(&mut tape, o, lambda)?;
        totals.push(l.total);
        if let Some(k) = l.kl {
            kl += tape.value(k).item();
        }
    }
    let root = tape.add_all(&totals)?;
    let loss = tape.value(root).item();
    let grads = tape.backward(root)?;
    Ok(DialogueGrad { loss, kl, pairs: outs.len(), grads: binding.collect(&tape, &grads) })
}

/// Mean per-pair objective of `model` over `examples` (λ = 1, posterior
/// latents with seeded noise). No parameters change.
pub fn dataset_loss(model: &Model, examples: &[Example], seed: u64) -> Result<f64> {
    let mut rng = RngStream::derive(seed, NOISE_KEY);
    let (mut total, mut pairs) = (0.0, 0usize);
    for ex in examples {
        let noise = latent_noise(&mut rng, ex.turns.len(), model.config().latent_dim);
        let mut tape = Tape::new();
        let (_, bound) = model.bind(&mut tape)?;
        for o in bound.forward(&mut tape, model.config(), ex, Targets::All, &noise, LatentMode::Posterior)? {
            let l = pair_loss(&mut tape, &o, 1.0)?;
            total += tape.value(l.total).item();
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 0.0 } else { total / pairs as f64 })
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
}

/// Trains a fresh model. Deterministic in `config` and `corpus`; `observe`
/// sees every logged step as it happens.
pub fn train(
    config: &TrainConfig,
    corpus: &[Dialogue],
    lexicons: &CoarseLexicons,
    mut observe: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    let data = prepare(config, corpus, lexicons)?;
    let model_cfg = config.model_config(data.vocab.len(), data.coarse.as_ref().map_or(0, |c| c.vocab.len()));
    let mut model = Model::new(model_cfg, RngStream::derive(config.seed, 0).next_u64())?;
    let mut adam = AdamState::new(&model.params);
    let adam_cfg = config.adam();
    let mut metrics = Vec::new();
    let mut step = 0u64;

    'epochs: for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.examples.len()).collect();
        RngStream::derive(config.seed, epoch as u64 + 1).shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            step += 1;
            let lambda = kl_weight(step, config.kl_anneal_steps);
            let mut noise_rng = RngStream::derive(config.seed ^ NOISE_KEY, step);
            let mut acc = model.params.zeros_like();
            let (mut loss, mut kl, mut pairs) = (0.0, 0.0, 0usize);
            for &i in batch {
                let ex = &data.examples[i];
                let noise = latent_noise(&mut noise_rng, ex.turns.len(), model.config().latent_dim);
                let g = dialogue_grad(&model, ex, &noise, lambda)?;
                loss += g.loss;
                kl += g.kl;
                pairs += g.pairs;
                for (a, (_, b)) in acc.values_mut().zip(g.grads.iter()) {
                    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
                }
            }
            let inv = 1.0 / pairs as f64;
            for a in acc.values_mut() {
                a.data_mut().iter_mut().for_each(|x| *x *= inv);
            }
            let m = StepMetrics { step, loss: loss * inv, kl: kl * inv, lambda };
            if !m.loss.is_finite() {
                return Err(Error::Diverged { what: "loss", step });
            }
            clip_global_norm(&mut acc, config.clip_norm).map_err(|_| Error::Diverged { what: "gradient", step })?;
            adam_step(&mut model.params, &acc, &mut adam, &adam_cfg)
                .map_err(|_| Error::Diverged { what: "gradient", step })?;
            observe(&m);
            metrics.push(m);
        }
    }

    let checkpoint = Checkpoint { model, vocab: data.vocab, coarse: data.coarse, train: Some(config.clone()) };
    Ok(TrainOutcome { checkpoint, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthSpec};

    fn small_corpus(n: usize) -> (Vec<Dialogue>, CoarseLexicons) {
        let spec = SynthSpec { dialogues: n, ..SynthSpec::default() };
        (generate_synthetic(&spec).unwrap().dialogues, CoarseLexicons::for_synth(&spec))
    }

    fn quick(kind: ModelKind) -> TrainConfig {
        TrainConfig {
            model: kind,
            batch_size: 2,
            embed_dim: 8,
            hidden_dim: 12,
            latent_dim: 4,
            lr: 0.01,
            kl_anneal_steps: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_epoch_reduces_loss() {
        let (corpus, lex) = small_corpus(10);
        for kind in ModelKind::ALL {
            let cfg = quick(kind);
            let data = prepare(&cfg, &corpus, &lex).unwrap();
            let before = Model::new(
                cfg.model_config(data.vocab.len(), data.coarse.as_ref().map_or(0, |c| c.vocab.len())),
                RngStream::derive(cfg.seed, 0).next_u64(),
            )
            .unwrap();
            let initial = dataset_loss(&before, &data.examples, 3).unwrap();
            let out = train(&cfg, &corpus, &lex, |_| {}).unwrap();
            let fin = dataset_loss(&out.checkpoint.model, &data.examples, 3).unwrap();
            assert_eq!(out.metrics.len(), 5);
            assert!(fin < initial, "{kind}: {fin} !< {initial}");
        }
    }

    #[test]
    fn annealing_edge_and_schedule_in_log() {
        let (corpus, lex) = small_corpus(6);
        let cfg = TrainConfig { kl_anneal_steps: 0, ..quick(ModelKind::Vhred) };
        let out = train(&cfg, &corpus, &lex, |_| {}).unwrap();
        assert_eq!(out.metrics[0].lambda, 1.0);
        let cfg = TrainConfig { kl_anneal_steps: 2, epochs: 2, ..quick(ModelKind::Vhred) };
        let lambdas: Vec<f64> = train(&cfg, &corpus, &lex, |_| {}).unwrap().metrics.iter().map(|m| m.lambda).collect();
        assert_eq!(lambdas, vec![0.5, 1.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let (corpus, lex) = small_corpus(6);
        let cfg = quick(ModelKind::MrrnnActEnt);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let out = train(&cfg, &corpus, &lex, |_| {}).unwrap();
            out.checkpoint.save(d.path()).unwrap();
            write_metrics(&out.metrics, &d.path().join("metrics.jsonl")).unwrap();
        }
        for f in [MANIFEST_FILE, PAYLOAD_FILE, "metrics.jsonl"] {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        let other = train(&TrainConfig { seed: 2, ..cfg }, &corpus, &lex, |_| {}).unwrap();
        let reference = Checkpoint::load(dirs[0].path()).unwrap();
        assert_ne!(stored_precision(&other.checkpoint.model.params), reference.model.params);
    }

    #[test]
    fn checkpoint_round_trip_is_exact_in_stored_precision() {
        let (corpus, lex) = small_corpus(4);
        for kind in ModelKind::ALL {
            let out = train(&TrainConfig { max_steps: Some(1), ..quick(kind) }, &corpus, &lex, |_| {}).unwrap();
            let dir = tempfile::tempdir().unwrap();
            out.checkpoint.save(dir.path()).unwrap();
            let loaded = Checkpoint::load(dir.path()).unwrap();
            let mut rounded = out.checkpoint.model.clone();
            rounded.params = stored_precision(&rounded.params);
            assert_eq!(loaded.model.params, rounded.params);
            assert_eq!(loaded.vocab, out.checkpoint.vocab);
            assert_eq!(loaded.coarse, out.checkpoint.coarse);
            let ex = examples_for(&loaded.vocab, loaded.coarse.as_ref(), &corpus).unwrap();
            let a = dataset_loss(&loaded.model, &ex, 1).unwrap();
            let b = dataset_loss(&rounded, &ex, 1).unwrap();
            assert_eq!(a.to_bits(), b.to_bits(), "{kind}");
        }
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let (corpus, lex) = small_corpus(4);
        let out = train(&TrainConfig { max_steps: Some(1), ..quick(ModelKind::Hred) }, &corpus, &lex, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.checkpoint.save(dir.path()).unwrap();
        let payload = dir.path().join(PAYLOAD_FILE);
        let mut bytes = std::fs::read(&payload).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&payload, bytes).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let (corpus, lex) = small_corpus(2);
        for bad in [
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { clip_norm: -1.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
        ] {
            assert!(train(&bad, &corpus, &lex, |_| {}).is_err());
        }
    }
}
