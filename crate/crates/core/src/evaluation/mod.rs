//! Activity/entity F1, perplexity, diversity and human-study statistics,
//! plus renderers for the results tables.

mod f1;
mod human;
mod tables;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use f1::{activity_entity_f1, corpus_f1, f1_report, set_f1, ActEntScore, F1Options, F1Report, Prf, Z90};
pub use human::{preference_stats, rating_stats, PreferenceRecord, PreferenceStats, RatingRecord, RatingSummary, Share, Vote};
pub use tables::{render_table2, render_table3, Table2Row};

use crate::corpus::Dialogue;
use crate::error::{Error, Result};
use crate::models::{Example, LatentMode, ModelKind, Targets};
use crate::numerics::{RngStream, Tape};
use crate::training::{examples_for, latent_noise, tape_nll, Checkpoint};

/// Mean with its 90% normal-approximation half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub half_width: f64,
}

/// `1.645 · s / √n` with the sample standard deviation; a single value has
/// half-width 0 and an empty slice has mean 0.
pub fn mean_ci(xs: &[f64]) -> MeanCi {
    let n = xs.len();
    if n == 0 {
        return MeanCi { n, mean: 0.0, half_width: 0.0 };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let half_width = if n < 2 {
        0.0
    } else {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Z90 * var.sqrt() / (n as f64).sqrt()
    };
    MeanCi { n, mean, half_width }
}

/// Unique n-grams over total n-grams, pooled across responses.
pub fn distinct_n(responses: &[Vec<String>], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        for g in r.windows(n) {
            seen.insert(g);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

/// Context (all but the last turn) and reference (the last turn) of each
/// test dialogue.
pub fn test_pairs(dialogues: &[Dialogue]) -> Vec<(Vec<String>, String)> {
    dialogues
        .iter()
        .filter(|d| d.turns.len() >= 2)
        .map(|d| (d.turns[..d.turns.len() - 1].to_vec(), d.turns[d.turns.len() - 1].clone()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub perplexity: f64,
    pub nll: f64,
    pub tokens: usize,
    /// The NLL is VHRED's ELBO bound, so the figure is an upper bound.
    pub elbo_bound: bool,
}

pub fn perplexity_from(nll: f64, tokens: usize) -> Result<f64> {
    if tokens == 0 {
        return Err(Error::Invalid("no target tokens".into()));
    }
    Ok((nll / tokens as f64).exp())
}

/// Per-word perplexity over every target turn (`<eou>` included). VHRED
/// uses the λ = 1 ELBO with seeded posterior samples; MrRNN scores words
/// given the true coarse sequence.
pub fn perplexity(ckpt: &Checkpoint, test: &[Dialogue], seed: u64) -> Result<Perplexity> {
    let examples = examples_for(&ckpt.vocab, ckpt.coarse.as_ref(), test)?;
    perplexity_examples(ckpt, &examples, seed)
}

pub fn perplexity_examples(ckpt: &Checkpoint, examples: &[Example], seed: u64) -> Result<Perplexity> {
    let cfg = ckpt.model.config();
    let mut rng = RngStream::new(seed);
    let (mut nll, mut tokens) = (0.0, 0usize);
    for ex in examples {
        let noise = latent_noise(&mut rng, ex.turns.len(), cfg.latent_dim);
        let mut tape = Tape::new();
        let (_, bound) = ckpt.model.bind(&mut tape)?;
        for o in bound.forward(&mut tape, cfg, ex, Targets::All, &noise, LatentMode::Posterior)? {
            let l = tape_nll(&mut tape, &o.log_probs, &o.targets)?;
            nll += tape.value(l).item();
            if let Some(kl) = o.kl {
                nll += tape.value(kl).item();
            }
            tokens += o.targets.len();
        }
    }
    Ok(Perplexity { perplexity: perplexity_from(nll, tokens)?, nll, tokens, elbo_bound: cfg.kind == ModelKind::Vhred })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthSpec, Vocabulary};
    use crate::models::{Model, ModelConfig};

    #[test]
    fn interval_edges() {
        assert_eq!(mean_ci(&[]).mean, 0.0);
        assert_eq!(mean_ci(&[0.3]).half_width, 0.0);
        let m = mean_ci(&[1.0, 1.0, 1.0]);
        assert_eq!((m.mean, m.half_width), (1.0, 0.0));
    }

    #[test]
    fn distinct_counts() {
        let same: Vec<Vec<String>> = (0..10).map(|_| "a b c d e".split(' ').map(String::from).collect()).collect();
        assert!((distinct_n(&same, 1) - 0.1).abs() < 1e-15);
        let all: Vec<Vec<String>> = vec!["a b".split(' ').map(String::from).collect(), vec!["c".into()]];
        assert_eq!(distinct_n(&all, 1), 1.0);
        assert_eq!(distinct_n(&all, 3), 0.0);
        assert_eq!(distinct_n(&[], 1), 0.0);
    }

    fn zero_checkpoint(kind: ModelKind, vocab: Vocabulary) -> Checkpoint {
        let mut model = Model::new(ModelConfig::toy(kind, vocab.len(), 0), 1).unwrap();
        model.params = model.params.zeros_like();
        Checkpoint { model, vocab, coarse: None, train: None }
    }

    #[test]
    fn uniform_model_perplexity_is_vocabulary_size() {
        let words: Vec<String> = (0..96).map(|i| format!("w{i}")).collect();
        let d = Dialogue::new("x", vec![words[..50].join(" "), words[50..].join(" ")]);
        let vocab = Vocabulary::build(&[d.clone()], 1000).unwrap();
        assert_eq!(vocab.len(), 100);
        for kind in [ModelKind::Baseline, ModelKind::Hred, ModelKind::Vhred] {
            let p = perplexity(&zero_checkpoint(kind, vocab.clone()), &[d.clone()], 0).unwrap();
            assert!((p.perplexity - 100.0).abs() < 1e-9, "{kind}: {}", p.perplexity);
            assert_eq!(p.tokens, 47);
        }
    }

    #[test]
    fn perplexity_matches_hand_summed_nll() {
        let spec = SynthSpec { dialogues: 3, ..SynthSpec::default() };
        let corpus = generate_synthetic(&spec).unwrap().dialogues;
        let vocab = Vocabulary::build(&corpus, 1000).unwrap();
        let model = Model::new(ModelConfig::toy(ModelKind::Hred, vocab.len(), 0), 5).unwrap();
        let ckpt = Checkpoint { model, vocab, coarse: None, train: None };
        let p = perplexity(&ckpt, &corpus, 0).unwrap();
        let (mut nll, mut n) = (0.0, 0);
        for d in &corpus {
            for t in 1..d.turns.len() {
                let target = ckpt.vocab.encode_utterance(&d.turns[t]).tokens;
                let cfg = crate::generation::GenConfig::default();
                nll -= crate::generation::score_continuation(&ckpt, &d.turns[..t], &target, &cfg, None).unwrap();
                n += target.len();
            }
        }
        assert_eq!(p.tokens, n);
        assert!((p.nll - nll).abs() < 1e-9 * nll.abs().max(1.0));
        assert!((p.perplexity - (nll / n as f64).exp()).abs() < 1e-9);
        assert!(perplexity_from(0.0, 0).is_err());
        assert_eq!(perplexity_from(0.0, 5).unwrap(), 1.0);
    }
}
