use super::*;
use crate::coarse::{CoarseLexicons, NOCOARSE};
use crate::corpus::{generate_synthetic, Dialogue, SynthSpec};
use crate::models::{Example, LatentMode, Model, ModelKind, Targets};
use crate::training::{prepare, TrainConfig};

fn corpus() -> (Vec<Dialogue>, CoarseLexicons) {
    let spec = SynthSpec { dialogues: 12, ..SynthSpec::default() };
    (generate_synthetic(&spec).unwrap().dialogues, CoarseLexicons::for_synth(&spec))
}

/// Randomly initialised checkpoint over the small synthetic corpus.
fn checkpoint(kind: ModelKind) -> (Checkpoint, Vec<Dialogue>) {
    let (c, lex) = corpus();
    let cfg = TrainConfig { model: kind, embed_dim: 8, hidden_dim: 10, latent_dim: 4, ..TrainConfig::default() };
    let data = prepare(&cfg, &c, &lex).unwrap();
    let mcfg = cfg.model_config(data.vocab.len(), data.coarse.as_ref().map_or(0, |s| s.vocab.len()));
    let model = Model::new(mcfg, 4).unwrap();
    (Checkpoint { model, vocab: data.vocab, coarse: data.coarse, train: None }, c)
}

fn configs() -> Vec<GenConfig> {
    vec![
        GenConfig { max_tokens: 8, ..GenConfig::default() },
        GenConfig { strategy: Strategy::Beam, beam_width: 3, max_tokens: 8, ..GenConfig::default() },
        GenConfig { strategy: Strategy::Sample, max_tokens: 8, seed: 5, ..GenConfig::default() },
    ]
}

#[test]
fn chat_cache_matches_recomputation() {
    for kind in ModelKind::ALL {
        let (ckpt, _) = checkpoint(kind);
        for cfg in configs() {
            let mut s = ChatSession::new(&ckpt, cfg.clone()).unwrap();
            s.step("how do i install vim ?").unwrap().unwrap();
            let second = s.step("it says apt is broken").unwrap().unwrap();
            assert_eq!(s.turns().len(), 4);
            let turns = s.turns().to_vec();
            assert_eq!(respond(&ckpt, &turns[..3], &cfg).unwrap(), second, "{kind}");
            assert_eq!(s.cache(), &ContextCache::from_turns(&ckpt, &turns).unwrap());

            if kind.is_hierarchical() {
                // The cached state equals the context RNN run on one tape.
                let d = Dialogue::new("chat", turns.clone());
                let ex = Example::new(&ckpt.vocab.encode_dialogue(&d), ckpt.coarse.as_ref()).unwrap();
                let mut tape = crate::numerics::Tape::new();
                let (_, bound) = ckpt.model.bind(&mut tape).unwrap();
                let states = bound.context_states(&mut tape, &ex).unwrap();
                let CacheState::States { nl, coarse } = &s.cache().state else { panic!() };
                assert_eq!(tape.value(states.nl[3]), nl);
                if let Some(c) = coarse {
                    assert_eq!(tape.value(states.coarse[3]), c);
                }
            }
        }
    }
}

#[test]
fn sessions_are_deterministic_and_ignore_empty_input() {
    let (ckpt, _) = checkpoint(ModelKind::Vhred);
    let cfg = GenConfig { strategy: Strategy::Sample, seed: 9, max_tokens: 6, ..GenConfig::default() };
    let run = || {
        let mut s = ChatSession::new(&ckpt, cfg.clone()).unwrap();
        for u in ["hello", "  ", "my wifi is down", "thanks"] {
            s.step(u).unwrap();
        }
        s.turns().to_vec()
    };
    let a = run();
    assert_eq!(a.len(), 6);
    assert_eq!(a, run());
}

#[test]
fn outputs_end_in_eou_and_never_contain_pad() {
    for kind in ModelKind::ALL {
        let (ckpt, corpus) = checkpoint(kind);
        for cfg in configs() {
            for d in corpus.iter().take(4) {
                let r = respond(&ckpt, &d.turns[..d.turns.len() - 1], &cfg).unwrap();
                assert_eq!(r.tokens.last(), Some(&EOU));
                assert!(r.tokens.len() <= cfg.max_tokens + 1);
                assert!(!r.tokens.contains(&PAD) && !r.tokens.contains(&SOT) && !r.tokens.contains(&UNK));
                if let Some(c) = &r.coarse {
                    assert_eq!(c.ids.last(), Some(&EOU));
                    assert!(!c.ids.contains(&PAD));
                }
            }
        }
    }
}

#[test]
fn beam_width_one_matches_greedy_on_real_models() {
    for kind in ModelKind::ALL {
        let (ckpt, corpus) = checkpoint(kind);
        let g = GenConfig { latent: LatentChoice::Mean, max_tokens: 10, ..GenConfig::default() };
        let b = GenConfig { strategy: Strategy::Beam, beam_width: 1, ..g.clone() };
        for d in corpus.iter().take(3) {
            let ctx = &d.turns[..2];
            assert_eq!(respond(&ckpt, ctx, &g).unwrap(), respond(&ckpt, ctx, &b).unwrap(), "{kind}");
        }
    }
}

#[test]
fn forced_true_coarse_reproduces_teacher_forcing() {
    for kind in [ModelKind::MrrnnNoun, ModelKind::MrrnnActEnt] {
        let (ckpt, corpus) = checkpoint(kind);
        for d in corpus.iter().take(4) {
            let ex = Example::new(&ckpt.vocab.encode_dialogue(d), ckpt.coarse.as_ref()).unwrap();
            let n = ex.turns.len();
            let mut tape = crate::numerics::Tape::new();
            let (_, bound) = ckpt.model.bind(&mut tape).unwrap();
            let outs = bound.forward(&mut tape, ckpt.model.config(), &ex, Targets::Last, &[], LatentMode::Posterior).unwrap();
            let tf: f64 = outs[0]
                .log_probs
                .iter()
                .zip(&outs[0].targets)
                .map(|(&lp, &t)| tape.value(lp).data()[t as usize])
                .sum();
            let true_coarse = ex.coarse.as_ref().unwrap()[n - 1].clone();
            let gen = score_continuation(&ckpt, &d.turns[..n - 1], &ex.turns[n - 1], &GenConfig::default(), Some(&true_coarse))
                .unwrap();
            assert_eq!(tf.to_bits(), gen.to_bits(), "{kind}");
        }
    }
}

#[test]
fn degenerate_coarse_still_yields_an_utterance() {
    let (ckpt, corpus) = checkpoint(ModelKind::MrrnnNoun);
    let spec = ckpt.coarse.as_ref().unwrap();
    let forced = [spec.vocab.id(NOCOARSE).unwrap(), EOU];
    let r = mrrnn_respond(&ckpt, &corpus[0].turns[..1], &GenConfig::default(), Some(&forced)).unwrap();
    assert_eq!(r.tokens.last(), Some(&EOU));
    assert_eq!(r.coarse.unwrap().sequence.tokens, vec![NOCOARSE.to_string()]);
    let (hred, _) = checkpoint(ModelKind::Hred);
    assert!(mrrnn_respond(&hred, &corpus[0].turns[..1], &GenConfig::default(), None).is_err());
}

#[test]
fn invalid_configs_rejected() {
    let (ckpt, _) = checkpoint(ModelKind::Hred);
    for bad in [
        GenConfig { beam_width: 0, ..GenConfig::default() },
        GenConfig { max_tokens: 0, ..GenConfig::default() },
        GenConfig { temperature: 0.0, ..GenConfig::default() },
    ] {
        assert!(respond(&ckpt, &["hi".to_string()], &bad).is_err());
    }
}
