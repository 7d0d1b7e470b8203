use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use hierdial::coarse::CoarseLexicons;
use hierdial::corpus::{generate_synthetic, load_corpus, save_corpus, tokenize, SynthSpec, DEFAULT_ENTITIES};
use hierdial::evaluation::{
    corpus_f1, distinct_n, perplexity, rating_stats, render_table2, test_pairs, F1Options, MeanCi, Perplexity,
    RatingSummary, Table2Row,
};
use hierdial::generation::respond;
use hierdial::training::{train as train_model, write_metrics, Checkpoint, TrainConfig};
use hierdial_study::journal::{read_events, Event};
use hierdial_study::Recorded;

use crate::{EvaluateArgs, GenerateArgs, SynthArgs, TrainArgs};

pub const METRICS_FILE: &str = "metrics.jsonl";

pub fn load_lexicons(dir: Option<&Path>) -> Result<CoarseLexicons> {
    match dir {
        Some(d) => CoarseLexicons::load_dir(d).with_context(|| format!("loading lexicons from {}", d.display())),
        None => Ok(CoarseLexicons::builtin()),
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    Checkpoint::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

pub fn synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    if a.entities == 0 || a.entities > DEFAULT_ENTITIES.len() {
        bail!("--entities must lie in 1..={}", DEFAULT_ENTITIES.len());
    }
    let test_n = if a.test_out.is_some() { a.test_n } else { 0 };
    let spec = SynthSpec {
        dialogues: a.n + test_n,
        ambiguity: a.ambiguity,
        turns: a.turns,
        generic_weight: a.generic_weight,
        switch_prob: a.switch_prob,
        seed: a.seed,
        ..SynthSpec::default()
    }
    .with_entity_pool(a.entities);
    let corpus = generate_synthetic(&spec)?;
    let (train, test) = corpus.dialogues.split_at(a.n);
    save_corpus(train, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let ambiguous = corpus.ambiguous[..a.n].iter().filter(|x| **x).count();
    writeln!(out, "wrote {} dialogues ({ambiguous} ambiguous) to {}", train.len(), a.out.display())?;
    if let Some(p) = &a.test_out {
        save_corpus(test, p).with_context(|| format!("writing {}", p.display()))?;
        writeln!(out, "wrote {} dialogues to {}", test.len(), p.display())?;
    }
    if let Some(dir) = &a.lexicons_out {
        CoarseLexicons::for_synth(&spec).save_dir(dir)?;
        writeln!(out, "wrote lexicons to {}", dir.display())?;
    }
    Ok(())
}

pub fn train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let corpus = load_corpus(&a.corpus).with_context(|| format!("loading {}", a.corpus.display()))?;
    let lex = load_lexicons(a.lexicons.as_deref())?;
    let cfg = TrainConfig {
        model: a.model,
        lr: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        clip_norm: a.clip_norm,
        batch_size: a.batch_size,
        epochs: a.epochs,
        kl_anneal_steps: a.kl_anneal_steps,
        seed: a.seed,
        embed_dim: a.embed_dim,
        hidden_dim: a.hidden_dim,
        latent_dim: a.latent_dim,
        vocab_max: a.vocab_max,
        baseline_window: a.baseline_window,
        share_embeddings: !a.separate_embeddings,
        max_steps: a.max_steps,
    };
    let started = std::time::Instant::now();
    let outcome = train_model(&cfg, &corpus, &lex, |m| {
        if a.log_every > 0 && m.step % a.log_every == 0 {
            let _ = writeln!(err, "step {:>6}  loss {:9.4}  kl {:8.4}  lambda {:.3}", m.step, m.loss, m.kl, m.lambda);
        }
    })?;
    outcome.checkpoint.save(&a.out).with_context(|| format!("saving checkpoint to {}", a.out.display()))?;
    write_metrics(&outcome.metrics, &a.out.join(METRICS_FILE))?;
    let last = outcome.metrics.last().map_or(f64::NAN, |m| m.loss);
    writeln!(
        out,
        "trained {} for {} steps in {:.1}s (final loss {last:.4}, {} parameters) -> {}",
        a.model,
        outcome.metrics.len(),
        started.elapsed().as_secs_f64(),
        outcome.checkpoint.model.params.size(),
        a.out.display()
    )?;
    Ok(())
}

#[derive(Serialize)]
struct GeneratedLine<'a> {
    id: &'a str,
    context: &'a [String],
    reference: &'a str,
    response: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    coarse: Option<Vec<String>>,
}

pub fn generate(a: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(&a.model_dir)?;
    let cfg = a.generation.gen_config();
    let coarse_of = |r: &hierdial::generation::Response| r.coarse.as_ref().map(|c| c.sequence.tokens.clone());
    if let Some(path) = &a.corpus {
        let dialogues = load_corpus(path)?;
        for d in dialogues.iter().filter(|d| d.turns.len() >= 2).take(a.limit.unwrap_or(usize::MAX)) {
            let (reference, context) = d.turns.split_last().expect("at least two turns");
            let r = respond(&ckpt, context, &cfg)?;
            let line = GeneratedLine {
                id: &d.id,
                context,
                reference,
                coarse: if a.show_coarse { coarse_of(&r) } else { None },
                response: r.text,
            };
            serde_json::to_writer(&mut *out, &line)?;
            writeln!(out)?;
        }
        return Ok(());
    }
    if a.turns.is_empty() {
        bail!("give the context with --turn (repeatable) or a --corpus");
    }
    let r = respond(&ckpt, &a.turns, &cfg)?;
    if a.show_coarse {
        if let Some(c) = coarse_of(&r) {
            writeln!(out, "coarse: {}", c.join(" "))?;
        }
    }
    writeln!(out, "{}", r.text)?;
    Ok(())
}

#[derive(Serialize)]
struct ModelReport {
    model: String,
    dir: String,
    examples: usize,
    activity: MeanCi,
    entity: MeanCi,
    distinct_1: f64,
    distinct_2: f64,
    perplexity: Option<Perplexity>,
    human: Option<RatingSummary>,
}

fn human_ratings(journal: &Path) -> Result<std::collections::BTreeMap<String, RatingSummary>> {
    let records: Vec<_> = read_events(journal)?
        .into_iter()
        .flat_map(|e| match e {
            Event::Submitted { recorded: Recorded::Ratings { records }, .. } => records,
            _ => Vec::new(),
        })
        .collect();
    if records.is_empty() {
        return Ok(Default::default());
    }
    Ok(rating_stats(&records)?)
}

pub fn evaluate(a: &EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let lex = load_lexicons(a.lexicons.as_deref())?;
    let mut dialogues = load_corpus(&a.corpus)?;
    dialogues.truncate(a.limit.unwrap_or(usize::MAX));
    let pairs = test_pairs(&dialogues);
    let human = match &a.journal {
        Some(j) => human_ratings(j)?,
        None => Default::default(),
    };
    let cfg = a.generation.gen_config();
    let opts = F1Options { skip_both_empty: a.skip_both_empty };

    let mut reports = Vec::new();
    for dir in &a.model_dir {
        let ckpt = load_checkpoint(dir)?;
        let kind = ckpt.model.kind();
        writeln!(err, "scoring {} ({}) on {} contexts", dir.display(), kind, pairs.len())?;
        let mut responses = Vec::with_capacity(pairs.len());
        let f1 = corpus_f1(
            &pairs,
            |context| {
                let text = respond(&ckpt, context, &cfg)?.text;
                responses.push(tokenize(&text));
                Ok(text)
            },
            &lex,
            opts,
        )?;
        let ppl = if a.perplexity { Some(perplexity(&ckpt, &dialogues, cfg.seed)?) } else { None };
        reports.push(ModelReport {
            model: kind.label().to_string(),
            dir: dir.display().to_string(),
            examples: f1.n,
            activity: f1.activity,
            entity: f1.entity,
            distinct_1: distinct_n(&responses, 1),
            distinct_2: distinct_n(&responses, 2),
            perplexity: ppl,
            human: human.get(kind.name()).copied(),
        });
    }

    let rows: Vec<Table2Row> = reports
        .iter()
        .map(|r| Table2Row {
            model: r.model.clone(),
            activity: r.activity,
            entity: r.entity,
            fluency: r.human.map(|h| h.fluency),
            relevancy: r.human.map(|h| h.relevancy),
        })
        .collect();
    write!(out, "{}", render_table2(&rows))?;
    writeln!(out)?;
    for r in &reports {
        write!(out, "{}: n={} distinct-1 {:.4} distinct-2 {:.4}", r.model, r.examples, r.distinct_1, r.distinct_2)?;
        if let Some(p) = &r.perplexity {
            let bound = if p.elbo_bound { " (upper bound)" } else { "" };
            write!(out, " perplexity {:.3}{bound}", p.perplexity)?;
        }
        writeln!(out)?;
    }
    if let Some(path) = &a.json {
        std::fs::write(path, serde_json::to_string_pretty(&reports)?)?;
    }
    Ok(())
}
