use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{mean_ci, MeanCi};
use crate::coarse::CoarseLexicons;
use crate::corpus::tokenize;
use crate::error::{Error, Result};

/// z for a two-sided 90% normal interval.
pub const Z90: f64 = 1.645;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set precision/recall/F1. Both sets empty scores 1; exactly one empty
/// scores 0.
pub fn set_f1(pred: &BTreeSet<String>, reference: &BTreeSet<String>) -> Prf {
    match (pred.is_empty(), reference.is_empty()) {
        (true, true) => return Prf { precision: 1.0, recall: 1.0, f1: 1.0 },
        (true, false) | (false, true) => return Prf { precision: 0.0, recall: 0.0, f1: 0.0 },
        _ => {}
    }
    let hits = pred.intersection(reference).count() as f64;
    let precision = hits / pred.len() as f64;
    let recall = hits / reference.len() as f64;
    let f1 = if hits == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Prf { precision, recall, f1 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActEntScore {
    pub activity: Prf,
    pub entity: Prf,
    /// Whether each side's sets were empty for both texts.
    pub activity_both_empty: bool,
    pub entity_both_empty: bool,
}

pub fn activity_entity_f1(response: &str, reference: &str, lex: &CoarseLexicons) -> ActEntScore {
    let (r, g) = (tokenize(response), tokenize(reference));
    let (ra, ga) = (lex.activity_set(&r), lex.activity_set(&g));
    let (re, ge) = (lex.entity_set(&r), lex.entity_set(&g));
    ActEntScore {
        activity: set_f1(&ra, &ga),
        entity: set_f1(&re, &ge),
        activity_both_empty: ra.is_empty() && ga.is_empty(),
        entity_both_empty: re.is_empty() && ge.is_empty(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct F1Options {
    /// Drop examples where both sides are empty instead of scoring them 1.
    pub skip_both_empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub n: usize,
    pub activity: MeanCi,
    pub entity: MeanCi,
    pub per_example: Vec<ActEntScore>,
}

/// Corpus F1 over (response, reference) pairs.
pub fn f1_report(pairs: &[(String, String)], lex: &CoarseLexicons, opts: F1Options) -> Result<F1Report> {
    if pairs.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    let per_example: Vec<ActEntScore> = pairs.iter().map(|(r, g)| activity_entity_f1(r, g, lex)).collect();
    let keep = |both: bool| !(opts.skip_both_empty && both);
    let act: Vec<f64> = per_example.iter().filter(|s| keep(s.activity_both_empty)).map(|s| s.activity.f1).collect();
    let ent: Vec<f64> = per_example.iter().filter(|s| keep(s.entity_both_empty)).map(|s| s.entity.f1).collect();
    Ok(F1Report { n: pairs.len(), activity: mean_ci(&act), entity: mean_ci(&ent), per_example })
}

/// Generates one response per (context, reference) and scores them.
pub fn corpus_f1<G>(
    test: &[(Vec<String>, String)],
    mut respond: G,
    lex: &CoarseLexicons,
    opts: F1Options,
) -> Result<F1Report>
where
    G: FnMut(&[String]) -> Result<String>,
{
    let pairs = test.iter().map(|(c, g)| Ok((respond(c)?, g.clone()))).collect::<Result<Vec<_>>>()?;
    f1_report(&pairs, lex, opts)
}
