//! Search strategies over any token-at-a-time model.

use std::cmp::Ordering;

use crate::corpus::EOU;
use crate::error::Result;
use crate::numerics::RngStream;

/// Anything that yields next-token log-probabilities from a state.
pub trait StepModel {
    type State: Clone;

    /// Log-probabilities over the vocabulary at `state` (masked tokens are
    /// `-inf`).
    fn log_probs(&self, state: &Self::State) -> Vec<f64>;

    fn advance(&mut self, state: &Self::State, token: u32) -> Result<Self::State>;
}

/// A decoded token sequence ending in `<eou>` and its log-probability
/// (the `<eou>` appended at the length limit contributes nothing).
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub score: f64,
}

/// Tie-break rank: lowest id wins, except that `<eou>` loses every tie so
/// a flat distribution keeps emitting content.
fn rank(token: u32) -> u32 {
    if token == EOU {
        u32::MAX
    } else {
        token
    }
}

fn cmp_seq(a: &[u32], b: &[u32]) -> Ordering {
    a.iter().map(|&t| rank(t)).cmp(b.iter().map(|&t| rank(t)))
}

/// Best-first order: higher score, then lexicographically smaller ranks.
fn better(a: (f64, &[u32]), b: (f64, &[u32])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| cmp_seq(a.1, b.1))
}

pub(crate) fn argmax(lp: &[f64]) -> u32 {
    let mut best = 0u32;
    for (i, &v) in lp.iter().enumerate().skip(1) {
        let b = lp[best as usize];
        if v > b || (v == b && rank(i as u32) < rank(best)) {
            best = i as u32;
        }
    }
    best
}

pub fn greedy_decode<M: StepModel>(m: &mut M, start: M::State, max_tokens: usize) -> Result<Hypothesis> {
    let mut state = start;
    let mut tokens = Vec::new();
    let mut score = 0.0;
    while tokens.len() < max_tokens {
        let lp = m.log_probs(&state);
        let t = argmax(&lp);
        score += lp[t as usize];
        tokens.push(t);
        if t == EOU {
            return Ok(Hypothesis { tokens, score });
        }
        state = m.advance(&state, t)?;
    }
    tokens.push(EOU);
    Ok(Hypothesis { tokens, score })
}

/// Length-unnormalised beam search over nested widths: the best of plain
/// beams of width 1..=`width`. A single plain beam can prune the greedy
/// path and return something worse; nesting makes the result monotone in
/// `width` and never worse than greedy.
pub fn beam_decode<M: StepModel>(m: &mut M, start: M::State, width: usize, max_tokens: usize) -> Result<Hypothesis> {
    let mut best = plain_beam(m, start.clone(), 1, max_tokens)?;
    for w in 2..=width {
        let h = plain_beam(m, start.clone(), w, max_tokens)?;
        if better((h.score, &h.tokens), (best.score, &best.tokens)) == Ordering::Less {
            best = h;
        }
    }
    Ok(best)
}

/// One beam of fixed width. Finished hypotheses leave the beam for a pool;
/// the best pooled hypothesis is returned.
fn plain_beam<M: StepModel>(m: &mut M, start: M::State, width: usize, max_tokens: usize) -> Result<Hypothesis> {
    let mut alive: Vec<(Vec<u32>, f64, M::State)> = vec![(Vec::new(), 0.0, start)];
    let mut pool: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_tokens {
        let mut cands: Vec<(usize, u32, f64, Vec<u32>)> = Vec::new();
        for (b, (toks, score, state)) in alive.iter().enumerate() {
            for (t, &l) in m.log_probs(state).iter().enumerate() {
                if l > f64::NEG_INFINITY {
                    let mut seq = toks.clone();
                    seq.push(t as u32);
                    cands.push((b, t as u32, score + l, seq));
                }
            }
        }
        cands.sort_by(|a, b| better((a.2, &a.3), (b.2, &b.3)));
        cands.truncate(width);
        let mut next = Vec::new();
        for (b, t, score, seq) in cands {
            if t == EOU {
                pool.push(Hypothesis { tokens: seq, score });
            } else {
                let state = m.advance(&alive[b].2, t)?;
                next.push((seq, score, state));
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
    }
    for (mut tokens, score, _) in alive {
        tokens.push(EOU);
        pool.push(Hypothesis { tokens, score });
    }
    pool.sort_by(|a, b| better((a.score, &a.tokens), (b.score, &b.tokens)));
    Ok(pool.swap_remove(0))
}

/// Ancestral sampling from `softmax(log p / τ)`; `τ < 1e-6` is greedy.
pub fn sample_decode<M: StepModel>(
    m: &mut M,
    start: M::State,
    temperature: f64,
    max_tokens: usize,
    rng: &mut RngStream,
) -> Result<Hypothesis> {
    if temperature < 1e-6 {
        return greedy_decode(m, start, max_tokens);
    }
    let mut state = start;
    let mut tokens = Vec::new();
    let mut score = 0.0;
    while tokens.len() < max_tokens {
        let lp = m.log_probs(&state);
        let t = sample_token(&lp, temperature, rng);
        score += lp[t as usize];
        tokens.push(t);
        if t == EOU {
            return Ok(Hypothesis { tokens, score });
        }
        state = m.advance(&state, t)?;
    }
    tokens.push(EOU);
    Ok(Hypothesis { tokens, score })
}

pub(crate) fn sample_token(lp: &[f64], temperature: f64, rng: &mut RngStream) -> u32 {
    let scaled: Vec<f64> = lp.iter().map(|&l| l / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    rng.categorical(&weights) as u32
}

/// Renormalised log-probabilities with `masked` ids removed.
pub fn mask_log_probs(lp: &[f64], masked: &[u32]) -> Vec<f64> {
    let mut out = lp.to_vec();
    for &m in masked {
        if let Some(x) = out.get_mut(m as usize) {
            *x = f64::NEG_INFINITY;
        }
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + out.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    out.iter_mut().for_each(|x| *x -= lse);
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::collections::HashMap;

    /// Distributions keyed by the generated prefix; unknown prefixes are
    /// certain to end.
    pub struct TableModel {
        pub vocab: usize,
        pub table: HashMap<Vec<u32>, Vec<f64>>,
    }

    impl StepModel for TableModel {
        type State = Vec<u32>;

        fn log_probs(&self, state: &Vec<u32>) -> Vec<f64> {
            match self.table.get(state) {
                Some(p) => p.iter().map(|x| x.ln()).collect(),
                None => (0..self.vocab).map(|i| if i as u32 == EOU { 0.0 } else { f64::NEG_INFINITY }).collect(),
            }
        }

        fn advance(&mut self, state: &Vec<u32>, token: u32) -> Result<Vec<u32>> {
            let mut s = state.clone();
            s.push(token);
            Ok(s)
        }
    }

    /// Random model: each prefix gets a seeded Dirichlet-ish distribution.
    pub struct RandomModel {
        pub vocab: usize,
        pub seed: u64,
    }

    impl StepModel for RandomModel {
        type State = Vec<u32>;

        fn log_probs(&self, state: &Vec<u32>) -> Vec<f64> {
            let key = state.iter().fold(0x9e37u64, |h, &t| h.wrapping_mul(31).wrapping_add(t as u64 + 1));
            let mut rng = RngStream::derive(self.seed, key);
            let w: Vec<f64> = (0..self.vocab).map(|_| rng.uniform().powi(3) + 1e-3).collect();
            let z: f64 = w.iter().sum();
            w.iter().map(|x| (x / z).ln()).collect()
        }

        fn advance(&mut self, state: &Vec<u32>, token: u32) -> Result<Vec<u32>> {
            let mut s = state.clone();
            s.push(token);
            Ok(s)
        }
    }

    fn score_of(m: &RandomModel, seq: &[u32]) -> f64 {
        (0..seq.len()).map(|i| m.log_probs(&seq[..i].to_vec())[seq[i] as usize]).sum()
    }

    #[test]
    fn a_single_plain_beam_can_lose_to_greedy() {
        // Why the nesting exists: seed 116 prunes the greedy path at width 2.
        let mut m = RandomModel { vocab: 7, seed: 116 };
        let g = greedy_decode(&mut m, vec![], 5).unwrap();
        assert!(plain_beam(&mut m, vec![], 2, 5).unwrap().score < g.score);
        assert!(beam_decode(&mut m, vec![], 2, 5).unwrap().score >= g.score);
    }

    #[test]
    fn one_hot_channel_reproduces_its_string() {
        let target = [5u32, 7, 4, EOU];
        let mut table = HashMap::new();
        for i in 0..target.len() {
            let mut p = vec![0.0; 8];
            p[target[i] as usize] = 1.0;
            table.insert(target[..i].to_vec(), p);
        }
        let mut m = TableModel { vocab: 8, table };
        assert_eq!(greedy_decode(&mut m, vec![], 10).unwrap().tokens, target);
        assert_eq!(beam_decode(&mut m, vec![], 3, 10).unwrap().tokens, target);
    }

    #[test]
    fn uniform_ties_pick_lowest_content_id() {
        struct Flat;
        impl StepModel for Flat {
            type State = ();
            fn log_probs(&self, _: &()) -> Vec<f64> {
                mask_log_probs(&[0.0; 7], &[0, 1, 3])
            }
            fn advance(&mut self, _: &(), _: u32) -> Result<()> {
                Ok(())
            }
        }
        let h = greedy_decode(&mut Flat, (), 4).unwrap();
        assert_eq!(h.tokens, vec![4, 4, 4, 4, EOU]);
        assert!((h.score - 4.0 * (1.0f64 / 4.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn beam_width_one_is_greedy() {
        for seed in 0..30 {
            let mut m = RandomModel { vocab: 6, seed };
            let g = greedy_decode(&mut m, vec![], 6).unwrap();
            let b = beam_decode(&mut m, vec![], 1, 6).unwrap();
            assert_eq!(g, b, "seed {seed}");
        }
    }

    #[test]
    fn beam_escapes_the_greedy_trap() {
        // a = 4, b = 5. After a every continuation has p = .1; after b the
        // turn ends with p = .9. Greedy scores .6 · .1, beam finds .4 · .9.
        let mut table = HashMap::new();
        let mut first = vec![0.0; 12];
        first[4] = 0.6;
        first[5] = 0.4;
        table.insert(vec![], first);
        let mut flat = vec![0.1; 12];
        flat[0] = 0.0;
        flat[1] = 0.0;
        table.insert(vec![4], flat);
        let mut end = vec![0.0; 12];
        end[EOU as usize] = 0.9;
        end[6] = 0.1;
        table.insert(vec![5], end);
        let mut m = TableModel { vocab: 12, table };
        let b = beam_decode(&mut m, vec![], 2, 2).unwrap();
        assert_eq!(b.tokens, vec![5, EOU]);
        assert!((b.score - 0.36f64.ln()).abs() < 1e-12);
        let g = greedy_decode(&mut m, vec![], 2).unwrap();
        assert_eq!(g.tokens[0], 4);
        assert!((g.score - 0.06f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_beam_finds_the_argmax_sequence() {
        let (vocab, max) = (4usize, 3usize);
        for seed in 0..10 {
            let mut m = RandomModel { vocab, seed };
            // Enumerate every sequence up to `max` tokens.
            let mut best: Option<(f64, Vec<u32>)> = None;
            let mut frontier: Vec<Vec<u32>> = vec![vec![]];
            for len in 1..=max {
                let mut next = Vec::new();
                for p in &frontier {
                    for t in 0..vocab as u32 {
                        let mut s = p.clone();
                        s.push(t);
                        let done = t == EOU || len == max;
                        if done {
                            let sc = score_of(&m, &s);
                            if t != EOU {
                                s.push(EOU);
                            }
                            if best.as_ref().map_or(true, |(b, _)| sc > *b) {
                                best = Some((sc, s));
                            }
                        } else {
                            next.push(s);
                        }
                    }
                }
                frontier = next;
            }
            let (score, seq) = best.unwrap();
            let b = beam_decode(&mut m, vec![], vocab.pow(max as u32), max).unwrap();
            assert_eq!(b.tokens, seq, "seed {seed}");
            assert!((b.score - score).abs() < 1e-12);
        }
    }

    #[test]
    fn beam_never_loses_to_greedy_or_narrower_beams_on_random_models() {
        for seed in 0..40 {
            let mut m = RandomModel { vocab: 7, seed: 100 + seed };
            let g = greedy_decode(&mut m, vec![], 5).unwrap();
            let mut last = g.score;
            for w in 1..=6 {
                let b = beam_decode(&mut m, vec![], w, 5).unwrap();
                assert!(b.score >= last, "seed {seed} width {w}");
                last = b.score;
            }
        }
    }

    #[test]
    fn cold_sampling_is_greedy_and_sampling_is_seeded() {
        let mut m = RandomModel { vocab: 6, seed: 3 };
        let g = greedy_decode(&mut m, vec![], 6).unwrap();
        let s = sample_decode(&mut m, vec![], 1e-9, 6, &mut RngStream::new(1)).unwrap();
        assert_eq!(g, s);
        let a = sample_decode(&mut m, vec![], 1.0, 6, &mut RngStream::new(8)).unwrap();
        let b = sample_decode(&mut m, vec![], 1.0, 6, &mut RngStream::new(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_token_frequencies_match_the_model() {
        let mut m = RandomModel { vocab: 5, seed: 21 };
        let p: Vec<f64> = m.log_probs(&vec![]).iter().map(|l| l.exp()).collect();
        let n = 10_000;
        let mut counts = [0usize; 5];
        let mut rng = RngStream::new(77);
        for _ in 0..n {
            counts[sample_decode(&mut m, vec![], 1.0, 1, &mut rng).unwrap().tokens[0] as usize] += 1;
        }
        for (c, p) in counts.iter().zip(&p) {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() <= 3.0 * sigma + 1e-9, "{c} vs {}", n as f64 * p);
        }
    }

    #[test]
    fn masking_renormalises() {
        let lp = mask_log_probs(&[0.0f64.ln().max(-1.0), -1.0, -1.0, -1.0], &[0, 3]);
        assert_eq!(lp[0], f64::NEG_INFINITY);
        assert!((lp[1].exp() + lp[2].exp() - 1.0).abs() < 1e-12);
    }
}
