use crate::error::{Error, Result};
use crate::models::TurnOutput;
use crate::numerics::{NodeId, Tape};

/// Summed and per-token negative log-likelihood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nll {
    pub sum: f64,
    pub mean: f64,
    pub tokens: usize,
}

/// `Σ −ln p_i[target_i]` over probability distributions.
pub fn nll_loss(distributions: &[Vec<f64>], targets: &[u32]) -> Result<Nll> {
    if distributions.len() != targets.len() {
        return Err(Error::shape("nll_loss", &[&[distributions.len()], &[targets.len()]]));
    }
    let mut sum = 0.0;
    for (i, (d, &t)) in distributions.iter().zip(targets).enumerate() {
        let p = *d.get(t as usize).ok_or(Error::OutOfRange { what: "target", index: t as usize, len: d.len() })?;
        if !(p > 0.0) {
            return Err(Error::Invalid(format!("zero probability at target position {i}")));
        }
        sum -= p.ln();
    }
    let tokens = targets.len();
    Ok(Nll { sum, mean: if tokens == 0 { 0.0 } else { sum / tokens as f64 }, tokens })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Elbo {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// `reconstruction + λ·Σ kl`.
pub fn elbo_loss(reconstruction: f64, kl_per_turn: &[f64], lambda: f64) -> Result<Elbo> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Invalid(format!("KL weight {lambda} outside [0, 1]")));
    }
    let kl: f64 = kl_per_turn.iter().sum();
    Ok(Elbo { total: reconstruction + lambda * kl, reconstruction, kl })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLoss {
    pub total: f64,
    pub coarse: f64,
    pub natural: f64,
}

/// Joint coarse + natural-language NLL of MrRNN.
pub fn mrrnn_loss(
    coarse_dists: &[Vec<f64>],
    coarse_targets: &[u32],
    nl_dists: &[Vec<f64>],
    nl_targets: &[u32],
) -> Result<JointLoss> {
    let coarse = nll_loss(coarse_dists, coarse_targets)?.sum;
    let natural = nll_loss(nl_dists, nl_targets)?.sum;
    Ok(JointLoss { total: coarse + natural, coarse, natural })
}

/// Loss nodes for one (prefix, target) pair.
#[derive(Clone, Copy, Debug)]
pub struct PairLoss {
    /// Natural-language NLL.
    pub nll: NodeId,
    pub coarse_nll: Option<NodeId>,
    pub kl: Option<NodeId>,
    /// `nll + coarse_nll + λ·kl`
    pub total: NodeId,
    pub tokens: usize,
}

/// `−Σ log p[target]` from log-probability nodes.
pub fn tape_nll(tape: &mut Tape, log_probs: &[NodeId], targets: &[u32]) -> Result<NodeId> {
    if log_probs.len() != targets.len() || targets.is_empty() {
        return Err(Error::shape("tape_nll", &[&[log_probs.len()], &[targets.len()]]));
    }
    let picks = log_probs
        .iter()
        .zip(targets)
        .map(|(&lp, &t)| tape.pick(lp, t as usize))
        .collect::<Result<Vec<_>>>()?;
    let s = tape.add_all(&picks)?;
    tape.scale(s, -1.0)
}

pub fn pair_loss(tape: &mut Tape, out: &TurnOutput, lambda: f64) -> Result<PairLoss> {
    let nll = tape_nll(tape, &out.log_probs, &out.targets)?;
    let mut terms = vec![nll];
    let coarse_nll = if out.coarse_targets.is_empty() {
        None
    } else {
        let c = tape_nll(tape, &out.coarse_log_probs, &out.coarse_targets)?;
        terms.push(c);
        Some(c)
    };
    if let Some(kl) = out.kl {
        terms.push(tape.scale(kl, lambda)?);
    }
    let total = tape.add_all(&terms)?;
    Ok(PairLoss { nll, coarse_nll, kl: out.kl, total, tokens: out.targets.len() })
}

/// KL weight after `step` updates: linear from 0 to 1 over `anneal_steps`.
pub fn kl_weight(step: u64, anneal_steps: u64) -> f64 {
    if anneal_steps == 0 {
        1.0
    } else {
        (step as f64 / anneal_steps as f64).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_binary_nll() {
        let n = nll_loss(&vec![vec![0.5, 0.5]; 3], &[0, 1, 0]).unwrap();
        assert!((n.sum - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert!((n.sum - 2.0794).abs() < 1e-4);
        assert!((n.mean - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let n = nll_loss(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[1, 0]).unwrap();
        assert_eq!(n.sum, 0.0);
    }

    #[test]
    fn hand_computed_nll() {
        let d = [vec![0.2, 0.3, 0.5], vec![0.6, 0.1, 0.3]];
        let n = nll_loss(&d, &[2, 1]).unwrap();
        assert!((n.sum - (-(0.5f64.ln()) - 0.1f64.ln())).abs() < 1e-12);
        assert!(nll_loss(&d, &[0]).is_err());
        assert!(nll_loss(&[vec![1.0, 0.0]], &[1]).is_err());
    }

    #[test]
    fn elbo_decomposition() {
        assert_eq!(elbo_loss(3.0, &[0.5, 0.25], 0.0).unwrap().total, 3.0);
        assert_eq!(elbo_loss(3.0, &[0.0, 0.0], 1.0).unwrap().total, 3.0);
        let mut rng = crate::numerics::RngStream::new(9);
        for _ in 0..20 {
            let l = rng.uniform();
            let e = elbo_loss(2.5, &[0.3, 0.9], l).unwrap();
            assert!((e.total - (2.5 + l * 1.2)).abs() < 1e-12);
        }
        assert!(elbo_loss(1.0, &[], 1.5).is_err());
    }

    #[test]
    fn elbo_monotone_in_weight() {
        let mut last = f64::NEG_INFINITY;
        for i in 0..=10 {
            let t = elbo_loss(1.0, &[0.4, 0.1], i as f64 / 10.0).unwrap().total;
            assert!(t >= last);
            last = t;
        }
    }

    #[test]
    fn joint_loss_sums_channels() {
        let c = [vec![0.25, 0.75]];
        let w = [vec![0.5, 0.5], vec![0.1, 0.9]];
        let j = mrrnn_loss(&c, &[1], &w, &[0, 1]).unwrap();
        assert!((j.total - j.coarse - j.natural).abs() < 1e-15);
        assert!((j.coarse + 0.75f64.ln()).abs() < 1e-12);
        let perfect = mrrnn_loss(&[vec![1.0]], &[0], &[vec![1.0]], &[0]).unwrap();
        assert_eq!(perfect.total, 0.0);
    }

    #[test]
    fn annealing_schedule() {
        assert_eq!(kl_weight(1, 0), 1.0);
        assert_eq!(kl_weight(0, 0), 1.0);
        assert_eq!(kl_weight(250, 1000), 0.25);
        assert_eq!(kl_weight(5000, 1000), 1.0);
    }
}
