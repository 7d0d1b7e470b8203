use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};
use crate::rnn::{Linear, LinearNodes};
use crate::params::{Binding, ParamSet};
use crate::numerics::RngStream;

/// Variance floor added after the softplus head.
pub const VARIANCE_FLOOR: f64 = 1e-4;

/// Diagonal Gaussian over the per-turn latent variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLatent {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianLatent {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::shape("gaussian", &[&[mean.len()], &[var.len()]]));
        }
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Invalid("variances must be positive".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `z = μ + sqrt(σ²) ⊙ ε`
pub fn sample_latent(g: &GaussianLatent, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        return Err(Error::shape("sample_latent", &[&[g.dim()], &[noise.len()]]));
    }
    Ok(g.mean.iter().zip(&g.var).zip(noise).map(|((m, v), e)| m + v.sqrt() * e).collect())
}

/// Closed-form `KL(q ‖ p)` between diagonal Gaussians.
pub fn kl_gaussian(q: &GaussianLatent, p: &GaussianLatent) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::shape("kl_gaussian", &[&[q.dim()], &[p.dim()]]));
    }
    Ok((0..q.dim())
        .map(|i| {
            let d = q.mean[i] - p.mean[i];
            0.5 * (p.var[i].ln() - q.var[i].ln()) + (q.var[i] + d * d) / (2.0 * p.var[i]) - 0.5
        })
        .sum())
}

/// Gaussian parameters as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct LatentNodes {
    pub mean: NodeId,
    pub var: NodeId,
}

impl LatentNodes {
    pub fn value(&self, tape: &Tape) -> GaussianLatent {
        GaussianLatent { mean: tape.value(self.mean).data().to_vec(), var: tape.value(self.var).data().to_vec() }
    }

    /// Reparameterized sample with fixed `noise`.
    pub fn sample(&self, tape: &mut Tape, noise: &[f64]) -> Result<NodeId> {
        let eps = tape.leaf(Tensor::vector(noise.to_vec()));
        let sd = tape.sqrt(self.var)?;
        let scaled = tape.mul(sd, eps)?;
        tape.add(self.mean, scaled)
    }

    /// `KL(self ‖ prior)` on the tape, same formula as [`kl_gaussian`].
    pub fn kl(&self, tape: &mut Tape, prior: &LatentNodes) -> Result<NodeId> {
        let lvp = tape.ln(prior.var)?;
        let lvq = tape.ln(self.var)?;
        let log_ratio = tape.sub(lvp, lvq)?;
        let d = tape.sub(self.mean, prior.mean)?;
        let d2 = tape.mul(d, d)?;
        let num = tape.add(self.var, d2)?;
        let frac = tape.div(num, prior.var)?;
        let inner = tape.add(log_ratio, frac)?;
        let half = tape.scale(inner, 0.5)?;
        let terms = tape.offset(half, -0.5)?;
        tape.sum(terms)
    }
}

/// One-hidden-layer MLP producing `μ = W_μ tanh(W x + b) + b_μ` and
/// `σ² = softplus(W_σ tanh(W x + b) + b_σ) + 1e-4`.
#[derive(Clone, Debug)]
pub struct GaussianHead {
    hidden: Linear,
    mean: Linear,
    var: Linear,
}

impl GaussianHead {
    pub fn new(prefix: &str, input: usize, hidden: usize, latent: usize) -> Self {
        Self {
            hidden: Linear::new(format!("{prefix}.hidden"), input, hidden),
            mean: Linear::new(format!("{prefix}.mean"), hidden, latent),
            var: Linear::new(format!("{prefix}.var"), hidden, latent),
        }
    }

    pub fn init(&self, p: &mut ParamSet, rng: &mut RngStream) -> Result<()> {
        self.hidden.init(p, rng)?;
        self.mean.init(p, rng)?;
        self.var.init(p, rng)
    }

    pub fn bind(&self, b: &Binding) -> Result<GaussianHeadNodes> {
        Ok(GaussianHeadNodes { hidden: self.hidden.bind(b)?, mean: self.mean.bind(b)?, var: self.var.bind(b)? })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GaussianHeadNodes {
    hidden: LinearNodes,
    mean: LinearNodes,
    var: LinearNodes,
}

impl GaussianHeadNodes {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<LatentNodes> {
        let pre = self.hidden.forward(tape, x)?;
        let h = tape.tanh(pre)?;
        let mean = self.mean.forward(tape, h)?;
        let v_pre = self.var.forward(tape, h)?;
        let sp = tape.softplus(v_pre)?;
        let var = tape.offset(sp, VARIANCE_FLOOR)?;
        Ok(LatentNodes { mean, var })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(m: f64, v: f64) -> GaussianLatent {
        GaussianLatent::new(vec![m], vec![v]).unwrap()
    }

    #[test]
    fn kl_closed_form_cases() {
        let q = GaussianLatent::new(vec![0.3, -1.0], vec![0.5, 2.0]).unwrap();
        assert_eq!(kl_gaussian(&q, &q).unwrap(), 0.0);
        assert!((kl_gaussian(&g(1.0, 1.0), &g(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((kl_gaussian(&g(0.0, e), &g(0.0, 1.0)).unwrap() - (e / 2.0 - 1.0)).abs() < 1e-15);
        assert!(kl_gaussian(&q, &g(0.0, 1.0)).is_err());
    }

    #[test]
    fn sampling_edges() {
        let q = GaussianLatent::new(vec![0.3, -1.0], vec![VARIANCE_FLOOR, 2.0]).unwrap();
        assert_eq!(sample_latent(&q, &[0.0, 0.0]).unwrap(), q.mean);
        let z = sample_latent(&q, &[1.0, 0.0]).unwrap();
        assert!((z[0] - (0.3 + 0.01)).abs() < 1e-15);
        assert!(sample_latent(&q, &[1.0]).is_err());
        assert!(GaussianLatent::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn tape_kl_matches_plain() {
        let q = GaussianLatent::new(vec![0.3, -1.0, 0.0], vec![0.5, 2.0, 1.3]).unwrap();
        let p = GaussianLatent::new(vec![-0.2, 0.4, 1.0], vec![1.5, 0.7, 0.2]).unwrap();
        let mut t = Tape::new();
        let mk = |t: &mut Tape, g: &GaussianLatent| LatentNodes {
            mean: t.leaf(Tensor::vector(g.mean.clone())),
            var: t.leaf(Tensor::vector(g.var.clone())),
        };
        let qn = mk(&mut t, &q);
        let pn = mk(&mut t, &p);
        let kl = qn.kl(&mut t, &pn).unwrap();
        assert!((t.value(kl).item() - kl_gaussian(&q, &p).unwrap()).abs() < 1e-13);
        let same = qn.kl(&mut t, &qn).unwrap();
        assert_eq!(t.value(same).item(), 0.0);
    }
}
