//! Recurrent building blocks: GRU cell, embedding table, affine and
//! softmax output layers. Each layer is a named description whose tensors
//! live in a [`ParamSet`]; binding it against a tape yields node handles.

use crate::error::{Error, Result};
use crate::numerics::{NodeId, RngStream, Tape, Tensor};
use crate::params::{Binding, ParamSet};

/// Half-width of the Glorot-uniform initializer for a `rows x cols` matrix.
pub fn glorot(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Gated recurrent unit with input size `input` and hidden size `hidden`.
///
/// A layer built with [`GruLayer::conditioned`] also takes a per-sequence
/// conditioning vector of size `cond` at every step. Its input weights are
/// stored as two blocks, `W_g` for the step input and `C_g` for the
/// conditioning vector, which is the same map as one matrix applied to the
/// concatenation `[x; cond]`; the `C_g cond` products are computed once per
/// sequence.
#[derive(Clone, Debug)]
pub struct GruLayer {
    prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub cond: usize,
}

const GATES: [&str; 3] = ["z", "r", "h"];

impl GruLayer {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self { prefix: prefix.into(), input, hidden, cond: 0 }
    }

    pub fn conditioned(prefix: impl Into<String>, input: usize, cond: usize, hidden: usize) -> Self {
        Self { prefix: prefix.into(), input, hidden, cond }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut RngStream) -> Result<()> {
        for g in GATES {
            params.insert_uniform(format!("{}.w_{g}", self.prefix), &[self.hidden, self.input], glorot(self.hidden, self.input), rng)?;
            params.insert_uniform(format!("{}.u_{g}", self.prefix), &[self.hidden, self.hidden], glorot(self.hidden, self.hidden), rng)?;
            params.insert_zeros(format!("{}.b_{g}", self.prefix), &[self.hidden])?;
            if self.cond > 0 {
                params.insert_uniform(format!("{}.c_{g}", self.prefix), &[self.hidden, self.cond], glorot(self.hidden, self.cond), rng)?;
            }
        }
        Ok(())
    }

    pub fn bind(&self, b: &Binding) -> Result<GruNodes> {
        let n = |s: &str| b.node(&format!("{}.{s}", self.prefix));
        Ok(GruNodes {
            w_z: n("w_z")?,
            u_z: n("u_z")?,
            b_z: n("b_z")?,
            w_r: n("w_r")?,
            u_r: n("u_r")?,
            b_r: n("b_r")?,
            w_h: n("w_h")?,
            u_h: n("u_h")?,
            b_h: n("b_h")?,
            c: if self.cond > 0 { Some([n("c_z")?, n("c_r")?, n("c_h")?]) } else { None },
            hidden: self.hidden,
        })
    }
}

#[derive(Clone, Debug)]
pub struct GruNodes {
    w_z: NodeId,
    u_z: NodeId,
    b_z: NodeId,
    w_r: NodeId,
    u_r: NodeId,
    b_r: NodeId,
    w_h: NodeId,
    u_h: NodeId,
    b_h: NodeId,
    c: Option<[NodeId; 3]>,
    hidden: usize,
}

/// Per-gate bias contributions `C_g cond` of a conditioned GRU.
#[derive(Clone, Copy, Debug)]
pub struct GruCondition([NodeId; 3]);

impl GruNodes {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One GRU update:
    /// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
    /// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
    pub fn step(&self, tape: &mut Tape, x: NodeId, h: NodeId) -> Result<NodeId> {
        if self.c.is_some() {
            return Err(Error::Invalid("conditioned GRU stepped without its condition".into()));
        }
        self.step_inner(tape, x, h, None)
    }

    /// Projects the conditioning vector once for a whole sequence.
    pub fn condition(&self, tape: &mut Tape, cond: NodeId) -> Result<GruCondition> {
        let c = self.c.ok_or_else(|| Error::Invalid("GRU layer is not conditioned".into()))?;
        Ok(GruCondition([tape.matmul(c[0], cond)?, tape.matmul(c[1], cond)?, tape.matmul(c[2], cond)?]))
    }

    pub fn step_conditioned(&self, tape: &mut Tape, x: NodeId, h: NodeId, cond: &GruCondition) -> Result<NodeId> {
        self.step_inner(tape, x, h, Some(cond))
    }

    fn step_inner(&self, tape: &mut Tape, x: NodeId, h: NodeId, cond: Option<&GruCondition>) -> Result<NodeId> {
        let gate = |tape: &mut Tape, w, u, b, hin, k: usize| -> Result<NodeId> {
            let wx = tape.matmul(w, x)?;
            let uh = tape.matmul(u, hin)?;
            let s = tape.add(wx, uh)?;
            let s = tape.add(s, b)?;
            match cond {
                Some(c) => tape.add(s, c.0[k]),
                None => Ok(s),
            }
        };
        let z_pre = gate(tape, self.w_z, self.u_z, self.b_z, h, 0)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = gate(tape, self.w_r, self.u_r, self.b_r, h, 1)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h)?;
        let c_pre = gate(tape, self.w_h, self.u_h, self.b_h, rh, 2)?;
        let cand = tape.tanh(c_pre)?;
        // h + z ⊙ (h̃ − h)
        let diff = tape.sub(cand, h)?;
        let zd = tape.mul(z, diff)?;
        tape.add(h, zd)
    }

    /// Runs the cell over `inputs` from `h0`, returning every hidden state.
    pub fn run(&self, tape: &mut Tape, inputs: &[NodeId], h0: NodeId) -> Result<Vec<NodeId>> {
        let mut h = h0;
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            h = self.step(tape, x, h)?;
            out.push(h);
        }
        Ok(out)
    }

    pub fn zero_state(&self, tape: &mut Tape) -> NodeId {
        tape.leaf(Tensor::zeros(&[self.hidden]))
    }
}

/// Token embedding table of shape `vocab x dim`.
#[derive(Clone, Debug)]
pub struct Embedding {
    name: String,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(name: impl Into<String>, vocab: usize, dim: usize) -> Self {
        Self { name: name.into(), vocab, dim }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut RngStream) -> Result<()> {
        // Unit-variance rows.
        params.insert_uniform(self.name.clone(), &[self.vocab, self.dim], 3f64.sqrt(), rng)
    }

    pub fn bind(&self, b: &Binding) -> Result<EmbeddingNodes> {
        Ok(EmbeddingNodes { table: b.node(&self.name)?, vocab: self.vocab })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EmbeddingNodes {
    table: NodeId,
    vocab: usize,
}

impl EmbeddingNodes {
    pub fn lookup(&self, tape: &mut Tape, id: u32) -> Result<NodeId> {
        let id = id as usize;
        if id >= self.vocab {
            return Err(Error::OutOfRange { what: "vocabulary", index: id, len: self.vocab });
        }
        tape.gather(self.table, id)
    }
}

/// Affine map `W x + b` with `W: output x input`.
#[derive(Clone, Debug)]
pub struct Linear {
    prefix: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, input: usize, output: usize) -> Self {
        Self { prefix: prefix.into(), input, output }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut RngStream) -> Result<()> {
        params.insert_uniform(format!("{}.w", self.prefix), &[self.output, self.input], glorot(self.output, self.input), rng)?;
        params.insert_zeros(format!("{}.b", self.prefix), &[self.output])
    }

    pub fn bind(&self, b: &Binding) -> Result<LinearNodes> {
        Ok(LinearNodes {
            w: b.node(&format!("{}.w", self.prefix))?,
            b: b.node(&format!("{}.b", self.prefix))?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearNodes {
    w: NodeId,
    b: NodeId,
}

impl LinearNodes {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        tape.affine(self.w, x, self.b)
    }

    /// Log-probabilities `log softmax(W x + b)`.
    pub fn log_probs(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let logits = self.forward(tape, x)?;
        tape.log_softmax(logits)
    }
}

/// `softmax(P h + b)` computed outside any tape, stabilized by subtracting
/// the largest logit.
pub fn next_token_distribution(h: &[f64], projection: &Tensor, bias: &[f64]) -> Result<Vec<f64>> {
    if projection.shape() != [bias.len(), h.len()] {
        return Err(Error::shape("next_token_distribution", &[projection.shape(), &[h.len()], &[bias.len()]]));
    }
    let logits: Vec<f64> = (0..bias.len())
        .map(|i| projection.row(i).iter().zip(h).map(|(p, x)| p * x).sum::<f64>() + bias[i])
        .collect();
    Ok(softmax(&logits))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
