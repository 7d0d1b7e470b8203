use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: ParamSet,
    v: ParamSet,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Global L2 norm of a gradient set.
pub fn global_norm(grads: &ParamSet) -> f64 {
    grads.iter().map(|(_, g)| g.norm_sq()).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut ParamSet, max_norm: f64) -> Result<f64> {
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::NonFinite { op: "gradient norm" });
    }
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    Ok(norm)
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Invalid("gradient set does not match parameters".into()));
    }
    for ((name, p), (gname, g)) in params.iter().zip(grads.iter()) {
        if name != gname || p.shape() != g.shape() {
            return Err(Error::shape("adam_step", &[p.shape(), g.shape()]));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { op: "gradient" });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let updates = params.values_mut().zip(grads.iter()).zip(state.m.values_mut().zip(state.v.values_mut()));
    for ((p, (_, g)), (m, v)) in updates {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (k, &gk) in g.data().iter().enumerate() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn single(values: Vec<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(values)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = single(vec![1.0, -2.0]);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &single(vec![0.0, 0.0]), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0, -2.0]);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(vec![0.0, 0.0, 0.0]);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &single(vec![3.0, -0.5, 1e-2]), &mut st, &cfg).unwrap();
        for (x, sign) in p.get("w").unwrap().data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - sign * cfg.lr).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn clipping_scales_to_the_bound() {
        let mut g = single(vec![6.0, 8.0]);
        let before = clip_global_norm(&mut g, 1.0).unwrap();
        assert_eq!(before, 10.0);
        let d = g.get("w").unwrap().data();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
        let mut small = single(vec![0.1]);
        clip_global_norm(&mut small, 1.0).unwrap();
        assert_eq!(small.get("w").unwrap().data(), &[0.1]);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = single(vec![0.0]);
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &single(vec![f64::NAN]), &mut st, &AdamConfig::default()).is_err());
        assert!(clip_global_norm(&mut single(vec![f64::INFINITY]), 1.0).is_err());
    }
}
