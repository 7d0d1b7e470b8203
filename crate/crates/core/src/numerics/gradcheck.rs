use super::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// `|a - n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// at every scalar of `params`, returning the worst relative error.
///
/// `loss_fn` receives a fresh tape with one leaf per entry of `params` and
/// must return a scalar node. It has to be deterministic, so any noise it
/// uses must be fixed outside the closure.
pub fn gradient_check<F>(loss_fn: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Invalid(format!("eps {eps} outside (0, 1e-3]")));
    }
    let eval = |ps: &[Tensor]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = loss_fn(&mut tape, &ids)?;
        if !tape.value(root).is_finite() {
            return Err(Error::NonFinite { op: "loss" });
        }
        Ok((tape, ids, root))
    };

    let (tape, ids, root) = eval(params)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grads.get_or_zero(&tape, id)).collect();

    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for (p, a) in analytic.iter().enumerate() {
        for k in 0..work[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + eps;
            let (t, _, r) = eval(&work)?;
            let up = t.value(r).item();
            work[p].data_mut()[k] = orig - eps;
            let (t, _, r) = eval(&work)?;
            let down = t.value(r).item();
            work[p].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(a.data()[k], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let params = vec![Tensor::vector(vec![0.3, -1.2, 2.0]), Tensor::vector(vec![1.5, 0.5, -0.7])];
        let err = gradient_check(
            |t, p| {
                let xy = t.mul(p[0], p[1])?;
                let xx = t.mul(p[0], p[0])?;
                let s = t.add(xy, xx)?;
                t.sum(s)
            },
            &params,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn rejects_bad_eps() {
        let p = [Tensor::scalar(1.0)];
        assert!(gradient_check(|t, p| t.sum(p[0]), &p, 0.0).is_err());
        assert!(gradient_check(|t, p| t.sum(p[0]), &p, 1e-2).is_err());
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let p = [Tensor::scalar(0.0)];
        assert!(gradient_check(|t, p| t.ln(p[0]), &p, 1e-5).is_err());
    }
}
