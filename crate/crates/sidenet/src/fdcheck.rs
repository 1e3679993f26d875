//! Gradient verification against central finite differences.
//!
//! The loss builder must deterministically rebuild the same scalar loss from
//! the current parameter values; this is checked by evaluating it twice and
//! comparing bitwise before any perturbation happens.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::ParamSet;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Compare the analytic gradient of every trainable scalar entry against
/// `(L(p + eps) - L(p - eps)) / (2 eps)` and return the maximum relative
/// error `|g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)`.
pub fn finite_diff_check<F>(set: &mut ParamSet, epsilon: f64, mut build_loss: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");

    let eval = |set: &ParamSet, build: &mut F| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, set)?;
        if !g.value(loss).is_scalar() {
            return Err(Error::shape("finite_diff_check", "loss must be scalar".to_string()));
        }
        Ok(g.value(loss).scalar_value())
    };

    let l0 = eval(set, &mut build_loss)?;
    let l1 = eval(set, &mut build_loss)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::invalid(format!(
            "non-deterministic loss builder: {l0:?} vs {l1:?} at identical parameters"
        )));
    }

    // Analytic gradients.
    set.zero_grads();
    let mut g = Graph::new();
    let loss = build_loss(&mut g, set)?;
    g.backprop(loss)?;
    g.export_grads(set);
    let analytic: Vec<Vec<f64>> = set.iter().map(|p| p.grad.data().to_vec()).collect();

    let mut max_rel = 0.0f64;
    for idx in 0..set.len() {
        if !set.get(idx).trainable {
            continue;
        }
        for j in 0..set.get(idx).value.numel() {
            let orig = set.get(idx).value.data()[j];
            set.get_mut(idx).value.data_mut()[j] = orig + epsilon;
            let lp = eval(set, &mut build_loss)?;
            set.get_mut(idx).value.data_mut()[j] = orig - epsilon;
            let lm = eval(set, &mut build_loss)?;
            set.get_mut(idx).value.data_mut()[j] = orig;

            let fd = (lp - lm) / (2.0 * epsilon);
            let ga = analytic[idx][j];
            let rel = (ga - fd).abs() / (ga.abs() + fd.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    set.zero_grads();
    Ok(max_rel)
}
