use super::graph::{Graph, NodeId};
use crate::error::{Error, Result};

/// Largest parameter count `grad_check` will sweep.
pub const MAX_CHECKED_PARAMS: usize = 10_000;

/// `|a − b| / max(1e-12, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-12)
}

/// Maximum relative error between reverse-mode gradients and central
/// differences with step `eps`, over every entry of every trainable leaf.
/// Leaves the graph evaluated at its original leaf values.
pub fn grad_check(graph: &mut Graph, loss: NodeId, eps: f64) -> Result<f64> {
    let leaves = graph.trainable_leaves();
    let total: usize = leaves.iter().map(|&l| graph.value(l).len()).sum();
    if total > MAX_CHECKED_PARAMS {
        return Err(Error::invalid(format!(
            "grad_check over {total} parameters exceeds the {MAX_CHECKED_PARAMS} limit"
        )));
    }
    let grads = graph.backward(loss)?;
    let mut worst = 0.0f64;
    for &leaf in &leaves {
        let analytic = grads.get(leaf).expect("trainable leaf gradient").clone();
        let base = graph.value(leaf).clone();
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus.data_mut()[k] += eps;
            graph.evaluate(&[(leaf, plus)])?;
            let lp = graph.value(loss).item();
            let mut minus = base.clone();
            minus.data_mut()[k] -= eps;
            graph.evaluate(&[(leaf, minus)])?;
            let lm = graph.value(loss).item();
            let numeric = (lp - lm) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
        graph.evaluate(&[(leaf, base)])?;
    }
    Ok(worst)
}
