use super::photometric::sign;
use super::{grid_from, LossReport};
use crate::error::Result;
use crate::fusion::{AttentionMap, DepthField};
use crate::grid::pairwise_sum;
use crate::groundprior::GroundPrior;

/// Ground constraint `(1/N) sum_i alpha_i^2 |D_hat_i - G_i|` on the
/// pre-fusion depth.
///
/// Every pixel counts in `N`; pixels without a valid prior contribute
/// nothing (their attention is zero by construction).
pub fn const_loss(a: &AttentionMap, d_hat: &DepthField, gp: &GroundPrior) -> Result<LossReport> {
    let shape = d_hat.shape();
    a.alpha.ensure_shape(shape)?;
    gp.depth.ensure_shape(shape)?;
    let (w, h) = shape;
    let n = (w * h) as f64;

    let mut terms = vec![0.0; w * h];
    let mut grad_alpha = vec![0.0; w * h];
    let mut grad_depth = vec![0.0; w * h];
    for i in 0..w * h {
        if !gp.valid()[i] {
            continue;
        }
        let alpha = a.values()[i];
        let diff = d_hat.values()[i] - gp.depth.values()[i];
        terms[i] = alpha * alpha * diff.abs();
        grad_alpha[i] = 2.0 * alpha * diff.abs() / n;
        grad_depth[i] = alpha * alpha * sign(diff) / n;
    }
    let value = pairwise_sum(&terms) / n;
    let mut report = LossReport::new(value, w, h);
    report.grad_alpha = grid_from(w, h, grad_alpha);
    report.grad_depth = grid_from(w, h, grad_depth);
    report.terms.constraint = value;
    Ok(report)
}
