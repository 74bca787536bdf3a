use nalgebra::Vector3;

use super::{const_loss, grid_from, reg_loss, smooth_loss, LossReport, LossWeights, ReprojContext};
use crate::error::Result;
use crate::fusion::{fuse, AttentionMap, DepthField};
use crate::groundprior::GroundPrior;
use crate::viewsynth::RigidPose;

/// Fields entering the combined objective.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub prior: &'a GroundPrior,
    /// Pre-fusion depth.
    pub d_hat: &'a DepthField,
    pub alpha: &'a AttentionMap,
    pub poses: &'a [RigidPose],
}

/// `L_reproj + l_smooth L_smooth + l_const L_const + l_reg L_reg`.
///
/// Reprojection and smoothness see the fused depth, so their gradients
/// reach `d_hat` scaled by `1 - alpha` and `alpha` scaled by `G - d_hat`;
/// the constraint and the regularizer act on `d_hat` and `alpha` directly.
/// `grad_depth` is with respect to `d_hat`.
pub fn total_loss_with(ctx: &ReprojContext, inputs: LossInputs<'_>, weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    let fused = fuse(inputs.d_hat, inputs.prior, inputs.alpha)?;
    let reproj = ctx.evaluate(&fused, inputs.poses)?.report;
    let smooth = smooth_loss(&fused, ctx.target())?;
    let constraint = const_loss(inputs.alpha, inputs.d_hat, inputs.prior)?;
    let reg = reg_loss(inputs.alpha, weights.tau)?;

    let (w, h) = fused.shape();
    let n = w * h;
    let mut grad_depth = Vec::with_capacity(n);
    let mut grad_alpha = Vec::with_capacity(n);
    for i in 0..n {
        let through_fusion = reproj.grad_depth.values()[i] + weights.lambda_smooth * smooth.grad_depth.values()[i];
        let alpha = inputs.alpha.values()[i];
        let (d_fused_d_hat, d_fused_d_alpha) = if inputs.prior.valid()[i] {
            (1.0 - alpha, inputs.prior.depth.values()[i] - inputs.d_hat.values()[i])
        } else {
            (1.0, 0.0)
        };
        grad_depth.push(through_fusion * d_fused_d_hat + weights.lambda_const * constraint.grad_depth.values()[i]);
        grad_alpha.push(
            through_fusion * d_fused_d_alpha
                + weights.lambda_const * constraint.grad_alpha.values()[i]
                + weights.lambda_reg * reg.grad_alpha.values()[i],
        );
    }

    let value = reproj.value
        + weights.lambda_smooth * smooth.value
        + weights.lambda_const * constraint.value
        + weights.lambda_reg * reg.value;

    let mut report = LossReport::new(value, w, h);
    report.grad_depth = grid_from(w, h, grad_depth);
    report.grad_alpha = grid_from(w, h, grad_alpha);
    report.grad_translation = reproj.grad_translation.iter().map(|g: &Vector3<f64>| *g).collect();
    report.terms.reproj = reproj.value;
    report.terms.smooth = smooth.value;
    report.terms.constraint = constraint.value;
    report.terms.reg = reg.value;
    Ok(report)
}

/// [`total_loss_with`] building the reprojection context on the fly.
pub fn total_loss(
    target: &crate::grid::Image,
    sources: &[crate::grid::Image],
    cam: &crate::camgeo::CameraModel,
    inputs: LossInputs<'_>,
    weights: &LossWeights,
) -> Result<LossReport> {
    let ctx = ReprojContext::new(target, sources, cam)?;
    total_loss_with(&ctx, inputs, weights)
}
