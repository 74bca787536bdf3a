//! Attention-weighted blending of predicted depth with the ground prior,
//! plus the activations that turn raw predictor outputs into valid fields.

use crate::error::{Error, Result};
use crate::grid::ScalarGrid;
use crate::groundprior::GroundPrior;

/// Above this the softplus is evaluated as the identity.
const SOFTPLUS_LINEAR_ABOVE: f64 = 30.0;

/// Blend weights in `[0, 1]`, zero wherever the ground prior is invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub alpha: ScalarGrid,
}

impl AttentionMap {
    /// Checks the range invariant.
    pub fn new(alpha: ScalarGrid) -> Result<Self> {
        if let Some(x) = alpha.values().iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::invalid(format!("attention value {x} outside [0, 1]")));
        }
        Ok(Self { alpha })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            alpha: ScalarGrid::filled(width, height, 0.0),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.alpha.shape()
    }

    pub fn values(&self) -> &[f64] {
        self.alpha.values()
    }

    pub fn mean(&self) -> f64 {
        crate::grid::pairwise_sum(self.values()) / self.values().len() as f64
    }
}

/// Metric depth map; valid pixels are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthField {
    pub depth: ScalarGrid,
}

impl DepthField {
    pub fn new(depth: ScalarGrid) -> Result<Self> {
        let bad = depth
            .values()
            .iter()
            .zip(depth.mask())
            .find(|(d, &ok)| ok && !(**d > 0.0 && d.is_finite()));
        if let Some((d, _)) = bad {
            return Err(Error::invalid(format!("depth must be > 0 on valid pixels, got {d}")));
        }
        Ok(Self { depth })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.depth.shape()
    }

    pub fn values(&self) -> &[f64] {
        self.depth.values()
    }
}

/// `D_i = (1 - alpha_i) * D_hat_i + alpha_i * G_i`.
pub fn fuse(d_hat: &DepthField, gp: &GroundPrior, a: &AttentionMap) -> Result<DepthField> {
    let shape = d_hat.shape();
    gp.depth.ensure_shape(shape)?;
    a.alpha.ensure_shape(shape)?;

    let (w, h) = shape;
    let mut values = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let alpha = a.values()[i];
        let dh = d_hat.values()[i];
        if !gp.valid()[i] {
            if alpha != 0.0 {
                return Err(Error::ContractViolation(format!(
                    "attention {alpha} on pixel {i} where the ground prior is invalid"
                )));
            }
            values.push(dh);
        } else {
            values.push((1.0 - alpha) * dh + alpha * gp.depth.values()[i]);
        }
    }
    let depth = ScalarGrid::from_parts(w, h, values, d_hat.depth.mask().to_vec())?;
    Ok(DepthField { depth })
}

/// Overflow-safe `ln(1 + e^x)`, never below the smallest positive normal.
pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        x
    } else {
        x.exp().ln_1p().max(f64::MIN_POSITIVE)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > SOFTPLUS_LINEAR_ABOVE {
        y
    } else {
        y + (-(-y).exp_m1()).ln()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softplus depth head.
pub fn depth_activation(raw: &ScalarGrid) -> DepthField {
    DepthField {
        depth: raw.map(softplus),
    }
}

/// Logistic attention head, forced to zero where the prior is invalid.
pub fn attention_activation(raw: &ScalarGrid, prior_valid: &[bool]) -> Result<AttentionMap> {
    if prior_valid.len() != raw.len() {
        return Err(Error::invalid(format!(
            "prior mask of length {} does not match a grid of {} pixels",
            prior_valid.len(),
            raw.len()
        )));
    }
    let values = raw
        .values()
        .iter()
        .zip(prior_valid)
        .map(|(&x, &ok)| if ok { logistic(x) } else { 0.0 })
        .collect();
    Ok(AttentionMap {
        alpha: ScalarGrid::from_values(raw.width(), raw.height(), values)?,
    })
}
