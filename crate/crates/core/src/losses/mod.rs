//! Training objectives, each returning its value together with analytic
//! gradients.
//!
//! Scalar reductions go through [`crate::grid::pairwise_sum`] over
//! per-pixel buffers so results do not depend on the thread count.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarGrid;

mod consistency;
mod photometric;
mod reg;
mod reproj;
mod smooth;
mod total;

pub use consistency::const_loss;
pub(crate) use photometric::neighborhood;
pub use photometric::{photometric_error, L1_WEIGHT, SSIM_C1, SSIM_C2, SSIM_WEIGHT};
pub use reg::reg_loss;
pub use reproj::{reproj_loss, ReprojContext, ReprojDetails};
pub use smooth::smooth_loss;
pub use total::{total_loss, total_loss_with, LossInputs};

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_smooth: f64,
    pub lambda_const: f64,
    pub lambda_reg: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_smooth: 1e-2,
            lambda_const: 0.1,
            lambda_reg: 0.1,
            tau: 0.25,
        }
    }
}

impl LossWeights {
    pub fn with_tau(tau: f64) -> Self {
        Self {
            tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("lambda_smooth", self.lambda_smooth),
            ("lambda_const", self.lambda_const),
            ("lambda_reg", self.lambda_reg),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {x}")));
            }
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        Ok(())
    }
}

/// Unweighted value of every term of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub reproj: f64,
    pub smooth: f64,
    pub constraint: f64,
    pub reg: f64,
}

/// Loss value plus gradients with respect to the depth and attention
/// fields and, for reprojection, each source translation.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub value: f64,
    pub grad_depth: ScalarGrid,
    pub grad_alpha: ScalarGrid,
    pub grad_translation: Vec<Vector3<f64>>,
    pub terms: LossTerms,
}

impl LossReport {
    pub(crate) fn new(value: f64, width: usize, height: usize) -> Self {
        Self {
            value,
            grad_depth: ScalarGrid::filled(width, height, 0.0),
            grad_alpha: ScalarGrid::filled(width, height, 0.0),
            grad_translation: Vec::new(),
            terms: LossTerms::default(),
        }
    }

    /// Gradient with respect to a pose scale `k` multiplying every source
    /// translation, given the unscaled translations.
    pub fn grad_pose_scale(&self, unit_translations: &[Vector3<f64>]) -> f64 {
        self.grad_translation
            .iter()
            .zip(unit_translations)
            .map(|(g, t)| g.dot(t))
            .sum()
    }
}

pub(crate) fn grid_from(width: usize, height: usize, values: Vec<f64>) -> ScalarGrid {
    ScalarGrid::from_values(width, height, values).expect("gradient buffer matches its grid")
}
