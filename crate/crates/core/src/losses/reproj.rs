//! Minimum reprojection loss with auto-masking.
//!
//! Each source is warped into the target view and scored with the
//! photometric error; a pixel keeps the smallest error over the sources
//! (ties go to the first) and is dropped when that error is not below the
//! smallest error of the unwarped sources. A pixel is scored against a
//! source only when its whole 3x3 SSIM block warped validly.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::photometric::{neighborhood, photometric_field, PhotometricField};
use super::{grid_from, LossReport};
use crate::camgeo::CameraModel;
use crate::error::{Error, Result};
use crate::fusion::DepthField;
use crate::grid::{pairwise_sum, Image};
use crate::viewsynth::{warp, RigidPose, WarpResult};

/// Target, sources and camera, with the pose-independent identity errors
/// computed once.
#[derive(Debug, Clone)]
pub struct ReprojContext {
    target: Image,
    sources: Vec<Image>,
    cam: CameraModel,
    identity_min: Vec<f64>,
}

/// Everything computed on the way to the loss.
#[derive(Debug, Clone)]
pub struct ReprojDetails {
    pub report: LossReport,
    /// Pixels entering the mean.
    pub included: Vec<bool>,
    /// Source chosen by the minimum, if any source is valid.
    pub selected: Vec<Option<usize>>,
    /// Photometric error of each warped source (0 where invalid).
    pub warped_pe: Vec<Vec<f64>>,
    pub warped_valid: Vec<Vec<bool>>,
    /// `|target - warped|` of each source, the L1 kink location.
    pub warped_l1: Vec<Vec<f64>>,
    /// Minimum photometric error of the unwarped sources.
    pub identity_pe: Vec<f64>,
    pub warps: Vec<WarpResult>,
}

impl ReprojContext {
    pub fn new(target: &Image, sources: &[Image], cam: &CameraModel) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("reprojection needs at least one source frame"));
        }
        target.ensure_shape(cam.shape())?;
        target.ensure_unit_range()?;
        for s in sources {
            s.ensure_shape(cam.shape())?;
            s.ensure_unit_range()?;
        }
        let identity: Vec<PhotometricField> = sources.iter().map(|s| photometric_field(target, s, None)).collect();
        let n = target.data().len();
        let identity_min = (0..n)
            .map(|i| identity.iter().map(|f| f.pe[i]).fold(f64::INFINITY, f64::min))
            .collect();
        Ok(Self {
            target: target.clone(),
            sources: sources.to_vec(),
            cam: cam.clone(),
            identity_min,
        })
    }

    pub fn camera(&self) -> &CameraModel {
        &self.cam
    }

    pub fn target(&self) -> &Image {
        &self.target
    }

    pub fn sources(&self) -> &[Image] {
        &self.sources
    }

    pub fn evaluate(&self, depth: &DepthField, poses: &[RigidPose]) -> Result<ReprojDetails> {
        if poses.len() != self.sources.len() {
            return Err(Error::invalid(format!(
                "{} poses for {} source frames",
                poses.len(),
                self.sources.len()
            )));
        }
        let (w, h) = self.cam.shape();
        let n = w * h;

        let warps: Vec<WarpResult> = self
            .sources
            .iter()
            .zip(poses)
            .map(|(src, pose)| warp(src, depth, pose, &self.cam))
            .collect::<Result<_>>()?;
        let fields: Vec<PhotometricField> = warps
            .iter()
            .map(|wr| photometric_field(&self.target, &wr.image, Some(&wr.valid)))
            .collect();

        let mut selected = vec![None; n];
        let mut included = vec![false; n];
        let mut picked = Vec::with_capacity(n);
        for j in 0..n {
            let mut best: Option<(usize, f64)> = None;
            for (s, f) in fields.iter().enumerate() {
                if f.valid[j] && best.map_or(true, |(_, e)| f.pe[j] < e) {
                    best = Some((s, f.pe[j]));
                }
            }
            if let Some((s, e)) = best {
                selected[j] = Some(s);
                if e < self.identity_min[j] {
                    included[j] = true;
                    picked.push(e);
                }
            }
        }
        let count = picked.len();
        if count == 0 {
            return Err(Error::DegenerateBatch);
        }
        let value = pairwise_sum(&picked) / count as f64;
        let weight = 1.0 / count as f64;

        let mut grad_depth = vec![0.0; n];
        let mut grad_translation = Vec::with_capacity(self.sources.len());
        for (s, (field, wr)) in fields.iter().zip(&warps).enumerate() {
            let coef: Vec<f64> = (0..n)
                .map(|j| if included[j] && selected[j] == Some(s) { weight } else { 0.0 })
                .collect();
            let grad_warped = gather_block_gradient(field, &coef, w, h);
            for k in 0..n {
                if wr.valid[k] {
                    grad_depth[k] += grad_warped[k] * wr.d_depth[k];
                }
            }
            let component = |c: usize| {
                let xs: Vec<f64> = (0..n)
                    .map(|k| if wr.valid[k] { grad_warped[k] * wr.d_translation[k][c] } else { 0.0 })
                    .collect();
                pairwise_sum(&xs)
            };
            grad_translation.push(Vector3::new(component(0), component(1), component(2)));
        }

        let mut report = LossReport::new(value, w, h);
        report.grad_depth = grid_from(w, h, grad_depth);
        report.grad_translation = grad_translation;
        report.terms.reproj = value;

        Ok(ReprojDetails {
            report,
            included,
            selected,
            warped_pe: fields.iter().map(|f| f.pe.clone()).collect(),
            warped_valid: fields.iter().map(|f| f.valid.clone()).collect(),
            warped_l1: fields.into_iter().map(|f| f.l1).collect(),
            identity_pe: self.identity_min.clone(),
            warps,
        })
    }
}

/// `dL/dwarped_k = sum_j coef_j * d pe_j / d warped_k`, gathered per `k`
/// over the 3x3 blocks that contain it.
fn gather_block_gradient(field: &PhotometricField, coef: &[f64], w: usize, h: usize) -> Vec<f64> {
    (0..w * h)
        .into_par_iter()
        .map(|k| {
            let (ku, kv) = (k % w, k / w);
            let mut acc = 0.0;
            for jv in kv.saturating_sub(1)..=(kv + 1).min(h - 1) {
                for ju in ku.saturating_sub(1)..=(ku + 1).min(w - 1) {
                    let j = jv * w + ju;
                    if coef[j] == 0.0 {
                        continue;
                    }
                    let idx = neighborhood(ju, jv, w, h);
                    for m in 0..9 {
                        if idx[m] == k {
                            acc += coef[j] * field.grad[j][m];
                        }
                    }
                }
            }
            acc
        })
        .collect()
}

/// Minimum reprojection loss of `target` against warped `sources`.
pub fn reproj_loss(
    target: &Image,
    sources: &[Image],
    d: &DepthField,
    poses: &[RigidPose],
    cam: &CameraModel,
) -> Result<LossReport> {
    Ok(ReprojContext::new(target, sources, cam)?.evaluate(d, poses)?.report)
}
