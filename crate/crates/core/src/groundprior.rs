//! Theoretical flat-ground depth image and the attention target fraction.

use rayon::prelude::*;

use crate::camgeo::CameraModel;
use crate::error::{Error, Result};
use crate::grid::ScalarGrid;

/// Default normalization cap, the usual 80 m evaluation range.
pub const DEFAULT_MAX_DEPTH: f64 = 80.0;

/// Denominators this close to zero are treated as the horizon.
const HORIZON_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorStatus {
    Ok,
    /// The ground plane passes through the optical center; nothing is valid.
    Degenerate,
}

/// Per-pixel depth of the ground plane `y = h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundPrior {
    pub depth: ScalarGrid,
    pub status: PriorStatus,
}

impl GroundPrior {
    pub fn valid(&self) -> &[bool] {
        self.depth.mask()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.depth.shape()
    }

    pub fn normalized(&self, max_depth: f64) -> Result<ScalarGrid> {
        normalize_prior(self, max_depth)
    }
}

/// Evaluates, for every pixel,
///
/// `d = (h + (R^T t)_y) / (R_{0,1} (u - cx) / fx + R_{1,1} (v - cy) / fy + R_{2,1})`
///
/// and keeps only strictly positive finite depths. The denominator is the
/// world-y component of the pixel ray `R^T K^-1 [u, v, 1]^T` and the numerator
/// is the height of the ground below the optical center, so this is exactly
/// the ray/plane intersection of [`crate::camgeo::unproject`] with `y = h`.
/// With the camera at the world origin the numerator reduces to `h`.
pub fn ground_depth(cam: &CameraModel) -> GroundPrior {
    let r = cam.rotation();
    let t = cam.translation();
    let numerator = cam.mount_height() + (r[(0, 1)] * t.x + r[(1, 1)] * t.y + r[(2, 1)] * t.z);
    let (w, h) = cam.shape();

    if numerator.abs() <= HORIZON_EPS * cam.mount_height() {
        log::warn!("ground plane passes through the optical center; ground prior is empty");
        return GroundPrior {
            depth: ScalarGrid::invalid(w, h),
            status: PriorStatus::Degenerate,
        };
    }

    let (ax, ay, az) = (r[(0, 1)] / cam.fx(), r[(1, 1)] / cam.fy(), r[(2, 1)]);
    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut values = vec![0.0; w];
            let mut valid = vec![false; w];
            for u in 0..w {
                let denom = ax * (u as f64 - cam.cx()) + ay * (v as f64 - cam.cy()) + az;
                if denom.abs() <= HORIZON_EPS {
                    continue;
                }
                let d = numerator / denom;
                if d > 0.0 && d.is_finite() {
                    values[u] = d;
                    valid[u] = true;
                }
            }
            (values, valid)
        })
        .collect();

    let mut values = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for (vals, ok) in rows {
        values.extend(vals);
        valid.extend(ok);
    }
    GroundPrior {
        depth: ScalarGrid::from_parts(w, h, values, valid).expect("shape matches camera"),
        status: PriorStatus::Ok,
    }
}

/// `clamp(d / max_depth, 0, 1)` on valid pixels, `0` elsewhere.
///
/// The returned grid is valid everywhere: it is a network input channel,
/// and validity travels separately in the prior's own mask.
pub fn normalize_prior(gp: &GroundPrior, max_depth: f64) -> Result<ScalarGrid> {
    if !(max_depth > 0.0 && max_depth.is_finite()) {
        return Err(Error::invalid(format!("max_depth must be > 0, got {max_depth}")));
    }
    let (w, h) = gp.shape();
    let values = gp
        .depth
        .values()
        .iter()
        .zip(gp.valid())
        .map(|(&d, &ok)| if ok { (d / max_depth).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    ScalarGrid::from_values(w, h, values)
}

/// Target attention fraction `tau = P_w H / (4 h W)` for a pathway of width
/// `pathway_width` meters seen by an `image_width x image_height` camera
/// mounted `cam_height` meters above the ground.
pub fn compute_tau(pathway_width: f64, image_height: f64, image_width: f64, cam_height: f64) -> Result<f64> {
    for (name, x) in [
        ("pathway width", pathway_width),
        ("image height", image_height),
        ("image width", image_width),
        ("camera height", cam_height),
    ] {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::invalid(format!("{name} must be > 0, got {x}")));
        }
    }
    let tau = pathway_width * image_height / (4.0 * cam_height * image_width);
    if tau >= 1.0 {
        return Err(Error::Config(format!(
            "tau = {tau} >= 1: a {pathway_width} m pathway is too wide for this camera"
        )));
    }
    Ok(tau)
}
