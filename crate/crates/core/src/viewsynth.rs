//! Differentiable inverse warping: backproject target pixels with their
//! depth, move them into the source camera and sample the source image.
//!
//! Poses act in the camera frame (`p_src = R p_tgt + t`), so the world
//! extrinsics of the shared camera cancel out.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camgeo::{check_rotation, CameraModel};
use crate::error::{Error, Result};
use crate::fusion::DepthField;
use crate::grid::Image;

/// Rigid motion from the target camera frame to a source camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseFile", into = "PoseFile")]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("pose translation must be finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Same rotation, translation multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            rotation: self.rotation,
            translation: self.translation * k,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// On-disk pose: row-major `R` and `t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

impl TryFrom<PoseFile> for RigidPose {
    type Error = Error;

    fn try_from(f: PoseFile) -> Result<Self> {
        RigidPose::new(Matrix3::from_row_slice(&f.r), Vector3::from_column_slice(&f.t))
    }
}

impl From<RigidPose> for PoseFile {
    fn from(p: RigidPose) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = p.rotation[(i, j)];
            }
        }
        PoseFile {
            r,
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

/// Bilinear sample with its partial derivatives along `u` and `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub du: f64,
    pub dv: f64,
}

/// Lower corner of the interpolation cell along one axis. On integer
/// coordinates the cell above is used, except on the last pixel.
fn cell(x: f64, len: usize) -> (usize, f64) {
    if len == 1 {
        return (0, 0.0);
    }
    let i0 = (x.floor() as usize).min(len - 2);
    (i0, x - i0 as f64)
}

/// Four-neighbor bilinear interpolation; `None` outside `[0, W-1] x [0, H-1]`.
pub fn bilinear_sample(img: &Image, u: f64, v: f64) -> Option<Sample> {
    let (w, h) = img.shape();
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return None;
    }
    let (x0, fx) = cell(u, w);
    let (y0, fy) = cell(v, h);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (a, b) = (img.at(x0, y0), img.at(x1, y0));
    let (c, d) = (img.at(x0, y1), img.at(x1, y1));
    let top = (1.0 - fx) * a + fx * b;
    let bottom = (1.0 - fx) * c + fx * d;
    let dx = if w > 1 { 1.0 } else { 0.0 };
    let dy = if h > 1 { 1.0 } else { 0.0 };
    Some(Sample {
        value: (1.0 - fy) * top + fy * bottom,
        du: dx * ((1.0 - fy) * (b - a) + fy * (d - c)),
        dv: dy * (bottom - top),
    })
}

/// Source image resampled into the target view.
#[derive(Debug, Clone)]
pub struct WarpResult {
    /// Sampled intensities; invalid pixels hold 0.
    pub image: Image,
    /// In bounds with positive source depth.
    pub valid: Vec<bool>,
    /// Continuous source coordinates of every valid pixel.
    pub coords: Vec<(f64, f64)>,
    /// `d(sample)/d(depth)` of the pixel's own target depth.
    pub d_depth: Vec<f64>,
    /// `d(sample)/d(translation)`.
    pub d_translation: Vec<Vector3<f64>>,
}

struct PixelWarp {
    valid: bool,
    value: f64,
    coords: (f64, f64),
    d_depth: f64,
    d_translation: Vector3<f64>,
}

const INVALID: PixelWarp = PixelWarp {
    valid: false,
    value: 0.0,
    coords: (f64::NAN, f64::NAN),
    d_depth: 0.0,
    d_translation: Vector3::new(0.0, 0.0, 0.0),
};

fn warp_pixel(source: &Image, cam: &CameraModel, pose: &RigidPose, u: usize, v: usize, depth: Option<f64>) -> PixelWarp {
    let Some(d) = depth else {
        return INVALID;
    };
    let ray = cam.ray(u as f64, v as f64);
    let q = pose.rotation * ray + pose.translation / d;
    if !(q.z > 0.0) {
        return INVALID;
    }
    // offsets from the pixel itself keep the identity pose exact
    let us = u as f64 + cam.fx() * (q.x / q.z - ray.x);
    let vs = v as f64 + cam.fy() * (q.y / q.z - ray.y);
    let p = q * d;
    let inv_z = 1.0 / p.z;
    let Some(s) = bilinear_sample(source, us, vs) else {
        return INVALID;
    };
    let du_dp = Vector3::new(cam.fx() * inv_z, 0.0, -cam.fx() * p.x * inv_z * inv_z);
    let dv_dp = Vector3::new(0.0, cam.fy() * inv_z, -cam.fy() * p.y * inv_z * inv_z);
    let d_translation = du_dp * s.du + dv_dp * s.dv;
    PixelWarp {
        valid: true,
        value: s.value,
        coords: (us, vs),
        d_depth: d_translation.dot(&(pose.rotation * ray)),
        d_translation,
    }
}

/// Warps `source` into the target view described by `depth` and `pose`.
pub fn warp(source: &Image, depth: &DepthField, pose: &RigidPose, cam: &CameraModel) -> Result<WarpResult> {
    let shape = cam.shape();
    depth.depth.ensure_shape(shape)?;
    let (w, h) = shape;

    let pixels: Vec<PixelWarp> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = (i % w, i / w);
            warp_pixel(source, cam, pose, u, v, depth.depth.get(u, v))
        })
        .collect();

    let mut data = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    let mut coords = Vec::with_capacity(w * h);
    let mut d_depth = Vec::with_capacity(w * h);
    let mut d_translation = Vec::with_capacity(w * h);
    for p in pixels {
        data.push(p.value);
        valid.push(p.valid);
        coords.push(p.coords);
        d_depth.push(p.d_depth);
        d_translation.push(p.d_translation);
    }
    Ok(WarpResult {
        image: Image::new(w, h, data)?,
        valid,
        coords,
        d_depth,
        d_translation,
    })
}
