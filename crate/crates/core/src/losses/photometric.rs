//! Per-pixel photometric error: `0.85 * (1 - SSIM) / 2 + 0.15 * |x - y|`,
//! SSIM over 3x3 reflect-padded blocks.

use rayon::prelude::*;

use crate::error::Result;
use crate::grid::{Image, ScalarGrid};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_WEIGHT: f64 = 0.85;
pub const L1_WEIGHT: f64 = 0.15;

/// Reflect padding by one pixel (`-1 -> 1`, `len -> len - 2`).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    if i < 0 {
        (-i) as usize
    } else if i as usize >= len {
        2 * (len - 1) - i as usize
    } else {
        i as usize
    }
}

/// Indices of the 3x3 block around pixel `(u, v)`, row-major, center at 4.
pub(crate) fn neighborhood(u: usize, v: usize, w: usize, h: usize) -> [usize; 9] {
    let mut out = [0; 9];
    let mut m = 0;
    for dv in -1..=1isize {
        let y = reflect(v as isize + dv, h);
        for du in -1..=1isize {
            let x = reflect(u as isize + du, w);
            out[m] = y * w + x;
            m += 1;
        }
    }
    out
}

/// SSIM of two 9-sample blocks and its gradient with respect to `ys`.
pub(crate) fn ssim_block(xs: &[f64; 9], ys: &[f64; 9]) -> (f64, [f64; 9]) {
    let n = 9.0;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx = xs.iter().map(|x| x * x).sum::<f64>() / n - mx * mx;
    let syy = ys.iter().map(|y| y * y).sum::<f64>() / n - my * my;
    let sxy = xs.iter().zip(ys).map(|(x, y)| x * y).sum::<f64>() / n - mx * my;

    let a = 2.0 * mx * my + SSIM_C1;
    let b = 2.0 * sxy + SSIM_C2;
    let c = mx * mx + my * my + SSIM_C1;
    let d = sxx + syy + SSIM_C2;
    let cd = c * d;
    let s = a * b / cd;

    let mut grad = [0.0; 9];
    for m in 0..9 {
        let da = 2.0 * mx / n;
        let db = 2.0 * (xs[m] - mx) / n;
        let dc = 2.0 * my / n;
        let dd = 2.0 * (ys[m] - my) / n;
        grad[m] = (da * b + a * db) / cd - s * (dc / c + dd / d);
    }
    (s, grad)
}

/// Photometric error of `candidate` against `target` with the partials
/// needed to backpropagate into the candidate.
pub(crate) struct PhotometricField {
    pub pe: Vec<f64>,
    /// All nine block samples valid.
    pub valid: Vec<bool>,
    /// `d pe_j / d candidate[neighborhood(j)[m]]`.
    pub grad: Vec<[f64; 9]>,
    /// `|target_j - candidate_j|`, for locating the L1 kink.
    pub l1: Vec<f64>,
}

pub(crate) fn photometric_field(target: &Image, candidate: &Image, candidate_valid: Option<&[bool]>) -> PhotometricField {
    let (w, h) = target.shape();
    let x = target.data();
    let y = candidate.data();
    let per_pixel: Vec<(f64, bool, [f64; 9], f64)> = (0..w * h)
        .into_par_iter()
        .map(|j| {
            let idx = neighborhood(j % w, j / w, w, h);
            if let Some(mask) = candidate_valid {
                if idx.iter().any(|&k| !mask[k]) {
                    return (0.0, false, [0.0; 9], 0.0);
                }
            }
            let xs = idx.map(|k| x[k]);
            let ys = idx.map(|k| y[k]);
            let (s, ds) = ssim_block(&xs, &ys);
            let diff = y[j] - x[j];
            let mut grad = ds.map(|g| -0.5 * SSIM_WEIGHT * g);
            grad[4] += L1_WEIGHT * sign(diff);
            let pe = 0.5 * SSIM_WEIGHT * (1.0 - s) + L1_WEIGHT * diff.abs();
            (pe, true, grad, diff.abs())
        })
        .collect();

    let mut out = PhotometricField {
        pe: Vec::with_capacity(w * h),
        valid: Vec::with_capacity(w * h),
        grad: Vec::with_capacity(w * h),
        l1: Vec::with_capacity(w * h),
    };
    for (pe, ok, g, l1) in per_pixel {
        out.pe.push(pe);
        out.valid.push(ok);
        out.grad.push(g);
        out.l1.push(l1);
    }
    out
}

/// `sign` with `sign(0) = 0`.
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-pixel photometric error between two images with intensities in `[0, 1]`.
pub fn photometric_error(target: &Image, candidate: &Image) -> Result<ScalarGrid> {
    candidate.ensure_shape(target.shape())?;
    target.ensure_unit_range()?;
    candidate.ensure_unit_range()?;
    let field = photometric_field(target, candidate, None);
    ScalarGrid::from_values(target.width(), target.height(), field.pe)
}
