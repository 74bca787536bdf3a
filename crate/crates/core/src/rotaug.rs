//! Rotation augmentation about the optical center.
//!
//! Images are resampled through the pure-rotation homography, ground
//! priors are recomputed from the rotated extrinsics and sparse depth is
//! re-projected point by point.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rayon::prelude::*;

use crate::camgeo::{compose_rotation, compose_rotation_matrix, project_points, unproject, CameraModel, EulerAngles, PixelSample, Point3};
use crate::error::Result;
use crate::grid::{Image, ScalarGrid};
use crate::groundprior::{ground_depth, GroundPrior};
use crate::viewsynth::bilinear_sample;

/// Resampled image; pixels whose preimage leaves the frame hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedImage {
    pub image: Image,
    pub valid: Vec<bool>,
}

/// Source coordinates of every output pixel under `K R_aug^T K^-1`.
fn preimages(cam: &CameraModel, r_aug: &Matrix3<f64>) -> Vec<Option<(f64, f64)>> {
    let (w, h) = cam.shape();
    let back = r_aug.transpose();
    (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = cam.ray((i % w) as f64, (i / w) as f64);
            let p: Vector3<f64> = back * ray;
            if !(p.z > 0.0) {
                return None;
            }
            let u = cam.fx() * p.x / p.z + cam.cx();
            let v = cam.fy() * p.y / p.z + cam.cy();
            cam.contains(u, v).then_some((u, v))
        })
        .collect()
}

/// Image as seen by the camera rotated by `angles`.
pub fn rotate_image(img: &Image, cam: &CameraModel, angles: EulerAngles, force: bool) -> Result<RotatedImage> {
    if !force {
        angles.check_limits()?;
    }
    rotate_image_matrix(img, cam, &angles.rotation())
}

/// [`rotate_image`] with an explicit `R_aug`.
pub fn rotate_image_matrix(img: &Image, cam: &CameraModel, r_aug: &Matrix3<f64>) -> Result<RotatedImage> {
    img.ensure_shape(cam.shape())?;
    crate::camgeo::check_rotation(r_aug)?;
    let (w, h) = cam.shape();
    let mut data = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for pre in preimages(cam, r_aug) {
        match pre.and_then(|(u, v)| bilinear_sample(img, u, v)) {
            Some(s) => {
                data.push(s.value);
                valid.push(true);
            }
            None => {
                data.push(0.0);
                valid.push(false);
            }
        }
    }
    Ok(RotatedImage {
        image: Image::new(w, h, data)?,
        valid,
    })
}

/// Resamples a masked grid through the rotation homography. A pixel is
/// valid only when all four interpolation neighbors are.
pub fn rotate_grid(grid: &ScalarGrid, cam: &CameraModel, angles: EulerAngles, force: bool) -> Result<ScalarGrid> {
    resample_grid(grid, cam, angles, force, |_, _, x| x)
}

/// Dense depth as seen by the rotated camera: inverse depth is resampled
/// along the rays and converted to the new camera-axis depth. Inverse depth
/// is affine over planes, so planar surfaces come out exact.
pub fn rotate_depth(depth: &ScalarGrid, cam: &CameraModel, angles: EulerAngles, force: bool) -> Result<ScalarGrid> {
    let r_aug = angles.rotation();
    let inverse = depth.map(|d| 1.0 / d);
    resample_grid(&inverse, cam, angles, force, |x, y, q| (r_aug * cam.ray(x, y)).z / q)
}

fn resample_grid(
    grid: &ScalarGrid,
    cam: &CameraModel,
    angles: EulerAngles,
    force: bool,
    finish: impl Fn(f64, f64, f64) -> f64,
) -> Result<ScalarGrid> {
    if !force {
        angles.check_limits()?;
    }
    grid.ensure_shape(cam.shape())?;
    let (w, h) = cam.shape();
    let pre = preimages(cam, &angles.rotation());
    Ok(ScalarGrid::from_fn(w, h, |u, v| {
        let (x, y) = pre[v * w + u]?;
        let x0 = (x.floor() as usize).min(w.saturating_sub(2));
        let y0 = (y.floor() as usize).min(h.saturating_sub(2));
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let a = grid.get(x0, y0)?;
        let b = grid.get(x1, y0)?;
        let c = grid.get(x0, y1)?;
        let d = grid.get(x1, y1)?;
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let top = a + fx * (b - a);
        let bottom = c + fx * (d - c);
        Some(finish(x, y, top + fy * (bottom - top)))
    }))
}

/// Ground prior of the rotated camera, computed analytically.
pub fn augment_ground(cam: &CameraModel, angles: EulerAngles, force: bool) -> Result<GroundPrior> {
    Ok(ground_depth(&compose_rotation(cam, angles, force)?))
}

/// Sparse depth of world points as seen by the rotated camera.
pub fn augment_points(cam: &CameraModel, pts: &[Point3], angles: EulerAngles, force: bool) -> Result<ScalarGrid> {
    let rotated = compose_rotation(cam, angles, force)?;
    Ok(project_points(&rotated, pts))
}

/// Rotates a sparse depth grid: valid pixels are lifted to points,
/// re-projected by the rotated camera and z-buffered.
pub fn augment_sparse_depth(sparse: &ScalarGrid, cam: &CameraModel, angles: EulerAngles, force: bool) -> Result<ScalarGrid> {
    if !force {
        angles.check_limits()?;
    }
    augment_sparse_depth_matrix(sparse, cam, &angles.rotation())
}

/// [`augment_sparse_depth`] with an explicit `R_aug`.
pub fn augment_sparse_depth_matrix(sparse: &ScalarGrid, cam: &CameraModel, r_aug: &Matrix3<f64>) -> Result<ScalarGrid> {
    sparse.ensure_shape(cam.shape())?;
    let (w, h) = cam.shape();
    let mut pts = Vec::with_capacity(sparse.count_valid());
    for v in 0..h {
        for u in 0..w {
            if let Some(d) = sparse.get(u, v) {
                pts.push(unproject(cam, PixelSample::new(u as f64, v as f64, d))?);
            }
        }
    }
    Ok(project_points(&compose_rotation_matrix(cam, r_aug)?, &pts))
}

/// Angles drawn uniformly within the augmentation limits.
pub fn sample_angles(rng: &mut impl Rng) -> EulerAngles {
    EulerAngles::new(
        rng.gen_range(-EulerAngles::PITCH_LIMIT..=EulerAngles::PITCH_LIMIT),
        rng.gen_range(-EulerAngles::ROLL_LIMIT..=EulerAngles::ROLL_LIMIT),
        rng.gen_range(-EulerAngles::YAW_LIMIT..=EulerAngles::YAW_LIMIT),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn smooth_image(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |u, v| {
            let (x, y) = (u as f64, v as f64);
            0.5 + 0.25 * (0.21 * x).sin() * (0.17 * y).cos() + 0.2 * (0.05 * (x + 2.0 * y)).sin()
        })
    }

    fn psnr(a: &[f64], b: &[f64]) -> f64 {
        let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
        10.0 * (1.0 / mse).log10()
    }

    #[test]
    fn zero_angles_are_identity() {
        let cam = CameraModel::simple(50.0, 32, 24, 1.5).unwrap();
        let img = smooth_image(32, 24);
        let out = rotate_image(&img, &cam, EulerAngles::zero(), false).unwrap();
        assert!(out.valid.iter().all(|&b| b));
        for (a, b) in out.image.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_is_interpolation_limited() {
        let cam = CameraModel::simple(80.0, 96, 64, 1.5).unwrap();
        let img = smooth_image(96, 64);
        let ang = EulerAngles::new(3.0, -2.0, 8.0);
        let forward = rotate_image(&img, &cam, ang, false).unwrap();
        let back = rotate_image_matrix(&forward.image, &cam, &ang.rotation().transpose()).unwrap();
        let margin = 20;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for v in margin..64 - margin {
            for u in margin..96 - margin {
                let i = v * 96 + u;
                assert!(back.valid[i]);
                a.push(back.image.data()[i]);
                b.push(img.data()[i]);
            }
        }
        assert!(psnr(&a, &b) > 30.0, "psnr {}", psnr(&a, &b));
    }

    #[test]
    fn out_of_range_angles_need_force() {
        let cam = CameraModel::simple(50.0, 16, 12, 1.5).unwrap();
        let img = smooth_image(16, 12);
        let ang = EulerAngles::new(0.0, 0.0, 20.0);
        assert!(matches!(rotate_image(&img, &cam, ang, false), Err(Error::AngleOutOfRange { .. })));
        assert!(rotate_image(&img, &cam, ang, true).is_ok());
        assert!(augment_ground(&cam, ang, false).is_err());
    }

    #[test]
    fn zero_angles_keep_the_prior_bit_exact() {
        let cam = CameraModel::simple(60.0, 40, 30, 1.65).unwrap();
        let a = augment_ground(&cam, EulerAngles::zero(), false).unwrap();
        assert_eq!(a, ground_depth(&cam));
    }

    #[test]
    fn pitching_down_adds_ground_rows() {
        let cam = CameraModel::simple(60.0, 40, 30, 1.65).unwrap();
        let before = ground_depth(&cam).depth.count_valid();
        let after = augment_ground(&cam, EulerAngles::new(-5.0, 0.0, 0.0), false)
            .unwrap()
            .depth
            .count_valid();
        assert!(after > before, "{after} <= {before}");
        // horizon row of a level camera sits at cy; a 5 degree downward tilt
        // moves it up by f tan(5 deg)
        let rotated = augment_ground(&cam, EulerAngles::new(-5.0, 0.0, 0.0), false).unwrap();
        let horizon = cam.cy() - 60.0 * 5f64.to_radians().tan();
        for v in 0..30 {
            assert_eq!(rotated.depth.is_valid(20, v), v as f64 > horizon, "row {v}");
        }
    }

    #[test]
    fn warped_prior_matches_analytic_one_on_the_plane() {
        let cam = CameraModel::simple(60.0, 64, 48, 1.65).unwrap();
        let ang = EulerAngles::new(-3.0, 2.0, 6.0);
        let analytic = augment_ground(&cam, ang, false).unwrap();
        let warped = rotate_depth(&ground_depth(&cam).depth, &cam, ang, false).unwrap();
        let mut compared = 0;
        for i in 0..64 * 48 {
            if let (true, true) = (warped.mask()[i], analytic.valid()[i]) {
                let (a, b) = (analytic.depth.values()[i], warped.values()[i]);
                if a < 20.0 {
                    assert!((a - b).abs() / a < 1e-9, "{a} vs {b}");
                    compared += 1;
                }
            }
        }
        assert!(compared > 500);
    }

    #[test]
    fn single_point_follows_rotated_projection() {
        let cam = CameraModel::simple(60.0, 64, 48, 1.65).unwrap();
        let ang = EulerAngles::new(2.0, -1.0, 5.0);
        let p = Point3::new(0.4, 0.3, 6.0);
        let grid = augment_points(&cam, &[p], ang, false).unwrap();
        let q = ang.rotation() * p;
        let u = (cam.fx() * q.x / q.z + cam.cx() - 0.5).ceil() as usize;
        let v = (cam.fy() * q.y / q.z + cam.cy() - 0.5).ceil() as usize;
        assert_eq!(grid.count_valid(), 1);
        assert!((grid.get(u, v).unwrap() - q.z).abs() < 1e-12);
        assert!((q.z - p.z).abs() > 1e-3, "camera-axis depth changes under rotation");
    }

    #[test]
    fn zero_angles_keep_sparse_depth() {
        let cam = CameraModel::simple(60.0, 32, 24, 1.65).unwrap();
        let mut sparse = ScalarGrid::invalid(32, 24);
        sparse.set(3, 20, 4.0);
        sparse.set(17, 9, 12.5);
        sparse.set(30, 1, 7.25);
        let out = augment_sparse_depth(&sparse, &cam, EulerAngles::zero(), false).unwrap();
        assert_eq!(out.mask(), sparse.mask());
        for (a, b) in out.values().iter().zip(sparse.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_input_gives_empty_grid() {
        let cam = CameraModel::simple(60.0, 8, 6, 1.65).unwrap();
        let out = augment_sparse_depth(&ScalarGrid::invalid(8, 6), &cam, EulerAngles::new(1.0, 1.0, 1.0), false).unwrap();
        assert_eq!(out.count_valid(), 0);
    }

    #[test]
    fn sampled_angles_respect_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            sample_angles(&mut rng).check_limits().unwrap();
        }
    }
}
