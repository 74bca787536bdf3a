//! Pinhole camera geometry.
//!
//! Conventions used throughout the crate:
//!
//! * camera frame: x right, y down, z forward (optical axis);
//! * world frame: y points down towards the ground, which is the plane
//!   `y = h` with `h > 0`;
//! * extrinsics map world to camera, `p_cam = R * p_world + t`, so `t` is
//!   expressed in the camera frame;
//! * pixel centers sit on integer coordinates and depth is the camera-frame
//!   z coordinate, not the ray length.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarGrid;

/// Tolerance for accepting a matrix as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

pub type Point3 = Vector3<f64>;

/// Continuous pixel coordinates plus camera-axis depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

impl PixelSample {
    pub fn new(u: f64, v: f64, d: f64) -> Self {
        Self { u, v, d }
    }
}

/// Checks orthonormality and `det = +1` to [`ROTATION_TOLERANCE`].
pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    let det = r.determinant();
    if !err.is_finite() || err > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::invalid(format!(
            "rotation is not orthonormal with det +1 (|R^T R - I| = {err:e}, det = {det})"
        )));
    }
    Ok(())
}

/// Pitch, roll and yaw in degrees.
///
/// Positive pitch tilts the optical axis up, positive yaw turns it left
/// (right-handed about camera-up) and positive roll turns the image
/// clockwise about the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub const PITCH_LIMIT: f64 = 5.0;
    pub const ROLL_LIMIT: f64 = 5.0;
    pub const YAW_LIMIT: f64 = 15.0;

    pub fn new(pitch: f64, roll: f64, yaw: f64) -> Self {
        Self { pitch, roll, yaw }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn check_limits(&self) -> Result<()> {
        let checks = [
            ("pitch", self.pitch, Self::PITCH_LIMIT),
            ("roll", self.roll, Self::ROLL_LIMIT),
            ("yaw", self.yaw, Self::YAW_LIMIT),
        ];
        for (name, value, limit) in checks {
            if !value.is_finite() || value.abs() > limit {
                return Err(Error::AngleOutOfRange { name, value, limit });
            }
        }
        Ok(())
    }

    /// Orientation of the rotated camera expressed in the original camera
    /// frame: intrinsic yaw about camera-up, then pitch about camera-right,
    /// then roll about camera-forward.
    pub fn orientation(&self) -> Matrix3<f64> {
        let yaw = axis_rotation(1, -self.yaw.to_radians());
        let pitch = axis_rotation(0, self.pitch.to_radians());
        let roll = axis_rotation(2, self.roll.to_radians());
        yaw * pitch * roll
    }

    /// `R_aug`: maps coordinates in the original camera frame to the rotated
    /// one, `p' = R_aug p`.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.orientation().transpose()
    }
}

/// Right-handed rotation by `angle` radians about coordinate axis `axis`.
fn axis_rotation(axis: usize, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    match axis {
        0 => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        1 => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        _ => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}

/// Intrinsics, extrinsics and mounting height of a pinhole camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraFile", into = "CameraFile")]
pub struct CameraModel {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    height_above_ground: f64,
    width: usize,
    height: usize,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        height_above_ground: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::invalid(format!("focal lengths must be > 0 (fx = {fx}, fy = {fy})")));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::invalid("principal point must be finite"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image size {width}x{height} must be at least 1x1")));
        }
        if !(height_above_ground > 0.0 && height_above_ground.is_finite()) {
            return Err(Error::invalid(format!(
                "mounting height must be > 0 (h = {height_above_ground})"
            )));
        }
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        check_rotation(&rotation)?;
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            height_above_ground,
            width,
            height,
        })
    }

    /// Camera at the world origin with identity rotation.
    pub fn simple(f: f64, width: usize, height: usize, h: f64) -> Result<Self> {
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            Matrix3::identity(),
            Vector3::zeros(),
            h,
            width,
            height,
        )
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }
    /// Mounting height `h`: the ground is the world plane `y = h`.
    pub fn mount_height(&self) -> f64 {
        self.height_above_ground
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `K^-1 [u, v, 1]^T`: camera-frame direction with unit z.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Camera-frame point projected to continuous pixel coordinates.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Result<PixelSample> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera { z: p.z });
        }
        Ok(PixelSample {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
            d: p.z,
        })
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Point3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Point3) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Same camera with replaced extrinsics.
    pub fn with_extrinsics(&self, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        Ok(Self {
            rotation,
            translation,
            ..self.clone()
        })
    }

    /// Same camera with a different mounting height.
    pub fn with_mount_height(&self, h: f64) -> Result<Self> {
        Self::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.rotation,
            self.translation,
            h,
            self.width,
            self.height,
        )
    }

    /// Whether continuous pixel coordinates fall inside `[0, W-1] x [0, H-1]`.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }
}

/// World point seen at pixel `(u, v)` with camera-axis depth `d`:
/// `R^-1 (K^-1 d [u, v, 1]^T - t)`.
pub fn unproject(cam: &CameraModel, px: PixelSample) -> Result<Point3> {
    if !(px.d > 0.0 && px.d.is_finite()) {
        return Err(Error::invalid(format!("depth must be > 0, got {}", px.d)));
    }
    let p_cam = cam.ray(px.u, px.v) * px.d;
    Ok(cam.rotation.transpose() * (p_cam - cam.translation))
}

/// Inverse of [`unproject`].
pub fn project(cam: &CameraModel, p: &Point3) -> Result<PixelSample> {
    cam.project_camera_point(&cam.world_to_camera(p))
}

/// Rotates the camera about its own axes: `R' = R_aug R`, with `t`, `h`
/// and intrinsics untouched.
pub fn compose_rotation(cam: &CameraModel, angles: EulerAngles, force: bool) -> Result<CameraModel> {
    if !force {
        angles.check_limits()?;
    }
    compose_rotation_matrix(cam, &angles.rotation())
}

/// [`compose_rotation`] with an explicit `R_aug`.
pub fn compose_rotation_matrix(cam: &CameraModel, r_aug: &Matrix3<f64>) -> Result<CameraModel> {
    check_rotation(r_aug)?;
    let rotation = r_aug * cam.rotation;
    Ok(CameraModel {
        rotation,
        ..cam.clone()
    })
}

/// Nearest-integer pixel index, ties toward the lower index.
fn round_half_down(x: f64) -> f64 {
    (x - 0.5).ceil()
}

/// Splats world points into a sparse depth grid with a z-buffer.
pub fn project_points(cam: &CameraModel, pts: &[Point3]) -> ScalarGrid {
    let mut grid = ScalarGrid::invalid(cam.width, cam.height);
    for p in pts {
        let Ok(px) = project(cam, p) else {
            continue;
        };
        if !(px.u.is_finite() && px.v.is_finite()) {
            continue;
        }
        let (u, v) = (round_half_down(px.u), round_half_down(px.v));
        if u < 0.0 || v < 0.0 || u >= cam.width as f64 || v >= cam.height as f64 {
            continue;
        }
        let (u, v) = (u as usize, v as usize);
        match grid.get(u, v) {
            Some(existing) if existing <= px.d => {}
            _ => grid.set(u, v, px.d),
        }
    }
    grid
}

/// On-disk camera description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    h: f64,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

impl TryFrom<CameraFile> for CameraModel {
    type Error = Error;

    fn try_from(f: CameraFile) -> Result<Self> {
        CameraModel::new(
            f.fx,
            f.fy,
            f.cx,
            f.cy,
            Matrix3::from_row_slice(&f.r),
            Vector3::from_column_slice(&f.t),
            f.h,
            f.width,
            f.height,
        )
    }
}

impl From<CameraModel> for CameraFile {
    fn from(c: CameraModel) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = c.rotation[(i, j)];
            }
        }
        CameraFile {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            h: c.height_above_ground,
            r,
            t: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}
