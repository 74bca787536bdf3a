//! Synthetic two-view scenes with known metric depth, and the experiments
//! that optimize depth, attention and pose scale against them.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camgeo::{compose_rotation, CameraModel, EulerAngles};
use crate::error::{Error, Result};
use crate::grid::{pairwise_sum, Image, ScalarGrid};
use crate::groundprior::compute_tau;
use crate::viewsynth::RigidPose;

mod optim;
mod texture;

pub use optim::{
    ablation, attention_segmentation_report, joint_scale_losses, recover_scale, run_optimizer, LabProblem, OptimConfig,
    OptimOutcome, OptimState, RecoveryReport, SegmentationReport,
};
pub use texture::TextureSpec;

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub albedo: f64,
}

impl BoxSpec {
    fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let c = Vector3::from(self.center);
        let half = Vector3::from(self.size) / 2.0;
        (c - half, c + half)
    }

    /// Entry distance along `o + s dir`, if the ray enters the box ahead.
    fn intersect(&self, o: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let (lo, hi) = self.bounds();
        let mut near = f64::NEG_INFINITY;
        let mut far = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if o[a] < lo[a] || o[a] > hi[a] {
                    return None;
                }
                continue;
            }
            let (t1, t2) = ((lo[a] - o[a]) / dir[a], (hi[a] - o[a]) / dir[a]);
            near = near.max(t1.min(t2));
            far = far.min(t1.max(t2));
        }
        (near <= far && near > 0.0).then_some(near)
    }
}

/// Flat textured ground, textured boxes and the source views of one
/// target frame. The ground is the world plane `y = camera.h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub camera: CameraModel,
    pub texture: TextureSpec,
    pub ground_albedo: f64,
    pub boxes: Vec<BoxSpec>,
    /// Target-to-source poses in the camera frame, at metric scale.
    pub baselines: Vec<RigidPose>,
    /// Intensity of rays that hit nothing.
    pub sky: f64,
    /// Width of the navigable pathway used to size the attention target.
    pub pathway_width: f64,
    /// Intensity samples per pixel along each axis, averaged.
    #[serde(default = "one")]
    pub supersample: usize,
}

fn one() -> usize {
    1
}

/// Rendered view with its ground truth.
#[derive(Debug, Clone)]
pub struct Rendering {
    pub image: Image,
    /// Camera-axis depth; invalid where the ray hits nothing.
    pub depth: ScalarGrid,
    /// Pixels whose nearest hit is the ground plane.
    pub ground: Vec<bool>,
}

impl SceneSpec {
    /// The reference scene: a 128x96 camera pitched 35 degrees down, two
    /// boxes on the ground and source frames 1 m ahead and 1 m behind.
    pub fn reference() -> Self {
        let level = CameraModel::simple(100.0, 128, 96, 1.65).expect("valid reference camera");
        let camera = compose_rotation(&level, EulerAngles::new(-35.0, 0.0, 0.0), true).expect("valid reference pitch");
        let forward = camera.rotation().transpose() * Vector3::z();
        let h = camera.mount_height();
        // moving the camera center by c shifts camera-frame points by -R c
        let step = |c: Vector3<f64>| RigidPose::from_translation(-(camera.rotation() * c));
        let horizontal = Vector3::new(forward.x, 0.0, forward.z).normalize();
        Self {
            texture: TextureSpec::default(),
            ground_albedo: 1.0,
            boxes: vec![
                BoxSpec {
                    center: [-1.1, h - 0.4, 5.5],
                    size: [0.8, 0.8, 0.8],
                    albedo: 0.9,
                },
                BoxSpec {
                    center: [1.2, h - 0.55, 7.5],
                    size: [1.0, 1.1, 1.0],
                    albedo: 0.8,
                },
            ],
            baselines: vec![step(horizontal), step(-horizontal)],
            sky: 0.5,
            pathway_width: 5.5,
            supersample: 3,
            camera,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.texture.validate()?;
        if self.baselines.is_empty() {
            return Err(Error::Config("scene needs at least one baseline".into()));
        }
        for (i, b) in self.baselines.iter().enumerate() {
            if !(b.translation.norm() > 0.0) {
                return Err(Error::Config(format!("baseline {i} has zero translation")));
            }
        }
        for (name, x) in [("ground_albedo", self.ground_albedo), ("sky", self.sky)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {x}")));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if !(b.size.iter().all(|&s| s > 0.0 && s.is_finite()) && b.center.iter().all(|c| c.is_finite())) {
                return Err(Error::Config(format!("box {i} needs finite center and positive size")));
            }
            if !(b.albedo > 0.0 && b.albedo <= 1.0) {
                return Err(Error::Config(format!("box {i} albedo must lie in (0, 1], got {}", b.albedo)));
            }
        }
        if !(1..=8).contains(&self.supersample) {
            return Err(Error::Config(format!("supersample must lie in 1..=8, got {}", self.supersample)));
        }
        if !(self.camera.center().y < self.camera.mount_height()) {
            return Err(Error::Config("camera center must lie above the ground plane".into()));
        }
        Ok(())
    }

    /// Attention target for this camera and pathway width.
    pub fn tau(&self) -> Result<f64> {
        compute_tau(
            self.pathway_width,
            self.camera.height() as f64,
            self.camera.width() as f64,
            self.camera.mount_height(),
        )
    }

    /// Renders the view `view` (target-to-view pose in the camera frame).
    pub fn render(&self, view: &RigidPose) -> Result<Rendering> {
        self.validate()?;
        let cam = &self.camera;
        let (w, h) = cam.shape();
        let rc_t = cam.rotation().transpose();
        let back: Matrix3<f64> = rc_t * view.rotation.transpose();
        let origin = -(rc_t * (view.rotation.transpose() * view.translation + cam.translation()));
        let plane = cam.mount_height();

        let cast = |u: f64, v: f64| -> (f64, Option<(f64, bool)>) {
            let dir = back * cam.ray(u, v);
            let mut best: Option<(f64, f64, bool)> = None;
            if dir.y > 1e-12 {
                let s = (plane - origin.y) / dir.y;
                if s > 0.0 {
                    best = Some((s, self.ground_albedo, true));
                }
            }
            for b in &self.boxes {
                if let Some(s) = b.intersect(&origin, &dir) {
                    if best.map_or(true, |(t, _, _)| s < t) {
                        best = Some((s, b.albedo, false));
                    }
                }
            }
            match best {
                Some((s, albedo, ground)) => (self.texture.intensity(&(origin + dir * s), albedo), Some((s, ground))),
                None => (self.sky, None),
            }
        };
        let n = self.supersample;
        let hits: Vec<(f64, Option<(f64, bool)>)> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (u, v) = ((i % w) as f64, (i / w) as f64);
                let center = cast(u, v);
                if n == 1 {
                    return center;
                }
                let mut samples = Vec::with_capacity(n * n);
                for a in 0..n {
                    for b in 0..n {
                        let off = |k: usize| (k as f64 + 0.5) / n as f64 - 0.5;
                        samples.push(cast(u + off(b), v + off(a)).0);
                    }
                }
                (pairwise_sum(&samples) / (n * n) as f64, center.1)
            })
            .collect();

        let image = Image::new(w, h, hits.iter().map(|(x, _)| *x).collect())?;
        let depth = ScalarGrid::from_fn(w, h, |u, v| hits[v * w + u].1.map(|(s, _)| s));
        let ground = hits.iter().map(|(_, hit)| matches!(hit, Some((_, true)))).collect();
        Ok(Rendering { image, depth, ground })
    }

    /// Target view and every source view.
    pub fn render_all(&self) -> Result<(Rendering, Vec<Rendering>)> {
        let target = self.render(&RigidPose::identity())?;
        let sources = self.baselines.iter().map(|b| self.render(b)).collect::<Result<_>>()?;
        Ok((target, sources))
    }
}
