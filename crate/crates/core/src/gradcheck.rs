//! Finite-difference checks of the analytic loss gradients on small random
//! instances.
//!
//! Coordinates whose central difference would straddle a non-smooth set are
//! left out of the comparison: `|.|` kinks, ties in the source minimum and
//! the auto-mask, integer lines of bilinear sampling, the image border and
//! the hinge of the attention regularizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camgeo::{CameraModel, EulerAngles};
use crate::error::{Error, Result};
use crate::fusion::{fuse, AttentionMap, DepthField};
use crate::grid::{Image, ScalarGrid};
use crate::groundprior::{ground_depth, GroundPrior};
use crate::losses::neighborhood;
use crate::losses::{
    const_loss, reg_loss, smooth_loss, total_loss_with, LossInputs, LossWeights, ReprojContext, ReprojDetails,
};
use crate::viewsynth::RigidPose;

pub const FD_STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-6;
pub const KINK_MARGIN: f64 = 1e-4;
pub const GRID_SIZE: usize = 8;
pub const DEFAULT_INSTANCES: usize = 20;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    /// Largest norm-wise relative error over the instances.
    pub max_relative_error: f64,
    pub checked_coordinates: usize,
    pub excluded_coordinates: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub suites: Vec<SuiteReport>,
    pub passed: bool,
}

/// `||a - n|| / max(||a||, ||n||)`, 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |xs: &mut dyn Iterator<Item = f64>| xs.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// One instance: analytic and numeric gradients on the checked coordinates.
struct Check {
    analytic: Vec<f64>,
    numeric: Vec<f64>,
    excluded: usize,
}

/// Central differences of `f` along every coordinate with `active[i]`.
fn compare(x: &[f64], active: &[bool], grad: &[f64], f: impl Fn(&[f64]) -> Result<f64>) -> Result<Check> {
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        if !active[i] {
            continue;
        }
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe)?;
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe)?;
        probe[i] = x[i];
        analytic.push(grad[i]);
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(Check {
        analytic,
        numeric,
        excluded: 0,
    })
}

fn grid(values: &[f64]) -> ScalarGrid {
    ScalarGrid::from_values(GRID_SIZE, GRID_SIZE, values.to_vec()).expect("grid-sized vector")
}

fn depth(values: &[f64]) -> Result<DepthField> {
    DepthField::new(grid(values))
}

fn attention(values: &[f64]) -> Result<AttentionMap> {
    AttentionMap::new(grid(values))
}

fn random_image(rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(GRID_SIZE, GRID_SIZE, |_, _| rng.gen_range(0.05..0.95))
}

/// Level camera whose lower half sees the ground.
fn random_camera(rng: &mut ChaCha8Rng) -> Result<CameraModel> {
    CameraModel::simple(rng.gen_range(5.0..8.0), GRID_SIZE, GRID_SIZE, rng.gen_range(1.0..2.0))
}

fn random_attention(rng: &mut ChaCha8Rng, prior: &GroundPrior, lo: f64, hi: f64) -> Vec<f64> {
    prior.valid().iter().map(|&ok| if ok { rng.gen_range(lo..hi) } else { 0.0 }).collect()
}

fn pixel_count() -> usize {
    GRID_SIZE * GRID_SIZE
}

/// Pixels on either side of a forward difference of the normalized inverse
/// depth that lies within the margin of zero. Only the two endpoints can
/// flip its sign; every other pixel rescales it.
fn smooth_kinks(d: &[f64]) -> Vec<bool> {
    let n = GRID_SIZE;
    let mean = d.iter().map(|x| 1.0 / x).sum::<f64>() / d.len() as f64;
    let s: Vec<f64> = d.iter().map(|x| 1.0 / (x * mean)).collect();
    let mut out = vec![false; d.len()];
    for v in 0..n {
        for u in 0..n {
            let i = v * n + u;
            for j in [(u + 1 < n).then(|| i + 1), (v + 1 < n).then(|| i + n)].into_iter().flatten() {
                if (s[j] - s[i]).abs() < KINK_MARGIN {
                    out[i] = true;
                    out[j] = true;
                }
            }
        }
    }
    out
}

/// Pixels whose depth sits near a non-smooth set of the reprojection loss.
fn reproj_kinks(details: &ReprojDetails) -> Vec<bool> {
    let (w, h) = (GRID_SIZE, GRID_SIZE);
    let n = w * h;
    let mut out = vec![false; n];
    let near_int = |x: f64| (x - x.round()).abs() < KINK_MARGIN;
    let near_edge = |x: f64, len: usize| x.abs() < KINK_MARGIN || (x - (len - 1) as f64).abs() < KINK_MARGIN;
    for (s, wr) in details.warps.iter().enumerate() {
        for k in 0..n {
            let (u, v) = wr.coords[k];
            if !(u.is_finite() && v.is_finite()) {
                continue;
            }
            if near_int(u) || near_int(v) || near_edge(u, w) || near_edge(v, h) {
                out[k] = true;
            }
            if details.warped_valid[s][k] && details.warped_l1[s][k] < KINK_MARGIN {
                out[k] = true;
            }
        }
    }
    for j in 0..n {
        let mut pes: Vec<f64> = (0..details.warps.len())
            .filter(|&s| details.warped_valid[s][j])
            .map(|s| details.warped_pe[s][j])
            .collect();
        if pes.is_empty() {
            continue;
        }
        pes.sort_by(f64::total_cmp);
        let tie = pes.windows(2).any(|p| p[1] - p[0] < KINK_MARGIN);
        let masked = (pes[0] - details.identity_pe[j]).abs() < KINK_MARGIN;
        if tie || masked {
            for k in neighborhood(j % w, j / w, w, h) {
                out[k] = true;
            }
        }
    }
    out
}

struct WarpInstance {
    ctx: ReprojContext,
    prior: GroundPrior,
    poses: Vec<RigidPose>,
    d_hat: Vec<f64>,
    alpha: Vec<f64>,
}

fn random_warp_instance(rng: &mut ChaCha8Rng) -> Result<WarpInstance> {
    let cam = random_camera(rng)?;
    let prior = ground_depth(&cam);
    let target = random_image(rng);
    let sources = vec![random_image(rng), random_image(rng)];
    let mut poses = Vec::new();
    for _ in 0..sources.len() {
        let mut angle = || rng.gen_range(-2.0..2.0);
        let r = EulerAngles::new(angle(), angle(), angle()).rotation();
        let t = nalgebra::Vector3::from_fn(|_, _| rng.gen_range(-0.3..0.3));
        poses.push(RigidPose::new(r, t)?);
    }
    let d_hat = (0..pixel_count()).map(|_| rng.gen_range(2.0..6.0)).collect();
    let alpha = random_attention(rng, &prior, 0.05, 0.95);
    Ok(WarpInstance {
        ctx: ReprojContext::new(&target, &sources, &cam)?,
        prior,
        poses,
        d_hat,
        alpha,
    })
}

/// Resamples until `make` yields an instance the loss accepts.
fn retry<T>(rng: &mut ChaCha8Rng, mut make: impl FnMut(&mut ChaCha8Rng) -> Result<Option<T>>) -> Result<T> {
    for _ in 0..1000 {
        match make(rng) {
            Ok(Some(x)) => return Ok(x),
            Ok(None) | Err(Error::DegenerateBatch) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::invalid("could not draw a usable gradient-check instance"))
}

fn check_reg(rng: &mut ChaCha8Rng) -> Result<Check> {
    let (alpha, tau) = retry(rng, |rng| {
        let alpha: Vec<f64> = (0..pixel_count()).map(|_| rng.gen_range(0.01..0.6)).collect();
        let tau = rng.gen_range(0.1..0.9);
        let mean = alpha.iter().sum::<f64>() / alpha.len() as f64;
        Ok(((tau - mean).abs() > KINK_MARGIN).then_some((alpha, tau)))
    })?;
    let report = reg_loss(&attention(&alpha)?, tau)?;
    let active = vec![true; alpha.len()];
    compare(&alpha, &active, report.grad_alpha.values(), |a| Ok(reg_loss(&attention(a)?, tau)?.value))
}

fn check_const(rng: &mut ChaCha8Rng) -> Result<Check> {
    let prior = ground_depth(&random_camera(rng)?);
    let n = pixel_count();
    let alpha = random_attention(rng, &prior, 0.01, 0.99);
    let d_hat: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..20.0)).collect();
    let kink: Vec<bool> = (0..n)
        .map(|i| prior.valid()[i] && (d_hat[i] - prior.depth.values()[i]).abs() < KINK_MARGIN)
        .collect();

    let report = const_loss(&attention(&alpha)?, &depth(&d_hat)?, &prior)?;
    let mut x = d_hat.clone();
    x.extend_from_slice(&alpha);
    let mut grad = report.grad_depth.values().to_vec();
    grad.extend_from_slice(report.grad_alpha.values());
    let mut active: Vec<bool> = kink.iter().map(|k| !k).collect();
    active.extend((0..n).map(|i| prior.valid()[i] && !kink[i]));

    let mut check = compare(&x, &active, &grad, |x| {
        Ok(const_loss(&attention(&x[n..])?, &depth(&x[..n])?, &prior)?.value)
    })?;
    check.excluded = kink.iter().filter(|&&k| k).count();
    Ok(check)
}

fn check_smooth(rng: &mut ChaCha8Rng) -> Result<Check> {
    let img = random_image(rng);
    let d: Vec<f64> = (0..pixel_count()).map(|_| rng.gen_range(1.0..10.0)).collect();
    let kink = smooth_kinks(&d);
    let report = smooth_loss(&depth(&d)?, &img)?;
    let active: Vec<bool> = kink.iter().map(|k| !k).collect();
    let mut check = compare(&d, &active, report.grad_depth.values(), |x| {
        Ok(smooth_loss(&depth(x)?, &img)?.value)
    })?;
    check.excluded = kink.iter().filter(|&&k| k).count();
    Ok(check)
}

/// Reprojection of the fused depth, differentiated with respect to the
/// pre-fusion depth and the attention.
fn check_reproj(rng: &mut ChaCha8Rng) -> Result<Check> {
    let n = pixel_count();
    let (inst, details) = retry(rng, |rng| {
        let inst = random_warp_instance(rng)?;
        let fused = fuse(&depth(&inst.d_hat)?, &inst.prior, &attention(&inst.alpha)?)?;
        let details = inst.ctx.evaluate(&fused, &inst.poses)?;
        Ok(Some((inst, details)))
    })?;
    let kink = reproj_kinks(&details);

    let weights = LossWeights {
        lambda_smooth: 0.0,
        lambda_const: 0.0,
        lambda_reg: 0.0,
        ..LossWeights::default()
    };
    let loss = |x: &[f64]| -> Result<crate::losses::LossReport> {
        let d_hat = depth(&x[..n])?;
        let alpha = attention(&x[n..])?;
        let inputs = LossInputs {
            prior: &inst.prior,
            d_hat: &d_hat,
            alpha: &alpha,
            poses: &inst.poses,
        };
        total_loss_with(&inst.ctx, inputs, &weights)
    };
    let mut x = inst.d_hat.clone();
    x.extend_from_slice(&inst.alpha);
    let report = loss(&x)?;
    let mut grad = report.grad_depth.values().to_vec();
    grad.extend_from_slice(report.grad_alpha.values());
    let mut active: Vec<bool> = kink.iter().map(|k| !k).collect();
    active.extend((0..n).map(|i| inst.prior.valid()[i] && !kink[i]));

    let mut check = compare(&x, &active, &grad, |x| Ok(loss(x)?.value))?;
    check.excluded = kink.iter().filter(|&&k| k).count();
    Ok(check)
}

/// Every term together through the fusion.
fn check_total(rng: &mut ChaCha8Rng) -> Result<Check> {
    let n = pixel_count();
    let (inst, weights, kink) = retry(rng, |rng| {
        let inst = random_warp_instance(rng)?;
        let weights = LossWeights {
            lambda_smooth: rng.gen_range(0.1..1.0),
            lambda_const: rng.gen_range(0.1..1.0),
            lambda_reg: rng.gen_range(0.1..1.0),
            tau: rng.gen_range(0.2..0.6),
        };
        let mean = inst.alpha.iter().sum::<f64>() / n as f64;
        if (weights.tau - mean).abs() < KINK_MARGIN {
            return Ok(None);
        }
        let fused = fuse(&depth(&inst.d_hat)?, &inst.prior, &attention(&inst.alpha)?)?;
        let details = inst.ctx.evaluate(&fused, &inst.poses)?;
        let mut kink = reproj_kinks(&details);
        for (k, s) in kink.iter_mut().zip(smooth_kinks(fused.values())) {
            *k |= s;
        }
        for i in 0..n {
            if inst.prior.valid()[i] && (inst.d_hat[i] - inst.prior.depth.values()[i]).abs() < KINK_MARGIN {
                kink[i] = true;
            }
        }
        Ok(Some((inst, weights, kink)))
    })?;

    let loss = |x: &[f64]| -> Result<crate::losses::LossReport> {
        let d_hat = depth(&x[..n])?;
        let alpha = attention(&x[n..])?;
        let inputs = LossInputs {
            prior: &inst.prior,
            d_hat: &d_hat,
            alpha: &alpha,
            poses: &inst.poses,
        };
        total_loss_with(&inst.ctx, inputs, &weights)
    };
    let mut x = inst.d_hat.clone();
    x.extend_from_slice(&inst.alpha);
    let report = loss(&x)?;
    let mut grad = report.grad_depth.values().to_vec();
    grad.extend_from_slice(report.grad_alpha.values());
    let mut active: Vec<bool> = kink.iter().map(|k| !k).collect();
    active.extend((0..n).map(|i| inst.prior.valid()[i] && !kink[i]));

    let mut check = compare(&x, &active, &grad, |x| Ok(loss(x)?.value))?;
    check.excluded = kink.iter().filter(|&&k| k).count();
    Ok(check)
}

type SuiteFn = fn(&mut ChaCha8Rng) -> Result<Check>;

const SUITES: [(&str, SuiteFn); 5] = [
    ("reg", check_reg),
    ("const", check_const),
    ("smooth", check_smooth),
    ("reproj", check_reproj),
    ("total", check_total),
];

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|(name, _)| *name).collect()
}

/// Runs `instances` random instances of one suite.
pub fn run_suite(name: &str, seed: u64, instances: usize) -> Result<SuiteReport> {
    let (index, (_, check)) = SUITES
        .iter()
        .enumerate()
        .find(|(_, (n, _))| *n == name)
        .ok_or_else(|| Error::invalid(format!("unknown gradient-check suite '{name}'")))?;
    if instances == 0 {
        return Err(Error::invalid("gradient check needs at least one instance"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut report = SuiteReport {
        name: name.to_string(),
        instances,
        max_relative_error: 0.0,
        checked_coordinates: 0,
        excluded_coordinates: 0,
        passed: true,
    };
    for _ in 0..instances {
        let c = check(&mut rng)?;
        let err = relative_error(&c.analytic, &c.numeric);
        report.max_relative_error = report.max_relative_error.max(err);
        report.checked_coordinates += c.analytic.len();
        report.excluded_coordinates += c.excluded;
    }
    report.passed = report.max_relative_error < TOLERANCE && report.checked_coordinates > 0;
    Ok(report)
}

/// Every suite with the same seed.
pub fn run_gradcheck(seed: u64, instances: usize) -> Result<GradcheckReport> {
    let suites = SUITES
        .iter()
        .map(|(name, _)| run_suite(name, seed, instances))
        .collect::<Result<Vec<_>>>()?;
    let passed = suites.iter().all(|s| s.passed);
    Ok(GradcheckReport {
        seed,
        step: FD_STEP,
        tolerance: TOLERANCE,
        suites,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_conventions() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0], &[0.0]), 1.0);
        assert!((relative_error(&[3.0, 4.0], &[3.0, 4.5]) - 0.5 / 4.5f64.hypot(3.0)).abs() < 1e-15);
    }

    #[test]
    fn every_suite_passes() {
        let report = run_gradcheck(1, 4).unwrap();
        for s in &report.suites {
            assert!(s.passed, "{s:?}");
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut c = check_const(&mut rng).unwrap();
        c.analytic[0] += 1e-3 * c.analytic.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(relative_error(&c.analytic, &c.numeric) > TOLERANCE);
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_suite("nope", 0, 1).is_err());
        assert!(run_suite("reg", 0, 0).is_err());
    }

    #[test]
    fn kinks_are_found() {
        let mut d = vec![2.0; pixel_count()];
        d[9] = 3.0;
        let k = smooth_kinks(&d);
        assert!(k[0] && k[1]);
        assert!(!k[9]);
    }
}
