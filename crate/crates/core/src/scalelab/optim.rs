use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Rendering, SceneSpec};
use crate::depthmetrics::{evaluate_masked, MetricReport, DEFAULT_CAP};
use crate::error::{Error, Result};
use crate::fusion::{attention_activation, fuse, AttentionMap, DepthField};
use crate::grid::{pairwise_sum, Image, ScalarGrid};
use crate::groundprior::{ground_depth, GroundPrior};
use crate::losses::{total_loss_with, LossInputs, LossReport, LossTerms, LossWeights, ReprojContext};
use crate::viewsynth::RigidPose;

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub steps: usize,
    pub step_size: f64,
    pub momentum: f64,
    /// Factor applied to the step size after an accepted step, capped at
    /// `step_size`.
    pub step_growth: f64,
    /// Stop once rejections have shrunk the step below this.
    pub min_step_size: f64,
    pub attention_logit_init: f64,
    /// Attention logit start of [`ablation`] runs.
    pub ablation_logit_init: f64,
    /// Half-width of uniform noise added to the initial log depth.
    pub init_noise: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            step_size: 1e-2,
            momentum: 0.9,
            step_growth: 1.0,
            min_step_size: 1e-7,
            attention_logit_init: 0.0,
            ablation_logit_init: -6.0,
            init_noise: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step_size must be > 0, got {}", self.step_size)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.step_growth >= 1.0 && self.step_growth.is_finite()) {
            return Err(Error::Config(format!("step_growth must be >= 1, got {}", self.step_growth)));
        }
        if !(self.min_step_size >= 0.0) {
            return Err(Error::Config(format!("min_step_size must be >= 0, got {}", self.min_step_size)));
        }
        if !(self.attention_logit_init.is_finite() && self.ablation_logit_init.is_finite()) {
            return Err(Error::Config("attention logit initializations must be finite".into()));
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return Err(Error::Config(format!("init_noise must be >= 0, got {}", self.init_noise)));
        }
        Ok(())
    }
}

/// Optimization variables and progress.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub log_depth: ScalarGrid,
    pub attention_logits: ScalarGrid,
    pub pose_scale: f64,
    pub step: usize,
    /// Loss after every accepted step, starting with the initial loss.
    pub loss_history: Vec<f64>,
    pub pose_scale_history: Vec<f64>,
}

/// Rendered target and sources with everything the objective needs.
#[derive(Debug, Clone)]
pub struct LabProblem {
    pub spec: SceneSpec,
    pub weights: LossWeights,
    pub target: Rendering,
    pub prior: GroundPrior,
    ctx: ReprojContext,
}

/// Value of the objective and its gradient with respect to the variables.
struct Evaluation {
    report: LossReport,
    grad_residual: Vec<f64>,
    grad_logits: Vec<f64>,
    grad_log_scale: f64,
}

impl LabProblem {
    pub fn new(spec: &SceneSpec, weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        let (target, sources) = spec.render_all()?;
        if target.depth.count_valid() != target.depth.len() {
            return Err(Error::Config("the target view must not see the sky".into()));
        }
        let images: Vec<Image> = sources.into_iter().map(|r| r.image).collect();
        let ctx = ReprojContext::new(&target.image, &images, &spec.camera)?;
        Ok(Self {
            prior: ground_depth(&spec.camera),
            spec: spec.clone(),
            weights,
            target,
            ctx,
        })
    }

    pub fn truth(&self) -> DepthField {
        DepthField {
            depth: self.target.depth.clone(),
        }
    }

    pub fn poses(&self, pose_scale: f64) -> Vec<RigidPose> {
        self.spec.baselines.iter().map(|b| b.scaled(pose_scale)).collect()
    }

    pub fn attention(&self, logits: &ScalarGrid) -> Result<AttentionMap> {
        attention_activation(logits, self.prior.valid())
    }

    /// Total loss of explicit fields.
    pub fn loss(&self, d_hat: &DepthField, alpha: &AttentionMap, pose_scale: f64) -> Result<LossReport> {
        let poses = self.poses(pose_scale);
        let inputs = LossInputs {
            prior: &self.prior,
            d_hat,
            alpha,
            poses: &poses,
        };
        total_loss_with(&self.ctx, inputs, &self.weights)
    }

    /// Objective at `d_hat = exp(log_scale + residual)` and poses scaled by
    /// `exp(log_scale)`.
    fn evaluate(&self, residual: &ScalarGrid, logits: &ScalarGrid, log_scale: f64) -> Result<Evaluation> {
        let d_hat = DepthField {
            depth: residual.map(|r| (log_scale + r).exp()),
        };
        let alpha = self.attention(logits)?;
        let k = log_scale.exp();
        let report = self.loss(&d_hat, &alpha, k)?;
        let grad_residual: Vec<f64> = report
            .grad_depth
            .values()
            .iter()
            .zip(d_hat.values())
            .map(|(g, d)| g * d)
            .collect();
        let grad_logits = report
            .grad_alpha
            .values()
            .iter()
            .zip(alpha.values())
            .zip(self.prior.valid())
            .map(|((g, a), &ok)| if ok { g * a * (1.0 - a) } else { 0.0 })
            .collect();
        let units: Vec<Vector3<f64>> = self.spec.baselines.iter().map(|b| b.translation).collect();
        let grad_log_scale = pairwise_sum(&grad_residual) + k * report.grad_pose_scale(&units);
        Ok(Evaluation {
            report,
            grad_residual,
            grad_logits,
            grad_log_scale,
        })
    }

    /// Starting point: truth scaled by `k0`, uniform attention logits.
    pub fn initial_state(&self, k0: f64, config: &OptimConfig, seed: u64) -> Result<OptimState> {
        if !(k0 > 0.0 && k0.is_finite()) {
            return Err(Error::Config(format!("initial pose scale must be > 0, got {k0}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = self.target.depth.shape();
        let log_depth = ScalarGrid::from_fn(w, h, |u, v| {
            let d = self.target.depth.get(u, v)?;
            let eps = if config.init_noise > 0.0 { rng.gen_range(-config.init_noise..config.init_noise) } else { 0.0 };
            Some((k0 * d).ln() + eps)
        });
        Ok(OptimState {
            log_depth,
            attention_logits: ScalarGrid::filled(w, h, config.attention_logit_init),
            pose_scale: k0,
            step: 0,
            loss_history: Vec::new(),
            pose_scale_history: Vec::new(),
        })
    }
}

/// Result of one optimization run.
#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub state: OptimState,
    pub d_hat: DepthField,
    pub attention: AttentionMap,
    /// Fused prediction.
    pub depth: DepthField,
    pub terms: LossTerms,
    pub accepted_steps: usize,
    pub final_step_size: f64,
}

fn rms(xs: &[f64]) -> f64 {
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    (pairwise_sum(&sq) / xs.len().max(1) as f64).sqrt()
}

fn normalized(xs: &[f64]) -> Vec<f64> {
    let r = rms(xs);
    if r > 0.0 {
        xs.iter().map(|x| x / r).collect()
    } else {
        vec![0.0; xs.len()]
    }
}

/// Momentum descent on normalized gradients with a monotone safeguard: a
/// step that raises the loss is rejected, the step size halved and the
/// velocity cleared.
///
/// Depth is parameterized as `pose_scale * exp(residual)`, so the log pose
/// scale moves depth and translation together. Residuals and attention
/// logits are normalized by their RMS; the log pose scale is normalized as
/// a uniform shift of every log depth.
pub fn run_optimizer(problem: &LabProblem, mut state: OptimState, config: &OptimConfig) -> Result<OptimOutcome> {
    config.validate()?;
    let (w, h) = state.log_depth.shape();
    let n = w * h;
    let mut x_scale = state.pose_scale.ln();
    let mut x_depth: Vec<f64> = state.log_depth.values().iter().map(|d| d - x_scale).collect();
    let mut x_logit = state.attention_logits.values().to_vec();
    let grid = |values: &[f64]| ScalarGrid::from_values(w, h, values.to_vec());

    let mut current = problem.evaluate(&grid(&x_depth)?, &grid(&x_logit)?, x_scale)?;
    let fail = |step: usize, history: &[f64]| Error::OptimizationFailure {
        step,
        history: history.to_vec(),
    };
    if !current.report.value.is_finite() {
        return Err(fail(state.step, &[current.report.value]));
    }
    state.loss_history.push(current.report.value);
    state.pose_scale_history.push(x_scale.exp());

    let (mut v_depth, mut v_logit, mut v_scale) = (vec![0.0; n], vec![0.0; n], 0.0);
    let mut eta = config.step_size;
    let mut accepted = 0;
    while state.step < config.steps && eta >= config.min_step_size {
        state.step += 1;
        let depth_rms = rms(&current.grad_residual);
        let g_depth = normalized(&current.grad_residual);
        let g_logit = normalized(&current.grad_logits);
        let g_scale = if depth_rms > 0.0 {
            current.grad_log_scale / (n as f64 * depth_rms)
        } else {
            0.0
        };
        let nv_depth: Vec<f64> = v_depth.iter().zip(&g_depth).map(|(v, g)| config.momentum * v - eta * g).collect();
        let nv_logit: Vec<f64> = v_logit.iter().zip(&g_logit).map(|(v, g)| config.momentum * v - eta * g).collect();
        let nv_scale = config.momentum * v_scale - eta * g_scale;
        let c_depth: Vec<f64> = x_depth.iter().zip(&nv_depth).map(|(x, v)| x + v).collect();
        let c_logit: Vec<f64> = x_logit.iter().zip(&nv_logit).map(|(x, v)| x + v).collect();
        let c_scale = x_scale + nv_scale;

        let candidate = match problem.evaluate(&grid(&c_depth)?, &grid(&c_logit)?, c_scale) {
            Ok(e) => Some(e),
            Err(Error::DegenerateBatch) => None,
            Err(e) => return Err(e),
        };
        match candidate {
            Some(e) if e.report.value.is_nan() => {
                let mut history = state.loss_history.clone();
                history.push(e.report.value);
                return Err(fail(state.step, &history));
            }
            Some(e) if e.report.value <= current.report.value => {
                x_depth = c_depth;
                x_logit = c_logit;
                x_scale = c_scale;
                v_depth = nv_depth;
                v_logit = nv_logit;
                v_scale = nv_scale;
                current = e;
                accepted += 1;
                eta = (eta * config.step_growth).min(config.step_size);
                state.loss_history.push(current.report.value);
                state.pose_scale_history.push(x_scale.exp());
            }
            _ => {
                eta /= 2.0;
                v_depth.iter_mut().for_each(|v| *v = 0.0);
                v_logit.iter_mut().for_each(|v| *v = 0.0);
                v_scale = 0.0;
            }
        }
    }

    let log_depth: Vec<f64> = x_depth.iter().map(|r| r + x_scale).collect();
    state.log_depth = grid(&log_depth)?;
    state.attention_logits = grid(&x_logit)?;
    state.pose_scale = x_scale.exp();
    let d_hat = DepthField {
        depth: state.log_depth.map(f64::exp),
    };
    let attention = problem.attention(&state.attention_logits)?;
    let depth = fuse(&d_hat, &problem.prior, &attention)?;
    Ok(OptimOutcome {
        state,
        d_hat,
        attention,
        depth,
        terms: current.report.terms,
        accepted_steps: accepted,
        final_step_size: eta,
    })
}

/// Binarized attention against the true ground mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub precision: f64,
    pub recall: f64,
    /// No pixel reached the threshold; precision is reported as 1.
    pub empty_prediction: bool,
    pub predicted: usize,
    pub ground: usize,
}

/// Precision and recall of `alpha >= 0.5` as a flat-ground detector.
pub fn attention_segmentation_report(a: &AttentionMap, ground: &[bool]) -> Result<SegmentationReport> {
    if ground.len() != a.values().len() {
        return Err(Error::invalid(format!(
            "ground mask of length {} for {} attention values",
            ground.len(),
            a.values().len()
        )));
    }
    let predicted: Vec<bool> = a.values().iter().map(|&x| x >= 0.5).collect();
    let tp = predicted.iter().zip(ground).filter(|(&p, &g)| p && g).count();
    let n_pred = predicted.iter().filter(|&&p| p).count();
    let n_ground = ground.iter().filter(|&&g| g).count();
    Ok(SegmentationReport {
        precision: if n_pred == 0 { 1.0 } else { tp as f64 / n_pred as f64 },
        recall: if n_ground == 0 { 1.0 } else { tp as f64 / n_ground as f64 },
        empty_prediction: n_pred == 0,
        predicted: n_pred,
        ground: n_ground,
    })
}

/// Everything a scale-recovery run produces, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub seed: u64,
    pub initial_pose_scale: f64,
    pub weights: LossWeights,
    pub config: OptimConfig,
    pub pose_scale: f64,
    /// Fused depth against ground truth over all valid pixels.
    pub metrics: MetricReport,
    /// The same, restricted to ground pixels.
    pub ground_metrics: MetricReport,
    pub mean_attention: f64,
    pub segmentation: SegmentationReport,
    pub final_loss: f64,
    pub final_terms: LossTerms,
    pub steps: usize,
    pub accepted_steps: usize,
    pub final_step_size: f64,
    pub loss_history: Vec<f64>,
    pub pose_scale_history: Vec<f64>,
}

/// Optimizes depth, attention and pose scale from the truth scaled by `k0`.
pub fn recover_scale(
    spec: &SceneSpec,
    weights: LossWeights,
    config: &OptimConfig,
    k0: f64,
    seed: u64,
) -> Result<(RecoveryReport, OptimOutcome)> {
    let problem = LabProblem::new(spec, weights)?;
    let init = problem.initial_state(k0, config, seed)?;
    let out = run_optimizer(&problem, init, config)?;
    let truth = &problem.target.depth;
    let metrics = evaluate_masked(&out.depth.depth, truth, DEFAULT_CAP, None)?;
    let ground_metrics = evaluate_masked(&out.depth.depth, truth, DEFAULT_CAP, Some(&problem.target.ground))?;
    let report = RecoveryReport {
        seed,
        initial_pose_scale: k0,
        weights,
        config: *config,
        pose_scale: out.state.pose_scale,
        metrics,
        ground_metrics,
        mean_attention: out.attention.mean(),
        segmentation: attention_segmentation_report(&out.attention, &problem.target.ground)?,
        final_loss: *out.state.loss_history.last().expect("history holds the initial loss"),
        final_terms: out.terms,
        steps: out.state.step,
        accepted_steps: out.accepted_steps,
        final_step_size: out.final_step_size,
        loss_history: out.state.loss_history.clone(),
        pose_scale_history: out.state.pose_scale_history.clone(),
    };
    Ok((report, out))
}

/// [`recover_scale`] without the ground constraint and the attention
/// regularizer. Attention starts from `config.ablation_logit_init`, so the
/// prior enters the fused depth only if the photometric term asks for it.
pub fn ablation(
    spec: &SceneSpec,
    weights: LossWeights,
    config: &OptimConfig,
    k0: f64,
    seed: u64,
) -> Result<(RecoveryReport, OptimOutcome)> {
    let weights = LossWeights {
        lambda_const: 0.0,
        lambda_reg: 0.0,
        ..weights
    };
    let config = OptimConfig {
        attention_logit_init: config.ablation_logit_init,
        ..*config
    };
    recover_scale(spec, weights, &config, k0, seed)
}

/// Total loss with depth `k D_true` and poses scaled by `k`, under a fixed
/// attention map, for every `k` in `scales`.
pub fn joint_scale_losses(problem: &LabProblem, alpha: &AttentionMap, scales: &[f64]) -> Result<Vec<f64>> {
    let truth = problem.truth();
    scales
        .iter()
        .map(|&k| {
            let d_hat = DepthField {
                depth: truth.depth.map(|d| k * d),
            };
            Ok(problem.loss(&d_hat, alpha, k)?.value)
        })
        .collect()
}
