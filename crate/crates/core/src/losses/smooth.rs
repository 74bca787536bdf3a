use super::photometric::sign;
use super::{grid_from, LossReport};
use crate::error::{Error, Result};
use crate::fusion::DepthField;
use crate::grid::{pairwise_sum, Image};

/// Edge-aware smoothness of the mean-normalized inverse depth
/// `s = (1/d) / mean(1/d)`:
///
/// `mean_x(|dx s| e^{-|dx I|}) + mean_y(|dy s| e^{-|dy I|})`
///
/// with forward differences; each mean runs over its own difference grid.
pub fn smooth_loss(d: &DepthField, img: &Image) -> Result<LossReport> {
    let shape = d.shape();
    img.ensure_shape(shape)?;
    let (w, h) = shape;
    let depth = d.values();
    if let Some((i, x)) = depth
        .iter()
        .zip(d.depth.mask())
        .enumerate()
        .find(|(_, (x, &ok))| !ok || !(**x > 0.0))
        .map(|(i, (x, _))| (i, x))
    {
        return Err(Error::invalid(format!("smoothness needs positive depth everywhere; pixel {i} holds {x}")));
    }

    let n = (w * h) as f64;
    let inv: Vec<f64> = depth.iter().map(|x| 1.0 / x).collect();
    let mean = pairwise_sum(&inv) / n;
    let s: Vec<f64> = inv.iter().map(|q| q / mean).collect();
    let intensity = img.data();

    let mut terms = Vec::with_capacity(2 * w * h);
    let mut grad_s = vec![0.0; w * h];
    let nx = ((w - 1) * h) as f64;
    let ny = (w * (h - 1)) as f64;
    if w > 1 {
        for v in 0..h {
            for u in 0..w - 1 {
                let (i, j) = (v * w + u, v * w + u + 1);
                let weight = (-(intensity[j] - intensity[i]).abs()).exp();
                let ds = s[j] - s[i];
                terms.push(ds.abs() * weight / nx);
                let g = sign(ds) * weight / nx;
                grad_s[j] += g;
                grad_s[i] -= g;
            }
        }
    }
    if h > 1 {
        for v in 0..h - 1 {
            for u in 0..w {
                let (i, j) = (v * w + u, (v + 1) * w + u);
                let weight = (-(intensity[j] - intensity[i]).abs()).exp();
                let ds = s[j] - s[i];
                terms.push(ds.abs() * weight / ny);
                let g = sign(ds) * weight / ny;
                grad_s[j] += g;
                grad_s[i] -= g;
            }
        }
    }
    let value = pairwise_sum(&terms);

    // s_i = q_i / m with m = mean(q): dL/dq_i = g_i / m - sum_j(g_j q_j) / (N m^2)
    let weighted: Vec<f64> = grad_s.iter().zip(&inv).map(|(g, q)| g * q).collect();
    let coupling = pairwise_sum(&weighted) / (n * mean * mean);
    let grad_depth: Vec<f64> = grad_s
        .iter()
        .zip(depth)
        .map(|(g, x)| (g / mean - coupling) * (-1.0 / (x * x)))
        .collect();

    let mut report = LossReport::new(value, w, h);
    report.grad_depth = grid_from(w, h, grad_depth);
    report.terms.smooth = value;
    Ok(report)
}
