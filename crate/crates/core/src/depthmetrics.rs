//! Standard depth evaluation metrics, without any median scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{pairwise_sum, ScalarGrid};

pub const DEFAULT_CAP: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub n_pixels: usize,
}

/// Metrics over pixels valid in both grids with ground truth `<= cap`.
/// Accuracy thresholds are strict: `max(p/g, g/p) < 1.25^n`.
pub fn evaluate(pred: &ScalarGrid, gt: &ScalarGrid, cap: f64) -> Result<MetricReport> {
    evaluate_masked(pred, gt, cap, None)
}

/// [`evaluate`] restricted further by `mask`.
pub fn evaluate_masked(pred: &ScalarGrid, gt: &ScalarGrid, cap: f64, mask: Option<&[bool]>) -> Result<MetricReport> {
    pred.ensure_shape(gt.shape())?;
    if !(cap > 0.0) {
        return Err(Error::invalid(format!("depth cap must be positive, got {cap}")));
    }
    if let Some(m) = mask {
        if m.len() != gt.len() {
            return Err(Error::invalid(format!("mask has {} entries for {} pixels", m.len(), gt.len())));
        }
    }
    let mut pairs = Vec::new();
    for i in 0..gt.len() {
        if !(gt.mask()[i] && pred.mask()[i] && mask.map_or(true, |m| m[i])) {
            continue;
        }
        let (p, g) = (pred.values()[i], gt.values()[i]);
        if g > cap {
            continue;
        }
        if !(p > 0.0 && g > 0.0) {
            return Err(Error::invalid(format!("non-positive depth at pixel {i}: pred {p}, gt {g}")));
        }
        pairs.push((p, g));
    }
    if pairs.is_empty() {
        return Err(Error::DegenerateEvaluation);
    }
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(f64, f64) -> f64| pairwise_sum(&pairs.iter().map(|&(p, g)| f(p, g)).collect::<Vec<_>>()) / n;
    let within = |t: f64| pairs.iter().filter(|&&(p, g)| (p / g).max(g / p) < t).count() as f64 / n;
    Ok(MetricReport {
        abs_rel: mean(&|p, g| (p - g).abs() / g),
        sq_rel: mean(&|p, g| (p - g).powi(2) / g),
        rmse: mean(&|p, g| (p - g).powi(2)).sqrt(),
        rmse_log: mean(&|p, g| (p.ln() - g.ln()).powi(2)).sqrt(),
        d1: within(1.25),
        d2: within(1.25f64.powi(2)),
        d3: within(1.25f64.powi(3)),
        n_pixels: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(p: f64, g: f64) -> MetricReport {
        evaluate(&ScalarGrid::filled(1, 1, p), &ScalarGrid::filled(1, 1, g), DEFAULT_CAP).unwrap()
    }

    #[test]
    fn identical_grids() {
        let g = ScalarGrid::from_fn(4, 3, |u, v| Some(1.0 + (u + 4 * v) as f64));
        let r = evaluate(&g, &g, DEFAULT_CAP).unwrap();
        assert_eq!((r.abs_rel, r.sq_rel, r.rmse, r.rmse_log), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((r.d1, r.d2, r.d3), (1.0, 1.0, 1.0));
        assert_eq!(r.n_pixels, 12);
    }

    #[test]
    fn hand_computed_pixel() {
        let r = single(2.0, 1.0);
        assert_eq!((r.abs_rel, r.sq_rel, r.rmse), (1.0, 1.0, 1.0));
        assert!((r.rmse_log - 2f64.ln()).abs() < 1e-15);
        assert_eq!((r.d1, r.d2, r.d3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn uniform_twenty_percent_overshoot() {
        let g = ScalarGrid::from_fn(5, 5, |u, v| Some(2.0 + (u * v) as f64));
        let r = evaluate(&g.map(|x| 1.2 * x), &g, DEFAULT_CAP).unwrap();
        assert_eq!(r.d1, 1.0);
        assert!((r.abs_rel - 0.2).abs() < 1e-12);
    }

    #[test]
    fn thresholds_are_strict() {
        assert_eq!(single(1.25, 1.0).d1, 0.0);
        assert_eq!(single(1.25, 1.0).d2, 1.0);
    }

    #[test]
    fn mask_and_cap() {
        let mut gt = ScalarGrid::from_values(3, 1, vec![10.0, 90.0, 5.0]).unwrap();
        gt.invalidate(2, 0);
        let pred = ScalarGrid::filled(3, 1, 10.0);
        assert_eq!(evaluate(&pred, &gt, 80.0).unwrap().n_pixels, 1);
        assert!(matches!(evaluate(&pred, &gt, 5.0), Err(Error::DegenerateEvaluation)));
        assert!(evaluate(&pred, &ScalarGrid::filled(2, 1, 1.0), 80.0).is_err());
    }

    fn grids() -> impl Strategy<Value = (ScalarGrid, ScalarGrid)> {
        (prop::collection::vec(0.5f64..60.0, 16), prop::collection::vec(0.5f64..60.0, 16)).prop_map(|(p, g)| {
            (
                ScalarGrid::from_values(4, 4, p).unwrap(),
                ScalarGrid::from_values(4, 4, g).unwrap(),
            )
        })
    }

    proptest! {
        #[test]
        fn thresholds_are_monotone((p, g) in grids()) {
            let r = evaluate(&p, &g, DEFAULT_CAP).unwrap();
            prop_assert!(0.0 <= r.d1 && r.d1 <= r.d2 && r.d2 <= r.d3 && r.d3 <= 1.0);
            prop_assert!(r.abs_rel >= 0.0 && r.sq_rel >= 0.0 && r.rmse >= 0.0 && r.rmse_log >= 0.0);
        }

        #[test]
        fn log_and_ratio_metrics_are_symmetric((p, g) in grids()) {
            let a = evaluate(&p, &g, DEFAULT_CAP).unwrap();
            let b = evaluate(&g, &p, DEFAULT_CAP).unwrap();
            prop_assert!((a.rmse_log - b.rmse_log).abs() < 1e-12);
            prop_assert_eq!((a.d1, a.d2, a.d3), (b.d1, b.d2, b.d3));
            prop_assert!((a.rmse - b.rmse).abs() < 1e-12);
        }

        #[test]
        fn raising_cap_never_drops_pixels((p, g) in grids(), lo in 1.0f64..60.0, extra in 0.0f64..30.0) {
            let n = |cap| evaluate(&p, &g, cap).map(|r| r.n_pixels).unwrap_or(0);
            prop_assert!(n(lo) <= n(lo + extra));
        }
    }

    #[test]
    fn relative_errors_are_asymmetric() {
        let a = single(2.0, 1.0);
        let b = single(1.0, 2.0);
        assert!(a.abs_rel != b.abs_rel && a.sq_rel != b.sq_rel);
    }
}
