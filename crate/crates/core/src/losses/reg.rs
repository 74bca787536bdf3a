use super::{grid_from, LossReport};
use crate::error::{Error, Result};
use crate::fusion::AttentionMap;

/// Hinge on the mean attention: `max(0, tau - mean(alpha))^2 / tau^2`.
///
/// The mean runs over every pixel of the grid. At `mean == tau` the
/// one-sided derivative 0 is used.
pub fn reg_loss(a: &AttentionMap, tau: f64) -> Result<LossReport> {
    if a.values().is_empty() {
        return Err(Error::invalid("attention grid is empty"));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
    }
    let (w, h) = a.shape();
    let n = (w * h) as f64;
    let gap = (tau - a.mean()).max(0.0);
    let tau2 = tau * tau;
    let value = gap * gap / tau2;
    let g = -2.0 * gap / (tau2 * n);

    let mut report = LossReport::new(value, w, h);
    report.grad_alpha = grid_from(w, h, vec![g; w * h]);
    report.terms.reg = value;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarGrid;

    fn attention(values: Vec<f64>) -> AttentionMap {
        let n = values.len();
        AttentionMap::new(ScalarGrid::from_values(n, 1, values).unwrap()).unwrap()
    }

    #[test]
    fn at_threshold_is_zero() {
        let r = reg_loss(&attention(vec![0.5, 0.0]), 0.25).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad_alpha.values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn no_attention_is_one() {
        assert_eq!(reg_loss(&attention(vec![0.0; 6]), 0.3).unwrap().value, 1.0);
    }

    #[test]
    fn half_threshold_is_quarter() {
        let r = reg_loss(&attention(vec![0.25, 0.0]), 0.25).unwrap();
        assert!((r.value - 0.25).abs() < 1e-15);
        // -2 * (tau/2) / (tau^2 * N)
        assert!((r.grad_alpha.values()[0] - (-2.0 * 0.125 / (0.0625 * 2.0))).abs() < 1e-12);
    }

    #[test]
    fn above_threshold_is_flat() {
        let r = reg_loss(&attention(vec![0.9, 0.9]), 0.5).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn rejects_bad_tau() {
        assert!(reg_loss(&attention(vec![0.1]), 0.0).is_err());
        assert!(reg_loss(&attention(vec![0.1]), 1.0).is_err());
    }
}
