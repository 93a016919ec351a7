//! Contrastive, graph and dense alignment losses with hand-derived gradients.
//!
//! Every loss returns its value together with the gradient with respect to
//! each differentiable input, flattened in the input's own layout (row-major
//! for embedding batches, channel-major for feature maps).

mod align;
mod contrastive;
mod geometry;

pub use align::align_loss;
pub use contrastive::{graph_loss, info_nce, sup_contrastive};
pub use geometry::{overlap_region, resample_region, BilinearSampler, Region, ViewGeometry};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Softmax temperature.
    pub tau: f64,
    /// Weight of the graph loss in the total objective.
    pub alpha: f64,
    /// Weight of the alignment loss in the total objective.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            alpha: 5.0,
            beta: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be > 0, got {}", self.tau)));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::InvalidArgument("alpha and beta must be finite".into()));
        }
        Ok(())
    }
}

/// A loss value with one gradient buffer per differentiable input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradients: Vec<Vec<f64>>,
}

impl LossValue {
    pub fn zero(shapes: &[usize]) -> Self {
        Self {
            value: 0.0,
            gradients: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn scaled(&self, w: f64) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.gradients
            .iter()
            .map(move |g| g.iter().map(|v| w * v).collect())
    }
}

/// `nce + α·graph + β·align`. Gradients are concatenated in that order,
/// each scaled by its coefficient.
pub fn total_loss(nce: &LossValue, graph: &LossValue, align: &LossValue, cfg: &LossConfig) -> LossValue {
    let value = nce.value + cfg.alpha * graph.value + cfg.beta * align.value;
    let gradients = nce
        .scaled(1.0)
        .chain(graph.scaled(cfg.alpha))
        .chain(align.scaled(cfg.beta))
        .collect();
    LossValue { value, gradients }
}

/// Central-difference gradient of `f` at `point`.
pub fn numeric_gradient<F>(mut f: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + h;
        let plus = f(&x);
        x[k] = orig - h;
        let minus = f(&x);
        x[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Probe { coordinate: k });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_square_norm() {
        let g = numeric_gradient(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
        let g = numeric_gradient(|_| 3.0, &[1.0, 2.0, 3.0], 1e-4).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn numeric_gradient_reports_probe_failure() {
        let err = numeric_gradient(|x| if x[1] > 2.0 { f64::NAN } else { 0.0 }, &[0.0, 2.0], 1e-4)
            .unwrap_err();
        assert!(matches!(err, Error::Probe { coordinate: 1 }));
        assert!(numeric_gradient(|_| 0.0, &[0.0], 0.0).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        let cfg = LossConfig::default();
        let nce = LossValue { value: 0.5, gradients: vec![vec![1.0]] };
        let graph = LossValue { value: 0.1, gradients: vec![vec![1.0]] };
        let align = LossValue { value: 0.2, gradients: vec![vec![1.0]] };
        let t = total_loss(&nce, &graph, &align, &cfg);
        assert!((t.value - 1.2).abs() < 1e-15);
        assert_eq!(t.gradients, vec![vec![1.0], vec![5.0], vec![1.0]]);

        let z = LossValue::zero(&[1]);
        assert_eq!(total_loss(&z, &z, &z, &cfg).value, 0.0);

        let off = LossConfig { alpha: 0.0, beta: 0.0, ..cfg };
        assert_eq!(total_loss(&nce, &graph, &align, &off).value, 0.5);
    }

    #[test]
    fn tau_must_be_positive() {
        assert!(LossConfig { tau: 0.0, ..Default::default() }.validate().is_err());
    }
}
