use super::{LossConfig, LossValue};
use crate::error::{Error, Result};
use crate::types::EmbeddingBatch;
use crate::weak_labels::WeakLabelMatrix;

/// Row-normalized copy of a set of embeddings.
struct Normalized {
    n: usize,
    d: usize,
    units: Vec<f64>,
    norms: Vec<f64>,
}

impl Normalized {
    fn new(rows: &[&[f64]], d: usize) -> Result<Self> {
        let mut units = Vec::with_capacity(rows.len() * d);
        let mut norms = Vec::with_capacity(rows.len());
        for (row, r) in rows.iter().enumerate() {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 1e-12) {
                return Err(Error::DegenerateEmbedding { row });
            }
            units.extend(r.iter().map(|v| v / norm));
            norms.push(norm);
        }
        Ok(Self {
            n: rows.len(),
            d,
            units,
            norms,
        })
    }

    fn unit(&self, i: usize) -> &[f64] {
        &self.units[i * self.d..(i + 1) * self.d]
    }

    fn sim(&self, i: usize, j: usize) -> f64 {
        self.unit(i).iter().zip(self.unit(j)).map(|(a, b)| a * b).sum()
    }

    /// Maps `∂L/∂u` to `∂L/∂z` through `u = z / ‖z‖`.
    fn backprop(&self, grad_units: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; grad_units.len()];
        for i in 0..self.n {
            let u = self.unit(i);
            let g = &grad_units[i * self.d..(i + 1) * self.d];
            let radial: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
            for k in 0..self.d {
                out[i * self.d + k] = (g[k] - radial * u[k]) / self.norms[i];
            }
        }
        out
    }
}

/// Sum over anchors of `Σ_{j∈P(a)} −log softmax_{k≠a}(s_ak/τ)_j`, scaled by
/// `scale`. Returns the value and `∂/∂z` for every row.
fn softmax_contrastive(
    emb: &Normalized,
    positives: impl Fn(usize) -> Vec<usize>,
    tau: f64,
    scale: f64,
) -> (f64, Vec<f64>) {
    let (n, d) = (emb.n, emb.d);
    let sims: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| emb.sim(i, j))
        .collect();

    let mut total = 0.0;
    let mut grad_units = vec![0.0; n * d];
    let mut logits = vec![0.0; n];
    for a in 0..n {
        let pos = positives(a);
        if pos.is_empty() {
            continue;
        }
        for k in 0..n {
            logits[k] = sims[a * n + k] / tau;
        }
        let max = (0..n)
            .filter(|&k| k != a)
            .map(|k| logits[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&k| k != a).map(|k| (logits[k] - max).exp()).sum();
        let lse = max + denom.ln();

        let anchor_loss: f64 = pos.iter().map(|&j| lse - logits[j]).sum();
        total += scale * anchor_loss;

        let count = pos.len() as f64;
        for k in (0..n).filter(|&k| k != a) {
            let p = (logits[k] - lse).exp();
            let target = pos.iter().filter(|&&j| j == k).count() as f64;
            let coef = scale * (count * p - target) / tau;
            if coef == 0.0 {
                continue;
            }
            for t in 0..d {
                grad_units[a * d + t] += coef * emb.units[k * d + t];
                grad_units[k * d + t] += coef * emb.units[a * d + t];
            }
        }
    }
    (total, emb.backprop(&grad_units))
}

/// Two-view InfoNCE over the `2N` pooled embeddings. Gradients:
/// `[∂/∂views_a, ∂/∂views_b]`.
pub fn info_nce(views_a: &EmbeddingBatch, views_b: &EmbeddingBatch, cfg: &LossConfig) -> Result<LossValue> {
    cfg.validate()?;
    if views_a.count() != views_b.count() || views_a.dim() != views_b.dim() {
        return Err(Error::Dimension(format!(
            "view batches are {}x{} and {}x{}",
            views_a.count(),
            views_a.dim(),
            views_b.count(),
            views_b.dim()
        )));
    }
    let n = views_a.count();
    let d = views_a.dim();
    let rows: Vec<&[f64]> = views_a.rows().chain(views_b.rows()).collect();
    let emb = Normalized::new(&rows, d)?;
    let pooled = 2 * n;
    let (value, grad) = softmax_contrastive(
        &emb,
        |a| vec![(a + n) % pooled],
        cfg.tau,
        1.0 / pooled as f64,
    );
    let (ga, gb) = grad.split_at(n * d);
    Ok(LossValue {
        value,
        gradients: vec![ga.to_vec(), gb.to_vec()],
    })
}

/// Weak-label supervised contrastive loss, averaged over the batch.
pub fn sup_contrastive(v: &EmbeddingBatch, y: &WeakLabelMatrix, cfg: &LossConfig) -> Result<LossValue> {
    cfg.validate()?;
    let n = v.count();
    if y.n() != n {
        return Err(Error::Dimension(format!(
            "label matrix is {0}x{0} but batch has {n} rows",
            y.n()
        )));
    }
    let rows: Vec<&[f64]> = v.rows().collect();
    let emb = Normalized::new(&rows, v.dim())?;
    if n < 2 {
        return Ok(LossValue::zero(&[n * v.dim()]));
    }
    let (value, grad) = softmax_contrastive(
        &emb,
        |i| (0..n).filter(|&j| y.get(i, j)).collect(),
        cfg.tau,
        1.0 / n as f64,
    );
    Ok(LossValue {
        value,
        gradients: vec![grad],
    })
}

/// `sup(v1, y2) + sup(v2, y1)`: each view is supervised by the other view's
/// labels. Gradients: `[∂/∂v1, ∂/∂v2]`.
pub fn graph_loss(
    v1: &EmbeddingBatch,
    v2: &EmbeddingBatch,
    y1: &WeakLabelMatrix,
    y2: &WeakLabelMatrix,
    cfg: &LossConfig,
) -> Result<LossValue> {
    if v1.count() != v2.count() {
        return Err(Error::Dimension(format!(
            "view batches have {} and {} rows",
            v1.count(),
            v2.count()
        )));
    }
    let first = sup_contrastive(v1, y2, cfg)?;
    let second = sup_contrastive(v2, y1, cfg)?;
    Ok(LossValue {
        value: first.value + second.value,
        gradients: first.gradients.into_iter().chain(second.gradients).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weak_labels::{weak_label_matrix, ComponentLabels};

    fn tau1() -> LossConfig {
        LossConfig {
            tau: 1.0,
            ..Default::default()
        }
    }

    fn batch(rows: &[&[f64]]) -> EmbeddingBatch {
        EmbeddingBatch::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn info_nce_single_pair_is_zero() {
        let a = batch(&[&[0.3, -1.2, 0.5]]);
        let b = batch(&[&[2.0, 0.1, 0.0]]);
        let l = info_nce(&a, &b, &LossConfig::default()).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn info_nce_orthonormal_duplicates() {
        let a = batch(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let l = info_nce(&a, &a, &tau1()).unwrap();
        let e = std::f64::consts::E;
        assert!((l.value - ((e + 2.0) / e).ln()).abs() < 1e-12);
        assert!((l.value - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn info_nce_rejects_zero_rows_and_mismatch() {
        let a = batch(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let b = batch(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(info_nce(&a, &b, &tau1()), Err(Error::DegenerateEmbedding { row: 1 })));
        let c = batch(&[&[1.0, 0.0]]);
        assert!(matches!(info_nce(&b, &c, &tau1()), Err(Error::Dimension(_))));
    }

    #[test]
    fn sup_contrastive_examples() {
        let v = batch(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let zero = sup_contrastive(&v, &WeakLabelMatrix::zeros(3), &tau1()).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(zero.gradients[0].iter().all(|&g| g == 0.0));

        let y = weak_label_matrix(&ComponentLabels::from_raw(&[0, 0, 1]));
        let l = sup_contrastive(&v, &y, &tau1()).unwrap();
        let e = std::f64::consts::E;
        let li = ((e + 1.0) / e).ln();
        assert!((l.value - 2.0 * li / 3.0).abs() < 1e-12);
        assert!((l.value - 0.2089).abs() < 1e-4);

        let v2 = batch(&[&[0.2, 0.7], &[0.2, 0.7]]);
        let y2 = weak_label_matrix(&ComponentLabels::from_raw(&[0, 0]));
        assert!(sup_contrastive(&v2, &y2, &LossConfig::default()).unwrap().value.abs() < 1e-15);
    }

    #[test]
    fn graph_loss_examples() {
        let v = batch(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let w = batch(&[&[0.5, 0.1], &[-0.3, 1.0], &[0.7, 0.7]]);
        let z = WeakLabelMatrix::zeros(3);
        assert_eq!(graph_loss(&v, &w, &z, &z, &tau1()).unwrap().value, 0.0);

        let y = weak_label_matrix(&ComponentLabels::from_raw(&[0, 0, 1]));
        // v supervised by y, w by zero labels
        let l = graph_loss(&v, &w, &z, &y, &tau1()).unwrap();
        assert!((l.value - 0.2089).abs() < 1e-4);

        let swapped = graph_loss(&w, &v, &y, &z, &tau1()).unwrap();
        assert_eq!(l.value, swapped.value);
    }
}
