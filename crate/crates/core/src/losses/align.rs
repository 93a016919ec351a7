use super::LossValue;
use crate::error::{Error, Result};
use crate::types::FeatureMap;

fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(logits) {
        *o = v - lse;
    }
}

/// Symmetric per-pixel cross-entropy between channel softmax distributions,
/// normalized by `c · h · w`. Gradients: `[∂/∂s_i, ∂/∂s_j]`.
pub fn align_loss(s_i: &FeatureMap, s_j: &FeatureMap) -> Result<LossValue> {
    if !s_i.same_shape(s_j) {
        return Err(Error::Dimension(format!(
            "alignment inputs are {}x{}x{} and {}x{}x{}",
            s_i.channels(),
            s_i.height(),
            s_i.width(),
            s_j.channels(),
            s_j.height(),
            s_j.width()
        )));
    }
    let c = s_i.channels();
    let pixels = s_i.pixels();
    let norm = 1.0 / (c * pixels) as f64;

    let mut a = vec![0.0; c];
    let mut b = vec![0.0; c];
    let mut log_p = vec![0.0; c];
    let mut log_q = vec![0.0; c];
    let mut grad_i = vec![0.0; c * pixels];
    let mut grad_j = vec![0.0; c * pixels];
    let mut total = 0.0;

    for p in 0..pixels {
        for k in 0..c {
            a[k] = s_i.data()[k * pixels + p];
            b[k] = s_j.data()[k * pixels + p];
        }
        log_softmax(&a, &mut log_p);
        log_softmax(&b, &mut log_q);

        let mut ce_ab = 0.0;
        let mut ce_ba = 0.0;
        for k in 0..c {
            let (pk, qk) = (log_p[k].exp(), log_q[k].exp());
            ce_ab -= pk * log_q[k];
            ce_ba -= qk * log_p[k];
        }
        total += ce_ab + ce_ba;

        // CE(P,Q) = -Σ P log Q: ∂/∂b = Q − P, ∂/∂a = −P ⊙ (log Q − ⟨P, log Q⟩)
        let p_dot_logq: f64 = (0..c).map(|k| log_p[k].exp() * log_q[k]).sum();
        let q_dot_logp: f64 = (0..c).map(|k| log_q[k].exp() * log_p[k]).sum();
        for k in 0..c {
            let (pk, qk) = (log_p[k].exp(), log_q[k].exp());
            let da = -pk * (log_q[k] - p_dot_logq) + (pk - qk);
            let db = -qk * (log_p[k] - q_dot_logp) + (qk - pk);
            grad_i[k * pixels + p] = norm * da;
            grad_j[k * pixels + p] = norm * db;
        }
    }

    Ok(LossValue {
        value: norm * total,
        gradients: vec![grad_i, grad_j],
    })
}
