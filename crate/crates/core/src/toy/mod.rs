//! Desk-scale training of a small patch encoder under the full objective,
//! followed by PCA discovery on its dense features.

mod encoder;
mod scene;

pub use encoder::{EncodeCache, Encoded, TensorSpec, ToyEncoder, DEFAULT_EMBED, DEFAULT_PATCH};
pub use scene::{augment, augment_with, gen_synthetic, AugmentConfig, SyntheticScene, NUM_CLASSES, SCENE_SIZE};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{
    align_loss, graph_loss, info_nce, overlap_region, resample_region, total_loss, BilinearSampler, LossConfig,
    LossValue, Region, ViewGeometry,
};
use crate::metrics::mask_iou_accuracy;
use crate::pca::{binarize, discover, DiscoveryConfig};
use crate::types::{EmbeddingBatch, FeatureMap, ProjectionMap, SegMask};
use crate::weak_labels::{weak_labels, WeakLabelMatrix};

const INIT_STREAM: u64 = 1 << 40;
const TRAIN_STREAM: u64 = (1 << 40) + 1;
const HELDOUT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Number of training scenes.
    pub scenes: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    /// Side of the grid the two views' overlap is resampled onto.
    pub align_grid: usize,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 16,
            epochs: 30,
            lr: 7.5e-3,
            seed: 0,
            loss: LossConfig::default(),
            scenes: 512,
            patch_size: DEFAULT_PATCH,
            embed_dim: DEFAULT_EMBED,
            align_grid: 8,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch < 2 || self.epochs == 0 || self.scenes < self.batch || self.align_grid == 0 {
            return Err(Error::InvalidArgument(format!(
                "need batch >= 2, epochs >= 1, scenes >= batch and align_grid >= 1 (batch {}, epochs {}, scenes {})",
                self.batch, self.epochs, self.scenes
            )));
        }
        if !SCENE_SIZE.is_multiple_of(self.patch_size) {
            return Err(Error::InvalidArgument(format!(
                "patch size {} does not divide the scene size {SCENE_SIZE}",
                self.patch_size
            )));
        }
        Ok(())
    }

    /// The encoder training starts from; also the random-init baseline.
    pub fn initial_encoder(&self) -> Result<ToyEncoder> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(INIT_STREAM);
        ToyEncoder::new(self.patch_size, self.embed_dim, &mut rng)
    }
}

/// Two augmented views of one scene.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub first: (FeatureMap, ViewGeometry),
    pub second: (FeatureMap, ViewGeometry),
}

/// Weak labels held fixed while probing the objective numerically; they are
/// piecewise constant in the parameters.
#[derive(Debug, Clone)]
pub struct FixedLabels {
    pub y1: WeakLabelMatrix,
    pub y2: WeakLabelMatrix,
}

/// Objective value, its components, and the gradient for every parameter.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub total: f64,
    pub nce: f64,
    pub graph: f64,
    pub align: f64,
    pub grad: Vec<f64>,
    pub labels: FixedLabels,
}

fn batch_of(rows: Vec<Vec<f64>>) -> Result<EmbeddingBatch> {
    EmbeddingBatch::from_rows(&rows)
}

/// The full objective on one batch of view pairs:
/// `info_nce(g) + α·graph_loss(φ, swapped weak labels) + β·mean align_loss(η)`.
pub fn batch_objective(
    enc: &ToyEncoder,
    pairs: &[ViewPair],
    loss: &LossConfig,
    align_grid: usize,
    labels: Option<&FixedLabels>,
) -> Result<StepResult> {
    let n = pairs.len();
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for p in pairs {
        first.push(enc.encode_with_cache(&p.first.0)?);
        second.push(enc.encode_with_cache(&p.second.0)?);
    }
    let g1 = batch_of(first.iter().map(|e| e.0.pooled_g.clone()).collect())?;
    let g2 = batch_of(second.iter().map(|e| e.0.pooled_g.clone()).collect())?;
    let p1 = batch_of(first.iter().map(|e| e.0.pooled_phi.clone()).collect())?;
    let p2 = batch_of(second.iter().map(|e| e.0.pooled_phi.clone()).collect())?;

    let labels = match labels {
        Some(l) => l.clone(),
        None => FixedLabels {
            y1: weak_labels(&p1)?,
            y2: weak_labels(&p2)?,
        },
    };
    let nce = info_nce(&g1, &g2, loss)?;
    let graph = graph_loss(&p1, &p2, &labels.y1, &labels.y2, loss)?;

    let eta_len = first[0].0.dense_eta.data().len();
    let (eh, ew) = (first[0].0.dense_eta.height(), first[0].0.dense_eta.width());
    let channels = first[0].0.dense_eta.channels();
    let mut eta_grad_1 = vec![0.0; n * eta_len];
    let mut eta_grad_2 = vec![0.0; n * eta_len];
    let mut align_sum = 0.0;
    let mut overlapping = 0usize;
    let mut per_pair = Vec::with_capacity(n);
    for (i, p) in pairs.iter().enumerate() {
        let Some((r1, r2)) = overlap_region(&p.first.1, &p.second.1) else {
            per_pair.push(None);
            continue;
        };
        let s1 = BilinearSampler::new(eh, ew, &r1, align_grid, align_grid)?;
        let s2 = BilinearSampler::new(eh, ew, &r2, align_grid, align_grid)?;
        let a = align_loss(&s1.forward(&first[i].0.dense_eta)?, &s2.forward(&second[i].0.dense_eta)?)?;
        align_sum += a.value;
        overlapping += 1;
        per_pair.push(Some((s1, s2, a)));
    }
    let scale = if overlapping == 0 { 0.0 } else { 1.0 / overlapping as f64 };
    for (i, entry) in per_pair.iter().enumerate() {
        if let Some((s1, s2, a)) = entry {
            let b1 = s1.backward(&a.gradients[0], channels);
            let b2 = s2.backward(&a.gradients[1], channels);
            for (dst, v) in eta_grad_1[i * eta_len..(i + 1) * eta_len].iter_mut().zip(b1) {
                *dst = scale * v;
            }
            for (dst, v) in eta_grad_2[i * eta_len..(i + 1) * eta_len].iter_mut().zip(b2) {
                *dst = scale * v;
            }
        }
    }
    let align = LossValue {
        value: scale * align_sum,
        gradients: vec![eta_grad_1, eta_grad_2],
    };

    let total = total_loss(&nce, &graph, &align, loss);
    let d = enc.embed_dim();
    let g = &total.gradients;
    let mut grad = vec![0.0; enc.params().len()];
    for i in 0..n {
        let rows = i * d..(i + 1) * d;
        let maps = i * eta_len..(i + 1) * eta_len;
        enc.backward(&first[i].1, &g[0][rows.clone()], &g[2][rows.clone()], &g[4][maps.clone()], &mut grad);
        enc.backward(&second[i].1, &g[1][rows.clone()], &g[3][rows], &g[5][maps], &mut grad);
    }
    Ok(StepResult {
        total: total.value,
        nce: nce.value,
        graph: graph.value,
        align: align.value,
        grad,
        labels,
    })
}

/// Two independently augmented views per scene.
pub fn make_pairs(scenes: &[&SyntheticScene], cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Vec<ViewPair> {
    scenes
        .iter()
        .map(|s| ViewPair {
            first: augment_with(s, cfg, rng),
            second: augment_with(s, cfg, rng),
        })
        .collect()
}

/// Trains from [`TrainConfig::initial_encoder`] with plain gradient descent.
/// Returns the encoder and the mean objective per epoch.
pub fn train_toy(cfg: &TrainConfig) -> Result<(ToyEncoder, Vec<f64>)> {
    let scenes = gen_synthetic(cfg.seed, cfg.scenes);
    let enc = cfg.initial_encoder()?;
    train_on(cfg, &scenes, enc)
}

pub fn train_on(cfg: &TrainConfig, scenes: &[SyntheticScene], mut enc: ToyEncoder) -> Result<(ToyEncoder, Vec<f64>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&SyntheticScene> = chunk.iter().map(|&i| &scenes[i]).collect();
            let pairs = make_pairs(&batch, &cfg.augment, &mut rng);
            let result = batch_objective(&enc, &pairs, &cfg.loss, cfg.align_grid, None)?;
            if !result.total.is_finite() || result.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, step });
            }
            for (p, g) in enc.params_mut().iter_mut().zip(&result.grad) {
                *p -= cfg.lr * g;
            }
            sum += result.total;
            steps += 1;
        }
        if enc.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch, step: steps });
        }
        trace.push(sum / steps as f64);
    }
    Ok((enc, trace))
}

/// Discovery on a (possibly coarse) feature grid; the signed heatmap is
/// bilinearly upsampled to `out_h × out_w` and then binarized.
pub fn discover_upsampled(features: &FeatureMap, out_h: usize, out_w: usize, cfg: &DiscoveryConfig) -> Result<SegMask> {
    let d = discover(features, cfg)?;
    if d.degenerate {
        return SegMask::empty(out_h, out_w);
    }
    let heat = FeatureMap::new(1, d.heatmap.height(), d.heatmap.width(), d.heatmap.values().to_vec())?;
    let up = resample_region(&heat, &Region::FULL, out_h, out_w)?;
    Ok(binarize(&ProjectionMap::new(out_h, out_w, up.into_data())?, cfg.threshold))
}

/// Mean IoU of [`discover_upsampled`] masks against each scene's mask.
pub fn evaluate_features(features: &[FeatureMap], scenes: &[SyntheticScene], cfg: &DiscoveryConfig) -> Result<f64> {
    if features.len() != scenes.len() || scenes.is_empty() {
        return Err(Error::Dimension(format!(
            "{} feature maps for {} scenes",
            features.len(),
            scenes.len()
        )));
    }
    let mut sum = 0.0;
    for (f, s) in features.iter().zip(scenes) {
        let mask = discover_upsampled(f, s.gt_mask.height(), s.gt_mask.width(), cfg)?;
        sum += mask_iou_accuracy(&mask, &s.gt_mask)?.0;
    }
    Ok(sum / scenes.len() as f64)
}

/// Mean discovery IoU of the encoder's dense features over `scenes`.
pub fn evaluate_toy(enc: &ToyEncoder, scenes: &[SyntheticScene]) -> Result<f64> {
    let features = scenes
        .iter()
        .map(|s| enc.encode(&s.image).map(|e| e.dense))
        .collect::<Result<Vec<_>>>()?;
    evaluate_features(&features, scenes, &DiscoveryConfig::default())
}

/// Held-out scenes for a training seed, disjoint from the training stream.
pub fn heldout_scenes(seed: u64, n: usize) -> Vec<SyntheticScene> {
    gen_synthetic(seed ^ HELDOUT_SALT, n)
}

/// Outcome of a full train-and-evaluate run.
#[derive(Debug, Clone)]
pub struct ToyReport {
    pub trace: Vec<f64>,
    pub baseline_iou: f64,
    pub trained_iou: f64,
    pub encoder: ToyEncoder,
}

impl ToyReport {
    /// Mean of the first and last `k` trace entries.
    pub fn trace_ends(&self, k: usize) -> (f64, f64) {
        let k = k.min(self.trace.len()).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (mean(&self.trace[..k]), mean(&self.trace[self.trace.len() - k..]))
    }
}

/// Trains with `cfg` and scores the random-init and trained encoders on
/// `heldout` held-out scenes.
pub fn run_toy_experiment(cfg: &TrainConfig, heldout: usize) -> Result<ToyReport> {
    let test = heldout_scenes(cfg.seed, heldout);
    let baseline_iou = evaluate_toy(&cfg.initial_encoder()?, &test)?;
    let (encoder, trace) = train_toy(cfg)?;
    let trained_iou = evaluate_toy(&encoder, &test)?;
    Ok(ToyReport {
        trace,
        baseline_iou,
        trained_iou,
        encoder,
    })
}
