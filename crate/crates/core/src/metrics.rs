//! Saliency and localization metrics, plus a directory-level harness.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::boxes::{box_iou, connected_components_8, generate_boxes, DEFAULT_DEDUP_IOU, DEFAULT_MIN_AREA_FRAC};
use crate::error::{Error, Result};
use crate::io::{load_heatmap, load_mask};
use crate::pca::binarize;
use crate::types::{BoundingBox, ProjectionMap, SegMask};

pub const DEFAULT_BETA_SQ: f64 = 0.3;
pub const FMEASURE_THRESHOLDS: usize = 255;

/// Maximum F-measure over the thresholds `k / 255`, `k = 0..=254`, applied to
/// the min–max normalized heatmap; a pixel is predicted foreground when its
/// value is strictly above the threshold. Returns 0 when `gt` is empty.
pub fn f_beta_max(heatmap: &ProjectionMap, gt: &SegMask, beta_sq: f64) -> Result<f64> {
    if heatmap.height() != gt.height() || heatmap.width() != gt.width() {
        return Err(Error::Dimension(format!(
            "heatmap is {}x{} but ground truth is {}x{}",
            heatmap.height(),
            heatmap.width(),
            gt.height(),
            gt.width()
        )));
    }
    let positives = gt.area();
    if positives == 0 {
        return Ok(0.0);
    }
    // (value, is_fg) sorted descending; a threshold keeps a prefix.
    let mut scored: Vec<(f64, bool)> = heatmap
        .normalized()
        .into_iter()
        .zip(gt.bits().iter().copied())
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp_prefix = Vec::with_capacity(scored.len() + 1);
    tp_prefix.push(0usize);
    for &(_, fg) in &scored {
        tp_prefix.push(tp_prefix.last().unwrap() + usize::from(fg));
    }

    let mut best = 0.0f64;
    for k in 0..FMEASURE_THRESHOLDS {
        let t = k as f64 / 255.0;
        let kept = scored.partition_point(|&(v, _)| v > t);
        let tp = tp_prefix[kept] as f64;
        let (precision, recall) = if kept == 0 {
            (1.0, 0.0)
        } else {
            (tp / kept as f64, tp / positives as f64)
        };
        let denom = beta_sq * precision + recall;
        let f = if denom > 0.0 {
            (1.0 + beta_sq) * precision * recall / denom
        } else {
            0.0
        };
        best = best.max(f);
    }
    Ok(best)
}

/// `(IoU, accuracy)`; IoU of two empty masks is 1.
pub fn mask_iou_accuracy(pred: &SegMask, gt: &SegMask) -> Result<(f64, f64)> {
    if !pred.same_shape(gt) {
        return Err(Error::Dimension(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let (inter, union, agree) = intersection_union_agree(pred, gt);
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok((iou, agree as f64 / pred.bits().len() as f64))
}

fn intersection_union_agree(pred: &SegMask, gt: &SegMask) -> (usize, usize, usize) {
    pred.bits()
        .iter()
        .zip(gt.bits())
        .fold((0, 0, 0), |(i, u, a), (&p, &g)| {
            (i + usize::from(p && g), u + usize::from(p || g), a + usize::from(p == g))
        })
}

/// Boxes for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBoxes {
    pub id: String,
    pub boxes: Vec<BoundingBox>,
}

impl ImageBoxes {
    pub fn new(id: impl Into<String>, boxes: Vec<BoundingBox>) -> Self {
        Self { id: id.into(), boxes }
    }
}

/// Fraction of images (with non-empty ground truth) where some predicted box
/// has IoU > 0.5 with some ground-truth box.
pub fn corloc(predictions: &[ImageBoxes], ground_truth: &[ImageBoxes]) -> Result<f64> {
    let pred: BTreeMap<&str, &[BoundingBox]> =
        predictions.iter().map(|p| (p.id.as_str(), p.boxes.as_slice())).collect();
    let gt: BTreeMap<&str, &[BoundingBox]> =
        ground_truth.iter().map(|g| (g.id.as_str(), g.boxes.as_slice())).collect();
    if pred.len() != predictions.len() || gt.len() != ground_truth.len() {
        return Err(Error::Harness("duplicate image ids".into()));
    }
    let missing: Vec<&str> = gt
        .keys()
        .filter(|k| !pred.contains_key(*k))
        .chain(pred.keys().filter(|k| !gt.contains_key(*k)))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(Error::Harness(format!("image ids not present on both sides: {}", missing.join(", "))));
    }

    let mut hits = 0usize;
    let mut counted = 0usize;
    for (id, gt_boxes) in &gt {
        if gt_boxes.is_empty() {
            continue;
        }
        counted += 1;
        let found = pred[id]
            .iter()
            .any(|p| gt_boxes.iter().any(|g| box_iou(p, g) > 0.5));
        hits += usize::from(found);
    }
    if counted == 0 {
        return Err(Error::Harness("no image has ground-truth boxes".into()));
    }
    Ok(hits as f64 / counted as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub beta_sq: f64,
    /// Binarization threshold on the normalized heatmap for IoU/accuracy.
    pub threshold: f64,
    pub min_area_frac: f64,
    pub dedup_iou: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            beta_sq: DEFAULT_BETA_SQ,
            threshold: 0.5,
            min_area_frac: DEFAULT_MIN_AREA_FRAC,
            dedup_iou: DEFAULT_DEDUP_IOU,
        }
    }
}

/// Dataset-level metric summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Mean over images with non-empty ground truth of the max F-measure.
    pub f_beta_max: f64,
    /// Pooled IoU: total intersection over total union across the dataset.
    pub iou: f64,
    pub accuracy: f64,
    /// Mean per-image IoU.
    pub jaccard: f64,
    pub corloc: f64,
    pub n_images: usize,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "f_beta_max: {:.4}", self.f_beta_max)?;
        writeln!(f, "iou: {:.4}", self.iou)?;
        writeln!(f, "accuracy: {:.4}", self.accuracy)?;
        writeln!(f, "jaccard: {:.4}", self.jaccard)?;
        writeln!(f, "corloc: {:.4}", self.corloc)?;
        writeln!(f, "n_images: {}", self.n_images)
    }
}

/// A predicted heatmap paired with its ground-truth mask.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub heatmap: ProjectionMap,
    pub gt: SegMask,
}

/// Ground-truth boxes: the tight box of every 8-connected gt component.
pub fn gt_boxes(gt: &SegMask) -> Vec<BoundingBox> {
    connected_components_8(gt).boxes()
}

/// Aggregates metrics over in-memory samples, in the given order.
pub fn evaluate_samples(samples: &[EvalSample], options: &EvalOptions) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Harness("no images to evaluate".into()));
    }
    let mut f_sum = 0.0;
    let mut f_count = 0usize;
    let mut iou_sum = 0.0;
    let mut acc_sum = 0.0;
    let (mut inter_total, mut union_total) = (0usize, 0usize);
    let mut preds = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());

    for s in samples {
        if !s.gt.is_empty() {
            f_sum += f_beta_max(&s.heatmap, &s.gt, options.beta_sq)?;
            f_count += 1;
        }
        let pred = binarize(&s.heatmap, options.threshold);
        let (iou, acc) = mask_iou_accuracy(&pred, &s.gt)
            .map_err(|e| Error::Harness(format!("{}: {e}", s.id)))?;
        let (inter, union, _) = intersection_union_agree(&pred, &s.gt);
        inter_total += inter;
        union_total += union;
        iou_sum += iou;
        acc_sum += acc;
        preds.push(ImageBoxes::new(
            s.id.clone(),
            generate_boxes(&pred, options.min_area_frac, options.dedup_iou),
        ));
        gts.push(ImageBoxes::new(s.id.clone(), gt_boxes(&s.gt)));
    }
    let n = samples.len() as f64;
    let corloc_value = if gts.iter().any(|g| !g.boxes.is_empty()) {
        corloc(&preds, &gts)?
    } else {
        0.0
    };
    Ok(MetricsReport {
        f_beta_max: if f_count == 0 { 0.0 } else { f_sum / f_count as f64 },
        iou: if union_total == 0 { 1.0 } else { inter_total as f64 / union_total as f64 },
        accuracy: acc_sum / n,
        jaccard: iou_sum / n,
        corloc: corloc_value,
        n_images: samples.len(),
    })
}

/// `stem → path` for every `*.pgm` file in `dir`, sorted by stem.
pub fn pgm_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::Harness(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Harness(format!("cannot list {}: {e}", dir.display())))?
            .path();
        if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Harness(format!("{}: {e}", path.display())))
}

fn named(path: &Path, e: Error) -> Error {
    match e {
        Error::Harness(_) => e,
        other => Error::Harness(format!("{}: {other}", path.display())),
    }
}

/// Pairs `pred_dir` heatmaps with `gt_dir` masks by file stem and evaluates.
pub fn eval_dataset(pred_dir: &Path, gt_dir: &Path, options: &EvalOptions) -> Result<MetricsReport> {
    let preds = pgm_files(pred_dir)?;
    let gts = pgm_files(gt_dir)?;
    let only_pred: Vec<&str> = preds.keys().filter(|k| !gts.contains_key(*k)).map(String::as_str).collect();
    let only_gt: Vec<&str> = gts.keys().filter(|k| !preds.contains_key(*k)).map(String::as_str).collect();
    if !only_pred.is_empty() || !only_gt.is_empty() || preds.is_empty() {
        return Err(Error::Harness(format!(
            "unmatched stems: missing ground truth for [{}]; missing predictions for [{}]",
            only_pred.join(", "),
            only_gt.join(", ")
        )));
    }
    let mut samples = Vec::with_capacity(preds.len());
    for (stem, pred_path) in &preds {
        let gt_path = &gts[stem];
        let heatmap = load_heatmap(open(pred_path)?).map_err(|e| named(pred_path, e))?;
        let gt = load_mask(open(gt_path)?).map_err(|e| named(gt_path, e))?;
        if heatmap.height() != gt.height() || heatmap.width() != gt.width() {
            return Err(Error::Harness(format!(
                "{stem}: prediction {}x{} vs ground truth {}x{}",
                heatmap.width(),
                heatmap.height(),
                gt.width(),
                gt.height()
            )));
        }
        samples.push(EvalSample { id: stem.clone(), heatmap, gt });
    }
    evaluate_samples(&samples, options)
}
