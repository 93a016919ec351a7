//! Built-in oracle suites. Each suite checks the implementation against an
//! independent reference on randomized or constructed inputs with pinned
//! tolerances, and reports a single pass/fail line.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::boxes::{box_iou, connected_components_8, generate_boxes, DEFAULT_DEDUP_IOU, DEFAULT_MIN_AREA_FRAC};
use crate::io::{load_fmap, load_heatmap, load_mask, save_fmap, save_heatmap, save_mask};
use crate::losses::{
    align_loss, graph_loss, info_nce, numeric_gradient, relative_error, sup_contrastive, total_loss, LossConfig,
};
use crate::metrics::{evaluate_samples, f_beta_max, EvalOptions, EvalSample, DEFAULT_BETA_SQ};
use crate::oracle::{brute_force_video, dense_covariance, dense_top_eigen, dfs_components, flood_fill_components};
use crate::pca::{covariance, discover, mean_vector, project, top_eigen, video_discover, DiscoveryConfig};
use crate::pca::{DEFAULT_EIG_TOL, DEFAULT_MAX_SWEEPS};
use crate::types::{BoundingBox, EmbeddingBatch, FeatureMap, ProjectionMap, SegMask};
use crate::weak_labels::{
    cosine_similarity_matrix, hoshen_kopelman, mutual_nn_graph, weak_label_matrix, ComponentLabels, WeakLabelMatrix,
};

pub const GRADIENT_STEP: f64 = 1e-4;
pub const GRADIENT_REL_TOL: f64 = 1e-3;
pub const GRADIENT_CASES: usize = 100;
pub const EIGVAL_TOL: f64 = 1e-8;
pub const EIGVEC_COS_TOL: f64 = 1e-8;
pub const PROJ_MEAN_TOL: f64 = 1e-6;
pub const PROJ_VAR_TOL: f64 = 1e-6;
pub const PCA_CASES: usize = 200;
pub const WEAK_LABEL_CASES: usize = 1000;
pub const FORMAT_CASES: usize = 100;
pub const MONOTONE_CASES: usize = 100;
pub const VIDEO_CASES: usize = 25;

/// Outcome of one suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} ({:.2}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

fn timed(name: &'static str, body: impl FnOnce() -> Result<String, String>) -> SuiteResult {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(body));
    let (passed, detail) = match outcome {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(_) => (false, "suite panicked".to_string()),
    };
    SuiteResult {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingBatch {
    EmbeddingBatch::new(n, d, normal_vec(rng, n * d)).expect("finite normal samples")
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> WeakLabelMatrix {
    let k = rng.random_range(1..=n);
    let raw: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    weak_label_matrix(&ComponentLabels::from_raw(&raw))
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::new(c, h, w, normal_vec(rng, c * h * w)).expect("finite normal samples")
}

fn split(x: &[f64], sizes: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &s in sizes {
        out.push(x[at..at + s].to_vec());
        at += s;
    }
    out
}

/// Compares the analytic gradient of `f` at `x` with central differences.
fn gradient_error(
    x: &[f64],
    analytic: &[f64],
    f: impl Fn(&[f64]) -> f64,
) -> Result<f64, String> {
    let numeric = numeric_gradient(|p| f(p), x, GRADIENT_STEP).map_err(|e| e.to_string())?;
    Ok(relative_error(analytic, &numeric))
}

/// Analytic vs central-difference gradients of every loss on randomized
/// inputs (`N ≤ 8`, `d ≤ 16`, `c ≤ 8`, spatial ≤ 6×6).
pub fn gradient_suite(seed: u64) -> SuiteResult {
    timed("gradient fidelity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = [0.0f64; 5];
        let names = ["info_nce", "sup_contrastive", "graph_loss", "align_loss", "total_loss"];
        for case in 0..GRADIENT_CASES {
            let n = rng.random_range(1..=8);
            let d = rng.random_range(1..=16);
            let c = rng.random_range(1..=8);
            let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let cfg = LossConfig {
                tau: rng.random_range(0.1..1.0),
                alpha: rng.random_range(0.0..6.0),
                beta: rng.random_range(0.0..2.0),
            };
            let emb = n * d;
            let map = c * h * w;
            let a = random_batch(&mut rng, n, d);
            let b = random_batch(&mut rng, n, d);
            let y1 = random_labels(&mut rng, n);
            let y2 = random_labels(&mut rng, n);
            let si = random_map(&mut rng, c, h, w);
            let sj = random_map(&mut rng, c, h, w);
            let batch = |v: &[f64]| EmbeddingBatch::new(n, d, v.to_vec()).unwrap();
            let fmap = |v: &[f64]| FeatureMap::new(c, h, w, v.to_vec()).unwrap();
            let cat = |parts: &[&[f64]]| parts.concat();
            let fail = |e: crate::Error| format!("case {case}: {e}");

            let nce = info_nce(&a, &b, &cfg).map_err(fail)?;
            let x = cat(&[a.data(), b.data()]);
            let err = gradient_error(&x, &nce.gradients.concat(), |p| {
                let s = split(p, &[emb, emb]);
                info_nce(&batch(&s[0]), &batch(&s[1]), &cfg).unwrap().value
            })?;
            worst[0] = worst[0].max(err);

            let sup = sup_contrastive(&a, &y1, &cfg).map_err(fail)?;
            let err = gradient_error(a.data(), &sup.gradients[0], |p| {
                sup_contrastive(&batch(p), &y1, &cfg).unwrap().value
            })?;
            worst[1] = worst[1].max(err);

            let graph = graph_loss(&a, &b, &y1, &y2, &cfg).map_err(fail)?;
            let err = gradient_error(&x, &graph.gradients.concat(), |p| {
                let s = split(p, &[emb, emb]);
                graph_loss(&batch(&s[0]), &batch(&s[1]), &y1, &y2, &cfg).unwrap().value
            })?;
            worst[2] = worst[2].max(err);

            let align = align_loss(&si, &sj).map_err(fail)?;
            let xm = cat(&[si.data(), sj.data()]);
            let err = gradient_error(&xm, &align.gradients.concat(), |p| {
                let s = split(p, &[map, map]);
                align_loss(&fmap(&s[0]), &fmap(&s[1])).unwrap().value
            })?;
            worst[3] = worst[3].max(err);

            // total over independent inputs for each term
            let ga = random_batch(&mut rng, n, d);
            let gb = random_batch(&mut rng, n, d);
            let nce_t = info_nce(&ga, &gb, &cfg).map_err(fail)?;
            let total = total_loss(&nce_t, &graph, &align, &cfg);
            let xt = cat(&[ga.data(), gb.data(), a.data(), b.data(), si.data(), sj.data()]);
            let err = gradient_error(&xt, &total.gradients.concat(), |p| {
                let s = split(p, &[emb, emb, emb, emb, map, map]);
                let l1 = info_nce(&batch(&s[0]), &batch(&s[1]), &cfg).unwrap();
                let l2 = graph_loss(&batch(&s[2]), &batch(&s[3]), &y1, &y2, &cfg).unwrap();
                let l3 = align_loss(&fmap(&s[4]), &fmap(&s[5])).unwrap();
                total_loss(&l1, &l2, &l3, &cfg).value
            })?;
            worst[4] = worst[4].max(err);
        }
        let detail = names
            .iter()
            .zip(worst)
            .map(|(n, e)| format!("{n} {e:.1e}"))
            .collect::<Vec<_>>()
            .join(", ");
        if worst.iter().all(|&e| e < GRADIENT_REL_TOL) {
            Ok(format!("{GRADIENT_CASES} cases each, worst relative error: {detail}"))
        } else {
            Err(format!("relative error ≥ {GRADIENT_REL_TOL}: {detail}"))
        }
    })
}

fn stats(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Top eigenpair against the dense reference, plus the projection-map
/// zero-mean and variance identities.
pub fn pca_suite(seed: u64) -> SuiteResult {
    timed("pca oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut worst_l, mut worst_cos, mut worst_mean, mut worst_var) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for case in 0..PCA_CASES {
            let c = rng.random_range(1..=6);
            let h = rng.random_range(1..=8);
            let w = rng.random_range(1..=8usize).min(64 / h).max(if h == 1 { 2 } else { 1 });
            // anisotropic channels so the top eigenvalue is well separated
            let scales: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..3.0)).collect();
            let map = FeatureMap::from_fn(c, h, w, |k, _, _| scales[k] * rng.sample::<f64, _>(StandardNormal))
                .expect("finite samples");

            let cov = covariance(&map);
            let eig = top_eigen(&cov, 1, DEFAULT_EIG_TOL, DEFAULT_MAX_SWEEPS).map_err(|e| format!("case {case}: {e}"))?;
            let (lam, xi) = (eig.eigenvalues[0], &eig.eigenvectors[0]);
            let (ref_lam, ref_xi) = dense_top_eigen(&dense_covariance(&map), c);

            worst_l = worst_l.max((lam - ref_lam).abs() / ref_lam.max(1.0));
            let cos: f64 = xi.iter().zip(&ref_xi).map(|(a, b)| a * b).sum::<f64>().abs();
            worst_cos = worst_cos.max(1.0 - cos);

            let m = project(&map, &mean_vector(&map), xi).map_err(|e| e.to_string())?;
            let (mean, var) = stats(m.values());
            let std = var.sqrt();
            worst_mean = worst_mean.max(mean.abs() / std.max(1e-12));
            worst_var = worst_var.max((var - lam).abs() / lam.abs().max(1e-300));
        }
        let detail = format!(
            "{PCA_CASES} maps: max |Δλ|/max(1,λ) {worst_l:.1e}, max 1−|cos| {worst_cos:.1e}, \
             max |mean(m)|/std {worst_mean:.1e}, max |var(m)−λ|/λ {worst_var:.1e}"
        );
        let ok = worst_l <= EIGVAL_TOL && worst_cos <= EIGVEC_COS_TOL && worst_mean <= PROJ_MEAN_TOL && worst_var <= PROJ_VAR_TOL;
        if ok {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

/// Batches with cluster structure at a random scale, so graphs range from
/// sparse to chain-like.
fn clustered_batch(rng: &mut ChaCha8Rng) -> EmbeddingBatch {
    let n = rng.random_range(2..=64);
    let d = rng.random_range(1..=16);
    let k = rng.random_range(1..=n.min(8));
    let spread = rng.random_range(0.05..2.0);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(rng, d)).collect();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = &centers[rng.random_range(0..k)];
        for &v in c {
            data.push(v + spread * rng.sample::<f64, _>(StandardNormal));
        }
    }
    EmbeddingBatch::new(n, d, data).expect("finite samples")
}

fn unit_angles(degrees: &[f64]) -> EmbeddingBatch {
    let rows: Vec<Vec<f64>> = degrees
        .iter()
        .map(|a| {
            let r = a.to_radians();
            vec![r.cos(), r.sin()]
        })
        .collect();
    EmbeddingBatch::from_rows(&rows).expect("finite rows")
}

/// Hoshen–Kopelman components on the mutual-NN graph against DFS.
pub fn weak_label_suite(seed: u64) -> SuiteResult {
    timed("weak-label oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = 0usize;
        for case in 0..WEAK_LABEL_CASES {
            let batch = clustered_batch(&mut rng);
            let s = cosine_similarity_matrix(&batch).map_err(|e| format!("case {case}: {e}"))?;
            let g = mutual_nn_graph(&s);
            edges += g.edges().len();
            let hk = hoshen_kopelman(&g);
            let dfs = dfs_components(&g);
            if hk.labels() != dfs.as_slice() {
                return Err(format!("case {case}: union-find {:?} vs DFS {dfs:?}", hk.labels()));
            }
        }
        let four = unit_angles(&[0.0, 5.0, 180.0, 185.0]);
        let g = mutual_nn_graph(&cosine_similarity_matrix(&four).map_err(|e| e.to_string())?);
        let labels = hoshen_kopelman(&g);
        if labels.labels() != [0, 0, 1, 1] {
            return Err(format!("0°/5°/180°/185° gave {:?}", labels.labels()));
        }
        Ok(format!(
            "{WEAK_LABEL_CASES} batches match DFS exactly ({edges} edges total); 0°/5°/180°/185° → {{0,1}},{{2,3}}"
        ))
    })
}

fn blobs(h: usize, w: usize, rects: &[(usize, usize, usize, usize)]) -> SegMask {
    SegMask::from_fn(h, w, |y, x| {
        rects.iter().any(|&(x0, y0, bw, bh)| x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh)
    })
    .expect("positive dims")
}

fn bbox(x0: u32, y0: u32, x1: u32, y1: u32) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).expect("ordered corners")
}

/// The three constructed-mask cases of the box procedure, plus flood-fill
/// agreement of the component labeling.
pub fn boxes_suite(seed: u64) -> SuiteResult {
    timed("bounding-box procedure", || {
        let cases = [
            ("single 20×20 blob", blobs(100, 100, &[(30, 40, 20, 20)]), vec![bbox(30, 40, 49, 59)]),
            (
                "two 20×20 blobs",
                blobs(100, 100, &[(5, 5, 20, 20), (60, 70, 20, 20)]),
                vec![bbox(5, 5, 24, 24), bbox(60, 70, 79, 89), bbox(5, 5, 79, 89)],
            ),
            ("3×3 blob", blobs(100, 100, &[(10, 10, 3, 3)]), vec![bbox(10, 10, 12, 12)]),
        ];
        for (name, mask, expected) in &cases {
            let got = generate_boxes(mask, DEFAULT_MIN_AREA_FRAC, DEFAULT_DEDUP_IOU);
            if &got != expected {
                return Err(format!("{name}: got {got:?}, expected {expected:?}"));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for case in 0..1000 {
            let density = rng.random_range(0.1..0.7);
            let mask = SegMask::from_fn(32, 32, |_, _| rng.random::<f64>() < density).expect("positive dims");
            if connected_components_8(&mask).labels != flood_fill_components(&mask) {
                return Err(format!("random mask {case}: labeling differs from flood fill"));
            }
        }
        Ok("single blob → 1 box, two blobs → 3 boxes, 3×3 blob → hull only; 1000 random masks match flood fill".into())
    })
}

fn mask_to_heatmap(m: &SegMask) -> ProjectionMap {
    let values = m.bits().iter().map(|&b| f64::from(u8::from(b))).collect();
    ProjectionMap::new(m.height(), m.width(), values).expect("mask shape")
}

/// Heatmap with `levels` distinct values whose normalized gaps are at least
/// 1/255 both before and after `transform`.
fn spaced_heatmap(
    rng: &mut ChaCha8Rng,
    transform: impl Fn(f64) -> f64,
) -> Option<(ProjectionMap, ProjectionMap, SegMask)> {
    let (h, w) = (rng.random_range(2..=12), rng.random_range(2..=12));
    let levels = rng.random_range(2..=12usize);
    let mut values: Vec<f64> = (0..levels).map(|_| rng.random_range(0.0..1.0)).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let spaced = |vals: &[f64]| {
        let (lo, hi) = (vals[0], vals[vals.len() - 1]);
        hi > lo && vals.windows(2).all(|p| (p[1] - p[0]) / (hi - lo) >= 2.0 / 255.0)
    };
    let transformed: Vec<f64> = values.iter().map(|&v| transform(v)).collect();
    if values.len() < 2 || !spaced(&values) || !spaced(&transformed) {
        return None;
    }
    let pick: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..values.len())).collect();
    let a = ProjectionMap::new(h, w, pick.iter().map(|&i| values[i]).collect()).ok()?;
    let b = ProjectionMap::new(h, w, pick.iter().map(|&i| transformed[i]).collect()).ok()?;
    let gt = SegMask::from_fn(h, w, |_, _| rng.random::<f64>() < 0.4).ok()?;
    if gt.is_empty() {
        return None;
    }
    Some((a, b, gt))
}

type Rescale = (&'static str, fn(f64) -> f64);

/// Perfect predictions, the worked F-measure and box-IoU values, and
/// invariance of the F-measure under monotone rescaling.
pub fn metrics_suite(seed: u64) -> SuiteResult {
    timed("metric suite", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<EvalSample> = (0..5)
            .map(|i| {
                let gt = blobs(24, 24, &[(rng.random_range(0..10), rng.random_range(0..10), 8, 6)]);
                EvalSample {
                    id: format!("img{i}"),
                    heatmap: mask_to_heatmap(&gt),
                    gt,
                }
            })
            .collect();
        let r = evaluate_samples(&samples, &EvalOptions::default()).map_err(|e| e.to_string())?;
        if [r.f_beta_max, r.iou, r.accuracy, r.jaccard, r.corloc] != [1.0; 5] {
            return Err(format!("perfect prediction gave {r:?}"));
        }

        let gt4 = SegMask::new(1, 4, vec![true, true, false, false]).expect("shape");
        let h4 = ProjectionMap::new(1, 4, vec![0.9, 0.4, 0.6, 0.1]).expect("shape");
        let f4 = f_beta_max(&h4, &gt4, DEFAULT_BETA_SQ).map_err(|e| e.to_string())?;
        if (f4 - 0.8125).abs() > 1e-12 {
            return Err(format!("4-pixel F-measure {f4}, expected 0.8125"));
        }
        let iou = box_iou(&bbox(0, 0, 9, 9), &bbox(5, 5, 14, 14));
        if (iou - 25.0 / 175.0).abs() > 1e-12 {
            return Err(format!("offset box IoU {iou}"));
        }

        let transforms: [Rescale; 4] = [
            ("exp", |v| (3.0 * v).exp()),
            ("cube", |v| v * v * v + 0.1 * v),
            ("log", |v| (1.0 + 9.0 * v).ln()),
            ("affine", |v| 7.0 * v - 2.0),
        ];
        let mut checked = 0;
        while checked < MONOTONE_CASES {
            let (name, t) = transforms[checked % transforms.len()];
            let Some((a, b, gt)) = spaced_heatmap(&mut rng, t) else {
                continue;
            };
            let fa = f_beta_max(&a, &gt, DEFAULT_BETA_SQ).map_err(|e| e.to_string())?;
            let fb = f_beta_max(&b, &gt, DEFAULT_BETA_SQ).map_err(|e| e.to_string())?;
            if fa != fb {
                return Err(format!("{name} rescaling changed F from {fa} to {fb}"));
            }
            checked += 1;
        }
        Ok(format!(
            "perfect → all 1.0; 4-pixel F = {f4}; box IoU = 25/175; {MONOTONE_CASES} monotone rescalings invariant"
        ))
    })
}

/// Frames sharing a planted object that drifts one pixel per frame.
fn planted_video(rng: &mut ChaCha8Rng, frames: usize, c: usize, side: usize) -> (Vec<FeatureMap>, Vec<FeatureMap>) {
    let obj = normal_vec(rng, c).into_iter().map(|v| 2.5 * v).collect::<Vec<_>>();
    let motion = normal_vec(rng, c).into_iter().map(|v| 2.0 * v).collect::<Vec<_>>();
    let (x0, y0) = (rng.random_range(1..side / 2), rng.random_range(1..side / 2));
    let size = side / 3;
    let mut rgb = Vec::with_capacity(frames);
    let mut flow = Vec::with_capacity(frames);
    for f in 0..frames {
        let inside = |y: usize, x: usize| {
            let (ox, oy) = (x0 + f % 2, y0);
            x >= ox && x < ox + size && y >= oy && y < oy + size
        };
        let noise_r = normal_vec(rng, c * side * side);
        let noise_f = normal_vec(rng, c * side * side);
        rgb.push(
            FeatureMap::from_fn(c, side, side, |k, y, x| {
                0.5 * noise_r[(k * side + y) * side + x] + if inside(y, x) { obj[k] } else { 0.0 }
            })
            .expect("finite"),
        );
        flow.push(
            FeatureMap::from_fn(c, side, side, |k, y, x| {
                0.5 * noise_f[(k * side + y) * side + x] + if inside(y, x) { motion[k] } else { 0.0 }
            })
            .expect("finite"),
        );
    }
    (rgb, flow)
}

/// λ2 = 0 reduces to the image pipeline; the default fusion matches the
/// brute-force concatenated-matrix oracle.
pub fn video_suite(seed: u64) -> SuiteResult {
    timed("video fusion", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for case in 0..VIDEO_CASES {
            let c = rng.random_range(2..=6);
            let side = rng.random_range(6..=10);
            let frames = rng.random_range(1..=5);
            let (rgb, flow) = planted_video(&mut rng, frames, c, side);
            let image_only = DiscoveryConfig {
                video_lambda2: 0.0,
                chunk_frames: 1,
                ..Default::default()
            };
            let masks = video_discover(&rgb, &flow, &image_only).map_err(|e| e.to_string())?;
            for (i, (m, f)) in masks.iter().zip(&rgb).enumerate() {
                let single = discover(f, &DiscoveryConfig::default()).map_err(|e| e.to_string())?;
                if m != &single.mask {
                    return Err(format!("case {case} frame {i}: λ2=0 mask differs from image pipeline"));
                }
            }

            let (rgb3, flow3) = planted_video(&mut rng, 3, c, side);
            let cfg = DiscoveryConfig::default();
            let fused = video_discover(&rgb3, &flow3, &cfg).map_err(|e| e.to_string())?;
            let oracle = brute_force_video(
                &rgb3,
                &flow3,
                cfg.video_lambda1,
                cfg.video_lambda2,
                cfg.chunk_frames,
                cfg.threshold,
            );
            if fused != oracle {
                return Err(format!("case {case}: fused masks differ from brute-force oracle"));
            }
        }
        Ok(format!(
            "{VIDEO_CASES} sequences: λ2=0 equals per-frame discovery; 3-frame λ1=0.5, λ2=1.5 equals brute-force oracle"
        ))
    })
}

fn fmp1_corruptions(valid: &[u8]) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for i in 0..4 {
        let mut b = valid.to_vec();
        b[i] ^= 0x20;
        out.push((format!("magic byte {i}"), b));
    }
    for field in 0..3 {
        let at = 4 + 4 * field;
        let v = u32::from_le_bytes(valid[at..at + 4].try_into().expect("4 bytes"));
        for replacement in [v + 1, v - 1, 0, u32::MAX, v * 2] {
            if replacement == v {
                continue;
            }
            let mut b = valid.to_vec();
            b[at..at + 4].copy_from_slice(&replacement.to_le_bytes());
            out.push((format!("dim field {field} = {replacement}"), b));
        }
    }
    for len in [0, 3, 4, 10, 15, 16, valid.len() - 1] {
        out.push((format!("truncated to {len}"), valid[..len].to_vec()));
    }
    let mut longer = valid.to_vec();
    longer.push(0);
    out.push(("one trailing byte".into(), longer));
    out
}

fn pgm_corruptions(valid: &[u8], w: usize, h: usize) -> Vec<(String, Vec<u8>)> {
    let payload = &valid[format!("P5\n{w} {h}\n255\n").len()..];
    let with_header = |hdr: String| {
        let mut b = hdr.into_bytes();
        b.extend_from_slice(payload);
        b
    };
    let mut out = vec![
        ("ASCII P2 magic".into(), with_header(format!("P2\n{w} {h}\n255\n"))),
        ("P6 magic".into(), with_header(format!("P6\n{w} {h}\n255\n"))),
        ("width + 1".into(), with_header(format!("P5\n{} {h}\n255\n", w + 1))),
        ("height + 1".into(), with_header(format!("P5\n{w} {}\n255\n", h + 1))),
        ("width - 1".into(), with_header(format!("P5\n{} {h}\n255\n", w - 1))),
        ("maxval 65535".into(), with_header(format!("P5\n{w} {h}\n65535\n"))),
        ("maxval 254".into(), with_header(format!("P5\n{w} {h}\n254\n"))),
        ("zero width".into(), with_header(format!("P5\n0 {h}\n255\n"))),
        ("non-numeric width".into(), with_header(format!("P5\nx{w} {h}\n255\n"))),
    ];
    for len in [0, 1, 5, valid.len() - 1] {
        out.push((format!("truncated to {len}"), valid[..len].to_vec()));
    }
    out
}

/// Byte-exact round trips of FMP1 and PGM files and rejection of every
/// corrupted header.
pub fn formats_suite(seed: u64) -> SuiteResult {
    timed("formats", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rejected = 0usize;
        for case in 0..FORMAT_CASES {
            let (c, h, w) = (rng.random_range(1..=4), rng.random_range(2..=9), rng.random_range(2..=9));
            let data: Vec<f64> = (0..c * h * w)
                .map(|_| f64::from(rng.sample::<f64, _>(StandardNormal) as f32 * 10.0))
                .collect();
            let map = FeatureMap::new(c, h, w, data).expect("finite");
            let mut bytes = Vec::new();
            save_fmap(&map, &mut bytes).map_err(|e| e.to_string())?;
            let loaded = load_fmap(bytes.as_slice()).map_err(|e| format!("case {case}: {e}"))?;
            let mut again = Vec::new();
            save_fmap(&loaded, &mut again).map_err(|e| e.to_string())?;
            if loaded != map || again != bytes || bytes.len() != 16 + 4 * c * h * w {
                return Err(format!("case {case}: FMP1 round trip not byte-exact"));
            }
            for (what, bad) in fmp1_corruptions(&bytes) {
                if load_fmap(bad.as_slice()).is_ok() {
                    return Err(format!("case {case}: FMP1 with {what} was accepted"));
                }
                rejected += 1;
            }

            let mask = SegMask::from_fn(h, w, |_, _| rng.random::<bool>()).expect("shape");
            let mut mbytes = Vec::new();
            save_mask(&mask, &mut mbytes).map_err(|e| e.to_string())?;
            let mloaded = load_mask(mbytes.as_slice()).map_err(|e| format!("case {case}: {e}"))?;
            let mut magain = Vec::new();
            save_mask(&mloaded, &mut magain).map_err(|e| e.to_string())?;
            if mloaded != mask || magain != mbytes {
                return Err(format!("case {case}: mask PGM round trip not byte-exact"));
            }

            let heat = ProjectionMap::new(h, w, normal_vec(&mut rng, h * w)).expect("finite");
            let mut hbytes = Vec::new();
            save_heatmap(&heat, &mut hbytes).map_err(|e| e.to_string())?;
            let hloaded = load_heatmap(hbytes.as_slice()).map_err(|e| format!("case {case}: {e}"))?;
            let mut hagain = Vec::new();
            save_heatmap(&hloaded, &mut hagain).map_err(|e| e.to_string())?;
            if hagain != hbytes {
                return Err(format!("case {case}: heatmap PGM re-save not byte-exact"));
            }
            for (what, bad) in pgm_corruptions(&mbytes, w, h) {
                if load_mask(bad.as_slice()).is_ok() {
                    return Err(format!("case {case}: PGM with {what} was accepted"));
                }
                rejected += 1;
            }
        }
        Ok(format!(
            "{FORMAT_CASES} FMP1, mask and heatmap round trips byte-exact; {rejected} corrupted files rejected"
        ))
    })
}

/// Every suite except the training experiment, in a fixed order.
pub fn run_all(seed: u64) -> Vec<SuiteResult> {
    vec![
        gradient_suite(seed),
        pca_suite(seed),
        weak_label_suite(seed),
        boxes_suite(seed),
        metrics_suite(seed),
        video_suite(seed),
        formats_suite(seed),
    ]
}
