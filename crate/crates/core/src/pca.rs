//! PCA-based object discovery on dense feature maps.
//!
//! The pipeline is mean → covariance → leading eigenvector → per-pixel
//! projection → sign resolution → min–max binarization. Video sequences
//! share one eigenvector per chunk, computed from a weighted sum of the RGB
//! and optical-flow feature covariances over all pixels of the chunk.

use std::fmt;
use std::str::FromStr;

use crate::eigen::{jacobi_eigen, EigenResult};
use crate::error::{Error, Result};
use crate::types::{FeatureMap, ProjectionMap, SegMask};

pub const DEFAULT_EIG_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_SWEEPS: usize = 64;

/// Covariance trace at or below this fraction of the mean squared feature
/// norm is treated as a constant input.
const DEGENERATE_REL: f64 = 1e-20;

/// Symmetric `c × c` covariance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl CovarianceMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "covariance of dim {dim} needs {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if let Some(index) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        for i in 0..dim {
            for j in i + 1..dim {
                let (a, b) = (entries[i * dim + j], entries[j * dim + i]);
                if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "matrix not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// `uᵀ A u`.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        let n = self.dim;
        (0..n)
            .map(|i| u[i] * (0..n).map(|j| self.entries[i * n + j] * u[j]).sum::<f64>())
            .sum()
    }
}

/// Rule fixing the arbitrary sign of an eigenvector projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignRule {
    /// Negate the map when its mean over the one-pixel border is positive.
    #[default]
    BorderNegative,
    None,
}

impl FromStr for SignRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "border-negative" => Ok(SignRule::BorderNegative),
            "none" => Ok(SignRule::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown sign rule {other:?} (expected border-negative or none)"
            ))),
        }
    }
}

impl fmt::Display for SignRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignRule::BorderNegative => "border-negative",
            SignRule::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryConfig {
    /// 1-based index of the eigenvector used for projection.
    pub eig_index: usize,
    pub threshold: f64,
    pub sign_rule: SignRule,
    pub video_lambda1: f64,
    pub video_lambda2: f64,
    pub chunk_frames: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            eig_index: 1,
            threshold: 0.5,
            sign_rule: SignRule::BorderNegative,
            video_lambda1: 0.5,
            video_lambda2: 1.5,
            chunk_frames: 20,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eig_index == 0 {
            return Err(Error::InvalidArgument("eig_index is 1-based".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold {} must lie strictly inside (0, 1)",
                self.threshold
            )));
        }
        if self.chunk_frames == 0 {
            return Err(Error::InvalidArgument("chunk_frames must be positive".into()));
        }
        if !self.video_lambda1.is_finite() || !self.video_lambda2.is_finite() {
            return Err(Error::InvalidArgument("video lambdas must be finite".into()));
        }
        Ok(())
    }
}

/// Output of [`discover`].
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    /// Signed projection map after sign resolution.
    pub heatmap: ProjectionMap,
    pub mask: SegMask,
    /// Set when the features had (numerically) zero covariance.
    pub degenerate: bool,
}

fn check_same_shape(maps: &[&FeatureMap]) -> Result<()> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("no feature maps given".into()))?;
    for (i, m) in maps.iter().enumerate() {
        if !m.same_shape(first) {
            return Err(Error::Dimension(format!(
                "map {i} is {}x{}x{} but map 0 is {}x{}x{}",
                m.channels(),
                m.height(),
                m.width(),
                first.channels(),
                first.height(),
                first.width()
            )));
        }
    }
    Ok(())
}

/// Mean feature vector over every pixel of every map (maps share a shape).
fn pooled_mean(maps: &[&FeatureMap]) -> Vec<f64> {
    let c = maps[0].channels();
    let total = (maps.len() * maps[0].pixels()) as f64;
    (0..c)
        .map(|k| {
            let sum: f64 = maps.iter().flat_map(|m| m.channel(k)).sum();
            sum / total
        })
        .collect()
}

/// Population covariance about `mean` over every pixel of every map.
fn pooled_covariance(maps: &[&FeatureMap], mean: &[f64]) -> CovarianceMatrix {
    let c = maps[0].channels();
    let total = maps.len() * maps[0].pixels();
    let centered: Vec<Vec<f64>> = (0..c)
        .map(|k| {
            maps.iter()
                .flat_map(|m| m.channel(k).iter().map(move |&x| x - mean[k]))
                .collect()
        })
        .collect();
    let mut entries = vec![0.0; c * c];
    for i in 0..c {
        for j in i..c {
            let dot: f64 = centered[i]
                .iter()
                .zip(&centered[j])
                .map(|(a, b)| a * b)
                .sum();
            let v = dot / total as f64;
            entries[i * c + j] = v;
            entries[j * c + i] = v;
        }
    }
    CovarianceMatrix { dim: c, entries }
}

/// Mean squared feature norm, `trace(Cov) + ‖x̄‖²`.
fn energy(cov: &CovarianceMatrix, mean: &[f64]) -> f64 {
    cov.trace() + mean.iter().map(|m| m * m).sum::<f64>()
}

fn is_degenerate(trace: f64, energy: f64) -> bool {
    trace <= 0.0 || trace <= DEGENERATE_REL * energy
}

pub fn mean_vector(map: &FeatureMap) -> Vec<f64> {
    pooled_mean(&[map])
}

/// Population covariance (divisor `h · w`).
pub fn covariance(map: &FeatureMap) -> CovarianceMatrix {
    let mean = pooled_mean(&[map]);
    pooled_covariance(&[map], &mean)
}

/// Top-`k` eigenpairs of `a` by eigenvalue.
pub fn top_eigen(a: &CovarianceMatrix, k: usize, tol: f64, max_sweeps: usize) -> Result<EigenResult> {
    if k == 0 || k > a.dim {
        return Err(Error::InvalidArgument(format!(
            "requested {k} eigenpairs of a {0}x{0} matrix",
            a.dim
        )));
    }
    let mut result = jacobi_eigen(&a.entries, a.dim, tol, max_sweeps)?;
    result.truncate(k);
    Ok(result)
}

/// `m(p) = ξᵀ (x(p) − x̄)` for every pixel.
pub fn project(map: &FeatureMap, mean: &[f64], eigvec: &[f64]) -> Result<ProjectionMap> {
    let c = map.channels();
    if mean.len() != c || eigvec.len() != c {
        return Err(Error::Dimension(format!(
            "map has {c} channels but mean has {} and eigenvector {}",
            mean.len(),
            eigvec.len()
        )));
    }
    let mut values = vec![0.0; map.pixels()];
    for k in 0..c {
        let (mu, xi) = (mean[k], eigvec[k]);
        for (v, &x) in values.iter_mut().zip(map.channel(k)) {
            *v += xi * (x - mu);
        }
    }
    ProjectionMap::new(map.height(), map.width(), values)
}

fn border_mean(m: &ProjectionMap) -> f64 {
    let (h, w) = (m.height(), m.width());
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if y == 0 || y == h - 1 || x == 0 || x == w - 1 {
                sum += m.get(y, x);
                count += 1;
            }
        }
    }
    sum / count as f64
}

pub fn resolve_sign(m: &ProjectionMap, rule: SignRule) -> ProjectionMap {
    match rule {
        SignRule::None => m.clone(),
        // The border is the whole image below 3x3; fall back to no rule.
        SignRule::BorderNegative if m.height() < 3 || m.width() < 3 => m.clone(),
        SignRule::BorderNegative => {
            if border_mean(m) > 0.0 {
                m.negated()
            } else {
                m.clone()
            }
        }
    }
}

/// Foreground where the min–max normalized value is `≥ threshold`.
pub fn binarize(m: &ProjectionMap, threshold: f64) -> SegMask {
    debug_assert!(threshold > 0.0 && threshold < 1.0);
    let bits = m.normalized().into_iter().map(|v| v >= threshold).collect();
    SegMask::new(m.height(), m.width(), bits).expect("shape taken from a valid map")
}

fn degenerate_discovery(map: &FeatureMap) -> Discovery {
    Discovery {
        heatmap: ProjectionMap::new(map.height(), map.width(), vec![0.0; map.pixels()])
            .expect("shape taken from a valid map"),
        mask: SegMask::empty(map.height(), map.width()).expect("shape taken from a valid map"),
        degenerate: true,
    }
}

fn finish_frame(map: &FeatureMap, mean: &[f64], eigvec: &[f64], cfg: &DiscoveryConfig) -> Result<Discovery> {
    let raw = project(map, mean, eigvec)?;
    let heatmap = resolve_sign(&raw, cfg.sign_rule);
    let mask = binarize(&heatmap, cfg.threshold);
    Ok(Discovery {
        heatmap,
        mask,
        degenerate: false,
    })
}

/// Single-image discovery.
pub fn discover(map: &FeatureMap, cfg: &DiscoveryConfig) -> Result<Discovery> {
    cfg.validate()?;
    if cfg.eig_index > map.channels() {
        return Err(Error::InvalidArgument(format!(
            "eig_index {} exceeds channel count {}",
            cfg.eig_index,
            map.channels()
        )));
    }
    let mean = pooled_mean(&[map]);
    let cov = pooled_covariance(&[map], &mean);
    if is_degenerate(cov.trace(), energy(&cov, &mean)) {
        return Ok(degenerate_discovery(map));
    }
    let eig = top_eigen(&cov, cfg.eig_index, DEFAULT_EIG_TOL, DEFAULT_MAX_SWEEPS)?;
    finish_frame(map, &mean, &eig.eigenvectors[cfg.eig_index - 1], cfg)
}

/// Entrywise `λ1·A + λ2·B`.
pub fn fuse_covariances(
    a: &CovarianceMatrix,
    b: &CovarianceMatrix,
    lambda1: f64,
    lambda2: f64,
) -> Result<CovarianceMatrix> {
    if a.dim != b.dim {
        return Err(Error::Dimension(format!(
            "cannot fuse covariances of dims {} and {}",
            a.dim, b.dim
        )));
    }
    let entries = a
        .entries
        .iter()
        .zip(&b.entries)
        .map(|(x, y)| lambda1 * x + lambda2 * y)
        .collect();
    CovarianceMatrix::new(a.dim, entries)
}

/// Per-frame discovery for a video, one fused eigenvector per chunk.
pub fn video_discover_frames(
    rgb_frames: &[FeatureMap],
    flow_frames: &[FeatureMap],
    cfg: &DiscoveryConfig,
) -> Result<Vec<Discovery>> {
    cfg.validate()?;
    if rgb_frames.is_empty() {
        return Err(Error::InvalidArgument("video has no frames".into()));
    }
    if rgb_frames.len() != flow_frames.len() {
        return Err(Error::Dimension(format!(
            "{} RGB frames but {} flow frames",
            rgb_frames.len(),
            flow_frames.len()
        )));
    }
    let all: Vec<&FeatureMap> = rgb_frames.iter().chain(flow_frames).collect();
    check_same_shape(&all)?;
    let c = rgb_frames[0].channels();
    if cfg.eig_index > c {
        return Err(Error::InvalidArgument(format!(
            "eig_index {} exceeds channel count {c}",
            cfg.eig_index
        )));
    }

    let mut out = Vec::with_capacity(rgb_frames.len());
    for (rgb_chunk, flow_chunk) in rgb_frames
        .chunks(cfg.chunk_frames)
        .zip(flow_frames.chunks(cfg.chunk_frames))
    {
        let rgb: Vec<&FeatureMap> = rgb_chunk.iter().collect();
        let flow: Vec<&FeatureMap> = flow_chunk.iter().collect();
        let rgb_mean = pooled_mean(&rgb);
        let flow_mean = pooled_mean(&flow);
        let rgb_cov = pooled_covariance(&rgb, &rgb_mean);
        let flow_cov = pooled_covariance(&flow, &flow_mean);
        let fused = fuse_covariances(&rgb_cov, &flow_cov, cfg.video_lambda1, cfg.video_lambda2)?;
        let scale = cfg.video_lambda1 * energy(&rgb_cov, &rgb_mean)
            + cfg.video_lambda2 * energy(&flow_cov, &flow_mean);
        if is_degenerate(fused.trace(), scale) {
            out.extend(rgb_chunk.iter().map(degenerate_discovery));
            continue;
        }
        let eig = top_eigen(&fused, cfg.eig_index, DEFAULT_EIG_TOL, DEFAULT_MAX_SWEEPS)?;
        let xi = &eig.eigenvectors[cfg.eig_index - 1];
        for frame in rgb_chunk {
            out.push(finish_frame(frame, &rgb_mean, xi, cfg)?);
        }
    }
    Ok(out)
}

/// Video discovery returning only the masks.
pub fn video_discover(
    rgb_frames: &[FeatureMap],
    flow_frames: &[FeatureMap],
    cfg: &DiscoveryConfig,
) -> Result<Vec<SegMask>> {
    Ok(video_discover_frames(rgb_frames, flow_frames, cfg)?
        .into_iter()
        .map(|d| d.mask)
        .collect())
}
